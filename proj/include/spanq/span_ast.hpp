// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spanq {

/// Operators of the span-query expression tree.
///
/// Chat, Retrieve and Fragment are sugar that the high-level optimizer
/// removes. Span is an internal boundary carrier introduced by plus
/// distribution; it wraps exactly one generate.
enum class Op : uint8_t {
  Chat,       // C
  Retrieve,   // R
  Fragment,   // F
  Plus,       // commutative join
  Join,       // non-commutative join
  System,     // S
  Assistant,  // A
  User,       // U
  Generate,   // G
  Prepare,    // G1: generate with max_tokens = 1
  Span,
};

std::string_view op_name(Op op);
std::optional<Op> op_from_name(std::string_view name);

bool is_message(Op op);
bool is_generate(Op op);

struct GenParams {
  /// Absent means "model default"; the mock model then picks a length.
  std::optional<uint32_t> max_tokens;
  double temperature = 0.0;
  int64_t seed = 0;

  bool operator==(const GenParams&) const = default;
};

struct RetrievalSpec {
  std::string corpus;
  std::string query;
  uint32_t k = 1;

  bool operator==(const RetrievalSpec&) const = default;
};

using NodeId = uint32_t;
inline constexpr NodeId kNoNode = UINT32_MAX;

struct Node {
  Op op = Op::Join;
  std::string content;               // message leaves only
  std::optional<GenParams> gen;      // C, G, G1
  std::optional<RetrievalSpec> retrieval;  // R
  std::vector<NodeId> children;
};

/// Arena-backed expression tree. Nodes are addressed by index; rewrites
/// append new nodes and re-point parents, so the arena may hold garbage
/// until compact() is called.
class SpanQuery {
 public:
  SpanQuery() = default;

  NodeId add(Node node);
  NodeId leaf(Op op, std::string content);
  NodeId interior(Op op, std::vector<NodeId> children);
  NodeId generate(std::vector<NodeId> children, GenParams params = {});
  NodeId prepare(std::vector<NodeId> children);
  NodeId retrieve(RetrievalSpec spec);

  const Node& node(NodeId id) const { return nodes_.at(id); }
  Node& node(NodeId id) { return nodes_.at(id); }
  size_t arena_size() const { return nodes_.size(); }

  NodeId root() const { return root_; }
  void set_root(NodeId id) { root_ = id; }

  /// Deep-copies the sub-tree at `id` (which may live in `from`) into
  /// this arena and returns the copy's root.
  NodeId clone_from(const SpanQuery& from, NodeId id);
  NodeId clone(NodeId id) { return clone_from(*this, id); }

  /// Rebuilds the arena so it holds exactly the nodes reachable from the
  /// root, numbered in pre-order. Requires a valid tree.
  void compact();

  /// Pre-order list of reachable nodes. Stops descending into nodes
  /// already visited, so it terminates on malformed graphs too.
  std::vector<NodeId> preorder() const;

  size_t count(Op op) const;

 private:
  std::vector<Node> nodes_;
  NodeId root_ = kNoNode;
};

/// Structural equality of two sub-trees, attributes included, child
/// order significant.
bool isomorphic(const SpanQuery& a, NodeId na, const SpanQuery& b, NodeId nb);
bool isomorphic(const SpanQuery& a, const SpanQuery& b);

/// Path of child indices from the root, rendered as "/0/2".
using NodePath = std::vector<uint32_t>;
std::string path_string(const NodePath& path);

struct Violation {
  NodePath path;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

ValidationReport validate(const SpanQuery& query);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)),
        offset_(offset) {}
  size_t offset() const { return offset_; }

 private:
  size_t offset_;
};

/// Parses the parenthesized exchange format, e.g.
///   (C (S "sys") (A "prev") (U "q"))
///   (R corpus=docs k=2 "query text")
///   (G max_tokens=8 temperature=0.5 seed=3 (join (S "a") (U "b")))
SpanQuery parse_sexpr(std::string_view text);

enum class RenderFormat { Sexpr, Dot };

std::string render(const SpanQuery& query, RenderFormat format = RenderFormat::Sexpr);
std::string render_node(const SpanQuery& query, NodeId id);

}  // namespace spanq
