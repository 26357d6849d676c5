// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#include "spanq/span_ast.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <unordered_map>
#include <utility>

namespace spanq {

namespace {

struct OpInfo {
  Op op;
  std::string_view name;
};

constexpr std::array<OpInfo, 11> kOps = {{
    {Op::Chat, "C"},
    {Op::Retrieve, "R"},
    {Op::Fragment, "F"},
    {Op::Plus, "plus"},
    {Op::Join, "join"},
    {Op::System, "S"},
    {Op::Assistant, "A"},
    {Op::User, "U"},
    {Op::Generate, "G"},
    {Op::Prepare, "G1"},
    {Op::Span, "span"},
}};

bool carries_gen(Op op) { return op == Op::Chat || is_generate(op); }

}  // namespace

std::string_view op_name(Op op) {
  for (const auto& info : kOps) {
    if (info.op == op) return info.name;
  }
  return "?";
}

std::optional<Op> op_from_name(std::string_view name) {
  for (const auto& info : kOps) {
    if (info.name == name) return info.op;
  }
  return std::nullopt;
}

bool is_message(Op op) {
  return op == Op::System || op == Op::Assistant || op == Op::User ||
         op == Op::Fragment;
}

bool is_generate(Op op) { return op == Op::Generate || op == Op::Prepare; }

NodeId SpanQuery::add(Node node) {
  nodes_.push_back(std::move(node));
  auto id = static_cast<NodeId>(nodes_.size() - 1);
  if (root_ == kNoNode) root_ = id;
  return id;
}

NodeId SpanQuery::leaf(Op op, std::string content) {
  Node n;
  n.op = op;
  n.content = std::move(content);
  return add(std::move(n));
}

NodeId SpanQuery::interior(Op op, std::vector<NodeId> children) {
  Node n;
  n.op = op;
  n.children = std::move(children);
  if (carries_gen(op)) n.gen = GenParams{};
  if (op == Op::Prepare) n.gen->max_tokens = 1;
  return add(std::move(n));
}

NodeId SpanQuery::generate(std::vector<NodeId> children, GenParams params) {
  Node n;
  n.op = Op::Generate;
  n.children = std::move(children);
  n.gen = params;
  return add(std::move(n));
}

NodeId SpanQuery::prepare(std::vector<NodeId> children) {
  return interior(Op::Prepare, std::move(children));
}

NodeId SpanQuery::retrieve(RetrievalSpec spec) {
  Node n;
  n.op = Op::Retrieve;
  n.retrieval = std::move(spec);
  return add(std::move(n));
}

NodeId SpanQuery::clone_from(const SpanQuery& from, NodeId id) {
  // Copy first so that cloning within the same arena survives reallocation.
  Node copy = from.node(id);
  std::vector<NodeId> kids;
  kids.reserve(copy.children.size());
  for (NodeId c : copy.children) kids.push_back(clone_from(from, c));
  copy.children = std::move(kids);
  return add(std::move(copy));
}

void SpanQuery::compact() {
  if (root_ == kNoNode) {
    nodes_.clear();
    return;
  }
  SpanQuery fresh;
  fresh.root_ = fresh.clone_from(*this, root_);
  // clone_from numbers in post-order; renumber to pre-order for stable
  // renders and paths.
  std::vector<NodeId> order = fresh.preorder();
  std::vector<NodeId> remap(fresh.nodes_.size(), kNoNode);
  for (size_t i = 0; i < order.size(); ++i) remap[order[i]] = static_cast<NodeId>(i);
  std::vector<Node> out(order.size());
  for (size_t i = 0; i < order.size(); ++i) {
    out[i] = std::move(fresh.nodes_[order[i]]);
    for (NodeId& c : out[i].children) c = remap[c];
  }
  nodes_ = std::move(out);
  root_ = 0;
}

std::vector<NodeId> SpanQuery::preorder() const {
  std::vector<NodeId> out;
  if (root_ == kNoNode || root_ >= nodes_.size()) return out;
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<NodeId> stack{root_};
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    if (id >= nodes_.size() || seen[id]) continue;
    seen[id] = true;
    out.push_back(id);
    const auto& kids = nodes_[id].children;
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

size_t SpanQuery::count(Op op) const {
  size_t n = 0;
  for (NodeId id : preorder()) n += nodes_[id].op == op ? 1 : 0;
  return n;
}

bool isomorphic(const SpanQuery& a, NodeId na, const SpanQuery& b, NodeId nb) {
  const Node& x = a.node(na);
  const Node& y = b.node(nb);
  if (x.op != y.op || x.content != y.content || x.gen != y.gen ||
      x.retrieval != y.retrieval || x.children.size() != y.children.size()) {
    return false;
  }
  for (size_t i = 0; i < x.children.size(); ++i) {
    if (!isomorphic(a, x.children[i], b, y.children[i])) return false;
  }
  return true;
}

bool isomorphic(const SpanQuery& a, const SpanQuery& b) {
  if (a.root() == kNoNode || b.root() == kNoNode) return a.root() == b.root();
  return isomorphic(a, a.root(), b, b.root());
}

std::string path_string(const NodePath& path) {
  if (path.empty()) return "/";
  std::string s;
  for (uint32_t i : path) s += "/" + std::to_string(i);
  return s;
}

std::string ValidationReport::to_string() const {
  if (ok()) return "ok";
  std::string s;
  for (const auto& v : violations) {
    if (!s.empty()) s += "\n";
    s += path_string(v.path) + ": " + v.message;
  }
  return s;
}

ValidationReport validate(const SpanQuery& query) {
  ValidationReport report;
  auto flag = [&](const NodePath& p, std::string msg) {
    report.violations.push_back({p, std::move(msg)});
  };
  if (query.root() == kNoNode) {
    flag({}, "empty query");
    return report;
  }
  if (query.root() >= query.arena_size()) {
    flag({}, "dangling root reference");
    return report;
  }

  std::vector<uint8_t> seen(query.arena_size(), 0);
  std::function<void(NodeId, NodePath&)> visit = [&](NodeId id, NodePath& path) {
    if (seen[id]) {
      flag(path, "not a tree (node reachable twice)");
      return;
    }
    seen[id] = 1;
    const Node& n = query.node(id);

    if (is_message(n.op)) {
      if (!n.children.empty()) flag(path, "leaf with children");
    } else if (n.op == Op::Retrieve) {
      if (!n.children.empty()) flag(path, "retrieval with children");
      if (!n.retrieval) {
        flag(path, "retrieval without request");
      } else {
        if (n.retrieval->k == 0) flag(path, "retrieval k must be >= 1");
        if (n.retrieval->corpus.empty()) flag(path, "retrieval without corpus");
      }
    } else {
      if (n.children.empty()) flag(path, "interior node without children");
      if (!n.content.empty()) flag(path, "interior node with content");
    }
    if (n.op == Op::Span) {
      bool wraps_generate = n.children.size() == 1 &&
                            n.children[0] < query.arena_size() &&
                            is_generate(query.node(n.children[0]).op);
      if (!wraps_generate) flag(path, "span must wrap exactly one generate");
    }
    if (n.gen) {
      if (!carries_gen(n.op)) flag(path, "generation parameters on non-generate node");
      if (n.gen->max_tokens && *n.gen->max_tokens < 1) flag(path, "max_tokens must be >= 1");
      if (!(n.gen->temperature >= 0.0) || !std::isfinite(n.gen->temperature)) {
        flag(path, "temperature must be finite and >= 0");
      }
    }
    if (n.op == Op::Prepare && (!n.gen || n.gen->max_tokens != 1u)) {
      flag(path, "G1 requires max_tokens = 1");
    }

    for (uint32_t i = 0; i < n.children.size(); ++i) {
      path.push_back(i);
      if (n.children[i] >= query.arena_size()) {
        flag(path, "dangling child reference");
      } else {
        visit(n.children[i], path);
      }
      path.pop_back();
    }
  };
  NodePath path;
  visit(query.root(), path);
  return report;
}

}  // namespace spanq
