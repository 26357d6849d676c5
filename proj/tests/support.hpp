// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

// Shared fixtures for the unit and acceptance tests.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "spanq/optimizer.hpp"
#include "spanq/span_ast.hpp"

namespace spanq::testing {

inline std::string random_words(std::mt19937_64& rng, size_t n, const std::string& stem = "w") {
  std::string out;
  for (size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += stem + std::to_string(rng() % 5000);
  }
  return out;
}

/// Retriever that fabricates k fragments from the request text.
inline Retriever echo_retriever() {
  return [](const RetrievalSpec& spec) {
    std::vector<std::string> out;
    for (uint32_t i = 0; i < spec.k; ++i) {
      out.push_back(spec.query + " fragment " + std::to_string(i));
    }
    return out;
  };
}

/// Random well-formed query over every operator, rooted at C or G.
class RandomQueries {
 public:
  explicit RandomQueries(uint64_t seed) : rng_(seed) {}

  SpanQuery next(int max_depth = 4) {
    SpanQuery q;
    std::vector<NodeId> kids = children(q, max_depth - 1);
    NodeId root = coin(0.5) ? q.generate({q.interior(Op::Join, kids)}, gen())
                            : q.add(Node{Op::Chat, "", gen(), std::nullopt, kids});
    q.set_root(root);
    return q;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  bool coin(double p) { return std::uniform_real_distribution<double>(0, 1)(rng_) < p; }
  size_t pick(size_t n) { return static_cast<size_t>(rng_() % n); }

  GenParams gen() {
    GenParams g;
    if (coin(0.5)) g.max_tokens = 1 + static_cast<uint32_t>(pick(8));
    if (coin(0.3)) g.temperature = 0.5;
    g.seed = static_cast<int64_t>(pick(4));
    return g;
  }

  std::vector<NodeId> children(SpanQuery& q, int depth) {
    std::vector<NodeId> out;
    size_t n = 1 + pick(4);
    for (size_t i = 0; i < n; ++i) out.push_back(node(q, depth));
    return out;
  }

  NodeId node(SpanQuery& q, int depth) {
    static const Op leaves[] = {Op::System, Op::User, Op::Assistant, Op::Fragment};
    if (depth <= 0 || coin(0.35)) {
      if (coin(0.15)) {
        return q.retrieve({"docs", random_words(rng_, 2), 1 + static_cast<uint32_t>(pick(3))});
      }
      return q.leaf(leaves[pick(4)], random_words(rng_, 1 + pick(3)));
    }
    switch (pick(6)) {
      case 0: return q.interior(Op::Plus, children(q, depth - 1));
      case 1: return q.interior(Op::Join, children(q, depth - 1));
      case 2: return q.generate({q.interior(Op::Join, children(q, depth - 1))}, gen());
      case 3: return q.add(Node{Op::Chat, "", gen(), std::nullopt, children(q, depth - 1)});
      case 4: return q.prepare({q.leaf(Op::Fragment, random_words(rng_, 3))});
      default: return q.interior(Op::Span, {q.generate(children(q, depth - 1), gen())});
    }
  }

  std::mt19937_64 rng_;
};

/// Judge nesting depth: the longest chain of generates whose input holds
/// a plus of further generates.
inline size_t judge_plies(const SpanQuery& q, NodeId id) {
  const Node& n = q.node(id);
  size_t below = 0;
  for (NodeId c : n.children) below = std::max(below, judge_plies(q, c));
  if (n.op != Op::Generate) return below;
  for (NodeId c : n.children) {
    if (q.node(c).op != Op::Join) continue;
    for (NodeId p : q.node(c).children) {
      if (q.node(p).op == Op::Plus) return below + 1;
    }
  }
  return below;
}

/// "(G (join (S "judge") (plus (G (U "c0")) ...) (U "pick")))" with n candidates.
inline std::string judge_query(size_t n) {
  std::string s = "(G (join (S \"judge the candidates\") (plus";
  for (size_t i = 0; i < n; ++i) s += " (G seed=" + std::to_string(i + 1) + " (U \"candidate " + std::to_string(i) + "\"))";
  return s + ") (U \"pick the best\")))";
}

}  // namespace spanq::testing
