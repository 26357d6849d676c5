// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spanq/span_ast.hpp"

namespace spanq {

/// Resolves a retrieval request to an ordered list of fragment texts.
/// Implementations throw RetrievalError for an unknown corpus.
using Retriever = std::function<std::vector<std::string>(const RetrievalSpec&)>;

class RetrievalError : public std::runtime_error {
 public:
  RetrievalError(const std::string& what, RetrievalSpec spec)
      : std::runtime_error(what + " (corpus=" + spec.corpus + ", k=" +
                           std::to_string(spec.k) + ", query=\"" + spec.query + "\")"),
        spec_(std::move(spec)) {}
  const RetrievalSpec& spec() const { return spec_; }

 private:
  RetrievalSpec spec_;
};

/// A query-to-query rewrite. `build` may allocate new nodes in the arena
/// and returns the root of the replacement sub-tree, which the optimizer
/// splices in place of the matched node.
struct RewriteRule {
  std::string name;
  std::function<bool(const SpanQuery&, NodeId)> matches;
  std::function<NodeId(SpanQuery&, NodeId)> build;
};

struct TraceStep {
  std::string rule;
  NodePath path;
};

struct OptimizeTrace {
  std::vector<TraceStep> steps;
  size_t iterations = 0;

  std::string to_json(bool pretty = true) const;
};

class NonConvergenceError : public std::runtime_error {
 public:
  explicit NonConvergenceError(OptimizeTrace trace)
      : std::runtime_error("optimizer did not converge within " +
                           std::to_string(trace.iterations) + " iterations"),
        trace_(std::move(trace)) {}
  const OptimizeTrace& trace() const { return trace_; }

 private:
  OptimizeTrace trace_;
};

// Individual rewrites. Each takes a node of the expected shape and returns
// the replacement root (possibly the same id when mutated in place).

/// C[x...] -> G[join[x...]]; G inherits the chat node's generation params.
NodeId desugar_chat(SpanQuery& q, NodeId chat);

/// R(corpus, query, k) -> plus[G1[F1], ..., G1[Fk]].
NodeId desugar_retrieval(SpanQuery& q, NodeId retrieval, const Retriever& retriever);

/// Splices every plus child of a plus node into the parent.
NodeId simplify_plus(SpanQuery& q, NodeId plus);

/// Wraps each unmarked G / G1 child of a plus node in a Span boundary.
NodeId distribute_plus(SpanQuery& q, NodeId plus);

/// True when `g` is G[join[prefix..., plus[c1..cn], suffix...]] with n > k
/// and every ci a generate (optionally Span-wrapped).
bool reducible_for_attention(const SpanQuery& q, NodeId g, unsigned k);

/// Rebuilds a judge over n candidates as a k-ary tree of judges, grouping
/// candidates k at a time in order. Throws std::invalid_argument for k < 2.
NodeId reduce_for_attention(SpanQuery& q, NodeId g, unsigned k);

/// Whole-query form: reduces every reducible judge.
SpanQuery reduce_for_attention(const SpanQuery& query, unsigned k);

RewriteRule chat_desugaring_rule();
RewriteRule retrieval_desugaring_rule(Retriever retriever);
RewriteRule plus_simplification_rule();
RewriteRule plus_distribution_rule();
RewriteRule attention_reduction_rule(unsigned k);

struct RuleSetOptions {
  Retriever retriever;
  unsigned k = 2;
};

/// Named rule sets, in priority order:
///   "default"   chat/retrieval desugaring, plus simplification, plus distribution
///   "attention" default plus the k-ary judge reduction (before distribution)
///   "desugar"   chat/retrieval desugaring only (stock-server form)
///   "none"      empty
/// Throws std::invalid_argument for an unknown name.
std::vector<RewriteRule> rule_set(const std::string& name, const RuleSetOptions& options = {});

struct OptimizeResult {
  SpanQuery query;
  OptimizeTrace trace;
};

/// Fixed-point rewriting: scans rules in priority order and nodes in
/// pre-order, applies the first match, and repeats until nothing matches.
/// Throws NonConvergenceError when a rule still matches after `max_iters`
/// applications, and std::invalid_argument when the input does not validate.
OptimizeResult optimize(const SpanQuery& query, const std::vector<RewriteRule>& rules,
                        size_t max_iters = 100000);

}  // namespace spanq
