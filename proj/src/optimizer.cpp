// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#include "spanq/optimizer.hpp"

#include <algorithm>
#include <optional>
#include <unordered_map>

#include <json.hpp>

namespace spanq {

namespace {

bool is_plus(const SpanQuery& q, NodeId id) { return q.node(id).op == Op::Plus; }

// A candidate under a judge's plus: a generate, bare or Span-wrapped.
// Preparations (G1) are retrieval plumbing, not candidates.
bool is_candidate(const SpanQuery& q, NodeId id) {
  const Node& n = q.node(id);
  if (n.op == Op::Generate) return true;
  return n.op == Op::Span && n.children.size() == 1 &&
         q.node(n.children[0]).op == Op::Generate;
}

// Index of the first plus child of `join` with more than k candidates.
std::optional<size_t> reducible_plus(const SpanQuery& q, NodeId join, unsigned k) {
  const auto& kids = q.node(join).children;
  for (size_t i = 0; i < kids.size(); ++i) {
    const Node& p = q.node(kids[i]);
    if (p.op != Op::Plus || p.children.size() <= k) continue;
    bool all = true;
    for (NodeId c : p.children) all = all && is_candidate(q, c);
    if (all) return i;
  }
  return std::nullopt;
}

struct Located {
  NodeId parent = kNoNode;
  uint32_t slot = 0;
  NodePath path;
};

std::unordered_map<NodeId, Located> locate_all(const SpanQuery& q) {
  std::unordered_map<NodeId, Located> where;
  if (q.root() == kNoNode) return where;
  where[q.root()] = {};
  for (NodeId id : q.preorder()) {
    const auto& kids = q.node(id).children;
    for (uint32_t i = 0; i < kids.size(); ++i) {
      Located l{id, i, where[id].path};
      l.path.push_back(i);
      where[kids[i]] = std::move(l);
    }
  }
  return where;
}

}  // namespace

NodeId desugar_chat(SpanQuery& q, NodeId chat) {
  Node c = q.node(chat);
  NodeId join = q.interior(Op::Join, c.children);
  return q.generate({join}, c.gen.value_or(GenParams{}));
}

NodeId desugar_retrieval(SpanQuery& q, NodeId retrieval, const Retriever& retriever) {
  RetrievalSpec spec = q.node(retrieval).retrieval.value_or(RetrievalSpec{});
  if (!retriever) throw RetrievalError("no retriever configured", spec);
  std::vector<std::string> fragments = retriever(spec);
  if (fragments.empty()) throw RetrievalError("empty retrieval result", spec);
  if (fragments.size() > spec.k) fragments.resize(spec.k);
  std::vector<NodeId> prepared;
  prepared.reserve(fragments.size());
  for (auto& text : fragments) {
    NodeId f = q.leaf(Op::Fragment, std::move(text));
    prepared.push_back(q.prepare({f}));
  }
  return q.interior(Op::Plus, std::move(prepared));
}

NodeId simplify_plus(SpanQuery& q, NodeId plus) {
  std::vector<NodeId> flat;
  for (NodeId c : q.node(plus).children) {
    if (is_plus(q, c)) {
      const auto& inner = q.node(c).children;
      flat.insert(flat.end(), inner.begin(), inner.end());
    } else {
      flat.push_back(c);
    }
  }
  q.node(plus).children = std::move(flat);
  return plus;
}

NodeId distribute_plus(SpanQuery& q, NodeId plus) {
  std::vector<NodeId> kids = q.node(plus).children;
  for (NodeId& c : kids) {
    if (is_generate(q.node(c).op)) c = q.interior(Op::Span, {c});
  }
  q.node(plus).children = std::move(kids);
  return plus;
}

bool reducible_for_attention(const SpanQuery& q, NodeId g, unsigned k) {
  const Node& n = q.node(g);
  if (n.op != Op::Generate || n.children.size() != 1) return false;
  NodeId join = n.children[0];
  if (q.node(join).op != Op::Join) return false;
  return reducible_plus(q, join, k).has_value();
}

NodeId reduce_for_attention(SpanQuery& q, NodeId g, unsigned k) {
  if (k < 2) throw std::invalid_argument("attention reduction needs k >= 2");
  if (!reducible_for_attention(q, g, k)) return g;

  const GenParams params = q.node(g).gen.value_or(GenParams{});
  const NodeId join = q.node(g).children[0];
  const std::vector<NodeId> parts = q.node(join).children;
  const size_t at = *reducible_plus(q, join, k);
  const std::vector<NodeId> prefix(parts.begin(), parts.begin() + at);
  const std::vector<NodeId> suffix(parts.begin() + at + 1, parts.end());

  // Every judge gets its own copy of the outer instructions.
  auto make_judge = [&](std::vector<NodeId> group, bool reuse_originals) {
    std::vector<NodeId> body;
    for (NodeId p : prefix) body.push_back(reuse_originals ? p : q.clone(p));
    body.push_back(q.interior(Op::Plus, std::move(group)));
    for (NodeId s : suffix) body.push_back(reuse_originals ? s : q.clone(s));
    return q.generate({q.interior(Op::Join, std::move(body))}, params);
  };

  std::vector<NodeId> items = q.node(parts[at]).children;
  while (items.size() > k) {
    std::vector<NodeId> next;
    for (size_t i = 0; i < items.size(); i += k) {
      size_t end = std::min(items.size(), i + k);
      if (end - i == 1) {
        next.push_back(items[i]);  // a lone straggler advances a ply unjudged
      } else {
        next.push_back(make_judge({items.begin() + i, items.begin() + end}, false));
      }
    }
    items = std::move(next);
  }
  return make_judge(std::move(items), true);
}

SpanQuery reduce_for_attention(const SpanQuery& query, unsigned k) {
  if (k < 2) throw std::invalid_argument("attention reduction needs k >= 2");
  return optimize(query, {attention_reduction_rule(k)}).query;
}

RewriteRule chat_desugaring_rule() {
  return {"desugar_chat",
          [](const SpanQuery& q, NodeId id) { return q.node(id).op == Op::Chat; },
          [](SpanQuery& q, NodeId id) { return desugar_chat(q, id); }};
}

RewriteRule retrieval_desugaring_rule(Retriever retriever) {
  return {"desugar_retrieval",
          [](const SpanQuery& q, NodeId id) { return q.node(id).op == Op::Retrieve; },
          [retriever = std::move(retriever)](SpanQuery& q, NodeId id) {
            return desugar_retrieval(q, id, retriever);
          }};
}

RewriteRule plus_simplification_rule() {
  return {"simplify_plus",
          [](const SpanQuery& q, NodeId id) {
            if (!is_plus(q, id)) return false;
            for (NodeId c : q.node(id).children) {
              if (is_plus(q, c)) return true;
            }
            return false;
          },
          [](SpanQuery& q, NodeId id) { return simplify_plus(q, id); }};
}

RewriteRule plus_distribution_rule() {
  return {"distribute_plus",
          [](const SpanQuery& q, NodeId id) {
            if (!is_plus(q, id)) return false;
            for (NodeId c : q.node(id).children) {
              if (is_generate(q.node(c).op)) return true;
            }
            return false;
          },
          [](SpanQuery& q, NodeId id) { return distribute_plus(q, id); }};
}

RewriteRule attention_reduction_rule(unsigned k) {
  if (k < 2) throw std::invalid_argument("attention reduction needs k >= 2");
  return {"reduce_for_attention",
          [k](const SpanQuery& q, NodeId id) { return reducible_for_attention(q, id, k); },
          [k](SpanQuery& q, NodeId id) { return reduce_for_attention(q, id, k); }};
}

std::vector<RewriteRule> rule_set(const std::string& name, const RuleSetOptions& options) {
  if (name == "none") return {};
  if (name == "desugar") {
    return {chat_desugaring_rule(), retrieval_desugaring_rule(options.retriever)};
  }
  if (name == "default" || name == "attention") {
    std::vector<RewriteRule> rules{chat_desugaring_rule(),
                                   retrieval_desugaring_rule(options.retriever),
                                   plus_simplification_rule()};
    if (name == "attention") rules.push_back(attention_reduction_rule(options.k));
    rules.push_back(plus_distribution_rule());
    return rules;
  }
  throw std::invalid_argument("unknown rule set '" + name + "'");
}

OptimizeResult optimize(const SpanQuery& query, const std::vector<RewriteRule>& rules,
                        size_t max_iters) {
  if (auto report = validate(query); !report.ok()) {
    throw std::invalid_argument("query does not validate:\n" + report.to_string());
  }
  OptimizeResult result{query, {}};
  SpanQuery& q = result.query;
  q.compact();

  while (true) {
    std::vector<NodeId> order = q.preorder();
    const RewriteRule* fired = nullptr;
    NodeId target = kNoNode;
    for (const auto& rule : rules) {
      for (NodeId id : order) {
        if (rule.matches(q, id)) {
          fired = &rule;
          target = id;
          break;
        }
      }
      if (fired) break;
    }
    if (!fired) break;
    if (result.trace.iterations >= max_iters) throw NonConvergenceError(result.trace);

    auto where = locate_all(q);
    const Located loc = where.at(target);
    NodeId replacement = fired->build(q, target);
    if (loc.parent == kNoNode) {
      q.set_root(replacement);
    } else {
      q.node(loc.parent).children[loc.slot] = replacement;
    }
    result.trace.steps.push_back({fired->name, loc.path});
    ++result.trace.iterations;
  }
  q.compact();
  return result;
}

std::string OptimizeTrace::to_json(bool pretty) const {
  nlohmann::json j;
  j["iterations"] = iterations;
  j["steps"] = nlohmann::json::array();
  for (const auto& s : steps) {
    j["steps"].push_back({{"rule", s.rule}, {"path", path_string(s.path)}});
  }
  return j.dump(pretty ? 2 : -1);
}

}  // namespace spanq
