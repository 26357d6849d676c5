// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#include "spanq/bench.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <json.hpp>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "spanq/corpus.hpp"
#include "spanq/optimizer.hpp"

namespace spanq {

namespace {

using nlohmann::ordered_json;

std::string words(std::mt19937_64& rng, uint32_t n, const std::string& stem) {
  std::string out;
  out.reserve(n * 8);
  for (uint32_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += stem;
    out += std::to_string(rng() % 1000000);
  }
  return out;
}

std::vector<Token> content_tokens(const MockVocab& vocab, const std::string& text) {
  std::vector<Token> out;
  for (TokenId id : vocab.encode(text)) out.push_back({id, TokenKind::Content, Role::System, std::nullopt});
  return out;
}

GenParams max_tokens(uint32_t n) {
  GenParams g;
  g.max_tokens = n;
  return g;
}

std::vector<BlockHash> fragment_hashes(const FragmentRef& f) {
  std::vector<BlockHash> hs;
  for (uint32_t j = 0; j < f.blocks; ++j) hs.push_back({Digest{f.id + 1ULL, j}, true, 1});
  return hs;
}

size_t resident_prefix(const CacheState& cache, const FragmentRef& f) {
  size_t n = 0;
  for (const auto& h : fragment_hashes(f)) {
    if (!cache.contains(h.digest)) break;
    ++n;
  }
  return n;
}

void run_fragments(CacheState& cache, const BulkQuery& q, uint64_t& hits) {
  for (const auto& f : q.fragments) {
    auto hs = fragment_hashes(f);
    hits += cache.lookup(hs).hit_blocks;
    cache.insert(hs);
  }
}

}  // namespace

uint64_t simulate_fragment_hits(std::span<const BulkQuery> queries,
                                std::span<const uint32_t> order, uint32_t capacity) {
  CacheState cache(capacity, 1);
  uint64_t hits = 0;
  for (uint32_t id : order) {
    auto it = std::find_if(queries.begin(), queries.end(), [&](const BulkQuery& q) { return q.id == id; });
    if (it == queries.end()) throw std::invalid_argument("unknown query id " + std::to_string(id));
    run_fragments(cache, *it, hits);
  }
  return hits;
}

BulkSchedule schedule_bulk(std::span<const BulkQuery> queries, uint32_t capacity) {
  BulkSchedule s;
  if (queries.empty()) return s;
  std::vector<uint32_t> input;
  for (const auto& q : queries) input.push_back(q.id);

  std::map<uint32_t, size_t> users;  // fragment id -> queries using it
  for (const auto& q : queries) {
    std::set<uint32_t> ids;
    for (const auto& f : q.fragments) ids.insert(f.id);
    for (uint32_t id : ids) ++users[id];
  }
  auto shares = [&](const BulkQuery& q) {
    return std::any_of(q.fragments.begin(), q.fragments.end(),
                       [&](const FragmentRef& f) { return users[f.id] > 1; });
  };

  std::vector<size_t> remaining(queries.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  size_t start = 0;
  bool found = false;
  for (size_t i = 0; i < queries.size(); ++i) {
    if (!shares(queries[i])) continue;
    const auto& a = queries[i];
    const auto& b = queries[start];
    if (!found || a.fragments.size() > b.fragments.size() ||
        (a.fragments.size() == b.fragments.size() && a.id < b.id)) {
      start = i;
      found = true;
    }
  }

  CacheState cache(capacity, 1);
  uint64_t hits = 0;
  std::vector<uint32_t> order;
  auto take = [&](size_t i) {
    order.push_back(queries[i].id);
    run_fragments(cache, queries[i], hits);
    remaining.erase(std::find(remaining.begin(), remaining.end(), i));
  };
  take(start);
  while (!remaining.empty()) {
    size_t best = remaining.front();
    size_t best_overlap = 0;
    bool first = true;
    for (size_t i : remaining) {
      size_t overlap = 0;
      for (const auto& f : queries[i].fragments) overlap += resident_prefix(cache, f);
      if (first || overlap > best_overlap || (overlap == best_overlap && queries[i].id < queries[best].id)) {
        best = i;
        best_overlap = overlap;
        first = false;
      }
    }
    take(best);
  }

  s.input_order_hit_blocks = simulate_fragment_hits(queries, input, capacity);
  s.predicted_hit_blocks = hits;
  if (s.input_order_hit_blocks > hits) {
    s.order = std::move(input);
    s.predicted_hit_blocks = s.input_order_hit_blocks;
    s.greedy = false;
  } else {
    s.order = std::move(order);
  }
  return s;
}

// -- RAG ---------------------------------------------------------------------

namespace {

SpanQuery rag_query(const std::string& system, const std::vector<std::string>& docs,
                    const std::string& user, bool spans) {
  SpanQuery q;
  std::vector<NodeId> kids;
  for (const auto& d : docs) {
    NodeId prep = q.prepare({q.leaf(Op::Fragment, d)});
    kids.push_back(spans ? q.interior(Op::Span, {prep}) : prep);
  }
  NodeId body = q.interior(Op::Join, {q.leaf(Op::System, system), q.interior(Op::Plus, kids),
                                      q.leaf(Op::User, user)});
  q.set_root(q.generate({body}, max_tokens(1)));
  return q;
}

void warm(CacheState& cache, const MockVocab& vocab, const std::string& text) {
  cache.insert(block_hashes(content_tokens(vocab, text), cache.block_size()));
}

}  // namespace

std::vector<RagPoint> rag_sweep(const RagConfig& c) {
  std::vector<uint32_t> sweep = c.docs;
  if (sweep.empty()) {
    for (uint32_t n = 1; n <= 32; ++n) sweep.push_back(n);
  }
  if (c.block_size == 0 || c.doc_tokens == 0) throw ConfigError("rag: block size and doc tokens must be >= 1");
  for (uint32_t n : sweep) {
    if (n == 0) throw ConfigError("rag: document counts must be >= 1");
  }
  const uint32_t most = *std::max_element(sweep.begin(), sweep.end());

  std::mt19937_64 rng(c.seed);
  const std::string system = words(rng, c.system_tokens, "s");
  const std::string user = words(rng, c.user_tokens, "u");
  std::vector<std::string> docs;
  for (uint32_t i = 0; i < most; ++i) docs.push_back(words(rng, c.doc_tokens, "d" + std::to_string(i) + "_"));

  const uint64_t per_doc_blocks = (c.doc_tokens + 2ULL * c.block_size) / c.block_size;
  const uint64_t context = c.system_tokens + c.user_tokens + 2ULL * c.block_size;
  const uint32_t capacity = c.capacity ? c.capacity
                                       : static_cast<uint32_t>(4 * (most * per_doc_blocks + context / c.block_size) + 64);

  const MockVocab vocab;
  const MockModel model(vocab, c.block_size);
  ExecuteOptions span_opts;
  span_opts.cost = c.cost;
  ExecuteOptions flat = span_opts;
  flat.emit_spans = false;

  std::vector<RagPoint> out;
  for (uint32_t n : sweep) {
    std::vector<std::string> mine(docs.begin(), docs.begin() + n);
    RagPoint p;
    p.docs = n;
    p.context_tokens = static_cast<uint64_t>(n) * c.doc_tokens + c.system_tokens + c.user_tokens;

    CacheState stock(capacity, c.block_size);
    warm(stock, vocab, system);
    p.baseline = execute(rag_query(system, mine, user, false), stock, model, vocab, flat).cost;

    CacheState cache(capacity, c.block_size);
    warm(cache, vocab, system);
    p.span_miss = execute(rag_query(system, mine, user, true), cache, model, vocab, span_opts).cost;
    // A derangement: every fragment changes position.
    std::mt19937_64 shuffle_rng(c.seed * 7919 + n);
    std::vector<size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    auto fixed_point = [&] {
      for (size_t i = 0; i < n; ++i) {
        if (perm[i] == i) return true;
      }
      return false;
    };
    while (n > 1 && fixed_point()) std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    std::vector<std::string> shuffled;
    for (size_t i : perm) shuffled.push_back(mine[i]);
    mine = std::move(shuffled);
    p.span_hit = execute(rag_query(system, mine, user, true), cache, model, vocab, span_opts).cost;
    out.push_back(std::move(p));
  }
  return out;
}

// -- nested generation ---------------------------------------------------------

namespace {

SpanQuery judge(const NestedConfig& c, uint32_t fanout, double temperature, uint32_t run,
                const std::string& outer_system, const std::string& inner_system,
                const std::vector<std::string>& inner_users, const std::string& outer_user,
                bool spans) {
  SpanQuery q;
  std::vector<NodeId> kids;
  for (uint32_t i = 0; i < fanout; ++i) {
    GenParams g;
    g.max_tokens = c.max_tokens;
    g.temperature = temperature;
    g.seed = static_cast<int64_t>(run) * 1000 + i + 1;
    NodeId gen = q.generate({q.interior(Op::Join, {q.leaf(Op::System, inner_system),
                                                   q.leaf(Op::User, inner_users[i])})},
                            g);
    kids.push_back(spans ? q.interior(Op::Span, {gen}) : gen);
  }
  NodeId body = q.interior(Op::Join, {q.leaf(Op::System, outer_system), q.interior(Op::Plus, kids),
                                      q.leaf(Op::User, outer_user)});
  q.set_root(q.generate({body}, max_tokens(1)));
  return q;
}

}  // namespace

std::vector<NestedPoint> nested_sweep(const NestedConfig& c) {
  std::vector<uint32_t> fanouts = c.fanouts;
  if (fanouts.empty()) {
    for (uint32_t n = 1; n <= 24; ++n) fanouts.push_back(n);
  }
  std::vector<double> temps = c.temperatures;
  if (temps.empty()) temps = {0.0, 0.25, 0.5, 0.75, 1.0};
  if (c.block_size == 0 || c.max_tokens == 0) throw ConfigError("nested: block size and max tokens must be >= 1");
  for (double t : temps) {
    if (!(t >= 0.0)) throw ConfigError("nested: temperatures must be >= 0");
  }
  for (uint32_t f : fanouts) {
    if (f == 0) throw ConfigError("nested: fan-out must be >= 1");
  }

  std::mt19937_64 rng(c.seed);
  const std::string outer_system = words(rng, c.outer_system_tokens, "j");
  const std::string inner_system = words(rng, c.inner_system_tokens, "g");
  const std::string outer_user = words(rng, c.outer_user_tokens, "p");
  const uint32_t most = *std::max_element(fanouts.begin(), fanouts.end());
  std::vector<std::string> inner_users;
  for (uint32_t i = 0; i < most; ++i) inner_users.push_back(words(rng, c.inner_user_tokens, "c"));

  const MockVocab vocab;
  const MockModel model(vocab, c.block_size);
  ExecuteOptions span_opts;
  span_opts.cost = c.cost;
  ExecuteOptions flat = span_opts;
  flat.emit_spans = false;

  std::vector<NestedPoint> out;
  for (uint32_t fanout : fanouts) {
    for (double t : temps) {
      NestedPoint p;
      p.fanout = fanout;
      p.temperature = t;
      auto measure = [&](bool spans, const ExecuteOptions& opts) {
        CacheState cache(c.capacity, c.block_size);
        execute(judge(c, fanout, t, 1, outer_system, inner_system, inner_users, outer_user, spans),
                cache, model, vocab, opts);
        return execute(judge(c, fanout, t, 2, outer_system, inner_system, inner_users, outer_user, spans),
                       cache, model, vocab, opts)
            .cost;
      };
      p.baseline = measure(false, flat);
      p.span = measure(true, span_opts);
      out.push_back(std::move(p));
    }
  }
  return out;
}

// -- chat --------------------------------------------------------------------

std::vector<ChatPoint> chat_replay(const ChatConfig& c) {
  if (c.block_size == 0 || c.output_tokens == 0) throw ConfigError("chat: block size and output tokens must be >= 1");
  std::mt19937_64 rng(c.seed);
  const MockVocab vocab;
  const MockModel model(vocab, c.block_size);
  CacheState cache(c.capacity, c.block_size);
  std::vector<std::pair<Op, std::string>> history;
  std::vector<ChatPoint> out;
  for (uint32_t turn = 1; turn <= c.turns; ++turn) {
    history.emplace_back(Op::User, words(rng, c.user_tokens, "t"));
    SpanQuery q;
    std::vector<NodeId> kids;
    for (const auto& [op, text] : history) kids.push_back(q.leaf(op, text));
    q.set_root(q.generate({q.interior(Op::Join, kids)}, max_tokens(c.output_tokens)));
    ExecResult r = execute(q, cache, model, vocab);
    const RequestCost& root = r.cost.requests.back();
    out.push_back({turn, root.input_tokens, root.hit_tokens});
    history.emplace_back(Op::Assistant, vocab.decode(r.output));
  }
  return out;
}

// -- bulk --------------------------------------------------------------------

BulkResult bulk_bench(const BulkConfig& c) {
  if (c.queries == 0 || c.documents == 0 || c.k == 0 || c.fragment_words == 0 || c.block_size == 0) {
    throw ConfigError("bulk: counts must be >= 1");
  }
  if (!(c.working_set_ratio > 0)) throw ConfigError("bulk: working set ratio must be > 0");
  std::mt19937_64 rng(c.seed);
  std::vector<std::string> documents;
  for (uint32_t d = 0; d < c.documents; ++d) {
    documents.push_back(words(rng, c.document_words, "b" + std::to_string(d) + "_"));
  }
  CorpusRegistry registry;
  registry.add("bulk", Corpus::from_documents(documents, c.fragment_words));
  const Corpus& corpus = registry.get("bulk");

  std::vector<std::string> texts;
  BulkResult res;
  std::set<uint32_t> used;
  for (uint32_t q = 0; q < c.queries; ++q) {
    // A few words from two fragments of one document: a topical question.
    const uint32_t doc = static_cast<uint32_t>(rng() % c.documents);
    std::vector<uint32_t> pool;
    for (const auto& f : corpus.fragments()) {
      if (f.document == doc) pool.push_back(f.id);
    }
    std::string text;
    for (int pick = 0; pick < 2; ++pick) {
      std::istringstream in(corpus.fragment(pool[rng() % pool.size()]).text);
      std::vector<std::string> ws;
      for (std::string w; in >> w;) ws.push_back(w);
      for (int i = 0; i < 3; ++i) text += ws[rng() % ws.size()] + " ";
    }
    text += "q" + std::to_string(q);
    texts.push_back(text);
    BulkQuery bq{q, {}};
    for (uint32_t id : corpus.top_k(text, c.k)) {
      bq.fragments.push_back({id, (1 + corpus.fragment(id).words + c.block_size - 1) / c.block_size});
      if (used.insert(id).second) res.working_set_blocks += bq.fragments.back().blocks;
    }
    res.queries.push_back(std::move(bq));
  }
  res.capacity = std::max<uint32_t>(
      static_cast<uint32_t>(static_cast<double>(res.working_set_blocks) / c.working_set_ratio), 1);
  res.schedule = schedule_bulk(res.queries, res.capacity);

  const MockVocab vocab;
  const MockModel model(vocab, c.block_size);
  const auto rules = rule_set("default", {registry.retriever(), 2});
  std::vector<SpanQuery> optimized;
  for (uint32_t q = 0; q < c.queries; ++q) {
    SpanQuery raw;
    GenParams g;
    g.max_tokens = 1;
    raw.set_root(raw.add(Node{Op::Chat, "", g, std::nullopt,
                              {raw.leaf(Op::System, "answer from the passages"),
                               raw.retrieve({"bulk", texts[q], c.k}),
                               raw.leaf(Op::User, texts[q])}}));
    optimized.push_back(optimize(raw, rules).query);
  }
  // Prepared fragments must fit next to one outer request.
  uint32_t largest = 0;
  for (const auto& q : optimized) {
    largest = std::max<uint32_t>(
        largest, static_cast<uint32_t>(align_blocks(tokenize_query(q, vocab, c.block_size)).tokens.size() /
                                           c.block_size +
                                       1));
  }
  const uint32_t engine_capacity = std::max(res.capacity, largest);
  auto run = [&](const std::vector<uint32_t>& order) {
    CacheState cache(engine_capacity, c.block_size);
    uint64_t hits = 0;
    for (uint32_t id : order) hits += execute(optimized[id], cache, model, vocab).cost.hit_tokens;
    return hits;
  };
  std::vector<uint32_t> input(c.queries);
  std::iota(input.begin(), input.end(), 0);
  res.input_hit_tokens = run(input);
  res.scheduled_hit_tokens = run(res.schedule.order);
  return res;
}

// -- CIDRA -------------------------------------------------------------------

CidraBenchResult cidra_bench(const CidraBenchConfig& c) {
  if (c.blocks == 0 || c.queries == 0) throw ConfigError("cidra: blocks and queries must be >= 1");
  if (c.conflict_rate < 0 || c.conflict_rate > 1) throw ConfigError("cidra: conflict rate must be in [0, 1]");
  RopeParams rope;
  rope.head_dim = c.geometry.head_dim;
  CidraInstance inst = random_instance(c.blocks, c.queries, c.conflict_rate, c.seed, c.geometry, rope);
  CidraBenchResult r;
  r.plan = plan_moves(inst.requests, inst.store, {c.batch_size});
  KvStore got = inst.store;
  r.stats = execute_plan(r.plan, got, rope, {c.workers});
  r.max_abs_diff = max_abs_diff(got, oracle_reposition(inst.requests, inst.store, rope));
  r.oracle_match = r.max_abs_diff <= 1e-5;
  return r;
}

double r_squared(std::span<const double> x, std::span<const double> y, int degree) {
  if (x.size() != y.size() || x.size() < static_cast<size_t>(degree + 2)) {
    throw std::invalid_argument("r_squared needs more points than coefficients");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(x.size());
  const double scale = *std::max_element(x.begin(), x.end());
  Eigen::MatrixXd a(n, degree + 1);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double v = 1.0;
    for (int d = 0; d <= degree; ++d) {
      a(i, d) = v;
      v *= x[i] / scale;
    }
    b(i) = y[i];
  }
  Eigen::VectorXd coef = a.colPivHouseholderQr().solve(b);
  const double mean = b.mean();
  const double ss_res = (a * coef - b).squaredNorm();
  const double ss_tot = (b.array() - mean).square().sum();
  return ss_tot == 0 ? 1.0 : 1.0 - ss_res / ss_tot;
}

// -- reporting ---------------------------------------------------------------

namespace {

ordered_json cost_json(const CostReport& r) { return ordered_json::parse(r.to_json(false)); }

std::string csv_number(double v) {
  std::ostringstream s;
  s.precision(12);
  s << v;
  return s.str();
}

}  // namespace

std::string rag_json(const std::vector<RagPoint>& points, bool pretty) {
  ordered_json j = ordered_json::array();
  for (const auto& p : points) {
    j.push_back({{"docs", p.docs},
                 {"context_tokens", p.context_tokens},
                 {"baseline", cost_json(p.baseline)},
                 {"span_miss", cost_json(p.span_miss)},
                 {"span_hit", cost_json(p.span_hit)},
                 {"speedup_miss", p.baseline.ttft_proxy / p.span_miss.ttft_proxy},
                 {"speedup_hit", p.baseline.ttft_proxy / p.span_hit.ttft_proxy}});
  }
  return j.dump(pretty ? 2 : -1);
}

std::string rag_csv(const std::vector<RagPoint>& points) {
  std::ostringstream out;
  out << "docs,context_tokens,baseline_pairs,baseline_ttft,miss_pairs,miss_ttft,hit_pairs,hit_repositioned,"
         "hit_ttft,speedup_miss,speedup_hit\n";
  for (const auto& p : points) {
    out << p.docs << ',' << p.context_tokens << ',' << p.baseline.attended_pairs << ','
        << csv_number(p.baseline.ttft_proxy) << ',' << p.span_miss.attended_pairs << ','
        << csv_number(p.span_miss.ttft_proxy) << ',' << p.span_hit.attended_pairs << ','
        << p.span_hit.repositioned_tokens << ',' << csv_number(p.span_hit.ttft_proxy) << ','
        << csv_number(p.baseline.ttft_proxy / p.span_miss.ttft_proxy) << ','
        << csv_number(p.baseline.ttft_proxy / p.span_hit.ttft_proxy) << '\n';
  }
  return out.str();
}

std::string nested_json(const std::vector<NestedPoint>& points, bool pretty) {
  ordered_json j = ordered_json::array();
  for (const auto& p : points) {
    j.push_back({{"fanout", p.fanout},
                 {"temperature", p.temperature},
                 {"baseline", cost_json(p.baseline)},
                 {"span", cost_json(p.span)},
                 {"ratio", p.ratio()}});
  }
  return j.dump(pretty ? 2 : -1);
}

std::string nested_csv(const std::vector<NestedPoint>& points) {
  std::ostringstream out;
  out << "fanout,temperature,baseline_ttft,span_ttft,ratio\n";
  for (const auto& p : points) {
    out << p.fanout << ',' << csv_number(p.temperature) << ',' << csv_number(p.baseline.ttft_proxy) << ','
        << csv_number(p.span.ttft_proxy) << ',' << csv_number(p.ratio()) << '\n';
  }
  return out.str();
}

std::string chat_json(const std::vector<ChatPoint>& points, bool pretty) {
  ordered_json j = ordered_json::array();
  for (const auto& p : points) {
    j.push_back({{"turn", p.turn},
                 {"input_tokens", p.input_tokens},
                 {"hit_tokens", p.hit_tokens},
                 {"hit_rate", p.hit_rate()}});
  }
  return j.dump(pretty ? 2 : -1);
}

std::string chat_csv(const std::vector<ChatPoint>& points) {
  std::ostringstream out;
  out << "turn,input_tokens,hit_tokens,hit_rate\n";
  for (const auto& p : points) {
    out << p.turn << ',' << p.input_tokens << ',' << p.hit_tokens << ',' << csv_number(p.hit_rate()) << '\n';
  }
  return out.str();
}

std::string bulk_json(const BulkResult& r, bool pretty) {
  ordered_json j;
  j["queries"] = r.queries.size();
  j["capacity_blocks"] = r.capacity;
  j["working_set_blocks"] = r.working_set_blocks;
  j["order"] = r.schedule.order;
  j["greedy"] = r.schedule.greedy;
  j["predicted_hit_blocks"] = r.schedule.predicted_hit_blocks;
  j["input_order_predicted_hit_blocks"] = r.schedule.input_order_hit_blocks;
  j["input_hit_tokens"] = r.input_hit_tokens;
  j["scheduled_hit_tokens"] = r.scheduled_hit_tokens;
  return j.dump(pretty ? 2 : -1);
}

std::string bulk_csv(const BulkResult& r) {
  std::ostringstream out;
  out << "queries,capacity_blocks,working_set_blocks,greedy,predicted_hit_blocks,input_order_predicted_hit_blocks,"
         "input_hit_tokens,scheduled_hit_tokens\n";
  out << r.queries.size() << ',' << r.capacity << ',' << r.working_set_blocks << ',' << r.schedule.greedy << ','
      << r.schedule.predicted_hit_blocks << ',' << r.schedule.input_order_hit_blocks << ','
      << r.input_hit_tokens << ',' << r.scheduled_hit_tokens << '\n';
  return out.str();
}

std::string cidra_json(const CidraBenchResult& r, bool pretty) {
  ordered_json j;
  j["moves"] = r.plan.move_count();
  j["duplications"] = r.plan.duplications.size();
  j["components"] = r.plan.components.size();
  j["cycles"] = r.plan.cycle_count();
  j["batches"] = r.stats.batches;
  j["fallback"] = r.stats.fallback;
  j["scratch_peak"] = r.stats.scratch_peak;
  j["moved_tokens"] = r.stats.moved_tokens;
  j["max_abs_diff"] = r.max_abs_diff;
  j["oracle_match"] = r.oracle_match;
  return j.dump(pretty ? 2 : -1);
}

std::string cidra_csv(const CidraBenchResult& r) {
  std::ostringstream out;
  out << "moves,duplications,components,cycles,batches,fallback,scratch_peak,moved_tokens,max_abs_diff,oracle_match\n";
  out << r.plan.move_count() << ',' << r.plan.duplications.size() << ',' << r.plan.components.size() << ','
      << r.plan.cycle_count() << ',' << r.stats.batches << ',' << r.stats.fallback << ',' << r.stats.scratch_peak
      << ',' << r.stats.moved_tokens << ',' << csv_number(r.max_abs_diff) << ',' << r.oracle_match << '\n';
  return out.str();
}

}  // namespace spanq
