// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#include "spanq/cidra.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <thread>
#include <tuple>

#include <json.hpp>

namespace spanq {

// ---------------------------------------------------------------------------
// KvStore

KvStore::KvStore(uint32_t slots, KvGeometry geometry, uint32_t scratch_budget)
    : geo_(geometry),
      scratch_budget_(scratch_budget),
      data_(static_cast<size_t>(slots) * geometry.block_stride(), 0.0),
      live_(slots, 0),
      pos_(slots, 0) {
  if (geo_.block_size == 0 || geo_.layers == 0) throw KvStoreError("empty block geometry");
  RopeParams{geo_.head_dim}.check();
}

size_t KvStore::free_count() const {
  return static_cast<size_t>(std::count(live_.begin(), live_.end(), 0));
}

std::span<double> KvStore::block(uint32_t slot) {
  if (slot >= slots()) throw KvStoreError("slot " + std::to_string(slot) + " out of range");
  return {data_.data() + slot * geo_.block_stride(), geo_.block_stride()};
}

std::span<const double> KvStore::block(uint32_t slot) const {
  if (slot >= slots()) throw KvStoreError("slot " + std::to_string(slot) + " out of range");
  return {data_.data() + slot * geo_.block_stride(), geo_.block_stride()};
}

std::span<double> KvStore::keys(uint32_t slot, uint32_t layer) {
  return block(slot).subspan(2 * layer * geo_.plane(), geo_.plane());
}

std::span<const double> KvStore::keys(uint32_t slot, uint32_t layer) const {
  return block(slot).subspan(2 * layer * geo_.plane(), geo_.plane());
}

std::span<double> KvStore::values(uint32_t slot, uint32_t layer) {
  return block(slot).subspan((2 * layer + 1) * geo_.plane(), geo_.plane());
}

void KvStore::fill(uint32_t slot, uint64_t key, int64_t position, const RopeParams& params) {
  if (params.head_dim != geo_.head_dim) throw DimensionError("rotary dimension differs from store");
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (uint32_t layer = 0; layer < geo_.layers; ++layer) {
    std::seed_seq seq{static_cast<uint32_t>(key), static_cast<uint32_t>(key >> 32), layer};
    std::mt19937_64 rng(seq);
    auto k = keys(slot, layer);
    for (double& x : k) x = uni(rng);
    for (double& x : values(slot, layer)) x = uni(rng);
    for (uint32_t row = 0; row < geo_.block_size; ++row) {
      rotate_rows(k.subspan(row * geo_.head_dim, geo_.head_dim), position + row, params);
    }
  }
  set_live(slot, position);
}

void KvStore::release(uint32_t slot) {
  std::fill(block(slot).begin(), block(slot).end(), 0.0);
  live_.at(slot) = 0;
  pos_.at(slot) = 0;
}

void KvStore::set_live(uint32_t slot, int64_t position) {
  live_.at(slot) = 1;
  pos_.at(slot) = position;
}

void KvStore::copy_block(std::span<const double> src, uint32_t dst, int64_t src_pos,
                         int64_t delta, const RopeParams& params) {
  auto out = block(dst);
  if (src.size() != out.size()) throw KvStoreError("block size mismatch");
  if (src.data() != out.data()) std::copy(src.begin(), src.end(), out.begin());
  for (uint32_t layer = 0; layer < geo_.layers; ++layer) {
    rotate_rows(keys(dst, layer), delta, params);
  }
  set_live(dst, src_pos + delta);
}

double max_abs_diff(const KvStore& a, const KvStore& b) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (a.slots() != b.slots() || a.geometry().block_stride() != b.geometry().block_stride()) {
    return inf;
  }
  double worst = 0.0;
  for (uint32_t s = 0; s < a.slots(); ++s) {
    if (a.live(s) != b.live(s)) return inf;
    if (!a.live(s)) continue;
    if (a.position(s) != b.position(s)) return inf;
    auto x = a.block(s);
    auto y = b.block(s);
    for (size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Demand resolution shared by the planner and the oracle.

namespace {

struct Demand {
  uint32_t block;
  int64_t position;
  uint32_t query;
  std::optional<uint32_t> dest;
};

struct Resolution {
  std::vector<Demand> keepers;                                 // one per block
  std::vector<std::pair<Demand, uint32_t>> extras;             // demand, slot
};

Resolution resolve(std::span<const MoveRequest> requests, const KvStore& store) {
  std::map<std::tuple<uint32_t, int64_t, int64_t>, Demand> unique;
  for (const auto& r : requests) {
    if (r.block >= store.slots() || !store.live(r.block)) {
      throw PlanError("request from query " + std::to_string(r.query) +
                      " references empty slot " + std::to_string(r.block));
    }
    if (r.dest && *r.dest >= store.slots()) {
      throw PlanError("destination slot " + std::to_string(*r.dest) + " out of range");
    }
    auto key = std::make_tuple(r.block, r.position, r.dest ? int64_t{*r.dest} : int64_t{-1});
    auto [it, fresh] = unique.try_emplace(key, Demand{r.block, r.position, r.query, r.dest});
    if (!fresh) it->second.query = std::min(it->second.query, r.query);
  }

  std::map<uint32_t, std::vector<Demand>> by_block;
  for (auto& [key, d] : unique) by_block[d.block].push_back(d);

  Resolution res;
  std::vector<Demand> extras;
  for (auto& [block, list] : by_block) {
    std::stable_sort(list.begin(), list.end(),
                     [](const Demand& a, const Demand& b) { return a.query < b.query; });
    res.keepers.push_back(list.front());
    extras.insert(extras.end(), list.begin() + 1, list.end());
  }
  std::stable_sort(extras.begin(), extras.end(), [](const Demand& a, const Demand& b) {
    return std::tie(a.block, a.query) < std::tie(b.block, b.query);
  });

  // Slots that receive content, and whether the current content leaves.
  std::set<uint32_t> targeted;
  std::set<uint32_t> leaving;
  for (const auto& k : res.keepers) {
    uint32_t to = k.dest.value_or(k.block);
    if (!targeted.insert(to).second) {
      throw PlanError("two demands target slot " + std::to_string(to));
    }
    if (to != k.block) leaving.insert(k.block);
  }
  for (uint32_t to : targeted) {
    if (store.live(to) && !leaving.count(to) &&
        std::none_of(res.keepers.begin(), res.keepers.end(),
                     [&](const Demand& k) { return k.block == to && k.dest.value_or(to) == to; })) {
      throw PlanError("slot " + std::to_string(to) + " holds content that is not moving");
    }
  }
  for (const auto& e : extras) {
    if (!e.dest) continue;
    if (store.live(*e.dest) || !targeted.insert(*e.dest).second) {
      throw PlanError("duplicate target slot " + std::to_string(*e.dest) + " is not free");
    }
  }
  uint32_t cursor = 0;
  for (const auto& e : extras) {
    uint32_t slot;
    if (e.dest) {
      slot = *e.dest;
    } else {
      while (cursor < store.slots() && (store.live(cursor) || targeted.count(cursor))) ++cursor;
      if (cursor == store.slots()) {
        throw PlanError("free list exhausted: cannot duplicate block " + std::to_string(e.block) +
                        " for query " + std::to_string(e.query));
      }
      slot = cursor++;
    }
    res.extras.push_back({e, slot});
  }
  return res;
}

// Tarjan's strongly connected components over the move edges.
class Tarjan {
 public:
  explicit Tarjan(const std::map<uint32_t, uint32_t>& succ) : succ_(succ) {
    for (const auto& [u, v] : succ) {
      if (!index_.count(u)) visit(u);
      (void)v;
    }
  }
  std::vector<std::vector<uint32_t>> components;

 private:
  void visit(uint32_t u) {
    index_[u] = low_[u] = next_++;
    stack_.push_back(u);
    on_stack_.insert(u);
    if (auto it = succ_.find(u); it != succ_.end()) {
      uint32_t v = it->second;
      if (!index_.count(v)) {
        visit(v);
        low_[u] = std::min(low_[u], low_[v]);
      } else if (on_stack_.count(v)) {
        low_[u] = std::min(low_[u], index_[v]);
      }
    }
    if (low_[u] == index_[u]) {
      std::vector<uint32_t> comp;
      uint32_t w;
      do {
        w = stack_.back();
        stack_.pop_back();
        on_stack_.erase(w);
        comp.push_back(w);
      } while (w != u);
      components.push_back(std::move(comp));
    }
  }

  const std::map<uint32_t, uint32_t>& succ_;
  std::map<uint32_t, uint32_t> index_, low_;
  std::vector<uint32_t> stack_;
  std::set<uint32_t> on_stack_;
  uint32_t next_ = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Planning

size_t MovePlan::move_count() const {
  size_t n = 0;
  for (const auto& c : components) n += c.edges.size();
  return n;
}

size_t MovePlan::cycle_count() const {
  return static_cast<size_t>(std::count_if(components.begin(), components.end(), [](const auto& c) {
    return c.kind == ComponentKind::Cycle;
  }));
}

size_t MovePlan::max_concurrent_cycles() const {
  size_t worst = 0;
  for (const auto& b : batches) {
    size_t cycles = 0;
    for (size_t i : b) cycles += components[i].kind == ComponentKind::Cycle;
    worst = std::max(worst, cycles);
  }
  for (size_t i : fallback) {
    if (components[i].kind == ComponentKind::Cycle) worst = std::max<size_t>(worst, 1);
  }
  return worst;
}

std::string MovePlan::to_json(bool pretty) const {
  using nlohmann::ordered_json;
  auto edge_json = [](const MoveEdge& e) {
    return ordered_json{{"from", e.from}, {"to", e.to}, {"delta", e.delta}};
  };
  ordered_json j;
  j["nodes"] = nodes;
  j["edges"] = ordered_json::array();
  for (const auto& e : raw_edges) j["edges"].push_back(edge_json(e));
  j["duplications"] = ordered_json::array();
  for (const auto& d : duplications) {
    j["duplications"].push_back(
        {{"source", d.source}, {"slot", d.slot}, {"delta", d.delta}, {"query", d.query}});
  }
  j["components"] = ordered_json::array();
  for (const auto& c : components) {
    ordered_json cj;
    cj["kind"] = c.kind == ComponentKind::Cycle   ? "cycle"
                 : c.kind == ComponentKind::Chain ? "chain"
                                                  : "rotate";
    cj["edges"] = ordered_json::array();
    for (const auto& e : c.edges) cj["edges"].push_back(edge_json(e));
    j["components"].push_back(std::move(cj));
  }
  j["batches"] = batches;
  j["fallback"] = fallback;
  j["vacated"] = vacated;
  j["batch_size"] = batch_size;
  return j.dump(pretty ? 2 : -1);
}

MovePlan plan_moves(std::span<const MoveRequest> requests, const KvStore& store,
                    const PlanOptions& options) {
  if (options.batch_size == 0) throw PlanError("batch size must be >= 1");
  Resolution res = resolve(requests, store);
  MovePlan plan;
  plan.batch_size = options.batch_size;

  std::vector<std::tuple<uint32_t, uint32_t, MoveEdge>> raw;  // (block, query, edge)
  for (const auto& k : res.keepers) {
    raw.push_back({k.block, k.query,
                   {k.block, k.dest.value_or(k.block), k.position - store.position(k.block)}});
  }
  for (const auto& [e, slot] : res.extras) {
    int64_t delta = e.position - store.position(e.block);
    raw.push_back({e.block, e.query, {e.block, slot, delta}});
    plan.duplications.push_back({e.block, slot, delta, e.query});
  }
  std::sort(raw.begin(), raw.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  for (auto& r : raw) plan.raw_edges.push_back(std::get<2>(r));

  std::map<uint32_t, MoveEdge> out;  // the strict permutation graph
  std::set<uint32_t> has_in;
  for (const auto& k : res.keepers) {
    MoveEdge e{k.block, k.dest.value_or(k.block), k.position - store.position(k.block)};
    if (e.from == e.to && e.delta == 0) continue;
    out[e.from] = e;
    if (e.from != e.to) has_in.insert(e.to);
  }
  std::set<uint32_t> nodes;
  for (const auto& [u, e] : out) {
    nodes.insert(u);
    nodes.insert(e.to);
    if (e.from != e.to && !has_in.count(u)) plan.vacated.push_back(u);
  }
  plan.nodes.assign(nodes.begin(), nodes.end());

  std::map<uint32_t, uint32_t> succ;
  for (const auto& [u, e] : out) succ[u] = e.to;
  std::set<uint32_t> in_cycle;
  for (auto& comp : Tarjan(succ).components) {
    if (comp.size() == 1) {
      uint32_t u = comp[0];
      auto it = out.find(u);
      if (it != out.end() && it->second.to == u) {
        plan.components.push_back({ComponentKind::Rotate, {it->second}});
        in_cycle.insert(u);
      }
      continue;
    }
    // Walk from the smallest slot: u0 -> u1 -> ... -> u(m-1) -> u0. The
    // closing edge comes first: its source is parked in scratch, the rest
    // run backwards, and the parked block lands in u0 last.
    uint32_t u0 = *std::min_element(comp.begin(), comp.end());
    std::vector<MoveEdge> walk;
    for (uint32_t u = u0;;) {
      walk.push_back(out.at(u));
      in_cycle.insert(u);
      u = out.at(u).to;
      if (u == u0) break;
    }
    MoveComponent c{ComponentKind::Cycle, {walk.back()}};
    for (size_t i = walk.size() - 1; i-- > 0;) c.edges.push_back(walk[i]);
    plan.components.push_back(std::move(c));
  }
  for (const auto& [u, e] : out) {
    if (in_cycle.count(u) || has_in.count(u)) continue;
    std::vector<MoveEdge> walk;
    for (uint32_t v = u; out.count(v);) {
      walk.push_back(out.at(v));
      v = out.at(v).to;
    }
    std::reverse(walk.begin(), walk.end());  // terminal end first
    plan.components.push_back({ComponentKind::Chain, std::move(walk)});
  }

  // First-fit decreasing by move count; a batch also may not run more
  // cycles at once than there are scratch blocks.
  std::vector<size_t> order(plan.components.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return plan.components[a].edges.size() > plan.components[b].edges.size();
  });
  std::vector<size_t> load, cycles;
  const size_t scratch = std::max<uint32_t>(store.scratch_budget(), 1);
  for (size_t i : order) {
    const auto& c = plan.components[i];
    if (c.edges.size() > options.batch_size) {
      plan.fallback.push_back(i);
      continue;
    }
    const size_t is_cycle = c.kind == ComponentKind::Cycle;
    size_t b = 0;
    while (b < plan.batches.size() &&
           (load[b] + c.edges.size() > options.batch_size || cycles[b] + is_cycle > scratch)) {
      ++b;
    }
    if (b == plan.batches.size()) {
      plan.batches.emplace_back();
      load.push_back(0);
      cycles.push_back(0);
    }
    plan.batches[b].push_back(i);
    load[b] += c.edges.size();
    cycles[b] += is_cycle;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Execution

namespace {

void run_component(const MoveComponent& c, KvStore& store, std::span<double> scratch,
                   const RopeParams& params) {
  auto move = [&](const MoveEdge& e) {
    store.copy_block(store.block(e.from), e.to, store.position(e.from), e.delta, params);
  };
  switch (c.kind) {
    case ComponentKind::Rotate:
    case ComponentKind::Chain:
      for (const auto& e : c.edges) move(e);
      return;
    case ComponentKind::Cycle: {
      const MoveEdge& parked = c.edges.front();
      auto src = store.block(parked.from);
      std::copy(src.begin(), src.end(), scratch.begin());
      int64_t parked_pos = store.position(parked.from);
      for (size_t i = 1; i < c.edges.size(); ++i) move(c.edges[i]);
      store.copy_block(scratch, parked.to, parked_pos, parked.delta, params);
      return;
    }
  }
}

}  // namespace

ExecStats execute_plan(const MovePlan& plan, KvStore& store, const RopeParams& params,
                       const ExecOptions& options) {
  ExecStats stats;
  const size_t stride = store.geometry().block_stride();
  const uint32_t bs = store.geometry().block_size;

  for (const auto& d : plan.duplications) {
    store.copy_block(store.block(d.source), d.slot, store.position(d.source), d.delta, params);
    ++stats.duplicated_blocks;
  }

  std::vector<double> scratch;
  auto reserve_scratch = [&](size_t cycles) {
    if (cycles > store.scratch_budget()) {
      throw KvStoreError("scratch budget exceeded: " + std::to_string(cycles) +
                         " concurrent cycles, budget " + std::to_string(store.scratch_budget()));
    }
    if (scratch.size() < cycles * stride) scratch.resize(cycles * stride);
    stats.scratch_peak = std::max<uint32_t>(stats.scratch_peak, static_cast<uint32_t>(cycles));
  };

  for (const auto& batch : plan.batches) {
    std::vector<size_t> scratch_slot(batch.size(), 0);
    size_t cycles = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
      if (plan.components[batch[i]].kind == ComponentKind::Cycle) scratch_slot[i] = cycles++;
    }
    reserve_scratch(cycles);
    auto work = [&](size_t i) {
      run_component(plan.components[batch[i]], store,
                    std::span<double>(scratch).subspan(scratch_slot[i] * stride, stride), params);
    };
    const size_t workers = std::min<size_t>(std::max<uint32_t>(options.workers, 1), batch.size());
    if (workers <= 1) {
      for (size_t i = 0; i < batch.size(); ++i) work(i);
    } else {
      // Components of one batch touch disjoint slots and scratch blocks.
      std::vector<std::thread> pool;
      for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (size_t i = w; i < batch.size(); i += workers) work(i);
        });
      }
      for (auto& t : pool) t.join();
    }
    ++stats.batches;
  }

  for (size_t i : plan.fallback) {
    const auto& c = plan.components[i];
    reserve_scratch(c.kind == ComponentKind::Cycle ? 1 : 0);
    run_component(c, store, std::span<double>(scratch).subspan(0, std::min(scratch.size(), stride)),
                  params);
    ++stats.fallback;
  }

  for (uint32_t u : plan.vacated) store.release(u);
  stats.moved_tokens = static_cast<uint64_t>(bs) * (plan.move_count() + plan.duplications.size());
  return stats;
}

KvStore oracle_reposition(std::span<const MoveRequest> requests, const KvStore& store,
                          const RopeParams& params) {
  Resolution res = resolve(requests, store);
  KvStore result = store;
  const auto& geo = store.geometry();

  auto write = [&](uint32_t source, uint32_t target, int64_t position) {
    const int64_t old_pos = store.position(source);
    auto dst = result.block(target);
    auto src = store.block(source);
    std::copy(src.begin(), src.end(), dst.begin());
    for (uint32_t layer = 0; layer < geo.layers; ++layer) {
      auto k = result.keys(target, layer);
      for (uint32_t row = 0; row < geo.block_size; ++row) {
        auto rowspan = k.subspan(row * geo.head_dim, geo.head_dim);
        auto moved = rerope(rowspan, old_pos + row, position + row, params);
        std::copy(moved.begin(), moved.end(), rowspan.begin());
      }
    }
    result.set_live(target, position);
  };

  std::set<uint32_t> written;
  for (const auto& k : res.keepers) {
    uint32_t to = k.dest.value_or(k.block);
    write(k.block, to, k.position);
    written.insert(to);
  }
  for (const auto& [e, slot] : res.extras) {
    write(e.block, slot, e.position);
    written.insert(slot);
  }
  for (const auto& k : res.keepers) {
    if (!written.count(k.block)) result.release(k.block);
  }
  return result;
}

CidraInstance random_instance(uint32_t blocks, uint32_t queries, double conflict_rate,
                              uint64_t seed, KvGeometry geometry, const RopeParams& params) {
  if (blocks == 0 || queries == 0) throw std::invalid_argument("instance needs blocks and queries");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const auto bs = static_cast<int64_t>(geometry.block_size);
  auto random_position = [&] {
    return static_cast<int64_t>(rng() % (4 * blocks)) * bs;
  };

  std::vector<uint32_t> perm(blocks);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<uint32_t> query_ids(queries);
  std::iota(query_ids.begin(), query_ids.end(), 0);

  std::vector<MoveRequest> requests;
  uint32_t spare = blocks;  // next slot past the live range
  for (uint32_t b = 0; b < blocks; ++b) {
    // Draw the demanding queries first so the primary demand (the one
    // with a fixed target) belongs to the lowest id and keeps the block.
    std::shuffle(query_ids.begin(), query_ids.end(), rng);
    size_t demands = 1;
    while (demands < queries && coin(rng) < conflict_rate) ++demands;
    std::vector<uint32_t> who(query_ids.begin(), query_ids.begin() + demands);
    std::sort(who.begin(), who.end());

    MoveRequest primary{b, random_position(), who[0], perm[b]};
    if (coin(rng) < 0.2) primary.dest = spare++;
    if (coin(rng) < 0.1) primary.position = static_cast<int64_t>(b) * bs;
    requests.push_back(primary);
    for (size_t i = 1; i < demands; ++i) requests.push_back({b, random_position(), who[i], {}});
  }
  const uint32_t slots = spare + static_cast<uint32_t>(requests.size() - blocks) + 2;
  CidraInstance inst{KvStore(slots, geometry, 8), std::move(requests)};
  for (uint32_t b = 0; b < blocks; ++b) inst.store.fill(b, seed * 1315423911ULL + b, b * bs, params);
  std::shuffle(inst.requests.begin(), inst.requests.end(), rng);
  return inst;
}

}  // namespace spanq
