// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <json.hpp>
#include <numbers>
#include <random>

#include "spanq/cidra.hpp"

namespace spanq {
namespace {

const RopeParams kRope{};
const KvGeometry kSmall{4, 8, 2};
const RopeParams kSmallRope{8, 10000.0};

std::vector<double> random_vector(size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double max_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

TEST(Rope, PositionZeroIsIdentity) {
  auto x = random_vector(64, 1);
  EXPECT_EQ(rope_apply(x, 0, kRope), x);
}

TEST(Rope, FirstPairRotatesByPosition) {
  std::vector<double> x(64, 0.0);
  x[0] = 1.0;
  for (int64_t p : {1, 5, 37}) {
    auto y = rope_apply(x, p, kRope);
    EXPECT_NEAR(y[0], std::cos(static_cast<double>(p)), 1e-12);
    EXPECT_NEAR(y[1], std::sin(static_cast<double>(p)), 1e-12);
  }
}

TEST(Rope, ThetaMatchesFormula) {
  for (uint32_t i : {0u, 1u, 7u, 31u}) {
    EXPECT_NEAR(kRope.theta(i), std::pow(10000.0, -2.0 * i / 64.0), 1e-15);
  }
}

TEST(Rope, PreservesNorm) {
  auto x = random_vector(64, 2);
  for (int64_t p : {3, 1000, 65535}) EXPECT_NEAR(norm(rope_apply(x, p, kRope)), norm(x), 1e-9);
}

TEST(Rope, RelativePositionInDotProduct) {
  auto q = random_vector(64, 3), k = random_vector(64, 4);
  auto dot = [](std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  double near = dot(rope_apply(q, 10, kRope), rope_apply(k, 7, kRope));
  double far = dot(rope_apply(q, 1010, kRope), rope_apply(k, 1007, kRope));
  EXPECT_NEAR(near, far, 1e-9);
}

TEST(Rope, RerankingMatchesFreshEncoding) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    auto x = random_vector(64, rng());
    int64_t a = static_cast<int64_t>(rng() % 100000), b = static_cast<int64_t>(rng() % 100000);
    auto fresh = rope_apply(x, b, kRope);
    auto moved = rerope(rope_apply(x, a, kRope), a, b, kRope);
    EXPECT_LT(max_diff(fresh, moved), 1e-9);
  }
}

TEST(Rope, RerankingComposes) {
  auto x = random_vector(64, 8);
  auto two_steps = rerope(rerope(x, 5, 900, kRope), 900, 40, kRope);
  EXPECT_LT(max_diff(two_steps, rerope(x, 5, 40, kRope)), 1e-10);
}

TEST(Rope, RejectsBadDimension) {
  EXPECT_THROW((RopeParams{7, 10000.0}.check()), DimensionError);
  EXPECT_THROW((RopeParams{0, 10000.0}.check()), DimensionError);
  EXPECT_THROW((RopeParams{8, 0.0}.check()), DimensionError);
  std::vector<double> odd(63, 1.0);
  EXPECT_THROW(rope_apply(odd, 1, kRope), DimensionError);
}

KvStore store_with(uint32_t slots, std::initializer_list<std::pair<uint32_t, int64_t>> live) {
  KvStore s(slots, kSmall);
  for (auto [slot, pos] : live) s.fill(slot, 100 + slot, pos, kSmallRope);
  return s;
}

void expect_matches_oracle(std::span<const MoveRequest> reqs, const KvStore& before,
                           uint32_t workers = 1, uint32_t batch = 64) {
  const MovePlan plan = plan_moves(reqs, before, {batch});
  KvStore got = before;
  execute_plan(plan, got, kSmallRope, {workers});
  const KvStore want = oracle_reposition(reqs, before, kSmallRope);
  EXPECT_LT(max_abs_diff(got, want), 1e-9) << plan.to_json();
}

TEST(Plan, SwapIsOneTwoCycle) {
  KvStore s = store_with(4, {{0, 0}, {1, 4}});
  std::vector<MoveRequest> reqs{{0, 4, 0, 1u}, {1, 0, 0, 0u}};
  MovePlan plan = plan_moves(reqs, s);
  ASSERT_EQ(plan.components.size(), 1u);
  EXPECT_EQ(plan.components[0].kind, ComponentKind::Cycle);
  EXPECT_EQ(plan.components[0].edges.size(), 2u);
  EXPECT_EQ(plan.cycle_count(), 1u);
  EXPECT_EQ(plan.nodes, (std::vector<uint32_t>{0, 1}));
  EXPECT_TRUE(plan.vacated.empty());
  KvStore got = s;
  ExecStats st = execute_plan(plan, got, kSmallRope);
  EXPECT_EQ(st.scratch_peak, 1u);
  EXPECT_EQ(st.moved_tokens, 8u);
  // Block 0's content now sits in slot 1 at position 4, and vice versa.
  KvStore expect0(4, kSmall), expect1(4, kSmall);
  expect0.fill(1, 100, 4, kSmallRope);
  expect1.fill(0, 101, 0, kSmallRope);
  EXPECT_LT(max_diff(got.block(1), expect0.block(1)), 1e-9);
  EXPECT_LT(max_diff(got.block(0), expect1.block(0)), 1e-9);
}

TEST(Plan, ChainRunsTerminalFirst) {
  KvStore s = store_with(5, {{0, 0}, {1, 4}});
  std::vector<MoveRequest> reqs{{0, 8, 0, 1u}, {1, 12, 0, 2u}};
  MovePlan plan = plan_moves(reqs, s);
  ASSERT_EQ(plan.components.size(), 1u);
  const auto& c = plan.components[0];
  EXPECT_EQ(c.kind, ComponentKind::Chain);
  ASSERT_EQ(c.edges.size(), 2u);
  EXPECT_EQ(c.edges[0], (MoveEdge{1, 2, 8}));
  EXPECT_EQ(c.edges[1], (MoveEdge{0, 1, 8}));
  EXPECT_EQ(plan.vacated, (std::vector<uint32_t>{0}));
  expect_matches_oracle(reqs, s);
}

TEST(Plan, InPlaceShiftIsRotation) {
  KvStore s = store_with(2, {{0, 0}});
  std::vector<MoveRequest> reqs{{0, 20, 0, {}}};
  MovePlan plan = plan_moves(reqs, s);
  ASSERT_EQ(plan.components.size(), 1u);
  EXPECT_EQ(plan.components[0].kind, ComponentKind::Rotate);
  expect_matches_oracle(reqs, s);
  // A zero shift in place is no work.
  std::vector<MoveRequest> still{{0, 0, 0, {}}};
  EXPECT_EQ(plan_moves(still, s).move_count(), 0u);
}

TEST(Plan, ConflictingDemandsDuplicate) {
  // Two queries want block 0 at different positions.
  KvStore s = store_with(4, {{0, 0}, {1, 4}});
  std::vector<MoveRequest> reqs{{0, 8, 2, {}}, {0, 16, 1, {}}, {1, 4, 1, {}}};
  MovePlan plan = plan_moves(reqs, s);
  ASSERT_EQ(plan.duplications.size(), 1u);
  const Duplication& d = plan.duplications[0];
  EXPECT_EQ(d.source, 0u);
  EXPECT_EQ(d.slot, 2u);  // lowest free slot
  EXPECT_EQ(d.query, 2u);
  EXPECT_EQ(d.delta, 8);
  ASSERT_EQ(plan.components.size(), 1u);  // query 1 keeps slot 0, shifted to 16
  EXPECT_EQ(plan.components[0].edges[0], (MoveEdge{0, 0, 16}));
  KvStore got = s;
  ExecStats st = execute_plan(plan, got, kSmallRope);
  EXPECT_EQ(st.duplicated_blocks, 1u);
  EXPECT_EQ(st.moved_tokens, 8u);
  EXPECT_EQ(got.position(2), 8);
  EXPECT_EQ(got.position(0), 16);
  expect_matches_oracle(reqs, s);
}

TEST(Plan, IdenticalDemandsMerge) {
  KvStore s = store_with(3, {{0, 0}});
  std::vector<MoveRequest> reqs{{0, 8, 3, {}}, {0, 8, 1, {}}, {0, 8, 2, {}}};
  MovePlan plan = plan_moves(reqs, s);
  EXPECT_TRUE(plan.duplications.empty());
  EXPECT_EQ(plan.raw_edges.size(), 1u);
}

TEST(Plan, Errors) {
  KvStore s = store_with(3, {{0, 0}, {1, 4}});
  auto message = [&](std::vector<MoveRequest> reqs) {
    try {
      plan_moves(reqs, s);
    } catch (const PlanError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message({{0, 0, 0, 2u}, {1, 0, 0, 2u}}).find("two demands target slot 2"), std::string::npos);
  EXPECT_NE(message({{0, 0, 0, 1u}}).find("holds content that is not moving"), std::string::npos);
  EXPECT_NE(message({{2, 0, 0, {}}}).find("empty slot 2"), std::string::npos);
  EXPECT_NE(message({{0, 4, 0, {}}, {0, 8, 1, {}}, {0, 12, 2, {}}}).find("free list exhausted"),
            std::string::npos);
  EXPECT_THROW(plan_moves(std::vector<MoveRequest>{}, s, {0}), PlanError);
}

TEST(Plan, JsonDump) {
  KvStore s = store_with(4, {{0, 0}, {1, 4}});
  std::vector<MoveRequest> reqs{{0, 4, 0, 1u}, {1, 0, 0, 0u}, {0, 40, 1, {}}};
  auto j = nlohmann::json::parse(plan_moves(reqs, s).to_json());
  EXPECT_EQ(j["nodes"], nlohmann::json::parse("[0,1]"));
  EXPECT_EQ(j["edges"].size(), 3u);
  EXPECT_EQ(j["duplications"][0]["slot"], 2);
  EXPECT_EQ(j["components"][0]["kind"], "cycle");
  EXPECT_EQ(j["batch_size"], 64);
}

TEST(Plan, ScratchBoundLimitsConcurrentCycles) {
  // Three disjoint swaps with one scratch block: three batches.
  KvStore s(8, kSmall, 1);
  for (uint32_t i = 0; i < 6; ++i) s.fill(i, i, 4 * i, kSmallRope);
  std::vector<MoveRequest> reqs;
  for (uint32_t i = 0; i < 6; i += 2) {
    reqs.push_back({i, 4 * (i + 1), 0, i + 1});
    reqs.push_back({i + 1, 4 * i, 0, i});
  }
  MovePlan plan = plan_moves(reqs, s);
  EXPECT_EQ(plan.cycle_count(), 3u);
  EXPECT_EQ(plan.batches.size(), 3u);
  EXPECT_EQ(plan.max_concurrent_cycles(), 1u);
  KvStore got = s;
  EXPECT_LE(execute_plan(plan, got, kSmallRope).scratch_peak, 1u);
  expect_matches_oracle(reqs, s);
}

TEST(Plan, OversizedComponentFallsBack) {
  KvStore s(8, kSmall, 1);
  for (uint32_t i = 0; i < 5; ++i) s.fill(i, i, 4 * i, kSmallRope);
  std::vector<MoveRequest> reqs;
  for (uint32_t i = 0; i < 5; ++i) reqs.push_back({i, 4 * ((i + 1) % 5), 0, (i + 1) % 5});
  MovePlan plan = plan_moves(reqs, s, {2});
  EXPECT_EQ(plan.fallback.size(), 1u);
  EXPECT_TRUE(plan.batches.empty());
  expect_matches_oracle(reqs, s, 1, 2);
}

class RandomCidra : public ::testing::TestWithParam<double> {};

TEST_P(RandomCidra, MatchesOracle) {
  const double conflict = GetParam();
  for (uint64_t seed = 1; seed <= 40; ++seed) {
    CidraInstance inst = random_instance(24, 5, conflict, seed, kSmall, kSmallRope);
    const uint32_t batch = seed % 3 == 0 ? 3 : 64;
    const MovePlan plan = plan_moves(inst.requests, inst.store, {batch});

    // Duplications are minimal: one per distinct demand beyond the first per block.
    std::set<std::tuple<uint32_t, int64_t, int64_t>> distinct;
    std::set<uint32_t> blocks;
    for (const auto& r : inst.requests) {
      distinct.insert({r.block, r.position, r.dest ? int64_t{*r.dest} : -1});
      blocks.insert(r.block);
    }
    EXPECT_EQ(plan.duplications.size(), distinct.size() - blocks.size());
    EXPECT_LE(plan.max_concurrent_cycles(), inst.store.scratch_budget());

    KvStore got = inst.store;
    ExecStats st = execute_plan(plan, got, kSmallRope, {seed % 2 ? 4u : 1u});
    EXPECT_LE(st.scratch_peak, inst.store.scratch_budget());
    EXPECT_EQ(st.moved_tokens, kSmall.block_size * (plan.move_count() + plan.duplications.size()));
    const KvStore want = oracle_reposition(inst.requests, inst.store, kSmallRope);
    ASSERT_LT(max_abs_diff(got, want), 1e-9) << "seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(ConflictRates, RandomCidra, ::testing::Values(0.0, 0.3, 0.8));

TEST(KvStoreTest, FillIsDeterministicAndRotated) {
  KvStore a(2, kSmall), b(2, kSmall);
  a.fill(0, 7, 12, kSmallRope);
  b.fill(0, 7, 0, kSmallRope);
  // Same raw content: rotating b's rows by 12 gives a.
  auto keys = b.keys(0, 1);
  rotate_rows(keys, 12, kSmallRope);
  EXPECT_LT(max_diff(a.keys(0, 1), keys), 1e-12);
  EXPECT_TRUE(std::isinf(max_abs_diff(a, KvStore(3, kSmall))));
  KvStore wide(2, kSmall);
  EXPECT_THROW(wide.fill(0, 1, 0, kRope), DimensionError);
  EXPECT_THROW(a.block(5), KvStoreError);
}

TEST(KvStoreTest, ValuesAreNotRotated) {
  KvStore a(1, kSmall), b(1, kSmall);
  a.fill(0, 3, 0, kSmallRope);
  b.fill(0, 3, 100, kSmallRope);
  EXPECT_EQ(a.values(0, 0)[5], b.values(0, 0)[5]);
  EXPECT_NE(a.keys(0, 0)[5], b.keys(0, 0)[5]);
}

}  // namespace
}  // namespace spanq
