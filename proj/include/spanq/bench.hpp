// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spanq/cidra.hpp"
#include "spanq/engine.hpp"

namespace spanq {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// -- bulk scheduling ---------------------------------------------------------

struct FragmentRef {
  uint32_t id = 0;
  uint32_t blocks = 1;  // cache blocks the prepared fragment occupies
};

struct BulkQuery {
  uint32_t id = 0;
  std::vector<FragmentRef> fragments;
};

struct BulkSchedule {
  std::vector<uint32_t> order;  // query ids
  uint64_t predicted_hit_blocks = 0;
  uint64_t input_order_hit_blocks = 0;
  bool greedy = true;  // false when the input order simulated better
};

/// Simulated fragment-level hits of running `order` (query ids) through an
/// LRU cache of `capacity` blocks. Each fragment is one prefix lookup.
uint64_t simulate_fragment_hits(std::span<const BulkQuery> queries,
                                std::span<const uint32_t> order, uint32_t capacity);

/// Greedy locality clustering. Starts from the query with the most
/// fragments among those sharing a fragment with another query (the first
/// query when none do), then repeatedly takes the query with the most
/// fragment blocks resident in the simulated cache, ties by id. The input
/// order is returned instead when it simulates strictly better.
BulkSchedule schedule_bulk(std::span<const BulkQuery> queries, uint32_t capacity);

// -- benchmarks --------------------------------------------------------------

struct RagConfig {
  std::vector<uint32_t> docs;  // empty: 1..32
  uint32_t doc_tokens = 2857;
  uint32_t system_tokens = 32;
  uint32_t user_tokens = 32;
  uint32_t block_size = 16;
  uint32_t capacity = 0;  // 0: sized for the largest point
  uint64_t seed = 1;
  CostCoefficients cost;
};

struct RagPoint {
  uint32_t docs = 0;
  uint64_t context_tokens = 0;  // documents plus prompt
  CostReport baseline;
  CostReport span_miss;
  CostReport span_hit;
};

/// Baseline: stock prefix cache and flat serialization with only the
/// system prompt cached. Span miss: fragments prepared, then the query.
/// Span hit: the same cache, every fragment moved to a new position.
std::vector<RagPoint> rag_sweep(const RagConfig& config);

struct NestedConfig {
  std::vector<uint32_t> fanouts;        // empty: 1..24
  std::vector<double> temperatures;     // empty: 0, .25, .5, .75, 1
  uint32_t outer_system_tokens = 32;
  uint32_t inner_system_tokens = 8;
  uint32_t inner_user_tokens = 7;
  uint32_t max_tokens = 128;
  uint32_t outer_user_tokens = 8;
  uint32_t block_size = 16;
  uint32_t capacity = 16384;
  uint64_t seed = 1;
  CostCoefficients cost;
};

struct NestedPoint {
  uint32_t fanout = 0;
  double temperature = 0;
  CostReport baseline;
  CostReport span;
  double ratio() const { return span.ttft_proxy > 0 ? baseline.ttft_proxy / span.ttft_proxy : 0; }
};

/// Judge over `fanout` generators. Each variant gets a fresh cache and one
/// warm-up execution; the second execution (new seeds) is measured.
std::vector<NestedPoint> nested_sweep(const NestedConfig& config);

struct ChatConfig {
  uint32_t turns = 20;
  uint32_t user_tokens = 32;
  uint32_t output_tokens = 32;
  uint32_t block_size = 16;
  uint32_t capacity = 4096;
  uint64_t seed = 1;
};

struct ChatPoint {
  uint32_t turn = 0;
  uint64_t input_tokens = 0;
  uint64_t hit_tokens = 0;
  double hit_rate() const { return input_tokens ? static_cast<double>(hit_tokens) / input_tokens : 0; }
};

/// Multi-turn chat where each turn resends the history plus a new user turn.
std::vector<ChatPoint> chat_replay(const ChatConfig& config);

struct BulkConfig {
  uint32_t queries = 40;
  uint32_t documents = 12;
  uint32_t document_words = 600;
  uint32_t fragment_words = 100;
  uint32_t k = 3;
  double working_set_ratio = 3.0;  // distinct fragment blocks / capacity
  uint32_t block_size = 16;
  uint64_t seed = 1;
};

struct BulkResult {
  std::vector<BulkQuery> queries;
  BulkSchedule schedule;
  uint32_t capacity = 0;
  uint64_t working_set_blocks = 0;
  uint64_t input_hit_tokens = 0;      // engine, input order
  uint64_t scheduled_hit_tokens = 0;  // engine, scheduled order
};

/// Synthetic RAG bulk: queries retrieve top-k fragments from a random
/// corpus, are scheduled, and both orders run through the engine.
BulkResult bulk_bench(const BulkConfig& config);

struct CidraBenchConfig {
  uint32_t blocks = 64;
  uint32_t queries = 4;
  double conflict_rate = 0.2;
  uint64_t seed = 1;
  uint32_t batch_size = 64;
  uint32_t workers = 1;
  KvGeometry geometry;
};

struct CidraBenchResult {
  MovePlan plan;
  ExecStats stats;
  double max_abs_diff = 0;
  bool oracle_match = false;
};

CidraBenchResult cidra_bench(const CidraBenchConfig& config);

/// Coefficient of determination of a least-squares polynomial fit.
double r_squared(std::span<const double> x, std::span<const double> y, int degree);

// -- reporting ---------------------------------------------------------------

std::string rag_json(const std::vector<RagPoint>& points, bool pretty = true);
std::string rag_csv(const std::vector<RagPoint>& points);
std::string nested_json(const std::vector<NestedPoint>& points, bool pretty = true);
std::string nested_csv(const std::vector<NestedPoint>& points);
std::string chat_json(const std::vector<ChatPoint>& points, bool pretty = true);
std::string chat_csv(const std::vector<ChatPoint>& points);
std::string bulk_json(const BulkResult& result, bool pretty = true);
std::string bulk_csv(const BulkResult& result);
std::string cidra_json(const CidraBenchResult& result, bool pretty = true);
std::string cidra_csv(const CidraBenchResult& result);

}  // namespace spanq
