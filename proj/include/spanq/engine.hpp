// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spanq/kv_cache.hpp"
#include "spanq/span_ast.hpp"
#include "spanq/tokenizer.hpp"

namespace spanq {

class EngineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic stand-in for a model server. The greedy continuation is a
/// digest stream of the input; with temperature t > 0 each position is
/// resampled from a (input, seed) stream with probability min(t, 1).
class MockModel {
 public:
  explicit MockModel(const MockVocab& vocab, uint32_t block_size = 16)
      : vocab_(vocab), block_size_(block_size) {}

  const MockVocab& vocab() const { return vocab_; }

  /// Output length is max_tokens when set, otherwise a digest-chosen
  /// value in [block_size, 8 * block_size].
  std::vector<TokenId> generate(std::span<const TokenId> input, const GenParams& params) const;

 private:
  const MockVocab& vocab_;
  uint32_t block_size_;
};

struct CostCoefficients {
  double attn = 1.0;
  double repo = 1.0;
  double hash = 0.1;
};

struct RequestCost {
  std::string label;  // "root", "span", "prepare", "generate"
  uint64_t input_tokens = 0;
  uint64_t hit_tokens = 0;
  uint64_t prefill_tokens = 0;
  uint64_t attended_pairs = 0;
  uint64_t decode_pairs = 0;
  uint64_t repositioned_tokens = 0;
  uint64_t blocks_scanned = 0;
  uint64_t output_tokens = 0;
  bool skipped = false;  // a fully cached preparation
};

/// Prefill cost proxy. Decode pairs of nested generations count toward the
/// outer request's time to first token; the root's own decode does not.
struct CostReport {
  uint64_t attended_pairs = 0;
  uint64_t decode_pairs = 0;
  uint64_t prefill_tokens = 0;
  uint64_t hit_tokens = 0;
  uint64_t input_tokens = 0;
  uint64_t repositioned_tokens = 0;
  uint64_t blocks_scanned = 0;
  double ttft_proxy = 0.0;
  std::vector<RequestCost> requests;

  void add(const RequestCost& r, const CostCoefficients& c);
  CostReport& operator+=(const CostReport& other);
  double hit_rate() const {
    return input_tokens == 0 ? 0.0 : static_cast<double>(hit_tokens) / input_tokens;
  }
  std::string to_json(bool pretty = true, bool with_requests = false) const;
};

/// Pairs (i, j), j < i, of content tokens where token i is uncached
/// (index >= hit_tokens). Token i sees the content of its innermost
/// enclosing span, or the whole prefix outside any span. Pads and span
/// boundaries neither attend nor are attended.
uint64_t attended_pairs(const TokenizedQuery& tq, size_t hit_tokens);

/// Pairs attended while decoding `output` tokens after `context` tokens.
inline uint64_t decode_pairs(uint64_t context, uint64_t output) {
  return output * context + output * (output ? output - 1 : 0) / 2;
}

struct ExecuteOptions {
  /// Serialize plus regions with span boundaries. Off reproduces a stock
  /// server: plus joins are flat and G1 preparations are not issued.
  bool emit_spans = true;
  CostCoefficients cost;
};

struct ExecResult {
  SpanQuery result;    // the root G replaced by an A leaf
  SpanQuery resolved;  // the root input with every nested generation resolved
  std::vector<TokenId> output;
  OutputMap outputs;   // per generate node of the input query
  CostReport cost;
  std::vector<std::string> warnings;
};

/// Runs an optimized query: nested generations first (depth first, in
/// child order), then the root. Throws EngineError when the query holds
/// sugar, is not rooted at G, the model's vocabulary differs from
/// `vocab`, or a request needs more blocks than the cache holds.
ExecResult execute(const SpanQuery& query, CacheState& cache, const MockModel& model,
                   const MockVocab& vocab, const ExecuteOptions& options = {});

}  // namespace spanq
