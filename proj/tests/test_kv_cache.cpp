// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <list>
#include <random>

#include "spanq/kv_cache.hpp"
#include "support.hpp"

namespace spanq {
namespace {

const MockVocab kVocab;

std::vector<Token> content(std::initializer_list<TokenId> ids) {
  std::vector<Token> out;
  for (TokenId id : ids) out.push_back({id, TokenKind::Content, Role::None, std::nullopt});
  return out;
}

std::vector<Token> concat(std::initializer_list<std::vector<Token>> parts) {
  std::vector<Token> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

double rate(const LookupResult& r) {
  return static_cast<double>(r.hit_tokens) / static_cast<double>(r.input_tokens);
}

TEST(BlockHashes, ChainedWithoutSpans) {
  auto a = block_hashes(content({20, 21, 22, 23, 24}), 2);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[2].size, 1u);
  for (const auto& h : a) EXPECT_FALSE(h.context_free);
  // Changing the first block changes every later digest.
  auto b = block_hashes(content({99, 21, 22, 23, 24}), 2);
  for (size_t i = 0; i < 3; ++i) EXPECT_NE(a[i].digest, b[i].digest);
  // Same prefix, same digests.
  auto c = block_hashes(content({20, 21, 22, 23, 77}), 2);
  EXPECT_EQ(a[0].digest, c[0].digest);
  EXPECT_EQ(a[1].digest, c[1].digest);
  EXPECT_NE(a[2].digest, c[2].digest);
}

TEST(BlockHashes, RejectsUnbalancedAndMisaligned) {
  std::vector<Token> close{{MockVocab::kClose, TokenKind::Close, Role::None, 0u}};
  EXPECT_THROW(block_hashes(close, 2), HashError);
  auto misaligned = content({20});
  misaligned.push_back({MockVocab::kOpen, TokenKind::Open, Role::None, std::nullopt});
  EXPECT_THROW(block_hashes(misaligned, 2), HashError);
}

// Chat: request 1 is one input token plus four generated tokens.
TEST(CacheExamples, ChatRequestTwo) {
  CacheState cache(64, 2);
  auto req1 = content({20, 21, 22, 23, 24});
  auto h1 = block_hashes(req1, 2);
  EXPECT_EQ(cache.lookup(std::span(h1).first(1)).hit_tokens, 0u);
  EXPECT_EQ(cache.insert(h1), 2u);  // the fifth token is a partial block
  LookupResult r = cache.lookup(h1);
  EXPECT_EQ(r.hit_tokens, 4u);
  EXPECT_EQ(r.input_tokens, 5u);
  EXPECT_DOUBLE_EQ(rate(r), 0.8);
}

// RAG: the stock cache sees S F2 F1 after caching S F1 F2 U.
TEST(CacheExamples, RagBaselineReorder) {
  CacheState cache(64, 2);
  auto S = content({20, 21}), F1 = content({30, 31}), F2 = content({40, 41}), U = content({50});
  cache.insert(block_hashes(concat({S, F1, F2, U}), 2));
  LookupResult r = cache.lookup(block_hashes(concat({S, F2, F1}), 2));
  EXPECT_EQ(r.hit_tokens, 2u);
  EXPECT_EQ(r.input_tokens, 6u);
}

// Nested: the outer judge only shares its 2-token system prompt.
TEST(CacheExamples, NestedBaseline) {
  CacheState cache(64, 2);
  auto S2 = content({20, 21}), A1 = content({60, 61, 62}), A2 = content({70, 71});
  cache.insert(block_hashes(concat({S2, content({90, 91})}), 2));  // earlier judge
  LookupResult r = cache.lookup(block_hashes(concat({S2, A1, A2}), 2));
  EXPECT_EQ(r.hit_tokens, 2u);
  EXPECT_EQ(r.input_tokens, 7u);
}

TEST(Cache, InsertSkipsPartialBlock) {
  CacheState cache(64, 2);
  EXPECT_EQ(cache.insert(block_hashes(content({20, 21, 22, 23, 24}), 2)), 2u);
  EXPECT_EQ(cache.insert(block_hashes(content({30, 31, 32, 33}), 2)), 2u);
  EXPECT_EQ(cache.size(), 4u);
}

TEST(Cache, LruEvictionOrder) {
  CacheState cache(1, 2);
  auto h = block_hashes(content({20, 21, 22, 23, 24, 25}), 2);
  EXPECT_EQ(cache.insert(h), 3u);
  EXPECT_EQ(cache.stats().evictions, 2u);
  EXPECT_FALSE(cache.contains(h[0].digest));
  EXPECT_FALSE(cache.contains(h[1].digest));
  EXPECT_TRUE(cache.contains(h[2].digest));
}

TEST(Cache, PrefixScanStopsAtFirstMiss) {
  CacheState cache(64, 2);
  auto h = block_hashes(content({20, 21, 22, 23, 24, 25}), 2);
  cache.insert(h);
  std::vector<BlockHash> holey{h[0], {Digest{1, 2}, false, 2}, h[2]};
  LookupResult r = cache.lookup(holey);
  EXPECT_EQ(r.hit_blocks, 1u);
  EXPECT_EQ(r.blocks_scanned, 2u);
  EXPECT_EQ(cache.stats().miss_blocks, 2u);
}

TEST(Cache, RelocationAndDuplicationAreReported) {
  CacheState cache(8, 2);
  BlockHash x{Digest{7, 7}, true, 2};
  std::vector<BlockHash> at_zero{x};
  cache.insert(at_zero);
  // Needed once at position 2: copied there, the original stays.
  std::vector<BlockHash> moved{{Digest{1, 1}, false, 2}, x};
  cache.insert(std::span(moved).first(1));
  LookupResult r = cache.lookup(moved);
  ASSERT_EQ(r.hit_blocks, 2u);
  EXPECT_EQ(r.cached_positions[1], 0u);
  EXPECT_EQ(r.required_positions[1], 2u);
  EXPECT_EQ(r.repositioned_blocks(), 1u);
  EXPECT_EQ(cache.size(), 3u);
  // Both positions are now resident: no further re-encoding.
  EXPECT_EQ(cache.lookup(moved).repositioned_blocks(), 0u);
  EXPECT_EQ(cache.lookup(at_zero).repositioned_blocks(), 0u);
  // The same content twice in one request needs a second copy.
  std::vector<BlockHash> twice{x, x};
  LookupResult t = cache.lookup(twice);
  EXPECT_EQ(t.hit_blocks, 2u);
  EXPECT_NE(t.physical[0], t.physical[1]);
}

TEST(Cache, FullPoolMovesIdleReplica) {
  CacheState cache(1, 2);
  BlockHash x{Digest{7, 7}, true, 2};
  cache.insert(std::vector<BlockHash>{x});
  LookupResult r = cache.lookup(std::vector<BlockHash>{x}, 10);
  ASSERT_EQ(r.hit_blocks, 1u);
  EXPECT_FALSE(r.duplicated[0]);
  EXPECT_EQ(r.repositioned_blocks(), 1u);
  EXPECT_EQ(cache.lookup(std::vector<BlockHash>{x}, 10).repositioned_blocks(), 0u);
}

// Reference LRU over digests, most recent at the front.
class LruOracle {
 public:
  explicit LruOracle(size_t capacity) : capacity_(capacity) {}
  void use(const Digest& d) {
    order_.remove(d);
    order_.push_front(d);
  }
  bool has(const Digest& d) const { return std::find(order_.begin(), order_.end(), d) != order_.end(); }
  void insert(const Digest& d) {
    if (has(d)) return use(d);
    if (order_.size() == capacity_) order_.pop_back();
    order_.push_front(d);
  }
  size_t lookup(std::span<const BlockHash> hs) {
    size_t n = 0;
    for (const auto& h : hs) {
      if (!has(h.digest)) break;
      use(h.digest);
      ++n;
    }
    return n;
  }
  const std::list<Digest>& order() const { return order_; }

 private:
  size_t capacity_;
  std::list<Digest> order_;
};

TEST(Cache, MatchesLruOracleOnRandomTraces) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const uint32_t capacity = 1 + rng() % 12;
    CacheState cache(capacity, 4);
    LruOracle oracle(capacity);
    // Document d's block j always sits at position 4j, so no replica moves.
    for (int step = 0; step < 200; ++step) {
      uint64_t doc = rng() % 6;
      size_t len = 1 + rng() % 5;
      std::vector<BlockHash> hs;
      for (size_t j = 0; j < len; ++j) hs.push_back({Digest{doc, j}, false, 4});
      if (rng() % 2) {
        EXPECT_EQ(cache.lookup(hs).hit_blocks, oracle.lookup(hs));
      } else {
        cache.insert(hs);
        for (const auto& h : hs) oracle.insert(h.digest);
      }
      ASSERT_EQ(cache.size(), oracle.order().size());
      for (const Digest& d : oracle.order()) ASSERT_TRUE(cache.contains(d));
    }
  }
}

TEST(Cache, StatsJson) {
  CacheState cache(4, 2);
  auto h = block_hashes(content({20, 21, 22}), 2);
  cache.insert(h);
  cache.lookup(h);
  std::string json = cache.stats().to_json(false);
  EXPECT_NE(json.find("\"hit_tokens\":2"), std::string::npos);
  EXPECT_NE(json.find("\"input_tokens\":3"), std::string::npos);
  EXPECT_LE(cache.stats().hit_tokens, cache.stats().input_tokens);
}

TEST(Snapshot, RoundTrip) {
  CacheState cache(8, 2);
  auto h = block_hashes(content({20, 21, 22, 23, 24, 25, 26}), 2);
  cache.insert(h);
  cache.lookup(h, 6);
  auto bytes = cache.snapshot();
  CacheState back = CacheState::restore(bytes);
  EXPECT_TRUE(back == cache);
  EXPECT_EQ(back.stats(), cache.stats());
  // Behaviour after restore matches too.
  EXPECT_EQ(back.lookup(h).hit_blocks, cache.lookup(h).hit_blocks);
  EXPECT_TRUE(back == cache);
}

TEST(Snapshot, EmptyStateIsSmall) {
  CacheState cache(4, 16);
  auto bytes = cache.snapshot();
  EXPECT_EQ(bytes.size(), 16u + (4 + 4 + 8 + 6 * 8 + 4) + 4u);
  EXPECT_TRUE(CacheState::restore(bytes) == cache);
}

TEST(Snapshot, DetectsCorruption) {
  CacheState cache(8, 2);
  cache.insert(block_hashes(content({20, 21, 22, 23}), 2));
  auto bytes = cache.snapshot();

  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  EXPECT_THROW(CacheState::restore(truncated), SnapshotError);

  auto flipped = bytes;
  flipped[30] ^= 0x40;
  try {
    CacheState::restore(flipped);
    FAIL();
  } catch (const SnapshotError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }

  auto version = bytes;
  version[4] = 9;
  try {
    CacheState::restore(version);
    FAIL();
  } catch (const SnapshotError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

// -- span suspension ---------------------------------------------------------

SpanQuery rag_query(const std::string& prefix, const std::vector<std::string>& fragments,
                    const std::string& suffix) {
  SpanQuery q;
  std::vector<NodeId> spans;
  for (const auto& f : fragments) {
    spans.push_back(q.interior(Op::Span, {q.prepare({q.leaf(Op::Fragment, f)})}));
  }
  q.set_root(q.generate({q.interior(
      Op::Join, {q.leaf(Op::System, prefix), q.interior(Op::Plus, spans), q.leaf(Op::User, suffix)})}));
  return q;
}

struct Hashed {
  TokenizedQuery tq;
  std::vector<BlockHash> hashes;
};

Hashed hash_query(const SpanQuery& q, uint32_t bs) {
  Hashed h{align_blocks(tokenize_query(q, kVocab, bs)), {}};
  h.hashes = block_hashes(h.tq.tokens, bs);
  return h;
}

std::vector<Digest> span_digests(const Hashed& h, size_t span_index) {
  const SpanRange r = h.tq.spans.at(span_index).range;
  const uint32_t bs = h.tq.block_size;
  std::vector<Digest> out;
  for (uint32_t b = r.start / bs; b < r.end / bs; ++b) out.push_back(h.hashes[b].digest);
  return out;
}

TEST(Suspension, SpanDigestsIgnorePrefix) {
  auto a = hash_query(rag_query("s1 u1", {"f1a f1b f1c", "f2"}, "end"), 2);
  auto b = hash_query(rag_query("x y z w", {"f1a f1b f1c", "f2"}, "end"), 2);
  EXPECT_EQ(span_digests(a, 0), span_digests(b, 0));
  EXPECT_EQ(span_digests(a, 1), span_digests(b, 1));
  for (uint32_t blk = a.tq.spans[0].range.start / 2; blk < a.tq.spans[1].range.end / 2; ++blk) {
    EXPECT_TRUE(a.hashes[blk].context_free);
  }
  EXPECT_FALSE(a.hashes.front().context_free);
  EXPECT_FALSE(a.hashes.back().context_free);
}

TEST(Suspension, SiblingOrderDoesNotLeak) {
  auto ab = hash_query(rag_query("p", {"alpha beta", "gamma delta epsilon"}, "after the region"), 2);
  auto ba = hash_query(rag_query("p", {"gamma delta epsilon", "alpha beta"}, "after the region"), 2);
  EXPECT_EQ(span_digests(ab, 0), span_digests(ba, 1));
  EXPECT_EQ(span_digests(ab, 1), span_digests(ba, 0));
  ASSERT_EQ(ab.hashes.size(), ba.hashes.size());
  const size_t after = ab.tq.spans.back().range.end / 2;
  for (size_t b = after; b < ab.hashes.size(); ++b) EXPECT_EQ(ab.hashes[b].digest, ba.hashes[b].digest);
  // The prefix still matters after the region.
  auto other = hash_query(rag_query("q", {"alpha beta", "gamma delta epsilon"}, "after the region"), 2);
  EXPECT_NE(other.hashes.back().digest, ab.hashes.back().digest);
}

TEST(Suspension, SpanHitsUnderPermutation) {
  CacheState cache(256, 2);
  auto first = hash_query(rag_query("sys", {"a b c", "d e", "f g h i"}, "go"), 2);
  cache.insert(first.hashes);
  auto perm = hash_query(rag_query("sys", {"f g h i", "a b c", "d e"}, "go"), 2);
  LookupResult r = cache.lookup(perm.hashes);
  // Everything up to the last (partial) block hits.
  EXPECT_EQ(r.hit_blocks, perm.hashes.size() - (perm.hashes.back().full(2) ? 0 : 1));
  EXPECT_GT(r.repositioned_blocks(), 0u);
}

TEST(ChatReplay, HitRateClimbs) {
  CacheState cache(4096, 16);
  std::mt19937_64 rng(9);
  std::vector<Token> history;
  double previous = 0.0;
  for (int turn = 1; turn <= 20; ++turn) {
    for (int i = 0; i < 32; ++i) history.push_back({static_cast<TokenId>(16 + rng() % 5000)});
    auto hs = block_hashes(history, 16);
    LookupResult r = cache.lookup(hs);
    double hr = rate(r);
    EXPECT_GE(hr, previous);
    if (turn >= 10) EXPECT_GE(hr, 0.9);
    previous = hr;
    for (int i = 0; i < 32; ++i) history.push_back({static_cast<TokenId>(16 + rng() % 5000)});
    cache.insert(block_hashes(history, 16));
  }
}

}  // namespace
}  // namespace spanq
