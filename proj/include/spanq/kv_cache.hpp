// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "spanq/tokenizer.hpp"

namespace spanq {

struct Digest {
  uint64_t hi = 0;
  uint64_t lo = 0;

  auto operator<=>(const Digest&) const = default;
  std::string hex() const;
};

struct DigestHasher {
  size_t operator()(const Digest& d) const noexcept { return d.lo ^ (d.hi * 0x9e3779b97f4a7c15ULL); }
};

struct BlockHash {
  Digest digest;
  bool context_free = false;  // inside a span: digest ignores the prefix
  uint32_t size = 0;          // tokens in the block; < block size for a trailing partial

  bool full(uint32_t block_size) const { return size == block_size; }
  bool operator==(const BlockHash&) const = default;
};

class HashError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Chained block digests with suspension on span boundaries. A block that
/// starts with `(` or `)(` begins a fresh chain from a fixed seed; a block
/// that starts with `)` resumes the enclosing chain folded with the sum of
/// the sibling chains' final digests, so the order of plus siblings does
/// not leak into anything after the region.
std::vector<BlockHash> block_hashes(std::span<const Token> tokens, uint32_t block_size);

struct CacheStats {
  uint64_t lookups = 0;
  uint64_t hit_blocks = 0;
  uint64_t miss_blocks = 0;
  uint64_t hit_tokens = 0;
  uint64_t input_tokens = 0;
  uint64_t evictions = 0;

  double hit_rate() const {
    return input_tokens == 0 ? 0.0 : static_cast<double>(hit_tokens) / input_tokens;
  }
  std::string to_json(bool pretty = true) const;
  bool operator==(const CacheStats&) const = default;
};

struct LookupResult {
  size_t hit_blocks = 0;
  size_t hit_tokens = 0;
  size_t input_tokens = 0;
  size_t blocks_scanned = 0;
  std::vector<uint32_t> physical;            // per hit block
  std::vector<uint64_t> cached_positions;    // where the KV sat before this use
  std::vector<uint64_t> required_positions;  // where this request needs it
  std::vector<bool> duplicated;              // a second copy was made for this use

  /// Hit blocks whose KV must be re-encoded: moved or duplicated.
  size_t repositioned_blocks() const;
};

class SnapshotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Block pool keyed by digest. A digest may be cached more than once
/// (replicas) when concurrent uses need it at different positions; each
/// replica occupies one physical block and carries its own LRU tick.
class CacheState {
 public:
  static constexpr uint32_t kSnapshotVersion = 1;

  CacheState(uint32_t capacity, uint32_t block_size);

  uint32_t capacity() const { return capacity_; }
  uint32_t block_size() const { return block_size_; }
  size_t size() const { return replicas_.size(); }
  const CacheStats& stats() const { return stats_; }
  void reset_stats() { stats_ = {}; }

  bool contains(const Digest& d) const { return by_digest_.count(d) != 0; }

  /// Strict prefix scan from the first block. Block i is required at token
  /// position `base_position + i * block_size`. When no idle replica sits at
  /// that position, a re-encoded copy is placed if a block is free (or can
  /// be evicted); with the pool full, an idle replica is moved instead.
  LookupResult lookup(std::span<const BlockHash> hashes, uint64_t base_position = 0);

  /// Inserts every full block; a trailing partial block is skipped. Digests
  /// already present are only touched. Returns the number of new blocks.
  size_t insert(std::span<const BlockHash> hashes, uint64_t base_position = 0);

  std::vector<uint8_t> snapshot() const;
  static CacheState restore(std::span<const uint8_t> bytes);

  bool operator==(const CacheState& other) const;

 private:
  struct Replica {
    Digest digest;
    uint64_t position = 0;
    uint64_t tick = 0;
    bool context_free = false;
    bool operator==(const Replica&) const = default;
  };

  void touch(uint32_t phys);
  // Frees a block, evicting the least recently used replica not in `pinned`.
  // Returns false when every resident block is pinned.
  bool make_room(const std::set<uint32_t>& pinned, std::optional<uint32_t> also = {});
  uint32_t place(const Digest& d, uint64_t position, bool context_free);
  void erase(uint32_t phys);

  uint32_t capacity_;
  uint32_t block_size_;
  uint64_t tick_ = 0;
  std::map<uint32_t, Replica> replicas_;  // physical id -> replica
  std::unordered_map<Digest, std::vector<uint32_t>, DigestHasher> by_digest_;
  std::set<std::pair<uint64_t, uint32_t>> lru_;  // (tick, physical id)
  std::set<uint32_t> free_;
  CacheStats stats_;
};

}  // namespace spanq
