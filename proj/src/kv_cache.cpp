// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#include "spanq/kv_cache.hpp"

#include <algorithm>
#include <cstring>
#include <optional>

#include <json.hpp>
#include <zlib.h>

namespace spanq {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Digest mix(Digest d, uint64_t v) {
  d.lo = splitmix64(d.lo ^ splitmix64(v));
  d.hi = splitmix64(d.hi + (splitmix64(v ^ 0x5bd1e9955bd1e995ULL) | 1));
  return d;
}

constexpr Digest kSeed{0x243f6a8885a308d3ULL, 0x13198a2e03707344ULL};
constexpr uint64_t kBlockTag = 0xb10c;

// `(` and `)(` hash alike so a span's first block does not depend on its
// place among its siblings; a close's back pointer is never hashed.
uint64_t normalized(const Token& t) {
  switch (t.kind) {
    case TokenKind::Open:
    case TokenKind::Sep: return static_cast<uint64_t>(MockVocab::kOpen);
    case TokenKind::Close: return static_cast<uint64_t>(MockVocab::kClose);
    case TokenKind::Pad: return static_cast<uint64_t>(MockVocab::kPad);
    case TokenKind::Content: break;
  }
  return static_cast<uint64_t>(static_cast<uint32_t>(t.id));
}

struct Frame {
  Digest outer;
  std::vector<Digest> siblings;
};

Digest fold_siblings(const Frame& f) {
  Digest sum{0, 0};
  for (const Digest& s : f.siblings) {
    sum.hi += s.hi;
    sum.lo += s.lo;
  }
  return mix(mix(f.outer, sum.lo), sum.hi);
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    for (size_t i = 0; i < sizeof(T); ++i) {
      bytes.push_back(static_cast<uint8_t>(static_cast<uint64_t>(v) >> (8 * i)));
    }
  }
  std::vector<uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> b) : b_(b) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > b_.size()) throw SnapshotError("corrupt snapshot payload: truncated");
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const uint8_t> b_;
  size_t pos_ = 0;
};

constexpr char kMagic[4] = {'S', 'P', 'Q', 'C'};

uint32_t checksum(std::span<const uint8_t> payload) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<uint32_t>(
      crc32(crc, payload.data(), static_cast<uInt>(payload.size())));
}

}  // namespace

std::string Digest::hex() const {
  static const char* digits = "0123456789abcdef";
  std::string out(32, '0');
  for (int i = 0; i < 16; ++i) {
    out[15 - i] = digits[(hi >> (4 * i)) & 0xf];
    out[31 - i] = digits[(lo >> (4 * i)) & 0xf];
  }
  return out;
}

std::vector<BlockHash> block_hashes(std::span<const Token> tokens, uint32_t block_size) {
  if (block_size == 0) throw HashError("block size must be >= 1");
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].special() && i % block_size != 0) {
      throw HashError("span boundary at index " + std::to_string(i) +
                      " is not block-aligned");
    }
  }
  std::vector<BlockHash> out;
  out.reserve((tokens.size() + block_size - 1) / block_size);
  std::vector<Frame> stack;
  Digest acc = kSeed;
  for (size_t start = 0; start < tokens.size(); start += block_size) {
    const Token& first = tokens[start];
    switch (first.kind) {
      case TokenKind::Open:
        stack.push_back({acc, {}});
        acc = kSeed;
        break;
      case TokenKind::Sep:
        if (stack.empty()) throw HashError("unbalanced span tokens: separator outside a region");
        stack.back().siblings.push_back(acc);
        acc = kSeed;
        break;
      case TokenKind::Close:
        if (stack.empty()) throw HashError("unbalanced span tokens: close without open");
        stack.back().siblings.push_back(acc);
        acc = fold_siblings(stack.back());
        stack.pop_back();
        break;
      default:
        break;
    }
    size_t end = std::min(tokens.size(), start + block_size);
    Digest d = mix(acc, kBlockTag);
    for (size_t i = start; i < end; ++i) d = mix(d, normalized(tokens[i]));
    acc = d;
    out.push_back({d, !stack.empty(), static_cast<uint32_t>(end - start)});
  }
  return out;
}

std::string CacheStats::to_json(bool pretty) const {
  nlohmann::ordered_json j;
  j["lookups"] = lookups;
  j["hit_blocks"] = hit_blocks;
  j["miss_blocks"] = miss_blocks;
  j["hit_tokens"] = hit_tokens;
  j["input_tokens"] = input_tokens;
  j["evictions"] = evictions;
  j["hit_rate"] = hit_rate();
  return j.dump(pretty ? 2 : -1);
}

size_t LookupResult::repositioned_blocks() const {
  size_t n = 0;
  for (size_t i = 0; i < physical.size(); ++i) {
    if (duplicated[i] || cached_positions[i] != required_positions[i]) ++n;
  }
  return n;
}

CacheState::CacheState(uint32_t capacity, uint32_t block_size)
    : capacity_(capacity), block_size_(block_size) {
  if (capacity == 0) throw std::invalid_argument("cache capacity must be >= 1");
  if (block_size == 0) throw std::invalid_argument("block size must be >= 1");
  for (uint32_t i = 0; i < capacity; ++i) free_.insert(free_.end(), i);
}

void CacheState::touch(uint32_t phys) {
  Replica& r = replicas_.at(phys);
  lru_.erase({r.tick, phys});
  r.tick = ++tick_;
  lru_.insert({r.tick, phys});
}

void CacheState::erase(uint32_t phys) {
  auto it = replicas_.find(phys);
  auto& list = by_digest_[it->second.digest];
  list.erase(std::find(list.begin(), list.end(), phys));
  if (list.empty()) by_digest_.erase(it->second.digest);
  lru_.erase({it->second.tick, phys});
  replicas_.erase(it);
  free_.insert(phys);
}

bool CacheState::make_room(const std::set<uint32_t>& pinned, std::optional<uint32_t> also) {
  for (const auto& [tick, phys] : lru_) {
    if (pinned.count(phys) || phys == also) continue;
    erase(phys);
    ++stats_.evictions;
    return true;
  }
  return false;
}

uint32_t CacheState::place(const Digest& d, uint64_t position, bool context_free) {
  uint32_t phys = *free_.begin();
  free_.erase(free_.begin());
  replicas_[phys] = {d, position, 0, context_free};
  auto& list = by_digest_[d];
  list.insert(std::upper_bound(list.begin(), list.end(), phys), phys);
  touch(phys);
  return phys;
}

LookupResult CacheState::lookup(std::span<const BlockHash> hashes, uint64_t base_position) {
  LookupResult r;
  for (const auto& h : hashes) r.input_tokens += h.size;
  ++stats_.lookups;
  stats_.input_tokens += r.input_tokens;

  std::set<uint32_t> claimed;
  for (size_t i = 0; i < hashes.size(); ++i) {
    const BlockHash& h = hashes[i];
    ++r.blocks_scanned;
    if (!h.full(block_size_)) break;
    auto it = by_digest_.find(h.digest);
    if (it == by_digest_.end()) break;
    const uint64_t want = base_position + i * block_size_;

    std::optional<uint32_t> exact, other;
    for (uint32_t phys : it->second) {
      if (claimed.count(phys)) continue;
      if (replicas_.at(phys).position == want) {
        exact = phys;
        break;
      }
      if (!other) other = phys;
    }
    std::optional<uint32_t> pick = exact;
    uint64_t cached_at = want;
    bool dup = false;
    if (!exact) {
      // Keep existing positional copies when there is room for another;
      // otherwise move an idle replica.
      const uint32_t source = other.value_or(it->second.front());
      cached_at = replicas_.at(source).position;
      if (free_.empty() && other) {
        pick = other;
        replicas_.at(*other).position = want;
      } else if (!free_.empty() || make_room(claimed, source)) {  // keep the copy source
        pick = place(h.digest, want, h.context_free);
        dup = true;
      } else {
        break;
      }
    }
    claimed.insert(*pick);
    touch(*pick);
    r.physical.push_back(*pick);
    r.cached_positions.push_back(cached_at);
    r.required_positions.push_back(want);
    r.duplicated.push_back(dup);
    ++r.hit_blocks;
    r.hit_tokens += h.size;
  }
  stats_.hit_blocks += r.hit_blocks;
  stats_.miss_blocks += hashes.size() - r.hit_blocks;
  stats_.hit_tokens += r.hit_tokens;
  return r;
}

size_t CacheState::insert(std::span<const BlockHash> hashes, uint64_t base_position) {
  size_t inserted = 0;
  for (size_t i = 0; i < hashes.size(); ++i) {
    const BlockHash& h = hashes[i];
    if (!h.full(block_size_)) continue;
    const uint64_t pos = base_position + i * block_size_;
    if (auto it = by_digest_.find(h.digest); it != by_digest_.end()) {
      uint32_t pick = it->second.front();
      for (uint32_t phys : it->second) {
        if (replicas_.at(phys).position == pos) pick = phys;
      }
      touch(pick);
      continue;
    }
    if (free_.empty()) make_room({});
    place(h.digest, pos, h.context_free);
    ++inserted;
  }
  return inserted;
}

std::vector<uint8_t> CacheState::snapshot() const {
  Writer p;
  p.put<uint32_t>(capacity_);
  p.put<uint32_t>(block_size_);
  p.put<uint64_t>(tick_);
  for (uint64_t v : {stats_.lookups, stats_.hit_blocks, stats_.miss_blocks, stats_.hit_tokens,
                     stats_.input_tokens, stats_.evictions}) {
    p.put<uint64_t>(v);
  }
  p.put<uint32_t>(static_cast<uint32_t>(replicas_.size()));
  for (const auto& [phys, r] : replicas_) {
    p.put<uint32_t>(phys);
    p.put<uint64_t>(r.digest.hi);
    p.put<uint64_t>(r.digest.lo);
    p.put<uint64_t>(r.position);
    p.put<uint64_t>(r.tick);
    p.put<uint8_t>(r.context_free ? 1 : 0);
  }

  Writer out;
  out.bytes.assign(kMagic, kMagic + 4);
  out.put<uint32_t>(kSnapshotVersion);
  out.put<uint64_t>(p.bytes.size());
  out.bytes.insert(out.bytes.end(), p.bytes.begin(), p.bytes.end());
  out.put<uint32_t>(checksum(p.bytes));
  return out.bytes;
}

CacheState CacheState::restore(std::span<const uint8_t> bytes) {
  if (bytes.size() < 16) throw SnapshotError("snapshot too short for its header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw SnapshotError("not a cache snapshot");
  Reader header(bytes.subspan(4, 12));
  auto version = header.get<uint32_t>();
  if (version != kSnapshotVersion) {
    throw SnapshotError("snapshot version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kSnapshotVersion) + ")");
  }
  auto length = header.get<uint64_t>();
  if (bytes.size() != 16 + length + 4) {
    throw SnapshotError("corrupt snapshot payload: checksum mismatch (length)");
  }
  auto payload = bytes.subspan(16, length);
  Reader tail(bytes.subspan(16 + length, 4));
  if (tail.get<uint32_t>() != checksum(payload)) {
    throw SnapshotError("corrupt snapshot payload: checksum mismatch");
  }

  Reader p(payload);
  auto capacity = p.get<uint32_t>();
  auto block_size = p.get<uint32_t>();
  if (capacity == 0 || block_size == 0) throw SnapshotError("corrupt snapshot: bad geometry");
  CacheState s(capacity, block_size);
  s.tick_ = p.get<uint64_t>();
  for (uint64_t* v : {&s.stats_.lookups, &s.stats_.hit_blocks, &s.stats_.miss_blocks,
                      &s.stats_.hit_tokens, &s.stats_.input_tokens, &s.stats_.evictions}) {
    *v = p.get<uint64_t>();
  }
  auto count = p.get<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    auto phys = p.get<uint32_t>();
    Replica r;
    r.digest.hi = p.get<uint64_t>();
    r.digest.lo = p.get<uint64_t>();
    r.position = p.get<uint64_t>();
    r.tick = p.get<uint64_t>();
    r.context_free = p.get<uint8_t>() != 0;
    if (phys >= capacity || !s.free_.count(phys)) throw SnapshotError("corrupt snapshot: bad block id");
    s.free_.erase(phys);
    s.replicas_[phys] = r;
    s.by_digest_[r.digest].push_back(phys);  // ascending: replicas are stored in id order
    s.lru_.insert({r.tick, phys});
  }
  if (!p.done()) throw SnapshotError("corrupt snapshot: trailing payload bytes");
  return s;
}

bool CacheState::operator==(const CacheState& other) const {
  return capacity_ == other.capacity_ && block_size_ == other.block_size_ &&
         tick_ == other.tick_ && replicas_ == other.replicas_ && stats_ == other.stats_;
}

}  // namespace spanq
