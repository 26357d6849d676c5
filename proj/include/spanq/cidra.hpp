// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spanq {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RopeParams {
  uint32_t head_dim = 64;
  double base = 10000.0;

  /// Frequency of pair i: base^(-2i/d).
  double theta(uint32_t i) const;
  void check() const;  // throws DimensionError for odd/zero d or base <= 0
};

/// Rotates each pair (x[2i], x[2i+1]) by angle pos * theta_i.
std::vector<double> rope_apply(std::span<const double> x, int64_t pos, const RopeParams& params);

/// Moves a vector encoded at `old_pos` to `new_pos`: undo then redo the
/// rotation, computed as one rotation by the difference.
std::vector<double> rerope(std::span<const double> x, int64_t old_pos, int64_t new_pos,
                           const RopeParams& params);

/// In-place rotation of every head_dim-sized row of `rows` by delta.
void rotate_rows(std::span<double> rows, int64_t delta, const RopeParams& params);

struct KvGeometry {
  uint32_t block_size = 16;
  uint32_t head_dim = 64;
  uint32_t layers = 2;

  size_t row_count() const { return static_cast<size_t>(block_size); }
  size_t plane() const { return static_cast<size_t>(block_size) * head_dim; }
  // keys and values for every layer
  size_t block_stride() const { return plane() * layers * 2; }
};

class KvStoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Synthetic stand-in for paged KV memory. Every slot holds one block:
/// for each layer, block_size key rows (stored rotary-encoded at the
/// slot's position) and block_size value rows (position-free).
class KvStore {
 public:
  KvStore(uint32_t slots, KvGeometry geometry, uint32_t scratch_budget = 1);

  uint32_t slots() const { return static_cast<uint32_t>(live_.size()); }
  const KvGeometry& geometry() const { return geo_; }
  uint32_t scratch_budget() const { return scratch_budget_; }

  bool live(uint32_t slot) const { return live_.at(slot) != 0; }
  int64_t position(uint32_t slot) const { return pos_.at(slot); }
  size_t free_count() const;

  /// Fills `slot` with vectors drawn from a stream seeded by (key, layer)
  /// and encodes the keys for token positions starting at `position`.
  void fill(uint32_t slot, uint64_t key, int64_t position, const RopeParams& params);
  void release(uint32_t slot);

  std::span<double> block(uint32_t slot);
  std::span<const double> block(uint32_t slot) const;
  std::span<double> keys(uint32_t slot, uint32_t layer);
  std::span<const double> keys(uint32_t slot, uint32_t layer) const;
  std::span<double> values(uint32_t slot, uint32_t layer);

  /// Writes `src` (a whole block) into `dst`, re-encoding its keys by delta.
  void copy_block(std::span<const double> src, uint32_t dst, int64_t src_pos, int64_t delta,
                  const RopeParams& params);
  void set_live(uint32_t slot, int64_t position);

 private:
  KvGeometry geo_;
  uint32_t scratch_budget_;
  std::vector<double> data_;
  std::vector<uint8_t> live_;  // bytes, so workers may touch distinct slots
  std::vector<int64_t> pos_;
};

/// Largest elementwise difference between two stores of equal geometry;
/// infinity when liveness or positions differ.
double max_abs_diff(const KvStore& a, const KvStore& b);

struct MoveRequest {
  uint32_t block = 0;     // source slot
  int64_t position = 0;   // required position of the block's first token
  uint32_t query = 0;     // requesting query
  std::optional<uint32_t> dest;  // target slot; default: in place
};

struct MoveEdge {
  uint32_t from = 0;
  uint32_t to = 0;
  int64_t delta = 0;
  bool operator==(const MoveEdge&) const = default;
};

struct Duplication {
  uint32_t source = 0;
  uint32_t slot = 0;
  int64_t delta = 0;
  uint32_t query = 0;
};

enum class ComponentKind { Rotate, Chain, Cycle };

struct MoveComponent {
  ComponentKind kind = ComponentKind::Chain;
  std::vector<MoveEdge> edges;  // in execution order
};

struct MovePlan {
  std::vector<uint32_t> nodes;          // slots touched by any edge
  std::vector<MoveEdge> raw_edges;      // deduplicated demands, before resolution
  std::vector<Duplication> duplications;
  std::vector<MoveComponent> components;
  std::vector<std::vector<size_t>> batches;  // component indices
  std::vector<size_t> fallback;              // components larger than a batch
  std::vector<uint32_t> vacated;             // sources left empty afterwards
  uint32_t batch_size = 64;

  size_t move_count() const;
  size_t cycle_count() const;
  /// Most cycles any single batch runs at once (1 for the fallback path).
  size_t max_concurrent_cycles() const;
  std::string to_json(bool pretty = true) const;
};

class PlanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PlanOptions {
  uint32_t batch_size = 64;
};

/// Builds the strict permutation graph for a set of repositioning demands.
/// Identical demands are merged. Per block the lowest query id keeps the
/// original content; every other distinct demand is served by a duplicate
/// in a fresh slot. Throws PlanError when no free slot remains, when two
/// demands target one slot, or when a target holds content that stays.
MovePlan plan_moves(std::span<const MoveRequest> requests, const KvStore& store,
                    const PlanOptions& options = {});

struct ExecStats {
  uint64_t moved_tokens = 0;
  uint32_t duplicated_blocks = 0;
  uint32_t scratch_peak = 0;
  uint32_t batches = 0;
  uint32_t fallback = 0;
};

struct ExecOptions {
  uint32_t workers = 1;  // parallel workers per batch
};

/// Applies a plan in place: duplications first (from untouched sources),
/// then each batch, then the fallback components sequentially. Chains run
/// from their terminal end; a cycle parks one block in scratch.
ExecStats execute_plan(const MovePlan& plan, KvStore& store, const RopeParams& params,
                       const ExecOptions& options = {});

/// Reference result computed from a pristine copy: every destination gets
/// its source re-encoded directly. Slot allocation matches plan_moves.
KvStore oracle_reposition(std::span<const MoveRequest> requests, const KvStore& store,
                          const RopeParams& params);

struct CidraInstance {
  KvStore store;
  std::vector<MoveRequest> requests;
};

/// Random instance: a shuffled placement of `blocks` live blocks, some
/// moved into free slots (chains), and with probability `conflict_rate`
/// per block an extra demand from another query.
CidraInstance random_instance(uint32_t blocks, uint32_t queries, double conflict_rate,
                              uint64_t seed, KvGeometry geometry, const RopeParams& params);

}  // namespace spanq
