// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "spanq/cidra.hpp"

namespace spanq {

double RopeParams::theta(uint32_t i) const {
  return std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
}

void RopeParams::check() const {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw DimensionError("rotary head dimension must be even and positive, got " +
                         std::to_string(head_dim));
  }
  if (!(base > 0.0)) throw DimensionError("rotary base must be positive");
}

namespace {

void check_size(size_t n, const RopeParams& params) {
  params.check();
  if (n != params.head_dim) {
    throw DimensionError("vector has " + std::to_string(n) + " elements, rotary head dimension is " +
                         std::to_string(params.head_dim));
  }
}

struct Rotation {
  std::vector<double> cos, sin;

  Rotation(int64_t steps, const RopeParams& params) {
    const auto p = static_cast<double>(steps);
    for (uint32_t i = 0; i < params.head_dim / 2; ++i) {
      cos.push_back(std::cos(p * params.theta(i)));
      sin.push_back(std::sin(p * params.theta(i)));
    }
  }

  void apply(std::span<double> x) const {
    for (size_t i = 0; i < cos.size(); ++i) {
      const double x0 = x[2 * i];
      const double x1 = x[2 * i + 1];
      x[2 * i] = x0 * cos[i] - x1 * sin[i];
      x[2 * i + 1] = x0 * sin[i] + x1 * cos[i];
    }
  }
};

void rotate(std::span<double> x, int64_t steps, const RopeParams& params) {
  if (steps != 0) Rotation(steps, params).apply(x);
}

}  // namespace

std::vector<double> rope_apply(std::span<const double> x, int64_t pos, const RopeParams& params) {
  check_size(x.size(), params);
  std::vector<double> out(x.begin(), x.end());
  rotate(out, pos, params);
  return out;
}

std::vector<double> rerope(std::span<const double> x, int64_t old_pos, int64_t new_pos,
                           const RopeParams& params) {
  check_size(x.size(), params);
  std::vector<double> out(x.begin(), x.end());
  rotate(out, new_pos - old_pos, params);
  return out;
}

void rotate_rows(std::span<double> rows, int64_t delta, const RopeParams& params) {
  params.check();
  if (rows.size() % params.head_dim != 0) {
    throw DimensionError("row buffer is not a multiple of the rotary head dimension");
  }
  if (delta == 0) return;
  const Rotation r(delta, params);
  for (size_t off = 0; off < rows.size(); off += params.head_dim) {
    r.apply(rows.subspan(off, params.head_dim));
  }
}

}  // namespace spanq
