// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "geocert/bounds.hpp"

namespace geocert {

/// Seeded generator with a platform-independent uniform mapping (the standard
/// distributions are implementation-defined).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t next() { return gen_(); }

    /// Uniform point of a box (degenerate dimensions return their single value).
    Eigen::VectorXd in_box(const Box& b) {
        Eigen::VectorXd x(static_cast<Eigen::Index>(b.size()));
        for (std::size_t i = 0; i < b.size(); ++i) {
            x[static_cast<Eigen::Index>(i)] = b[i].degenerate() ? b[i].lo : std::min(uniform(b[i].lo, b[i].hi), b[i].hi);
        }
        return x;
    }

  private:
    std::mt19937_64 gen_;
};

/// Derives independent per-item seeds from a base seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace geocert
