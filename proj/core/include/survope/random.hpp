#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace survope {

/// Seeded pseudo-random stream. Owned by exactly one consumer; movable but not
/// copyable so that two consumers can never silently replay the same draws.
class Rng {
 public:
  explicit Rng(std::mt19937_64 engine) : engine_(engine) {}

  Rng(const Rng&) = delete;
  Rng& operator=(const Rng&) = delete;
  Rng(Rng&&) noexcept = default;
  Rng& operator=(Rng&&) noexcept = default;

  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi);
  double normal();
  /// Exponential with mean 1.
  double exponential();
  /// Index drawn from an (unnormalized is fine) nonnegative weight vector.
  std::size_t categorical(std::span<const double> weights);
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Deterministic stream for (base_seed, stream_id). Distinct stream ids give
/// independent streams; the same pair always replays the same sequence.
Rng seeded_rng(std::uint64_t base_seed, std::uint64_t stream_id);

}  // namespace survope
