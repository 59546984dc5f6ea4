#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "bsvd/linalg.hpp"

namespace bsvd {

/// Seeded random stream. Two sources built from the same (seed, stream)
/// pair and driven by the same call sequence produce identical variates.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  /// Independent source for worker `stream`, derived from this source's
  /// seed and stream id only (not from its current position).
  RandomSource split(std::uint64_t stream) const;

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  /// Gamma with the given shape and rate (mean shape / rate).
  double gamma(double shape, double rate);
  double beta(double a, double b);
  bool bernoulli(double p) { return uniform() < p; }

  /// Index drawn with probability proportional to exp(log_weights[i]).
  std::size_t categorical_log(const std::vector<double>& log_weights);

  Vector normal_vector(Eigen::Index n);
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// splitmix64 finalizer, used for seed derivation and hashing.
std::uint64_t mix64(std::uint64_t x);

}  // namespace bsvd
