#include "bsvd/random.hpp"

#include <cmath>
#include <limits>

#include "bsvd/special.hpp"

namespace bsvd {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

RandomSource::RandomSource(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(seeded_engine(seed, stream)) {}

RandomSource RandomSource::split(std::uint64_t stream) const {
  return RandomSource(mix64(seed_ ^ mix64(stream_)), stream);
}

double RandomSource::uniform() {
  // 53 random bits, shifted off zero.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double RandomSource::normal() { return normal_(engine_); }

double RandomSource::gamma(double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0))
    throw ArgumentError("gamma requires shape > 0 and rate > 0 (got " + std::to_string(shape) +
                        ", " + std::to_string(rate) + ")");
  std::gamma_distribution<double> g(shape, 1.0 / rate);
  return g(engine_);
}

double RandomSource::beta(double a, double b) {
  const double x = gamma(a, 1.0);
  const double y = gamma(b, 1.0);
  return x / (x + y);
}

std::size_t RandomSource::categorical_log(const std::vector<double>& log_weights) {
  const double total = log_sum_exp(log_weights);
  if (!std::isfinite(total))
    throw NumericalError("categorical draw with no finite positive weight");
  double u = uniform();
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    u -= std::exp(log_weights[i] - total);
    if (u <= 0.0) return i;
  }
  for (std::size_t i = log_weights.size(); i-- > 0;)
    if (log_weights[i] > -std::numeric_limits<double>::infinity()) return i;
  return log_weights.size() - 1;
}

Vector RandomSource::normal_vector(Eigen::Index n) {
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
  return z;
}

Matrix RandomSource::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix z(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) z(i, j) = normal();
  return z;
}

}  // namespace bsvd
