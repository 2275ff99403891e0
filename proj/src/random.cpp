#include "flashattn/random.hpp"

#include <cmath>
#include <numbers>

namespace flashattn {

double NormalSampler::uniform() {
  // 53 random mantissa bits, shifted off zero.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double NormalSampler::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Matrix random_normal(std::size_t rows, std::size_t cols, NormalSampler& rng, double scale) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = scale * rng.normal();
  return m;
}

Matrix random_normal(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale) {
  NormalSampler rng(seed);
  return random_normal(rows, cols, rng, scale);
}

}  // namespace flashattn
