#pragma once

#include <cstdint>
#include <random>

#include "flashattn/matrix.hpp"

namespace flashattn {

/// Standard-normal sampler built only on std::mt19937_64 output bits, so a
/// seed yields the same stream with any standard library.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : engine_(seed) {}

  double uniform();  // in (0, 1)
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// rows x cols matrix of N(0, 1) draws multiplied by `scale`.
Matrix random_normal(std::size_t rows, std::size_t cols, NormalSampler& rng, double scale = 1.0);
Matrix random_normal(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0);

}  // namespace flashattn
