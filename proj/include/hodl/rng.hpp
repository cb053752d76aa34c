#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "hodl/linalg.hpp"

namespace hodl {

/// Seeded random stream used by problem generators and samplers.
///
/// Gaussians are produced by an explicit Box-Muller transform on top of
/// mt19937_64 so that generated data is bit-identical across standard
/// library implementations (std::normal_distribution is not pinned down
/// by the standard).
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : gen_(seed) {}

  /// Uniform double in [0, 1).
  double uniform() {
    // 53 random bits, as in std::generate_canonical but fixed.
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  /// Standard normal draw. Consumes two uniforms per call.
  double gaussian() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) { return gen_() % n; }

  bool bernoulli(double p) { return uniform() < p; }

  Vector gaussian_vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = gaussian();
    return v;
  }

  Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = gaussian();
    return m;
  }

  /// Fisher-Yates shuffle of the indices 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(uniform_index(static_cast<std::uint64_t>(i) + 1));
      std::swap(idx[i], idx[j]);
    }
    return idx;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace hodl
