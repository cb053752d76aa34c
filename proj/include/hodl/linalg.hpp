#pragma once

#include <Eigen/Dense>
#include <limits>
#include <vector>

namespace hodl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

bool all_finite(const Vector& v);
bool all_finite(const Matrix& m);

/// Diagonal positive-definite metric G with eigenvalue bounds
/// lower_bound <= G_ii <= upper_bound. Defines the norm
/// |v|_G = sqrt(sum_i G_ii v_i^2) and the exact roots/inverses used by
/// the projection and preconditioning steps.
class Metric {
 public:
  Metric(Vector diag, double lower_bound, double upper_bound);

  static Metric identity(Eigen::Index n) { return Metric(Vector::Ones(n), 1.0, 1.0); }
  /// Uniform diagonal c*I.
  static Metric uniform(Eigen::Index n, double c) { return Metric(Vector::Constant(n, c), c, c); }

  Eigen::Index dim() const { return diag_.size(); }
  const Vector& diag() const { return diag_; }
  double lower_bound() const { return lower_bound_; }
  double upper_bound() const { return upper_bound_; }

  double norm_sq(const Vector& v) const;
  double norm(const Vector& v) const;

  Vector apply(const Vector& v) const { return diag_.cwiseProduct(v); }
  Vector inv_apply(const Vector& v) const { return v.cwiseQuotient(diag_); }
  Vector sqrt_apply(const Vector& v) const { return diag_.cwiseSqrt().cwiseProduct(v); }
  Vector inv_sqrt_apply(const Vector& v) const { return v.cwiseQuotient(diag_.cwiseSqrt()); }

  bool same_as(const Metric& other) const;

 private:
  Vector diag_;
  double lower_bound_;
  double upper_bound_;
};

/// Axis-aligned box, possibly unbounded per coordinate (+-inf entries).
class Box {
 public:
  Box() = default;
  Box(Vector lo, Vector hi);

  static Box unbounded(Eigen::Index n) {
    return Box(Vector::Constant(n, -kInf), Vector::Constant(n, kInf));
  }
  static Box uniform(Eigen::Index n, double lo, double hi) {
    return Box(Vector::Constant(n, lo), Vector::Constant(n, hi));
  }

  Eigen::Index dim() const { return lo_.size(); }
  const Vector& lo() const { return lo_; }
  const Vector& hi() const { return hi_; }

  bool is_unbounded() const;
  Vector project(const Vector& v) const;

  /// Smallest distance from v to any finite bound. Used to detect points
  /// where the projection is about to switch its active set.
  double min_gap(const Vector& v) const;

 private:
  Vector lo_, hi_;
};

/// |v|_G for diagonal G. Errors on dimension mismatch.
double g_norm(const Vector& v, const Metric& g);

/// Componentwise sign(v_i) * max(|v_i| - tau_i, 0). tau_i must be >= 0.
Vector soft_threshold(const Vector& v, const Vector& tau);
Vector soft_threshold(const Vector& v, double tau);

/// Largest-singular-value estimate by power iteration on m^T m, started
/// from the normalized all-ones vector. Returns 0 for the zero matrix.
double power_iteration_norm(const Matrix& m, int iters = 200, double tol = 1e-10);

/// G-metric projection onto an axis-aligned box. For diagonal G the
/// minimization separates per coordinate, so this is a componentwise clamp
/// independent of the diagonal values.
Vector project_box_g(const Vector& v, const Box& box, const Metric& g);

}  // namespace hodl
