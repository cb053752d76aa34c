#include "hodl/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace hodl {

bool all_finite(const Vector& v) { return v.allFinite(); }
bool all_finite(const Matrix& m) { return m.allFinite(); }

Metric::Metric(Vector diag, double lower_bound, double upper_bound)
    : diag_(std::move(diag)), lower_bound_(lower_bound), upper_bound_(upper_bound) {
  if (diag_.size() == 0) throw std::invalid_argument("Metric: empty diagonal");
  if (!(lower_bound_ > 0.0)) throw std::invalid_argument("Metric: lower bound must be positive");
  if (upper_bound_ < lower_bound_)
    throw std::invalid_argument("Metric: upper bound below lower bound");
  for (Eigen::Index i = 0; i < diag_.size(); ++i) {
    const double d = diag_[i];
    if (!std::isfinite(d) || d < lower_bound_ || d > upper_bound_)
      throw std::invalid_argument("Metric: diagonal entry outside [lower_bound, upper_bound]");
  }
}

double Metric::norm_sq(const Vector& v) const {
  if (v.size() != diag_.size()) throw std::invalid_argument("Metric::norm_sq: dimension mismatch");
  return diag_.cwiseProduct(v).dot(v);
}

double Metric::norm(const Vector& v) const { return std::sqrt(norm_sq(v)); }

bool Metric::same_as(const Metric& other) const {
  return diag_.size() == other.diag_.size() && diag_ == other.diag_;
}

Box::Box(Vector lo, Vector hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
  if (lo_.size() != hi_.size()) throw std::invalid_argument("Box: lo/hi size mismatch");
  for (Eigen::Index i = 0; i < lo_.size(); ++i) {
    if (std::isnan(lo_[i]) || std::isnan(hi_[i])) throw std::invalid_argument("Box: NaN bound");
    if (lo_[i] > hi_[i]) throw std::invalid_argument("Box: lo > hi");
  }
}

bool Box::is_unbounded() const {
  for (Eigen::Index i = 0; i < lo_.size(); ++i)
    if (std::isfinite(lo_[i]) || std::isfinite(hi_[i])) return false;
  return true;
}

Vector Box::project(const Vector& v) const {
  if (v.size() != lo_.size()) throw std::invalid_argument("Box::project: dimension mismatch");
  return v.cwiseMax(lo_).cwiseMin(hi_);
}

double Box::min_gap(const Vector& v) const {
  if (v.size() != lo_.size()) throw std::invalid_argument("Box::min_gap: dimension mismatch");
  double gap = kInf;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(lo_[i])) gap = std::min(gap, std::abs(v[i] - lo_[i]));
    if (std::isfinite(hi_[i])) gap = std::min(gap, std::abs(v[i] - hi_[i]));
  }
  return gap;
}

double g_norm(const Vector& v, const Metric& g) { return g.norm(v); }

Vector soft_threshold(const Vector& v, const Vector& tau) {
  if (v.size() != tau.size()) throw std::invalid_argument("soft_threshold: dimension mismatch");
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double t = tau[i];
    if (t < 0.0) throw std::invalid_argument("soft_threshold: negative threshold");
    const double a = std::abs(v[i]) - t;
    out[i] = a > 0.0 ? (v[i] > 0.0 ? a : -a) : 0.0;
  }
  return out;
}

Vector soft_threshold(const Vector& v, double tau) {
  return soft_threshold(v, Vector::Constant(v.size(), tau));
}

double power_iteration_norm(const Matrix& m, int iters, double tol) {
  if (iters < 1) throw std::invalid_argument("power_iteration_norm: iters must be >= 1");
  if (!(tol > 0.0)) throw std::invalid_argument("power_iteration_norm: tol must be positive");
  const Eigen::Index n = m.cols();
  if (n == 0 || m.rows() == 0) return 0.0;

  // Deterministic starts: normalized all-ones, then basis vectors if the
  // current start happens to lie in the null space of m^T m.
  for (Eigen::Index start = -1; start < n; ++start) {
    Vector v = start < 0 ? Vector(Vector::Ones(n) / std::sqrt(static_cast<double>(n)))
                         : Vector(Vector::Unit(n, start));
    double lambda = 0.0;  // Rayleigh quotient of m^T m
    for (int it = 0; it < iters; ++it) {
      Vector w = m.transpose() * (m * v);
      const double norm_w = w.norm();
      if (norm_w == 0.0) {
        if (it == 0) {
          lambda = -1.0;  // dead start, try the next one
          break;
        }
        return std::sqrt(std::max(lambda, 0.0));
      }
      const double lambda_next = v.dot(w);
      v = w / norm_w;
      if (it > 0 && std::abs(lambda_next - lambda) <= tol * std::max(1.0, std::abs(lambda_next))) {
        lambda = lambda_next;
        break;
      }
      lambda = lambda_next;
    }
    if (lambda >= 0.0) return std::sqrt(lambda);
  }
  return 0.0;  // every start annihilated: m == 0
}

Vector project_box_g(const Vector& v, const Box& box, const Metric& g) {
  if (v.size() != g.dim()) throw std::invalid_argument("project_box_g: metric dimension mismatch");
  return box.project(v);
}

}  // namespace hodl
