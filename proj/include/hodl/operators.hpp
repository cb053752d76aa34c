#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "hodl/linalg.hpp"
#include "hodl/params.hpp"

namespace hodl {

/// Cotangents of one operator application: with respect to the state input
/// and with respect to the full flat learning-variable vector.
struct OperatorVjp {
  Vector wrt_u;
  Vector wrt_w;
};

/// A parameterized map D(u, w) on R^dim together with the vector-Jacobian
/// products needed to differentiate through unrolled applications.
///
/// Implementations are immutable problem data; `apply` and `vjp` are pure.
/// The one exception is `refresh`, which recomputes cached spectral-norm
/// estimates after the learning variables change and must not run
/// concurrently with apply/vjp.
class ParamOperator {
 public:
  virtual ~ParamOperator() = default;

  virtual const char* kind() const = 0;
  virtual Eigen::Index dim() const = 0;
  virtual const Metric& metric() const = 0;

  virtual Vector apply(const Vector& u, const ParamVector& w) const = 0;
  virtual OperatorVjp vjp(const Vector& u, const ParamVector& w, const Vector& cotangent) const = 0;

  /// Advertised upper bound on the Lipschitz factor in the operator's norm.
  /// 1 means non-expansive is claimed but no stronger contraction.
  virtual double contraction_bound(const ParamVector& w) const {
    (void)w;
    return 1.0;
  }

  /// Recompute parameter-dependent caches (spectral norms). Called once per
  /// outer update, never inside an inner loop or a finite-difference sweep.
  virtual void refresh(const ParamVector& w) { (void)w; }

  /// Norm in which the operator's non-expansiveness is certified. Defaults
  /// to the diagonal metric norm; stacked primal-dual operators override it
  /// with their exact energy norm.
  virtual double state_norm(const Vector& v) const { return metric().norm(v); }

  /// Distance of this application to the nearest derivative kink
  /// (soft-threshold boundary, ReLU zero crossing). +inf for smooth maps.
  virtual double kink_gap(const Vector& u, const ParamVector& w) const {
    (void)u;
    (void)w;
    return kInf;
  }
};

/// Krasnoselskii-Mann averaging of an inner operator:
/// T(u, w) = u + alpha * (D(u, w) - u), alpha in (0, 1).
/// Fix(T) == Fix(D), and T inherits D's non-expansiveness.
class KmOperator {
 public:
  KmOperator(std::shared_ptr<ParamOperator> inner, double alpha);

  const ParamOperator& inner() const { return *inner_; }
  ParamOperator& inner_mut() { return *inner_; }
  double alpha() const { return alpha_; }
  Eigen::Index dim() const { return inner_->dim(); }
  const Metric& metric() const { return inner_->metric(); }

  Vector apply(const Vector& u, const ParamVector& w) const;
  OperatorVjp vjp(const Vector& u, const ParamVector& w, const Vector& cotangent) const;
  double contraction_bound(const ParamVector& w) const {
    return 1.0 - alpha_ + alpha_ * inner_->contraction_bound(w);
  }
  void refresh(const ParamVector& w) const { inner_->refresh(w); }
  double kink_gap(const Vector& u, const ParamVector& w) const { return inner_->kink_gap(u, w); }

 private:
  std::shared_ptr<ParamOperator> inner_;
  double alpha_;
};

Vector km_apply(const KmOperator& t, const Vector& u, const ParamVector& w);

/// D(u) = u.
class IdentityOperator final : public ParamOperator {
 public:
  explicit IdentityOperator(Metric g) : g_(std::move(g)) {}
  const char* kind() const override { return "identity"; }
  Eigen::Index dim() const override { return g_.dim(); }
  const Metric& metric() const override { return g_; }
  Vector apply(const Vector& u, const ParamVector&) const override;
  OperatorVjp vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override;

 private:
  Metric g_;
};

/// D(u) = value, a constant map. Its unique fixed point is the value itself.
class ConstantOperator final : public ParamOperator {
 public:
  ConstantOperator(Vector value, Metric g);
  const char* kind() const override { return "constant"; }
  Eigen::Index dim() const override { return g_.dim(); }
  const Metric& metric() const override { return g_; }
  Vector apply(const Vector& u, const ParamVector&) const override;
  OperatorVjp vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override;
  double contraction_bound(const ParamVector&) const override { return 0.0; }

 private:
  Vector value_;
  Metric g_;
};

/// D(u) = factor * u. Contractive for |factor| < 1.
class ScalingOperator final : public ParamOperator {
 public:
  ScalingOperator(double factor, Metric g) : factor_(factor), g_(std::move(g)) {}
  const char* kind() const override { return "scaling"; }
  Eigen::Index dim() const override { return g_.dim(); }
  const Metric& metric() const override { return g_; }
  Vector apply(const Vector& u, const ParamVector&) const override;
  OperatorVjp vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override;
  double contraction_bound(const ParamVector&) const override { return std::abs(factor_); }

 private:
  double factor_;
  Metric g_;
};

/// Proximal-gradient step for the least-squares-plus-weighted-l1 objective
///   f(u) = 1/2 sum_j |Q u_j - b_j|^2,   g(u, w) = kappa |u|_1,
/// over `samples` stacked coefficient vectors sharing the dictionary Q.
/// The step solves
///   argmin_u f(u_k) + <grad f(u_k), u - u_k> + g(u, w) + 1/(2 gamma) |u - u_k|^2_G
/// in closed form: a preconditioned gradient step followed by a soft
/// threshold with per-coordinate threshold gamma * kappa / G_ii.
///
/// kappa and gamma can each be either fixed constants or learnable scalars
/// living in the flat parameter vector.
class PgOperator final : public ParamOperator {
 public:
  struct Options {
    double kappa = 0.1;
    double gamma = 0.0;  // 0 = choose 1 / lambda_max(Q^T Q) at construction
    std::shared_ptr<ParamSegment> kappa_slot;  // overrides the constant when set
    std::shared_ptr<ParamSegment> gamma_slot;
  };

  PgOperator(Matrix q, Matrix b, Metric g, Options opts);

  const char* kind() const override { return "pg"; }
  Eigen::Index dim() const override { return n_ * samples_; }
  const Metric& metric() const override { return g_; }
  Vector apply(const Vector& u, const ParamVector& w) const override;
  OperatorVjp vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override;
  double contraction_bound(const ParamVector& w) const override;
  double kink_gap(const Vector& u, const ParamVector& w) const override;

  double kappa(const ParamVector& w) const;
  double gamma(const ParamVector& w) const;
  double gram_lambda_max() const { return lambda_max_; }
  double gram_lambda_min() const { return lambda_min_; }
  const Matrix& q() const { return q_; }
  const Matrix& b() const { return b_; }

 private:
  Vector pre_threshold(const Vector& u, const ParamVector& w, Matrix* grad_out) const;

  Matrix q_;        // m x n dictionary
  Matrix b_;        // m x samples targets
  Metric g_;        // diagonal metric on the stacked state
  Options opts_;
  Eigen::Index n_, samples_;
  double lambda_max_, lambda_min_;  // eigenvalue range of Q^T Q
};

/// Linearized augmented-Lagrangian step for the equality-constrained
/// weighted-l1 problem
///   min_x  tau . |x|   s.t.  A x = y,   A = [Q  I],  x = (u, u_n),
/// on the stacked state z = (x, lambda), with `samples` columns sharing Q.
/// With the proximal metric sigma I - beta A^T A (sigma > beta |A|^2) the
/// primal update is an exact soft threshold:
///   x+      = ST(x - (A^T lambda + beta A^T (A x - y)) / sigma, tau / sigma)
///   lambda+ = lambda + beta (A x+ - y).
/// The iteration is firmly non-expansive in the energy norm
///   |z|^2_M = sigma |x|^2 - beta |A x|^2 + |lambda|^2 / beta,
/// which `state_norm` evaluates exactly.
class LalmOperator final : public ParamOperator {
 public:
  struct Options {
    double kappa = 1.0;
    std::shared_ptr<ParamSegment> kappa_slot;
    double beta = 1.0;
    double sigma = 0.0;  // 0 = 1.5 * beta * |A|^2 at construction
  };

  LalmOperator(Matrix q, Matrix b, Options opts);

  const char* kind() const override { return "lalm"; }
  Eigen::Index dim() const override { return (n_ + 2 * m_) * samples_; }
  const Metric& metric() const override { return g_; }
  Vector apply(const Vector& u, const ParamVector& w) const override;
  OperatorVjp vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override;
  double state_norm(const Vector& v) const override;
  double kink_gap(const Vector& u, const ParamVector& w) const override;

  double kappa(const ParamVector& w) const;
  double beta() const { return opts_.beta; }
  double sigma() const { return opts_.sigma; }
  double a_norm_sq() const { return a_norm_sq_; }
  /// Metric floor min(sigma - beta |A|^2, 1/beta) as a uniform diagonal.
  Metric lower_metric() const;

  Eigen::Index code_dim() const { return n_; }
  Eigen::Index data_dim() const { return m_; }
  Eigen::Index samples() const { return samples_; }

 private:
  struct Blocks;  // column views of (u, u_n, lambda)

  Matrix q_;  // m x n
  Matrix b_;  // m x samples
  Options opts_;
  Eigen::Index n_, m_, samples_;
  double a_norm_sq_;  // |A|^2 = |Q|^2 + 1
  Metric g_;          // diagonal surrogate (sigma on primal, 1/beta on dual)
};

/// Gradient of the lower-level objective f(u; w), with the second-order
/// products needed to differentiate a gradient step.
class LowerObjective {
 public:
  virtual ~LowerObjective() = default;
  virtual const char* kind() const = 0;
  virtual Eigen::Index dim() const = 0;
  virtual double value(const Vector& u, const ParamVector& w) const = 0;
  virtual Vector grad(const Vector& u, const ParamVector& w) const = 0;
  /// VJP of (u, w) -> grad(u, w): returns (H^T c, C^T c) for Hessian H and
  /// mixed derivative C = d grad / d w.
  virtual OperatorVjp grad_vjp(const Vector& u, const ParamVector& w, const Vector& cot) const = 0;
  /// Uniform-in-w eigenvalue range of the Hessian.
  virtual double hessian_min() const = 0;
  virtual double hessian_max() const = 0;
};

/// f(u; w) = 1/2 u^T H u - omega^T u with SPD H; grad f = H u - omega.
/// The linear coefficient omega is the learnable part.
class QuadraticObjective final : public LowerObjective {
 public:
  QuadraticObjective(Matrix h, ParamSegment omega_slot);
  const char* kind() const override { return "quadratic"; }
  Eigen::Index dim() const override { return h_.rows(); }
  double value(const Vector& u, const ParamVector& w) const override;
  Vector grad(const Vector& u, const ParamVector& w) const override;
  OperatorVjp grad_vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override;
  double hessian_min() const override { return h_min_; }
  double hessian_max() const override { return h_max_; }
  const Matrix& h() const { return h_; }

 private:
  Matrix h_;
  ParamSegment omega_slot_;
  double h_min_, h_max_;
};

/// Sample-weighted ridge regression
///   f(u; w) = 1/n sum_i sigmoid(w_i) (x_i^T u - y_i)^2 + ridge |u|^2,
/// the lower level of the data-cleaning task. Strongly convex uniformly in
/// w because sigmoid(w_i) <= 1 and ridge > 0.
class WeightedRidgeObjective final : public LowerObjective {
 public:
  WeightedRidgeObjective(Matrix x, Vector y, double ridge, ParamSegment logit_slot);
  const char* kind() const override { return "weighted_ridge"; }
  Eigen::Index dim() const override { return x_.cols(); }
  double value(const Vector& u, const ParamVector& w) const override;
  Vector grad(const Vector& u, const ParamVector& w) const override;
  OperatorVjp grad_vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override;
  double hessian_min() const override { return 2.0 * ridge_; }
  double hessian_max() const override { return h_max_; }

 private:
  Vector weights(const ParamVector& w) const;

  Matrix x_;  // n_train x d
  Vector y_;
  double ridge_;
  ParamSegment logit_slot_;
  double h_max_;
};

/// Explicit-step gradient descent D(u) = u - eta * grad f(u; w).
/// Contractive with factor max_i |1 - eta lambda_i(H)| when f has a
/// uniformly bounded Hessian spectrum.
class GdOperator final : public ParamOperator {
 public:
  GdOperator(std::shared_ptr<LowerObjective> objective, double eta, Metric g);

  const char* kind() const override { return "gd"; }
  Eigen::Index dim() const override { return g_.dim(); }
  const Metric& metric() const override { return g_; }
  Vector apply(const Vector& u, const ParamVector& w) const override;
  OperatorVjp vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override;
  double contraction_bound(const ParamVector&) const override { return rho_; }

  double eta() const { return eta_; }
  const LowerObjective& objective() const { return *objective_; }

 private:
  std::shared_ptr<LowerObjective> objective_;
  double eta_;
  Metric g_;
  double rho_;
};

/// Fully connected ReLU network conjugated by the metric square roots:
///   D(u) = G^{-1/2} N(G^{1/2} u),   N = relu(W_L . + b_L) o ... o relu(W_1 . + b_1),
/// all layers square of width `width`, applied independently to each of the
/// `samples` stacked blocks. Each weight matrix is divided by
/// max(1, spectral-norm estimate) before use, so N is 1-Lipschitz and the
/// conjugated map is 1-Lipschitz in the G norm. The estimates are frozen
/// between `refresh` calls and are treated as constants by `vjp`.
class NetOperator final : public ParamOperator {
 public:
  struct Options {
    bool normalize = true;
  };

  NetOperator(Eigen::Index width, Eigen::Index n_layers, Eigen::Index samples, Metric g,
              std::vector<ParamSegment> weight_slots, std::vector<ParamSegment> bias_slots,
              Options opts);
  NetOperator(Eigen::Index width, Eigen::Index n_layers, Eigen::Index samples, Metric g,
              std::vector<ParamSegment> weight_slots, std::vector<ParamSegment> bias_slots);

  const char* kind() const override { return "net"; }
  Eigen::Index dim() const override { return width_ * samples_; }
  const Metric& metric() const override { return g_; }
  Vector apply(const Vector& u, const ParamVector& w) const override;
  OperatorVjp vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override;
  void refresh(const ParamVector& w) override;
  double kink_gap(const Vector& u, const ParamVector& w) const override;

  Eigen::Index n_layers() const { return n_layers_; }
  bool normalized() const { return opts_.normalize; }
  const std::vector<double>& weight_norms() const { return norms_; }

 private:
  Matrix weight(const ParamVector& w, Eigen::Index layer) const;
  Vector bias(const ParamVector& w, Eigen::Index layer) const;
  double divisor(Eigen::Index layer) const;
  Matrix forward(const Matrix& x0, const ParamVector& w, std::vector<Matrix>* pre,
                 std::vector<Matrix>* post) const;

  Eigen::Index width_, n_layers_, samples_;
  Metric g_;
  std::vector<ParamSegment> w_slots_, b_slots_;
  Options opts_;
  Vector g_sqrt_, g_inv_sqrt_;  // per-block diagonal roots
  std::vector<double> norms_;   // refreshed spectral-norm estimates
};

/// Composition outer(inner(u, w), w). Both operators must share the metric.
class ComposedOperator final : public ParamOperator {
 public:
  ComposedOperator(std::shared_ptr<ParamOperator> outer, std::shared_ptr<ParamOperator> inner);

  const char* kind() const override { return "composed"; }
  Eigen::Index dim() const override { return inner_->dim(); }
  const Metric& metric() const override { return inner_->metric(); }
  Vector apply(const Vector& u, const ParamVector& w) const override;
  OperatorVjp vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override;
  double contraction_bound(const ParamVector& w) const override {
    return outer_->contraction_bound(w) * inner_->contraction_bound(w);
  }
  void refresh(const ParamVector& w) override;
  double kink_gap(const Vector& u, const ParamVector& w) const override;

  const ParamOperator& outer() const { return *outer_; }
  const ParamOperator& inner() const { return *inner_; }

 private:
  std::shared_ptr<ParamOperator> outer_, inner_;
};

Vector compose_apply(const ParamOperator& outer, const ParamOperator& inner, const Vector& u,
                     const ParamVector& w);

/// Empirical Lipschitz factor: max over `samples` seeded Gaussian pairs of
/// state_norm(D u1 - D u2) / state_norm(u1 - u2).
double estimate_lipschitz(const ParamOperator& op, const ParamVector& w, int samples,
                          std::uint64_t seed);

}  // namespace hodl
