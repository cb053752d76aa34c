#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hodl/loss.hpp"
#include "hodl/operators.hpp"

namespace hodl {

/// Closed-form quantities of the quadratic oracle: lower level
/// f(u; w) = 1/2 u^T H u - w^T u, upper loss 1/2 |u - c|^2, so
/// u*(w) = H^{-1} w, phi(w) = 1/2 |H^{-1} w - c|^2 and argmin w* = H c.
struct QuadraticOracleInfo {
  Matrix h;
  Vector c;
  Vector omega_star;
  double eta = 0.0;         // inner gradient step
  double rho = 0.0;         // contraction factor of the inner D
  double safe_gamma = 0.0;  // lambda_min(H)^2 = 1 / lambda_max(Hessian of phi)

  Vector u_star(const Vector& omega) const;
  double phi(const Vector& omega) const;
  Vector grad_phi(const Vector& omega) const;
};

/// Analytic answers of the subspace case: D projects onto the leading
/// coordinates, so Fix(D) is the subspace and the constrained minimizer of
/// 1/2 |u - target|^2 is the truncation of the target.
struct SubspaceInfo {
  int subspace_dims = 0;
  Vector target;
  Vector solution;  // truncation of target

  Vector simplified_limit(const Vector& u0) const;  // truncation of u0
};

struct HypercleanInfo {
  std::vector<int> corrupt_indices;
  Vector planted_u;
  Matrix x_train;
  Vector y_train;
  Matrix x_val;
  Vector y_val;
  double noise = 0.0;
  ParamSegment logit_slot;

  /// Ordinary least squares on the uncorrupted training rows.
  Vector clean_ols() const;
};

struct SparseCodingInfo {
  Matrix q;
  Matrix b_train, codes_train;
  Matrix b_test, codes_test;
  double kappa0 = 0.0;
  double gamma0 = 0.0;
};

/// One bilevel task: the averaged operator, the upper loss, initial values,
/// the residual metric and the feasible boxes, plus any analytic extras.
struct ProblemInstance {
  std::string kind;
  KmOperator op;
  std::shared_ptr<LossFunction> loss;
  std::shared_ptr<const ParamLayout> layout;
  ParamVector omega_init;
  Vector u_init;
  Metric g_lb;
  Box u_box;
  Box omega_box;
  std::uint64_t seed = 0;

  std::optional<QuadraticOracleInfo> oracle;
  std::optional<SubspaceInfo> subspace;
  std::optional<HypercleanInfo> hyperclean;
  std::optional<SparseCodingInfo> sparse;

  ProblemInstance(std::string kind_, KmOperator op_, std::shared_ptr<LossFunction> loss_,
                  std::shared_ptr<const ParamLayout> layout_, ParamVector omega_init_,
                  Vector u_init_, Metric g_lb_, Box u_box_, Box omega_box_)
      : kind(std::move(kind_)),
        op(std::move(op_)),
        loss(std::move(loss_)),
        layout(std::move(layout_)),
        omega_init(std::move(omega_init_)),
        u_init(std::move(u_init_)),
        g_lb(std::move(g_lb_)),
        u_box(std::move(u_box_)),
        omega_box(std::move(omega_box_)) {}
};

enum class SparseVariant { regularized, constrained };

struct SparseCodingOptions {
  int n_test = 0;
  bool learn_kappa = true;
  bool learn_gamma = false;
  double kappa = -1.0;  // < 0 = variant default (0.1 regularized, 1.0 constrained)
  double gamma = 0.0;   // 0 = 1 / lambda_max(Q^T Q)
  double beta = 1.0;    // constrained variant only
  bool with_net = false;
  int net_layers = 2;
  bool normalize_net = true;
  double net_weight_scale = 1.0;  // multiplies the identity-plus-noise init
  double alpha = 0.5;
};

/// Synthetic sparse coding: Gaussian dictionary with unit-norm columns,
/// Bernoulli-support Gaussian codes, observations b = Q u + noise * gaussian.
/// The regularized variant wires the proximal-gradient operator; the
/// constrained variant wires the linearized ALM operator on the stacked
/// (u, u_n, lambda) state. The upper loss is the mean squared error between
/// recovered and true codes over the training samples.
ProblemInstance gen_sparse_coding(int m, int n, double density, double noise, int n_samples,
                                  SparseVariant variant, std::uint64_t seed,
                                  const SparseCodingOptions& opts = {});

/// Closed-form bilevel oracle with a random diagonally dominant SPD H.
ProblemInstance quadratic_oracle(int dim, std::uint64_t seed, double alpha = 0.5);

/// Same oracle with explicitly supplied H and c (test construction).
ProblemInstance quadratic_oracle_from(Matrix h, Vector c, double alpha = 0.5);

/// Non-unique-fixed-point case: D is the orthogonal projection onto the
/// first subspace_dims coordinates, the loss is 1/2 |u - target|^2.
ProblemInstance subspace_case(int dim, int subspace_dims, Vector target, double alpha = 0.5);

struct HypercleanOptions {
  double noise = 0.1;
  double ridge = 0.1;
  double offset = 5.0;  // label corruption magnitude
  double alpha = 0.5;
};

/// Data cleaning: planted linear model, a fixed fraction of training labels
/// shifted by a large offset, per-sample weight logits as the learning
/// variables, validation MSE as the upper loss.
ProblemInstance gen_hypercleaning(int d, int n_train, int n_val, double corrupt_frac,
                                  std::uint64_t seed, const HypercleanOptions& opts = {});

}  // namespace hodl
