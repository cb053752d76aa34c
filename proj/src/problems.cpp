#include "hodl/problems.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

#include "hodl/rng.hpp"

namespace hodl {

// ---------------------------------------------------------------------------
// Analytic extras

Vector QuadraticOracleInfo::u_star(const Vector& omega) const {
  return h.llt().solve(omega);
}

double QuadraticOracleInfo::phi(const Vector& omega) const {
  return 0.5 * (u_star(omega) - c).squaredNorm();
}

Vector QuadraticOracleInfo::grad_phi(const Vector& omega) const {
  return h.llt().solve(u_star(omega) - c);
}

Vector SubspaceInfo::simplified_limit(const Vector& u0) const {
  Vector out = Vector::Zero(u0.size());
  out.head(subspace_dims) = u0.head(subspace_dims);
  return out;
}

Vector HypercleanInfo::clean_ols() const {
  std::vector<bool> bad(static_cast<std::size_t>(x_train.rows()), false);
  for (int i : corrupt_indices) bad[static_cast<std::size_t>(i)] = true;
  const Eigen::Index n_clean = x_train.rows() - static_cast<Eigen::Index>(corrupt_indices.size());
  Matrix xc(n_clean, x_train.cols());
  Vector yc(n_clean);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < x_train.rows(); ++i) {
    if (bad[static_cast<std::size_t>(i)]) continue;
    xc.row(r) = x_train.row(i);
    yc[r] = y_train[i];
    ++r;
  }
  return (xc.transpose() * xc).llt().solve(xc.transpose() * yc);
}

// ---------------------------------------------------------------------------
// Quadratic oracle

namespace {

ProblemInstance build_oracle(Matrix h, Vector c, Vector omega0, double alpha, std::uint64_t seed) {
  const Eigen::Index dim = h.rows();
  LayoutBuilder lb;
  const ParamSegment omega_slot = lb.add("omega", dim);
  auto layout = lb.build();

  auto objective = std::make_shared<QuadraticObjective>(std::move(h), omega_slot);
  const Matrix& hs = objective->h();  // symmetrized copy
  const double eta = 1.0 / objective->hessian_max();
  auto gd = std::make_shared<GdOperator>(objective, eta, Metric::identity(dim));

  QuadraticOracleInfo info;
  info.h = hs;
  info.c = c;
  info.omega_star = hs * c;
  info.eta = eta;
  info.rho = 1.0 - objective->hessian_min() / objective->hessian_max();
  info.safe_gamma = objective->hessian_min() * objective->hessian_min();

  const double extent =
      2.0 * std::max({1.0, info.omega_star.cwiseAbs().maxCoeff(), omega0.cwiseAbs().maxCoeff()});

  ProblemInstance p("quadratic_oracle", KmOperator(gd, alpha),
                    std::make_shared<MseLoss>(std::move(c), 1.0, dim), layout,
                    ParamVector(layout, std::move(omega0)), Vector::Zero(dim),
                    Metric::identity(dim), Box::unbounded(dim),
                    Box::uniform(dim, -extent, extent));
  p.seed = seed;
  p.oracle = std::move(info);
  return p;
}

}  // namespace

ProblemInstance quadratic_oracle(int dim, std::uint64_t seed, double alpha) {
  if (dim < 1) throw std::invalid_argument("quadratic_oracle: dim must be >= 1");
  RandomStream rs(seed);
  // Symmetric, strictly diagonally dominant, hence SPD with moderate spread.
  Matrix s = rs.gaussian_matrix(dim, dim);
  s = 0.15 * (s + s.transpose());
  Matrix h = s;
  for (int i = 0; i < dim; ++i) {
    double off = 0.0;
    for (int j = 0; j < dim; ++j)
      if (j != i) off += std::abs(s(i, j));
    h(i, i) = off + 1.0 + rs.uniform();
  }
  Vector c = rs.gaussian_vector(dim);
  Vector omega0 = rs.gaussian_vector(dim);
  return build_oracle(std::move(h), std::move(c), std::move(omega0), alpha, seed);
}

ProblemInstance quadratic_oracle_from(Matrix h, Vector c, double alpha) {
  Vector omega0 = Vector::Zero(h.rows());
  return build_oracle(std::move(h), std::move(c), std::move(omega0), alpha, 0);
}

// ---------------------------------------------------------------------------
// Subspace case

namespace {

/// Orthogonal projection onto the leading coordinates. Non-expansive with a
/// whole subspace of fixed points.
class CoordinateProjectionOperator final : public ParamOperator {
 public:
  CoordinateProjectionOperator(Eigen::Index dim, Eigen::Index keep)
      : g_(Metric::identity(dim)), keep_(keep) {
    if (keep < 1 || keep >= dim)
      throw std::invalid_argument("CoordinateProjectionOperator: keep must lie in [1, dim)");
  }
  const char* kind() const override { return "coordinate_projection"; }
  Eigen::Index dim() const override { return g_.dim(); }
  const Metric& metric() const override { return g_; }
  Vector apply(const Vector& u, const ParamVector&) const override {
    Vector out = Vector::Zero(u.size());
    out.head(keep_) = u.head(keep_);
    return out;
  }
  OperatorVjp vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override {
    Vector back = Vector::Zero(u.size());
    back.head(keep_) = cot.head(keep_);
    return {std::move(back), Vector::Zero(w.size())};
  }

 private:
  Metric g_;
  Eigen::Index keep_;
};

}  // namespace

ProblemInstance subspace_case(int dim, int subspace_dims, Vector target, double alpha) {
  if (target.size() != dim) throw std::invalid_argument("subspace_case: target dimension mismatch");
  auto proj = std::make_shared<CoordinateProjectionOperator>(dim, subspace_dims);
  LayoutBuilder lb;
  auto layout = lb.build();  // no learning variables

  SubspaceInfo info;
  info.subspace_dims = subspace_dims;
  info.target = target;
  info.solution = Vector::Zero(dim);
  info.solution.head(subspace_dims) = target.head(subspace_dims);

  ProblemInstance p("subspace", KmOperator(proj, alpha),
                    std::make_shared<MseLoss>(std::move(target), 1.0, dim), layout,
                    ParamVector(layout, Vector(0)), Vector::Zero(dim), Metric::identity(dim),
                    Box::unbounded(dim), Box::unbounded(0));
  p.subspace = std::move(info);
  return p;
}

// ---------------------------------------------------------------------------
// Sparse coding

namespace {

Matrix draw_codes(RandomStream& rs, Eigen::Index n, Eigen::Index samples, double density) {
  Matrix codes = Matrix::Zero(n, samples);
  for (Eigen::Index j = 0; j < samples; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      if (rs.bernoulli(density)) codes(i, j) = rs.gaussian();
  return codes;
}

}  // namespace

ProblemInstance gen_sparse_coding(int m, int n, double density, double noise, int n_samples,
                                  SparseVariant variant, std::uint64_t seed,
                                  const SparseCodingOptions& opts) {
  if (m < 1 || n < 1 || n_samples < 1)
    throw std::invalid_argument("gen_sparse_coding: dimensions must be positive");
  if (!(density > 0.0 && density <= 1.0))
    throw std::invalid_argument("gen_sparse_coding: density must lie in (0,1]");
  if (noise < 0.0) throw std::invalid_argument("gen_sparse_coding: noise must be nonnegative");
  if (opts.with_net && variant == SparseVariant::constrained)
    throw std::invalid_argument("gen_sparse_coding: the net module is wired for the regularized variant");

  RandomStream rs(seed);
  Matrix q = rs.gaussian_matrix(m, n);
  for (Eigen::Index j = 0; j < n; ++j) q.col(j) /= std::max(q.col(j).norm(), 1e-300);

  Matrix codes = draw_codes(rs, n, n_samples, density);
  Matrix b = q * codes + noise * rs.gaussian_matrix(m, n_samples);
  Matrix codes_test(n, 0), b_test(m, 0);
  if (opts.n_test > 0) {
    codes_test = draw_codes(rs, n, opts.n_test, density);
    b_test = q * codes_test + noise * rs.gaussian_matrix(m, opts.n_test);
  }

  const double kappa0 = opts.kappa >= 0.0 ? opts.kappa
                        : variant == SparseVariant::regularized ? 0.1
                                                                : 1.0;
  const double q_norm = power_iteration_norm(q, 400, 1e-12);
  const double lambda_max = q_norm * q_norm;
  const double gamma0 = opts.gamma > 0.0 ? opts.gamma : 1.0 / lambda_max;

  LayoutBuilder lb;
  std::shared_ptr<ParamSegment> kappa_slot, gamma_slot;
  if (opts.learn_kappa) kappa_slot = std::make_shared<ParamSegment>(lb.add("kappa", 1));
  if (opts.learn_gamma && variant == SparseVariant::regularized)
    gamma_slot = std::make_shared<ParamSegment>(lb.add("gamma", 1));

  std::vector<ParamSegment> w_slots, b_slots;
  if (opts.with_net) {
    for (int l = 0; l < opts.net_layers; ++l) {
      w_slots.push_back(lb.add("net_w" + std::to_string(l), static_cast<Eigen::Index>(n) * n));
      b_slots.push_back(lb.add("net_b" + std::to_string(l), n));
    }
  }
  auto layout = lb.build();

  // Initial learning variables, in layout order.
  Vector omega0 = Vector::Zero(layout->size());
  Vector box_lo = Vector::Zero(layout->size()), box_hi = Vector::Zero(layout->size());
  if (kappa_slot) {
    omega0[kappa_slot->offset] = kappa0;
    box_lo[kappa_slot->offset] = 0.0;
    box_hi[kappa_slot->offset] = 1e3;
  }
  if (gamma_slot) {
    omega0[gamma_slot->offset] = gamma0;
    box_lo[gamma_slot->offset] = 1e-8;
    box_hi[gamma_slot->offset] = 1.9 / lambda_max;
  }
  for (std::size_t l = 0; l < w_slots.size(); ++l) {
    Matrix w_init = opts.net_weight_scale *
                    (Matrix::Identity(n, n) + 0.05 * rs.gaussian_matrix(n, n));
    omega0.segment(w_slots[l].offset, w_slots[l].length) =
        Eigen::Map<const Vector>(w_init.data(), w_slots[l].length);
    omega0.segment(b_slots[l].offset, b_slots[l].length) = Vector::Constant(n, 0.02);
    box_lo.segment(w_slots[l].offset, w_slots[l].length).setConstant(-50.0);
    box_hi.segment(w_slots[l].offset, w_slots[l].length).setConstant(50.0);
    box_lo.segment(b_slots[l].offset, b_slots[l].length).setConstant(-50.0);
    box_hi.segment(b_slots[l].offset, b_slots[l].length).setConstant(50.0);
  }

  std::shared_ptr<ParamOperator> d;
  Metric g_lb = Metric::identity(1);
  Eigen::Index state_dim = 0;
  if (variant == SparseVariant::regularized) {
    state_dim = static_cast<Eigen::Index>(n) * n_samples;
    PgOperator::Options po;
    po.kappa = kappa0;
    po.gamma = gamma0;
    po.kappa_slot = kappa_slot;
    po.gamma_slot = gamma_slot;
    auto pg = std::make_shared<PgOperator>(q, b, Metric::identity(state_dim), po);
    if (opts.with_net) {
      NetOperator::Options no;
      no.normalize = opts.normalize_net;
      auto net = std::make_shared<NetOperator>(n, opts.net_layers, n_samples,
                                               Metric::identity(state_dim), w_slots, b_slots, no);
      d = std::make_shared<ComposedOperator>(pg, net);
    } else {
      d = pg;
    }
    g_lb = Metric::identity(state_dim);
  } else {
    LalmOperator::Options lo;
    lo.kappa = kappa0;
    lo.kappa_slot = kappa_slot;
    lo.beta = opts.beta;
    auto lalm = std::make_shared<LalmOperator>(q, b, lo);
    state_dim = lalm->dim();
    g_lb = lalm->lower_metric();
    d = lalm;
  }

  auto loss = std::make_shared<MseLoss>(
      Eigen::Map<const Vector>(codes.data(), static_cast<Eigen::Index>(n) * n_samples),
      1.0 / n_samples, state_dim, 0);

  ProblemInstance p(variant == SparseVariant::regularized ? "sparse_coding_regularized"
                                                          : "sparse_coding_constrained",
                    KmOperator(d, opts.alpha), loss, layout, ParamVector(layout, omega0),
                    Vector::Zero(state_dim), g_lb, Box::unbounded(state_dim),
                    layout->size() > 0 ? Box(box_lo, box_hi) : Box::unbounded(0));
  p.seed = seed;
  p.op.refresh(p.omega_init);

  SparseCodingInfo info;
  info.q = std::move(q);
  info.b_train = std::move(b);
  info.codes_train = std::move(codes);
  info.b_test = std::move(b_test);
  info.codes_test = std::move(codes_test);
  info.kappa0 = kappa0;
  info.gamma0 = gamma0;
  p.sparse = std::move(info);
  return p;
}

// ---------------------------------------------------------------------------
// Data hyper-cleaning

ProblemInstance gen_hypercleaning(int d, int n_train, int n_val, double corrupt_frac,
                                  std::uint64_t seed, const HypercleanOptions& opts) {
  if (d < 1 || n_train < 1 || n_val < 1)
    throw std::invalid_argument("gen_hypercleaning: dimensions must be positive");
  if (!(corrupt_frac >= 0.0 && corrupt_frac < 1.0))
    throw std::invalid_argument("gen_hypercleaning: corrupt_frac must lie in [0,1)");

  RandomStream rs(seed);
  Vector planted = rs.gaussian_vector(d);
  Matrix x_train = rs.gaussian_matrix(n_train, d);
  Vector y_train = x_train * planted + opts.noise * rs.gaussian_vector(n_train);
  Matrix x_val = rs.gaussian_matrix(n_val, d);
  Vector y_val = x_val * planted + opts.noise * rs.gaussian_vector(n_val);

  const int n_bad = static_cast<int>(std::lround(corrupt_frac * n_train));
  std::vector<int> perm = rs.permutation(n_train);
  std::vector<int> corrupt(perm.begin(), perm.begin() + n_bad);
  std::sort(corrupt.begin(), corrupt.end());
  for (int i : corrupt) y_train[i] += (rs.bernoulli(0.5) ? 1.0 : -1.0) * opts.offset;

  LayoutBuilder lb;
  const ParamSegment logits = lb.add("logits", n_train);
  auto layout = lb.build();

  auto objective = std::make_shared<WeightedRidgeObjective>(x_train, y_train, opts.ridge, logits);
  const double eta = 1.0 / objective->hessian_max();
  auto gd = std::make_shared<GdOperator>(objective, eta, Metric::identity(d));

  ProblemInstance p("hypercleaning", KmOperator(gd, opts.alpha),
                    std::make_shared<ValidationMseLoss>(x_val, y_val), layout,
                    ParamVector(layout, Vector::Zero(n_train)), Vector::Zero(d),
                    Metric::identity(d), Box::unbounded(d), Box::uniform(n_train, -6.0, 6.0));
  p.seed = seed;

  HypercleanInfo info;
  info.corrupt_indices = std::move(corrupt);
  info.planted_u = std::move(planted);
  info.x_train = std::move(x_train);
  info.y_train = std::move(y_train);
  info.x_val = std::move(x_val);
  info.y_val = std::move(y_val);
  info.noise = opts.noise;
  info.logit_slot = logits;
  p.hyperclean = std::move(info);
  return p;
}

}  // namespace hodl
