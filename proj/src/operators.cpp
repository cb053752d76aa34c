#include "hodl/operators.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

#include "hodl/rng.hpp"

namespace hodl {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

void check_dim(const Vector& u, Eigen::Index expected, const char* who) {
  if (u.size() != expected) throw std::invalid_argument(std::string(who) + ": dimension mismatch");
}

Vector zero_grad(const ParamVector& w) { return Vector::Zero(w.size()); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------------------
// KmOperator

KmOperator::KmOperator(std::shared_ptr<ParamOperator> inner, double alpha)
    : inner_(std::move(inner)), alpha_(alpha) {
  if (!inner_) throw std::invalid_argument("KmOperator: null inner operator");
  if (!(alpha_ > 0.0 && alpha_ < 1.0))
    throw std::invalid_argument("KmOperator: alpha must lie strictly inside (0,1)");
}

Vector KmOperator::apply(const Vector& u, const ParamVector& w) const {
  check_dim(u, dim(), "KmOperator::apply");
  return u + alpha_ * (inner_->apply(u, w) - u);
}

OperatorVjp KmOperator::vjp(const Vector& u, const ParamVector& w, const Vector& cot) const {
  OperatorVjp d = inner_->vjp(u, w, alpha_ * cot);
  d.wrt_u += (1.0 - alpha_) * cot;
  return d;
}

Vector km_apply(const KmOperator& t, const Vector& u, const ParamVector& w) {
  return t.apply(u, w);
}

// ---------------------------------------------------------------------------
// Identity / Constant / Scaling

Vector IdentityOperator::apply(const Vector& u, const ParamVector&) const {
  check_dim(u, dim(), "IdentityOperator::apply");
  return u;
}

OperatorVjp IdentityOperator::vjp(const Vector&, const ParamVector& w, const Vector& cot) const {
  return {cot, zero_grad(w)};
}

ConstantOperator::ConstantOperator(Vector value, Metric g) : value_(std::move(value)), g_(std::move(g)) {
  if (value_.size() != g_.dim()) throw std::invalid_argument("ConstantOperator: value/metric mismatch");
}

Vector ConstantOperator::apply(const Vector& u, const ParamVector&) const {
  check_dim(u, dim(), "ConstantOperator::apply");
  return value_;
}

OperatorVjp ConstantOperator::vjp(const Vector&, const ParamVector& w, const Vector& cot) const {
  return {Vector::Zero(cot.size()), zero_grad(w)};
}

Vector ScalingOperator::apply(const Vector& u, const ParamVector&) const {
  check_dim(u, dim(), "ScalingOperator::apply");
  return factor_ * u;
}

OperatorVjp ScalingOperator::vjp(const Vector&, const ParamVector& w, const Vector& cot) const {
  return {factor_ * cot, zero_grad(w)};
}

// ---------------------------------------------------------------------------
// PgOperator

PgOperator::PgOperator(Matrix q, Matrix b, Metric g, Options opts)
    : q_(std::move(q)), b_(std::move(b)), g_(std::move(g)), opts_(std::move(opts)) {
  n_ = q_.cols();
  samples_ = b_.cols();
  if (b_.rows() != q_.rows()) throw std::invalid_argument("PgOperator: Q/b row mismatch");
  if (g_.dim() != n_ * samples_) throw std::invalid_argument("PgOperator: metric dimension mismatch");

  Eigen::SelfAdjointEigenSolver<Matrix> es(q_.transpose() * q_);
  lambda_min_ = std::max(es.eigenvalues().minCoeff(), 0.0);
  lambda_max_ = es.eigenvalues().maxCoeff();
  if (opts_.gamma == 0.0 && !opts_.gamma_slot)
    opts_.gamma = lambda_max_ > 0.0 ? 1.0 / lambda_max_ : 1.0;
}

double PgOperator::kappa(const ParamVector& w) const {
  const double k = opts_.kappa_slot ? w.scalar(*opts_.kappa_slot) : opts_.kappa;
  if (k < 0.0) throw std::invalid_argument("PgOperator: kappa must be nonnegative");
  return k;
}

double PgOperator::gamma(const ParamVector& w) const {
  const double gam = opts_.gamma_slot ? w.scalar(*opts_.gamma_slot) : opts_.gamma;
  if (!(gam > 0.0)) throw std::invalid_argument("PgOperator: gamma must be positive");
  return gam;
}

Vector PgOperator::pre_threshold(const Vector& u, const ParamVector& w, Matrix* grad_out) const {
  const double gam = gamma(w);
  ConstMap codes(u.data(), n_, samples_);
  Matrix grad = q_.transpose() * (q_ * codes - b_);
  Vector pre = u - gam * ConstMap(grad.data(), dim(), 1).col(0).cwiseQuotient(g_.diag());
  if (grad_out) *grad_out = std::move(grad);
  return pre;
}

Vector PgOperator::apply(const Vector& u, const ParamVector& w) const {
  check_dim(u, dim(), "PgOperator::apply");
  const double gam = gamma(w);
  const double kap = kappa(w);
  const Vector pre = pre_threshold(u, w, nullptr);
  const Vector tau = (gam * kap) * g_.diag().cwiseInverse();
  return soft_threshold(pre, tau);
}

OperatorVjp PgOperator::vjp(const Vector& u, const ParamVector& w, const Vector& cot) const {
  check_dim(u, dim(), "PgOperator::vjp");
  check_dim(cot, dim(), "PgOperator::vjp");
  const double gam = gamma(w);
  const double kap = kappa(w);

  Matrix grad;
  const Vector pre = pre_threshold(u, w, &grad);
  const Vector tau = (gam * kap) * g_.diag().cwiseInverse();

  // Soft-threshold pass-through mask; derivative 0 exactly at the kink.
  Vector c_pre(dim());
  for (Eigen::Index i = 0; i < dim(); ++i)
    c_pre[i] = std::abs(pre[i]) > tau[i] ? cot[i] : 0.0;

  // (d pre / d u)^T c = c - Q^T Q (gamma/G . c), blockwise per sample.
  Vector scaled = gam * c_pre.cwiseQuotient(g_.diag());
  ConstMap scaled_m(scaled.data(), n_, samples_);
  Matrix back = q_.transpose() * (q_ * scaled_m);
  Vector wrt_u = c_pre - ConstMap(back.data(), dim(), 1).col(0);

  Vector wrt_w = zero_grad(w);
  if (opts_.kappa_slot || opts_.gamma_slot) {
    double d_kappa = 0.0, d_gamma = 0.0;
    ConstMap grad_flat(grad.data(), dim(), 1);
    for (Eigen::Index i = 0; i < dim(); ++i) {
      if (std::abs(pre[i]) <= tau[i]) continue;
      const double sgn = pre[i] > 0.0 ? 1.0 : -1.0;
      const double gi = g_.diag()[i];
      d_kappa += cot[i] * (-sgn) * gam / gi;
      d_gamma += cot[i] * (-grad_flat(i, 0) / gi - sgn * kap / gi);
    }
    if (opts_.kappa_slot) wrt_w[opts_.kappa_slot->offset] += d_kappa;
    if (opts_.gamma_slot) wrt_w[opts_.gamma_slot->offset] += d_gamma;
  }
  return {std::move(wrt_u), std::move(wrt_w)};
}

double PgOperator::contraction_bound(const ParamVector& w) const {
  // Gradient-step factor in the G norm; the soft threshold is non-expansive.
  const double gam = gamma(w);
  const double lo = lambda_min_ / g_.upper_bound();
  const double hi = lambda_max_ / g_.lower_bound();
  return std::max(std::abs(1.0 - gam * lo), std::abs(1.0 - gam * hi));
}

double PgOperator::kink_gap(const Vector& u, const ParamVector& w) const {
  const double gam = gamma(w);
  const double kap = kappa(w);
  const Vector pre = pre_threshold(u, w, nullptr);
  double gap = kInf;
  for (Eigen::Index i = 0; i < dim(); ++i) {
    const double tau = gam * kap / g_.diag()[i];
    gap = std::min(gap, std::abs(std::abs(pre[i]) - tau));
  }
  return gap;
}

// ---------------------------------------------------------------------------
// LalmOperator

namespace {
// Column-block views of the stacked (u, u_n, lambda) state.
struct LalmBlocks {
  ConstMap xu, xn, lm;
  LalmBlocks(const Vector& z, Eigen::Index n, Eigen::Index m, Eigen::Index s)
      : xu(z.data(), n, s), xn(z.data() + n * s, m, s), lm(z.data() + (n + m) * s, m, s) {}
};
}  // namespace

LalmOperator::LalmOperator(Matrix q, Matrix b, Options opts)
    : q_(std::move(q)),
      b_(std::move(b)),
      opts_(std::move(opts)),
      n_(q_.cols()),
      m_(q_.rows()),
      samples_(b_.cols()),
      a_norm_sq_(0.0),
      g_(Metric::identity(1)) {
  if (b_.rows() != m_) throw std::invalid_argument("LalmOperator: Q/b row mismatch");
  if (!(opts_.beta > 0.0)) throw std::invalid_argument("LalmOperator: beta must be positive");

  // |A|^2 for A = [Q I] is |Q|^2 + 1 exactly.
  const double qn = power_iteration_norm(q_, 400, 1e-12);
  a_norm_sq_ = qn * qn + 1.0;
  if (opts_.sigma == 0.0) opts_.sigma = 1.5 * opts_.beta * a_norm_sq_;
  if (!(opts_.sigma > opts_.beta * a_norm_sq_))
    throw std::invalid_argument("LalmOperator: sigma <= beta |A|^2, proximal metric not positive-definite");

  Vector diag(dim());
  diag.head((n_ + m_) * samples_).setConstant(opts_.sigma);
  diag.tail(m_ * samples_).setConstant(1.0 / opts_.beta);
  const double lo = std::min(opts_.sigma, 1.0 / opts_.beta);
  const double hi = std::max(opts_.sigma, 1.0 / opts_.beta);
  g_ = Metric(std::move(diag), lo, hi);
}

double LalmOperator::kappa(const ParamVector& w) const {
  const double k = opts_.kappa_slot ? w.scalar(*opts_.kappa_slot) : opts_.kappa;
  if (k < 0.0) throw std::invalid_argument("LalmOperator: kappa must be nonnegative");
  return k;
}

Metric LalmOperator::lower_metric() const {
  // Floor of the energy-norm metric; inflate the |A|^2 estimate a little
  // since power iteration approaches the true norm from below.
  const double primal = opts_.sigma - 1.05 * opts_.beta * a_norm_sq_;
  const double c = std::max(std::min(primal, 1.0 / opts_.beta), 1e-12);
  return Metric::uniform(dim(), c);
}

double LalmOperator::state_norm(const Vector& v) const {
  check_dim(v, dim(), "LalmOperator::state_norm");
  LalmBlocks blk(v, n_, m_, samples_);
  const Matrix ax = q_ * blk.xu + blk.xn;
  const double sq = opts_.sigma * (blk.xu.squaredNorm() + blk.xn.squaredNorm()) -
                    opts_.beta * ax.squaredNorm() + blk.lm.squaredNorm() / opts_.beta;
  return std::sqrt(std::max(sq, 0.0));
}

Vector LalmOperator::apply(const Vector& z, const ParamVector& w) const {
  check_dim(z, dim(), "LalmOperator::apply");
  const double kap = kappa(w);
  const double beta = opts_.beta;
  const double sigma = opts_.sigma;
  LalmBlocks blk(z, n_, m_, samples_);

  const Matrix r = q_ * blk.xu + blk.xn - b_;
  const Matrix pre_u = blk.xu - (q_.transpose() * (blk.lm + beta * r)) / sigma;
  const Matrix pre_n = blk.xn - (blk.lm + beta * r) / sigma;

  Vector out(dim());
  MutMap xu_next(out.data(), n_, samples_);
  MutMap xn_next(out.data() + n_ * samples_, m_, samples_);
  MutMap lm_next(out.data() + (n_ + m_) * samples_, m_, samples_);

  const auto st = [](double v, double tau) {
    const double a = std::abs(v) - tau;
    return a > 0.0 ? (v > 0.0 ? a : -a) : 0.0;
  };
  for (Eigen::Index j = 0; j < samples_; ++j) {
    for (Eigen::Index i = 0; i < n_; ++i) xu_next(i, j) = st(pre_u(i, j), kap / sigma);
    for (Eigen::Index i = 0; i < m_; ++i) xn_next(i, j) = st(pre_n(i, j), 1.0 / sigma);
  }
  lm_next = blk.lm + beta * (q_ * xu_next + xn_next - b_);
  return out;
}

OperatorVjp LalmOperator::vjp(const Vector& z, const ParamVector& w, const Vector& cot) const {
  check_dim(z, dim(), "LalmOperator::vjp");
  check_dim(cot, dim(), "LalmOperator::vjp");
  const double kap = kappa(w);
  const double beta = opts_.beta;
  const double sigma = opts_.sigma;
  LalmBlocks blk(z, n_, m_, samples_);
  LalmBlocks c(cot, n_, m_, samples_);

  const Matrix r = q_ * blk.xu + blk.xn - b_;
  const Matrix pre_u = blk.xu - (q_.transpose() * (blk.lm + beta * r)) / sigma;
  const Matrix pre_n = blk.xn - (blk.lm + beta * r) / sigma;

  // lambda+ = lambda + beta (Q xu+ + xn+ - b): fold the dual cotangent into
  // the primal ones, then walk back through the soft threshold.
  const Matrix cu_hat = c.xu + beta * (q_.transpose() * c.lm);
  const Matrix cn_hat = c.xn + beta * c.lm;

  Matrix d_u(n_, samples_), d_n(m_, samples_);
  double d_kappa = 0.0;
  for (Eigen::Index j = 0; j < samples_; ++j) {
    for (Eigen::Index i = 0; i < n_; ++i) {
      const bool active = std::abs(pre_u(i, j)) > kap / sigma;
      d_u(i, j) = active ? cu_hat(i, j) : 0.0;
      if (active) d_kappa -= (pre_u(i, j) > 0.0 ? 1.0 : -1.0) * cu_hat(i, j) / sigma;
    }
    for (Eigen::Index i = 0; i < m_; ++i)
      d_n(i, j) = std::abs(pre_n(i, j)) > 1.0 / sigma ? cn_hat(i, j) : 0.0;
  }

  Vector wrt_u(dim());
  MutMap gu(wrt_u.data(), n_, samples_);
  MutMap gn(wrt_u.data() + n_ * samples_, m_, samples_);
  MutMap gl(wrt_u.data() + (n_ + m_) * samples_, m_, samples_);
  const Matrix q_du = q_ * d_u;
  gu = d_u - (beta / sigma) * (q_.transpose() * (q_du + d_n));
  gn = d_n - (beta / sigma) * (q_du + d_n);
  gl = c.lm - (q_du + d_n) / sigma;

  Vector wrt_w = zero_grad(w);
  if (opts_.kappa_slot) wrt_w[opts_.kappa_slot->offset] += d_kappa;
  return {std::move(wrt_u), std::move(wrt_w)};
}

double LalmOperator::kink_gap(const Vector& z, const ParamVector& w) const {
  const double kap = kappa(w);
  const double sigma = opts_.sigma;
  LalmBlocks blk(z, n_, m_, samples_);
  const Matrix r = q_ * blk.xu + blk.xn - b_;
  const Matrix pre_u = blk.xu - (q_.transpose() * (blk.lm + opts_.beta * r)) / sigma;
  const Matrix pre_n = blk.xn - (blk.lm + opts_.beta * r) / sigma;
  double gap = kInf;
  for (Eigen::Index j = 0; j < samples_; ++j) {
    for (Eigen::Index i = 0; i < n_; ++i)
      gap = std::min(gap, std::abs(std::abs(pre_u(i, j)) - kap / sigma));
    for (Eigen::Index i = 0; i < m_; ++i)
      gap = std::min(gap, std::abs(std::abs(pre_n(i, j)) - 1.0 / sigma));
  }
  return gap;
}

// ---------------------------------------------------------------------------
// Lower-level objectives

QuadraticObjective::QuadraticObjective(Matrix h, ParamSegment omega_slot)
    : h_(std::move(h)), omega_slot_(std::move(omega_slot)) {
  if (h_.rows() != h_.cols()) throw std::invalid_argument("QuadraticObjective: H not square");
  if (omega_slot_.length != h_.rows())
    throw std::invalid_argument("QuadraticObjective: omega slot length mismatch");
  h_ = Matrix(0.5 * (h_ + h_.transpose().eval()));  // keep H exactly symmetric
  Eigen::SelfAdjointEigenSolver<Matrix> es(h_);
  h_min_ = es.eigenvalues().minCoeff();
  h_max_ = es.eigenvalues().maxCoeff();
  if (!(h_min_ > 0.0)) throw std::invalid_argument("QuadraticObjective: H must be positive-definite");
}

double QuadraticObjective::value(const Vector& u, const ParamVector& w) const {
  return 0.5 * u.dot(h_ * u) - w.seg(omega_slot_).dot(u);
}

Vector QuadraticObjective::grad(const Vector& u, const ParamVector& w) const {
  return h_ * u - w.seg(omega_slot_);
}

OperatorVjp QuadraticObjective::grad_vjp(const Vector&, const ParamVector& w, const Vector& cot) const {
  Vector wrt_w = zero_grad(w);
  wrt_w.segment(omega_slot_.offset, omega_slot_.length) = -cot;
  return {h_ * cot, std::move(wrt_w)};
}

WeightedRidgeObjective::WeightedRidgeObjective(Matrix x, Vector y, double ridge, ParamSegment logit_slot)
    : x_(std::move(x)), y_(std::move(y)), ridge_(ridge), logit_slot_(std::move(logit_slot)) {
  if (x_.rows() != y_.size()) throw std::invalid_argument("WeightedRidgeObjective: X/y mismatch");
  if (logit_slot_.length != x_.rows())
    throw std::invalid_argument("WeightedRidgeObjective: logit slot length mismatch");
  if (!(ridge_ > 0.0)) throw std::invalid_argument("WeightedRidgeObjective: ridge must be positive");
  Eigen::SelfAdjointEigenSolver<Matrix> es(x_.transpose() * x_);
  h_max_ = 2.0 * es.eigenvalues().maxCoeff() / static_cast<double>(x_.rows()) + 2.0 * ridge_;
}

Vector WeightedRidgeObjective::weights(const ParamVector& w) const {
  Vector s(logit_slot_.length);
  const auto logits = w.seg(logit_slot_);
  for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = sigmoid(logits[i]);
  return s;
}

double WeightedRidgeObjective::value(const Vector& u, const ParamVector& w) const {
  const Vector r = x_ * u - y_;
  const Vector s = weights(w);
  return s.dot(r.cwiseAbs2()) / static_cast<double>(x_.rows()) + ridge_ * u.squaredNorm();
}

Vector WeightedRidgeObjective::grad(const Vector& u, const ParamVector& w) const {
  const Vector r = x_ * u - y_;
  const Vector s = weights(w);
  return (2.0 / static_cast<double>(x_.rows())) * (x_.transpose() * s.cwiseProduct(r)) +
         2.0 * ridge_ * u;
}

OperatorVjp WeightedRidgeObjective::grad_vjp(const Vector& u, const ParamVector& w,
                                             const Vector& cot) const {
  const double inv_n = 1.0 / static_cast<double>(x_.rows());
  const Vector s = weights(w);
  const Vector xc = x_ * cot;
  Vector wrt_u = (2.0 * inv_n) * (x_.transpose() * s.cwiseProduct(xc)) + 2.0 * ridge_ * cot;

  const Vector r = x_ * u - y_;
  Vector wrt_w = zero_grad(w);
  auto seg = wrt_w.segment(logit_slot_.offset, logit_slot_.length);
  for (Eigen::Index i = 0; i < seg.size(); ++i)
    seg[i] = 2.0 * inv_n * s[i] * (1.0 - s[i]) * r[i] * xc[i];
  return {std::move(wrt_u), std::move(wrt_w)};
}

// ---------------------------------------------------------------------------
// GdOperator

GdOperator::GdOperator(std::shared_ptr<LowerObjective> objective, double eta, Metric g)
    : objective_(std::move(objective)), eta_(eta), g_(std::move(g)) {
  if (!objective_) throw std::invalid_argument("GdOperator: null objective");
  if (!(eta_ > 0.0)) throw std::invalid_argument("GdOperator: step length must be positive");
  if (g_.dim() != objective_->dim()) throw std::invalid_argument("GdOperator: metric dimension mismatch");
  rho_ = std::max(std::abs(1.0 - eta_ * objective_->hessian_min()),
                  std::abs(1.0 - eta_ * objective_->hessian_max()));
}

Vector GdOperator::apply(const Vector& u, const ParamVector& w) const {
  check_dim(u, dim(), "GdOperator::apply");
  return u - eta_ * objective_->grad(u, w);
}

OperatorVjp GdOperator::vjp(const Vector& u, const ParamVector& w, const Vector& cot) const {
  OperatorVjp g = objective_->grad_vjp(u, w, cot);
  return {cot - eta_ * g.wrt_u, -eta_ * g.wrt_w};
}

// ---------------------------------------------------------------------------
// NetOperator

NetOperator::NetOperator(Eigen::Index width, Eigen::Index n_layers, Eigen::Index samples, Metric g,
                         std::vector<ParamSegment> weight_slots, std::vector<ParamSegment> bias_slots,
                         Options opts)
    : width_(width),
      n_layers_(n_layers),
      samples_(samples),
      g_(std::move(g)),
      w_slots_(std::move(weight_slots)),
      b_slots_(std::move(bias_slots)),
      opts_(opts) {
  if (n_layers_ < 1) throw std::invalid_argument("NetOperator: needs at least one layer");
  if (static_cast<Eigen::Index>(w_slots_.size()) != n_layers_ ||
      static_cast<Eigen::Index>(b_slots_.size()) != n_layers_)
    throw std::invalid_argument("NetOperator: slot count does not match layer count");
  for (const auto& s : w_slots_)
    if (s.length != width_ * width_) throw std::invalid_argument("NetOperator: weight slot width mismatch");
  for (const auto& s : b_slots_)
    if (s.length != width_) throw std::invalid_argument("NetOperator: bias slot width mismatch");
  if (g_.dim() != width_ * samples_) throw std::invalid_argument("NetOperator: metric dimension mismatch");
  // The similarity transform needs the same per-block diagonal in every sample.
  for (Eigen::Index j = 1; j < samples_; ++j)
    if (g_.diag().segment(j * width_, width_) != g_.diag().head(width_))
      throw std::invalid_argument("NetOperator: metric must repeat per sample block");
  g_sqrt_ = g_.diag().head(width_).cwiseSqrt();
  g_inv_sqrt_ = g_sqrt_.cwiseInverse();
  norms_.assign(static_cast<std::size_t>(n_layers_), 1.0);
}

NetOperator::NetOperator(Eigen::Index width, Eigen::Index n_layers, Eigen::Index samples,
                         Metric g, std::vector<ParamSegment> weight_slots,
                         std::vector<ParamSegment> bias_slots)
    : NetOperator(width, n_layers, samples, std::move(g), std::move(weight_slots),
                  std::move(bias_slots), Options()) {}

Matrix NetOperator::weight(const ParamVector& w, Eigen::Index layer) const {
  const auto& s = w_slots_[static_cast<std::size_t>(layer)];
  return ConstMap(w.flat.data() + s.offset, width_, width_);
}

Vector NetOperator::bias(const ParamVector& w, Eigen::Index layer) const {
  const auto& s = b_slots_[static_cast<std::size_t>(layer)];
  return w.flat.segment(s.offset, s.length);
}

double NetOperator::divisor(Eigen::Index layer) const {
  return opts_.normalize ? std::max(1.0, norms_[static_cast<std::size_t>(layer)]) : 1.0;
}

void NetOperator::refresh(const ParamVector& w) {
  for (Eigen::Index l = 0; l < n_layers_; ++l)
    norms_[static_cast<std::size_t>(l)] = power_iteration_norm(weight(w, l));
}

Matrix NetOperator::forward(const Matrix& x0, const ParamVector& w, std::vector<Matrix>* pre,
                            std::vector<Matrix>* post) const {
  Matrix x = x0;
  for (Eigen::Index l = 0; l < n_layers_; ++l) {
    if (post) post->push_back(x);
    Matrix z = (weight(w, l) / divisor(l)) * x;
    z.colwise() += bias(w, l);
    if (pre) pre->push_back(z);
    x = z.cwiseMax(0.0);
  }
  return x;
}

Vector NetOperator::apply(const Vector& u, const ParamVector& w) const {
  check_dim(u, dim(), "NetOperator::apply");
  ConstMap in(u.data(), width_, samples_);
  Matrix x = in.array().colwise() * g_sqrt_.array();
  x = forward(x, w, nullptr, nullptr);
  x = x.array().colwise() * g_inv_sqrt_.array();
  return ConstMap(x.data(), dim(), 1).col(0);
}

OperatorVjp NetOperator::vjp(const Vector& u, const ParamVector& w, const Vector& cot) const {
  check_dim(u, dim(), "NetOperator::vjp");
  ConstMap in(u.data(), width_, samples_);
  Matrix x0 = in.array().colwise() * g_sqrt_.array();

  std::vector<Matrix> pre, post;
  pre.reserve(static_cast<std::size_t>(n_layers_));
  post.reserve(static_cast<std::size_t>(n_layers_));
  forward(x0, w, &pre, &post);

  ConstMap cm(cot.data(), width_, samples_);
  Matrix c = cm.array().colwise() * g_inv_sqrt_.array();

  Vector wrt_w = zero_grad(w);
  for (Eigen::Index l = n_layers_ - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    c = c.cwiseProduct((pre[li].array() > 0.0).cast<double>().matrix());
    wrt_w.segment(b_slots_[li].offset, b_slots_[li].length) += c.rowwise().sum();
    Matrix dw = (c * post[li].transpose()) / divisor(l);
    MutMap(wrt_w.data() + w_slots_[li].offset, width_, width_) += dw;
    c = (weight(w, l) / divisor(l)).transpose() * c;
  }
  Matrix back = c.array().colwise() * g_sqrt_.array();
  return {ConstMap(back.data(), dim(), 1).col(0), std::move(wrt_w)};
}

double NetOperator::kink_gap(const Vector& u, const ParamVector& w) const {
  ConstMap in(u.data(), width_, samples_);
  Matrix x = in.array().colwise() * g_sqrt_.array();
  std::vector<Matrix> pre;
  forward(x, w, &pre, nullptr);
  double gap = kInf;
  for (const auto& z : pre) gap = std::min(gap, z.cwiseAbs().minCoeff());
  return gap;
}

// ---------------------------------------------------------------------------
// Composition

ComposedOperator::ComposedOperator(std::shared_ptr<ParamOperator> outer,
                                   std::shared_ptr<ParamOperator> inner)
    : outer_(std::move(outer)), inner_(std::move(inner)) {
  if (!outer_ || !inner_) throw std::invalid_argument("ComposedOperator: null operator");
  if (outer_->dim() != inner_->dim()) throw std::invalid_argument("ComposedOperator: width mismatch");
  if (!outer_->metric().same_as(inner_->metric()))
    throw std::invalid_argument("ComposedOperator: operators must share the same metric");
}

Vector ComposedOperator::apply(const Vector& u, const ParamVector& w) const {
  return outer_->apply(inner_->apply(u, w), w);
}

OperatorVjp ComposedOperator::vjp(const Vector& u, const ParamVector& w, const Vector& cot) const {
  const Vector mid = inner_->apply(u, w);
  OperatorVjp o = outer_->vjp(mid, w, cot);
  OperatorVjp i = inner_->vjp(u, w, o.wrt_u);
  i.wrt_w += o.wrt_w;
  return i;
}

void ComposedOperator::refresh(const ParamVector& w) {
  inner_->refresh(w);
  outer_->refresh(w);
}

double ComposedOperator::kink_gap(const Vector& u, const ParamVector& w) const {
  const Vector mid = inner_->apply(u, w);
  return std::min(inner_->kink_gap(u, w), outer_->kink_gap(mid, w));
}

Vector compose_apply(const ParamOperator& outer, const ParamOperator& inner, const Vector& u,
                     const ParamVector& w) {
  if (outer.dim() != inner.dim()) throw std::invalid_argument("compose_apply: width mismatch");
  if (!outer.metric().same_as(inner.metric()))
    throw std::invalid_argument("compose_apply: operators must share the same metric");
  return outer.apply(inner.apply(u, w), w);
}

// ---------------------------------------------------------------------------

double estimate_lipschitz(const ParamOperator& op, const ParamVector& w, int samples,
                          std::uint64_t seed) {
  if (samples < 2) throw std::invalid_argument("estimate_lipschitz: needs at least 2 samples");
  RandomStream rs(seed);
  double worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Vector u1 = rs.gaussian_vector(op.dim());
    const Vector u2 = rs.gaussian_vector(op.dim());
    const double den = op.state_norm(u1 - u2);
    if (den == 0.0) continue;
    const double num = op.state_norm(op.apply(u1, w) - op.apply(u2, w));
    worst = std::max(worst, num / den);
  }
  return worst;
}

}  // namespace hodl
