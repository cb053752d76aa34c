#include <doctest.h>

#include <cmath>
#include <functional>

#include "hodl/operators.hpp"
#include "hodl/rng.hpp"

using namespace hodl;

namespace {

ParamVector empty_params() { return ParamVector(); }

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

// Central-difference check of both cotangent products at a fixed cotangent.
void check_vjp(const ParamOperator& op, const Vector& u, const ParamVector& w, RandomStream& rs,
               double tol = 1e-6) {
  const Vector cot = rs.gaussian_vector(op.dim());
  const OperatorVjp ad = op.vjp(u, w, cot);
  const double h = 1e-6;

  for (Eigen::Index i = 0; i < u.size(); ++i) {
    Vector up = u, um = u;
    up[i] += h;
    um[i] -= h;
    const double fd = (cot.dot(op.apply(up, w)) - cot.dot(op.apply(um, w))) / (2 * h);
    CHECK(ad.wrt_u[i] == doctest::Approx(fd).epsilon(tol).scale(1.0));
  }
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Vector wp = w.flat, wm = w.flat;
    wp[i] += h;
    wm[i] -= h;
    const double fd =
        (cot.dot(op.apply(u, w.with(wp))) - cot.dot(op.apply(u, w.with(wm)))) / (2 * h);
    CHECK(ad.wrt_w[i] == doctest::Approx(fd).epsilon(tol).scale(1.0));
  }
}

// 1-d golden-section search on a bracketed convex function.
double golden_min(const std::function<double(double)>& f, double lo, double hi) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  for (int it = 0; it < 200; ++it) {
    if (f(c) < f(d))
      b = d;
    else
      a = c;
    c = b - phi * (b - a);
    d = a + phi * (b - a);
  }
  return 0.5 * (a + b);
}

}  // namespace

TEST_CASE("km averaging") {
  const ParamVector w = empty_params();
  const Metric g = Metric::identity(2);

  KmOperator ident(std::make_shared<IdentityOperator>(g), 0.7);
  const Vector u = vec2(1.3, -2.0);
  CHECK((km_apply(ident, u, w) - u).norm() == 0.0);

  KmOperator negate(std::make_shared<ScalingOperator>(-1.0, g), 0.5);
  CHECK(km_apply(negate, u, w).norm() == 0.0);

  KmOperator toward_c(std::make_shared<ConstantOperator>(vec2(2.0, -4.0), g), 0.3);
  CHECK((km_apply(toward_c, Vector::Zero(2), w) - vec2(0.6, -1.2)).norm() < 1e-15);

  CHECK_THROWS_AS(KmOperator(std::make_shared<IdentityOperator>(g), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(KmOperator(std::make_shared<IdentityOperator>(g), 0.0), std::invalid_argument);
}

TEST_CASE("pg step solves its subproblem in closed form") {
  // Q = I, so f(u) = 1/2 |u - b|^2.
  LayoutBuilder lb;
  auto kappa = std::make_shared<ParamSegment>(lb.add("kappa", 1));
  auto gamma = std::make_shared<ParamSegment>(lb.add("gamma", 1));
  auto layout = lb.build();
  Vector theta(2);
  theta << 0.5, 1.0;  // kappa, gamma
  const ParamVector w(layout, theta);

  PgOperator::Options opts;
  opts.kappa_slot = kappa;
  opts.gamma_slot = gamma;
  PgOperator pg(Matrix::Identity(2, 2), vec2(2.0, 0.1), Metric::identity(2), opts);

  const Vector u0 = Vector::Zero(2);
  const Vector got = pg.apply(u0, w);

  // Independent route: the subproblem separates per coordinate; minimize
  // each scalar piece by golden section.
  const Vector grad = vec2(-2.0, -0.1);  // Q^T(Q u0 - b)
  for (int i = 0; i < 2; ++i) {
    const auto piece = [&](double x) {
      return grad[i] * (x - u0[i]) + 0.5 * std::abs(x) + 0.5 * (x - u0[i]) * (x - u0[i]);
    };
    const double expect = golden_min(piece, -5.0, 5.0);
    CHECK(got[i] == doctest::Approx(expect).epsilon(1e-8).scale(1.0));
  }
  CHECK(got[0] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(got[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("pg step with kappa 0 is a preconditioned gradient step") {
  RandomStream rs(21);
  Matrix q = rs.gaussian_matrix(5, 3);
  Vector b = rs.gaussian_vector(5);
  Vector diag(3);
  diag << 1.0, 2.0, 4.0;
  const Metric g(diag, 1.0, 4.0);

  PgOperator::Options opts;
  opts.kappa = 0.0;
  opts.gamma = 0.05;
  PgOperator pg(q, b, g, opts);

  const ParamVector w = empty_params();
  Vector u = rs.gaussian_vector(3);
  const Vector expect = u - 0.05 * (q.transpose() * (q * u - b)).cwiseQuotient(diag);
  CHECK((pg.apply(u, w) - expect).norm() < 1e-14);

  // At the least-squares minimizer the step is a no-op.
  const Vector u_star = (q.transpose() * q).ldlt().solve(q.transpose() * b);
  CHECK((pg.apply(u_star, w) - u_star).norm() < 1e-10);
}

TEST_CASE("pg step rejects invalid kappa and gamma") {
  LayoutBuilder lb;
  auto kappa = std::make_shared<ParamSegment>(lb.add("kappa", 1));
  auto gamma = std::make_shared<ParamSegment>(lb.add("gamma", 1));
  auto layout = lb.build();

  PgOperator::Options opts;
  opts.kappa_slot = kappa;
  opts.gamma_slot = gamma;
  PgOperator pg(Matrix::Identity(2, 2), vec2(1.0, 1.0), Metric::identity(2), opts);

  Vector bad_gamma(2);
  bad_gamma << 0.1, -1.0;
  CHECK_THROWS_AS(pg.apply(Vector::Zero(2), ParamVector(layout, bad_gamma)),
                  std::invalid_argument);
  Vector bad_kappa(2);
  bad_kappa << -0.1, 1.0;
  CHECK_THROWS_AS(pg.apply(Vector::Zero(2), ParamVector(layout, bad_kappa)),
                  std::invalid_argument);
}

TEST_CASE("pg vjp matches finite differences") {
  RandomStream rs(77);
  LayoutBuilder lb;
  auto kappa = std::make_shared<ParamSegment>(lb.add("kappa", 1));
  auto gamma = std::make_shared<ParamSegment>(lb.add("gamma", 1));
  auto layout = lb.build();
  Vector theta(2);
  theta << 0.3, 0.2;
  const ParamVector w(layout, theta);

  PgOperator::Options opts;
  opts.kappa_slot = kappa;
  opts.gamma_slot = gamma;
  Matrix q = rs.gaussian_matrix(6, 4);
  PgOperator pg(q, rs.gaussian_vector(6), Metric::identity(4), opts);

  for (int trial = 0; trial < 5; ++trial) {
    Vector u = rs.gaussian_vector(4);
    if (pg.kink_gap(u, w) < 1e-4) continue;  // keep the check generic
    check_vjp(pg, u, w, rs);
  }
}

TEST_CASE("lalm step keeps KKT points fixed and updates multipliers linearly") {
  RandomStream rs(8);
  Matrix q = rs.gaussian_matrix(3, 2);
  // One sample; threshold weights zero so the prox is the identity.
  LalmOperator::Options opts;
  opts.kappa = 0.0;
  opts.beta = 1.0;
  // tau_n = 1/sigma stays nonzero, so zero the noise block to sit at a KKT point.
  Vector x_u = rs.gaussian_vector(2);
  Matrix b = q * x_u;
  LalmOperator lalm(q, b, opts);

  // State (u, u_n=0, lambda=0) with A x = y: the u-block must not move and
  // lambda stays zero.
  Vector z = Vector::Zero(lalm.dim());
  z.head(2) = x_u;
  const Vector z_next = lalm.apply(z, empty_params());
  CHECK((z_next.head(2) - x_u).norm() < 1e-12);
  CHECK(z_next.tail(3).norm() < 1e-12);

  // Multiplier formula: lambda+ = lambda + beta (A x+ - y).
  Vector z2 = rs.gaussian_vector(lalm.dim());
  const Vector z2_next = lalm.apply(z2, empty_params());
  const Vector xu_next = z2_next.head(2);
  const Vector xn_next = z2_next.segment(2, 3);
  const Vector lm = z2.tail(3);
  const Vector expect_lm = lm + (q * xu_next + xn_next - b);
  CHECK((z2_next.tail(3) - expect_lm).norm() < 1e-12);
}

TEST_CASE("lalm primal update solves the proximal subproblem") {
  RandomStream rs(9);
  const Eigen::Index n = 2, m = 1;
  Matrix q = rs.gaussian_matrix(m, n);
  Matrix b = rs.gaussian_matrix(m, 1);

  LayoutBuilder lb;
  auto kappa = std::make_shared<ParamSegment>(lb.add("kappa", 1));
  auto layout = lb.build();
  Vector theta(1);
  theta << 0.7;
  const ParamVector w(layout, theta);

  LalmOperator::Options opts;
  opts.kappa_slot = kappa;
  opts.beta = 0.8;
  LalmOperator lalm(q, b, opts);
  const double sigma = lalm.sigma();
  const double beta = lalm.beta();

  Vector z = rs.gaussian_vector(lalm.dim());
  const Vector z_next = lalm.apply(z, w);
  const Vector x_next = z_next.head(n + m);

  // Independent route: proximal gradient on the subproblem
  //   tau.|x| + <lambda, Ax - y> + beta/2 |Ax - y|^2 + 1/2 |x - x_k|^2_G
  // with G = sigma I - beta A^T A, run far past convergence with a
  // conservative step.
  Matrix a(m, n + m);
  a.leftCols(n) = q;
  a.rightCols(m) = Matrix::Identity(m, m);
  const Vector x_k = z.head(n + m);
  const Vector lambda = z.tail(m);
  const Vector y = b.col(0);
  Vector tau(n + m);
  tau.head(n).setConstant(0.7);
  tau.tail(m).setConstant(1.0);
  const Matrix g_mat = sigma * Matrix::Identity(n + m, n + m) - beta * a.transpose() * a;

  Vector x = Vector::Zero(n + m);
  const double step = 1.0 / (2.0 * sigma);
  for (int it = 0; it < 20000; ++it) {
    const Vector smooth_grad =
        a.transpose() * lambda + beta * a.transpose() * (a * x - y) + g_mat * (x - x_k);
    x = soft_threshold(x - step * smooth_grad, step * tau);
  }
  CHECK((x_next - x).norm() < 1e-8);
}

TEST_CASE("lalm rejects an indefinite proximal metric") {
  RandomStream rs(10);
  Matrix q = rs.gaussian_matrix(3, 2);
  LalmOperator::Options opts;
  opts.sigma = 0.1;  // far below beta |A|^2
  CHECK_THROWS_AS(LalmOperator(q, rs.gaussian_matrix(3, 1), opts), std::invalid_argument);
}

TEST_CASE("lalm vjp matches finite differences") {
  RandomStream rs(13);
  LayoutBuilder lb;
  auto kappa = std::make_shared<ParamSegment>(lb.add("kappa", 1));
  auto layout = lb.build();
  Vector theta(1);
  theta << 0.4;
  const ParamVector w(layout, theta);

  LalmOperator::Options opts;
  opts.kappa_slot = kappa;
  LalmOperator lalm(rs.gaussian_matrix(3, 2), rs.gaussian_matrix(3, 1), opts);

  for (int trial = 0; trial < 5; ++trial) {
    Vector z = rs.gaussian_vector(lalm.dim());
    if (lalm.kink_gap(z, w) < 1e-4) continue;
    check_vjp(lalm, z, w, rs);
  }
}

TEST_CASE("gd step on quadratics") {
  // f = 1/2 |u - omega|^2 with eta = 1 jumps straight to omega.
  LayoutBuilder lb;
  ParamSegment omega_slot = lb.add("omega", 2);
  auto layout = lb.build();
  Vector target(2);
  target << 0.7, -1.1;
  const ParamVector w(layout, target);

  auto quad = std::make_shared<QuadraticObjective>(Matrix::Identity(2, 2), omega_slot);
  GdOperator gd(quad, 1.0, Metric::identity(2));
  CHECK((gd.apply(vec2(5, 5), w) - target).norm() < 1e-14);

  // Contraction factor for H = diag(2,4), eta = 1/4.
  Matrix h = Matrix::Zero(2, 2);
  h(0, 0) = 2;
  h(1, 1) = 4;
  auto quad2 = std::make_shared<QuadraticObjective>(h, omega_slot);
  GdOperator gd2(quad2, 0.25, Metric::identity(2));
  CHECK(gd2.contraction_bound(w) == doctest::Approx(0.5).epsilon(1e-12));

  RandomStream rs(17);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Vector a = rs.gaussian_vector(2), b = rs.gaussian_vector(2);
    worst = std::max(worst, (gd2.apply(a, w) - gd2.apply(b, w)).norm() / (a - b).norm());
  }
  CHECK(worst <= 0.5 + 1e-12);

  CHECK_THROWS_AS(GdOperator(quad, 0.0, Metric::identity(2)), std::invalid_argument);
}

TEST_CASE("objective gradients match finite differences of their values") {
  RandomStream rs(19);

  LayoutBuilder lb;
  ParamSegment omega_slot = lb.add("omega", 3);
  auto layout = lb.build();
  const ParamVector w(layout, rs.gaussian_vector(3));

  Matrix h = rs.gaussian_matrix(3, 3);
  h = Matrix(h.transpose() * h) + 3.0 * Matrix::Identity(3, 3);
  QuadraticObjective quad(h, omega_slot);

  LayoutBuilder lb2;
  ParamSegment logit_slot = lb2.add("logits", 6);
  auto layout2 = lb2.build();
  const ParamVector w2(layout2, rs.gaussian_vector(6));
  WeightedRidgeObjective ridge(rs.gaussian_matrix(6, 3), rs.gaussian_vector(6), 0.1, logit_slot);

  const auto check_grad = [&](const LowerObjective& f, const ParamVector& params) {
    const Vector u = rs.gaussian_vector(3);
    const Vector g = f.grad(u, params);
    for (int i = 0; i < 3; ++i) {
      Vector up = u, um = u;
      up[i] += 1e-6;
      um[i] -= 1e-6;
      const double fd = (f.value(up, params) - f.value(um, params)) / 2e-6;
      CHECK(g[i] == doctest::Approx(fd).epsilon(1e-7).scale(1.0));
    }
  };
  check_grad(quad, w);
  check_grad(ridge, w2);

  // Second-order products against finite differences of the gradient.
  const Vector u = rs.gaussian_vector(3);
  const Vector cot = rs.gaussian_vector(3);
  const OperatorVjp gv = ridge.grad_vjp(u, w2, cot);
  for (int i = 0; i < 6; ++i) {
    Vector wp = w2.flat, wm = w2.flat;
    wp[i] += 1e-6;
    wm[i] -= 1e-6;
    const double fd =
        (cot.dot(ridge.grad(u, w2.with(wp))) - cot.dot(ridge.grad(u, w2.with(wm)))) / 2e-6;
    CHECK(gv.wrt_w[i] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("net with zero weights reduces to relu of the bias") {
  const Eigen::Index n = 3;
  LayoutBuilder lb;
  std::vector<ParamSegment> ws = {lb.add("w0", n * n)};
  std::vector<ParamSegment> bs = {lb.add("b0", n)};
  auto layout = lb.build();

  Vector theta = Vector::Zero(layout->size());
  theta.segment(bs[0].offset, n) << 1.0, -2.0, 0.5;
  const ParamVector w(layout, theta);

  NetOperator net(n, 1, 1, Metric::identity(n), ws, bs);
  net.refresh(w);
  Vector expect(3);
  expect << 1.0, 0.0, 0.5;
  CHECK((net.apply(Vector::Ones(3), w) - expect).norm() == 0.0);
}

TEST_CASE("net normalizes a doubled identity back to the identity") {
  const Eigen::Index n = 3;
  LayoutBuilder lb;
  std::vector<ParamSegment> ws = {lb.add("w0", n * n)};
  std::vector<ParamSegment> bs = {lb.add("b0", n)};
  auto layout = lb.build();

  Matrix w0 = 2.0 * Matrix::Identity(n, n);
  Vector theta = Vector::Zero(layout->size());
  theta.head(n * n) = Eigen::Map<const Vector>(w0.data(), n * n);
  const ParamVector w(layout, theta);

  NetOperator net(n, 1, 1, Metric::identity(n), ws, bs);
  net.refresh(w);
  CHECK(net.weight_norms()[0] == doctest::Approx(2.0).epsilon(1e-10));

  Vector u(3);
  u << 0.3, 1.2, 0.05;  // positive entries pass the relu unchanged
  CHECK((net.apply(u, w) - u).norm() < 1e-10);
}

TEST_CASE("normalized net is 1-lipschitz in the metric norm") {
  const Eigen::Index n = 4;
  RandomStream rs(23);
  LayoutBuilder lb;
  std::vector<ParamSegment> ws, bs;
  for (int l = 0; l < 2; ++l) {
    ws.push_back(lb.add("w" + std::to_string(l), n * n));
    bs.push_back(lb.add("b" + std::to_string(l), n));
  }
  auto layout = lb.build();
  Vector theta = rs.gaussian_vector(layout->size());
  const ParamVector w(layout, theta);

  Vector diag(n);
  diag << 0.5, 1.0, 2.0, 1.5;
  const Metric g(diag, 0.5, 2.0);
  NetOperator net(n, 2, 1, g, ws, bs);
  net.refresh(w);

  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const Vector a = 2.0 * rs.gaussian_vector(n), b = 2.0 * rs.gaussian_vector(n);
    const double den = g.norm(a - b);
    if (den == 0) continue;
    worst = std::max(worst, g.norm(net.apply(a, w) - net.apply(b, w)) / den);
  }
  CHECK(worst <= 1.0 + 1e-8);
}

TEST_CASE("net vjp matches finite differences") {
  const Eigen::Index n = 3;
  RandomStream rs(29);
  LayoutBuilder lb;
  std::vector<ParamSegment> ws, bs;
  for (int l = 0; l < 2; ++l) {
    ws.push_back(lb.add("w" + std::to_string(l), n * n));
    bs.push_back(lb.add("b" + std::to_string(l), n));
  }
  auto layout = lb.build();
  const ParamVector w(layout, rs.gaussian_vector(layout->size()));

  Vector diag(n);
  diag << 0.5, 1.0, 2.0;
  NetOperator net(n, 2, 2, Metric(Vector(diag.replicate(2, 1)), 0.5, 2.0), ws, bs);
  net.refresh(w);

  for (int trial = 0; trial < 5; ++trial) {
    const Vector u = rs.gaussian_vector(net.dim());
    if (net.kink_gap(u, w) < 1e-4) continue;
    check_vjp(net, u, w, rs);
  }

  CHECK_THROWS_AS(net.apply(Vector::Zero(5), w), std::invalid_argument);
}

TEST_CASE("composition applies the inner operator first") {
  const Metric g = Metric::identity(2);
  const ParamVector w = empty_params();
  auto scale = std::make_shared<ScalingOperator>(0.5, g);
  auto shift = std::make_shared<ConstantOperator>(vec2(1.0, 1.0), g);
  auto ident = std::make_shared<IdentityOperator>(g);

  ComposedOperator outer_only(scale, ident);
  ComposedOperator inner_only(ident, scale);
  const Vector u = vec2(4.0, -2.0);
  CHECK((outer_only.apply(u, w) - scale->apply(u, w)).norm() == 0.0);
  CHECK((inner_only.apply(u, w) - scale->apply(u, w)).norm() == 0.0);
  CHECK((compose_apply(*scale, *shift, u, w) - vec2(0.5, 0.5)).norm() == 0.0);

  auto other_metric = std::make_shared<IdentityOperator>(Metric::uniform(2, 2.0));
  CHECK_THROWS_AS(ComposedOperator(scale, other_metric), std::invalid_argument);
}

TEST_CASE("composed lipschitz factor is bounded by the product of the factors") {
  RandomStream rs(31);
  const Metric g = Metric::identity(3);
  auto a = std::make_shared<ScalingOperator>(0.8, g);
  auto b = std::make_shared<ScalingOperator>(-0.6, g);
  ComposedOperator comp(a, b);
  const ParamVector w = empty_params();
  const double la = estimate_lipschitz(*a, w, 500, 1);
  const double lb2 = estimate_lipschitz(*b, w, 500, 2);
  const double lc = estimate_lipschitz(comp, w, 500, 3);
  CHECK(lc <= la * lb2 + 1e-8);
}

TEST_CASE("estimate_lipschitz on maps with known factors") {
  const Metric g = Metric::identity(4);
  const ParamVector w = empty_params();
  CHECK(estimate_lipschitz(IdentityOperator(g), w, 100, 5) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(estimate_lipschitz(ScalingOperator(0.5, g), w, 100, 5) ==
        doctest::Approx(0.5).epsilon(1e-12));
  // Deterministic in the seed.
  CHECK(estimate_lipschitz(ScalingOperator(0.3, g), w, 50, 9) ==
        estimate_lipschitz(ScalingOperator(0.3, g), w, 50, 9));
  CHECK_THROWS_AS(estimate_lipschitz(IdentityOperator(g), w, 1, 5), std::invalid_argument);
}

TEST_CASE("pg and lalm returned points minimize their subproblem objectives") {
  RandomStream rs(37);

  // PG subproblem value at the returned point vs random perturbations.
  Matrix q = rs.gaussian_matrix(5, 3);
  Vector b = rs.gaussian_vector(5);
  PgOperator::Options po;
  po.kappa = 0.4;
  po.gamma = 0.2;
  PgOperator pg(q, b, Metric::identity(3), po);
  const ParamVector w = empty_params();
  const Vector u = rs.gaussian_vector(3);
  const Vector u_next = pg.apply(u, w);
  const Vector grad = q.transpose() * (q * u - b);
  const auto pg_objective = [&](const Vector& x) {
    return grad.dot(x - u) + 0.4 * x.lpNorm<1>() + (x - u).squaredNorm() / (2.0 * 0.2);
  };
  const double best = pg_objective(u_next);
  for (int trial = 0; trial < 1000; ++trial)
    CHECK(best <= pg_objective(u_next + 0.3 * rs.gaussian_vector(3)) + 1e-12);

  // LALM subproblem value at the returned primal point.
  Matrix q2 = rs.gaussian_matrix(2, 2);
  Matrix b2 = rs.gaussian_matrix(2, 1);
  LalmOperator::Options lo;
  lo.kappa = 0.6;
  lo.beta = 1.2;
  LalmOperator lalm(q2, b2, lo);
  Matrix a(2, 4);
  a.leftCols(2) = q2;
  a.rightCols(2) = Matrix::Identity(2, 2);
  const Matrix g_mat = lalm.sigma() * Matrix::Identity(4, 4) - lo.beta * a.transpose() * a;
  const Vector z = rs.gaussian_vector(lalm.dim());
  const Vector x_k = z.head(4);
  const Vector lambda = z.tail(2);
  const Vector x_next = lalm.apply(z, w).head(4);
  Vector tau(4);
  tau << 0.6, 0.6, 1.0, 1.0;
  const auto lalm_objective = [&](const Vector& x) {
    const Vector resid = a * x - b2.col(0);
    return tau.cwiseProduct(x.cwiseAbs()).sum() + lambda.dot(resid) +
           0.5 * lo.beta * resid.squaredNorm() + 0.5 * (x - x_k).dot(g_mat * (x - x_k));
  };
  const double best2 = lalm_objective(x_next);
  for (int trial = 0; trial < 1000; ++trial)
    CHECK(best2 <= lalm_objective(x_next + 0.3 * rs.gaussian_vector(4)) + 1e-12);
}

TEST_CASE("lalm is non-expansive in its energy norm") {
  RandomStream rs(41);
  Matrix q = rs.gaussian_matrix(4, 3);
  LalmOperator::Options opts;
  opts.kappa = 0.5;
  LalmOperator lalm(q, rs.gaussian_matrix(4, 1), opts);
  const double factor = estimate_lipschitz(lalm, empty_params(), 2000, 43);
  CHECK(factor <= 1.0 + 1e-8);
}
