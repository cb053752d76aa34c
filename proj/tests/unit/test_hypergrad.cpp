#include <doctest.h>

#include <cmath>

#include "hodl/hypergrad.hpp"
#include "hodl/problems.hpp"
#include "hodl/rng.hpp"

using namespace hodl;

TEST_CASE("a loss depending only on omega yields its direct gradient") {
  LayoutBuilder lb;
  lb.add("theta", 3);
  auto layout = lb.build();
  Vector theta(3);
  theta << 0.3, -1.2, 2.0;
  const ParamVector w(layout, theta);

  KmOperator t(std::make_shared<ScalingOperator>(0.5, Metric::identity(4)), 0.5);
  OmegaRegLoss loss;
  SolverConfig cfg;
  cfg.inner_steps = 12;
  const Hypergradient hg = hypergradient(t, loss, w, Vector::Ones(4), cfg);
  CHECK((hg.wrt_omega - theta).norm() == 0.0);
  CHECK(hg.phi_value == doctest::Approx(0.5 * theta.squaredNorm()).epsilon(1e-15));
}

TEST_CASE("zero inner steps reduce to the loss at the start point") {
  ProblemInstance prob = quadratic_oracle(4, 300);
  SolverConfig cfg;
  cfg.inner_steps = 0;
  const Hypergradient hg =
      hypergradient(prob.op, *prob.loss, prob.omega_init, prob.u_init, cfg);
  CHECK(hg.phi_value ==
        doctest::Approx(prob.loss->value(prob.u_init, prob.omega_init)).epsilon(1e-15));
  CHECK(hg.wrt_omega.norm() == 0.0);  // the mse loss has no direct omega term
}

TEST_CASE("oracle hypergradient approaches the analytic gradient as K grows") {
  ProblemInstance prob = quadratic_oracle(6, 303);
  const Vector analytic = prob.oracle->grad_phi(prob.omega_init.flat);

  double prev = kInf;
  for (int k : {10, 20, 50, 100, 200}) {
    SolverConfig cfg;
    cfg.inner_steps = k;
    const Hypergradient hg =
        hypergradient(prob.op, *prob.loss, prob.omega_init, prob.u_init, cfg);
    const double err = (hg.wrt_omega - analytic).norm() / analytic.norm();
    CHECK(err < prev);  // monotone in K on this problem
    prev = err;
    if (k == 200) CHECK(err <= 1e-4);
  }
}

TEST_CASE("finite differences are exact on losses polynomial in omega") {
  // phi_K is 1/2 |w|^2 when the loss ignores the state, so central
  // differences are exact up to rounding.
  LayoutBuilder lb;
  lb.add("theta", 2);
  auto layout = lb.build();
  Vector theta(2);
  theta << 1.5, -0.4;
  const ParamVector w(layout, theta);

  KmOperator t(std::make_shared<IdentityOperator>(Metric::identity(2)), 0.5);
  OmegaRegLoss loss;
  SolverConfig cfg;
  cfg.inner_steps = 5;
  const Vector fd = fd_hypergradient(t, loss, w, Vector::Zero(2), cfg, 1e-5);
  CHECK((fd - theta).norm() < 1e-9);
}

TEST_CASE("gradient check formula") {
  Vector a(2), b(2);
  a << 1, 0;
  b << 0, 1;
  const GradientCheck same = gradient_check(a, a, 1e-12);
  CHECK(same.rel_error == 0.0);
  CHECK(same.pass);

  const GradientCheck far = gradient_check(a, b, 0.1);
  CHECK(far.rel_error == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK_FALSE(far.pass);

  const GradientCheck zeros = gradient_check(Vector::Zero(3), Vector::Zero(3), 1e-12);
  CHECK(zeros.rel_error == 0.0);
  CHECK(zeros.pass);

  CHECK_THROWS_AS(gradient_check(Vector::Zero(2), Vector::Zero(3), 0.1), std::invalid_argument);
}

TEST_CASE("hypergradient is deterministic") {
  ProblemInstance prob =
      gen_sparse_coding(10, 5, 0.3, 0.01, 2, SparseVariant::regularized, 71, {});
  SolverConfig cfg;
  cfg.mode = InnerMode::aggregated;
  cfg.mu = 0.15;
  cfg.inner_steps = 18;
  const Hypergradient a =
      hypergradient(prob.op, *prob.loss, prob.omega_init, prob.u_init, cfg);
  const Hypergradient b =
      hypergradient(prob.op, *prob.loss, prob.omega_init, prob.u_init, cfg);
  CHECK(a.phi_value == b.phi_value);
  CHECK((a.wrt_omega - b.wrt_omega).norm() == 0.0);  // bitwise
}

TEST_CASE("reverse mode matches finite differences on every shipped problem") {
  struct Case {
    ProblemInstance prob;
    InnerMode mode;
    int steps;
  };
  std::vector<Case> cases;
  cases.push_back({quadratic_oracle(5, 404), InnerMode::aggregated, 15});
  {
    SparseCodingOptions o;
    o.with_net = true;
    cases.push_back({gen_sparse_coding(14, 7, 0.25, 0.01, 2, SparseVariant::regularized, 405, o),
                     InnerMode::aggregated, 15});
  }
  cases.push_back({gen_sparse_coding(8, 4, 0.3, 0.01, 2, SparseVariant::constrained, 406, {}),
                   InnerMode::simplified, 15});
  cases.push_back({gen_hypercleaning(4, 10, 10, 0.3, 407), InnerMode::aggregated, 15});

  for (auto& c : cases) {
    SolverConfig cfg;
    cfg.mode = c.mode;
    cfg.mu = 0.1;
    cfg.inner_steps = c.steps;
    c.prob.op.refresh(c.prob.omega_init);
    const Hypergradient ad =
        hypergradient(c.prob.op, *c.prob.loss, c.prob.omega_init, c.prob.u_init, cfg);
    const Vector fd =
        fd_hypergradient(c.prob.op, *c.prob.loss, c.prob.omega_init, c.prob.u_init, cfg, 1e-5);
    const GradientCheck gc = gradient_check(ad.wrt_omega, fd, 1e-4);
    INFO(c.prob.kind, " rel_error=", gc.rel_error);
    CHECK(gc.pass);
  }
}

TEST_CASE("hypergradient respects an active box projection") {
  // Clamp the state into a box the iterates actually hit, then compare
  // against finite differences; the projection cotangent must zero the
  // clamped coordinates for the two to agree.
  ProblemInstance prob = quadratic_oracle(4, 505);
  SolverConfig cfg;
  cfg.inner_steps = 12;
  cfg.mode = InnerMode::aggregated;
  cfg.mu = 0.2;
  cfg.u_box = Box::uniform(4, -0.05, 0.05);

  const Hypergradient ad =
      hypergradient(prob.op, *prob.loss, prob.omega_init, prob.u_init, cfg);
  const Vector fd =
      fd_hypergradient(prob.op, *prob.loss, prob.omega_init, prob.u_init, cfg, 1e-6);
  const GradientCheck gc = gradient_check(ad.wrt_omega, fd, 1e-5);
  INFO("rel_error=", gc.rel_error);
  CHECK(gc.pass);
}
