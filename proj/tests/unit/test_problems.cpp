#include <doctest.h>

#include <cmath>

#include "hodl/hypergrad.hpp"
#include "hodl/problems.hpp"
#include "hodl/rng.hpp"
#include "hodl/solver.hpp"

using namespace hodl;

TEST_CASE("sparse coding generator: shapes, column norms, determinism") {
  ProblemInstance a =
      gen_sparse_coding(500, 250, 0.1, 0.01, 1, SparseVariant::regularized, 1126, {});
  REQUIRE(a.sparse.has_value());
  CHECK(a.sparse->q.rows() == 500);
  CHECK(a.sparse->q.cols() == 250);
  for (Eigen::Index j = 0; j < 250; ++j)
    CHECK(std::abs(a.sparse->q.col(j).norm() - 1.0) <= 1e-12);

  ProblemInstance b =
      gen_sparse_coding(500, 250, 0.1, 0.01, 1, SparseVariant::regularized, 1126, {});
  CHECK((a.sparse->q - b.sparse->q).norm() == 0.0);          // bitwise
  CHECK((a.sparse->b_train - b.sparse->b_train).norm() == 0.0);

  CHECK_THROWS_AS(gen_sparse_coding(10, 5, 0.0, 0.01, 1, SparseVariant::regularized, 1, {}),
                  std::invalid_argument);
  CHECK_THROWS_AS(gen_sparse_coding(10, 5, 0.1, -1.0, 1, SparseVariant::regularized, 1, {}),
                  std::invalid_argument);
}

TEST_CASE("sparse coding support statistics match the binomial law") {
  // 10000 samples of Bernoulli(0.1) support over n = 250 coordinates:
  // mean support 25, sd of the mean = sqrt(250 * .1 * .9 / 10000).
  ProblemInstance p =
      gen_sparse_coding(4, 250, 0.1, 0.0, 10000, SparseVariant::regularized, 77, {});
  double total = 0.0;
  const Matrix& codes = p.sparse->codes_train;
  for (Eigen::Index j = 0; j < codes.cols(); ++j)
    for (Eigen::Index i = 0; i < codes.rows(); ++i)
      if (codes(i, j) != 0.0) total += 1.0;
  const double mean = total / 10000.0;
  const double se = std::sqrt(250 * 0.1 * 0.9 / 10000.0);
  CHECK(std::abs(mean - 25.0) <= 3.0 * se);
}

TEST_CASE("quadratic oracle closed forms") {
  Matrix h = Matrix::Zero(2, 2);
  h(0, 0) = 2;
  h(1, 1) = 4;
  Vector c(2);
  c << 1, 1;
  ProblemInstance p = quadratic_oracle_from(h, c);
  REQUIRE(p.oracle.has_value());

  Vector omega(2);
  omega << 2, 4;
  CHECK((p.oracle->u_star(omega) - Vector::Ones(2)).norm() < 1e-14);
  CHECK((p.oracle->omega_star - omega).norm() < 1e-14);
  CHECK(p.oracle->phi(p.oracle->omega_star) == doctest::Approx(0.0).scale(1.0).epsilon(1e-16));
}

TEST_CASE("oracle gd iterates obey the contraction bound") {
  ProblemInstance p = quadratic_oracle(6, 811);
  const Vector omega = p.omega_init.flat;
  const Vector u_star = p.oracle->u_star(omega);
  const double rho = p.oracle->rho;

  Vector u = Vector::Zero(6);
  const double e0 = (u - u_star).norm();
  for (int k = 1; k <= 40; ++k) {
    u = p.op.inner().apply(u, p.omega_init);  // D alone, no averaging
    CHECK((u - u_star).norm() <= std::pow(rho, k) * e0 * (1 + 1e-10));
  }
}

TEST_CASE("oracle analytic gradient agrees with finite differences of analytic phi") {
  ProblemInstance p = quadratic_oracle(5, 812);
  RandomStream rs(813);
  const Vector omega = rs.gaussian_vector(5);
  const Vector grad = p.oracle->grad_phi(omega);
  for (int i = 0; i < 5; ++i) {
    Vector op = omega, om = omega;
    op[i] += 1e-6;
    om[i] -= 1e-6;
    const double fd = (p.oracle->phi(op) - p.oracle->phi(om)) / 2e-6;
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-8).scale(1e-3));
  }
}

TEST_CASE("subspace case limits") {
  Vector target(2);
  target << 1, 1;
  ProblemInstance p = subspace_case(2, 1, target);
  Vector u0(2);
  u0 << 3, 4;

  // Simplified mode: the off-subspace coordinate decays geometrically and
  // the on-subspace coordinate never moves. Independent scalar recursion:
  // y <- (1 - alpha) y.
  SolverConfig cfg;
  cfg.mode = InnerMode::simplified;
  cfg.inner_steps = 120;
  const InnerTrace trace = inner_loop(p.op, *p.loss, p.omega_init, u0, cfg, p.g_lb);
  double y = 4.0;
  for (int k = 0; k < 120; ++k) y *= 0.5;
  CHECK(trace.iterates.back()[0] == 3.0);
  CHECK(trace.iterates.back()[1] == doctest::Approx(y).scale(1.0).epsilon(1e-12));
  CHECK((p.subspace->simplified_limit(u0) - Vector(Vector::Unit(2, 0) * 3.0)).norm() == 0.0);

  // Aggregated mode ends closer to the constrained minimizer (1, 0).
  SolverConfig agg = cfg;
  agg.mode = InnerMode::aggregated;
  agg.mu = 0.1;
  agg.inner_steps = 2000;
  const InnerTrace at = inner_loop(p.op, *p.loss, p.omega_init, u0, agg, p.g_lb);
  const Vector solution = p.subspace->solution;
  CHECK((at.iterates.back() - solution).norm() <
        (trace.iterates.back() - solution).norm());

  // Starting at the solution, both modes stay there.
  const InnerTrace fixed_s = inner_loop(p.op, *p.loss, p.omega_init, solution, cfg, p.g_lb);
  CHECK((fixed_s.iterates.back() - solution).norm() < 1e-12);
  const InnerTrace fixed_a = inner_loop(p.op, *p.loss, p.omega_init, solution, agg, p.g_lb);
  CHECK((fixed_a.iterates.back() - solution).norm() < 1e-12);
}

TEST_CASE("hypercleaning corruption bookkeeping") {
  ProblemInstance p = gen_hypercleaning(5, 100, 40, 0.3, 909);
  REQUIRE(p.hyperclean.has_value());
  CHECK(p.hyperclean->corrupt_indices.size() == 30);

  ProblemInstance q = gen_hypercleaning(5, 100, 40, 0.3, 909);
  CHECK(p.hyperclean->corrupt_indices == q.hyperclean->corrupt_indices);
  CHECK((p.hyperclean->y_train - q.hyperclean->y_train).norm() == 0.0);

  // Clean-subset least squares recovers the planted model well inside the
  // noise scale.
  const Vector ols = p.hyperclean->clean_ols();
  CHECK((ols - p.hyperclean->planted_u).norm() <= 3.0 * p.hyperclean->noise);

  CHECK_THROWS_AS(gen_hypercleaning(5, 100, 40, 1.0, 1), std::invalid_argument);
}

TEST_CASE("generated operators respect their advertised lipschitz factors") {
  struct Case {
    ProblemInstance prob;
    const char* name;
  };
  std::vector<Case> cases;
  cases.push_back({gen_sparse_coding(16, 8, 0.2, 0.01, 2, SparseVariant::regularized, 21, {}),
                   "pg"});
  {
    SparseCodingOptions o;
    o.with_net = true;
    cases.push_back({gen_sparse_coding(16, 8, 0.2, 0.01, 2, SparseVariant::regularized, 22, o),
                     "pg+net"});
  }
  cases.push_back({gen_sparse_coding(10, 5, 0.2, 0.01, 2, SparseVariant::constrained, 23, {}),
                   "lalm"});
  cases.push_back({quadratic_oracle(6, 24), "gd_quadratic"});
  cases.push_back({gen_hypercleaning(4, 20, 20, 0.25, 25), "gd_ridge"});
  cases.push_back({subspace_case(3, 1, Vector::Ones(3)), "projection"});

  for (const auto& c : cases) {
    const double declared = c.prob.op.inner().contraction_bound(c.prob.omega_init);
    const double observed =
        estimate_lipschitz(c.prob.op.inner(), c.prob.omega_init, 10000, 1234);
    INFO(c.name, ": declared=", declared, " observed=", observed);
    CHECK(declared <= 1.0 + 1e-12);
    CHECK(observed <= declared + 1e-8);
  }
}
