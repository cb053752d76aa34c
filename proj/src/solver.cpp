#include "hodl/solver.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "hodl/errors.hpp"
#include "hodl/hypergrad.hpp"
#include "hodl/problems.hpp"

namespace hodl {

double SolverConfig::resolve_s(const Metric& g, double loss_smoothness) const {
  if (s > 0.0) return s;
  if (loss_smoothness > 0.0) return 0.5 * g.lower_bound() / loss_smoothness;
  return 0.5 * g.lower_bound();
}

double step_size(int k, double s) {
  if (k < 1) throw std::invalid_argument("step_size: k must be >= 1");
  if (!(s > 0.0)) throw std::invalid_argument("step_size: s must be positive");
  return s / static_cast<double>(k + 1);
}

namespace {

void validate_inner_cfg(const SolverConfig& cfg, const KmOperator& t, const LossFunction& loss,
                        double s_eff) {
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
    throw std::invalid_argument("SolverConfig: alpha must lie in (0,1)");
  if (cfg.mode == InnerMode::aggregated && !(cfg.mu >= 0.0 && cfg.mu < 1.0))
    throw std::invalid_argument("SolverConfig: mu must lie in [0,1)");
  if (cfg.inner_steps < 0) throw std::invalid_argument("SolverConfig: negative inner step count");
  const double l_ell = loss.smoothness();
  if (cfg.mode == InnerMode::aggregated && cfg.mu > 0.0 && l_ell > 0.0 &&
      !(s_eff < t.metric().lower_bound() / l_ell))
    throw std::invalid_argument("SolverConfig: s must stay below lower_bound(G) / L");
}

}  // namespace

UnrollResult unroll(const KmOperator& t, const LossFunction& loss, const ParamVector& w,
                    const Vector& u0, const SolverConfig& cfg, const Metric& g_lb,
                    bool want_tape) {
  if (u0.size() != t.dim()) throw std::invalid_argument("unroll: u0 dimension mismatch");
  const double s_eff = cfg.resolve_s(t.metric(), loss.smoothness());
  validate_inner_cfg(cfg, t, loss, s_eff);
  // mu == 0 takes the simplified path exactly, so the two modes coincide.
  const bool aggregated = cfg.mode == InnerMode::aggregated && cfg.mu > 0.0;
  const bool project = cfg.u_box.has_value();
  const Metric& g = t.metric();

  UnrollResult out;
  out.tape.mode = aggregated ? InnerMode::aggregated : InnerMode::simplified;
  out.tape.mu = aggregated ? cfg.mu : 0.0;
  out.tape.u_box = cfg.u_box;

  auto& trace = out.trace;
  trace.iterates.reserve(static_cast<std::size_t>(cfg.inner_steps) + 1);
  trace.iterates.push_back(u0);
  trace.loss_values.push_back(loss.value(u0, w));

  Vector u = u0;
  for (int k = 1; k <= cfg.inner_steps; ++k) {
    if (want_tape)
      out.tape.min_kink_gap = std::min(out.tape.min_kink_gap, t.kink_gap(u, w));

    const Vector v_l = t.apply(u, w);
    // T(u^{k-1}) doubles as the residual of the previous iterate.
    trace.residuals.push_back(g_lb.norm(u - v_l));

    Vector combined;
    double sk = 0.0;
    if (aggregated) {
      sk = step_size(k, s_eff);
      const Vector v_u = u - sk * g.inv_apply(loss.grad_u(u, w));
      combined = cfg.mu * v_u + (1.0 - cfg.mu) * v_l;
    } else {
      combined = v_l;
    }

    Vector next = project ? project_box_g(combined, *cfg.u_box, g) : combined;
    if (!all_finite(next))
      throw NumericError("inner loop: non-finite iterate at step " + std::to_string(k));

    if (want_tape) {
      if (project)
        out.tape.min_kink_gap = std::min(out.tape.min_kink_gap, cfg.u_box->min_gap(combined));
      out.tape.pre_projection.push_back(std::move(combined));
      out.tape.step_sizes.push_back(sk);
    }
    u = std::move(next);
    trace.iterates.push_back(u);
    trace.loss_values.push_back(loss.value(u, w));
  }
  trace.residuals.push_back(fixed_point_residual(t, u, w, g_lb));

  if (want_tape) out.tape.iterates = trace.iterates;
  return out;
}

InnerTrace inner_loop(const KmOperator& t, const LossFunction& loss, const ParamVector& w,
                      const Vector& u0, const SolverConfig& cfg, const Metric& g_lb) {
  return unroll(t, loss, w, u0, cfg, g_lb, false).trace;
}

Vector replay_tape(const KmOperator& t, const LossFunction& loss, const ParamVector& w,
                   const UnrollTape& tape) {
  if (tape.iterates.empty()) throw std::invalid_argument("replay_tape: empty tape");
  const Metric& g = t.metric();
  const bool aggregated = tape.mode == InnerMode::aggregated;
  Vector u = tape.iterates.front();
  for (std::size_t k = 0; k < tape.step_sizes.size(); ++k) {
    const Vector v_l = t.apply(u, w);
    Vector combined;
    if (aggregated) {
      const Vector v_u = u - tape.step_sizes[k] * g.inv_apply(loss.grad_u(u, w));
      combined = tape.mu * v_u + (1.0 - tape.mu) * v_l;
    } else {
      combined = v_l;
    }
    u = tape.u_box ? project_box_g(combined, *tape.u_box, g) : combined;
  }
  return u;
}

double fixed_point_residual(const KmOperator& t, const Vector& u, const ParamVector& w,
                            const Metric& g_lb) {
  return g_lb.norm(u - t.apply(u, w));
}

double envelope_value(int k) {
  if (k < 1) throw std::invalid_argument("envelope_value: k must be >= 1");
  return std::sqrt((1.0 + std::log1p(static_cast<double>(k))) /
                   std::pow(static_cast<double>(k), 0.25));
}

EnvelopeResult envelope_check(const std::vector<double>& residuals) {
  const int n = static_cast<int>(residuals.size());
  if (n < 8) throw std::invalid_argument("envelope_check: needs at least 8 residuals");
  const int half = n / 2;
  EnvelopeResult out;
  for (int k = 1; k <= half; ++k) {
    const double r2 = residuals[static_cast<std::size_t>(k - 1)];
    out.fit_constant = std::max(out.fit_constant, r2 * r2 / envelope_value(k));
  }
  out.pass = true;
  for (int k = half + 1; k <= n; ++k) {
    const double r = residuals[static_cast<std::size_t>(k - 1)];
    if (r * r > 2.0 * out.fit_constant * envelope_value(k)) {
      out.pass = false;
      break;
    }
  }
  return out;
}

namespace {

// Coordinates pressed against an active bound contribute nothing to the
// stationarity measure.
Vector projected_gradient(const Vector& omega, const Vector& grad, const std::optional<Box>& box) {
  if (!box) return grad;
  Vector out = grad;
  for (Eigen::Index i = 0; i < omega.size(); ++i) {
    if (omega[i] <= box->lo()[i] && grad[i] > 0.0) out[i] = 0.0;
    if (omega[i] >= box->hi()[i] && grad[i] < 0.0) out[i] = 0.0;
  }
  return out;
}

}  // namespace

OuterTrace outer_loop(const ProblemInstance& problem, const SolverConfig& cfg,
                      const OuterOptions& opts) {
  if (cfg.outer_steps < 1) throw std::invalid_argument("outer_loop: needs at least one outer step");

  SolverConfig inner_cfg = cfg;
  if (!inner_cfg.u_box && !problem.u_box.is_unbounded()) inner_cfg.u_box = problem.u_box;
  std::optional<Box> omega_box = cfg.omega_box;
  if (!omega_box && !problem.omega_box.is_unbounded()) omega_box = problem.omega_box;

  ParamVector omega = problem.omega_init;
  Vector adam_m = Vector::Zero(omega.size());
  Vector adam_v = Vector::Zero(omega.size());
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  OuterTrace trace;
  trace.rows.reserve(static_cast<std::size_t>(cfg.outer_steps));
  trace.final_omega = omega;

  for (int t = 1; t <= cfg.outer_steps; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    problem.op.refresh(omega);

    UnrollResult run =
        unroll(problem.op, *problem.loss, omega, problem.u_init, inner_cfg, problem.g_lb, true);
    Hypergradient hg = reverse_from_tape(problem.op, *problem.loss, omega, run.tape);
    if (!std::isfinite(hg.phi_value))
      throw NumericError("outer loop: non-finite objective at step " + std::to_string(t));

    OuterRow row;
    row.outer_iter = t;
    row.phi = hg.phi_value;
    row.hypergrad_norm = projected_gradient(omega.flat, hg.wrt_omega, omega_box).norm();
    row.fp_residual = run.trace.residuals.back();
    row.inner_steps = cfg.inner_steps;

    if (omega.size() > 0) {
      Vector next;
      if (cfg.outer_update == OuterUpdate::projected_gd) {
        next = omega.flat - cfg.gamma * hg.wrt_omega;
      } else {
        adam_m = kBeta1 * adam_m + (1.0 - kBeta1) * hg.wrt_omega;
        adam_v = kBeta2 * adam_v + (1.0 - kBeta2) * hg.wrt_omega.cwiseAbs2();
        const double c1 = 1.0 - std::pow(kBeta1, t);
        const double c2 = 1.0 - std::pow(kBeta2, t);
        next = omega.flat -
               cfg.gamma * (adam_m / c1).cwiseQuotient(((adam_v / c2).cwiseSqrt().array() + kEps).matrix());
      }
      if (omega_box) next = omega_box->project(next);
      if (!all_finite(next))
        throw NumericError("outer loop: non-finite learning variables at step " + std::to_string(t));
      omega = omega.with(std::move(next));
    }

    const auto t1 = std::chrono::steady_clock::now();
    row.wall_ms =
        opts.timing ? std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count() : 0;
    trace.rows.push_back(row);
    trace.final_iterates.push_back(run.trace.iterates.back());
    if (opts.collect_inner_residuals) trace.inner_residuals.push_back(run.trace.residuals);
  }
  trace.final_omega = omega;
  return trace;
}

}  // namespace hodl
