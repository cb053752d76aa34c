#include "hodl/hypergrad.hpp"

#include <cmath>
#include <stdexcept>

#include "hodl/errors.hpp"

namespace hodl {

namespace {

// Box-projection cotangent: pass-through where the projection was inactive,
// zero where the coordinate was clamped.
Vector project_cotangent(const Vector& pre, const Box& box, const Vector& cot) {
  Vector out = cot;
  for (Eigen::Index i = 0; i < pre.size(); ++i)
    if (pre[i] < box.lo()[i] || pre[i] > box.hi()[i]) out[i] = 0.0;
  return out;
}

}  // namespace

Hypergradient reverse_from_tape(const KmOperator& t, const LossFunction& loss,
                                const ParamVector& w, const UnrollTape& tape) {
  if (tape.iterates.empty()) throw std::invalid_argument("reverse_from_tape: empty tape");
  const Metric& g = t.metric();
  const std::size_t steps = tape.step_sizes.size();
  const Vector& u_final = tape.iterates.back();

  Hypergradient out;
  out.phi_value = loss.value(u_final, w);
  out.wrt_omega = loss.grad_w(u_final, w);
  Vector c = loss.grad_u(u_final, w);

  const bool aggregated = tape.mode == InnerMode::aggregated;
  for (std::size_t k = steps; k-- > 0;) {
    const Vector& u_prev = tape.iterates[k];
    Vector c_pre = tape.u_box ? project_cotangent(tape.pre_projection[k], *tape.u_box, c) : c;

    if (aggregated) {
      const double mu = tape.mu;
      // v_l branch through the averaged operator.
      OperatorVjp d = t.vjp(u_prev, w, (1.0 - mu) * c_pre);
      out.wrt_omega += d.wrt_w;
      // v_u = u - s_k G^{-1} grad_u l(u, w).
      const Vector c_vu = mu * c_pre;
      LossVjp lv = loss.grad_u_vjp(u_prev, w, tape.step_sizes[k] * g.inv_apply(c_vu));
      out.wrt_omega -= lv.wrt_w;
      c = d.wrt_u + c_vu - lv.wrt_u;
    } else {
      OperatorVjp d = t.vjp(u_prev, w, c_pre);
      out.wrt_omega += d.wrt_w;
      c = std::move(d.wrt_u);
    }
  }
  if (!all_finite(out.wrt_omega))
    throw NumericError("hypergradient: non-finite gradient");
  return out;
}

Hypergradient hypergradient(const KmOperator& t, const LossFunction& loss, const ParamVector& w,
                            const Vector& u0, const SolverConfig& cfg) {
  // The Metric floor here only feeds residual bookkeeping, not the gradient.
  const Metric g_lb = Metric::uniform(t.dim(), t.metric().lower_bound());
  UnrollResult run = unroll(t, loss, w, u0, cfg, g_lb, true);
  return reverse_from_tape(t, loss, w, run.tape);
}

Vector fd_hypergradient(const KmOperator& t, const LossFunction& loss, const ParamVector& w,
                        const Vector& u0, const SolverConfig& cfg, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_hypergradient: h must be positive");
  const Metric g_lb = Metric::uniform(t.dim(), t.metric().lower_bound());
  Vector grad(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double hi = h * (1.0 + std::abs(w.flat[i]));
    Vector plus = w.flat, minus = w.flat;
    plus[i] += hi;
    minus[i] -= hi;
    const double phi_plus =
        unroll(t, loss, w.with(std::move(plus)), u0, cfg, g_lb, false).trace.loss_values.back();
    const double phi_minus =
        unroll(t, loss, w.with(std::move(minus)), u0, cfg, g_lb, false).trace.loss_values.back();
    grad[i] = (phi_plus - phi_minus) / (2.0 * hi);
  }
  return grad;
}

GradientCheck gradient_check(const Vector& ad, const Vector& fd, double tol) {
  if (ad.size() != fd.size()) throw std::invalid_argument("gradient_check: length mismatch");
  GradientCheck out;
  const double den = std::max({ad.norm(), fd.norm(), 1e-12});
  out.rel_error = (ad - fd).norm() / den;
  out.pass = out.rel_error <= tol;
  return out;
}

}  // namespace hodl
