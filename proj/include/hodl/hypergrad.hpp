#pragma once

#include "hodl/solver.hpp"

namespace hodl {

/// phi_K(w) = l(u^K(w), w) and its exact reverse-mode gradient.
struct Hypergradient {
  Vector wrt_omega;
  double phi_value = 0.0;
};

/// Reverse pass over a recorded inner run. Accumulates the path through all
/// K iterates (operator applications, the diminishing-step loss-gradient
/// direction, the mu-combination, and the box projection) plus the direct
/// d l / d w term at u^K.
Hypergradient reverse_from_tape(const KmOperator& t, const LossFunction& loss,
                                const ParamVector& w, const UnrollTape& tape);

/// Unroll + reverse in one call. Deterministic: two calls on identical
/// inputs produce bitwise-identical results.
Hypergradient hypergradient(const KmOperator& t, const LossFunction& loss, const ParamVector& w,
                            const Vector& u0, const SolverConfig& cfg);

/// Central-difference gradient of phi_K with per-coordinate step
/// h_i = h * (1 + |w_i|). Spectral-norm caches are frozen throughout, so
/// this is directly comparable to the reverse-mode gradient.
Vector fd_hypergradient(const KmOperator& t, const LossFunction& loss, const ParamVector& w,
                        const Vector& u0, const SolverConfig& cfg, double h);

struct GradientCheck {
  double rel_error = 0.0;
  bool pass = false;
};

/// rel_error = |ad - fd|_2 / max(|ad|_2, |fd|_2, 1e-12).
GradientCheck gradient_check(const Vector& ad, const Vector& fd, double tol);

}  // namespace hodl
