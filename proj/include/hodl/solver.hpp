#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hodl/linalg.hpp"
#include "hodl/loss.hpp"
#include "hodl/operators.hpp"

namespace hodl {

struct ProblemInstance;

enum class InnerMode { aggregated, simplified };
enum class OuterUpdate { projected_gd, adaptive_moments };

/// Knobs of one solver run. `s` = 0 selects the default
/// 0.5 * lower_bound(G) / L automatically from the loss smoothness.
struct SolverConfig {
  InnerMode mode = InnerMode::simplified;
  double alpha = 0.5;              // averaging weight, strictly in (0,1)
  double mu = 0.1;                 // aggregation weight on the upper direction
  double s = 0.0;                  // base inner step scale, s_k = s/(k+1)
  int inner_steps = 50;            // K
  double gamma = 0.01;             // outer step
  int outer_steps = 200;           // T
  OuterUpdate outer_update = OuterUpdate::projected_gd;
  std::optional<Box> u_box;        // U; empty = no projection
  std::optional<Box> omega_box;    // Omega; empty = problem default / unbounded
  std::uint64_t seed = 1126;

  double resolve_s(const Metric& g, double loss_smoothness) const;
};

/// Diminishing inner step s_k = s / (k + 1), k >= 1.
double step_size(int k, double s);

/// Record of one inner run: iterates u^0..u^K, fixed-point residuals in the
/// G_lb norm, and loss values, all K+1 entries.
struct InnerTrace {
  std::vector<Vector> iterates;
  std::vector<double> residuals;
  std::vector<double> loss_values;
};

/// Everything the reverse pass needs to differentiate the recorded run:
/// the iterates, the pre-projection combinations, and the step sizes used.
struct UnrollTape {
  InnerMode mode = InnerMode::simplified;
  double mu = 0.0;
  std::vector<Vector> iterates;        // u^0..u^K
  std::vector<Vector> pre_projection;  // arguments of the box projection, steps 1..K
  std::vector<double> step_sizes;      // s_k actually used, steps 1..K
  std::optional<Box> u_box;
  double min_kink_gap = kInf;  // over operator kinks and box boundaries
};

struct UnrollResult {
  InnerTrace trace;
  UnrollTape tape;
};

/// Runs the inner iteration for cfg.inner_steps steps from u0.
/// Aggregated mode combines the operator direction with a diminishing,
/// G-preconditioned loss-gradient direction before projecting; simplified
/// mode (or mu == 0) projects the operator direction alone and the two
/// paths produce bitwise-identical sequences.
UnrollResult unroll(const KmOperator& t, const LossFunction& loss, const ParamVector& w,
                    const Vector& u0, const SolverConfig& cfg, const Metric& g_lb,
                    bool want_tape);

InnerTrace inner_loop(const KmOperator& t, const LossFunction& loss, const ParamVector& w,
                      const Vector& u0, const SolverConfig& cfg, const Metric& g_lb);

/// Forward re-execution of a recorded run; returns the final iterate.
Vector replay_tape(const KmOperator& t, const LossFunction& loss, const ParamVector& w,
                   const UnrollTape& tape);

/// |u - T(u, w)| in the G_lb norm; zero exactly on fixed points.
double fixed_point_residual(const KmOperator& t, const Vector& u, const ParamVector& w,
                            const Metric& g_lb);

/// sqrt((1 + ln(1+k)) / k^{1/4}), the residual decay envelope.
double envelope_value(int k);

struct EnvelopeResult {
  double fit_constant = 0.0;
  bool pass = false;
};

/// Fits the envelope constant on the first half of a residual sequence
/// (indexed from k = 1) and checks the second half against twice the fitted
/// envelope. Needs at least 8 entries.
EnvelopeResult envelope_check(const std::vector<double>& residuals);

struct OuterRow {
  int outer_iter = 0;
  double phi = 0.0;
  double hypergrad_norm = 0.0;  // projected-gradient norm in omega space
  double fp_residual = 0.0;     // final inner residual, G_lb norm
  int inner_steps = 0;
  std::int64_t wall_ms = 0;
};

struct OuterTrace {
  std::vector<OuterRow> rows;
  ParamVector final_omega;
  std::vector<Vector> final_iterates;            // last inner iterate per outer step
  std::vector<std::vector<double>> inner_residuals;  // only when collected
};

struct OuterOptions {
  bool collect_inner_residuals = false;
  bool timing = true;
};

/// The outer learning loop: at each step re-initializes the inner iteration
/// from the problem's u0, differentiates the unrolled run in reverse, and
/// updates the learning variables by projected gradient descent or by
/// Adam-style adaptive moments, projecting onto Omega either way.
OuterTrace outer_loop(const ProblemInstance& problem, const SolverConfig& cfg,
                      const OuterOptions& opts = {});

}  // namespace hodl
