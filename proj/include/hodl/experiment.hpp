#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hodl/problems.hpp"
#include "hodl/solver.hpp"

namespace hodl {

/// Validated experiment description. Holds the parsed JSON document so the
/// canonical serialization (and hence the config hash) is stable.
class ExperimentConfig {
 public:
  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_json_text(const std::string& text);

  /// Replaces the problem seed (the --seed flag).
  void override_seed(std::uint64_t seed);
  void override_output(const std::string& path);
  void set_problem_field(const std::string& key, double value);
  void set_problem_field(const std::string& key, bool value);

  std::string canonical_text() const;
  std::uint64_t hash() const;

  ProblemInstance make_problem() const;
  SolverConfig solver_config() const;
  std::string output_path() const;
  bool per_inner_residuals() const;
  std::uint64_t problem_seed() const;
  std::string problem_kind() const;
  std::vector<double> mu_list() const;
  double sn_off_weight_scale() const;

  const nlohmann::json& doc() const;

  ExperimentConfig(const ExperimentConfig&);
  ExperimentConfig& operator=(const ExperimentConfig&);
  ExperimentConfig(ExperimentConfig&&) noexcept;
  ExperimentConfig& operator=(ExperimentConfig&&) noexcept;
  ~ExperimentConfig();

 private:
  ExperimentConfig();
  void validate() const;

  std::unique_ptr<nlohmann::json> doc_;
};

/// Provenance written as comment lines ahead of the CSV header.
struct Provenance {
  std::string version;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

/// Writes the outer trace as CSV: `#`-prefixed provenance comments, the
/// exact header `outer_iter,phi_K,hypergrad_g_norm,fp_residual_g_lb,inner_K,wall_ms`,
/// one row per outer step, reals rendered with 17 significant digits.
void emit_metrics(const OuterTrace& trace, const Provenance& prov, const std::string& path);

/// Companion file with one row per (outer_iter, k) inner residual.
void emit_inner_residuals(const OuterTrace& trace, const Provenance& prov,
                          const std::string& path);

struct RunOptions {
  std::optional<std::string> out_override;
  std::optional<std::uint64_t> seed_override;
  bool timing = true;
};

struct RunResult {
  OuterTrace trace;
  Provenance provenance;
  std::string out_path;
};

/// Executes a validated config end to end and writes the metrics file.
RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// CLI-facing wrapper: loads the config, runs, maps failures onto exit
/// statuses (0 ok, 2 config, 3 numeric, 4 i/o) and prints the diagnostic.
int run_experiment_cli(const std::string& config_path, const RunOptions& opts);

// ---------------------------------------------------------------------------
// Gradient-check harness

struct GradcheckRow {
  std::string problem;
  std::uint64_t seed = 0;
  double rel_error = 0.0;
  bool pass = false;
};

struct GradcheckSettings {
  std::uint64_t base_seed = 1126;
  int n_seeds = 5;
  double tol = 1e-4;
  double fd_step = 1e-5;
  /// Points closer than this to a soft-threshold or ReLU kink (or a box
  /// bound) are not generic; the harness re-seeds and tries again.
  double kink_gap_min = 1e-6;
};

/// Runs hypergradient-vs-finite-difference checks on the four shipped
/// problem families at desk sizes.
std::vector<GradcheckRow> gradcheck_all(const GradcheckSettings& settings = {});

// ---------------------------------------------------------------------------
// Ablations

struct AblateResult {
  std::vector<std::string> files;
  std::vector<std::string> labels;
  std::vector<double> final_hypergrad_norms;
  std::vector<double> lipschitz_estimates;  // ablate-sn only
};

/// Re-runs the configured experiment for each mu in the configured list
/// (aggregated mode), one CSV per value.
AblateResult ablate_mu(const ExperimentConfig& cfg, const std::string& out_dir, bool timing);

/// Runs the sparse-coding net problem with spectral normalization enabled
/// and disabled (weights scaled up), one CSV each.
AblateResult ablate_sn(const ExperimentConfig& cfg, const std::string& out_dir, bool timing);

/// Mean test MSE of a sparse-coding problem under learned variables: runs
/// the inner loop on the held-out samples and averages the code error.
double sparse_coding_test_mse(const ProblemInstance& problem, const ParamVector& omega,
                              const SolverConfig& cfg);

std::string format_real(double v);  // 17 significant digits

}  // namespace hodl
