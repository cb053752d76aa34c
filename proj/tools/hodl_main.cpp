#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hodl/errors.hpp"
#include "hodl/experiment.hpp"
#include "hodl/version.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool no_timing = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
  auto* c = cmd->add_option("--config", flags.config, "experiment config (JSON)");
  if (config_required) c->required();
  cmd->add_option("--out", flags.out, "output path (file for run, directory for sweeps)");
  cmd->add_option("--seed", flags.seed, "override the problem seed")
      ->each([&flags](const std::string&) { flags.seed_set = true; });
  cmd->add_flag("--no-timing", flags.no_timing, "write 0 in the wall_ms column");
}

hodl::RunOptions run_options(const CommonFlags& flags) {
  hodl::RunOptions opts;
  if (!flags.out.empty()) opts.out_override = flags.out;
  if (flags.seed_set) opts.seed_override = flags.seed;
  opts.timing = !flags.no_timing;
  return opts;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const hodl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const hodl::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const hodl::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hodl: bilevel fixed-point learning experiments"};
  app.set_version_flag("--version", std::string(hodl::kVersion));
  app.require_subcommand(1);

  CommonFlags run_flags, gc_flags, mu_flags, sn_flags;

  auto* run = app.add_subcommand("run", "run one configured experiment, write the metrics CSV");
  add_common(run, run_flags, true);

  auto* gradcheck =
      app.add_subcommand("gradcheck", "reverse-mode vs finite-difference checks on all problems");
  gradcheck->add_option("--seed", gc_flags.seed, "base seed")
      ->each([&gc_flags](const std::string&) { gc_flags.seed_set = true; });
  int gc_seeds = 5;
  double gc_tol = 1e-4;
  gradcheck->add_option("--seeds", gc_seeds, "seeds per problem");
  gradcheck->add_option("--tol", gc_tol, "relative-error tolerance");

  auto* amu = app.add_subcommand("ablate-mu", "sweep the aggregation weight, one CSV per value");
  add_common(amu, mu_flags, true);

  auto* asn = app.add_subcommand(
      "ablate-sn", "sparse-coding net with spectral normalization enabled vs disabled");
  add_common(asn, sn_flags, true);

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return hodl::run_experiment_cli(run_flags.config, run_options(run_flags));

  if (gradcheck->parsed()) {
    return guarded([&] {
      hodl::GradcheckSettings st;
      if (gc_flags.seed_set) st.base_seed = gc_flags.seed;
      st.n_seeds = gc_seeds;
      st.tol = gc_tol;
      bool all_pass = true;
      for (const auto& row : hodl::gradcheck_all(st)) {
        std::printf("%-28s seed=%-8llu rel_error=%.3e %s\n", row.problem.c_str(),
                    static_cast<unsigned long long>(row.seed), row.rel_error,
                    row.pass ? "pass" : "FAIL");
        all_pass = all_pass && row.pass;
      }
      return all_pass ? 0 : 3;
    });
  }

  const bool is_mu = amu->parsed();
  const CommonFlags& flags = is_mu ? mu_flags : sn_flags;
  return guarded([&] {
    const hodl::ExperimentConfig cfg = [&] {
      hodl::ExperimentConfig c = hodl::ExperimentConfig::from_file(flags.config);
      if (flags.seed_set) c.override_seed(flags.seed);
      return c;
    }();
    const std::string out_dir = !flags.out.empty() ? flags.out : "ablation_out";
    const hodl::AblateResult result =
        is_mu ? hodl::ablate_mu(cfg, out_dir, !flags.no_timing)
              : hodl::ablate_sn(cfg, out_dir, !flags.no_timing);
    for (std::size_t i = 0; i < result.files.size(); ++i) {
      std::printf("%-8s final_hypergrad_norm=%.6e", result.labels[i].c_str(),
                  result.final_hypergrad_norms[i]);
      if (i < result.lipschitz_estimates.size())
        std::printf(" lipschitz=%.6f", result.lipschitz_estimates[i]);
      std::printf(" -> %s\n", result.files[i].c_str());
    }
    return 0;
  });
}
