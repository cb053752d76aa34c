#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hodl/errors.hpp"
#include "hodl/experiment.hpp"
#include "hodl/hypergrad.hpp"
#include "hodl/linalg.hpp"
#include "hodl/problems.hpp"
#include "hodl/solver.hpp"
#include "hodl/version.hpp"

namespace py = pybind11;
using namespace hodl;

namespace {

SolverConfig solver_config_from_kwargs(const py::dict& d) {
  SolverConfig cfg;
  for (auto item : d) {
    const std::string key = py::cast<std::string>(item.first);
    if (key == "mode") {
      const std::string mode = py::cast<std::string>(item.second);
      if (mode != "simplified" && mode != "aggregated")
        throw py::value_error("mode must be 'simplified' or 'aggregated'");
      cfg.mode = mode == "aggregated" ? InnerMode::aggregated : InnerMode::simplified;
    } else if (key == "alpha") {
      cfg.alpha = py::cast<double>(item.second);
    } else if (key == "mu") {
      cfg.mu = py::cast<double>(item.second);
    } else if (key == "s") {
      cfg.s = py::cast<double>(item.second);
    } else if (key == "K") {
      cfg.inner_steps = py::cast<int>(item.second);
    } else if (key == "gamma") {
      cfg.gamma = py::cast<double>(item.second);
    } else if (key == "T") {
      cfg.outer_steps = py::cast<int>(item.second);
    } else if (key == "outer_update") {
      const std::string upd = py::cast<std::string>(item.second);
      cfg.outer_update = upd == "adaptive_moments" ? OuterUpdate::adaptive_moments
                                                   : OuterUpdate::projected_gd;
    } else {
      throw py::value_error("unknown solver option '" + key + "'");
    }
  }
  return cfg;
}

py::dict trace_to_dict(const InnerTrace& trace) {
  py::dict out;
  out["residuals"] = trace.residuals;
  out["loss_values"] = trace.loss_values;
  py::list iterates;
  for (const auto& u : trace.iterates) iterates.append(u);
  out["iterates"] = iterates;
  return out;
}

}  // namespace

PYBIND11_MODULE(_hodl, m) {
  m.doc() = "Bilevel fixed-point learning: operators, inner/outer loops, hypergradients";
  m.attr("__version__") = kVersion;

  m.def("g_norm", [](const Vector& v, const Vector& diag, double lo, double hi) {
          return g_norm(v, Metric(diag, lo, hi));
        },
        py::arg("v"), py::arg("diag"), py::arg("lower_bound") = 1.0, py::arg("upper_bound") = 1.0);
  m.def("soft_threshold", py::overload_cast<const Vector&, const Vector&>(&soft_threshold));
  m.def("soft_threshold", py::overload_cast<const Vector&, double>(&soft_threshold));
  m.def("power_iteration_norm", &power_iteration_norm, py::arg("m"), py::arg("iters") = 200,
        py::arg("tol") = 1e-10);
  m.def("project_box", [](const Vector& v, const Vector& lo, const Vector& hi) {
          return project_box_g(v, Box(lo, hi), Metric::identity(v.size()));
        });
  m.def("envelope_value", &envelope_value);
  m.def("envelope_check", [](const std::vector<double>& residuals) {
    const EnvelopeResult r = envelope_check(residuals);
    return py::make_tuple(r.fit_constant, r.pass);
  });
  m.def("step_size", &step_size);
  m.def("gradient_check", [](const Vector& ad, const Vector& fd, double tol) {
    const GradientCheck gc = gradient_check(ad, fd, tol);
    return py::make_tuple(gc.rel_error, gc.pass);
  });

  py::class_<ProblemInstance>(m, "Problem")
      .def_readonly("kind", &ProblemInstance::kind)
      .def_property_readonly("omega_init", [](const ProblemInstance& p) { return p.omega_init.flat; })
      .def_readonly("u_init", &ProblemInstance::u_init)
      .def_property_readonly("state_dim", [](const ProblemInstance& p) { return p.op.dim(); })
      .def("estimate_lipschitz",
           [](const ProblemInstance& p, int samples, std::uint64_t seed) {
             return estimate_lipschitz(p.op.inner(), p.omega_init, samples, seed);
           },
           py::arg("samples") = 1000, py::arg("seed") = 1126)
      .def("oracle_grad_phi",
           [](const ProblemInstance& p, const Vector& omega) {
             if (!p.oracle) throw py::value_error("problem has no analytic oracle");
             return p.oracle->grad_phi(omega);
           })
      .def("oracle_omega_star", [](const ProblemInstance& p) {
        if (!p.oracle) throw py::value_error("problem has no analytic oracle");
        return p.oracle->omega_star;
      });

  m.def("quadratic_oracle", &quadratic_oracle, py::arg("dim"), py::arg("seed"),
        py::arg("alpha") = 0.5);
  m.def("subspace_case", &subspace_case, py::arg("dim"), py::arg("subspace_dims"),
        py::arg("target"), py::arg("alpha") = 0.5);
  m.def("sparse_coding",
        [](int m_, int n, double density, double noise, int n_samples, const std::string& variant,
           std::uint64_t seed, bool with_net) {
          SparseCodingOptions opts;
          opts.with_net = with_net;
          const auto v = variant == "constrained" ? SparseVariant::constrained
                                                  : SparseVariant::regularized;
          return gen_sparse_coding(m_, n, density, noise, n_samples, v, seed, opts);
        },
        py::arg("m"), py::arg("n"), py::arg("density") = 0.1, py::arg("noise") = 0.01,
        py::arg("n_samples") = 1, py::arg("variant") = "regularized", py::arg("seed") = 1126,
        py::arg("with_net") = false);
  m.def("hypercleaning", [](int d, int n_train, int n_val, double corrupt_frac,
                            std::uint64_t seed) {
          return gen_hypercleaning(d, n_train, n_val, corrupt_frac, seed);
        },
        py::arg("d") = 5, py::arg("n_train") = 100, py::arg("n_val") = 50,
        py::arg("corrupt_frac") = 0.3, py::arg("seed") = 1126);

  m.def("inner_loop",
        [](const ProblemInstance& p, const py::dict& solver, std::optional<Vector> u0,
           std::optional<Vector> omega) {
          const SolverConfig cfg = solver_config_from_kwargs(solver);
          const ParamVector w = omega ? p.omega_init.with(*omega) : p.omega_init;
          p.op.refresh(w);
          return trace_to_dict(
              inner_loop(p.op, *p.loss, w, u0 ? *u0 : p.u_init, cfg, p.g_lb));
        },
        py::arg("problem"), py::arg("solver") = py::dict(), py::arg("u0") = std::nullopt,
        py::arg("omega") = std::nullopt);

  m.def("hypergradient",
        [](const ProblemInstance& p, const py::dict& solver, std::optional<Vector> omega) {
          const SolverConfig cfg = solver_config_from_kwargs(solver);
          const ParamVector w = omega ? p.omega_init.with(*omega) : p.omega_init;
          p.op.refresh(w);
          const Hypergradient hg = hypergradient(p.op, *p.loss, w, p.u_init, cfg);
          return py::make_tuple(hg.phi_value, hg.wrt_omega);
        },
        py::arg("problem"), py::arg("solver") = py::dict(), py::arg("omega") = std::nullopt);

  m.def("fd_hypergradient",
        [](const ProblemInstance& p, const py::dict& solver, double h, std::optional<Vector> omega) {
          const SolverConfig cfg = solver_config_from_kwargs(solver);
          const ParamVector w = omega ? p.omega_init.with(*omega) : p.omega_init;
          p.op.refresh(w);
          return fd_hypergradient(p.op, *p.loss, w, p.u_init, cfg, h);
        },
        py::arg("problem"), py::arg("solver") = py::dict(), py::arg("h") = 1e-5,
        py::arg("omega") = std::nullopt);

  m.def("outer_loop",
        [](const ProblemInstance& p, const py::dict& solver) {
          const SolverConfig cfg = solver_config_from_kwargs(solver);
          OuterOptions opts;
          opts.timing = false;
          const OuterTrace trace = outer_loop(p, cfg, opts);
          py::list rows;
          for (const auto& r : trace.rows)
            rows.append(py::make_tuple(r.outer_iter, r.phi, r.hypergrad_norm, r.fp_residual));
          py::dict out;
          out["rows"] = rows;
          out["final_omega"] = trace.final_omega.flat;
          return out;
        },
        py::arg("problem"), py::arg("solver") = py::dict());

  m.def("run_experiment",
        [](const std::string& config_path, std::optional<std::string> out,
           std::optional<std::uint64_t> seed, bool no_timing) {
          RunOptions opts;
          if (out) opts.out_override = *out;
          if (seed) opts.seed_override = *seed;
          opts.timing = !no_timing;
          const RunResult r = run_experiment(ExperimentConfig::from_file(config_path), opts);
          return r.out_path;
        },
        py::arg("config_path"), py::arg("out") = std::nullopt, py::arg("seed") = std::nullopt,
        py::arg("no_timing") = false);

  m.def("gradcheck_all", [](std::uint64_t base_seed, int n_seeds, double tol) {
          GradcheckSettings st;
          st.base_seed = base_seed;
          st.n_seeds = n_seeds;
          st.tol = tol;
          py::list rows;
          for (const auto& r : gradcheck_all(st))
            rows.append(py::make_tuple(r.problem, r.seed, r.rel_error, r.pass));
          return rows;
        },
        py::arg("base_seed") = 1126, py::arg("n_seeds") = 2, py::arg("tol") = 1e-4);

  py::register_exception<ConfigError>(m, "HodlConfigError");
  py::register_exception<NumericError>(m, "HodlNumericError");
  py::register_exception<IoError>(m, "HodlIoError");
}
