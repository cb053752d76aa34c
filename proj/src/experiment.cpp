#include "hodl/experiment.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hodl/errors.hpp"
#include "hodl/hypergrad.hpp"
#include "hodl/version.hpp"

namespace hodl {

using nlohmann::json;

namespace {

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

double get_num(const json& j, const std::string& key, double dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_number()) throw ConfigError("'" + key + "' must be a number");
  return j.at(key).get<double>();
}

int get_int(const json& j, const std::string& key, int dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_number_integer()) throw ConfigError("'" + key + "' must be an integer");
  return j.at(key).get<int>();
}

bool get_bool(const json& j, const std::string& key, bool dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_boolean()) throw ConfigError("'" + key + "' must be a boolean");
  return j.at(key).get<bool>();
}

std::string get_str(const json& j, const std::string& key, const std::string& dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_string()) throw ConfigError("'" + key + "' must be a string");
  return j.at(key).get<std::string>();
}

Vector get_vector(const json& j, const std::string& key) {
  if (!j.at(key).is_array()) throw ConfigError("'" + key + "' must be an array");
  const auto& arr = j.at(key);
  Vector v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw ConfigError("'" + key + "' must contain numbers");
    v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  }
  return v;
}

const std::set<std::string> kTopKeys = {"problem", "solver", "output", "ablate"};
const std::set<std::string> kSolverKeys = {"mode", "alpha", "mu",           "s",
                                           "K",    "gamma", "T",            "outer_update",
                                           "u_box", "omega_box", "seed"};
const std::set<std::string> kOutputKeys = {"path", "per_inner_residuals"};
const std::set<std::string> kAblateKeys = {"mu_list", "sn_off_weight_scale"};
const std::set<std::string> kBoxKeys = {"lo", "hi"};

const std::set<std::string> kProblemCommon = {"kind", "seed"};

std::set<std::string> problem_keys(const std::string& kind) {
  std::set<std::string> keys = kProblemCommon;
  if (kind == "quadratic_oracle") {
    keys.insert("dim");
  } else if (kind == "subspace") {
    keys.insert({"dim", "subspace_dims", "target", "u0"});
  } else if (kind == "sparse_coding_regularized" || kind == "sparse_coding_constrained") {
    keys.insert({"m", "n", "density", "noise", "n_samples", "n_test", "learn_kappa", "learn_gamma",
                 "kappa", "gamma", "beta", "with_net", "net_layers", "normalize_net",
                 "net_weight_scale"});
  } else if (kind == "hypercleaning") {
    keys.insert({"d", "n_train", "n_val", "corrupt_frac", "noise", "ridge", "offset"});
  } else {
    throw ConfigError("problem: unknown kind '" + kind + "'");
  }
  return keys;
}

void validate_box(const json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown_keys(j, kBoxKeys, where);
  if (!j.contains("lo") || !j.contains("hi")) throw ConfigError(where + ": needs lo and hi");
  if (!j.at("lo").is_number() || !j.at("hi").is_number())
    throw ConfigError(where + ": lo/hi must be numbers");
  if (j.at("lo").get<double>() > j.at("hi").get<double>())
    throw ConfigError(where + ": lo > hi");
}

}  // namespace

// ---------------------------------------------------------------------------
// ExperimentConfig

ExperimentConfig::ExperimentConfig() : doc_(std::make_unique<json>()) {}
ExperimentConfig::~ExperimentConfig() = default;
ExperimentConfig::ExperimentConfig(const ExperimentConfig& other)
    : doc_(std::make_unique<json>(*other.doc_)) {}
ExperimentConfig& ExperimentConfig::operator=(const ExperimentConfig& other) {
  *doc_ = *other.doc_;
  return *this;
}
ExperimentConfig::ExperimentConfig(ExperimentConfig&&) noexcept = default;
ExperimentConfig& ExperimentConfig::operator=(ExperimentConfig&&) noexcept = default;

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  ExperimentConfig cfg;
  try {
    *cfg.doc_ = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  const json& j = *doc_;
  require_object(j, "config");
  reject_unknown_keys(j, kTopKeys, "config");
  if (!j.contains("problem")) throw ConfigError("config: missing 'problem' block");
  if (!j.contains("solver")) throw ConfigError("config: missing 'solver' block");

  const json& p = j.at("problem");
  require_object(p, "problem");
  const std::string kind = get_str(p, "kind", "");
  if (kind.empty()) throw ConfigError("problem: missing 'kind'");
  reject_unknown_keys(p, problem_keys(kind), "problem");

  const json& s = j.at("solver");
  require_object(s, "solver");
  reject_unknown_keys(s, kSolverKeys, "solver");
  const std::string mode = get_str(s, "mode", "simplified");
  if (mode != "simplified" && mode != "aggregated")
    throw ConfigError("solver.mode must be 'simplified' or 'aggregated'");
  const std::string upd = get_str(s, "outer_update", "projected_gd");
  if (upd != "projected_gd" && upd != "adaptive_moments")
    throw ConfigError("solver.outer_update must be 'projected_gd' or 'adaptive_moments'");
  const double alpha = get_num(s, "alpha", 0.5);
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("solver.alpha must lie in (0,1)");
  const double mu = get_num(s, "mu", 0.1);
  if (!(mu >= 0.0 && mu < 1.0)) throw ConfigError("solver.mu must lie in [0,1)");
  if (get_num(s, "s", 0.0) < 0.0) throw ConfigError("solver.s must be nonnegative");
  if (get_int(s, "K", 50) < 0) throw ConfigError("solver.K must be nonnegative");
  if (get_int(s, "T", 200) < 1) throw ConfigError("solver.T must be positive");
  if (!(get_num(s, "gamma", 0.01) >= 0.0)) throw ConfigError("solver.gamma must be nonnegative");
  if (s.contains("u_box")) validate_box(s.at("u_box"), "solver.u_box");
  if (s.contains("omega_box")) validate_box(s.at("omega_box"), "solver.omega_box");

  if (j.contains("output")) {
    const json& o = j.at("output");
    require_object(o, "output");
    reject_unknown_keys(o, kOutputKeys, "output");
    if (o.contains("path") && !o.at("path").is_string())
      throw ConfigError("output.path must be a string");
    get_bool(o, "per_inner_residuals", false);
  }
  if (j.contains("ablate")) {
    const json& a = j.at("ablate");
    require_object(a, "ablate");
    reject_unknown_keys(a, kAblateKeys, "ablate");
    if (a.contains("mu_list")) {
      if (!a.at("mu_list").is_array()) throw ConfigError("ablate.mu_list must be an array");
      for (const auto& v : a.at("mu_list")) {
        if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() >= 1.0)
          throw ConfigError("ablate.mu_list entries must lie in [0,1)");
      }
    }
  }
}

void ExperimentConfig::override_seed(std::uint64_t seed) {
  (*doc_)["problem"]["seed"] = seed;
  validate();
}

void ExperimentConfig::override_output(const std::string& path) {
  (*doc_)["output"]["path"] = path;
  validate();
}

void ExperimentConfig::set_problem_field(const std::string& key, double value) {
  (*doc_)["problem"][key] = value;
  validate();
}

void ExperimentConfig::set_problem_field(const std::string& key, bool value) {
  (*doc_)["problem"][key] = value;
  validate();
}

std::string ExperimentConfig::canonical_text() const { return doc_->dump(); }

std::uint64_t ExperimentConfig::hash() const { return fnv1a64(canonical_text()); }

const json& ExperimentConfig::doc() const { return *doc_; }

std::uint64_t ExperimentConfig::problem_seed() const {
  return doc_->at("problem").value("seed", std::uint64_t{1126});
}

std::string ExperimentConfig::problem_kind() const {
  return doc_->at("problem").at("kind").get<std::string>();
}

std::string ExperimentConfig::output_path() const {
  if (doc_->contains("output")) return get_str(doc_->at("output"), "path", "");
  return "";
}

bool ExperimentConfig::per_inner_residuals() const {
  if (doc_->contains("output")) return get_bool(doc_->at("output"), "per_inner_residuals", false);
  return false;
}

std::vector<double> ExperimentConfig::mu_list() const {
  std::vector<double> mus = {0.0, 0.1, 0.3, 0.5, 0.9};
  if (doc_->contains("ablate") && doc_->at("ablate").contains("mu_list")) {
    mus.clear();
    for (const auto& v : doc_->at("ablate").at("mu_list")) mus.push_back(v.get<double>());
  }
  return mus;
}

double ExperimentConfig::sn_off_weight_scale() const {
  if (doc_->contains("ablate")) return get_num(doc_->at("ablate"), "sn_off_weight_scale", 3.0);
  return 3.0;
}

SolverConfig ExperimentConfig::solver_config() const {
  const json& s = doc_->at("solver");
  SolverConfig cfg;
  cfg.mode = get_str(s, "mode", "simplified") == "aggregated" ? InnerMode::aggregated
                                                              : InnerMode::simplified;
  cfg.alpha = get_num(s, "alpha", 0.5);
  cfg.mu = get_num(s, "mu", 0.1);
  cfg.s = get_num(s, "s", 0.0);
  cfg.inner_steps = get_int(s, "K", 50);
  cfg.gamma = get_num(s, "gamma", 0.01);
  cfg.outer_steps = get_int(s, "T", 200);
  cfg.outer_update = get_str(s, "outer_update", "projected_gd") == "adaptive_moments"
                         ? OuterUpdate::adaptive_moments
                         : OuterUpdate::projected_gd;
  cfg.seed = s.value("seed", problem_seed());
  return cfg;
}

ProblemInstance ExperimentConfig::make_problem() const {
  const json& p = doc_->at("problem");
  const std::string kind = problem_kind();
  const std::uint64_t seed = problem_seed();
  const double alpha = get_num(doc_->at("solver"), "alpha", 0.5);

  if (kind == "quadratic_oracle") {
    return quadratic_oracle(get_int(p, "dim", 10), seed, alpha);
  }
  if (kind == "subspace") {
    const int dim = get_int(p, "dim", 2);
    Vector target = p.contains("target") ? get_vector(p, "target") : Vector::Ones(dim);
    if (target.size() != dim) throw ConfigError("subspace: target length must equal dim");
    ProblemInstance prob = subspace_case(dim, get_int(p, "subspace_dims", 1), target, alpha);
    if (p.contains("u0")) {
      Vector u0 = get_vector(p, "u0");
      if (u0.size() != dim) throw ConfigError("subspace: u0 length must equal dim");
      prob.u_init = u0;
    }
    return prob;
  }
  if (kind == "sparse_coding_regularized" || kind == "sparse_coding_constrained") {
    SparseCodingOptions opts;
    opts.n_test = get_int(p, "n_test", 0);
    opts.learn_kappa = get_bool(p, "learn_kappa", true);
    opts.learn_gamma = get_bool(p, "learn_gamma", false);
    opts.kappa = get_num(p, "kappa", -1.0);
    opts.gamma = get_num(p, "gamma", 0.0);
    opts.beta = get_num(p, "beta", 1.0);
    opts.with_net = get_bool(p, "with_net", false);
    opts.net_layers = get_int(p, "net_layers", 2);
    opts.normalize_net = get_bool(p, "normalize_net", true);
    opts.net_weight_scale = get_num(p, "net_weight_scale", 1.0);
    opts.alpha = alpha;
    const auto variant = kind == "sparse_coding_regularized" ? SparseVariant::regularized
                                                             : SparseVariant::constrained;
    try {
      return gen_sparse_coding(get_int(p, "m", 500), get_int(p, "n", 250),
                               get_num(p, "density", 0.1), get_num(p, "noise", 0.01),
                               get_int(p, "n_samples", 1), variant, seed, opts);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("problem: ") + e.what());
    }
  }
  if (kind == "hypercleaning") {
    HypercleanOptions opts;
    opts.noise = get_num(p, "noise", 0.1);
    opts.ridge = get_num(p, "ridge", 0.1);
    opts.offset = get_num(p, "offset", 5.0);
    opts.alpha = alpha;
    try {
      return gen_hypercleaning(get_int(p, "d", 5), get_int(p, "n_train", 100),
                               get_int(p, "n_val", 50), get_num(p, "corrupt_frac", 0.3), seed,
                               opts);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("problem: ") + e.what());
    }
  }
  throw ConfigError("problem: unknown kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Metrics emission

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

void write_provenance(std::ofstream& out, const Provenance& prov) {
  char hash_buf[32];
  std::snprintf(hash_buf, sizeof(hash_buf), "%016" PRIx64, prov.config_hash);
  out << "# hodl version=" << prov.version << "\n";
  out << "# config_hash=" << hash_buf << "\n";
  out << "# seed=" << prov.seed << "\n";
}

std::ofstream open_out(const std::string& path) {
  const std::filesystem::path fpath(path);
  if (fpath.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(fpath.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  return out;
}

}  // namespace

void emit_metrics(const OuterTrace& trace, const Provenance& prov, const std::string& path) {
  std::ofstream out = open_out(path);
  write_provenance(out, prov);
  out << "outer_iter,phi_K,hypergrad_g_norm,fp_residual_g_lb,inner_K,wall_ms\n";
  for (const auto& row : trace.rows) {
    out << row.outer_iter << ',' << format_real(row.phi) << ',' << format_real(row.hypergrad_norm)
        << ',' << format_real(row.fp_residual) << ',' << row.inner_steps << ',' << row.wall_ms
        << '\n';
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

void emit_inner_residuals(const OuterTrace& trace, const Provenance& prov,
                          const std::string& path) {
  std::ofstream out = open_out(path);
  write_provenance(out, prov);
  out << "outer_iter,k,fp_residual_g_lb\n";
  for (std::size_t t = 0; t < trace.inner_residuals.size(); ++t) {
    const auto& res = trace.inner_residuals[t];
    for (std::size_t k = 0; k < res.size(); ++k)
      out << (t + 1) << ',' << k << ',' << format_real(res[k]) << '\n';
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Running

RunResult run_experiment(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  if (opts.seed_override) cfg.override_seed(*opts.seed_override);
  if (opts.out_override) cfg.override_output(*opts.out_override);

  const std::string out_path = cfg.output_path();
  if (out_path.empty()) throw ConfigError("no output path: set output.path or pass --out");

  ProblemInstance problem = cfg.make_problem();
  SolverConfig scfg = cfg.solver_config();
  const auto& sj = cfg.doc().at("solver");
  if (sj.contains("u_box"))
    scfg.u_box = Box::uniform(problem.op.dim(), sj.at("u_box").at("lo").get<double>(),
                              sj.at("u_box").at("hi").get<double>());
  if (sj.contains("omega_box"))
    scfg.omega_box = Box::uniform(problem.omega_init.size(), sj.at("omega_box").at("lo").get<double>(),
                                  sj.at("omega_box").at("hi").get<double>());

  OuterOptions oopts;
  oopts.collect_inner_residuals = cfg.per_inner_residuals();
  oopts.timing = opts.timing;

  RunResult result{outer_loop(problem, scfg, oopts),
                   Provenance{kVersion, cfg.hash(), cfg.problem_seed()}, out_path};
  emit_metrics(result.trace, result.provenance, out_path);
  if (cfg.per_inner_residuals())
    emit_inner_residuals(result.trace, result.provenance, out_path + ".inner.csv");
  return result;
}

int run_experiment_cli(const std::string& config_path, const RunOptions& opts) {
  try {
    const ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
    const RunResult result = run_experiment(cfg, opts);
    std::cout << "wrote " << result.out_path << " (" << result.trace.rows.size() << " rows)\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// Gradient-check harness

namespace {

struct GradcheckCase {
  std::string name;
  InnerMode mode;
  int inner_steps;
  std::function<ProblemInstance(std::uint64_t)> make;
};

GradcheckRow check_one(const GradcheckCase& c, std::uint64_t seed, const GradcheckSettings& st) {
  std::uint64_t s = seed;
  for (int attempt = 0; attempt < 6; ++attempt, s += 7919) {
    ProblemInstance prob = c.make(s);
    SolverConfig cfg;
    cfg.mode = c.mode;
    cfg.mu = 0.1;
    cfg.inner_steps = c.inner_steps;
    prob.op.refresh(prob.omega_init);

    const Metric g_lb = prob.g_lb;
    UnrollResult run =
        unroll(prob.op, *prob.loss, prob.omega_init, prob.u_init, cfg, g_lb, true);
    if (run.tape.min_kink_gap < st.kink_gap_min) continue;  // not a generic point

    Hypergradient ad = reverse_from_tape(prob.op, *prob.loss, prob.omega_init, run.tape);
    Vector fd = fd_hypergradient(prob.op, *prob.loss, prob.omega_init, prob.u_init, cfg,
                                 st.fd_step);
    GradientCheck gc = gradient_check(ad.wrt_omega, fd, st.tol);
    return {c.name, s, gc.rel_error, gc.pass};
  }
  return {c.name, s, kInf, false};  // no generic point found
}

}  // namespace

std::vector<GradcheckRow> gradcheck_all(const GradcheckSettings& st) {
  std::vector<GradcheckCase> cases;
  cases.push_back({"quadratic_oracle", InnerMode::aggregated, 20,
                   [](std::uint64_t s) { return quadratic_oracle(10, s); }});
  cases.push_back({"sparse_coding_regularized", InnerMode::aggregated, 30, [](std::uint64_t s) {
                     SparseCodingOptions o;
                     o.with_net = true;
                     return gen_sparse_coding(40, 20, 0.1, 0.01, 2, SparseVariant::regularized, s, o);
                   }});
  cases.push_back({"sparse_coding_constrained", InnerMode::simplified, 30, [](std::uint64_t s) {
                     return gen_sparse_coding(20, 10, 0.1, 0.01, 2, SparseVariant::constrained, s,
                                              {});
                   }});
  cases.push_back({"hypercleaning", InnerMode::aggregated, 30, [](std::uint64_t s) {
                     return gen_hypercleaning(5, 20, 20, 0.3, s);
                   }});

  std::vector<GradcheckRow> rows;
  for (const auto& c : cases)
    for (int i = 0; i < st.n_seeds; ++i)
      rows.push_back(check_one(c, st.base_seed + 17 * static_cast<std::uint64_t>(i), st));
  return rows;
}

// ---------------------------------------------------------------------------
// Ablations

namespace {

std::string mu_label(double mu) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", mu);
  return buf;
}

}  // namespace

AblateResult ablate_mu(const ExperimentConfig& cfg, const std::string& out_dir, bool timing) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);

  AblateResult result;
  for (double mu : cfg.mu_list()) {
    ProblemInstance problem = cfg.make_problem();
    SolverConfig scfg = cfg.solver_config();
    scfg.mode = InnerMode::aggregated;
    scfg.mu = mu;
    OuterOptions oopts;
    oopts.collect_inner_residuals = true;
    oopts.timing = timing;
    OuterTrace trace = outer_loop(problem, scfg, oopts);

    const std::string path = out_dir + "/mu_" + mu_label(mu) + ".csv";
    Provenance prov{kVersion, cfg.hash(), cfg.problem_seed()};
    emit_metrics(trace, prov, path);
    emit_inner_residuals(trace, prov, path + ".inner.csv");
    result.files.push_back(path);
    result.labels.push_back("mu=" + mu_label(mu));
    result.final_hypergrad_norms.push_back(trace.rows.back().hypergrad_norm);
  }
  return result;
}

AblateResult ablate_sn(const ExperimentConfig& cfg, const std::string& out_dir, bool timing) {
  if (cfg.problem_kind() != "sparse_coding_regularized")
    throw ConfigError("ablate-sn expects a sparse_coding_regularized problem");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);

  AblateResult result;
  for (int variant = 0; variant < 2; ++variant) {
    const bool normalized = variant == 0;
    ExperimentConfig local = cfg;
    local.set_problem_field("with_net", true);
    local.set_problem_field("normalize_net", normalized);
    if (!normalized) {
      const double base_scale = cfg.doc().at("problem").value("net_weight_scale", 1.0);
      local.set_problem_field("net_weight_scale", base_scale * cfg.sn_off_weight_scale());
    }

    ProblemInstance problem = local.make_problem();
    SolverConfig scfg = local.solver_config();
    OuterOptions oopts;
    oopts.timing = timing;
    OuterTrace trace = outer_loop(problem, scfg, oopts);

    const std::string path = out_dir + std::string(normalized ? "/sn_on.csv" : "/sn_off.csv");
    Provenance prov{kVersion, local.hash(), local.problem_seed()};
    emit_metrics(trace, prov, path);
    result.files.push_back(path);
    result.labels.push_back(normalized ? "sn_on" : "sn_off");
    result.final_hypergrad_norms.push_back(trace.rows.back().hypergrad_norm);
    problem.op.refresh(trace.final_omega);
    result.lipschitz_estimates.push_back(
        estimate_lipschitz(problem.op.inner(), trace.final_omega, 2000, local.problem_seed()));
  }
  return result;
}

double sparse_coding_test_mse(const ProblemInstance& problem, const ParamVector& omega,
                              const SolverConfig& cfg) {
  if (!problem.sparse) throw std::invalid_argument("sparse_coding_test_mse: not a sparse problem");
  const SparseCodingInfo& info = *problem.sparse;
  if (info.b_test.cols() == 0)
    throw std::invalid_argument("sparse_coding_test_mse: problem has no test samples");
  if (problem.kind != "sparse_coding_regularized")
    throw std::invalid_argument("sparse_coding_test_mse: regularized variant only");

  const Eigen::Index n = info.q.cols();
  const Eigen::Index n_test = info.b_test.cols();
  const Eigen::Index state_dim = n * n_test;
  const auto& layout = problem.layout;

  PgOperator::Options po;
  po.kappa = info.kappa0;
  po.gamma = info.gamma0;
  if (layout->has("kappa"))
    po.kappa_slot = std::make_shared<ParamSegment>(layout->segment("kappa"));
  if (layout->has("gamma"))
    po.gamma_slot = std::make_shared<ParamSegment>(layout->segment("gamma"));
  auto pg = std::make_shared<PgOperator>(info.q, info.b_test, Metric::identity(state_dim), po);

  std::shared_ptr<ParamOperator> d = pg;
  if (layout->has("net_w0")) {
    std::vector<ParamSegment> w_slots, b_slots;
    for (int l = 0; layout->has("net_w" + std::to_string(l)); ++l) {
      w_slots.push_back(layout->segment("net_w" + std::to_string(l)));
      b_slots.push_back(layout->segment("net_b" + std::to_string(l)));
    }
    NetOperator::Options no;
    const auto* trained_net = dynamic_cast<const ComposedOperator*>(&problem.op.inner());
    if (trained_net) {
      const auto* net = dynamic_cast<const NetOperator*>(&trained_net->inner());
      if (net) no.normalize = net->normalized();
    }
    auto net = std::make_shared<NetOperator>(n, static_cast<Eigen::Index>(w_slots.size()), n_test,
                                             Metric::identity(state_dim), w_slots, b_slots, no);
    d = std::make_shared<ComposedOperator>(pg, net);
  }

  KmOperator op(d, problem.op.alpha());
  op.refresh(omega);
  MseLoss loss(Eigen::Map<const Vector>(info.codes_test.data(), state_dim),
               1.0 / static_cast<double>(n_test), state_dim);
  SolverConfig inner_cfg = cfg;
  inner_cfg.u_box.reset();
  InnerTrace trace =
      inner_loop(op, loss, omega, Vector::Zero(state_dim), inner_cfg, Metric::identity(state_dim));
  return trace.loss_values.back();
}

}  // namespace hodl
