// Experiment plumbing shared by the CLI and the verification suites:
// configuration with the default desk-scale ridge setup, config-file parsing,
// stream wiring from counter-based sources, and vectorized population
// evaluation for the ridge loss.

#ifndef CVAR_EXPERIMENT_HPP
#define CVAR_EXPERIMENT_HPP

#include "cvar/core.hpp"
#include "cvar/datagen.hpp"
#include "cvar/diagnostics.hpp"
#include "cvar/losses.hpp"
#include "cvar/objective.hpp"
#include "cvar/optimizer.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace cvar {

/// Full experiment configuration. Defaults reproduce the desk-scale
/// risk-aware ridge regression setup: d = m = 7, lambda = 0.1, alpha = 0.2,
/// beta = alpha * 0.01 = 0.002, gamma = 0.001, LMS stepsize 0.01.
struct ExperimentConfig {
  StreamSpec stream;
  double lambda{0.1};
  SgdConfig sgd;
  double baseline_beta{0.01};
  int n_seeds{20};
  std::uint64_t population_n{100000};
  std::uint64_t test_n{100000};
  std::string output_dir{"out"};

  ExperimentConfig() {
    sgd.alpha = ConfidenceLevel(0.2);
    sgd.steps = StepSizes(0.002, 0.001);
    sgd.horizon_T = 20000;
    sgd.init.theta = Vector::Zero(7);
    sgd.init.t = 0.0;
    sgd.eval_cadence = 100;
    sgd.eval_batch = 10000;
  }

  void validate() const {
    stream.validate();
    sgd.validate();
    if (lambda <= 0.0) throw ValidationError("lambda must be positive");
    if (baseline_beta <= 0.0)
      throw ValidationError("baseline_beta must be positive");
    if (n_seeds < 1) throw ValidationError("n_seeds must be >= 1");
    if (population_n < 1000)
      throw ValidationError("population_n must be >= 1000");
    if (sgd.init.theta.size() != stream.dim_d)
      throw ValidationError("init theta dimension must match dim_d");
  }

  /// Declared E||x||^2 of the input distribution, used for the reported
  /// smoothness constant of the ridge loss.
  double x_norm_sq_mean() const {
    const double a = stream.x_low, b = stream.x_high;
    return static_cast<double>(stream.dim_d) * (a * a + a * b + b * b) / 3.0;
  }

  RidgeLoss make_loss() const { return RidgeLoss(lambda, x_norm_sq_mean()); }
};

// ---------------------------------------------------------------------------
// Stream wiring. Purposes get independent keyed generators so training,
// evaluation, testing, and the fixed population never share draws.

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t purpose,
                                 std::uint64_t index) {
  return detail::mix64(detail::mix64(base ^ (purpose * 0x9e3779b97f4a7c15ULL)) ^
                       index);
}

inline constexpr std::uint64_t kPurposeTrain = 1;
inline constexpr std::uint64_t kPurposeEval = 2;
inline constexpr std::uint64_t kPurposeTest = 3;
inline constexpr std::uint64_t kPurposePopulation = 4;

inline ExampleSource make_source(StreamSpec spec, std::uint64_t purpose,
                                 std::uint64_t index = 0) {
  spec.seed = derive_seed(spec.seed, purpose, index);
  return [spec](std::uint64_t counter) { return next_example(spec, counter); };
}

/// The fixed population used by every diagnostic check (shared across seeds).
inline std::vector<Example> experiment_population(const ExperimentConfig& cfg) {
  StreamSpec spec = cfg.stream;
  spec.seed = derive_seed(spec.seed, kPurposePopulation, 0);
  spec.sigma_w = 0.0;
  return materialize_population(spec, cfg.population_n);
}

/// One seeded CV@R-SGD run of the configured experiment.
inline Trace run_seed(const ExperimentConfig& cfg, const LossModel& loss,
                      std::uint64_t seed_index) {
  SgdConfig sgd = cfg.sgd;
  sgd.seed = derive_seed(cfg.stream.seed, kPurposeTrain, seed_index);
  StreamSpec spec = cfg.stream;
  if (sgd.sigma > 0.0) spec.sigma_w = sgd.sigma;
  return run(sgd, loss, make_source(spec, kPurposeTrain, seed_index),
             make_source(cfg.stream, kPurposeEval, seed_index));
}

/// LMS baseline on the same training stream.
inline std::vector<Vector> run_lms_seed(const ExperimentConfig& cfg,
                                        const LossModel& loss,
                                        std::uint64_t seed_index,
                                        double beta) {
  return run_lms(cfg.sgd.init.theta, beta, loss,
                 make_source(cfg.stream, kPurposeTrain, seed_index),
                 cfg.sgd.horizon_T);
}

// ---------------------------------------------------------------------------
// Vectorized population evaluation for the ridge loss.

struct PopulationMatrix {
  Eigen::MatrixXd X;  // n x d
  Vector y;
};

inline PopulationMatrix to_matrix(std::span<const Example> population) {
  PopulationMatrix pm;
  const Eigen::Index n = static_cast<Eigen::Index>(population.size());
  const Eigen::Index d = population.empty() ? 0 : population[0].x.size();
  pm.X.resize(n, d);
  pm.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    pm.X.row(i) = population[static_cast<std::size_t>(i)].x;
    pm.y[i] = population[static_cast<std::size_t>(i)].y;
  }
  return pm;
}

inline Vector ridge_loss_vector(const PopulationMatrix& pm, double lambda,
                                const Vector& theta) {
  const Vector resid = pm.y - pm.X * theta;
  return resid.array().square().matrix() +
         Vector::Constant(resid.size(), lambda * theta.squaredNorm());
}

inline double g_alpha_from_losses(const Vector& losses, double t,
                                  const ConfidenceLevel& alpha) {
  const double a = alpha.value();
  const double positive_mean =
      (losses.array() - t).max(0.0).mean();
  return t + positive_mean / a;
}

// ---------------------------------------------------------------------------
// Config file parsing: flat INI-style sections mirroring the type names.
// Unknown sections or keys are hard errors.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail_cfg {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("invalid number for key '" + key + "': " + v);
  }
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("invalid integer for key '" + key + "': " + v);
  }
}

inline Vector to_vector(const std::string& key, const std::string& v) {
  std::vector<double> vals;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) vals.push_back(to_double(key, item));
  }
  if (vals.empty()) throw ConfigError("empty vector for key '" + key + "'");
  Vector out(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = vals[i];
  return out;
}

}  // namespace detail_cfg

inline ExperimentConfig parse_config_text(std::istream& in) {
  ExperimentConfig cfg;
  std::string section;
  std::string line;
  bool theta0_given = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail_cfg::trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = detail_cfg::trim(line.substr(1, line.size() - 2));
      if (section != "stream" && section != "loss" && section != "sgd" &&
          section != "run")
        throw ConfigError("unknown section [" + section + "] at line " +
                          std::to_string(lineno));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected 'key = value' at line " +
                        std::to_string(lineno));
    const std::string key = detail_cfg::trim(line.substr(0, eq));
    const std::string val = detail_cfg::trim(line.substr(eq + 1));
    using namespace detail_cfg;

    try {
    if (section == "stream") {
      if (key == "kind") {
        if (val == "ridge_paper")
          cfg.stream.kind = StreamKind::ridge_paper;
        else if (val == "linear_gaussian_noise")
          cfg.stream.kind = StreamKind::linear_gaussian_noise;
        else if (val == "finite_population")
          cfg.stream.kind = StreamKind::finite_population;
        else
          throw ConfigError("unknown stream kind: " + val);
      } else if (key == "dim_d") {
        cfg.stream.dim_d = static_cast<int>(to_u64(key, val));
      } else if (key == "theta_o") {
        cfg.stream.theta_o = to_vector(key, val);
      } else if (key == "noise_std") {
        cfg.stream.noise_std = to_double(key, val);
      } else if (key == "x_low") {
        cfg.stream.x_low = to_double(key, val);
      } else if (key == "x_high") {
        cfg.stream.x_high = to_double(key, val);
      } else if (key == "seed") {
        cfg.stream.seed = to_u64(key, val);
      } else if (key == "sigma_w") {
        cfg.stream.sigma_w = to_double(key, val);
      } else if (key == "pop_cycle") {
        cfg.stream.pop_cycle = to_u64(key, val);
      } else {
        throw ConfigError("unknown key '" + key + "' in [stream]");
      }
    } else if (section == "loss") {
      if (key == "kind") {
        if (val != "ridge") throw ConfigError("unknown loss kind: " + val);
      } else if (key == "lambda") {
        cfg.lambda = to_double(key, val);
      } else {
        throw ConfigError("unknown key '" + key + "' in [loss]");
      }
    } else if (section == "sgd") {
      if (key == "alpha") {
        cfg.sgd.alpha = ConfidenceLevel(to_double(key, val));
      } else if (key == "beta") {
        cfg.sgd.steps = StepSizes(to_double(key, val), cfg.sgd.steps.gamma);
      } else if (key == "gamma") {
        cfg.sgd.steps = StepSizes(cfg.sgd.steps.beta, to_double(key, val));
      } else if (key == "horizon_T") {
        cfg.sgd.horizon_T = to_u64(key, val);
      } else if (key == "sigma") {
        cfg.sgd.sigma = to_double(key, val);
      } else if (key == "eval_cadence") {
        cfg.sgd.eval_cadence = to_u64(key, val);
      } else if (key == "eval_batch") {
        cfg.sgd.eval_batch = to_u64(key, val);
      } else if (key == "theta0") {
        cfg.sgd.init.theta = to_vector(key, val);
        theta0_given = true;
      } else if (key == "t0") {
        cfg.sgd.init.t = to_double(key, val);
      } else {
        throw ConfigError("unknown key '" + key + "' in [sgd]");
      }
    } else if (section == "run") {
      if (key == "baseline_beta") {
        cfg.baseline_beta = to_double(key, val);
      } else if (key == "n_seeds") {
        cfg.n_seeds = static_cast<int>(to_u64(key, val));
      } else if (key == "population_n") {
        cfg.population_n = to_u64(key, val);
      } else if (key == "test_n") {
        cfg.test_n = to_u64(key, val);
      } else if (key == "output_dir") {
        cfg.output_dir = val;
      } else {
        throw ConfigError("unknown key '" + key + "' in [run]");
      }
    } else {
      throw ConfigError("key '" + key + "' outside any section at line " +
                        std::to_string(lineno));
    }
    } catch (const ValidationError& e) {
      throw ConfigError("invalid value for key '" + key + "' at line " +
                        std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!theta0_given && cfg.sgd.init.theta.size() != cfg.stream.dim_d)
    cfg.sgd.init.theta = Vector::Zero(cfg.stream.dim_d);
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_config_text(in);
}

/// The fully resolved config as config-file text, embedded in every output so
/// any artifact is self-reproducing.
inline std::string resolved_config_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "[stream]\n";
  os << "kind = " << to_string(cfg.stream.kind) << "\n";
  os << "dim_d = " << cfg.stream.dim_d << "\n";
  os << "theta_o = ";
  for (Eigen::Index i = 0; i < cfg.stream.theta_o.size(); ++i)
    os << (i ? "," : "") << cfg.stream.theta_o[i];
  os << "\n";
  os << "noise_std = " << cfg.stream.noise_std << "\n";
  os << "x_low = " << cfg.stream.x_low << "\n";
  os << "x_high = " << cfg.stream.x_high << "\n";
  os << "seed = " << cfg.stream.seed << "\n";
  os << "sigma_w = " << cfg.stream.sigma_w << "\n";
  if (cfg.stream.pop_cycle) os << "pop_cycle = " << cfg.stream.pop_cycle << "\n";
  os << "\n[loss]\nkind = ridge\nlambda = " << cfg.lambda << "\n";
  os << "\n[sgd]\n";
  os << "alpha = " << cfg.sgd.alpha.value() << "\n";
  os << "beta = " << cfg.sgd.steps.beta << "\n";
  os << "gamma = " << cfg.sgd.steps.gamma << "\n";
  os << "horizon_T = " << cfg.sgd.horizon_T << "\n";
  os << "sigma = " << cfg.sgd.sigma << "\n";
  os << "eval_cadence = " << cfg.sgd.eval_cadence << "\n";
  os << "eval_batch = " << cfg.sgd.eval_batch << "\n";
  os << "theta0 = ";
  for (Eigen::Index i = 0; i < cfg.sgd.init.theta.size(); ++i)
    os << (i ? "," : "") << cfg.sgd.init.theta[i];
  os << "\n";
  os << "t0 = " << cfg.sgd.init.t << "\n";
  os << "\n[run]\n";
  os << "baseline_beta = " << cfg.baseline_beta << "\n";
  os << "n_seeds = " << cfg.n_seeds << "\n";
  os << "population_n = " << cfg.population_n << "\n";
  os << "test_n = " << cfg.test_n << "\n";
  os << "output_dir = " << cfg.output_dir << "\n";
  return os.str();
}

}  // namespace cvar

#endif  // CVAR_EXPERIMENT_HPP
