// Command-line harness: `run` executes the seeded experiment and emits CSV
// traces plus a JSON summary, `diagnose` emits the empirical certificate
// report, `cvar` evaluates the two CV@R oracles on a file of samples.
//
// Exit codes: 0 success, 1 config error, 2 runtime/divergence, 3 I/O.

#include "cvar/experiment.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitIo = 3;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_config_comment(std::ostream& os, const cvar::ExperimentConfig& cfg) {
  std::istringstream in(cvar::resolved_config_text(cfg));
  std::string line;
  while (std::getline(in, line)) os << "# " << line << "\n";
}

void write_trace_csv(const fs::path& path, const cvar::ExperimentConfig& cfg,
                     const cvar::Trace& trace) {
  std::ofstream os(path);
  if (!os) throw std::ios_base::failure("cannot write " + path.string());
  write_config_comment(os, cfg);
  const Eigen::Index m = cfg.sgd.init.theta.size();
  os << "iter,t";
  for (Eigen::Index j = 0; j < m; ++j) os << ",theta_" << j;
  os << ",in_event,loss_sample,g_alpha_est\n";
  for (const cvar::TraceRecord& r : trace.records) {
    os << r.iter << "," << fmt(r.state.t);
    for (Eigen::Index j = 0; j < m; ++j) os << "," << fmt(r.state.theta[j]);
    // The initial record precedes any step: no event flag, no loss sample.
    if (std::isnan(r.loss_sample))
      os << ",,,";
    else
      os << "," << (r.in_event ? 1 : 0) << "," << fmt(r.loss_sample) << ",";
    if (r.g_alpha_est) os << fmt(*r.g_alpha_est);
    os << "\n";
  }
}

json vector_to_json(const cvar::Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet{false};
};

cvar::ExperimentConfig load_config(const std::string& config_path,
                                   const Overrides& ov) {
  cvar::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = cvar::parse_config_file(config_path);
  if (ov.seed) cfg.stream.seed = *ov.seed;
  if (ov.out) cfg.output_dir = *ov.out;
  cfg.validate();
  return cfg;
}

struct GapTrajectory {
  std::vector<std::uint64_t> iters;
  std::vector<double> mean_gaps;                  // across seeds, population
  std::vector<std::vector<double>> per_seed_gaps;
};

/// Population-based optimality-gap trajectories at the logged iterations.
GapTrajectory gap_trajectories(const cvar::ExperimentConfig& cfg,
                               const std::vector<cvar::Trace>& traces,
                               const cvar::PopulationMatrix& pm,
                               const cvar::ReferenceSolution& ref) {
  GapTrajectory out;
  for (const cvar::TraceRecord& r : traces[0].records)
    if (r.g_alpha_est) out.iters.push_back(r.iter);
  out.per_seed_gaps.resize(traces.size());
  for (std::size_t s = 0; s < traces.size(); ++s) {
    for (const cvar::TraceRecord& r : traces[s].records) {
      if (!r.g_alpha_est) continue;
      const cvar::Vector losses =
          cvar::ridge_loss_vector(pm, cfg.lambda, r.state.theta);
      out.per_seed_gaps[s].push_back(
          cvar::g_alpha_from_losses(losses, r.state.t, cfg.sgd.alpha) -
          ref.g_star);
    }
  }
  out.mean_gaps.resize(out.iters.size(), 0.0);
  for (const auto& seed_gaps : out.per_seed_gaps)
    for (std::size_t i = 0; i < seed_gaps.size(); ++i)
      out.mean_gaps[i] += seed_gaps[i] / static_cast<double>(traces.size());
  return out;
}

int cmd_run(const std::string& config_path, const Overrides& ov) {
  cvar::ExperimentConfig cfg = load_config(config_path, ov);
  const cvar::RidgeLoss loss = cfg.make_loss();

  fs::create_directories(cfg.output_dir);
  const fs::path out_dir(cfg.output_dir);

  if (!ov.quiet) std::cout << "materializing population...\n";
  const std::vector<cvar::Example> population = experiment_population(cfg);
  const cvar::PopulationMatrix pm = cvar::to_matrix(population);
  const cvar::ReferenceSolution ref = cvar::estimate_reference(
      loss, cfg.sgd.alpha, population, cfg.sgd.init);

  std::vector<cvar::Trace> traces;
  for (int s = 0; s < cfg.n_seeds; ++s) {
    if (!ov.quiet) std::cout << "seed " << s << "...\n";
    const fs::path trace_path =
        out_dir / ("trace_seed" + std::to_string(s) + ".csv");
    try {
      traces.push_back(
          cvar::run_seed(cfg, loss, static_cast<std::uint64_t>(s)));
    } catch (const cvar::RunError& e) {
      // Flush whatever the run recorded before failing.
      if (e.partial_trace) write_trace_csv(trace_path, cfg, *e.partial_trace);
      throw;
    }
    write_trace_csv(trace_path, cfg, traces.back());
  }

  const GapTrajectory gaps = gap_trajectories(cfg, traces, pm, ref);
  json rate = nullptr;
  try {
    const cvar::RateFit fit = cvar::fit_linear_rate(gaps.mean_gaps, 0, 0.5);
    rate = {{"rho", fit.rho}, {"floor", fit.floor}};
  } catch (const std::exception& e) {
    rate = {{"error", e.what()}};
  }

  // Final solutions and the test-error comparison artifacts.
  const cvar::ParamState final_state = traces[0].records.back().state;
  const std::vector<cvar::Vector> lms =
      cvar::run_lms_seed(cfg, loss, 0, cfg.baseline_beta);
  const cvar::Vector theta_cvar = final_state.theta;
  const cvar::Vector theta_lms = lms.back();

  const cvar::ExampleSource test =
      cvar::make_source(cfg.stream, cvar::kPurposeTest, 0);
  std::ofstream seq(out_dir / "test_error_sequence.csv");
  std::ofstream samp_cvar(out_dir / "test_error_cvar_sgd.csv");
  std::ofstream samp_lms(out_dir / "test_error_lms.csv");
  if (!seq || !samp_cvar || !samp_lms)
    throw std::ios_base::failure("cannot write test-error CSVs");
  write_config_comment(seq, cfg);
  write_config_comment(samp_cvar, cfg);
  write_config_comment(samp_lms, cfg);
  seq << "index,cvar_sq_error,cvar_ridge_loss,lms_sq_error,lms_ridge_loss\n";
  samp_cvar << "index,sq_error,ridge_loss\n";
  samp_lms << "index,sq_error,ridge_loss\n";
  for (std::uint64_t i = 0; i < cfg.test_n; ++i) {
    const cvar::Example e = test(i).base;
    const double rc = e.y - theta_cvar.dot(e.x);
    const double rl = e.y - theta_lms.dot(e.x);
    const double sq_c = rc * rc;
    const double sq_l = rl * rl;
    const double full_c = sq_c + cfg.lambda * theta_cvar.squaredNorm();
    const double full_l = sq_l + cfg.lambda * theta_lms.squaredNorm();
    seq << i << "," << fmt(sq_c) << "," << fmt(full_c) << "," << fmt(sq_l)
        << "," << fmt(full_l) << "\n";
    samp_cvar << i << "," << fmt(sq_c) << "," << fmt(full_c) << "\n";
    samp_lms << i << "," << fmt(sq_l) << "," << fmt(full_l) << "\n";
  }

  json summary;
  summary["resolved_config"] = cvar::resolved_config_text(cfg);
  summary["reference"] = {{"theta_star", vector_to_json(ref.theta_star)},
                          {"t_star", ref.t_star},
                          {"g_star", ref.g_star},
                          {"method", ref.method},
                          {"n_samples", ref.n_samples}};
  json final_gaps = json::array();
  for (const auto& seed_gaps : gaps.per_seed_gaps)
    final_gaps.push_back(seed_gaps.back());
  summary["final_gap_per_seed"] = final_gaps;
  summary["mean_gap_final"] = gaps.mean_gaps.back();
  summary["rate_fit"] = rate;
  summary["theta_cvar_sgd"] = vector_to_json(theta_cvar);
  summary["theta_lms"] = vector_to_json(theta_lms);
  std::ofstream sj(out_dir / "summary.json");
  if (!sj) throw std::ios_base::failure("cannot write summary.json");
  sj << summary.dump(2) << "\n";

  if (!ov.quiet)
    std::cout << "wrote " << (out_dir / "summary.json").string() << "\n";
  return kExitOk;
}

int cmd_diagnose(const std::string& config_path, const Overrides& ov) {
  cvar::ExperimentConfig cfg = load_config(config_path, ov);
  const cvar::RidgeLoss loss = cfg.make_loss();
  const double alpha = cfg.sgd.alpha.value();
  const cvar::LossConstants consts = loss.constants();
  const double mu = consts.mu;

  fs::create_directories(cfg.output_dir);
  const fs::path out_dir(cfg.output_dir);

  if (!ov.quiet) std::cout << "materializing population...\n";
  const std::vector<cvar::Example> population = experiment_population(cfg);
  const cvar::PopulationMatrix pm = cvar::to_matrix(population);
  const cvar::ReferenceSolution ref = cvar::estimate_reference(
      loss, cfg.sgd.alpha, population, cfg.sgd.init);

  // Set-restricted PL certificate at random states with nontrivial event
  // mass: theta sampled around the unit box, t pinned to a loss quantile.
  if (!ov.quiet) std::cout << "set-restricted PL check...\n";
  const cvar::CounterRng srng(cfg.stream.seed, 0x504c43ULL);  // "PLC"
  std::vector<cvar::ParamState> states;
  for (std::uint64_t i = 0; states.size() < 50 && i < 500; ++i) {
    cvar::ParamState st;
    st.theta.resize(cfg.stream.dim_d);
    for (int j = 0; j < cfg.stream.dim_d; ++j)
      st.theta[j] = srng.uniform(i, static_cast<std::uint64_t>(j), -1.0, 2.0);
    const cvar::Vector losses =
        cvar::ridge_loss_vector(pm, cfg.lambda, st.theta);
    std::vector<double> sorted(losses.data(), losses.data() + losses.size());
    std::sort(sorted.begin(), sorted.end());
    const double q = srng.uniform(i, 1000, 0.05, 0.85);
    st.t = sorted[static_cast<std::size_t>(q *
                                           static_cast<double>(sorted.size()))];
    states.push_back(std::move(st));
  }
  const cvar::PlReport pl =
      cvar::set_restricted_pl_check(loss, states, mu, population, 0.05);

  // Seeded runs for the measured gap trajectory.
  std::vector<cvar::Trace> traces;
  for (int s = 0; s < cfg.n_seeds; ++s) {
    if (!ov.quiet) std::cout << "seed " << s << "...\n";
    traces.push_back(cvar::run_seed(cfg, loss, static_cast<std::uint64_t>(s)));
  }
  const GapTrajectory gaps = gap_trajectories(cfg, traces, pm, ref);

  // Per-iterate drift certificate for G_alpha along the seed-0 trace.
  const std::vector<cvar::DriftCertificateResult> cert =
      cvar::drift_certificate(traces[0], loss, population, cfg.sgd.alpha, mu,
                               ref);

  const cvar::GradBoundEstimate ct = cvar::estimate_grad_bound(
      traces[0], loss, cvar::make_source(cfg.stream, cvar::kPurposeEval, 999),
      cfg.sgd.eval_batch);

  // Convergence bound trajectory with empirically instantiated constants.
  const double gap0 = gaps.mean_gaps.front();
  json bound_traj = json::array();
  bool below_bound = true;
  for (std::size_t i = 0; i < gaps.iters.size(); ++i) {
    const double b =
        cvar::convergence_bound(mu, consts.L_smooth, cfg.sgd.steps, cfg.sgd.alpha,
                             gaps.iters[i], gap0, ct.c_t_squared);
    bound_traj.push_back(
        {{"iter", gaps.iters[i]}, {"bound", b}, {"mean_gap", gaps.mean_gaps[i]}});
    if (gaps.mean_gaps[i] > b) below_bound = false;
  }

  // Stepsize admissibility with the empirically smallest positive expected
  // t-drift as epsilon.
  json adm = nullptr;
  if (alpha < 1.0) {
    double eps = std::numeric_limits<double>::infinity();
    for (const auto& r : cert) {
      const double drift = -cfg.sgd.steps.gamma * (1.0 - r.event_mass / alpha);
      if (drift > 0.0) eps = std::min(eps, drift);
    }
    if (std::isfinite(eps)) {
      const cvar::AdmissibilityResult a = cvar::stepsize_admissibility(
          cfg.sgd.alpha, eps, cfg.sgd.steps.gamma, mu, ref.t_star,
          consts.l_floor);
      adm = {{"epsilon", eps},          {"epsilon_provenance",
              "min positive expected t-drift over logged trace states"},
             {"gamma", cfg.sgd.steps.gamma},
             {"lower", a.lower},        {"upper", a.upper},
             {"ok", a.ok},              {"feasible", a.feasible}};
    } else {
      adm = {{"error", "no logged state had positive expected t-drift"}};
    }
  } else {
    adm = {{"error", "bounds undefined for alpha = 1"}};
  }

  json rate = nullptr;
  try {
    const cvar::RateFit fit = cvar::fit_linear_rate(gaps.mean_gaps, 0, 0.5);
    rate = {{"rho", fit.rho}, {"floor", fit.floor}};
  } catch (const std::exception& e) {
    rate = {{"error", e.what()}};
  }

  json cert_json = json::array();
  std::size_t cert_checked = 0, cert_failed = 0;
  for (const auto& r : cert) {
    if (r.condition_holds) {
      ++cert_checked;
      if (!r.ok) ++cert_failed;
    }
    cert_json.push_back({{"iter", r.iter},
                          {"event_mass", r.event_mass},
                          {"condition_holds", r.condition_holds},
                          {"lhs", r.lhs},
                          {"rhs", r.rhs},
                          {"combined_se", r.combined_se},
                          {"ok", r.ok}});
  }

  json report;
  report["resolved_config"] = cvar::resolved_config_text(cfg);
  report["reference"] = {{"theta_star", vector_to_json(ref.theta_star)},
                         {"t_star", ref.t_star},
                         {"g_star", ref.g_star},
                         {"method", ref.method},
                         {"n_samples", ref.n_samples},
                         {"note",
                          "t_star is the empirical-population substitute for "
                          "the distributional quantile"}};
  report["constants"] = {
      {"mu", mu},
      {"mu_provenance", "ridge strong convexity 2*lambda"},
      {"L_smooth", consts.L_smooth},
      {"L_provenance", "loss smoothness 2*E||x||^2 + 2*lambda (declared input bound)"},
      {"c_t_squared", ct.c_t_squared},
      {"c_t_provenance", "Monte Carlo sup over thinned trace states"},
      {"gap0", gap0},
      {"gap0_provenance", "mean population gap at iteration 0"}};
  report["set_restricted_pl"] = {{"mu_tested", pl.mu_tested},
                                 {"n_points", pl.n_points},
                                 {"n_violations", pl.n_violations},
                                 {"n_skipped", pl.n_skipped},
                                 {"worst_margin", pl.worst_margin}};
  report["pl_certificate_g_alpha"] = {{"n_checked", cert_checked},
                                      {"n_failed", cert_failed},
                                      {"states", cert_json}};
  report["stepsize_admissibility"] = adm;
  report["bound_trajectory"] = bound_traj;
  report["mean_gap_below_bound"] = below_bound;
  report["rate_fit"] = rate;

  std::ofstream rj(out_dir / "report.json");
  if (!rj) throw std::ios_base::failure("cannot write report.json");
  rj << report.dump(2) << "\n";
  if (!ov.quiet)
    std::cout << "wrote " << (out_dir / "report.json").string() << "\n";
  return kExitOk;
}

int cmd_cvar(const std::string& samples_file, double alpha_raw) {
  cvar::ConfidenceLevel alpha(alpha_raw);  // throws on bad alpha
  std::ifstream in(samples_file);
  if (!in) {
    std::cerr << "error: cannot open " << samples_file << "\n";
    return kExitIo;
  }
  std::vector<double> samples;
  double v;
  while (in >> v) samples.push_back(v);
  if (samples.empty()) {
    std::cerr << "error: no samples in " << samples_file << "\n";
    return kExitIo;
  }
  const double sorted = cvar::cvar_sorted(samples, alpha);
  const auto [variational, t_star] =
      cvar::cvar_variational(samples, alpha, 1e-10);
  std::cout << "cvar_sorted      = " << fmt(sorted) << "\n";
  std::cout << "cvar_variational = " << fmt(variational)
            << "  (t_star = " << fmt(t_star) << ")\n";
  std::cout << "difference       = " << fmt(sorted - variational) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CV@R statistical learning by stochastic gradient descent"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file");
    sub->add_option("--seed", ov.seed, "override the stream seed");
    sub->add_option("--out", ov.out, "override the output directory");
    sub->add_flag("--quiet", ov.quiet, "suppress progress output");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "execute the experiment");
  add_common(run_cmd);

  CLI::App* diag_cmd =
      app.add_subcommand("diagnose", "emit the empirical certificate report");
  add_common(diag_cmd);

  CLI::App* cvar_cmd =
      app.add_subcommand("cvar", "evaluate the CV@R oracles on a sample file");
  std::string samples_file;
  double alpha = 0.0;
  cvar_cmd->add_option("samples_file", samples_file, "one real per line")
      ->required();
  cvar_cmd->add_option("--alpha", alpha, "confidence level in (0,1]")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(config_path, ov);
    if (diag_cmd->parsed()) return cmd_diagnose(config_path, ov);
    if (cvar_cmd->parsed()) return cmd_cvar(samples_file, alpha);
  } catch (const cvar::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const cvar::ValidationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const cvar::RunError& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
