// End-to-end verification of the library's headline guarantees. Each test
// case prints one [PASS]/[FAIL] line; the heavyweight experiment state
// (population, reference solution, seeded traces) is shared lazily.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cvar/experiment.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace cvar;
namespace fs = std::filesystem;

namespace {

struct Shared {
  ExperimentConfig cfg;  // stock desk-scale setup
  std::vector<Example> population;
  PopulationMatrix pm;
  ReferenceSolution ref;
  std::vector<std::uint64_t> iters;  // logged iterations
  std::vector<double> mean_gaps;     // population gap averaged over seeds
  Trace trace0;
  std::vector<ParamState> finals;
};

Shared& shared() {
  static Shared sh = [] {
    Shared s;
    const RidgeLoss loss = s.cfg.make_loss();
    s.population = experiment_population(s.cfg);
    s.pm = to_matrix(s.population);
    s.ref = estimate_reference(loss, s.cfg.sgd.alpha, s.population,
                               s.cfg.sgd.init);
    const double n_seeds = static_cast<double>(s.cfg.n_seeds);
    for (int seed = 0; seed < s.cfg.n_seeds; ++seed) {
      Trace tr = run_seed(s.cfg, loss, static_cast<std::uint64_t>(seed));
      std::size_t gi = 0;
      for (const TraceRecord& r : tr.records) {
        if (!r.g_alpha_est) continue;
        if (seed == 0) {
          s.iters.push_back(r.iter);
          s.mean_gaps.push_back(0.0);
        }
        const Vector losses = ridge_loss_vector(s.pm, s.cfg.lambda,
                                                r.state.theta);
        s.mean_gaps[gi++] +=
            (g_alpha_from_losses(losses, r.state.t, s.cfg.sgd.alpha) -
             s.ref.g_star) /
            n_seeds;
      }
      s.finals.push_back(tr.records.back().state);
      if (seed == 0) s.trace0 = std::move(tr);
    }
    return s;
  }();
  return sh;
}

class Criterion {
 public:
  Criterion(int number, std::string description)
      : number_(number),
        description_(std::move(description)),
        start_(std::chrono::steady_clock::now()) {}
  void conclude(bool ok) const {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      start_)
            .count();
    std::printf("[%s] criterion %d: %s (%.1fs)\n", ok ? "PASS" : "FAIL",
                number_, description_.c_str(), secs);
    std::fflush(stdout);
  }

 private:
  int number_;
  std::string description_;
  std::chrono::steady_clock::time_point start_;
};

std::vector<Example> fixed_batch(std::uint64_t seed, std::size_t n) {
  StreamSpec spec;
  spec.seed = seed;
  std::vector<Example> batch;
  for (std::uint64_t i = 0; i < n; ++i)
    batch.push_back(next_example(spec, i).base);
  return batch;
}

double mean_of(const Vector& v) { return v.mean(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("criterion 1: oracle equivalence of sorted and variational CV@R") {
  const Criterion c(1, "sorted-tail and variational CV@R agree on 200 random "
                       "sample sets");
  const CounterRng rng(2024, 1);
  const double alphas[] = {0.05, 0.2, 0.5, 0.9, 1.0};
  bool ok = true;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const std::size_t n =
        10 + static_cast<std::size_t>(rng.uniform(i, 0) * 9990.0);
    const auto samples = test_util::uniform_samples(7000 + i, n, -50.0, 50.0);
    const ConfidenceLevel alpha(alphas[i % 5]);
    const double sorted = cvar_sorted(samples, alpha);
    const auto [vari, t_star] = cvar_variational(samples, alpha, 1e-10);
    (void)t_star;
    const bool agree = std::abs(sorted - vari) <= 1e-8 * (1.0 + std::abs(sorted));
    CHECK(agree);
    ok = ok && agree;
  }
  c.conclude(ok);
}

TEST_CASE("criterion 2: gradient estimators match finite differences") {
  const Criterion c(2, "plain and smoothed gradient estimators match finite "
                       "differences at 100 random states");
  const RidgeLoss loss(0.1);
  const SmoothedSurrogate sm(loss, 0.5);
  const ConfidenceLevel alpha(0.3);
  const auto batch = fixed_batch(314, 64);
  const CounterRng rng(2025, 2);
  const double h = 1e-5;

  bool ok = true;
  int tested = 0;
  for (std::uint64_t trial = 0; trial < 400 && tested < 100; ++trial) {
    ParamState st;
    st.theta = test_util::random_vector(rng, trial, 7, -0.5, 1.5);
    st.t = rng.uniform(trial, 50, 0.0, 30.0);
    bool tie = false;
    for (const Example& e : batch)
      if (std::abs(loss.value(st.theta, e) - st.t) < 10.0 * h * (1.0 + st.t))
        tie = true;
    if (tie) continue;
    ++tested;

    Vector z(8);
    z.head(7) = st.theta;
    z[7] = st.t;

    const Vector fd_plain = test_util::fd_gradient(
        [&](const Vector& zz) {
          ParamState q;
          q.theta = zz.head(7);
          q.t = zz[7];
          return g_alpha_estimate(q, loss, batch, alpha).value;
        },
        z, h);
    const Vector g_plain = grad_g_alpha_estimate(st, loss, batch, alpha);
    const bool plain_ok =
        (g_plain - fd_plain).norm() <= 1e-4 * (1.0 + g_plain.norm());

    const Vector fd_smooth = test_util::fd_gradient(
        [&](const Vector& zz) {
          ParamState q;
          q.theta = zz.head(7);
          q.t = zz[7];
          return smoothed_g_estimate(q, sm, batch, alpha).value;
        },
        z, 1e-6);
    const Vector g_smooth = smoothed_grad_g(st, sm, batch, alpha);
    const bool smooth_ok =
        (g_smooth - fd_smooth).norm() <= 1e-4 * (1.0 + g_smooth.norm());

    CHECK(plain_ok);
    CHECK(smooth_ok);
    ok = ok && plain_ok && smooth_ok;
  }
  CHECK(tested == 100);
  c.conclude(ok && tested == 100);
}

TEST_CASE("criterion 3: set-restricted curvature certificate") {
  const Criterion c(3, "set-restricted PL inequality with mu = 0.2 holds at "
                       "50 random states over the 1e5-example population");
  Shared& sh = shared();
  const RidgeLoss loss = sh.cfg.make_loss();
  const CounterRng rng(sh.cfg.stream.seed, 0x504c43ULL);

  std::vector<ParamState> states;
  for (std::uint64_t i = 0; states.size() < 50; ++i) {
    ParamState st;
    st.theta = test_util::random_vector(rng, i, 7, -1.0, 2.0);
    const Vector losses = ridge_loss_vector(sh.pm, sh.cfg.lambda, st.theta);
    std::vector<double> sorted(losses.data(), losses.data() + losses.size());
    std::sort(sorted.begin(), sorted.end());
    const double q = rng.uniform(i, 1000, 0.05, 0.85);
    st.t = sorted[static_cast<std::size_t>(
        q * static_cast<double>(sorted.size() - 1))];
    states.push_back(std::move(st));
  }

  const PlReport rep =
      set_restricted_pl_check(loss, states, 0.2, sh.population, 0.05);
  CHECK(rep.n_points == 50);
  CHECK(rep.n_violations == 0);
  c.conclude(rep.n_points == 50 && rep.n_violations == 0);
}

TEST_CASE("criterion 4: PL certificate for the joint objective along a run") {
  const Criterion c(4, "along the seed-0 trace every state satisfying the "
                       "event-mass condition passes the PL inequality within "
                       "3 combined standard errors");
  Shared& sh = shared();
  const RidgeLoss loss = sh.cfg.make_loss();
  const auto results = drift_certificate(sh.trace0, loss, sh.population,
                                          sh.cfg.sgd.alpha, 0.2, sh.ref);
  std::size_t checked = 0, failed = 0;
  for (const auto& r : results) {
    if (!r.condition_holds) continue;
    ++checked;
    if (!r.ok) ++failed;
    CHECK(r.ok);
  }
  CHECK(checked >= 1);
  c.conclude(checked >= 1 && failed == 0);
}

TEST_CASE("criterion 5: noisy linear convergence under the stock parameters") {
  const Criterion c(5, "mean optimality gap over 20 seeds decays "
                       "geometrically to a positive floor and stays below the "
                       "convergence bound");
  Shared& sh = shared();
  const RidgeLoss loss = sh.cfg.make_loss();
  const LossConstants consts = loss.constants();

  const RateFit fit = fit_linear_rate(sh.mean_gaps, 0, 0.5);
  CHECK(fit.rho < 0.9999);
  CHECK(fit.floor > 0.0);

  const GradBoundEstimate ct = estimate_grad_bound(
      sh.trace0, loss, make_source(sh.cfg.stream, kPurposeEval, 999),
      sh.cfg.sgd.eval_batch);
  CHECK(ct.c_t_squared > 0.0);

  const double gap0 = sh.mean_gaps.front();
  bool below = true;
  for (std::size_t i = 0; i < sh.iters.size(); ++i) {
    const double bound =
        convergence_bound(consts.mu, consts.L_smooth, sh.cfg.sgd.steps,
                       sh.cfg.sgd.alpha, sh.iters[i], gap0, ct.c_t_squared);
    if (sh.mean_gaps[i] > bound) below = false;
    CHECK(sh.mean_gaps[i] <= bound);
  }
  c.conclude(fit.rho < 0.9999 && fit.floor > 0.0 && below);
}

TEST_CASE("criterion 6: risk/mean trade-off of the two final solutions") {
  const Criterion c(6, "on 1e5 fresh test examples the risk-aware solution "
                       "wins on CV@R of the test loss and the baseline wins "
                       "on the mean");
  Shared& sh = shared();
  const RidgeLoss loss = sh.cfg.make_loss();
  const Vector theta_cvar = sh.finals[0].theta;
  const std::vector<Vector> lms =
      run_lms_seed(sh.cfg, loss, 0, sh.cfg.baseline_beta);
  const Vector theta_lms = lms.back();

  const ExampleSource test = make_source(sh.cfg.stream, kPurposeTest, 0);
  const std::uint64_t n = sh.cfg.test_n;
  std::vector<double> loss_cvar(n), loss_lms(n);
  const double reg_c = sh.cfg.lambda * theta_cvar.squaredNorm();
  const double reg_l = sh.cfg.lambda * theta_lms.squaredNorm();
  for (std::uint64_t i = 0; i < n; ++i) {
    const Example e = test(i).base;
    const double rc = e.y - theta_cvar.dot(e.x);
    const double rl = e.y - theta_lms.dot(e.x);
    loss_cvar[i] = rc * rc + reg_c;
    loss_lms[i] = rl * rl + reg_l;
  }
  const ConfidenceLevel alpha(0.2);
  const double cvar_c = cvar_sorted(loss_cvar, alpha);
  const double cvar_l = cvar_sorted(loss_lms, alpha);
  KahanSum mc, ml;
  for (double v : loss_cvar) mc.add(v);
  for (double v : loss_lms) ml.add(v);
  const double mean_c = mc.value() / static_cast<double>(n);
  const double mean_l = ml.value() / static_cast<double>(n);

  CHECK(cvar_c < cvar_l);
  CHECK(mean_l <= mean_c);
  c.conclude(cvar_c < cvar_l && mean_l <= mean_c);
}

TEST_CASE("criterion 7: the risk-neutral limit reduces to LMS") {
  const Criterion c(7, "with alpha = 1 the t-iterate is nonincreasing and the "
                       "final mean test error matches LMS at the same "
                       "stepsize within 3 standard errors");
  Shared& sh = shared();
  const RidgeLoss loss = sh.cfg.make_loss();

  ExperimentConfig cfg = sh.cfg;
  cfg.sgd.alpha = ConfidenceLevel(1.0);
  cfg.sgd.steps = StepSizes(cfg.baseline_beta, cfg.sgd.steps.gamma);
  const Trace tr = run_seed(cfg, loss, 0);

  bool nonincreasing = true;
  for (std::size_t i = 1; i < tr.records.size(); ++i)
    if (tr.records[i].state.t > tr.records[i - 1].state.t)
      nonincreasing = false;
  CHECK(nonincreasing);

  const Vector theta_neutral = tr.records.back().state.theta;
  const std::vector<Vector> lms =
      run_lms_seed(cfg, loss, 0, cfg.baseline_beta);
  const Vector theta_lms = lms.back();

  const ExampleSource test = make_source(cfg.stream, kPurposeTest, 0);
  const std::uint64_t n = cfg.test_n;
  KahanSum dsum, dsum_sq;
  for (std::uint64_t i = 0; i < n; ++i) {
    const Example e = test(i).base;
    const double d =
        loss.value(theta_neutral, e) - loss.value(theta_lms, e);
    dsum.add(d);
    dsum_sq.add(d * d);
  }
  const double nn = static_cast<double>(n);
  const double mean_diff = dsum.value() / nn;
  const double var = std::max(dsum_sq.value() / nn - mean_diff * mean_diff,
                              0.0);
  const double se = std::sqrt(var / nn);
  const bool match = std::abs(mean_diff) <= 3.0 * se + 1e-12;
  CHECK(match);
  c.conclude(nonincreasing && match);
}

TEST_CASE("criterion 8: smoothing sandwich on identical batches") {
  const Criterion c(8, "smoothed objective estimate sandwiched between the "
                       "plain estimate and its sigma/(alpha*sqrt(2*pi)) "
                       "shift for 1000 random states");
  const RidgeLoss loss(0.1);
  const ConfidenceLevel alpha(0.2);
  const auto batch = fixed_batch(2718, 64);
  const CounterRng rng(2026, 3);

  bool ok = true;
  for (double sigma : {0.1, 1.0}) {
    const SmoothedSurrogate sm(loss, sigma);
    const double shift = sigma / (alpha.value() * kSqrt2Pi);
    for (std::uint64_t i = 0; i < 1000; ++i) {
      ParamState st;
      st.theta = test_util::random_vector(rng, i, 7, -1.0, 2.0);
      st.t = rng.uniform(i, 60, -5.0, 40.0);
      const double plain = g_alpha_estimate(st, loss, batch, alpha).value;
      const double smooth = smoothed_g_estimate(st, sm, batch, alpha).value;
      const bool sandwich = plain <= smooth && smooth <= plain + shift;
      if (!sandwich) CHECK(sandwich);
      ok = ok && sandwich;
    }
  }
  CHECK(ok);
  c.conclude(ok);
}

TEST_CASE("criterion 9: repeated runs are byte-identical") {
  const Criterion c(9, "two CLI runs with the same config produce "
                       "byte-identical trace CSVs");
  const fs::path base = fs::current_path() / "acceptance_cli";
  fs::remove_all(base);
  fs::create_directories(base);
  const fs::path cfg_path = base / "config.ini";
  {
    std::ofstream os(cfg_path);
    REQUIRE(os.good());
    os << "[stream]\nseed = 7\n"
       << "[sgd]\nhorizon_T = 300\neval_cadence = 50\neval_batch = 200\n"
       << "[run]\nn_seeds = 2\npopulation_n = 1000\ntest_n = 500\n";
  }
  const std::string cli = ACCEPTANCE_CLI_PATH;
  const fs::path out = base / "out";
  const std::string cmd = cli + " run --config " + cfg_path.string() +
                          " --out " + out.string() + " --quiet";
  const char* names[] = {"trace_seed0.csv", "trace_seed1.csv",
                         "test_error_sequence.csv", "summary.json"};
  bool ok = true;
  std::vector<std::string> first;
  for (int pass = 0; pass < 2; ++pass) {
    const int rc = std::system(cmd.c_str());
    CHECK(rc == 0);
    ok = ok && rc == 0;
    for (std::size_t i = 0; i < 4; ++i) {
      if (pass == 0) {
        first.push_back(slurp(out / names[i]));
      } else {
        const bool same = slurp(out / names[i]) == first[i];
        CHECK(same);
        ok = ok && same;
      }
    }
    if (pass == 0) fs::remove_all(out);
  }
  c.conclude(ok);
}
