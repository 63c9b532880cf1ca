// Empirical verification of the theory on a fixed population: PL and
// set-restricted PL checks, the reference solution, stepsize admissibility
// bounds, the linear-convergence bound, and rate fitting. All checks are
// finite-sample certificates, not proofs.

#ifndef CVAR_DIAGNOSTICS_HPP
#define CVAR_DIAGNOSTICS_HPP

#include "cvar/core.hpp"
#include "cvar/losses.hpp"
#include "cvar/objective.hpp"
#include "cvar/optimizer.hpp"
#include "cvar/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cvar {

/// A scalar field with gradient, the input of the generic PL check.
struct ScalarField {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> grad;
};

struct PlReport {
  double mu_tested{0.0};
  std::size_t n_points{0};
  std::size_t n_violations{0};
  std::size_t n_skipped{0};  // states whose conditional mass was too small
  // min over checked points of (1/2)||grad||^2 - mu * gap
  double worst_margin{std::numeric_limits<double>::infinity()};
};

struct ReferenceSolution {
  Vector theta_star;
  double t_star{0.0};
  double g_star{0.0};
  std::string method;
  std::size_t n_samples{0};
};

struct GradBoundEstimate {
  double c_t_squared{0.0};
};

struct AdmissibilityResult {
  bool ok{false};
  double lower{0.0};
  double upper{0.0};
  bool feasible{false};  // t* - l < (1 - 2*alpha) / (2*alpha*mu)
};

/// Generic PL check: counts points where
/// (1/2)||grad fn||^2 < mu * (fn - f_star) - 1e-10.
inline PlReport pl_check(const ScalarField& fn,
                         std::span<const Vector> points, double mu,
                         double f_star) {
  if (mu <= 0.0) throw ValidationError("mu must be positive");
  PlReport rep;
  rep.mu_tested = mu;
  rep.n_points = points.size();
  for (const Vector& p : points) {
    const double v = fn.value(p);
    if (f_star > v + 1e-12)
      throw ValidationError("f_star exceeds fn value: bad infimum");
    const double lhs = 0.5 * fn.grad(p).squaredNorm();
    const double margin = lhs - mu * (v - f_star);
    rep.worst_margin = std::min(rep.worst_margin, margin);
    if (margin < -1e-10) ++rep.n_violations;
  }
  return rep;
}

namespace detail {

struct DescentResult {
  Vector x;
  double value{0.0};
  double grad_norm{0.0};
  std::size_t iterations{0};
  bool converged{false};
};

/// Min-norm element of the convex hull of a small gradient bundle, by
/// projected gradient on the simplex weights.
inline Vector min_norm_hull(const std::vector<Vector>& bundle) {
  const std::size_t k = bundle.size();
  Eigen::VectorXd w = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(k),
                                                1.0 / static_cast<double>(k));
  Eigen::MatrixXd gram(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          bundle[i].dot(bundle[j]);
  const double lip = std::max(gram.trace(), 1e-300);
  for (int it = 0; it < 2000; ++it) {
    Eigen::VectorXd z = w - (gram * w) / lip;
    // Euclidean projection onto the simplex.
    std::vector<double> u(z.data(), z.data() + z.size());
    std::sort(u.begin(), u.end(), std::greater<double>());
    double css = 0.0, tau = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      css += u[j];
      const double cand = (css - 1.0) / static_cast<double>(j + 1);
      if (u[j] > cand) tau = cand;
    }
    for (Eigen::Index j = 0; j < z.size(); ++j)
      w[j] = std::max(z[j] - tau, 0.0);
  }
  Vector d = Vector::Zero(bundle[0].size());
  for (std::size_t i = 0; i < k; ++i) d += w[static_cast<Eigen::Index>(i)] * bundle[i];
  return d;
}

/// Full-batch descent with Armijo backtracking. Piecewise-smooth objectives
/// (the empirical superquantile kinks where the tail set reorders) typically
/// have their minimizer on a kink, where the one-piece gradient never
/// vanishes; when the plain line search stalls, a gradient-sampling polish
/// takes the min-norm element of nearby subgradients as the direction, and
/// convergence means that min-norm is below tolerance or no descent remains
/// at value resolution.
inline DescentResult minimize_backtracking(const ScalarField& fn,
                                           const Vector& x0, double grad_tol,
                                           std::size_t max_iter) {
  DescentResult r;
  r.x = x0;
  r.value = fn.value(r.x);
  double step = 1.0;

  const auto line_search = [&](const Vector& dir, double dsq, double armijo,
                               double s0) {
    double s = s0;
    for (int bt = 0; bt < 60; ++bt) {
      Vector candidate = r.x - s * dir;
      const double new_value = fn.value(candidate);
      if (new_value <= r.value - armijo * s * dsq && new_value < r.value) {
        r.x = std::move(candidate);
        r.value = new_value;
        step = s;
        return true;
      }
      s *= 0.5;
    }
    return false;
  };

  for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
    const Vector g = fn.grad(r.x);
    r.grad_norm = g.norm();
    if (r.grad_norm <= grad_tol) {
      r.converged = true;
      return r;
    }
    if (line_search(g, g.squaredNorm(), 1e-4, std::min(step * 2.0, 1e8)))
      continue;

    // Stalled: sample subgradients in a shrinking ball around the kink and
    // descend along the min-norm hull element, which tracks the kink
    // manifold. Plain strict decrease suffices here; progress per polish
    // round is tiny by construction.
    const double scale = 1.0 + r.x.norm();
    const Eigen::Index dim = r.x.size();
    const CounterRng sampler(0x6B696E6BULL, 0);  // fixed: deterministic polish
    bool advanced = false;
    for (double delta : {1e-5, 1e-7, 1e-9}) {
      std::vector<Vector> bundle{g};
      const std::uint64_t n_dirs = 4 * static_cast<std::uint64_t>(dim) + 8;
      for (std::uint64_t s = 0; s < n_dirs; ++s) {
        Vector p = r.x;
        for (Eigen::Index j = 0; j < dim; ++j)
          p[j] += delta * scale *
                  sampler.uniform(s, static_cast<std::uint64_t>(j), -1.0, 1.0);
        bundle.push_back(fn.grad(p));
      }
      const Vector d = min_norm_hull(bundle);
      r.grad_norm = d.norm();
      if (r.grad_norm <= grad_tol) {
        r.converged = true;
        return r;
      }
      // Restart from a unit step: the plain search decays `step` to dust
      // while grinding against the kink, far below where descent along the
      // hull direction is visible.
      if (line_search(d, d.squaredNorm(), 0.0, 1.0)) {
        advanced = true;
        break;
      }
    }
    if (!advanced) {
      r.converged = true;  // value at floating-point resolution
      return r;
    }
  }
  r.grad_norm = fn.grad(r.x).norm();
  r.converged = r.grad_norm <= grad_tol;
  return r;
}

inline double sample_sd(std::span<const double> v, double mean) {
  if (v.size() < 2) return 0.0;
  KahanSum acc;
  for (double x : v) acc.add((x - mean) * (x - mean));
  return std::sqrt(acc.value() / (static_cast<double>(v.size()) - 1.0));
}

}  // namespace detail

/// Infimum of the empirical mean loss over a subset of the population,
/// computed by full-batch descent to gradient-norm tolerance.
inline detail::DescentResult restricted_loss_infimum(
    const LossModel& loss, std::span<const Example> subset, const Vector& x0,
    double grad_tol = 1e-8, std::size_t max_iter = 100000) {
  const double n = static_cast<double>(subset.size());
  ScalarField fn;
  fn.value = [&loss, subset, n](const Vector& th) {
    KahanSum acc;
    for (const Example& e : subset) acc.add(loss.value(th, e));
    return acc.value() / n;
  };
  fn.grad = [&loss, subset, n](const Vector& th) {
    Vector g = Vector::Zero(th.size());
    for (const Example& e : subset) g += loss.grad_theta(th, e);
    return Vector(g / n);
  };
  return detail::minimize_backtracking(fn, x0, grad_tol, max_iter);
}

/// Empirical set-restricted PL check: for each state, restrict the population
/// to the event {ell > t}, compare (1/2)||conditional mean gradient||^2
/// against mu * (conditional mean loss - restricted infimum), and count
/// violations beyond 3 combined Monte Carlo standard errors.
inline PlReport set_restricted_pl_check(const LossModel& loss,
                                        std::span<const ParamState> state_grid,
                                        double mu,
                                        std::span<const Example> population,
                                        double min_event_mass) {
  if (population.empty()) throw ValidationError("empty population");
  if (mu <= 0.0) throw ValidationError("mu must be positive");
  if (!(min_event_mass > 0.0 && min_event_mass < 1.0))
    throw ValidationError("min_event_mass must lie in (0,1)");

  PlReport rep;
  rep.mu_tested = mu;
  const double n_pop = static_cast<double>(population.size());

  for (const ParamState& st : state_grid) {
    std::vector<const Example*> subset;
    std::vector<double> losses;
    for (const Example& e : population) {
      const double ell = loss.value(st.theta, e);
      if (ell - st.t > 0.0) {
        subset.push_back(&e);
        losses.push_back(ell);
      }
    }
    const double mass = static_cast<double>(subset.size()) / n_pop;
    if (mass < min_event_mass) {
      ++rep.n_skipped;
      continue;
    }
    ++rep.n_points;
    const double ns = static_cast<double>(subset.size());

    Vector gbar = Vector::Zero(st.theta.size());
    KahanSum lsum;
    std::vector<Vector> grads;
    grads.reserve(subset.size());
    for (const Example* e : subset) {
      grads.push_back(loss.grad_theta(st.theta, *e));
      gbar += grads.back();
      lsum.add(loss.value(st.theta, *e));
    }
    gbar /= ns;
    const double mean_loss = lsum.value() / ns;

    std::vector<Example> owned;
    owned.reserve(subset.size());
    for (const Example* e : subset) owned.push_back(*e);
    const auto inf = restricted_loss_infimum(loss, owned, st.theta);
    if (!inf.converged)
      throw std::runtime_error(
          "restricted infimum did not converge (grad norm " +
          std::to_string(inf.grad_norm) + ")");

    const double lhs = 0.5 * gbar.squaredNorm();
    const double rhs = mu * (mean_loss - inf.value);

    // Standard errors: projection of the gradient onto its mean direction
    // (delta method for the squared norm) plus the loss-mean error.
    const double gnorm = gbar.norm();
    double se_lhs = 0.0;
    if (gnorm > 0.0) {
      const Vector dir = gbar / gnorm;
      std::vector<double> proj;
      proj.reserve(grads.size());
      for (const Vector& g : grads) proj.push_back(g.dot(dir));
      se_lhs = gnorm * detail::sample_sd(proj, gnorm) / std::sqrt(ns);
    }
    const double se_rhs =
        mu * detail::sample_sd(losses, mean_loss) / std::sqrt(ns);
    const double combined = std::sqrt(se_lhs * se_lhs + se_rhs * se_rhs);

    const double margin = lhs - rhs;
    rep.worst_margin = std::min(rep.worst_margin, margin);
    if (margin < -3.0 * combined - 1e-10) ++rep.n_violations;
  }
  return rep;
}

/// Minimizes the empirical G_alpha over (theta, t) on a fixed population.
/// t is minimized exactly each iteration (the fractional-quantile convention,
/// same as cvar_sorted), theta by full-batch descent with backtracking on the
/// resulting superquantile value.
inline ReferenceSolution estimate_reference(const LossModel& loss,
                                            const ConfidenceLevel& alpha,
                                            std::span<const Example> population,
                                            const ParamState& init,
                                            double grad_tol = 1e-8,
                                            std::size_t max_iter = 100000) {
  if (population.empty()) throw ValidationError("empty population");
  const double a = alpha.value();
  const double n = static_cast<double>(population.size());
  const double an = a * n;
  const std::size_t k = static_cast<std::size_t>(std::ceil(an - 1e-12));

  std::vector<double> losses(population.size());
  std::vector<std::size_t> order(population.size());

  const auto tail_indices = [&](const Vector& th) {
    for (std::size_t i = 0; i < population.size(); ++i)
      losses[i] = loss.value(th, population[i]);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::nth_element(order.begin(), order.begin() + static_cast<long>(k),
                     order.end(), [&](std::size_t i, std::size_t j) {
                       return losses[i] > losses[j];
                     });
    std::sort(order.begin(), order.begin() + static_cast<long>(k),
              [&](std::size_t i, std::size_t j) {
                return losses[i] > losses[j];
              });
  };

  ScalarField fn;
  fn.value = [&](const Vector& th) {
    tail_indices(th);
    KahanSum acc;
    for (std::size_t i = 0; i + 1 < k; ++i) acc.add(losses[order[i]]);
    acc.add((an - static_cast<double>(k - 1)) * losses[order[k - 1]]);
    return acc.value() / an;
  };
  // Danskin: the superquantile gradient is the fractionally weighted tail
  // average of the per-example gradients.
  fn.grad = [&](const Vector& th) {
    tail_indices(th);
    Vector g = Vector::Zero(th.size());
    for (std::size_t i = 0; i + 1 < k; ++i)
      g += loss.grad_theta(th, population[order[i]]);
    g += (an - static_cast<double>(k - 1)) *
         loss.grad_theta(th, population[order[k - 1]]);
    return Vector(g / an);
  };

  const auto res = detail::minimize_backtracking(fn, init.theta, grad_tol,
                                                 max_iter);
  if (!res.converged)
    throw std::runtime_error(
        "estimate_reference did not converge: gradient norm " +
        std::to_string(res.grad_norm) + " after " +
        std::to_string(res.iterations) + " iterations");

  ReferenceSolution ref;
  ref.theta_star = res.x;
  ref.g_star = res.value;
  ref.n_samples = population.size();
  ref.method = "batch_superquantile_descent(exact_t,theta_backtracking)";
  for (std::size_t i = 0; i < population.size(); ++i)
    losses[i] = loss.value(ref.theta_star, population[i]);
  ref.t_star =
      cvar_variational(losses, alpha, 1e-10).second;  // quantile convention
  return ref;
}

/// Stepsize admissibility window:
///   alpha*eps/(1-alpha) <= gamma < eps/(2*mu*(t*-l) + 1),
/// plus the feasibility predicate t* - l < (1-2*alpha)/(2*alpha*mu).
inline AdmissibilityResult stepsize_admissibility(const ConfidenceLevel& alpha,
                                                  double epsilon, double gamma,
                                                  double mu, double t_star,
                                                  double l_floor) {
  const double a = alpha.value();
  if (a >= 1.0)
    throw ValidationError("stepsize bounds are undefined for alpha = 1");
  if (epsilon <= 0.0) throw ValidationError("epsilon must be positive");
  if (gamma <= 0.0) throw ValidationError("gamma must be positive");
  if (mu <= 0.0) throw ValidationError("mu must be positive");
  AdmissibilityResult r;
  r.lower = a * epsilon / (1.0 - a);
  r.upper = epsilon / (2.0 * mu * (t_star - l_floor) + 1.0);
  r.ok = gamma >= r.lower && gamma < r.upper;
  r.feasible = (t_star - l_floor) < (1.0 - 2.0 * a) / (2.0 * a * mu);
  return r;
}

/// The linear-convergence bound:
///   (1 - 2*mu*min{beta,gamma})^T * gap0
///     + (max{beta,gamma})^2 / min{beta,gamma} * L*(1 + C_T^2)/(4*alpha^2*mu).
inline double convergence_bound(double mu, double L_smooth,
                             const StepSizes& steps,
                             const ConfidenceLevel& alpha, std::uint64_t T,
                             double gap0, double c_t_squared) {
  if (mu <= 0.0) throw ValidationError("mu must be positive");
  if (gap0 < 0.0) throw ValidationError("gap0 must be nonnegative");
  if (c_t_squared < 0.0) throw ValidationError("c_t_squared must be nonnegative");
  const double smin = std::min(steps.beta, steps.gamma);
  const double smax = std::max(steps.beta, steps.gamma);
  const double contraction = 1.0 - 2.0 * mu * smin;
  if (!(2.0 * mu * smin < 1.0))
    throw ValidationError("hypothesis 2*mu*min{beta,gamma} < 1 violated");
  const double a = alpha.value();
  const double noise = smax * smax / smin * L_smooth * (1.0 + c_t_squared) /
                       (4.0 * a * a * mu);
  return std::pow(contraction, static_cast<double>(T)) * gap0 + noise;
}

struct RateFit {
  double rho{0.0};
  double floor{0.0};
};

/// Fits a geometric decay rate to an optimality-gap sequence sitting on a
/// noise floor. The floor is the floor_quantile-quantile of the last 10% of
/// gaps; the rate is the least-squares slope of log(gap - floor) over the
/// pre-floor segment, exponentiated.
inline RateFit fit_linear_rate(std::span<const double> gaps,
                               std::size_t burn_in, double floor_quantile) {
  if (gaps.size() <= burn_in + 10)
    throw ValidationError("gaps sequence too short for the requested burn-in");
  if (!(floor_quantile > 0.0 && floor_quantile < 1.0))
    throw ValidationError("floor_quantile must lie in (0,1)");
  for (double g : gaps)
    if (!(g > 0.0)) throw ValidationError("gaps must be positive");

  const std::size_t n = gaps.size();
  const std::size_t tail_len = std::max<std::size_t>(1, n / 10);
  std::vector<double> tail(gaps.end() - static_cast<long>(tail_len),
                           gaps.end());
  std::sort(tail.begin(), tail.end());
  const double pos =
      floor_quantile * static_cast<double>(tail.size() - 1);
  const std::size_t i0 = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(i0);
  double floor = tail[i0];
  if (i0 + 1 < tail.size()) floor += frac * (tail[i0 + 1] - tail[i0]);

  const double max_gap = *std::max_element(gaps.begin(), gaps.end());
  // A floor at floating-point dust relative to the data means the sequence
  // never plateaued; fit the raw decay.
  if (floor < 1e-12 * max_gap) floor = 0.0;

  std::size_t end = n;
  if (floor > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      if (gaps[i] <= 2.0 * floor) {
        end = i;
        break;
      }
    }
  }
  if (end <= burn_in + 1)
    throw std::runtime_error("already at noise floor");

  // Least-squares slope of log(gap - floor) vs index.
  KahanSum sx, sy, sxx, sxy;
  const double cnt = static_cast<double>(end - burn_in);
  for (std::size_t i = burn_in; i < end; ++i) {
    const double x = static_cast<double>(i);
    const double y = std::log(std::max(gaps[i] - floor, 1e-300));
    sx.add(x);
    sy.add(y);
    sxx.add(x * x);
    sxy.add(x * y);
  }
  const double mx = sx.value() / cnt;
  const double my = sy.value() / cnt;
  const double slope = (sxy.value() - cnt * mx * my) /
                       (sxx.value() - cnt * mx * mx);
  RateFit fit;
  fit.rho = std::exp(slope);
  fit.floor = floor;
  return fit;
}

/// sup over (thinned) trace states of the Monte Carlo estimate of
/// E||grad ell(theta^n, .)||^2, the C_T^2 of the convergence bound.
inline GradBoundEstimate estimate_grad_bound(const Trace& trace,
                                             const LossModel& loss,
                                             const ExampleSource& eval_source,
                                             std::uint64_t batch) {
  if (trace.records.empty()) throw ValidationError("empty trace");
  if (batch < 1) throw ValidationError("batch must be >= 1");

  // Thin to the states that carry a G_alpha estimate (the evaluation
  // cadence); fall back to every state for short traces.
  std::vector<const TraceRecord*> states;
  for (const TraceRecord& r : trace.records)
    if (r.g_alpha_est.has_value()) states.push_back(&r);
  if (states.empty())
    for (const TraceRecord& r : trace.records) states.push_back(&r);

  GradBoundEstimate out;
  std::uint64_t counter = 0;
  for (const TraceRecord* r : states) {
    KahanSum acc;
    for (std::uint64_t j = 0; j < batch; ++j) {
      const Example e = eval_source(counter++).base;
      acc.add(loss.grad_theta(r->state.theta, e).squaredNorm());
    }
    out.c_t_squared =
        std::max(out.c_t_squared, acc.value() / static_cast<double>(batch));
  }
  return out;
}

struct DriftCertificateResult {
  std::uint64_t iter{0};
  double event_mass{0.0};
  bool condition_holds{false};  // mass > alpha + 2*alpha*mu*(t* - t)_+
  double lhs{0.0};              // mu * (G_hat - G*)
  double rhs{0.0};              // (1/2)||grad G_hat||^2
  double combined_se{0.0};
  bool ok{true};                // lhs <= rhs + 3*combined_se where applicable
};

/// PL certificate for G_alpha along a trace: at every logged state satisfying
/// the event-mass condition, checks mu*(G_hat - G*) <= (1/2)||grad G_hat||^2
/// within 3 combined standard errors, all quantities on the fixed population.
inline std::vector<DriftCertificateResult> drift_certificate(
    const Trace& trace, const LossModel& loss,
    std::span<const Example> population, const ConfidenceLevel& alpha,
    double mu, const ReferenceSolution& ref) {
  if (population.empty()) throw ValidationError("empty population");
  const double a = alpha.value();
  const double n = static_cast<double>(population.size());
  std::vector<DriftCertificateResult> out;

  for (const TraceRecord& r : trace.records) {
    if (!r.g_alpha_est.has_value()) continue;
    DriftCertificateResult res;
    res.iter = r.iter;

    std::size_t count = 0;
    for (const Example& e : population)
      if (in_event(r.state, loss, e)) ++count;
    res.event_mass = static_cast<double>(count) / n;
    const double t_gap = std::max(ref.t_star - r.state.t, 0.0);
    res.condition_holds = res.event_mass > a + 2.0 * a * mu * t_gap;
    if (!res.condition_holds) {
      out.push_back(res);
      continue;
    }

    const GEstimate g = g_alpha_estimate(r.state, loss, population, alpha);
    const Vector grad = grad_g_alpha_estimate(r.state, loss, population, alpha);
    res.lhs = mu * (g.value - ref.g_star);
    res.rhs = 0.5 * grad.squaredNorm();

    // Delta-method error of (1/2)||mean||^2 via projection onto the mean
    // direction.
    const double gnorm = grad.norm();
    double se_grad = 0.0;
    if (gnorm > 0.0) {
      const Vector dir = grad / gnorm;
      const Eigen::Index m = r.state.theta.size();
      std::vector<double> proj;
      proj.reserve(population.size());
      for (const Example& e : population) {
        double h_t = 1.0;  // t-component contribution of this sample
        double p = 0.0;
        if (in_event(r.state, loss, e)) {
          const Vector ge = loss.grad_theta(r.state.theta, e) / a;
          p += ge.dot(dir.head(m));
          h_t -= 1.0 / a;
        }
        p += h_t * dir[m];
        proj.push_back(p);
      }
      se_grad = gnorm * detail::sample_sd(proj, gnorm) / std::sqrt(n);
    }
    const double se_lhs = mu * g.std_error;
    res.combined_se = std::sqrt(se_lhs * se_lhs + se_grad * se_grad);
    res.ok = res.lhs <= res.rhs + 3.0 * res.combined_se;
    out.push_back(res);
  }
  return out;
}

}  // namespace cvar

#endif  // CVAR_DIAGNOSTICS_HPP
