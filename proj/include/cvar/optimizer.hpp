// The CV@R-SGD recursion, its smoothed variant, the risk-neutral LMS
// baseline, and the sequential driver that consumes a datastream.

#ifndef CVAR_OPTIMIZER_HPP
#define CVAR_OPTIMIZER_HPP

#include "cvar/core.hpp"
#include "cvar/losses.hpp"
#include "cvar/objective.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

namespace cvar {

/// Counter-indexed example source. Pure: the same counter always yields the
/// same example, so traces fully determine a run.
using ExampleSource = std::function<AugmentedExample(std::uint64_t)>;

struct SgdConfig {
  ConfidenceLevel alpha{0.2};
  StepSizes steps{0.002, 0.001};
  std::uint64_t horizon_T{1};
  ParamState init;
  double sigma{0.0};  // 0 disables smoothing
  std::uint64_t eval_cadence{100};
  std::uint64_t eval_batch{10000};
  std::uint64_t seed{0};

  void validate() const {
    validate_state(init);
    if (sigma < 0.0) throw ValidationError("sigma must be nonnegative");
    if (eval_cadence < 1) throw ValidationError("eval_cadence must be >= 1");
    if (eval_batch < 1) throw ValidationError("eval_batch must be >= 1");
  }
};

/// Thrown when an iterate leaves the finite-value guard (||theta||_inf or |t|
/// above 1e12), or the stream runs dry before the horizon.
class RunError : public std::runtime_error {
 public:
  RunError(std::string msg, std::uint64_t iterations_completed)
      : std::runtime_error(std::move(msg)),
        iterations_completed(iterations_completed) {}
  std::uint64_t iterations_completed;
  // Records accumulated before the failure, so callers can flush them.
  std::shared_ptr<const Trace> partial_trace;
};

/// One CV@R-SGD step. With b = 1{ell(theta^n; e) - t^n > 0}:
///   t^{n+1}     = t^n - gamma * (1 - b/alpha)
///   theta^{n+1} = theta^n - beta * (b/alpha) * grad ell(theta^n; e).
/// Indicator and gradient are both evaluated at the old state.
inline std::pair<ParamState, bool> cvar_sgd_step(const ParamState& state,
                                                 const Example& e,
                                                 const LossModel& loss,
                                                 const ConfidenceLevel& alpha,
                                                 const StepSizes& steps) {
  require_dims(state.theta, e);
  const bool b = in_event(state, loss, e);
  ParamState next;
  next.t = state.t - steps.gamma * (1.0 - (b ? 1.0 / alpha.value() : 0.0));
  if (b) {
    next.theta = state.theta - (steps.beta / alpha.value()) *
                                   loss.grad_theta(state.theta, e);
  } else {
    next.theta = state.theta;
  }
  return {std::move(next), b};
}

/// Smoothed step: same recursion applied to the surrogate loss ell - w. The
/// event becomes {ell - w - t > 0}; the theta-gradient is unchanged since the
/// w term is constant in theta.
inline std::pair<ParamState, bool> smoothed_sgd_step(
    const ParamState& state, const AugmentedExample& ae,
    const SmoothedSurrogate& s, const ConfidenceLevel& alpha,
    const StepSizes& steps) {
  require_dims(state.theta, ae.base);
  const bool b =
      s.inner->value(state.theta, ae.base) - ae.w - state.t > 0.0;
  ParamState next;
  next.t = state.t - steps.gamma * (1.0 - (b ? 1.0 / alpha.value() : 0.0));
  if (b) {
    next.theta = state.theta - (steps.beta / alpha.value()) *
                                   s.inner->grad_theta(state.theta, ae.base);
  } else {
    next.theta = state.theta;
  }
  return {std::move(next), b};
}

/// Risk-neutral LMS baseline: plain SGD on the expected loss.
inline Vector lms_step(const Vector& theta, const Example& e,
                       const LossModel& loss, double beta) {
  require_dims(theta, e);
  if (beta <= 0.0) throw ValidationError("beta must be positive");
  return theta - beta * loss.grad_theta(theta, e);
}

namespace detail {

inline void check_guard(const ParamState& s, std::uint64_t iter) {
  const double guard = 1e12;
  if (!s.theta.allFinite() || !std::isfinite(s.t) ||
      s.theta.lpNorm<Eigen::Infinity>() > guard || std::abs(s.t) > guard) {
    throw RunError("divergence guard tripped at iteration " +
                       std::to_string(iter),
                   iter);
  }
}

}  // namespace detail

/// Runs CV@R-SGD for horizon_T steps. The trace has horizon_T + 1 records
/// (record 0 is the initial state). G_alpha estimates are attached whenever
/// iter % eval_cadence == 0, from eval_batch fresh examples of eval_source
/// (disjoint counters per evaluation). Deterministic given the sources.
inline Trace run(const SgdConfig& config, const LossModel& loss,
                 const ExampleSource& stream,
                 const ExampleSource& eval_source) {
  config.validate();
  const bool smoothing = config.sigma > 0.0;
  // Keep the surrogate alive across the loop when smoothing is on.
  SmoothedSurrogate surrogate =
      smoothing ? SmoothedSurrogate(loss, config.sigma)
                : SmoothedSurrogate(loss, 1.0);

  std::vector<Example> eval_buf;
  std::uint64_t eval_counter = 0;
  const auto eval_g = [&](const ParamState& s) {
    eval_buf.clear();
    eval_buf.reserve(config.eval_batch);
    for (std::uint64_t j = 0; j < config.eval_batch; ++j)
      eval_buf.push_back(eval_source(eval_counter + j).base);
    eval_counter += config.eval_batch;
    return g_alpha_estimate(s, loss, eval_buf, config.alpha).value;
  };

  Trace trace;
  trace.records.reserve(config.horizon_T + 1);
  ParamState state = config.init;
  {
    TraceRecord r;
    r.iter = 0;
    r.state = state;
    r.g_alpha_est = eval_g(state);
    trace.records.push_back(std::move(r));
  }

  const auto fail = [&trace](RunError err) {
    err.partial_trace = std::make_shared<const Trace>(std::move(trace));
    return err;
  };

  for (std::uint64_t n = 0; n < config.horizon_T; ++n) {
    AugmentedExample ae;
    try {
      ae = stream(n);
    } catch (const std::exception& ex) {
      throw fail(RunError("stream exhausted after " + std::to_string(n) +
                              " iterations: " + ex.what(),
                          n));
    }
    double loss_sample;
    bool b;
    if (smoothing) {
      loss_sample = surrogate_value(surrogate, state.theta, ae);
      auto [next, in] = smoothed_sgd_step(state, ae, surrogate, config.alpha,
                                          config.steps);
      state = std::move(next);
      b = in;
    } else {
      loss_sample = loss.value(state.theta, ae.base);
      auto [next, in] =
          cvar_sgd_step(state, ae.base, loss, config.alpha, config.steps);
      state = std::move(next);
      b = in;
    }
    try {
      detail::check_guard(state, n + 1);
    } catch (RunError& err) {
      throw fail(std::move(err));
    }

    TraceRecord r;
    r.iter = n + 1;
    r.state = state;
    r.in_event = b;
    r.loss_sample = loss_sample;
    if ((n + 1) % config.eval_cadence == 0) r.g_alpha_est = eval_g(state);
    trace.records.push_back(std::move(r));
  }
  return trace;
}

/// LMS companion driver: plain SGD on the same stream, returning the theta
/// iterates (index n holds theta after n steps).
inline std::vector<Vector> run_lms(const Vector& theta0, double beta,
                                   const LossModel& loss,
                                   const ExampleSource& stream,
                                   std::uint64_t horizon_T) {
  std::vector<Vector> iterates;
  iterates.reserve(horizon_T + 1);
  Vector theta = theta0;
  iterates.push_back(theta);
  for (std::uint64_t n = 0; n < horizon_T; ++n) {
    theta = lms_step(theta, stream(n).base, loss, beta);
    if (!theta.allFinite() || theta.lpNorm<Eigen::Infinity>() > 1e12)
      throw RunError("LMS divergence guard tripped at iteration " +
                         std::to_string(n + 1),
                     n + 1);
    iterates.push_back(theta);
  }
  return iterates;
}

}  // namespace cvar

#endif  // CVAR_OPTIMIZER_HPP
