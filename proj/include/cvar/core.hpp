// Core value types shared by every module. No algorithms live here.

#ifndef CVAR_CORE_HPP
#define CVAR_CORE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvar {

using Vector = Eigen::VectorXd;

/// Raised when a domain invariant is broken (non-finite entry, bad range,
/// dimension mismatch).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require_finite(double v, const std::string& name) {
  if (!std::isfinite(v)) throw ValidationError(name + " not finite");
}

inline void require_finite(const Vector& v, const std::string& name) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]))
      throw ValidationError(name + "[" + std::to_string(i) + "] not finite");
  }
}

/// One datastream element (x, y).
struct Example {
  Vector x;   // features, dimension d
  double y{0.0};

  Example() = default;
  Example(Vector x_, double y_) : x(std::move(x_)), y(y_) {
    require_finite(x, "x");
    require_finite(y, "y");
  }
};

/// Example augmented with the fictitious Gaussian target w ~ N(0, sigma^2),
/// drawn independently of (x, y).
struct AugmentedExample {
  Example base;
  double w{0.0};

  AugmentedExample() = default;
  AugmentedExample(Example base_, double w_) : base(std::move(base_)), w(w_) {
    require_finite(w, "w");
  }
};

/// The joint iterate (theta, t) of the variational problem. Every update and
/// evaluation consumes both jointly, so they travel together.
struct ParamState {
  Vector theta;   // predictor parameters, dimension m
  double t{0.0};  // quantile candidate / auxiliary variable
};

inline const ParamState& validate_state(const ParamState& s) {
  require_finite(s.theta, "theta");
  require_finite(s.t, "t");
  return s;
}

/// Confidence level alpha in (0, 1]. alpha = 1 is the risk-neutral limit.
class ConfidenceLevel {
 public:
  explicit ConfidenceLevel(double alpha) : alpha_(alpha) {
    require_finite(alpha, "alpha");
    if (!(alpha > 0.0 && alpha <= 1.0))
      throw ValidationError("alpha must lie in (0, 1], got " +
                            std::to_string(alpha));
  }
  double value() const { return alpha_; }

 private:
  double alpha_;
};

/// Constant stepsizes (beta for theta, gamma for t).
struct StepSizes {
  double beta{0.0};
  double gamma{0.0};

  StepSizes() = default;
  StepSizes(double beta_, double gamma_) : beta(beta_), gamma(gamma_) {
    require_finite(beta, "beta");
    require_finite(gamma, "gamma");
    if (beta <= 0.0) throw ValidationError("beta must be positive");
    if (gamma <= 0.0) throw ValidationError("gamma must be positive");
  }
};

/// Regularity constants a loss model declares about itself.
struct LossConstants {
  double mu{0.0};        // strong convexity / PL parameter
  double L_smooth{0.0};  // gradient Lipschitz constant
  double G_lip{0.0};     // loss Lipschitz constant (domain dependent)
  double l_floor{0.0};   // lowest attainable loss value

  void validate() const {
    require_finite(mu, "mu");
    require_finite(L_smooth, "L_smooth");
    require_finite(G_lip, "G_lip");
    require_finite(l_floor, "l_floor");
    if (mu < 0.0) throw ValidationError("mu must be nonnegative");
    if (L_smooth < 0.0) throw ValidationError("L_smooth must be nonnegative");
    if (G_lip < 0.0) throw ValidationError("G_lip must be nonnegative");
    if (mu > 0.0 && L_smooth > 0.0 && mu > L_smooth)
      throw ValidationError("mu must not exceed L_smooth");
  }
};

/// Per-iteration record of a run. Record 0 holds the initial state; record
/// n >= 1 holds the state after step n together with the event indicator and
/// loss sample of the example consumed by that step.
struct TraceRecord {
  std::uint64_t iter{0};
  ParamState state;
  bool in_event{false};
  double loss_sample{std::numeric_limits<double>::quiet_NaN()};
  std::optional<double> g_alpha_est;
};

struct Trace {
  std::vector<TraceRecord> records;
};

}  // namespace cvar

#endif  // CVAR_CORE_HPP
