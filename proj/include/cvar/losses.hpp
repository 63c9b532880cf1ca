// Loss models: the pluggable LossModel contract, the ridge loss, the
// smoothed surrogate (loss minus a fictitious Gaussian target), and the
// Gaussian-softplus machinery used by the smoothed objective.

#ifndef CVAR_LOSSES_HPP
#define CVAR_LOSSES_HPP

#include "cvar/core.hpp"

#include <cmath>
#include <memory>

namespace cvar {

inline constexpr double kSqrt2Pi = 2.5066282746310002;  // sqrt(2*pi)

/// Standard Gaussian CDF via erfc; relative accuracy ~1e-15 over the range
/// that matters here.
inline double norm_cdf(double z) {
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

/// Standard Gaussian density.
inline double norm_pdf(double z) {
  return std::exp(-0.5 * z * z) / kSqrt2Pi;
}

/// Gaussian softplus R_sigma(z) = sigma * (u*Phi(u) + phi(u)), u = z/sigma,
/// the closed form of E{(z - w)_+} for w ~ N(0, sigma^2). The result is
/// clamped into the exact sandwich (z)_+ <= R_sigma(z) <= sigma/sqrt(2*pi) + (z)_+.
inline double r_sigma(double sigma, double z) {
  if (!(sigma > 0.0)) throw ValidationError("sigma must be positive");
  const double u = z / sigma;
  double r = sigma * (u * norm_cdf(u) + norm_pdf(u));
  const double plus = z > 0.0 ? z : 0.0;
  const double cap = sigma / kSqrt2Pi + plus;
  if (r < plus) r = plus;
  if (r > cap) r = cap;
  return r;
}

/// Pluggable loss contract: value, theta-gradient, and declared constants.
/// Implementations are stateless after construction and safe to evaluate
/// concurrently.
class LossModel {
 public:
  virtual ~LossModel() = default;

  virtual double value(const Vector& theta, const Example& e) const = 0;
  virtual Vector grad_theta(const Vector& theta, const Example& e) const = 0;
  virtual LossConstants constants() const = 0;
};

inline void require_dims(const Vector& theta, const Example& e) {
  if (theta.size() != e.x.size())
    throw ValidationError("dimension mismatch: theta has " +
                          std::to_string(theta.size()) + " entries, x has " +
                          std::to_string(e.x.size()));
}

/// Ridge loss (y - <theta, x>)^2 + lambda * ||theta||^2.
inline double ridge_value(double lambda, const Vector& theta,
                          const Example& e) {
  require_dims(theta, e);
  const double r = e.y - theta.dot(e.x);
  return r * r + lambda * theta.squaredNorm();
}

inline Vector ridge_grad(double lambda, const Vector& theta, const Example& e) {
  require_dims(theta, e);
  const double r = theta.dot(e.x) - e.y;
  return 2.0 * r * e.x + 2.0 * lambda * theta;
}

class RidgeLoss final : public LossModel {
 public:
  /// x_norm_sq_mean is a declared bound E||x||^2 of the input distribution,
  /// used only to report L_smooth = 2*E||x||^2 + 2*lambda. The loss itself
  /// never consumes it.
  explicit RidgeLoss(double lambda, double x_norm_sq_mean = 0.0)
      : lambda_(lambda), x_norm_sq_mean_(x_norm_sq_mean) {
    require_finite(lambda, "lambda");
    if (lambda <= 0.0) throw ValidationError("lambda must be positive");
    if (x_norm_sq_mean < 0.0)
      throw ValidationError("x_norm_sq_mean must be nonnegative");
  }

  double value(const Vector& theta, const Example& e) const override {
    return ridge_value(lambda_, theta, e);
  }

  Vector grad_theta(const Vector& theta, const Example& e) const override {
    return ridge_grad(lambda_, theta, e);
  }

  LossConstants constants() const override {
    LossConstants c;
    c.mu = 2.0 * lambda_;
    c.L_smooth = 2.0 * x_norm_sq_mean_ + 2.0 * lambda_;
    c.G_lip = 0.0;  // unbounded quadratic; see lipschitz_over_box
    c.l_floor = 0.0;
    return c;
  }

  /// Lipschitz constant of the loss over a parameter box ||theta||_inf <=
  /// theta_box, given bounds ||x||_2 <= x_norm_max and |y| <= y_max:
  /// sup ||grad|| <= 2*(y_max + theta_box*sqrt(m)*x_norm_max)*x_norm_max
  ///              + 2*lambda*theta_box*sqrt(m).
  double lipschitz_over_box(int m, double theta_box, double x_norm_max,
                            double y_max) const {
    const double theta_norm = theta_box * std::sqrt(static_cast<double>(m));
    const double resid = y_max + theta_norm * x_norm_max;
    return 2.0 * resid * x_norm_max + 2.0 * lambda_ * theta_norm;
  }

  double lambda() const { return lambda_; }

 private:
  double lambda_;
  double x_norm_sq_mean_;
};

/// Surrogate loss ell~ = ell(f(x, theta), y) - w with sigma the standard
/// deviation of the fictitious target w.
struct SmoothedSurrogate {
  const LossModel* inner{nullptr};
  double sigma{0.0};

  SmoothedSurrogate(const LossModel& inner_, double sigma_)
      : inner(&inner_), sigma(sigma_) {
    require_finite(sigma, "sigma");
    if (sigma <= 0.0) throw ValidationError("sigma must be positive");
  }
};

inline double surrogate_value(const SmoothedSurrogate& s, const Vector& theta,
                              const AugmentedExample& ae) {
  return s.inner->value(theta, ae.base) - ae.w;
}

/// The w term is independent of theta, so the surrogate gradient equals the
/// inner gradient.
inline Vector surrogate_grad(const SmoothedSurrogate& s, const Vector& theta,
                             const AugmentedExample& ae) {
  return s.inner->grad_theta(theta, ae.base);
}

/// Smoothness constant of the smoothed CV@R objective:
/// L' = (L*sigma*sqrt(2*pi) + G^2) / (alpha*sigma*sqrt(2*pi)).
inline double smoothness_constant_Lprime(const LossConstants& c, double sigma,
                                         const ConfidenceLevel& alpha) {
  if (sigma <= 0.0) throw ValidationError("sigma must be positive");
  const double s = sigma * kSqrt2Pi;
  return (c.L_smooth * s + c.G_lip * c.G_lip) / (alpha.value() * s);
}

}  // namespace cvar

#endif  // CVAR_LOSSES_HPP
