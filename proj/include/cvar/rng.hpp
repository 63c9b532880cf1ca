// Counter-based deterministic random numbers. Every draw is a pure function
// of (seed, stream, counter, slot), so streams never share mutable state and
// generation order is irrelevant.

#ifndef CVAR_RNG_HPP
#define CVAR_RNG_HPP

#include <cmath>
#include <cstdint>

namespace cvar {

namespace detail {

// splitmix64 finalizer (Steele, Lea, Flood 2014).
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Inverse standard normal CDF: Acklam's rational approximation refined by
/// one Halley step against erfc, giving ~1e-15 relative accuracy.
inline double inverse_norm_cdf(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
          c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement.
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

}  // namespace detail

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(detail::mix64(seed ^ detail::mix64(stream))) {}

  std::uint64_t bits(std::uint64_t counter, std::uint64_t slot) const {
    return detail::mix64(detail::mix64(key_ ^ detail::mix64(counter)) ^ slot);
  }

  /// Uniform draw in the open interval (0, 1).
  double uniform(std::uint64_t counter, std::uint64_t slot) const {
    const std::uint64_t z = bits(counter, slot) >> 11;  // top 53 bits
    return (static_cast<double>(z) + 0.5) * 0x1.0p-53;
  }

  double uniform(std::uint64_t counter, std::uint64_t slot, double lo,
                 double hi) const {
    return lo + (hi - lo) * uniform(counter, slot);
  }

  /// Standard normal draw via inverse-CDF of the counter-based uniform.
  double normal(std::uint64_t counter, std::uint64_t slot) const {
    return detail::inverse_norm_cdf(uniform(counter, slot));
  }

 private:
  std::uint64_t key_;
};

}  // namespace cvar

#endif  // CVAR_RNG_HPP
