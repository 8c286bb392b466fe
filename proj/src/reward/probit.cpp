#include "reward/probit.hpp"

#include <cmath>
#include <numbers>

namespace handover {
namespace {

constexpr double kTailSwitch = -10.0;

// Upper-tail Mills ratio Q(x)/phi(x) for x > 0 by backward continued fraction.
double mills_ratio_upper(double x) noexcept {
  double frac = 0.0;
  for (int k = 60; k >= 1; --k) frac = k / (x + frac);
  return 1.0 / (x + frac);
}

}  // namespace

double normal_pdf(double z) noexcept {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_cdf(double z) noexcept { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double log_normal_cdf(double z) noexcept {
  if (z < kTailSwitch) {
    return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(mills_ratio_upper(-z));
  }
  if (z > 5.0) return std::log1p(-0.5 * std::erfc(z / std::numbers::sqrt2));
  return std::log(normal_cdf(z));
}

double inverse_mills(double z) noexcept {
  if (z < kTailSwitch) return 1.0 / mills_ratio_upper(-z);
  return normal_pdf(z) / normal_cdf(z);
}

}  // namespace handover
