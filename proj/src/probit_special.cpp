#include "epglmm/probit_special.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace epglmm {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2 pi))

void require_not_nan(double x, const char* who) {
  if (std::isnan(x)) throw std::invalid_argument(std::string(who) + ": NaN argument");
}

// K(t) = 1 / (t + 2 / (t + 3 / (t + ...))), t >= 5, by modified Lentz.
// The Mills ratio is Phi(-t)/phi(t) = 1 / (t + K(t)).
double mills_tail(double t) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  double f = kTiny;
  double c = f;
  double d = 0.0;
  for (int n = 1; n <= 500; ++n) {
    const double a = static_cast<double>(n);
    d = t + a * d;
    if (d == 0.0) d = kTiny;
    c = t + a / c;
    if (c == 0.0) c = kTiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return f;
}

}  // namespace

double std_normal_pdf(double x) {
  require_not_nan(x, "std_normal_pdf");
  return std::exp(-0.5 * x * x - kLogSqrt2Pi);
}

double std_normal_log_pdf(double x) {
  require_not_nan(x, "std_normal_log_pdf");
  return -0.5 * x * x - kLogSqrt2Pi;
}

double std_normal_cdf(double x) {
  require_not_nan(x, "std_normal_cdf");
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("std_normal_quantile: probability must lie in (0, 1)");
  }
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double zeta1(double x) {
  require_not_nan(x, "zeta1");
  if (x < kMillsCrossover) {
    const double t = -x;
    return t + mills_tail(t);
  }
  return std_normal_pdf(x) / std_normal_cdf(x);
}

double zeta1_shifted(double x) {
  require_not_nan(x, "zeta1_shifted");
  if (x < kMillsCrossover) return mills_tail(-x);
  return x + zeta1(x);
}

double zeta2(double x) {
  require_not_nan(x, "zeta2");
  return -zeta1(x) * zeta1_shifted(x);
}

double log_phi_cdf(double x) {
  require_not_nan(x, "log_phi_cdf");
  if (x < kMillsCrossover) return std_normal_log_pdf(x) - std::log(zeta1(x));
  if (x > 0.0) return std::log1p(-0.5 * std::erfc(x / std::numbers::sqrt2));
  return std::log(std_normal_cdf(x));
}

double zeta(double x) { return std::numbers::ln2 + log_phi_cdf(x); }

}  // namespace epglmm
