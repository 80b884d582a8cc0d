#pragma once

// Scalar normal-distribution kernels used by the probit projections.
//
//   zeta(x)   = log(2 Phi(x))
//   zeta1(x)  = phi(x) / Phi(x)              (inverse Mills ratio)
//   zeta2(x)  = -zeta1(x) (x + zeta1(x))
//
// All functions stay accurate on [-40, 40]. Below kMillsCrossover the
// inverse Mills ratio comes from a continued fraction evaluated with
// Lentz's algorithm, which also yields x + zeta1(x) without cancellation.
// NaN arguments raise std::invalid_argument.

namespace epglmm {

inline constexpr double kMillsCrossover = -5.0;

double std_normal_pdf(double x);
double std_normal_log_pdf(double x);
double std_normal_cdf(double x);

/// Phi^{-1}(p) for p in (0, 1).
double std_normal_quantile(double p);

double log_phi_cdf(double x);
double zeta(double x);
double zeta1(double x);
double zeta2(double x);

/// x + zeta1(x), computed without cancellation for large negative x.
double zeta1_shifted(double x);

}  // namespace epglmm
