#pragma once

// Distribution functions needed by the analyses. Regularized incomplete
// beta/gamma use series and Lentz continued fractions.

namespace ncc::special {

// I_x(a, b), a, b > 0, x in [0, 1].
double incomplete_beta(double a, double b, double x);

// P(a, x) = gamma(a, x) / Gamma(a), a > 0, x >= 0.
double incomplete_gamma_p(double a, double x);

double normal_cdf(double z);

// CDF of Gamma(shape, rate) at x.
double gamma_cdf(double x, double shape, double rate);

double student_t_cdf(double t, double df);

// Upper tail P(T > t).
double student_t_sf(double t, double df);

}  // namespace ncc::special
