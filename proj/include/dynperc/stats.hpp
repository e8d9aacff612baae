#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dynperc::stats {

struct MeanCi {
  double mean = 0.0;
  double std_error = 0.0;
  double lo = 0.0;  // 95% normal interval
  double hi = 0.0;
};

/// Sample mean with the normal-approximation 95% interval. Needs n >= 2.
MeanCi mean_ci(std::span<const double> samples);

struct Proportion {
  double phat = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Wilson score interval at the given normal quantile (default 95%).
Proportion wilson(std::int64_t successes, std::int64_t trials, double z = 1.959963984540054);

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
  double r2 = 0.0;
  int n_points = 0;
  double cutoff = 0.0;
};

/// Ordinary least squares y = intercept + slope * x.
FitResult linear_fit(std::span<const double> x, std::span<const double> y);

/// Least squares on (log x, log y) over points with x >= cutoff.
/// Throws on nonpositive data among the retained points.
FitResult loglog_fit(std::span<const double> x, std::span<const double> y, double cutoff = 0.0);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Pooled two-proportion z-test (two-sided). Needs n1, n2 >= 30.
TestResult two_proportion_test(std::int64_t k1, std::int64_t n1, std::int64_t k2, std::int64_t n2);

/// Pearson chi-square against equal cell probabilities.
TestResult chi_square_uniform(std::span<const std::int64_t> counts);

/// Pearson chi-square against given cell probabilities (they are renormalized).
TestResult chi_square_gof(std::span<const std::int64_t> counts, std::span<const double> probs);

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
TestResult ks_two_sample(std::vector<double> a, std::vector<double> b);

/// Regularized upper incomplete gamma Q(a, x).
double gamma_q(double a, double x);

/// Upper tail of chi-square with dof degrees of freedom.
double chi_square_sf(double stat, double dof);

/// Standard normal upper tail P(Z > z).
double normal_sf(double z);

}  // namespace dynperc::stats
