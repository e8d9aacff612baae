#include "dynperc/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace dynperc::stats {

namespace {

constexpr double kZ95 = 1.959963984540054;

// Series expansion of P(a, x), valid for x < a + 1.
double gamma_p_series(double a, double x) {
  double sum = 1.0 / a;
  double term = sum;
  for (int n = 1; n < 10000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Lentz continued fraction for Q(a, x), valid for x >= a + 1.
double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

// Kolmogorov limiting distribution tail Q_KS(lambda).
double kolmogorov_sf(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::fabs(term) < 1e-18) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

}  // namespace

MeanCi mean_ci(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw std::invalid_argument("mean_ci: need at least 2 samples");
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / (n - 1) / n);
  return {mean, se, mean - kZ95 * se, mean + kZ95 * se};
}

Proportion wilson(std::int64_t successes, std::int64_t trials, double z) {
  if (trials <= 0 || successes < 0 || successes > trials) {
    throw std::invalid_argument("wilson: need 0 <= successes <= trials, trials > 0");
  }
  const double n = static_cast<double>(trials);
  const double ph = successes / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (ph + z2 / (2 * n)) / denom;
  const double half = z * std::sqrt(ph * (1 - ph) / n + z2 / (4 * n * n)) / denom;
  const double lo = successes == 0 ? 0.0 : std::max(0.0, centre - half);
  const double hi = successes == trials ? 1.0 : std::min(1.0, centre + half);
  return {ph, lo, hi};
}

FitResult linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("linear_fit: size mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw std::invalid_argument("linear_fit: need at least 2 points");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("linear_fit: degenerate x values");
  FitResult fit;
  fit.n_points = static_cast<int>(n);
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    sse += r * r;
  }
  fit.r2 = syy == 0.0 ? 1.0 : std::clamp(1.0 - sse / syy, 0.0, 1.0);
  fit.stderr_slope = n > 2 ? std::sqrt(sse / (n - 2) / sxx) : 0.0;
  return fit;
}

FitResult loglog_fit(std::span<const double> x, std::span<const double> y, double cutoff) {
  if (x.size() != y.size()) throw std::invalid_argument("loglog_fit: size mismatch");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < cutoff) continue;
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) {
      throw std::invalid_argument("loglog_fit: nonpositive data");
    }
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  FitResult fit = linear_fit(lx, ly);
  fit.cutoff = cutoff;
  return fit;
}

TestResult two_proportion_test(std::int64_t k1, std::int64_t n1, std::int64_t k2, std::int64_t n2) {
  if (n1 < 30 || n2 < 30) throw std::invalid_argument("two_proportion_test: n must be >= 30");
  if (k1 < 0 || k1 > n1 || k2 < 0 || k2 > n2) {
    throw std::invalid_argument("two_proportion_test: counts out of range");
  }
  const double p1 = static_cast<double>(k1) / n1;
  const double p2 = static_cast<double>(k2) / n2;
  const double pooled = static_cast<double>(k1 + k2) / (n1 + n2);
  const double var = pooled * (1 - pooled) * (1.0 / n1 + 1.0 / n2);
  if (var == 0.0) return {0.0, 1.0};
  const double z = (p1 - p2) / std::sqrt(var);
  return {z, std::min(1.0, 2.0 * normal_sf(std::fabs(z)))};
}

TestResult chi_square_gof(std::span<const std::int64_t> counts, std::span<const double> probs) {
  if (counts.size() < 2 || counts.size() != probs.size()) {
    throw std::invalid_argument("chi_square: need >= 2 cells with matching probabilities");
  }
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  const double psum = std::accumulate(probs.begin(), probs.end(), 0.0);
  double stat = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double expected = total * probs[i] / psum;
    if (expected < 5.0) throw std::invalid_argument("chi_square: expected count below 5");
    const double diff = static_cast<double>(counts[i]) - expected;
    stat += diff * diff / expected;
  }
  return {stat, chi_square_sf(stat, static_cast<double>(counts.size() - 1))};
}

TestResult chi_square_uniform(std::span<const std::int64_t> counts) {
  const std::vector<double> probs(counts.size(), 1.0);
  return chi_square_gof(counts, probs);
}

TestResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double dmax = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    dmax = std::max(dmax, std::fabs(i / na - j / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {dmax, kolmogorov_sf((ne + 0.12 + 0.11 / ne) * dmax)};
}

double gamma_q(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) throw std::invalid_argument("gamma_q: need a > 0, x >= 0");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_fraction(a, x);
}

double chi_square_sf(double stat, double dof) {
  if (stat <= 0.0) return 1.0;
  return gamma_q(dof / 2.0, stat / 2.0);
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace dynperc::stats
