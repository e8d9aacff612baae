#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "dynperc/random.hpp"
#include "dynperc/stats.hpp"

using namespace dynperc;
using doctest::Approx;

TEST_CASE("mean_ci") {
  std::vector<double> c(10, 3.0);
  auto r = stats::mean_ci(c);
  CHECK(r.mean == 3.0);
  CHECK(r.std_error == 0.0);
  std::vector<double> b;
  for (int i = 0; i < 5000; ++i) {
    b.push_back(0.0);
    b.push_back(1.0);
  }
  r = stats::mean_ci(b);
  CHECK(r.mean == Approx(0.5));
  CHECK(r.std_error == Approx(std::sqrt(0.25 / 10000.0)).epsilon(1e-3));
  CHECK(r.lo < 0.5);
  CHECK(r.hi > 0.5);
  std::vector<double> one{1.0};
  CHECK_THROWS(stats::mean_ci(one));
}

TEST_CASE("loglog_fit on exact and noisy power laws") {
  std::vector<double> x{1, 2, 4, 8, 16, 32}, y2, y7, yn;
  for (double v : x) {
    y2.push_back(v * v);
    y7.push_back(7.0 * std::pow(v, -5.0 / 48.0));
  }
  auto f = stats::loglog_fit(x, y2);
  CHECK(f.slope == Approx(2.0).epsilon(1e-14));
  CHECK(f.r2 == Approx(1.0));
  CHECK(f.n_points == 6);
  f = stats::loglog_fit(x, y7);
  CHECK(f.slope == Approx(-5.0 / 48.0).epsilon(1e-13));
  CHECK(f.stderr_slope < 1e-12);
  CHECK(f.intercept == Approx(std::log(7.0)));
  Stream s(9);
  for (double v : x) yn.push_back(std::pow(v, -0.5) * (1.0 + 0.01 * (2.0 * s.uniform01() - 1.0)));
  f = stats::loglog_fit(x, yn);
  CHECK(std::abs(f.slope + 0.5) < 0.02);
  CHECK(stats::loglog_fit(x, y2, 4.0).n_points == 4);
  std::vector<double> bad{1, -1, 2, 3, 4, 5};
  CHECK_THROWS(stats::loglog_fit(x, bad));
}

TEST_CASE("two-proportion test") {
  auto t = stats::two_proportion_test(30, 60, 50, 100);
  CHECK(t.statistic == 0.0);
  CHECK(t.p_value == Approx(1.0));
  // Pooled p = 0.45: z = 0.1 / sqrt(0.45 * 0.55 * 2 / 1000).
  t = stats::two_proportion_test(500, 1000, 400, 1000);
  CHECK(t.statistic == Approx(0.1 / std::sqrt(0.45 * 0.55 * 0.002)).epsilon(1e-12));
  CHECK(t.statistic == Approx(4.4947).epsilon(1e-4));
  CHECK(t.p_value < 1e-4);
  CHECK_THROWS(stats::two_proportion_test(1, 29, 2, 100));
}

TEST_CASE("chi-square uniformity") {
  std::vector<std::int64_t> eq{25, 25, 25, 25};
  auto r = stats::chi_square_uniform(eq);
  CHECK(r.statistic == 0.0);
  CHECK(r.p_value == Approx(1.0));
  std::vector<std::int64_t> c{60, 40};
  r = stats::chi_square_uniform(c);
  CHECK(r.statistic == Approx(4.0));
  CHECK(r.p_value == Approx(0.04550026389635842).epsilon(1e-10));
  std::vector<std::int64_t> tiny{0, 3, 2};
  CHECK_THROWS(stats::chi_square_uniform(tiny));
}

TEST_CASE("incomplete gamma against boost") {
  for (double dof : {1.0, 2.0, 3.0, 7.0, 20.0, 99.0}) {
    for (double stat : {0.01, 0.5, 1.0, 4.0, 10.0, 30.0, 120.0}) {
      const double ref = boost::math::gamma_q(dof / 2.0, stat / 2.0);
      CHECK(std::abs(stats::chi_square_sf(stat, dof) - ref) < 1e-8);
    }
  }
}

TEST_CASE("Wilson interval") {
  auto p = stats::wilson(0, 100);
  CHECK(p.phat == 0.0);
  CHECK(p.lo == 0.0);
  CHECK(p.hi > 0.0);
  p = stats::wilson(50, 100);
  CHECK(p.lo < 0.5);
  CHECK(p.hi > 0.5);
  CHECK(p.hi - 0.5 == Approx(0.5 - p.lo));
}

TEST_CASE("normal tail") {
  CHECK(stats::normal_sf(0.0) == Approx(0.5));
  CHECK(stats::normal_sf(1.959963984540054) == Approx(0.025).epsilon(1e-9));
}
