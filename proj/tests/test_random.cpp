#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "dynperc/random.hpp"
#include "dynperc/stats.hpp"

using namespace dynperc;

TEST_CASE("Philox4x32-10 known-answer vectors") {
  using A4 = std::array<std::uint32_t, 4>;
  using A2 = std::array<std::uint32_t, 2>;
  CHECK(philox4x32(A4{0, 0, 0, 0}, A2{0, 0}) ==
        A4{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(philox4x32(A4{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                   A2{0xffffffffu, 0xffffffffu}) ==
        A4{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(philox4x32(A4{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                   A2{0xa4093822u, 0x299f31d0u}) ==
        A4{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams replay and keys separate") {
  Stream a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  const StreamKey root{7, {}};
  CHECK(root.child(1).hashed() != root.child(2).hashed());
  CHECK(root.child(1).child(2).hashed() != root.child(2).child(1).hashed());
  CHECK(StreamKey{7, {1}}.hashed() == root.child(1).hashed());
  CHECK(StreamKey{8, {1}}.hashed() != root.child(1).hashed());
}

TEST_CASE("uniforms are in range and independent streams agree in law") {
  Stream s(1);
  std::vector<double> a, b;
  for (int i = 0; i < 20000; ++i) {
    const double u = s.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    a.push_back(u);
  }
  Stream t(StreamKey{1, {99}}.hashed());
  for (int i = 0; i < 20000; ++i) b.push_back(t.uniform_open0());
  for (double u : b) CHECK((u > 0.0 && u <= 1.0));
  CHECK(stats::ks_two_sample(a, b).p_value > 1e-3);
  // unit_uniform is stateless and addressable.
  CHECK(unit_uniform(5, 17) == unit_uniform(5, 17));
  CHECK(unit_uniform(5, 17) != unit_uniform(5, 18));
}

TEST_CASE("uniform_int is unbiased over small ranges") {
  Stream s(3);
  std::vector<std::int64_t> counts(6, 0);
  for (int i = 0; i < 60000; ++i) ++counts[s.uniform_int(6)];
  CHECK(stats::chi_square_uniform(counts).p_value > 1e-3);
}

TEST_CASE("exponential and Poisson moments") {
  Stream s(11);
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = s.exponential(2.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  CHECK(std::abs(mean - 0.5) < 4.0 * 0.5 / std::sqrt(n));
  CHECK(std::abs(sq / n - 0.5) < 0.02);  // E X^2 = 2 / rate^2
  for (double lam : {0.3, 4.0, 50.0}) {
    double m = 0.0, v = 0.0;
    std::vector<double> xs;
    for (int i = 0; i < n; ++i) xs.push_back(static_cast<double>(s.poisson(lam)));
    for (double x : xs) m += x;
    m /= n;
    for (double x : xs) v += (x - m) * (x - m);
    v /= (n - 1);
    CHECK(std::abs(m - lam) < 4.0 * std::sqrt(lam / n));
    CHECK(std::abs(v / lam - 1.0) < 0.05);
  }
  CHECK_THROWS(s.exponential(0.0));
}

TEST_CASE("bernoulli edge cases") {
  Stream s(5);
  for (int i = 0; i < 1000; ++i) {
    CHECK_FALSE(s.bernoulli(0.0));
    CHECK(s.bernoulli(1.0));
  }
}
