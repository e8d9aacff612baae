#include <cmath>
#include <deque>
#include <set>
#include <vector>

#include "doctest.h"
#include "dynperc/percolation.hpp"

using namespace dynperc;
using doctest::Approx;

namespace {

// Enumerates every configuration of the units inside B_r and returns the
// exact success probability at p = 1/2.
double exhaustive_one_arm(const Lattice& lat, std::int64_t r) {
  const std::vector<Unit> units = units_in_ball(lat, r);
  REQUIRE(units.size() <= 20u);
  BoxExplorer ex(lat, r);
  std::int64_t hits = 0;
  const std::uint64_t total = 1ULL << units.size();
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    hits += ex.reaches_boundary([&](const Unit& u) {
      for (std::size_t i = 0; i < units.size(); ++i) {
        if (units[i] == u) return ((mask >> i) & 1) != 0;
      }
      FAIL("queried a unit outside B_r");
      return false;
    });
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

// Independent labelling by BFS, as an oracle for largest_open_cluster.
std::vector<std::uint8_t> bfs_largest(const Lattice& t, const Configuration& c) {
  const auto n = t.vertex_count();
  std::vector<std::int64_t> comp(static_cast<std::size_t>(n), -1);
  std::vector<std::int64_t> size, min_vertex;
  std::vector<bool> has_open;
  for (std::int64_t s = 0; s < n; ++s) {
    if (comp[static_cast<std::size_t>(s)] >= 0) continue;
    const auto id = static_cast<std::int64_t>(size.size());
    size.push_back(0);
    min_vertex.push_back(s);
    has_open.push_back(false);
    std::deque<std::int64_t> q{s};
    comp[static_cast<std::size_t>(s)] = id;
    while (!q.empty()) {
      const auto v = q.front();
      q.pop_front();
      ++size.back();
      if (t.is_triangular() && c[static_cast<std::size_t>(v)]) has_open.back() = true;
      for (const Neighbor& nb : t.neighbors(t.vertex_at(v))) {
        const auto w = t.vertex_index(nb.vertex);
        bool open;
        if (t.is_triangular()) {
          open = c[static_cast<std::size_t>(v)] && c[static_cast<std::size_t>(w)];
        } else {
          open = c[static_cast<std::size_t>(t.unit_index(nb.unit))] != 0;
          if (open) has_open.back() = true;
        }
        if (open && comp[static_cast<std::size_t>(w)] < 0) {
          comp[static_cast<std::size_t>(w)] = id;
          q.push_back(w);
        }
      }
    }
  }
  std::int64_t best = -1;
  for (std::size_t i = 0; i < size.size(); ++i) {
    if (!has_open[i]) continue;
    if (best < 0 || size[i] > size[static_cast<std::size_t>(best)]) best = static_cast<std::int64_t>(i);
  }
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n), 0);
  if (best >= 0) {
    for (std::int64_t v = 0; v < n; ++v) out[static_cast<std::size_t>(v)] = comp[static_cast<std::size_t>(v)] == best;
  }
  return out;
}

}  // namespace

TEST_CASE("critical probabilities") {
  CHECK(critical_probability(Lattice::triangular()) == 0.5);
  CHECK(critical_probability(Lattice::hypercubic(2)) == 0.5);
  CHECK(critical_probability(Lattice::hypercubic(3)) == Approx(0.2488).epsilon(1e-3));
}

TEST_CASE("exhaustive one-arm at r = 1") {
  CHECK(exhaustive_one_arm(Lattice::triangular(), 1) == 63.0 / 128.0);
  // Only the four origin bonds matter, but all 12 bonds of B_1 are enumerated.
  CHECK(exhaustive_one_arm(Lattice::hypercubic(2), 1) == 15.0 / 16.0);
}

TEST_CASE("one-arm trials stay inside the box") {
  for (const Lattice& lat : {Lattice::triangular(), Lattice::hypercubic(2), Lattice::hypercubic(3)}) {
    for (std::int64_t r : {2, 5, 9}) {
      BoxExplorer ex(lat, r);
      Stream s(r);
      for (int i = 0; i < 200; ++i) {
        std::set<std::uint64_t> seen;
        ex.reaches_boundary([&](const Unit& u) {
          for (int k = 0; k < lat.dim(); ++k) {
            CHECK(std::abs(u.base[k]) <= r);
          }
          if (!u.is_site()) CHECK(u.base[u.dir] < r);
          CHECK(seen.insert(lat.unit_hash(u)).second);
          return s.bernoulli(0.55);
        });
        CHECK(ex.units_queried() == static_cast<std::int64_t>(seen.size()));
      }
    }
  }
}

TEST_CASE("coupled trials are monotone in p and r") {
  const Lattice tri = Lattice::triangular();
  for (std::uint64_t key = 0; key < 1000; ++key) {
    bool prev = true;
    for (std::int64_t r : {2, 4, 8, 16}) {
      const bool hit = one_arm_trial(tri, r, 0.5, key);
      if (!prev) CHECK_FALSE(hit);
      prev = hit;
      if (hit) CHECK(one_arm_trial(tri, r, 0.6, key));
    }
  }
  CHECK(one_arm_trial(tri, 7, 1.0, 1));
  CHECK_FALSE(one_arm_trial(tri, 7, 0.0, 1));
}

TEST_CASE("one-arm sweep output") {
  OneArmConfig cfg;
  cfg.radii = {2, 4, 8};
  cfg.p = 1.0;
  cfg.reps = 50;
  cfg.threads = 1;
  auto res = one_arm_sweep(cfg);
  for (const auto& row : res.rows) CHECK(row.successes == 50);
  CHECK(res.to_csv().rfind(OneArmResult::kCsvHeader, 0) == 0);
  cfg.p = 0.5;
  cfg.reps = 600;
  cfg.fit_cutoff = 2;
  res = one_arm_sweep(cfg);
  auto four = cfg;
  four.threads = 4;
  CHECK(one_arm_sweep(four).to_csv() == res.to_csv());
  CHECK(res.fitted);
  CHECK(res.fit_json().find("\"slope\"") != std::string::npos);
  cfg.critical_window = true;
  CHECK(cfg.p_at(16) == Approx(0.5 + std::pow(16.0, -0.75)));
}

TEST_CASE("largest open cluster agrees with BFS labelling") {
  for (const Lattice& base : {Lattice::hypercubic(2), Lattice::triangular(), Lattice::hypercubic(3)}) {
    const Lattice t = base.torus(6);
    for (std::uint64_t k = 0; k < 40; ++k) {
      const double p = 0.2 + 0.02 * static_cast<double>(k);
      const Configuration c = coupled_configuration(t, p, k);
      CHECK(largest_open_cluster(t, c) == bfs_largest(t, c));
    }
  }
}

TEST_CASE("theta limits and monotonicity") {
  const Lattice t = Lattice::hypercubic(2).torus(32);
  CHECK(theta_estimate(t, 1.0, 50, 1, 1).ci.phat == 1.0);
  CHECK(theta_estimate(t, 0.0, 50, 1, 1).ci.phat == 0.0);
  const auto lo = theta_estimate(t, 0.7, 400, 3, 1);
  const auto hi = theta_estimate(t, 0.8, 400, 3, 1);
  CHECK(lo.ci.phat <= hi.ci.phat + 0.05);
  CHECK(hi.ci.phat > 0.8);
}

TEST_CASE("ever-open trials") {
  const Lattice tri = Lattice::triangular();
  // t = 0 reduces both modes to one-arm at p_c.
  for (std::uint64_t key = 0; key < 200; ++key) {
    CHECK(h_cluster_trial(tri, 0.5, 0.1, 0.0, 8, HMode::static_equivalent, key) ==
          one_arm_trial(tri, 8, 0.5, key));
  }
  const auto res = h_cluster_experiment(tri, 0.5, 0.1, 10.0, 8, 4000, 1, 1);
  CHECK(res.test.p_value > 1e-3);
  const auto sat = h_cluster_experiment(tri, 0.5, 0.35, 200.0, 8, 100, 2, 1);
  CHECK(sat.dynamical_successes == 100);
  CHECK(sat.static_successes == 100);
  CHECK_THROWS(h_cluster_experiment(tri, 0.5, 0.1, 1.0, 8, 10, 1, 1));
}
