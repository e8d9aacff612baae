#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "dynperc/errors.hpp"
#include "dynperc/evolving.hpp"
#include "dynperc/stats.hpp"

using namespace dynperc;
using doctest::Approx;

namespace {

using oracle::LMat;
using oracle::oracle_jump;
using oracle::taylor_exp;
using oracle::oracle_kernel;

TorusTrajectory make_traj(int side, double p, double mu, double t1, std::uint64_t seed) {
  EnvParams env;
  env.lattice = Lattice::hypercubic(2).torus(side);
  env.p = p;
  env.mu = mu;
  return torus_trajectory(env, 0.0, t1, StreamKey{seed, {}});
}

VertexSet random_set(std::size_t n, Stream& s) {
  VertexSet S;
  for (std::uint32_t v = 0; v < n; ++v) if (s.bernoulli(0.3)) S.push_back(v);
  if (S.empty()) S.push_back(static_cast<std::uint32_t>(s.uniform_int(n)));
  return S;
}

}  // namespace

TEST_CASE("uniformization truncation") {
  CHECK(uniformization_terms(0.0) == 0);
  for (double d : {0.01, 0.5, 1.0}) {
    const int K = uniformization_terms(d);
    double tail = std::exp(-d);
    for (int k = 1; k <= K + 1; ++k) tail *= d / k;
    CHECK(tail / (1.0 - d / (K + 2)) < 1e-14);
  }
}

TEST_CASE("single-interval kernels match the Taylor oracle") {
  for (int inst = 0; inst < 50; ++inst) {
    const int side = inst % 2 == 0 ? 4 : 6;
    Stream s(1000 + inst);
    const Lattice t = Lattice::hypercubic(2).torus(side);
    Configuration c(static_cast<std::size_t>(t.unit_count()));
    for (auto& u : c) u = s.bernoulli(0.5);
    const Eigen::MatrixXd J = jump_matrix(t, c);
    const LMat Jo = oracle_jump(t, c);
    const Eigen::MatrixXd P = interval_exponential(J, 1.0);
    const LMat Po = taylor_exp(Jo, 1.0L);
    double err = 0.0;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
      CHECK(P.row(i).sum() == Approx(1.0).epsilon(1e-12));
      CHECK(P(i, i) >= std::exp(-1.0) - 1e-12);
      for (Eigen::Index j = 0; j < P.cols(); ++j) {
        CHECK(J(i, j) == static_cast<double>(Jo[i][j]));
        CHECK(P(i, j) >= 0.0);
        err = std::max(err, std::abs(P(i, j) - static_cast<double>(Po[i][j])));
      }
    }
    CHECK(err < 1e-10);
  }
}

TEST_CASE("quenched kernels across events match the oracle and split freely") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto traj = make_traj(4, 0.5, 0.3, 2.0, seed);
    for (std::int64_t n : {0, 1}) {
      const QuenchedKernel K = quenched_kernel(traj, n);
      const LMat O = oracle_kernel(traj, n);
      std::vector<double> splits{n + 0.1234, n + 0.5, n + 0.87};
      const QuenchedKernel K2 = quenched_kernel(traj, n, splits);
      CHECK(K2.intervals >= K.intervals + 1);
      for (Eigen::Index i = 0; i < K.P.rows(); ++i) {
        CHECK(K.P.row(i).sum() == Approx(1.0).epsilon(1e-12));
        CHECK(K.P(i, i) >= std::exp(-1.0) - 1e-12);
        for (Eigen::Index j = 0; j < K.P.cols(); ++j) {
          CHECK(std::abs(K.P(i, j) - static_cast<double>(O[i][j])) < 1e-10);
          CHECK(std::abs(K.P(i, j) - K2.P(i, j)) < 1e-10);
        }
      }
    }
  }
  const auto closed = make_traj(4, 0.0, 0.1, 1.0, 3);
  CHECK(quenched_kernel(closed, 0).P.isIdentity(0.0));
  CHECK_THROWS(quenched_kernel(closed, 1));
  CHECK_THROWS_AS(quenched_kernel(make_traj(10, 0.5, 0.1, 1.0, 1), 0), Unsupported);
}

TEST_CASE("threshold profile identities") {
  for (int inst = 0; inst < 100; ++inst) {
    const auto traj = make_traj(inst % 2 ? 4 : 6, 0.2 + 0.006 * inst, 0.2, 1.0, 50 + inst);
    const QuenchedKernel K = quenched_kernel(traj, 0);
    Stream s(inst);
    const VertexSet S = random_set(static_cast<std::size_t>(K.P.rows()), s);
    const auto prof = ThresholdProfile::from_kernel(K.P, S);
    const double size = static_cast<double>(S.size());
    CHECK(prof.total_mass() == Approx(size).epsilon(1e-10));
    CHECK(std::abs(prof.plain_integral() - size) < 1e-10);
    const auto w = prof.doob_weights();
    double sw = 0.0;
    for (double x : w) sw += x;
    CHECK(std::abs(sw - 1.0) < 1e-12);
    VertexSet prev;
    for (double u : {1.0, 0.9, 0.5, 0.37, 0.2, 0.05, 1e-9}) {
      const VertexSet B = prof.level_set(u);
      CHECK(std::includes(B.begin(), B.end(), prev.begin(), prev.end()));
      prev = B;
    }
    const VertexSet low = prof.level_set(std::exp(-1.0));
    CHECK(std::includes(low.begin(), low.end(), S.begin(), S.end()));
  }
  const auto traj = make_traj(4, 0.5, 0.2, 1.0, 9);
  const QuenchedKernel K = quenched_kernel(traj, 0);
  VertexSet all(16);
  for (std::uint32_t v = 0; v < 16; ++v) all[v] = v;
  const auto prof = ThresholdProfile::from_kernel(K.P, all);
  CHECK(prof.level_set(1.0) == all);
  Stream s(1);
  CHECK(evolve_doob(prof, s) == all);
  CHECK_THROWS(ThresholdProfile::from_kernel(K.P, VertexSet{}));
  CHECK_THROWS(prof.level_set(0.0));
}

TEST_CASE("isolated singleton") {
  const auto closed = make_traj(4, 0.0, 0.1, 1.0, 3);
  const QuenchedKernel K = quenched_kernel(closed, 0);
  const VertexSet S{5};
  const auto prof = ThresholdProfile::from_kernel(K.P, S);
  REQUIRE(prof.order().size() == 1u);
  CHECK(prof.values()[0] == 1.0);
  Stream s(2);
  for (int i = 0; i < 100; ++i) CHECK(evolve_doob(prof, s) == S);
  EvolvingState st{5, S};
  st = df_step(K.P, st, s);
  CHECK(st.x == 5u);
  CHECK(st.set == S);
  const auto phi = phi_S(closed, K, S);
  CHECK(phi.phi == 0.0);
  CHECK(phi.bound == 0.0);
  const auto d = drift_check(closed, K, S);
  CHECK(d.lhs == Approx(1.0));
  CHECK(d.rhs == Approx(1.0));
  CHECK(d.pass);
}

TEST_CASE("drift check at S = V") {
  const auto traj = make_traj(4, 0.5, 0.2, 1.0, 4);
  const QuenchedKernel K = quenched_kernel(traj, 0);
  VertexSet all(16);
  for (std::uint32_t v = 0; v < 16; ++v) all[v] = v;
  const auto d = drift_check(traj, K, all);
  CHECK(d.lhs == Approx(0.25));
  CHECK(d.rhs == Approx(0.25));
  CHECK(d.pass);
  CHECK_THROWS(phi_S(traj, K, all));
  CHECK_THROWS(phi_S(traj, K, VertexSet{}));
}

TEST_CASE("Monte Carlo of the plain step matches the breakpoint integral") {
  const auto traj = make_traj(6, 0.5, 0.2, 1.0, 12);
  const QuenchedKernel K = quenched_kernel(traj, 0);
  const VertexSet S{0, 1, 2, 7, 8, 20};
  const auto prof = ThresholdProfile::from_kernel(K.P, S);
  Stream s(3);
  const int n = 1000000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto b = static_cast<double>(evolve_plain(prof, s.uniform_open0()).size());
    sum += b;
    sq += b * b;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  CHECK(std::abs(mean - prof.plain_integral()) < 4.0 * se);
}

TEST_CASE("Doob step frequencies match the exact weights") {
  const auto traj = make_traj(4, 0.6, 0.2, 1.0, 21);
  const QuenchedKernel K = quenched_kernel(traj, 0);
  const VertexSet S{0, 1, 5};
  const auto prof = ThresholdProfile::from_kernel(K.P, S);
  const auto w = prof.doob_weights();
  std::map<std::size_t, std::size_t> seg_of_size;
  for (std::size_t i = 0; i < prof.segments().size(); ++i) seg_of_size[prof.segments()[i].size] = i;
  const int n = 100000;
  std::vector<std::int64_t> counts(w.size(), 0);
  Stream s(8);
  for (int i = 0; i < n; ++i) ++counts[seg_of_size.at(evolve_doob(prof, s).size())];
  // Pool cells with small expectation so the Pearson statistic is valid.
  std::vector<std::int64_t> c;
  std::vector<double> p;
  std::int64_t pooled_c = 0;
  double pooled_p = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) {
      CHECK(counts[i] == 0);
      continue;
    }
    if (w[i] * n < 20.0) {
      pooled_c += counts[i];
      pooled_p += w[i];
    } else {
      c.push_back(counts[i]);
      p.push_back(w[i]);
    }
  }
  if (pooled_p * n >= 5.0) {
    c.push_back(pooled_c);
    p.push_back(pooled_p);
  }
  REQUIRE(c.size() >= 2u);
  CHECK(stats::chi_square_gof(c, p).p_value > 1e-3);
}

TEST_CASE("Diaconis-Fill step keeps the walker in its set") {
  const auto traj = make_traj(4, 0.5, 0.2, 1.0, 5);
  const QuenchedKernel K = quenched_kernel(traj, 0);
  Stream s(4);
  EvolvingState st;
  for (int i = 0; i < 2000; ++i) {
    st = df_step(K.P, st, s);
    CHECK(std::binary_search(st.set.begin(), st.set.end(), st.x));
  }
  VertexSet all(16);
  for (std::uint32_t v = 0; v < 16; ++v) all[v] = v;
  EvolvingState full{3, all};
  CHECK(df_step(K.P, full, s).set == all);
  EvolvingState bad{3, VertexSet{1, 2}};
  CHECK_THROWS_AS(df_step(K.P, bad, s), ContractViolation);
}

TEST_CASE("Diaconis-Fill estimators agree") {
  DfCheckConfig cfg;
  cfg.runs = 20000;
  cfg.threads = 1;
  const auto r = df_check(cfg);
  CHECK(r.membership_violations == 0);
  CHECK(r.steps_taken == cfg.runs * cfg.steps);
  REQUIRE(r.rows.size() == 2u);
  for (const auto& row : r.rows) CHECK(std::abs(row.z) < 4.0);
}

TEST_CASE("Phi on a static half torus equals the oracle escape mass") {
  const auto traj = make_traj(4, 1.0, 0.05, 1.0, 2);
  const QuenchedKernel K = quenched_kernel(traj, 0);
  const LMat O = oracle_kernel(traj, 0);
  const Lattice& t = traj.lattice();
  VertexSet S;
  for (std::uint32_t v = 0; v < 16; ++v) if (t.vertex_at(v)[0] < 2) S.push_back(v);
  long double esc = 0.0L;
  for (std::uint32_t x : S)
    for (std::uint32_t y = 0; y < 16; ++y)
      if (!std::binary_search(S.begin(), S.end(), y)) esc += O[x][y];
  const auto phi = phi_S(traj, K, S);
  CHECK(std::abs(phi.phi - static_cast<double>(esc / S.size())) < 1e-12);
  // 8 boundary bonds, open for the whole unit interval.
  CHECK(edge_boundary(t, S).size() == 8u);
  CHECK(phi.bound == Approx(8.0 / (4.0 * std::exp(1.0) * 8.0)));
  CHECK(phi.phi >= phi.bound);
}

TEST_CASE("exact inequality suite") {
  EvolvingCheckConfig cfg;
  cfg.threads = 1;
  const auto res = evolving_check(cfg);
  REQUIRE(res.rows.size() == 200u);
  int sides4 = 0;
  for (const auto& r : res.rows) {
    CHECK(r.drift_pass);
    CHECK(r.phi_pass);
    sides4 += r.side == 4;
  }
  CHECK(sides4 == 100);
  CHECK(res.to_csv().rfind(EvolvingCheckResult::kCsvHeader, 0) == 0);
}

TEST_CASE("sparse propagation matches dense kernels") {
  const auto traj = make_traj(8, 0.5, 0.3, 3.0, 31);
  for (double drop : {0.0, 1e-14}) {
    MassPropagator prop(traj, drop);
    Stream s(6);
    for (std::int64_t n = 0; n < 3; ++n) {
      const QuenchedKernel K = quenched_kernel(traj, n);
      const VertexSet A = random_set(64, s);
      std::vector<double> dense(64, 0.0);
      for (std::uint32_t x : A)
        for (int y = 0; y < 64; ++y) dense[static_cast<std::size_t>(y)] += K.P(x, y);
      std::vector<double> sparse(64, 0.0);
      for (const auto& [y, q] : prop.propagate(A, n)) sparse[y] = q;
      for (int y = 0; y < 64; ++y) CHECK(std::abs(dense[y] - sparse[y]) < 1e-12);
      CHECK(prop.config_at_step(n) == traj.config_at(static_cast<double>(n)));
    }
  }
}

TEST_CASE("sampled walk steps follow the kernel row") {
  const auto traj = make_traj(4, 0.6, 0.2, 1.0, 41);
  const QuenchedKernel K = quenched_kernel(traj, 0);
  Stream s(7);
  std::vector<std::int64_t> counts(16, 0);
  const int n = 50000;
  for (int i = 0; i < n; ++i) ++counts[sample_walk_step(traj, 0, 0, s)];
  std::vector<std::int64_t> c;
  std::vector<double> p;
  for (int y = 0; y < 16; ++y) {
    if (K.P(0, y) * n >= 5.0) {
      c.push_back(counts[static_cast<std::size_t>(y)]);
      p.push_back(K.P(0, y));
    }
  }
  CHECK(stats::chi_square_gof(c, p).p_value > 1e-3);
}

TEST_CASE("good and excellent times in the limiting cases") {
  for (double p : {0.0, 1.0}) {
    const auto traj = make_traj(8, p, 0.001, 6.0, 3);
    MassPropagator prop(traj);
    std::vector<VertexSet> sets;
    EvolvingState st;
    Stream s(1);
    sets.push_back(st.set);
    for (std::int64_t n = 0; n < 5; ++n) {
      st = df_step_sparse(traj, prop, st, n, s);
      sets.push_back(st.set);
    }
    const auto scan = good_excellent_scan(traj, sets, 1.0);
    REQUIRE(scan.good.size() == 6u);
    for (std::size_t m = 0; m < 6; ++m) {
      CHECK(scan.good[m] == (p == 1.0 ? 1 : 0));
      if (p == 0.0) CHECK(scan.excellent[m] == 0);
    }
    if (p == 1.0) CHECK(scan.good_fraction == 1.0);
    if (p == 0.0) CHECK(scan.good_fraction == 0.0);
  }
  CHECK(t_of_n(10, 0.8) == 100);
  CHECK(t_of_n(3, 0.7) == 35);
}

TEST_CASE("growth with everything closed stays a singleton") {
  GrowthConfig cfg;
  cfg.torus = Lattice::hypercubic(2).torus(16);
  cfg.p = 0.0;
  cfg.steps = 10;
  cfg.runs = 5;
  cfg.threads = 1;
  cfg.fit_from = 2;
  const auto g = growth_experiment(cfg);
  for (const auto& row : g.rows) CHECK(row.size_mean == 1.0);
}
