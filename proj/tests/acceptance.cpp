// Acceptance harness: one PASS/FAIL line per criterion. Every suite runs
// twice, with 1 and 4 worker threads, and the determinism criterion compares
// the CSV bytes of the two runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dynperc/evolving.hpp"
#include "dynperc/io.hpp"
#include "dynperc/percolation.hpp"
#include "dynperc/walker.hpp"
#include "oracles.hpp"

using namespace dynperc;

namespace {

constexpr std::uint64_t kSeed = 20240601;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Verdict {
  int id;
  bool pass;
  std::string detail;
};

struct SuiteRun {
  std::vector<Verdict> verdicts;
  std::map<std::string, std::string> csvs;
};

struct Suite {
  std::string name;
  std::vector<int> criteria;
  std::function<SuiteRun(int threads)> run;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- 1, 2: exact inequality suites -----------------------------------------

SuiteRun suite_inequalities(int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  EvolvingCheckConfig cfg;  // sides {4,6}, mu {0.05,0.2}, p {0.3,0.5,0.8}, 200 instances
  cfg.seed = kSeed;
  cfg.threads = threads;
  const EvolvingCheckResult res = evolving_check(cfg);
  const double wall = seconds_since(t0);
  int drift_fail = 0, phi_fail = 0;
  std::set<int> sides;
  for (const auto& r : res.rows) {
    drift_fail += !r.drift_pass;
    phi_fail += !r.phi_pass;
    sides.insert(r.side);
  }
  const bool grid = res.rows.size() == 200 && sides == std::set<int>{4, 6};
  SuiteRun out;
  out.csvs["evolving_check.csv"] = res.to_csv();
  out.verdicts.push_back({1, grid && drift_fail == 0 && wall < 120.0,
                          std::to_string(res.rows.size()) + " instances, " + std::to_string(drift_fail) +
                              " drift failures (tol 1e-12), " + fmt(wall) + " s"});
  out.verdicts.push_back({2, grid && phi_fail == 0,
                          std::to_string(res.rows.size()) + " instances, " + std::to_string(phi_fail) +
                              " Phi bound failures"});
  return out;
}

// --- 3: kernel correctness ---------------------------------------------------

SuiteRun suite_kernel(int threads) {
  (void)threads;  // single-interval instances are cheap; run inline
  std::ostringstream csv;
  csv << "instance,side,max_abs_err,max_row_dev,min_diag_minus_inv_e\n";
  double worst_err = 0.0, worst_row = 0.0, worst_diag = 1.0;
  bool nonneg = true;
  for (int inst = 0; inst < 50; ++inst) {
    const int side = inst % 2 == 0 ? 4 : 6;
    const Lattice t = Lattice::hypercubic(2).torus(side);
    Stream s(derive_key(kSeed, static_cast<std::uint64_t>(inst)));
    const double p = 0.1 + 0.8 * s.uniform01();
    Configuration c(static_cast<std::size_t>(t.unit_count()));
    for (auto& u : c) u = s.bernoulli(p);
    const Eigen::MatrixXd P = interval_exponential(jump_matrix(t, c), 1.0);
    const oracle::LMat O = oracle::taylor_exp(oracle::oracle_jump(t, c), 1.0L);
    double err = 0.0, row = 0.0, diag = 1.0;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
      row = std::max(row, std::abs(P.row(i).sum() - 1.0));
      diag = std::min(diag, P(i, i) - std::exp(-1.0));
      for (Eigen::Index j = 0; j < P.cols(); ++j) {
        nonneg = nonneg && P(i, j) >= 0.0;
        err = std::max(err, std::abs(P(i, j) - static_cast<double>(O[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)])));
      }
    }
    csv << inst << ',' << side << ',' << fmt(err) << ',' << fmt(row) << ',' << fmt(diag) << '\n';
    worst_err = std::max(worst_err, err);
    worst_row = std::max(worst_row, row);
    worst_diag = std::min(worst_diag, diag);
  }
  // Multi-interval kernels from real trajectories: row sums and diagonal.
  double traj_row = 0.0, traj_diag = 1.0;
  for (int inst = 0; inst < 50; ++inst) {
    EnvParams env;
    env.lattice = Lattice::hypercubic(2).torus(inst % 2 == 0 ? 4 : 6);
    env.p = 0.5;
    env.mu = 0.2;
    const auto traj = torus_trajectory(env, 0.0, 1.0, StreamKey{kSeed, {static_cast<std::uint64_t>(inst), 3}});
    const QuenchedKernel K = quenched_kernel(traj, 0);
    for (Eigen::Index i = 0; i < K.P.rows(); ++i) {
      traj_row = std::max(traj_row, std::abs(K.P.row(i).sum() - 1.0));
      traj_diag = std::min(traj_diag, K.P(i, i) - std::exp(-1.0));
      nonneg = nonneg && (K.P.row(i).array() >= 0.0).all();
    }
  }
  SuiteRun out;
  out.csvs["kernel_oracle.csv"] = csv.str();
  const bool pass = worst_err <= 1e-10 && worst_row <= 1e-12 && traj_row <= 1e-12 &&
                    worst_diag >= -1e-12 && traj_diag >= -1e-12 && nonneg;
  out.verdicts.push_back({3, pass,
                          "50 instances: max |P - oracle| " + fmt(worst_err) + ", max |row sum - 1| " +
                              fmt(std::max(worst_row, traj_row)) + ", min P(x,x) - 1/e " +
                              fmt(std::min(worst_diag, traj_diag))});
  return out;
}

// --- 4: Diaconis-Fill -----------------------------------------------------------

SuiteRun suite_diaconis_fill(int threads) {
  DfCheckConfig cfg;  // side 4, p 0.5, mu 0.2, 5 steps, 1e5 runs
  cfg.seed = kSeed;
  cfg.threads = threads;
  const DfCheckResult df = df_check(cfg);
  EvolvingCheckConfig mc;
  mc.instances = 100;
  mc.seed = kSeed + 1;
  mc.threads = threads;
  const EvolvingCheckResult mart = evolving_check(mc);
  double gap = 0.0;
  std::ostringstream mcsv;
  mcsv << "instance,side,mu,p,set_size,martingale_gap\n";
  for (const auto& r : mart.rows) {
    gap = std::max(gap, r.martingale_gap);
    mcsv << r.instance << ',' << r.side << ',' << fmt(r.mu) << ',' << fmt(r.p) << ',' << r.set_size << ','
         << fmt(r.martingale_gap) << '\n';
  }
  double zmax = 0.0;
  for (const auto& row : df.rows) zmax = std::max(zmax, std::abs(row.z));
  SuiteRun out;
  out.csvs["df_check.csv"] = df.to_csv();
  out.csvs["martingale.csv"] = mcsv.str();
  const bool pass = df.steps_taken >= 100000 && df.membership_violations == 0 && zmax <= 4.0 &&
                    mart.rows.size() == 100 && gap <= 1e-10;
  out.verdicts.push_back({4, pass,
                          std::to_string(df.steps_taken) + " steps, " + std::to_string(df.membership_violations) +
                              " violations; max |z| " + fmt(zmax) + " over " + std::to_string(cfg.runs) +
                              " runs; martingale gap " + fmt(gap) + " on 100 instances"});
  return out;
}

// --- 5, 6: one-arm exponent and near-critical window ----------------------------

SuiteRun suite_one_arm(int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  OneArmConfig cfg;
  cfg.lattice = Lattice::triangular();
  cfg.radii = {8, 16, 32, 64, 128, 256};
  cfg.p = 0.5;
  cfg.reps = 100000;
  cfg.seed = kSeed;
  cfg.threads = threads;
  const OneArmResult base = one_arm_sweep(cfg);
  const double wall = seconds_since(t0);

  OneArmConfig win = cfg;
  win.radii = {8, 16, 32, 64, 128};
  win.critical_window = true;  // p = 1/2 + r^{-3/4}
  const OneArmResult w = one_arm_sweep(win);
  std::ostringstream wcsv;
  wcsv << "r,p_window,phat_base,phat_window,ratio\n";
  bool in_band = true;
  std::string ratios;
  for (std::size_t i = 0; i < w.rows.size(); ++i) {
    const double ratio = w.rows[i].ci.phat / base.rows[i].ci.phat;
    in_band = in_band && ratio >= 1.0 && ratio <= 3.0;
    wcsv << w.rows[i].r << ',' << fmt(w.rows[i].p) << ',' << fmt(base.rows[i].ci.phat) << ','
         << fmt(w.rows[i].ci.phat) << ',' << fmt(ratio) << '\n';
    ratios += (i ? " " : "") + fmt(ratio);
  }
  SuiteRun out;
  out.csvs["onearm.csv"] = base.to_csv();
  out.csvs["onearm_fit.json"] = base.fit_json();
  out.csvs["onearm_window.csv"] = wcsv.str();
  const double target = -5.0 / 48.0;
  const bool slope_ok = base.fitted && std::abs(base.fit.slope - target) <= 0.02;
  // The runtime bound is for a single worker; only judged on that run.
  const bool time_ok = threads != 1 || wall <= 1800.0;
  out.verdicts.push_back({5, slope_ok && time_ok,
                          "slope " + fmt(base.fit.slope) + " +/- " + fmt(base.fit.stderr_slope) +
                              " vs -5/48 +/- 0.02, 1e5 trials per r, " + fmt(wall) + " s with " +
                              std::to_string(threads) + " thread(s)"});
  out.verdicts.push_back({6, in_band, "window/critical ratios for r = 8..128: " + ratios});
  return out;
}

// --- 7: ever-open equivalence ----------------------------------------------------

SuiteRun suite_ever_open(int threads) {
  std::ostringstream csv;
  csv << "mu,t,r,p_static,trials,dynamical_successes,static_successes,z,p_value\n";
  double min_p = 1.0;
  std::uint64_t cell = 0;
  for (double mu : {0.05, 0.2}) {
    for (double t : {5.0, 20.0}) {
      const HClusterResult h = h_cluster_experiment(Lattice::triangular(), 0.5, mu, t, 16, 100000,
                                                    derive_key(kSeed, cell++), threads);
      csv << fmt(mu) << ',' << fmt(t) << ",16," << fmt(ever_open_params(0.5, mu, t)) << ',' << h.trials
          << ',' << h.dynamical_successes << ',' << h.static_successes << ',' << fmt(h.test.statistic)
          << ',' << fmt(h.test.p_value) << '\n';
      min_p = std::min(min_p, h.test.p_value);
    }
  }
  SuiteRun out;
  out.csvs["hcluster.csv"] = csv.str();
  out.verdicts.push_back({7, min_p > 0.01, "min two-proportion p-value " + fmt(min_p) + " over 4 cells, 1e5 trials per mode"});
  return out;
}

// --- 8: regime separation --------------------------------------------------------

SuiteRun suite_regimes(int threads) {
  const std::vector<double> mus{0.02, 0.05, 0.1, 0.2};
  std::ostringstream csv;
  csv << "lattice,p,mu,t,replicas,sigma2,ci_lo,ci_hi\n";
  auto sweep = [&](const Lattice& lat, double p) {
    std::vector<double> sig;
    for (double mu : mus) {
      MsdConfig mc;
      mc.env.lattice = lat;
      mc.env.p = p;
      mc.env.mu = mu;
      mc.checkpoints = {500, 1000, 1500, 2000};
      mc.replicas = 2000;
      mc.seed = kSeed;
      mc.threads = threads;
      const SigmaEstimate e = sigma_hat(msd_experiment(mc));
      csv << lattice_name(lat) << ',' << fmt(p) << ',' << fmt(mu) << ",2000,2000," << fmt(e.sigma2) << ','
          << fmt(e.lo) << ',' << fmt(e.hi) << '\n';
      sig.push_back(e.sigma2);
    }
    return sig;
  };
  const auto t0 = std::chrono::steady_clock::now();
  const auto sub = sweep(Lattice::hypercubic(2), 0.25);
  const auto sup = sweep(Lattice::hypercubic(2), 0.8);
  const auto crit = sweep(Lattice::triangular(), 0.5);
  const double wall = seconds_since(t0);

  const double sub_slope = stats::loglog_fit(mus, sub).slope;
  const double sup_ratio = *std::max_element(sup.begin(), sup.end()) / *std::min_element(sup.begin(), sup.end());
  const double sup_min = *std::min_element(sup.begin(), sup.end());
  bool increasing = true;
  for (std::size_t i = 1; i < crit.size(); ++i) increasing = increasing && crit[i] > crit[i - 1];
  const double crit_slope = stats::loglog_fit(mus, crit).slope;
  const bool a = sub_slope >= 0.8 && sub_slope <= 1.2;
  const bool b = sup_ratio <= 1.5 && sup_min >= 0.05;
  const bool c = increasing && crit_slope > 0.05 && crit_slope < 1.0;
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v[i]);
    return s;
  };
  SuiteRun out;
  out.csvs["regimes.csv"] = csv.str();
  out.verdicts.push_back(
      {8, a && b && c && wall <= 3600.0,
       "(a) subcritical slope " + fmt(sub_slope) + (a ? " in" : " NOT in") + " [0.8, 1.2] [sigma2: " + list(sub) +
           "]; (b) supercritical max/min " + fmt(sup_ratio) + ", min " + fmt(sup_min) + (b ? " ok" : " out of band") +
           "; (c) critical slope " + fmt(crit_slope) + (increasing ? ", increasing" : ", not increasing") +
           (c ? " ok" : " out of band") + "; " + fmt(wall) + " s"});
  return out;
}

// --- 9: tail envelope ------------------------------------------------------------

SuiteRun suite_tail(int threads) {
  MsdConfig mc;
  mc.env.lattice = Lattice::hypercubic(2);
  mc.env.p = 1.0;
  mc.env.mu = 0.1;
  mc.checkpoints = {100};
  mc.replicas = 100000;
  mc.seed = kSeed;
  mc.threads = threads;
  const ReplicaSamples s = run_walk_replicas(mc);
  std::vector<std::int64_t> grid;
  for (std::int64_t L = 0; L <= 40; ++L) grid.push_back(L);
  const auto rows = tail_survival(s.dist, grid);
  const stats::FitResult fit = tail_fit(rows, 10, 40);
  std::ostringstream csv;
  csv << "L,count,n,survival,ci_lo,ci_hi\n";
  for (const auto& r : rows) {
    csv << r.L << ',' << r.count << ',' << r.n << ',' << fmt(r.survival.phat) << ',' << fmt(r.survival.lo)
        << ',' << fmt(r.survival.hi) << '\n';
  }
  SuiteRun out;
  out.csvs["tail.csv"] = csv.str();
  out.verdicts.push_back({9, fit.r2 > 0.95,
                          "R^2 " + fmt(fit.r2) + " over " + std::to_string(fit.n_points) +
                              " radii in [10, 40], slope " + fmt(fit.slope)});
  return out;
}

// --- 10: Markov type ---------------------------------------------------------------

SuiteRun suite_markov_type(int threads) {
  MsdConfig mc;
  mc.env.lattice = Lattice::triangular();
  mc.env.p = 0.5;
  mc.env.mu = 0.1;
  mc.replicas = 2000;
  mc.seed = kSeed;
  mc.threads = threads;
  const std::vector<int> ks{2, 4, 8};
  const auto rows = markov_type_check(mc, ks, 200.0);
  std::ostringstream csv;
  csv << "k,s,ratio,ci_lo,ci_hi\n";
  bool pass = true;
  std::string detail;
  for (const auto& r : rows) {
    csv << r.k << ",200," << fmt(r.ratio) << ',' << fmt(r.lo) << ',' << fmt(r.hi) << '\n';
    pass = pass && r.hi <= 3.0;
    detail += "k=" + std::to_string(r.k) + ": " + fmt(r.ratio) + " [" + fmt(r.lo) + ", " + fmt(r.hi) + "] ";
  }
  SuiteRun out;
  out.csvs["markov_type.csv"] = csv.str();
  out.verdicts.push_back({10, pass, detail + "(upper 95% bound <= 3)"});
  return out;
}

// --- 11: good/excellent times and growth -------------------------------------------

SuiteRun suite_good_times(int threads) {
  SupercriticalConfig sc;  // L = 64, p 0.8, mu 0.1, T = 200, 500 runs
  sc.seed = kSeed;
  sc.threads = threads;
  const SupercriticalResult r = supercritical_runs(sc);
  std::ostringstream runs;
  runs << "run,good_fraction,excellent_fraction,final_size\n";
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    runs << i << ',' << fmt(r.runs[i].scan.good_fraction) << ',' << fmt(r.runs[i].scan.excellent_fraction)
         << ',' << r.runs[i].sizes.back() << '\n';
  }
  GrowthConfig gc;  // p = 1, L = 64, mu 0.1, 100 steps, 200 runs
  gc.seed = kSeed;
  gc.threads = threads;
  const GrowthResult g = growth_experiment(gc);
  const double floor = r.theta_hat / 4.0 - 2.0 * r.frac_good_runs_se;
  const bool good_ok = r.runs.size() == 500 && r.frac_good_runs >= floor;
  const bool growth_ok = g.fit.slope >= 0.8 && g.fit.slope <= 1.2;
  SuiteRun out;
  out.csvs["good_times.csv"] = runs.str();
  out.csvs["growth.csv"] = g.to_csv();
  out.verdicts.push_back(
      {11, good_ok && growth_ok,
       "theta_hat " + fmt(r.theta_hat) + " (largest-cluster proxy); P(good fraction > theta/4) = " +
           fmt(r.frac_good_runs) + " >= " + fmt(floor) + "; mean good " + fmt(r.mean_good_fraction) +
           ", excellent " + fmt(r.mean_excellent_fraction) + "; growth exponent " + fmt(g.fit.slope) +
           " in [0.8, 1.2], c1 " + fmt(g.c1) + ", c2 " + fmt(g.c2)});
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string out_dir = "acceptance_out";
  std::vector<int> only;
  app.add_option("--out", out_dir, "directory for the CSVs of both runs");
  app.add_option("--only", only, "run only the suites covering these criteria (development aid)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Suite> suites = {
      {"inequalities", {1, 2}, suite_inequalities},
      {"kernel", {3}, suite_kernel},
      {"diaconis-fill", {4}, suite_diaconis_fill},
      {"one-arm", {5, 6}, suite_one_arm},
      {"ever-open", {7}, suite_ever_open},
      {"regimes", {8}, suite_regimes},
      {"tail", {9}, suite_tail},
      {"markov-type", {10}, suite_markov_type},
      {"good-times", {11}, suite_good_times},
  };

  std::vector<Verdict> verdicts;
  std::vector<std::string> mismatches;
  std::size_t compared = 0;
  for (const Suite& s : suites) {
    if (!only.empty() && std::none_of(s.criteria.begin(), s.criteria.end(), [&](int c) {
          return std::find(only.begin(), only.end(), c) != only.end();
        })) {
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    SuiteRun a = s.run(1);
    SuiteRun b = s.run(4);
    std::cerr << "[" << s.name << "] two runs in " << fmt(seconds_since(t0)) << " s\n";
    for (auto& v : a.verdicts) {
      std::cout << (v.pass ? "PASS" : "FAIL") << " [C" << v.id << "] " << v.detail << std::endl;
      verdicts.push_back(v);
    }
    for (const auto& [name, bytes] : a.csvs) {
      ++compared;
      io::write_text(std::filesystem::path(out_dir) / "threads1" / name, bytes);
      const auto it = b.csvs.find(name);
      if (it == b.csvs.end() || it->second != bytes) {
        mismatches.push_back(name);
      } else {
        io::write_text(std::filesystem::path(out_dir) / "threads4" / name, it->second);
      }
    }
  }
  std::string detail = std::to_string(compared) + " CSVs compared between 1 and 4 threads";
  if (!mismatches.empty()) {
    detail += "; differing:";
    for (const auto& m : mismatches) detail += " " + m;
  }
  const bool det = mismatches.empty() && compared > 0;
  std::cout << (det ? "PASS" : "FAIL") << " [C12] " << detail << std::endl;
  verdicts.push_back({12, det, detail});

  int failed = 0;
  for (const auto& v : verdicts) failed += !v.pass;
  std::cout << "acceptance: " << verdicts.size() - static_cast<std::size_t>(failed) << "/" << verdicts.size()
            << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
