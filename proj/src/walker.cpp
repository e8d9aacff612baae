#include "dynperc/walker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

#include "dynperc/parallel.hpp"

namespace dynperc {

namespace {

// Displacement with the per-axis minimal image on a torus.
Point displacement(const Lattice& lattice, const Point& pos) {
  if (!lattice.is_torus()) return pos;
  Point d = pos;
  const std::int64_t L = lattice.side();
  for (int i = 0; i < lattice.dim(); ++i) {
    if (d[i] > L / 2) d[i] -= L;
  }
  return d;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

std::string lattice_name(const Lattice& lattice) {
  std::string name = lattice.is_triangular() ? "triangular" : "hypercubic";
  if (lattice.is_torus()) name += "-torus" + std::to_string(lattice.side());
  return name;
}

void MsdConfig::validate() const {
  env.validate();
  if (replicas < 2) throw std::invalid_argument("msd: replicas must be >= 2");
  if (checkpoints.empty()) throw std::invalid_argument("msd: need at least one checkpoint");
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    if (!(checkpoints[i] >= 0.0) || (i > 0 && !(checkpoints[i] > checkpoints[i - 1]))) {
      throw std::invalid_argument("msd: checkpoints must be nonnegative and increasing");
    }
  }
}

ReplicaSamples run_walk_replicas(const MsdConfig& cfg) {
  cfg.validate();
  const Lattice& lattice = cfg.env.lattice;
  ReplicaSamples out;
  out.checkpoints = cfg.checkpoints.size();
  out.replicas = cfg.replicas;
  const std::size_t total = out.checkpoints * static_cast<std::size_t>(cfg.replicas);
  out.dist.resize(total);
  out.sq_l2.resize(total);
  out.attempts.resize(total);

  parallel_for(static_cast<std::size_t>(cfg.replicas), cfg.threads, [&](std::size_t r) {
    const StreamKey key{cfg.seed, {static_cast<std::uint64_t>(r)}};
    Stream walk = derive_stream(key.child(Purpose::walk));
    std::vector<WalkSample> samples;
    if (lattice.is_torus()) {
      const TorusTrajectory traj = torus_trajectory(cfg.env, 0.0, std::max(cfg.t_max(), 1e-9), key);
      TrajectoryEnvironment env(traj);
      samples = simulate_walk(lattice, env, cfg.t_max(), cfg.checkpoints, walk);
    } else {
      LazyEnvironment env(cfg.env, key);
      samples = simulate_walk(lattice, env, cfg.t_max(), cfg.checkpoints, walk);
    }
    for (std::size_t c = 0; c < samples.size(); ++c) {
      const std::size_t idx = out.at(static_cast<std::int64_t>(r), c);
      const std::int64_t dist = lattice.distance(lattice.origin(), samples[c].position);
      if (static_cast<std::uint64_t>(dist) > samples[c].attempts) {
        throw std::logic_error("walk moved farther than its number of attempts");
      }
      out.dist[idx] = dist;
      out.sq_l2[idx] = lattice.squared_norm(displacement(lattice, samples[c].position));
      out.attempts[idx] = samples[c].attempts;
    }
  });
  return out;
}

MsdTable aggregate_msd(const MsdConfig& cfg, const ReplicaSamples& samples) {
  MsdTable table{cfg, {}};
  std::vector<double> graph(static_cast<std::size_t>(samples.replicas));
  std::vector<double> l2(graph.size());
  for (std::size_t c = 0; c < samples.checkpoints; ++c) {
    for (std::int64_t r = 0; r < samples.replicas; ++r) {
      const double d = static_cast<double>(samples.dist[samples.at(r, c)]);
      graph[static_cast<std::size_t>(r)] = d * d;
      l2[static_cast<std::size_t>(r)] = samples.sq_l2[samples.at(r, c)];
    }
    const stats::MeanCi g = stats::mean_ci(graph);
    const stats::MeanCi e = stats::mean_ci(l2);
    table.rows.push_back({cfg.checkpoints[c], samples.replicas, g.mean, g.std_error, e.mean,
                          e.std_error});
  }
  return table;
}

MsdTable msd_experiment(const MsdConfig& cfg) { return aggregate_msd(cfg, run_walk_replicas(cfg)); }

std::string MsdTable::to_csv() const {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const MsdRow& row : rows) {
    out << fmt_double(row.t) << ',' << fmt_double(row.mean_sq_graph) << ','
        << fmt_double(row.stderr_graph) << ',' << fmt_double(row.mean_sq_l2) << ','
        << fmt_double(row.stderr_l2) << ',' << row.replicas << ',' << fmt_double(config.env.p)
        << ',' << fmt_double(config.env.mu) << ',' << lattice_name(config.env.lattice) << ','
        << config.env.lattice.dim() << ',' << config.seed << '\n';
  }
  return out.str();
}

SigmaEstimate sigma_hat(const MsdTable& table) {
  if (table.rows.empty()) throw std::invalid_argument("sigma_hat: empty table");
  const MsdRow& last = table.rows.back();
  if (last.replicas < 100) throw std::invalid_argument("sigma_hat: need >= 100 replicas");
  if (!(last.t > 0.0)) throw std::invalid_argument("sigma_hat: last checkpoint must be > 0");
  constexpr double z = 1.959963984540054;
  SigmaEstimate s;
  s.t = last.t;
  s.sigma2 = last.mean_sq_graph / last.t;
  s.lo = s.sigma2 - z * last.stderr_graph / last.t;
  s.hi = s.sigma2 + z * last.stderr_graph / last.t;
  s.sigma2_l2 = last.mean_sq_l2 / last.t;
  s.lo_l2 = s.sigma2_l2 - z * last.stderr_l2 / last.t;
  s.hi_l2 = s.sigma2_l2 + z * last.stderr_l2 / last.t;
  const std::size_t half = table.rows.size() / 2;
  std::vector<double> ts, ms;
  for (std::size_t i = half; i < table.rows.size(); ++i) {
    ts.push_back(table.rows[i].t);
    ms.push_back(table.rows[i].mean_sq_graph);
  }
  s.slope_diagnostic = ts.size() >= 2 ? stats::linear_fit(ts, ms).slope
                                      : std::numeric_limits<double>::quiet_NaN();
  return s;
}

std::vector<SurvivalRow> tail_survival(std::span<const std::int64_t> distances,
                                       std::span<const std::int64_t> grid) {
  if (distances.size() < 1000) throw std::invalid_argument("tail_survival: need >= 1000 samples");
  std::vector<SurvivalRow> rows;
  const auto n = static_cast<std::int64_t>(distances.size());
  for (std::int64_t L : grid) {
    std::int64_t count = 0;
    for (std::int64_t d : distances) count += d >= L ? 1 : 0;
    rows.push_back({L, count, n, stats::wilson(count, n)});
  }
  return rows;
}

stats::FitResult tail_fit(std::span<const SurvivalRow> rows, std::int64_t lo, std::int64_t hi) {
  std::vector<double> x, y;
  for (const SurvivalRow& row : rows) {
    if (row.L < lo || row.L > hi || row.count == 0) continue;
    x.push_back(static_cast<double>(row.L) * static_cast<double>(row.L));
    y.push_back(std::log(row.survival.phat));
  }
  return stats::linear_fit(x, y);
}

std::vector<MarkovTypeRow> markov_type_check(const MsdConfig& base, std::span<const int> ks,
                                             double s) {
  if (!(s > 0.0)) throw std::invalid_argument("markov_type_check: s must be > 0");
  std::vector<int> sorted_ks{1};
  for (int k : ks) {
    if (k < 1) throw std::invalid_argument("markov_type_check: k must be >= 1");
    sorted_ks.push_back(k);
  }
  std::sort(sorted_ks.begin(), sorted_ks.end());
  sorted_ks.erase(std::unique(sorted_ks.begin(), sorted_ks.end()), sorted_ks.end());
  MsdConfig cfg = base;
  cfg.checkpoints.clear();
  for (int k : sorted_ks) cfg.checkpoints.push_back(k * s);
  const ReplicaSamples samples = run_walk_replicas(cfg);
  const auto n = static_cast<double>(samples.replicas);

  auto column = [&](std::size_t c) {
    std::vector<double> v(static_cast<std::size_t>(samples.replicas));
    for (std::int64_t r = 0; r < samples.replicas; ++r) {
      const double d = static_cast<double>(samples.dist[samples.at(r, c)]);
      v[static_cast<std::size_t>(r)] = d * d;
    }
    return v;
  };
  const std::vector<double> base_col = column(0);
  const double mb = std::accumulate(base_col.begin(), base_col.end(), 0.0) / n;

  std::vector<MarkovTypeRow> rows;
  for (int k : ks) {
    const auto c = static_cast<std::size_t>(
        std::find(sorted_ks.begin(), sorted_ks.end(), k) - sorted_ks.begin());
    const std::vector<double> col = column(c);
    const double ma = std::accumulate(col.begin(), col.end(), 0.0) / n;
    double vaa = 0.0, vbb = 0.0, vab = 0.0;
    for (std::size_t r = 0; r < col.size(); ++r) {
      vaa += (col[r] - ma) * (col[r] - ma);
      vbb += (base_col[r] - mb) * (base_col[r] - mb);
      vab += (col[r] - ma) * (base_col[r] - mb);
    }
    vaa /= (n - 1) * n;
    vbb /= (n - 1) * n;
    vab /= (n - 1) * n;
    MarkovTypeRow row;
    row.k = k;
    if (mb == 0.0) {
      row.ratio = row.lo = row.hi = std::numeric_limits<double>::quiet_NaN();
    } else {
      row.ratio = ma / (k * mb);
      const double var = (vaa / (mb * mb) + ma * ma * vbb / std::pow(mb, 4) -
                          2.0 * ma * vab / std::pow(mb, 3)) / (static_cast<double>(k) * k);
      const double se = std::sqrt(std::max(var, 0.0));
      row.lo = row.ratio - 1.959963984540054 * se;
      row.hi = row.ratio + 1.959963984540054 * se;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace dynperc
