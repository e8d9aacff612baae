#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynperc/dyn_env.hpp"
#include "dynperc/lattice.hpp"
#include "dynperc/random.hpp"
#include "dynperc/stats.hpp"

namespace dynperc {

struct WalkSample {
  double t;
  Point position;
  std::uint64_t attempts;
};

/// Rate-1 walk on an environment exposing `bool query(const Unit&, double)`.
/// At each attempt a uniformly chosen incident unit (the bond, or the
/// destination site on the triangular lattice) is queried at that instant
/// and the walker moves iff it is open. Positions are recorded at the
/// checkpoints without extra environment queries.
template <class Env>
std::vector<WalkSample> simulate_walk(const Lattice& lattice, Env& env, double t_max,
                                      std::span<const double> checkpoints, Stream& stream) {
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    if (checkpoints[i] > t_max || (i > 0 && checkpoints[i] < checkpoints[i - 1])) {
      throw std::invalid_argument("simulate_walk: checkpoints must be sorted and <= t_max");
    }
  }
  std::vector<WalkSample> out;
  out.reserve(checkpoints.size());
  Point pos = lattice.origin();
  std::uint64_t attempts = 0;
  double t = 0.0;
  std::size_t cp = 0;
  const auto degree = static_cast<std::uint64_t>(lattice.degree());
  while (true) {
    const double next = t + stream.exponential(1.0);
    while (cp < checkpoints.size() && checkpoints[cp] < next) {
      out.push_back({checkpoints[cp], pos, attempts});
      ++cp;
    }
    if (next > t_max) break;
    t = next;
    ++attempts;
    const Neighbor nb = lattice.neighbor(pos, static_cast<int>(stream.uniform_int(degree)));
    if (env.query(nb.unit, t)) pos = nb.vertex;
  }
  return out;
}

struct MsdConfig {
  EnvParams env;
  std::vector<double> checkpoints;  // sorted; the last one is t_max
  std::int64_t replicas = 100;
  std::uint64_t seed = 1;
  int threads = 0;

  double t_max() const { return checkpoints.empty() ? 0.0 : checkpoints.back(); }
  void validate() const;
};

/// Per-replica raw observations, replica-major: value(r, c).
struct ReplicaSamples {
  std::size_t checkpoints = 0;
  std::int64_t replicas = 0;
  std::vector<std::int64_t> dist;
  std::vector<double> sq_l2;
  std::vector<std::uint64_t> attempts;

  std::size_t at(std::int64_t r, std::size_t c) const {
    return static_cast<std::size_t>(r) * checkpoints + c;
  }
};

/// Independent replicas, each with a fresh environment keyed by (seed,
/// replica). Infinite lattices use a LazyEnvironment; tori use an explicit
/// TorusTrajectory over [0, t_max].
ReplicaSamples run_walk_replicas(const MsdConfig& cfg);

struct MsdRow {
  double t = 0.0;
  std::int64_t replicas = 0;
  double mean_sq_graph = 0.0;
  double stderr_graph = 0.0;
  double mean_sq_l2 = 0.0;
  double stderr_l2 = 0.0;
};

struct MsdTable {
  MsdConfig config;
  std::vector<MsdRow> rows;

  static constexpr const char* kCsvHeader =
      "t,mean_sq_graph_dist,stderr,mean_sq_l2,stderr_l2,replicas,p,mu,lattice,d,seed";
  std::string to_csv() const;
};

MsdTable aggregate_msd(const MsdConfig& cfg, const ReplicaSamples& samples);
MsdTable msd_experiment(const MsdConfig& cfg);

struct SigmaEstimate {
  double sigma2 = 0.0;  // graph distance
  double lo = 0.0;
  double hi = 0.0;
  double sigma2_l2 = 0.0;  // Euclidean variant
  double lo_l2 = 0.0;
  double hi_l2 = 0.0;
  double t = 0.0;
  /// Slope of mean vs t over the top half of the checkpoints (NaN if fewer
  /// than two points there).
  double slope_diagnostic = 0.0;
};

/// MSD(t_max)/t_max with its delta-method 95% interval. Needs >= 100
/// replicas at the last checkpoint.
SigmaEstimate sigma_hat(const MsdTable& table);

struct SurvivalRow {
  std::int64_t L = 0;
  std::int64_t count = 0;
  std::int64_t n = 0;
  stats::Proportion survival;
};

/// Empirical P(dist >= L) with Wilson intervals. Needs >= 1000 samples.
std::vector<SurvivalRow> tail_survival(std::span<const std::int64_t> distances,
                                       std::span<const std::int64_t> grid);

/// Linear fit of log-survival against L^2 over rows with L in [lo, hi] and
/// nonzero survival.
stats::FitResult tail_fit(std::span<const SurvivalRow> rows, std::int64_t lo, std::int64_t hi);

struct MarkovTypeRow {
  int k = 1;
  double ratio = 1.0;  // MSD(k s) / (k MSD(s))
  double lo = 1.0;
  double hi = 1.0;
};

/// Ratios MSD(k s)/(k MSD(s)) from one set of replicas observed at every
/// k s, with delta-method 95% intervals that account for the shared replicas.
std::vector<MarkovTypeRow> markov_type_check(const MsdConfig& base, std::span<const int> ks,
                                             double s);

std::string lattice_name(const Lattice& lattice);

}  // namespace dynperc
