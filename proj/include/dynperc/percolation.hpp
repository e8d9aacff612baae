#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dynperc/dyn_env.hpp"
#include "dynperc/lattice.hpp"
#include "dynperc/random.hpp"
#include "dynperc/stats.hpp"

namespace dynperc {

/// Critical probability: 1/2 for the triangular site lattice and Z^2 bonds;
/// numerical estimates for Z^3..Z^6 bonds. Throws Unsupported otherwise.
double critical_probability(const Lattice& lattice);

/// Depth-first exploration of the origin's open cluster inside B_r, with
/// unit states supplied on demand. Only units inside B_r are ever asked for.
/// Site convention: the origin itself must be open.
class BoxExplorer {
 public:
  BoxExplorer(const Lattice& lattice, std::int64_t r);

  std::int64_t radius() const { return r_; }

  /// `open(const Unit&)` is called at most once per unit per exploration.
  template <class OpenFn>
  bool reaches_boundary(OpenFn&& open);

  /// Units whose state was requested during the last exploration.
  std::int64_t units_queried() const { return queried_; }
  /// Vertices reached during the last exploration.
  std::int64_t vertices_reached() const { return reached_; }

 private:
  Point point_of(std::uint32_t v) const;
  Unit unit_of(std::uint32_t local) const;
  void next_epoch();

  Lattice lattice_;
  std::int64_t r_;
  std::int64_t width_;
  int dim_;
  int degree_;
  std::vector<std::int64_t> stride_;
  std::vector<std::int64_t> step_offset_;   // per neighbor k, vertex index offset
  std::vector<std::uint8_t> boundary_;      // per vertex
  std::vector<std::uint32_t> visit_stamp_;  // per vertex
  std::vector<std::uint32_t> unit_stamp_;   // per unit
  std::vector<std::uint8_t> unit_open_;
  std::vector<std::uint32_t> stack_;
  std::uint32_t epoch_ = 0;
  std::uint32_t origin_;
  std::int64_t queried_ = 0;
  std::int64_t reached_ = 0;
};

/// Unit state U_e < p with U_e = unit_uniform(trial_key, unit_hash(e)), so
/// trials sharing a key are monotonically coupled in p and r.
bool one_arm_trial(const Lattice& lattice, std::int64_t r, double p, std::uint64_t trial_key);

struct OneArmConfig {
  Lattice lattice = Lattice::triangular();
  std::vector<std::int64_t> radii;
  double p = 0.5;
  /// When set, p = p_c + r^{-1/nu_tilde} per radius instead of the fixed p.
  bool critical_window = false;
  double nu_tilde = 4.0 / 3.0;
  std::int64_t reps = 1000;
  std::uint64_t seed = 1;
  int threads = 0;
  double fit_cutoff = 8.0;

  double p_at(std::int64_t r) const;
};

struct OneArmRow {
  std::int64_t r = 0;
  double p = 0.0;
  std::int64_t trials = 0;
  std::int64_t successes = 0;
  stats::Proportion ci;
};

struct OneArmResult {
  std::vector<OneArmRow> rows;
  stats::FitResult fit;  // log phat vs log r, r >= cutoff
  bool fitted = false;

  static constexpr const char* kCsvHeader = "r,p,trials,successes,phat,ci_lo,ci_hi";
  std::string to_csv() const;
  /// `{"slope":..,"stderr":..,"r2":..,"cutoff":..}`
  std::string fit_json() const;
};

/// Trial i at every radius uses the key (seed, i), so radii are coupled.
OneArmResult one_arm_sweep(const OneArmConfig& cfg);

/// Cluster labelling of a torus configuration. A cluster counts as open if
/// it contains an open unit (an open bond, or open sites); the largest open
/// cluster breaks ties by smallest vertex index. Returns per-vertex
/// membership in that cluster (all zero when there is no open cluster).
std::vector<std::uint8_t> largest_open_cluster(const Lattice& torus, const Configuration& config);

struct ThetaRow {
  int side = 0;
  double p = 0.0;
  std::int64_t trials = 0;
  std::int64_t successes = 0;
  stats::Proportion ci;
};

/// Probability that the origin belongs to the largest open cluster of a
/// torus, over independent configurations keyed by (seed, trial).
ThetaRow theta_estimate(const Lattice& torus, double p, std::int64_t reps, std::uint64_t seed,
                        int threads = 0);

/// Torus configuration with unit e open iff unit_uniform(trial_key, e) < p.
Configuration coupled_configuration(const Lattice& torus, double p, std::uint64_t trial_key);

enum class HMode { dynamical, static_equivalent };

/// {0 <-> boundary of B_r} in the ever-open subgraph H over [0, t] for
/// dynamics at p_c. Dynamical mode realizes every unit's refresh history
/// explicitly; static mode runs a one-arm trial at ever_open_params.
bool h_cluster_trial(const Lattice& lattice, double p_c, double mu, double t, std::int64_t r,
                     HMode mode, std::uint64_t trial_key);

struct HClusterResult {
  std::int64_t trials = 0;
  std::int64_t dynamical_successes = 0;
  std::int64_t static_successes = 0;
  stats::TestResult test;
};

HClusterResult h_cluster_experiment(const Lattice& lattice, double p_c, double mu, double t,
                                    std::int64_t r, std::int64_t reps, std::uint64_t seed,
                                    int threads = 0);

// ---------------------------------------------------------------------------

template <class OpenFn>
bool BoxExplorer::reaches_boundary(OpenFn&& open) {
  next_epoch();
  queried_ = 0;
  reached_ = 0;
  auto unit_open = [&](std::uint32_t local) {
    if (unit_stamp_[local] != epoch_) {
      unit_stamp_[local] = epoch_;
      unit_open_[local] = open(unit_of(local)) ? 1 : 0;
      ++queried_;
    }
    return unit_open_[local] != 0;
  };
  const bool sites = lattice_.is_triangular();
  if (sites && !unit_open(origin_)) return false;
  stack_.clear();
  stack_.push_back(origin_);
  visit_stamp_[origin_] = epoch_;
  reached_ = 1;
  while (!stack_.empty()) {
    const std::uint32_t v = stack_.back();
    stack_.pop_back();
    // v is never on the boundary here, so all its neighbors lie in the box.
    for (int k = 0; k < degree_; ++k) {
      const auto w = static_cast<std::uint32_t>(v + step_offset_[static_cast<std::size_t>(k)]);
      if (visit_stamp_[w] == epoch_) continue;
      std::uint32_t unit;
      if (sites) {
        unit = w;
      } else {
        const int axis = k / 2;
        unit = static_cast<std::uint32_t>((k % 2 == 0 ? w : v) * dim_ + axis);
      }
      if (!unit_open(unit)) continue;
      visit_stamp_[w] = epoch_;
      ++reached_;
      if (boundary_[w]) return true;
      stack_.push_back(w);
    }
  }
  return false;
}

}  // namespace dynperc
