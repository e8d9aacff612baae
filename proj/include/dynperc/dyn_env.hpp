#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "dynperc/lattice.hpp"
#include "dynperc/random.hpp"

namespace dynperc {

/// Default upper bound on the refresh rate (1/e); lifted by allow_large_mu.
inline constexpr double kMaxDefaultMu = 0.36787944117144233;

struct EnvParams {
  Lattice lattice = Lattice::hypercubic(2);
  double p = 0.5;
  double mu = 0.1;
  bool allow_large_mu = false;

  /// Throws std::invalid_argument unless 0 <= p <= 1 and 0 < mu (<= 1/e
  /// unless allow_large_mu).
  void validate() const;
};

/// Dynamical percolation on an infinite lattice, realized only at queried
/// (unit, time) pairs. Every unit owns a counter-based stream, so the state
/// of a unit does not depend on the order in which other units are queried.
class LazyEnvironment {
 public:
  LazyEnvironment(EnvParams params, const StreamKey& replica_key);

  const EnvParams& params() const { return params_; }

  /// State of u at time t. Queries of a given unit must have nondecreasing
  /// times; otherwise ContractViolation is thrown.
  bool query(const Unit& u, double t);

  std::size_t record_count() const { return records_.size(); }

  /// Drops records whose unit has certainly refreshed up to 2^-64
  /// (mu * (t_now - last_time) >= 64 ln 2). Returns the number dropped.
  std::size_t evict_stale(double t_now);

  /// Probability that at least one refresh happens within dt.
  static double resample_probability(double mu, double dt);

 private:
  struct Record {
    double last_time;
    std::uint64_t key;
    std::uint64_t draws;
    bool open;
  };

  EnvParams params_;
  std::uint64_t base_key_;
  std::unordered_map<Unit, Record, UnitHash> records_;
};

using Configuration = std::vector<std::uint8_t>;

struct RefreshEvent {
  double time;
  std::uint32_t unit;  // torus unit index
  bool open;
};

/// All refresh events of a finite torus over [t0, t1].
class TorusTrajectory {
 public:
  TorusTrajectory(EnvParams params, double t0, double t1, Configuration initial,
                  std::vector<RefreshEvent> events);

  const EnvParams& params() const { return params_; }
  const Lattice& lattice() const { return params_.lattice; }
  double t0() const { return t0_; }
  double t1() const { return t1_; }
  const Configuration& initial() const { return initial_; }
  const std::vector<RefreshEvent>& events() const { return events_; }

  /// Right-continuous state of one unit.
  bool state_at(std::int64_t unit, double t) const;
  Configuration config_at(double t) const;

  /// Index of the first event with time > t.
  std::size_t first_event_after(double t) const;

  /// Total time in [a, b] during which the unit is open.
  double open_time(std::int64_t unit, double a, double b) const;

  /// `time,unit,state` rows for every event.
  void write_events_csv(std::ostream& out) const;
  /// Initial configuration as a string of '0'/'1' in unit order.
  std::string initial_bitset() const;

 private:
  void check_time(double t) const;

  EnvParams params_;
  double t0_;
  double t1_;
  Configuration initial_;
  std::vector<RefreshEvent> events_;
  std::vector<std::vector<std::uint32_t>> per_unit_;
};

/// Stationary trajectory: initial configuration ~ product Bernoulli(p), then
/// a rate mu * #units Poisson stream of refreshes with a uniform unit and a
/// Bernoulli(p) new state.
TorusTrajectory torus_trajectory(const EnvParams& params, double t0, double t1,
                                 const StreamKey& replica_key);

/// Environment view of a trajectory with the same query surface as
/// LazyEnvironment.
class TrajectoryEnvironment {
 public:
  explicit TrajectoryEnvironment(const TorusTrajectory& traj) : traj_(&traj) {}
  const EnvParams& params() const { return traj_->params(); }
  bool query(const Unit& u, double t) const {
    return traj_->state_at(traj_->lattice().unit_index(u), t);
  }

 private:
  const TorusTrajectory* traj_;
};

/// Density of the ever-open subgraph over [0, t] when the dynamics run at p_c:
/// p_c + (1 - p_c)(1 - exp(-mu t p_c)).
double ever_open_params(double p_c, double mu, double t);

/// Units open at least once during [t0, t], by exact scan of the trajectory.
Configuration ever_open_units(const TorusTrajectory& traj, double t);

/// Ever-open units of B_r on an infinite lattice, sampled directly from the
/// product law with density ever_open_params(p, mu, t).
std::vector<Unit> ever_open_units_lazy(const EnvParams& params, double t, std::int64_t r,
                                       const StreamKey& key);

}  // namespace dynperc
