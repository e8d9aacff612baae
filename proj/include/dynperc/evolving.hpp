#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dynperc/dyn_env.hpp"
#include "dynperc/lattice.hpp"
#include "dynperc/random.hpp"
#include "dynperc/stats.hpp"

namespace dynperc {

/// Sorted torus vertex indices.
using VertexSet = std::vector<std::uint32_t>;

/// Largest torus side accepted by the dense kernel routines.
inline constexpr int kMaxDenseSide = 8;

/// Number of uniformization terms K for an interval of length delta: the
/// first K with e^{-delta} delta^{K+1}/(K+1)! / (1 - delta/(K+2)) < 1e-14.
int uniformization_terms(double delta);

/// Jump matrix of the rate-1 walk under a fixed configuration: 1/(2d) per
/// open bond, the closed fraction on the diagonal. Hypercubic tori only.
Eigen::MatrixXd jump_matrix(const Lattice& torus, const Configuration& config);

/// exp(delta (J - I)) by truncated uniformization.
Eigen::MatrixXd interval_exponential(const Eigen::MatrixXd& jump, double delta);

struct QuenchedKernel {
  Eigen::MatrixXd P;
  std::int64_t step = 0;       // kernel of [step, step + 1]
  std::size_t intervals = 0;   // constant-environment pieces used
};

/// One-step quenched kernel of the walk over [n, n+1]: the ordered product
/// of interval exponentials, split at every state-changing refresh and at
/// any extra times given. Requires [n, n+1] inside the trajectory window and
/// side <= kMaxDenseSide.
QuenchedKernel quenched_kernel(const TorusTrajectory& traj, std::int64_t n,
                               std::span<const double> extra_splits = {});

/// Level-set structure of Q(S, y) = sum_{x in S} P(x, y) in u.
class ThresholdProfile {
 public:
  /// u in (level_below, level] selects B = the first `size` vertices in
  /// descending-Q order. Segments run from high u to low u; the top one may
  /// have size 0 (u above every Q).
  struct Segment {
    double gap;
    double level;
    std::size_t size;
  };

  ThresholdProfile() = default;
  /// Q(S, .) from a dense kernel. Throws on empty S.
  static ThresholdProfile from_kernel(const Eigen::MatrixXd& P, const VertexSet& S);
  /// From explicit (vertex, Q) pairs; zero entries may be omitted.
  static ThresholdProfile from_mass(std::vector<std::pair<std::uint32_t, double>> mass,
                                    std::size_t set_size);

  std::size_t set_size() const { return set_size_; }
  const std::vector<Segment>& segments() const { return segments_; }
  /// Vertices with positive Q, by descending Q, and their values clipped to 1.
  const std::vector<std::uint32_t>& order() const { return order_; }
  const std::vector<double>& values() const { return values_; }
  /// Sum of unclipped Q over all vertices.
  double total_mass() const { return total_mass_; }

  /// B(u) = {y : Q(S,y) >= u} for u in (0, 1].
  VertexSet level_set(double u) const;
  /// The first k vertices in descending-Q order, sorted by index.
  VertexSet prefix(std::size_t k) const;
  /// Breakpoint integral of |B(u)| over (0, 1].
  double plain_integral() const;
  /// g_i |B_i| / |S| per segment.
  std::vector<double> doob_weights() const;

 private:
  void build_segments();

  std::size_t set_size_ = 0;
  std::vector<std::uint32_t> order_;
  std::vector<double> values_;
  std::vector<Segment> segments_;
  double total_mass_ = 0.0;
};

/// Plain evolving-set step: B(u). May be empty.
VertexSet evolve_plain(const ThresholdProfile& profile, double u);
/// Doob-transformed step: segment i with probability g_i |B_i| / |S|.
VertexSet evolve_doob(const ThresholdProfile& profile, Stream& stream);

struct EvolvingState {
  std::uint32_t x = 0;
  VertexSet set{0};
};

/// Diaconis-Fill step: y ~ P(x, .), u uniform on (0, Q(A, y)], B = B(u).
/// Throws ContractViolation if x is not in A, or y ends outside B.
EvolvingState df_step(const Eigen::MatrixXd& P, const EvolvingState& state, Stream& stream);

struct PhiResult {
  double phi = 0.0;
  double bound = 0.0;  // (1/(2 d e |S|)) * integral of the open boundary over [n, n+1]
};

/// Escape mass of S and its boundary lower bound. Throws for S empty or S = V.
PhiResult phi_S(const TorusTrajectory& traj, const QuenchedKernel& kernel, const VertexSet& S);

struct DriftResult {
  double lhs = 0.0;        // sum_i g_i sqrt|B_i| / |S|: the Doob expectation of |S'|^{-1/2}
  double lhs_plain = 0.0;  // sum_i g_i |B_i|^{-1/2}, with |empty|^{-1/2} = 0
  double rhs = 0.0;        // (1 - phi^2 / 6) |S|^{-1/2}
  PhiResult phi;
  bool pass = false;       // lhs <= rhs + 1e-12
};

DriftResult drift_check(const TorusTrajectory& traj, const QuenchedKernel& kernel,
                        const VertexSet& S);

/// Bonds with exactly one endpoint in S, as torus unit indices.
std::vector<std::int64_t> edge_boundary(const Lattice& torus, const VertexSet& S);

// --- random instances for the exact inequality suite ---

struct EvolvingCheckConfig {
  std::vector<int> sides{4, 6};
  std::vector<double> mus{0.05, 0.2};
  std::vector<double> ps{0.3, 0.5, 0.8};
  int dim = 2;
  std::int64_t instances = 200;
  std::uint64_t seed = 1;
  int threads = 0;
};

struct EvolvingCheckRow {
  std::int64_t instance = 0;
  int side = 0;
  double mu = 0.0;
  double p = 0.0;
  std::size_t set_size = 0;
  double phi = 0.0;
  double phi_bound = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double martingale_gap = 0.0;  // |breakpoint integral of |B(u)| - |S||
  bool drift_pass = false;
  bool phi_pass = false;
  bool pass() const { return drift_pass && phi_pass; }
};

struct EvolvingCheckResult {
  std::vector<EvolvingCheckRow> rows;
  static constexpr const char* kCsvHeader = "instance,side,mu,p,phi,phi_bound,lhs,rhs,pass";
  std::string to_csv() const;
};

/// Instance i cycles through the (side, mu, p) grid; its trajectory covers
/// [0, 1] and S is a uniformly random proper subset (even i) or a connected
/// set grown from a random vertex (odd i).
EvolvingCheckResult evolving_check(const EvolvingCheckConfig& cfg);

// --- Diaconis-Fill uniformity on a fixed trajectory ---

struct DfCheckConfig {
  int side = 4;
  int dim = 2;
  double p = 0.5;
  double mu = 0.2;
  int steps = 5;
  std::int64_t runs = 100000;
  std::uint64_t seed = 1;
  int threads = 0;
};

struct DfCheckRow {
  std::string f;
  double estimator_walk = 0.0;
  double estimator_set = 0.0;
  double z = 0.0;
};

struct DfCheckResult {
  std::vector<DfCheckRow> rows;
  std::int64_t steps_taken = 0;
  std::int64_t membership_violations = 0;
  static constexpr const char* kCsvHeader = "f,estimator_walk,estimator_set,z";
  std::string to_csv() const;
};

/// Runs the coupled chain from (0, {0}) for `steps` steps on one trajectory,
/// comparing E f(X_n) with E[mean of f over S_n] through the paired z-score.
DfCheckResult df_check(const DfCheckConfig& cfg);

// --- large tori: sparse propagation ---

/// Row-vector propagation through the quenched kernel of a trajectory: the
/// same ordered product of interval exponentials as quenched_kernel, applied
/// to a vector and restricted to vertices within reach of its support.
/// Entries below `drop` are discarded after every interval. Steps must be
/// requested in nondecreasing order for the cursor to stay incremental.
class MassPropagator {
 public:
  explicit MassPropagator(const TorusTrajectory& traj, double drop = 1e-14);

  /// (y, Q(A, y)) for every y carrying mass after one step from 1_A at n.
  std::vector<std::pair<std::uint32_t, double>> propagate(const VertexSet& A, std::int64_t n);

  /// Configuration at integer time n (right-continuous).
  const Configuration& config_at_step(std::int64_t n);

 private:
  void reset();
  void seek(double t);
  void set_unit(std::uint32_t unit, bool open);
  void apply_interval(double delta);

  const TorusTrajectory* traj_;
  double drop_;
  int degree_;
  int dim_;
  std::vector<std::uint32_t> nbr_;   // vertex * degree + k -> neighbor
  std::vector<std::uint32_t> bond_;  // vertex * degree + k -> unit
  std::vector<double> weight_;       // J(vertex, neighbor k)
  std::vector<double> diag_;         // J(vertex, vertex)
  Configuration config_;
  std::size_t next_event_ = 0;
  double time_ = 0.0;
  std::vector<double> mass_, term_, next_;
  std::vector<std::uint8_t> is_active_;
  std::vector<std::uint32_t> active_;
};

/// y ~ P_n(x, .) by simulating the rate-1 walk on the trajectory over [n, n+1].
std::uint32_t sample_walk_step(const TorusTrajectory& traj, std::uint32_t x, std::int64_t n,
                               Stream& stream);

/// Diaconis-Fill step on a large torus.
EvolvingState df_step_sparse(const TorusTrajectory& traj, MassPropagator& prop,
                             const EvolvingState& state, std::int64_t n, Stream& stream);

struct ScanResult {
  std::vector<std::uint8_t> good;       // per m in [0, T-1]
  std::vector<std::uint8_t> excellent;
  double good_fraction = 0.0;           // over m in [1, T-1]
  double excellent_fraction = 0.0;
};

/// Good and excellent flags along a run of sets S_0..S_{T-1}, with the
/// largest open cluster at time m standing in for the infinite cluster.
ScanResult good_excellent_scan(const TorusTrajectory& traj, std::span<const VertexSet> sets,
                               double theta_hat);

/// t(n) = ceil(8 n / theta).
std::int64_t t_of_n(std::int64_t n, double theta);

struct SupercriticalConfig {
  Lattice torus = Lattice::hypercubic(2).torus(64);
  double p = 0.8;
  double mu = 0.1;
  int steps = 200;
  std::int64_t runs = 500;
  std::uint64_t seed = 1;
  int threads = 0;
  double theta_hat = 0.0;  // 0: estimate with theta_estimate first
  std::int64_t theta_reps = 2000;
};

struct SupercriticalRun {
  std::vector<std::size_t> sizes;  // |S_m|, m = 0..steps
  ScanResult scan;
};

struct SupercriticalResult {
  double theta_hat = 0.0;
  std::vector<SupercriticalRun> runs;
  /// Fraction of runs whose good-fraction exceeds theta_hat / 4, and its
  /// binomial standard error.
  double frac_good_runs = 0.0;
  double frac_good_runs_se = 0.0;
  double mean_good_fraction = 0.0;
  double mean_excellent_fraction = 0.0;
};

/// Diaconis-Fill runs from (0, {0}) with good/excellent scans.
SupercriticalResult supercritical_runs(const SupercriticalConfig& cfg);

struct GrowthConfig {
  Lattice torus = Lattice::hypercubic(2).torus(64);
  double p = 1.0;
  double mu = 0.1;
  int steps = 100;
  std::int64_t runs = 200;
  std::uint64_t seed = 1;
  int threads = 0;
  double fit_from = 10.0;  // first m used in the exponent fit
};

struct GrowthRow {
  std::int64_t m = 0;
  double size_mean = 0.0;
  double size_q10 = 0.0;
  double size_q90 = 0.0;
};

struct GrowthResult {
  std::vector<GrowthRow> rows;
  stats::FitResult fit;  // log size_mean vs log m, m >= fit_from
  /// P(|S_n| > c1 n^{d/2}) > c2 at n = steps: c1 is half the mean of
  /// |S_n| / n^{d/2}, c2 the empirical probability.
  double c1 = 0.0;
  double c2 = 0.0;
  static constexpr const char* kCsvHeader = "m,size_mean,size_q10,size_q90";
  std::string to_csv() const;
};

/// Doob-transformed evolving set from {0}.
GrowthResult growth_experiment(const GrowthConfig& cfg);

}  // namespace dynperc
