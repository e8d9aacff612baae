#include "dynperc/evolving.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dynperc/errors.hpp"
#include "dynperc/parallel.hpp"
#include "dynperc/percolation.hpp"

namespace dynperc {

namespace {

constexpr double kE = 2.718281828459045;
constexpr double kUnitSnap = 1e-12;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

void require_hypercubic_torus(const Lattice& lattice) {
  if (!lattice.is_torus() || lattice.is_triangular()) {
    throw Unsupported("evolving-set kernels need a hypercubic torus");
  }
}

void require_dense(const Lattice& lattice) {
  require_hypercubic_torus(lattice);
  if (lattice.side() > kMaxDenseSide) throw Unsupported("dense kernels need side <= 8");
}

void require_window(const TorusTrajectory& traj, std::int64_t n) {
  const auto a = static_cast<double>(n);
  if (a < traj.t0() || a + 1.0 > traj.t1()) {
    throw std::out_of_range("step [n, n+1] outside the trajectory window");
  }
}

bool contains(const VertexSet& s, std::uint32_t v) { return std::binary_search(s.begin(), s.end(), v); }

struct NeighborTable {
  int degree;
  std::vector<std::uint32_t> vertex;
  std::vector<std::uint32_t> unit;
};

NeighborTable neighbor_table(const Lattice& torus) {
  NeighborTable t{torus.degree(), {}, {}};
  const auto n = static_cast<std::size_t>(torus.vertex_count());
  t.vertex.resize(n * static_cast<std::size_t>(t.degree));
  t.unit.resize(t.vertex.size());
  for (std::size_t v = 0; v < n; ++v) {
    const Point pv = torus.vertex_at(static_cast<std::int64_t>(v));
    for (int k = 0; k < t.degree; ++k) {
      const Neighbor nb = torus.neighbor(pv, k);
      const std::size_t slot = v * static_cast<std::size_t>(t.degree) + static_cast<std::size_t>(k);
      t.vertex[slot] = static_cast<std::uint32_t>(torus.vertex_index(nb.vertex));
      t.unit[slot] = static_cast<std::uint32_t>(torus.unit_index(nb.unit));
    }
  }
  return t;
}

VertexSet random_subset(std::size_t n, Stream& s) {
  const std::size_t k = 1 + static_cast<std::size_t>(s.uniform_int(n - 1));
  std::vector<std::uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(s.uniform_int(n - i));
    std::swap(all[i], all[j]);
  }
  VertexSet out(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.begin(), out.end());
  return out;
}

VertexSet random_connected(const NeighborTable& nt, std::size_t n, Stream& s) {
  const std::size_t k = 1 + static_cast<std::size_t>(s.uniform_int(n - 1));
  std::vector<std::uint8_t> in(n, 0);
  VertexSet out;
  std::vector<std::uint32_t> frontier;
  auto add = [&](std::uint32_t v) {
    in[v] = 1;
    out.push_back(v);
    for (int j = 0; j < nt.degree; ++j) {
      frontier.push_back(nt.vertex[v * static_cast<std::size_t>(nt.degree) + static_cast<std::size_t>(j)]);
    }
  };
  add(static_cast<std::uint32_t>(s.uniform_int(n)));
  while (out.size() < k) {
    const std::size_t j = static_cast<std::size_t>(s.uniform_int(frontier.size()));
    const std::uint32_t v = frontier[j];
    frontier[j] = frontier.back();
    frontier.pop_back();
    if (!in[v]) add(v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

int uniformization_terms(double delta) {
  if (!(delta >= 0.0) || !std::isfinite(delta)) {
    throw std::invalid_argument("uniformization: delta must be finite and >= 0");
  }
  if (delta == 0.0) return 0;
  // term = e^{-delta} delta^{K+1} / (K+1)!
  double term = std::exp(-delta) * delta;
  int K = 0;
  while (true) {
    const double ratio = delta / (K + 2);
    if (ratio < 1.0 && term / (1.0 - ratio) < 1e-14) return K;
    ++K;
    term *= delta / (K + 1);
  }
}

Eigen::MatrixXd jump_matrix(const Lattice& torus, const Configuration& config) {
  require_hypercubic_torus(torus);
  const auto n = torus.vertex_count();
  if (config.size() != static_cast<std::size_t>(torus.unit_count())) {
    throw std::invalid_argument("jump_matrix: configuration size mismatch");
  }
  const double w = 1.0 / torus.degree();
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (std::int64_t v = 0; v < n; ++v) {
    const Point pv = torus.vertex_at(v);
    for (int k = 0; k < torus.degree(); ++k) {
      const Neighbor nb = torus.neighbor(pv, k);
      if (config[static_cast<std::size_t>(torus.unit_index(nb.unit))]) {
        J(v, torus.vertex_index(nb.vertex)) += w;
      } else {
        J(v, v) += w;
      }
    }
  }
  return J;
}

Eigen::MatrixXd interval_exponential(const Eigen::MatrixXd& jump, double delta) {
  const auto n = jump.rows();
  // All bonds closed: J = I and the exponential is exactly the identity.
  if (jump.isIdentity(0.0)) return Eigen::MatrixXd::Identity(n, n);
  const int K = uniformization_terms(delta);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd term = sum;
  for (int k = 1; k <= K; ++k) {
    term = (term * jump) * (delta / k);
    sum += term;
  }
  return std::exp(-delta) * sum;
}

QuenchedKernel quenched_kernel(const TorusTrajectory& traj, std::int64_t n,
                               std::span<const double> extra_splits) {
  const Lattice& torus = traj.lattice();
  require_dense(torus);
  require_window(traj, n);
  const auto a = static_cast<double>(n);
  const double b = a + 1.0;
  std::vector<double> extra;
  for (double t : extra_splits) {
    if (t > a && t < b) extra.push_back(t);
  }
  std::sort(extra.begin(), extra.end());

  Configuration config = traj.config_at(a);
  Eigen::MatrixXd J = jump_matrix(torus, config);
  QuenchedKernel out;
  out.step = n;
  out.P = Eigen::MatrixXd::Identity(torus.vertex_count(), torus.vertex_count());
  double s = a;
  auto close_interval = [&](double t) {
    if (t > s) {
      out.P = out.P * interval_exponential(J, t - s);
      ++out.intervals;
      s = t;
    }
  };
  const auto& events = traj.events();
  std::size_t i = traj.first_event_after(a);
  std::size_t j = 0;
  while (true) {
    const bool have_event = i < events.size() && events[i].time <= b;
    const bool have_extra = j < extra.size();
    if (!have_event && !have_extra) break;
    if (have_extra && (!have_event || extra[j] < events[i].time)) {
      close_interval(extra[j++]);
      continue;
    }
    const RefreshEvent& e = events[i++];
    if ((config[e.unit] != 0) == e.open) continue;
    close_interval(e.time);
    config[e.unit] = e.open ? 1 : 0;
    J = jump_matrix(torus, config);
  }
  close_interval(b);
  return out;
}

// ---------------------------------------------------------------------------

ThresholdProfile ThresholdProfile::from_kernel(const Eigen::MatrixXd& P, const VertexSet& S) {
  if (S.empty()) throw std::invalid_argument("threshold profile: S must be nonempty");
  const auto n = static_cast<std::size_t>(P.rows());
  Eigen::VectorXd q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::uint32_t x : S) {
    if (x >= n) throw std::out_of_range("threshold profile: vertex out of range");
    q += P.row(x).transpose();
  }
  std::vector<std::pair<std::uint32_t, double>> mass;
  for (std::size_t y = 0; y < n; ++y) mass.emplace_back(static_cast<std::uint32_t>(y), q(static_cast<Eigen::Index>(y)));
  return from_mass(std::move(mass), S.size());
}

ThresholdProfile ThresholdProfile::from_mass(std::vector<std::pair<std::uint32_t, double>> mass,
                                             std::size_t set_size) {
  if (set_size == 0) throw std::invalid_argument("threshold profile: S must be nonempty");
  ThresholdProfile prof;
  prof.set_size_ = set_size;
  for (const auto& [y, q] : mass) {
    if (q < 0.0 || !std::isfinite(q)) throw std::invalid_argument("threshold profile: bad mass");
    prof.total_mass_ += q;
  }
  std::erase_if(mass, [](const auto& e) { return e.second <= 0.0; });
  std::sort(mass.begin(), mass.end(), [](const auto& l, const auto& r) {
    return l.second != r.second ? l.second > r.second : l.first < r.first;
  });
  prof.order_.reserve(mass.size());
  prof.values_.reserve(mass.size());
  for (const auto& [y, q] : mass) {
    prof.order_.push_back(y);
    // Column sums of a doubly stochastic kernel are 1 up to rounding.
    prof.values_.push_back(q >= 1.0 - kUnitSnap ? 1.0 : q);
  }
  prof.build_segments();
  return prof;
}

void ThresholdProfile::build_segments() {
  segments_.clear();
  if (values_.empty()) {
    segments_.push_back({1.0, 1.0, 0});
    return;
  }
  if (values_.front() < 1.0) segments_.push_back({1.0 - values_.front(), 1.0, 0});
  std::size_t i = 0;
  while (i < values_.size()) {
    const double level = values_[i];
    while (i < values_.size() && values_[i] == level) ++i;
    const double below = i < values_.size() ? values_[i] : 0.0;
    segments_.push_back({level - below, level, i});
  }
}

VertexSet ThresholdProfile::level_set(double u) const {
  if (!(u > 0.0 && u <= 1.0)) throw std::invalid_argument("level_set: u must lie in (0, 1]");
  const auto it = std::partition_point(values_.begin(), values_.end(),
                                       [&](double v) { return v >= u; });
  return prefix(static_cast<std::size_t>(it - values_.begin()));
}

VertexSet ThresholdProfile::prefix(std::size_t k) const {
  VertexSet out(order_.begin(), order_.begin() + static_cast<std::ptrdiff_t>(std::min(k, order_.size())));
  std::sort(out.begin(), out.end());
  return out;
}

double ThresholdProfile::plain_integral() const {
  double s = 0.0;
  for (const Segment& seg : segments_) s += seg.gap * static_cast<double>(seg.size);
  return s;
}

std::vector<double> ThresholdProfile::doob_weights() const {
  std::vector<double> w;
  w.reserve(segments_.size());
  for (const Segment& seg : segments_) {
    w.push_back(seg.gap * static_cast<double>(seg.size) / static_cast<double>(set_size_));
  }
  return w;
}

VertexSet evolve_plain(const ThresholdProfile& profile, double u) { return profile.level_set(u); }

VertexSet evolve_doob(const ThresholdProfile& profile, Stream& stream) {
  const std::vector<double> w = profile.doob_weights();
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) throw std::logic_error("evolve_doob: no mass on nonempty sets");
  const double target = stream.uniform01() * total;
  double acc = 0.0;
  std::size_t pick = w.size();
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0.0) continue;
    pick = i;
    acc += w[i];
    if (target < acc) break;
  }
  return profile.prefix(profile.segments()[pick].size);
}

EvolvingState df_step(const Eigen::MatrixXd& P, const EvolvingState& state, Stream& stream) {
  if (!contains(state.set, state.x)) throw ContractViolation("df_step: walker outside its set");
  const auto n = P.rows();
  // y ~ P(x, .)
  const double target = stream.uniform01();
  double acc = 0.0;
  Eigen::Index y = -1;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double pj = P(state.x, j);
    if (pj <= 0.0) continue;
    y = j;
    acc += pj;
    if (target < acc) break;
  }
  if (y < 0) throw std::logic_error("df_step: empty kernel row");
  Eigen::VectorXd q = Eigen::VectorXd::Zero(n);
  for (std::uint32_t a : state.set) q += P.row(a).transpose();
  const double threshold = q(y) * stream.uniform_open0();
  EvolvingState next;
  next.x = static_cast<std::uint32_t>(y);
  next.set.clear();
  for (Eigen::Index z = 0; z < n; ++z) {
    if (q(z) >= threshold && q(z) > 0.0) next.set.push_back(static_cast<std::uint32_t>(z));
  }
  if (!contains(next.set, next.x)) throw ContractViolation("df_step: walker left the new set");
  return next;
}

std::vector<std::int64_t> edge_boundary(const Lattice& torus, const VertexSet& S) {
  require_hypercubic_torus(torus);
  const auto n = static_cast<std::size_t>(torus.vertex_count());
  std::vector<std::uint8_t> in(n, 0);
  for (std::uint32_t v : S) in.at(v) = 1;
  std::vector<std::int64_t> out;
  for (std::uint32_t v : S) {
    const Point pv = torus.vertex_at(v);
    for (int k = 0; k < torus.degree(); ++k) {
      const Neighbor nb = torus.neighbor(pv, k);
      if (!in[static_cast<std::size_t>(torus.vertex_index(nb.vertex))]) {
        out.push_back(torus.unit_index(nb.unit));
      }
    }
  }
  return out;
}

PhiResult phi_S(const TorusTrajectory& traj, const QuenchedKernel& kernel, const VertexSet& S) {
  const Lattice& torus = traj.lattice();
  const auto n = static_cast<std::size_t>(kernel.P.rows());
  if (S.empty() || S.size() >= n) throw std::invalid_argument("phi_S: S must be nonempty and proper");
  std::vector<std::uint8_t> in(n, 0);
  for (std::uint32_t v : S) in.at(v) = 1;
  double escape = 0.0;
  for (std::uint32_t x : S) {
    for (std::size_t y = 0; y < n; ++y) {
      if (!in[y]) escape += kernel.P(x, static_cast<Eigen::Index>(y));
    }
  }
  const auto size = static_cast<double>(S.size());
  const auto a = static_cast<double>(kernel.step);
  double open = 0.0;
  for (std::int64_t e : edge_boundary(torus, S)) open += traj.open_time(e, a, a + 1.0);
  PhiResult r;
  r.phi = escape / size;
  r.bound = open / (torus.degree() * kE * size);
  return r;
}

DriftResult drift_check(const TorusTrajectory& traj, const QuenchedKernel& kernel,
                        const VertexSet& S) {
  DriftResult r;
  // S = V has no boundary: Phi = 0 and the bound is 0.
  if (S.size() != static_cast<std::size_t>(kernel.P.rows())) r.phi = phi_S(traj, kernel, S);
  const ThresholdProfile prof = ThresholdProfile::from_kernel(kernel.P, S);
  const auto size = static_cast<double>(S.size());
  for (const auto& seg : prof.segments()) {
    if (seg.size == 0) continue;
    const auto b = static_cast<double>(seg.size);
    r.lhs += seg.gap * std::sqrt(b);
    r.lhs_plain += seg.gap / std::sqrt(b);
  }
  r.lhs /= size;
  r.rhs = (1.0 - r.phi.phi * r.phi.phi / 6.0) / std::sqrt(size);
  r.pass = r.lhs <= r.rhs + 1e-12;
  return r;
}

std::string EvolvingCheckResult::to_csv() const {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.instance << ',' << r.side << ',' << fmt(r.mu) << ',' << fmt(r.p) << ',' << fmt(r.phi)
        << ',' << fmt(r.phi_bound) << ',' << fmt(r.lhs) << ',' << fmt(r.rhs) << ','
        << (r.pass() ? 1 : 0) << '\n';
  }
  return out.str();
}

EvolvingCheckResult evolving_check(const EvolvingCheckConfig& cfg) {
  if (cfg.sides.empty() || cfg.mus.empty() || cfg.ps.empty() || cfg.instances < 1) {
    throw std::invalid_argument("evolving_check: empty grid");
  }
  EvolvingCheckResult res;
  res.rows.resize(static_cast<std::size_t>(cfg.instances));
  const std::size_t ns = cfg.sides.size(), nm = cfg.mus.size(), np = cfg.ps.size();
  parallel_for(res.rows.size(), cfg.threads, [&](std::size_t i) {
    EnvParams env;
    env.lattice = Lattice::hypercubic(cfg.dim).torus(cfg.sides[i % ns]);
    env.mu = cfg.mus[(i / ns) % nm];
    env.p = cfg.ps[(i / (ns * nm)) % np];
    const StreamKey key{cfg.seed, {static_cast<std::uint64_t>(i)}};
    const TorusTrajectory traj = torus_trajectory(env, 0.0, 1.0, key);
    const QuenchedKernel kernel = quenched_kernel(traj, 0);
    Stream s = derive_stream(key.child(Purpose::instance));
    const auto n = static_cast<std::size_t>(env.lattice.vertex_count());
    const VertexSet S = i % 2 == 0 ? random_subset(n, s)
                                   : random_connected(neighbor_table(env.lattice), n, s);
    const DriftResult d = drift_check(traj, kernel, S);
    EvolvingCheckRow& row = res.rows[i];
    row.instance = static_cast<std::int64_t>(i);
    row.side = env.lattice.side();
    row.mu = env.mu;
    row.p = env.p;
    row.set_size = S.size();
    row.phi = d.phi.phi;
    row.phi_bound = d.phi.bound;
    row.lhs = d.lhs;
    row.rhs = d.rhs;
    row.martingale_gap = std::abs(ThresholdProfile::from_kernel(kernel.P, S).plain_integral() -
                                  static_cast<double>(S.size()));
    row.drift_pass = d.pass;
    row.phi_pass = d.phi.phi >= d.phi.bound;
  });
  return res;
}

std::string DfCheckResult::to_csv() const {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.f << ',' << fmt(r.estimator_walk) << ',' << fmt(r.estimator_set) << ',' << fmt(r.z)
        << '\n';
  }
  return out.str();
}

DfCheckResult df_check(const DfCheckConfig& cfg) {
  if (cfg.steps < 1 || cfg.runs < 2) throw std::invalid_argument("df_check: need steps >= 1, runs >= 2");
  EnvParams env;
  env.lattice = Lattice::hypercubic(cfg.dim).torus(cfg.side);
  env.p = cfg.p;
  env.mu = cfg.mu;
  const TorusTrajectory traj =
      torus_trajectory(env, 0.0, static_cast<double>(cfg.steps), StreamKey{cfg.seed, {}});
  std::vector<Eigen::MatrixXd> kernels;
  for (int n = 0; n < cfg.steps; ++n) kernels.push_back(quenched_kernel(traj, n).P);

  const Lattice& torus = env.lattice;
  const int half = torus.side() / 2;
  const std::vector<std::pair<std::string, std::function<bool(const Point&)>>> fs = {
      {"coord0_eq_0", [](const Point& v) { return v[0] == 0; }},
      {"coord0_ge_half", [half](const Point& v) { return v[0] >= half; }},
  };
  const auto nv = static_cast<std::size_t>(torus.vertex_count());
  std::vector<std::vector<double>> fval(fs.size(), std::vector<double>(nv));
  for (std::size_t v = 0; v < nv; ++v) {
    const Point pv = torus.vertex_at(static_cast<std::int64_t>(v));
    for (std::size_t j = 0; j < fs.size(); ++j) fval[j][v] = fs[j].second(pv) ? 1.0 : 0.0;
  }

  const auto runs = static_cast<std::size_t>(cfg.runs);
  // per run: walk value and set average for each f
  std::vector<double> walk(runs * fs.size()), set(runs * fs.size());
  std::vector<std::int64_t> violations(runs, 0);
  parallel_for(runs, cfg.threads, [&](std::size_t r) {
    Stream s = derive_stream(StreamKey{cfg.seed, {static_cast<std::uint64_t>(r)}}.child(Purpose::evolving));
    EvolvingState st;
    for (int n = 0; n < cfg.steps; ++n) {
      st = df_step(kernels[static_cast<std::size_t>(n)], st, s);
      if (!contains(st.set, st.x)) ++violations[r];
    }
    for (std::size_t j = 0; j < fs.size(); ++j) {
      double avg = 0.0;
      for (std::uint32_t y : st.set) avg += fval[j][y];
      walk[r * fs.size() + j] = fval[j][st.x];
      set[r * fs.size() + j] = avg / static_cast<double>(st.set.size());
    }
  });
  DfCheckResult res;
  res.steps_taken = cfg.runs * cfg.steps;
  for (std::int64_t v : violations) res.membership_violations += v;
  for (std::size_t j = 0; j < fs.size(); ++j) {
    std::vector<double> w(runs), a(runs), d(runs);
    for (std::size_t r = 0; r < runs; ++r) {
      w[r] = walk[r * fs.size() + j];
      a[r] = set[r * fs.size() + j];
      d[r] = w[r] - a[r];
    }
    const stats::MeanCi dm = stats::mean_ci(d);
    DfCheckRow row;
    row.f = fs[j].first;
    row.estimator_walk = stats::mean_ci(w).mean;
    row.estimator_set = stats::mean_ci(a).mean;
    row.z = dm.std_error > 0.0 ? dm.mean / dm.std_error : 0.0;
    res.rows.push_back(row);
  }
  return res;
}

// ---------------------------------------------------------------------------

MassPropagator::MassPropagator(const TorusTrajectory& traj, double drop)
    : traj_(&traj), drop_(drop) {
  require_hypercubic_torus(traj.lattice());
  NeighborTable nt = neighbor_table(traj.lattice());
  degree_ = nt.degree;
  dim_ = traj.lattice().dim();
  nbr_ = std::move(nt.vertex);
  bond_ = std::move(nt.unit);
  const auto n = static_cast<std::size_t>(traj.lattice().vertex_count());
  mass_.assign(n, 0.0);
  term_.assign(n, 0.0);
  next_.assign(n, 0.0);
  is_active_.assign(n, 0);
  reset();
}

void MassPropagator::reset() {
  config_ = traj_->initial();
  next_event_ = 0;
  time_ = traj_->t0();
  const double w = 1.0 / degree_;
  weight_.resize(nbr_.size());
  diag_.assign(mass_.size(), 0.0);
  for (std::size_t slot = 0; slot < nbr_.size(); ++slot) {
    weight_[slot] = config_[bond_[slot]] ? w : 0.0;
    diag_[slot / static_cast<std::size_t>(degree_)] += w - weight_[slot];
  }
}

void MassPropagator::set_unit(std::uint32_t unit, bool open) {
  if ((config_[unit] != 0) == open) return;
  config_[unit] = open ? 1 : 0;
  const double w = 1.0 / degree_;
  const std::uint32_t dir = unit % static_cast<std::uint32_t>(dim_);
  const std::size_t lo = unit / static_cast<std::uint32_t>(dim_);
  const std::size_t up = lo * static_cast<std::size_t>(degree_) + 2 * dir + 1;
  const std::size_t hi = nbr_[up];
  const std::size_t down = hi * static_cast<std::size_t>(degree_) + 2 * dir;
  const double delta = open ? w : -w;
  weight_[up] += delta;
  weight_[down] += delta;
  diag_[lo] -= delta;
  diag_[hi] -= delta;
}

void MassPropagator::seek(double t) {
  if (t < time_) reset();
  const auto& events = traj_->events();
  while (next_event_ < events.size() && events[next_event_].time <= t) {
    set_unit(events[next_event_].unit, events[next_event_].open);
    ++next_event_;
  }
  time_ = t;
}

const Configuration& MassPropagator::config_at_step(std::int64_t n) {
  seek(static_cast<double>(n));
  return config_;
}

void MassPropagator::apply_interval(double delta) {
  if (delta <= 0.0) return;
  const int K = uniformization_terms(delta);
  const auto deg = static_cast<std::size_t>(degree_);
  // Term k lives within k hops of the current support, so K hops suffice.
  std::size_t frontier_begin = 0;
  for (int hop = 0; hop < K; ++hop) {
    const std::size_t frontier_end = active_.size();
    for (std::size_t i = frontier_begin; i < frontier_end; ++i) {
      const std::size_t base = static_cast<std::size_t>(active_[i]) * deg;
      for (std::size_t j = 0; j < deg; ++j) {
        const std::uint32_t z = nbr_[base + j];
        if (!is_active_[z]) {
          is_active_[z] = 1;
          active_.push_back(z);
        }
      }
    }
    frontier_begin = frontier_end;
  }
  for (std::uint32_t y : active_) term_[y] = mass_[y];
  for (int k = 1; k <= K; ++k) {
    const double c = delta / k;
    const double* t = term_.data();
    for (std::uint32_t y : active_) {
      const double* w = weight_.data() + static_cast<std::size_t>(y) * deg;
      const std::uint32_t* nb = nbr_.data() + static_cast<std::size_t>(y) * deg;
      double acc = diag_[y] * t[y];
      if (deg == 4) {
        acc += w[0] * t[nb[0]] + w[1] * t[nb[1]] + w[2] * t[nb[2]] + w[3] * t[nb[3]];
      } else {
        for (std::size_t j = 0; j < deg; ++j) acc += w[j] * t[nb[j]];
      }
      next_[y] = acc * c;
      mass_[y] += next_[y];
    }
    std::swap(term_, next_);
  }
  const double scale = std::exp(-delta);
  std::size_t keep = 0;
  for (std::uint32_t y : active_) {
    term_[y] = 0.0;
    next_[y] = 0.0;
    mass_[y] *= scale;
    if (mass_[y] < drop_) {
      mass_[y] = 0.0;
      is_active_[y] = 0;
    } else {
      active_[keep++] = y;
    }
  }
  active_.resize(keep);
}

std::vector<std::pair<std::uint32_t, double>> MassPropagator::propagate(const VertexSet& A,
                                                                        std::int64_t n) {
  require_window(*traj_, n);
  if (A.empty()) return {};
  const auto a = static_cast<double>(n);
  const double b = a + 1.0;
  seek(a);
  for (std::uint32_t x : A) {
    if (is_active_.at(x)) continue;
    mass_[x] = 1.0;
    is_active_[x] = 1;
    active_.push_back(x);
  }
  const auto& events = traj_->events();
  double s = a;
  while (next_event_ < events.size() && events[next_event_].time <= b) {
    const RefreshEvent& e = events[next_event_++];
    if ((config_[e.unit] != 0) == e.open) continue;
    apply_interval(e.time - s);
    s = e.time;
    set_unit(e.unit, e.open);
  }
  apply_interval(b - s);
  time_ = b;
  std::vector<std::pair<std::uint32_t, double>> out;
  out.reserve(active_.size());
  for (std::uint32_t y : active_) {
    out.emplace_back(y, mass_[y]);
    mass_[y] = 0.0;
    is_active_[y] = 0;
  }
  active_.clear();
  std::sort(out.begin(), out.end());
  return out;
}

std::uint32_t sample_walk_step(const TorusTrajectory& traj, std::uint32_t x, std::int64_t n,
                               Stream& stream) {
  require_window(traj, n);
  const Lattice& torus = traj.lattice();
  const auto end = static_cast<double>(n) + 1.0;
  double t = static_cast<double>(n);
  Point pos = torus.vertex_at(x);
  const auto degree = static_cast<std::uint64_t>(torus.degree());
  while (true) {
    t += stream.exponential(1.0);
    if (t > end) break;
    const Neighbor nb = torus.neighbor(pos, static_cast<int>(stream.uniform_int(degree)));
    if (traj.state_at(torus.unit_index(nb.unit), t)) pos = nb.vertex;
  }
  return static_cast<std::uint32_t>(torus.vertex_index(pos));
}

EvolvingState df_step_sparse(const TorusTrajectory& traj, MassPropagator& prop,
                             const EvolvingState& state, std::int64_t n, Stream& stream) {
  if (!contains(state.set, state.x)) throw ContractViolation("df_step: walker outside its set");
  const std::uint32_t y = sample_walk_step(traj, state.x, n, stream);
  auto mass = prop.propagate(state.set, n);
  auto it = std::lower_bound(mass.begin(), mass.end(), std::make_pair(y, 0.0),
                             [](const auto& l, const auto& r) { return l.first < r.first; });
  const double qy = (it != mass.end() && it->first == y) ? it->second : 0.0;
  const double u = stream.uniform_open0();
  const ThresholdProfile prof = ThresholdProfile::from_mass(std::move(mass), state.set.size());
  EvolvingState next;
  next.x = y;
  if (qy > 0.0) {
    next.set = prof.level_set(std::min(qy * u, 1.0));
  } else {
    // Q(A, y) fell below the drop threshold: take the u -> 0 limit.
    next.set = prof.prefix(prof.order().size());
    next.set.insert(std::upper_bound(next.set.begin(), next.set.end(), y), y);
  }
  if (!contains(next.set, next.x)) throw ContractViolation("df_step: walker left the new set");
  return next;
}

std::int64_t t_of_n(std::int64_t n, double theta) {
  if (!(theta > 0.0)) throw std::invalid_argument("t_of_n: theta must be > 0");
  return static_cast<std::int64_t>(std::ceil(8.0 * static_cast<double>(n) / theta));
}

ScanResult good_excellent_scan(const TorusTrajectory& traj, std::span<const VertexSet> sets,
                               double theta_hat) {
  const Lattice& torus = traj.lattice();
  const auto T = static_cast<std::int64_t>(sets.size());
  if (T > 0) require_window(traj, T - 1);
  MassPropagator cursor(traj);
  ScanResult res;
  for (std::int64_t m = 0; m < T; ++m) {
    const VertexSet& S = sets[static_cast<std::size_t>(m)];
    const Configuration& config = cursor.config_at_step(m);
    const std::vector<std::uint8_t> cluster = largest_open_cluster(torus, config);
    std::size_t overlap = 0;
    for (std::uint32_t v : S) overlap += cluster[v];
    const bool good = overlap > 0 && static_cast<double>(overlap) >=
                                         0.5 * theta_hat * static_cast<double>(S.size());
    bool excellent = false;
    if (good) {
      double integral = 0.0;
      double open_now = 0.0;
      for (std::int64_t e : edge_boundary(torus, S)) {
        integral += traj.open_time(e, static_cast<double>(m), static_cast<double>(m) + 1.0);
        open_now += config[static_cast<std::size_t>(e)];
      }
      excellent = integral >= 0.5 * open_now;
    }
    res.good.push_back(good ? 1 : 0);
    res.excellent.push_back(excellent ? 1 : 0);
  }
  if (T > 1) {
    double g = 0.0, x = 0.0;
    for (std::int64_t m = 1; m < T; ++m) {
      g += res.good[static_cast<std::size_t>(m)];
      x += res.excellent[static_cast<std::size_t>(m)];
    }
    res.good_fraction = g / static_cast<double>(T - 1);
    res.excellent_fraction = x / static_cast<double>(T - 1);
  }
  return res;
}

SupercriticalResult supercritical_runs(const SupercriticalConfig& cfg) {
  if (cfg.steps < 2 || cfg.runs < 1) throw std::invalid_argument("supercritical_runs: need steps >= 2, runs >= 1");
  require_hypercubic_torus(cfg.torus);
  SupercriticalResult res;
  res.theta_hat = cfg.theta_hat;
  if (!(res.theta_hat > 0.0)) {
    const ThetaRow th = theta_estimate(cfg.torus, cfg.p, cfg.theta_reps,
                                       derive_key(cfg.seed, 0x7468657461ULL), cfg.threads);
    res.theta_hat = th.ci.phat;
  }
  EnvParams env;
  env.lattice = cfg.torus;
  env.p = cfg.p;
  env.mu = cfg.mu;
  res.runs.resize(static_cast<std::size_t>(cfg.runs));
  parallel_for(res.runs.size(), cfg.threads, [&](std::size_t r) {
    const StreamKey key{cfg.seed, {static_cast<std::uint64_t>(r)}};
    const TorusTrajectory traj = torus_trajectory(env, 0.0, static_cast<double>(cfg.steps), key);
    MassPropagator prop(traj);
    Stream s = derive_stream(key.child(Purpose::evolving));
    std::vector<VertexSet> sets;
    EvolvingState st;
    SupercriticalRun& run = res.runs[r];
    run.sizes.push_back(st.set.size());
    for (int m = 0; m < cfg.steps; ++m) {
      sets.push_back(st.set);
      st = df_step_sparse(traj, prop, st, m, s);
      run.sizes.push_back(st.set.size());
    }
    run.scan = good_excellent_scan(traj, sets, res.theta_hat);
  });
  double hits = 0.0;
  for (const auto& run : res.runs) {
    hits += run.scan.good_fraction > res.theta_hat / 4.0 ? 1.0 : 0.0;
    res.mean_good_fraction += run.scan.good_fraction;
    res.mean_excellent_fraction += run.scan.excellent_fraction;
  }
  const auto n = static_cast<double>(res.runs.size());
  res.frac_good_runs = hits / n;
  res.frac_good_runs_se = std::sqrt(res.frac_good_runs * (1.0 - res.frac_good_runs) / n);
  res.mean_good_fraction /= n;
  res.mean_excellent_fraction /= n;
  return res;
}

std::string GrowthResult::to_csv() const {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.m << ',' << fmt(r.size_mean) << ',' << fmt(r.size_q10) << ',' << fmt(r.size_q90)
        << '\n';
  }
  return out.str();
}

namespace {

// Linear interpolation between order statistics (sorted input).
double quantile(const std::vector<double>& sorted, double q) {
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

GrowthResult growth_experiment(const GrowthConfig& cfg) {
  if (cfg.steps < 1 || cfg.runs < 1) throw std::invalid_argument("growth_experiment: need steps, runs >= 1");
  require_hypercubic_torus(cfg.torus);
  EnvParams env;
  env.lattice = cfg.torus;
  env.p = cfg.p;
  env.mu = cfg.mu;
  const auto runs = static_cast<std::size_t>(cfg.runs);
  const auto len = static_cast<std::size_t>(cfg.steps) + 1;
  std::vector<double> sizes(runs * len);
  parallel_for(runs, cfg.threads, [&](std::size_t r) {
    const StreamKey key{cfg.seed, {static_cast<std::uint64_t>(r)}};
    const TorusTrajectory traj = torus_trajectory(env, 0.0, static_cast<double>(cfg.steps), key);
    MassPropagator prop(traj);
    Stream s = derive_stream(key.child(Purpose::evolving));
    VertexSet S{0};
    sizes[r * len] = 1.0;
    for (int m = 0; m < cfg.steps; ++m) {
      auto mass = prop.propagate(S, m);
      const ThresholdProfile prof = ThresholdProfile::from_mass(std::move(mass), S.size());
      S = evolve_doob(prof, s);
      sizes[r * len + static_cast<std::size_t>(m) + 1] = static_cast<double>(S.size());
    }
  });
  GrowthResult res;
  std::vector<double> xs, ys;
  for (std::size_t m = 0; m < len; ++m) {
    std::vector<double> col(runs);
    for (std::size_t r = 0; r < runs; ++r) col[r] = sizes[r * len + m];
    std::sort(col.begin(), col.end());
    GrowthRow row;
    row.m = static_cast<std::int64_t>(m);
    row.size_mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(runs);
    row.size_q10 = quantile(col, 0.1);
    row.size_q90 = quantile(col, 0.9);
    res.rows.push_back(row);
    if (m >= 1 && static_cast<double>(m) >= cfg.fit_from) {
      xs.push_back(static_cast<double>(m));
      ys.push_back(row.size_mean);
    }
  }
  if (xs.size() >= 2) res.fit = stats::loglog_fit(xs, ys, cfg.fit_from);
  const double scale = std::pow(static_cast<double>(cfg.steps), cfg.torus.dim() / 2.0);
  res.c1 = 0.5 * res.rows.back().size_mean / scale;
  double above = 0.0;
  for (std::size_t r = 0; r < runs; ++r) above += sizes[r * len + len - 1] > res.c1 * scale ? 1.0 : 0.0;
  res.c2 = above / static_cast<double>(runs);
  return res;
}

}  // namespace dynperc
