#include "dynperc/percolation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <array>
#include <limits>
#include <memory>
#include <utility>
#include <sstream>
#include <stdexcept>

#include "dynperc/errors.hpp"
#include "dynperc/parallel.hpp"
#include "dynperc/union_find.hpp"

namespace dynperc {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

constexpr std::uint64_t kModeDynamical = 0x64796e;
constexpr std::uint64_t kModeStatic = 0x737461;

}  // namespace

double critical_probability(const Lattice& lattice) {
  if (lattice.is_triangular()) return 0.5;
  switch (lattice.dim()) {
    case 2: return 0.5;
    case 3: return 0.2488126;
    case 4: return 0.1601314;
    case 5: return 0.118172;
    case 6: return 0.0942019;
    default: throw Unsupported("no critical probability tabulated for this dimension");
  }
}

BoxExplorer::BoxExplorer(const Lattice& lattice, std::int64_t r)
    : lattice_(lattice), r_(r), width_(2 * r + 1), dim_(lattice.dim()), degree_(lattice.degree()) {
  if (r < 1) throw std::invalid_argument("BoxExplorer: r must be >= 1");
  if (lattice.is_torus()) throw Unsupported("BoxExplorer: infinite lattices only");
  double vertices = std::pow(static_cast<double>(width_), dim_);
  if (vertices * std::max(dim_, 1) > 2e9) throw Unsupported("BoxExplorer: box too large");
  stride_.resize(static_cast<std::size_t>(dim_));
  std::int64_t s = 1;
  for (int i = 0; i < dim_; ++i) {
    stride_[static_cast<std::size_t>(i)] = s;
    s *= width_;
  }
  const auto n = static_cast<std::size_t>(s);
  boundary_.assign(n, 0);
  visit_stamp_.assign(n, 0);
  const std::size_t units = lattice.is_triangular() ? n : n * static_cast<std::size_t>(dim_);
  unit_stamp_.assign(units, 0);
  unit_open_.assign(units, 0);
  for (std::size_t v = 0; v < n; ++v) {
    boundary_[v] = lattice_.ball_membership(r_, point_of(static_cast<std::uint32_t>(v))) ==
                           BallRegion::boundary
                       ? 1
                       : 0;
  }
  for (int k = 0; k < degree_; ++k) {
    const Point w = lattice_.neighbor(lattice_.origin(), k).vertex;
    std::int64_t off = 0;
    for (int i = 0; i < dim_; ++i) off += w[i] * stride_[static_cast<std::size_t>(i)];
    step_offset_.push_back(off);
  }
  std::int64_t o = 0;
  for (int i = 0; i < dim_; ++i) o += r_ * stride_[static_cast<std::size_t>(i)];
  origin_ = static_cast<std::uint32_t>(o);
}

Point BoxExplorer::point_of(std::uint32_t v) const {
  Point p;
  std::int64_t rest = v;
  for (int i = 0; i < dim_; ++i) {
    p[i] = rest % width_ - r_;
    rest /= width_;
  }
  return p;
}

Unit BoxExplorer::unit_of(std::uint32_t local) const {
  if (lattice_.is_triangular()) return Unit{point_of(local), Unit::kSiteUnit};
  return Unit{point_of(local / static_cast<std::uint32_t>(dim_)),
              static_cast<int>(local % static_cast<std::uint32_t>(dim_))};
}

void BoxExplorer::next_epoch() {
  if (++epoch_ == 0) {
    std::fill(visit_stamp_.begin(), visit_stamp_.end(), 0);
    std::fill(unit_stamp_.begin(), unit_stamp_.end(), 0);
    epoch_ = 1;
  }
}

namespace {

// One explorer per (thread, lattice, r); trials reuse the arrays.
BoxExplorer& cached_explorer(const Lattice& lattice, std::int64_t r) {
  thread_local std::vector<std::pair<std::pair<Lattice, std::int64_t>, std::unique_ptr<BoxExplorer>>>
      cache;
  for (auto& [k, e] : cache) {
    if (k.first == lattice && k.second == r) return *e;
  }
  if (cache.size() >= 16) cache.erase(cache.begin());
  cache.emplace_back(std::make_pair(lattice, r), std::make_unique<BoxExplorer>(lattice, r));
  return *cache.back().second;
}

}  // namespace

bool one_arm_trial(const Lattice& lattice, std::int64_t r, double p, std::uint64_t trial_key) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("one_arm_trial: p must lie in [0,1]");
  BoxExplorer& ex = cached_explorer(lattice, r);
  return ex.reaches_boundary(
      [&](const Unit& u) { return unit_uniform(trial_key, lattice.unit_hash(u)) < p; });
}

double OneArmConfig::p_at(std::int64_t r) const {
  if (!critical_window) return p;
  return std::min(1.0, critical_probability(lattice) +
                           std::pow(static_cast<double>(r), -1.0 / nu_tilde));
}

OneArmResult one_arm_sweep(const OneArmConfig& cfg) {
  if (cfg.radii.empty()) throw std::invalid_argument("one_arm_sweep: empty radius grid");
  if (cfg.reps < 1) throw std::invalid_argument("one_arm_sweep: reps must be >= 1");
  for (std::int64_t r : cfg.radii) {
    if (r < 1) throw std::invalid_argument("one_arm_sweep: radii must be >= 1");
  }
  const std::size_t nr = cfg.radii.size();
  const auto reps = static_cast<std::size_t>(cfg.reps);
  // Success counts per chunk and radius, folded in chunk order.
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (reps + kChunk - 1) / kChunk;
  std::vector<std::vector<std::int64_t>> partial(chunks, std::vector<std::int64_t>(nr, 0));
  parallel_for(chunks, cfg.threads, [&](std::size_t c) {
    const std::size_t end = std::min(reps, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      const std::uint64_t key =
          StreamKey{cfg.seed, {static_cast<std::uint64_t>(i)}}.child(Purpose::trial).hashed();
      for (std::size_t j = 0; j < nr; ++j) {
        if (one_arm_trial(cfg.lattice, cfg.radii[j], cfg.p_at(cfg.radii[j]), key)) {
          ++partial[c][j];
        }
      }
    }
  });
  OneArmResult res;
  std::vector<double> xs, ys;
  for (std::size_t j = 0; j < nr; ++j) {
    OneArmRow row;
    row.r = cfg.radii[j];
    row.p = cfg.p_at(row.r);
    row.trials = cfg.reps;
    for (const auto& part : partial) row.successes += part[j];
    row.ci = stats::wilson(row.successes, row.trials);
    res.rows.push_back(row);
    if (static_cast<double>(row.r) >= cfg.fit_cutoff && row.successes > 0) {
      xs.push_back(static_cast<double>(row.r));
      ys.push_back(row.ci.phat);
    }
  }
  if (xs.size() >= 2) {
    res.fit = stats::loglog_fit(xs, ys, cfg.fit_cutoff);
    res.fitted = true;
  }
  res.fit.cutoff = cfg.fit_cutoff;
  return res;
}

std::string OneArmResult::to_csv() const {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const OneArmRow& row : rows) {
    out << row.r << ',' << fmt(row.p) << ',' << row.trials << ',' << row.successes << ','
        << fmt(row.ci.phat) << ',' << fmt(row.ci.lo) << ',' << fmt(row.ci.hi) << '\n';
  }
  return out.str();
}

std::string OneArmResult::fit_json() const {
  auto num = [](double v) { return std::isfinite(v) ? fmt(v) : std::string("null"); };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::ostringstream out;
  out << "{\"slope\":" << num(fitted ? fit.slope : nan)
      << ",\"stderr\":" << num(fitted ? fit.stderr_slope : nan)
      << ",\"r2\":" << num(fitted ? fit.r2 : nan) << ",\"cutoff\":" << num(fit.cutoff) << "}";
  return out.str();
}

std::vector<std::uint8_t> largest_open_cluster(const Lattice& torus, const Configuration& config) {
  if (!torus.is_torus()) throw Unsupported("largest_open_cluster requires a torus");
  const auto n = static_cast<std::size_t>(torus.vertex_count());
  if (config.size() != static_cast<std::size_t>(torus.unit_count())) {
    throw std::invalid_argument("largest_open_cluster: configuration size mismatch");
  }
  UnionFind uf(n);
  std::vector<std::uint8_t> has_open(n, 0);
  const bool sites = torus.is_triangular();
  for (std::size_t v = 0; v < n; ++v) {
    const Point pv = torus.vertex_at(static_cast<std::int64_t>(v));
    if (sites) {
      if (!config[v]) continue;
      has_open[v] = 1;
      for (const Neighbor& nb : torus.neighbors(pv)) {
        const auto w = static_cast<std::uint32_t>(torus.vertex_index(nb.vertex));
        if (config[w]) uf.unite(static_cast<std::uint32_t>(v), w);
      }
    } else {
      for (int axis = 0; axis < torus.dim(); ++axis) {
        const std::size_t e = v * static_cast<std::size_t>(torus.dim()) + static_cast<std::size_t>(axis);
        if (!config[e]) continue;
        const Neighbor nb = torus.neighbor(pv, 2 * axis + 1);
        const auto w = static_cast<std::uint32_t>(torus.vertex_index(nb.vertex));
        uf.unite(static_cast<std::uint32_t>(v), w);
        has_open[v] = 1;
        has_open[w] = 1;
      }
    }
  }
  // Ascending scan: the first root seen with a given size has the smallest
  // minimum vertex, so strict > keeps the tie-break.
  std::uint32_t best_root = 0;
  std::uint32_t best_size = 0;
  std::vector<std::uint8_t> seen(n, 0);
  for (std::size_t v = 0; v < n; ++v) {
    if (!has_open[v]) continue;
    const std::uint32_t root = uf.find(static_cast<std::uint32_t>(v));
    if (seen[root]) continue;
    seen[root] = 1;
    const std::uint32_t size = uf.size_of(root);
    if (size > best_size) {
      best_size = size;
      best_root = root;
    }
  }
  std::vector<std::uint8_t> member(n, 0);
  if (best_size == 0) return member;
  for (std::size_t v = 0; v < n; ++v) {
    if (has_open[v] && uf.find(static_cast<std::uint32_t>(v)) == best_root) member[v] = 1;
  }
  return member;
}

Configuration coupled_configuration(const Lattice& torus, double p, std::uint64_t trial_key) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p must lie in [0,1]");
  Configuration c(static_cast<std::size_t>(torus.unit_count()));
  for (std::size_t e = 0; e < c.size(); ++e) c[e] = unit_uniform(trial_key, e) < p ? 1 : 0;
  return c;
}

ThetaRow theta_estimate(const Lattice& torus, double p, std::int64_t reps, std::uint64_t seed,
                        int threads) {
  if (!torus.is_torus()) throw Unsupported("theta_estimate requires a torus");
  if (reps < 1) throw std::invalid_argument("theta_estimate: reps must be >= 1");
  std::vector<std::uint8_t> hit(static_cast<std::size_t>(reps), 0);
  parallel_for(hit.size(), threads, [&](std::size_t i) {
    const std::uint64_t key =
        StreamKey{seed, {static_cast<std::uint64_t>(i)}}.child(Purpose::trial).hashed();
    hit[i] = largest_open_cluster(torus, coupled_configuration(torus, p, key))[0];
  });
  ThetaRow row;
  row.side = torus.side();
  row.p = p;
  row.trials = reps;
  for (std::uint8_t h : hit) row.successes += h;
  row.ci = stats::wilson(row.successes, row.trials);
  return row;
}

bool h_cluster_trial(const Lattice& lattice, double p_c, double mu, double t, std::int64_t r,
                     HMode mode, std::uint64_t trial_key) {
  if (!(p_c >= 0.0 && p_c <= 1.0) || !(mu >= 0.0) || !(t >= 0.0)) {
    throw std::invalid_argument("h_cluster_trial: inputs out of domain");
  }
  if (mode == HMode::static_equivalent) {
    return one_arm_trial(lattice, r, ever_open_params(p_c, mu, t), trial_key);
  }
  BoxExplorer& ex = cached_explorer(lattice, r);
  return ex.reaches_boundary([&](const Unit& u) {
    // Stationary start, then a rate-mu refresh clock on [0, t].
    Stream s(derive_key(trial_key, lattice.unit_hash(u)));
    if (s.uniform01() < p_c) return true;
    if (mu == 0.0) return false;
    double clock = s.exponential(mu);
    while (clock <= t) {
      if (s.uniform01() < p_c) return true;
      clock += s.exponential(mu);
    }
    return false;
  });
}

HClusterResult h_cluster_experiment(const Lattice& lattice, double p_c, double mu, double t,
                                    std::int64_t r, std::int64_t reps, std::uint64_t seed,
                                    int threads) {
  if (reps < 30) throw std::invalid_argument("h_cluster_experiment: reps must be >= 30");
  constexpr std::size_t kChunk = 512;
  const auto n = static_cast<std::size_t>(reps);
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<std::array<std::int64_t, 2>> partial(chunks, {0, 0});
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t end = std::min(n, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      const StreamKey base{seed, {static_cast<std::uint64_t>(i)}};
      const std::uint64_t kd = base.child(kModeDynamical).hashed();
      const std::uint64_t ks = base.child(kModeStatic).hashed();
      partial[c][0] += h_cluster_trial(lattice, p_c, mu, t, r, HMode::dynamical, kd) ? 1 : 0;
      partial[c][1] += h_cluster_trial(lattice, p_c, mu, t, r, HMode::static_equivalent, ks) ? 1 : 0;
    }
  });
  HClusterResult res;
  res.trials = reps;
  for (const auto& part : partial) {
    res.dynamical_successes += part[0];
    res.static_successes += part[1];
  }
  res.test = stats::two_proportion_test(res.dynamical_successes, reps, res.static_successes, reps);
  return res;
}

}  // namespace dynperc
