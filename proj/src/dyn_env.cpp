#include "dynperc/dyn_env.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "dynperc/errors.hpp"

namespace dynperc {

namespace {

constexpr double kEvictionExponent = 64.0 * 0.69314718055994531;  // 64 ln 2

}  // namespace

void EnvParams::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p must lie in [0,1]");
  if (!(mu > 0.0) || !std::isfinite(mu)) throw std::invalid_argument("mu must be > 0");
  if (!allow_large_mu && mu > kMaxDefaultMu + 1e-15) {
    throw std::invalid_argument("mu must be <= 1/e (pass allow_large_mu to override)");
  }
}

LazyEnvironment::LazyEnvironment(EnvParams params, const StreamKey& replica_key)
    : params_(std::move(params)),
      base_key_(replica_key.child(Purpose::environment).hashed()) {
  params_.validate();
  if (params_.lattice.is_torus()) {
    throw Unsupported("LazyEnvironment: use a TorusTrajectory for finite tori");
  }
}

double LazyEnvironment::resample_probability(double mu, double dt) {
  return -std::expm1(-mu * dt);
}

bool LazyEnvironment::query(const Unit& u, double t) {
  auto it = records_.find(u);
  if (it == records_.end()) {
    // First query: stationary marginal. The record key also folds in the
    // query time so a unit re-created after eviction gets a fresh stream.
    const std::uint64_t unit_key = derive_key(base_key_, params_.lattice.unit_hash(u));
    const std::uint64_t key = derive_key(unit_key, std::bit_cast<std::uint64_t>(t));
    const bool open = unit_uniform(key, 0) < params_.p;
    records_.emplace(u, Record{t, key, 1, open});
    return open;
  }
  Record& rec = it->second;
  if (t < rec.last_time) {
    throw ContractViolation("LazyEnvironment::query: time went backwards for a unit");
  }
  const double dt = t - rec.last_time;
  if (dt > 0.0) {
    const double refresh = resample_probability(params_.mu, dt);
    if (unit_uniform(rec.key, rec.draws++) < refresh) {
      rec.open = unit_uniform(rec.key, rec.draws++) < params_.p;
    }
  }
  rec.last_time = t;
  return rec.open;
}

std::size_t LazyEnvironment::evict_stale(double t_now) {
  return std::erase_if(records_, [&](const auto& kv) {
    return params_.mu * (t_now - kv.second.last_time) >= kEvictionExponent;
  });
}

TorusTrajectory::TorusTrajectory(EnvParams params, double t0, double t1, Configuration initial,
                                 std::vector<RefreshEvent> events)
    : params_(std::move(params)),
      t0_(t0),
      t1_(t1),
      initial_(std::move(initial)),
      events_(std::move(events)) {
  if (!params_.lattice.is_torus()) throw Unsupported("TorusTrajectory requires a torus lattice");
  if (!(t1_ > t0_)) throw std::invalid_argument("TorusTrajectory: need t1 > t0");
  const auto units = static_cast<std::size_t>(params_.lattice.unit_count());
  if (initial_.size() != units) throw std::invalid_argument("TorusTrajectory: bad initial size");
  per_unit_.resize(units);
  double prev = t0_;
  for (std::size_t i = 0; i < events_.size(); ++i) {
    const RefreshEvent& e = events_[i];
    if (!(e.time > prev) || e.time > t1_) {
      throw std::invalid_argument("TorusTrajectory: event times must be strictly increasing in (t0, t1]");
    }
    if (e.unit >= units) throw std::invalid_argument("TorusTrajectory: unit out of range");
    prev = e.time;
    per_unit_[e.unit].push_back(static_cast<std::uint32_t>(i));
  }
}

void TorusTrajectory::check_time(double t) const {
  if (t < t0_ || t > t1_) throw std::out_of_range("time outside trajectory window");
}

bool TorusTrajectory::state_at(std::int64_t unit, double t) const {
  check_time(t);
  const auto& idx = per_unit_[static_cast<std::size_t>(unit)];
  auto it = std::upper_bound(idx.begin(), idx.end(), t,
                             [&](double v, std::uint32_t i) { return v < events_[i].time; });
  if (it == idx.begin()) return initial_[static_cast<std::size_t>(unit)] != 0;
  return events_[*std::prev(it)].open;
}

Configuration TorusTrajectory::config_at(double t) const {
  check_time(t);
  Configuration c = initial_;
  for (const RefreshEvent& e : events_) {
    if (e.time > t) break;
    c[e.unit] = e.open ? 1 : 0;
  }
  return c;
}

std::size_t TorusTrajectory::first_event_after(double t) const {
  auto it = std::upper_bound(events_.begin(), events_.end(), t,
                             [](double v, const RefreshEvent& e) { return v < e.time; });
  return static_cast<std::size_t>(it - events_.begin());
}

double TorusTrajectory::open_time(std::int64_t unit, double a, double b) const {
  check_time(a);
  check_time(b);
  bool open = state_at(unit, a);
  double since = a;
  double total = 0.0;
  for (std::uint32_t i : per_unit_[static_cast<std::size_t>(unit)]) {
    const RefreshEvent& e = events_[i];
    if (e.time <= a) continue;
    if (e.time >= b) break;
    if (open) total += e.time - since;
    open = e.open;
    since = e.time;
  }
  if (open) total += b - since;
  return total;
}

void TorusTrajectory::write_events_csv(std::ostream& out) const {
  out << "time,unit,state\n";
  char buf[64];
  for (const RefreshEvent& e : events_) {
    std::snprintf(buf, sizeof buf, "%.17g,%u,%d\n", e.time, e.unit, e.open ? 1 : 0);
    out << buf;
  }
}

std::string TorusTrajectory::initial_bitset() const {
  std::string s;
  s.reserve(initial_.size());
  for (std::uint8_t b : initial_) s.push_back(b ? '1' : '0');
  return s;
}

TorusTrajectory torus_trajectory(const EnvParams& params, double t0, double t1,
                                 const StreamKey& replica_key) {
  params.validate();
  if (!params.lattice.is_torus()) throw Unsupported("torus_trajectory requires a torus lattice");
  if (!(t1 > t0)) throw std::invalid_argument("torus_trajectory: need t1 > t0");
  Stream s = derive_stream(replica_key.child(Purpose::trajectory));
  const auto units = static_cast<std::uint64_t>(params.lattice.unit_count());
  Configuration initial(units);
  for (auto& b : initial) b = s.uniform01() < params.p ? 1 : 0;
  std::vector<RefreshEvent> events;
  const double rate = params.mu * static_cast<double>(units);
  events.reserve(static_cast<std::size_t>(rate * (t1 - t0) * 1.1) + 16);
  double t = t0;
  while (true) {
    const double next = t + s.exponential(rate);
    if (next > t1) break;
    if (!(next > t)) continue;  // a gap rounding to zero at this magnitude
    t = next;
    const auto unit = static_cast<std::uint32_t>(s.uniform_int(units));
    events.push_back({t, unit, s.uniform01() < params.p});
  }
  return TorusTrajectory(params, t0, t1, std::move(initial), std::move(events));
}

double ever_open_params(double p_c, double mu, double t) {
  if (!(p_c >= 0.0 && p_c <= 1.0) || mu < 0.0 || t < 0.0) {
    throw std::invalid_argument("ever_open_params: inputs out of domain");
  }
  return p_c + (1.0 - p_c) * -std::expm1(-mu * t * p_c);
}

Configuration ever_open_units(const TorusTrajectory& traj, double t) {
  Configuration h = traj.initial();
  for (const RefreshEvent& e : traj.events()) {
    if (e.time > t) break;
    if (e.open) h[e.unit] = 1;
  }
  return h;
}

std::vector<Unit> ever_open_units_lazy(const EnvParams& params, double t, std::int64_t r,
                                       const StreamKey& key) {
  params.validate();
  const double q = ever_open_params(params.p, params.mu, t);
  const std::uint64_t k = key.child(Purpose::environment).hashed();
  std::vector<Unit> out;
  for (const Unit& u : units_in_ball(params.lattice, r)) {
    if (unit_uniform(k, params.lattice.unit_hash(u)) < q) out.push_back(u);
  }
  return out;
}

}  // namespace dynperc
