#include "dynperc/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "dynperc/dyn_env.hpp"
#include "dynperc/errors.hpp"
#include "dynperc/evolving.hpp"
#include "dynperc/io.hpp"
#include "dynperc/lattice.hpp"
#include "dynperc/percolation.hpp"
#include "dynperc/stats.hpp"
#include "dynperc/walker.hpp"

#ifndef DYNPERC_VERSION
#define DYNPERC_VERSION "0.0.0"
#endif
#ifndef DYNPERC_GIT_REV
#define DYNPERC_GIT_REV ""
#endif

namespace dynperc::cli {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config schema

enum class Kind { integer, number, boolean, string, integer_array, number_array };

struct Field {
  std::string name;
  Kind kind;
  json def;  // null: optional with no default
  std::string description;
  std::optional<double> min{};
  std::optional<double> max{};
  bool exclusive_min = false;
  std::string pattern{};
};

constexpr const char* kLatticePattern = "^(triangular|z([2-9]|1[0-2]))$";

Field lattice_field(const char* def) {
  return {"lattice", Kind::string, def, "triangular (site) or zD (bond, D in 2..12)", {}, {}, false,
          kLatticePattern};
}
Field prob(const char* name, double def, const char* what) {
  return {name, Kind::number, def, what, 0.0, 1.0};
}
Field rate(const char* name, double def) {
  return {name, Kind::number, def, "refresh rate mu (<= 1/e unless allow_large_mu)", 0.0, {}, true};
}
Field count(const char* name, std::int64_t def, double min, const char* what) {
  return {name, Kind::integer, def, what, min};
}

std::vector<Field> common_fields() {
  return {
      {"seed", Kind::integer, 1, "master seed", 0.0},
      {"threads", Kind::integer, 0, "worker threads (0 = all cores); never changes results", 0.0},
      {"out", Kind::string, nullptr, "output directory"},
  };
}

const std::map<std::string, std::vector<Field>>& schemas() {
  static const std::map<std::string, std::vector<Field>> table = [] {
    std::map<std::string, std::vector<Field>> t;
    const Field allow{"allow_large_mu", Kind::boolean, false, "accept mu > 1/e"};
    const Field side{"side", Kind::integer, 0, "torus side (0 = infinite lattice)", 0.0};
    t["msd"] = {lattice_field("z2"), side, prob("p", 0.5, "open probability"), rate("mu", 0.1),
                {"t_max", Kind::number, 100.0, "largest checkpoint", 0.0, {}, true},
                count("checkpoints", 10, 1, "number of evenly spaced checkpoints up to t_max"),
                count("replicas", 1000, 2, "independent replicas"), allow};
    t["sigma-sweep"] = {lattice_field("z2"),
                        {"ps", Kind::number_array, json::array({0.25, 0.5, 0.8}),
                         "open probabilities", 0.0, 1.0},
                        {"mus", Kind::number_array, json::array({0.02, 0.05, 0.1, 0.2}),
                         "refresh rates", 0.0, {}, true},
                        {"t", Kind::number, 2000.0, "observation time", 0.0, {}, true},
                        count("checkpoints", 4, 1, "checkpoints up to t (stationarity diagnostic)"),
                        count("replicas", 2000, 100, "replicas per (p, mu)"), allow};
    t["onearm"] = {lattice_field("triangular"),
                   {"radii", Kind::integer_array, json::array({8, 16, 32, 64, 128, 256}),
                    "box radii", 1.0},
                   prob("p", 0.5, "open probability"),
                   {"critical_window", Kind::boolean, false, "use p = p_c + r^(-1/nu_tilde)"},
                   {"nu_tilde", Kind::number, 4.0 / 3.0, "window exponent", 0.0, {}, true},
                   {"window_compare", Kind::boolean, false,
                    "also sweep p_c + r^(-1/nu_tilde) and report the ratio to p_c"},
                   count("reps", 10000, 1, "trials per radius"),
                   {"fit_cutoff", Kind::number, 8.0, "smallest radius in the fit", 1.0},
                   {"expected_slope", Kind::number, nullptr, "slope target for --check"},
                   {"slope_tolerance", Kind::number, 0.02, "allowed |slope - target|", 0.0},
                   {"window_ratio_max", Kind::number, 3.0, "upper band of the window ratio", 1.0},
                   {"window_r_max", Kind::integer, 128, "largest radius in the window check", 1.0}};
    t["hcluster"] = {lattice_field("triangular"),
                     {"p_c", Kind::number, nullptr, "dynamics density (default: p_c)", 0.0, 1.0},
                     {"mus", Kind::number_array, json::array({0.05, 0.2}), "refresh rates", 0.0, {}, true},
                     {"ts", Kind::number_array, json::array({5.0, 20.0}), "time horizons", 0.0},
                     count("r", 16, 1, "box radius"), count("reps", 10000, 30, "trials per mode"),
                     {"alpha", Kind::number, 0.01, "p-value floor for --check", 0.0, 1.0}, allow};
    t["theta"] = {lattice_field("z2"),
                  {"sides", Kind::integer_array, json::array({32, 64, 128}), "torus sides", 4.0},
                  prob("p", 0.8, "open probability"), count("reps", 2000, 1, "configurations per side")};
    t["evolving-check"] = {{"sides", Kind::integer_array, json::array({4, 6}), "torus sides (<= 8)", 4.0, 8.0},
                           {"mus", Kind::number_array, json::array({0.05, 0.2}), "refresh rates", 0.0, {}, true},
                           {"ps", Kind::number_array, json::array({0.3, 0.5, 0.8}), "open probabilities", 0.0, 1.0},
                           count("dim", 2, 2, "dimension"),
                           count("instances", 200, 1, "random (trajectory, S) instances"), allow};
    t["df-check"] = {count("side", 4, 4, "torus side (<= 8)"), count("dim", 2, 2, "dimension"),
                     prob("p", 0.5, "open probability"), rate("mu", 0.2),
                     count("steps", 5, 1, "chain steps"), count("runs", 100000, 2, "coupled runs"),
                     {"z_max", Kind::number, 4.0, "allowed |z| for --check", 0.0}, allow};
    t["growth"] = {{"mode", Kind::string, "growth", "growth | good-times", {}, {}, false,
                    "^(growth|good-times)$"},
                   count("dim", 2, 2, "dimension"), count("side", 64, 4, "torus side"),
                   prob("p", 1.0, "open probability"), rate("mu", 0.1),
                   count("steps", 100, 2, "evolving-set steps"), count("runs", 200, 1, "runs"),
                   {"fit_from", Kind::number, 10.0, "first step in the exponent fit", 1.0},
                   {"theta_hat", Kind::number, nullptr, "theta estimate (default: estimated)", 0.0, 1.0},
                   count("theta_reps", 2000, 1, "configurations for the theta estimate"), allow};
    t["tail"] = {lattice_field("z2"), prob("p", 1.0, "open probability"), rate("mu", 0.1),
                 {"t", Kind::number, 100.0, "observation time", 0.0, {}, true},
                 count("replicas", 100000, 1000, "replicas"),
                 count("fit_lo", 10, 0, "smallest L in the fit"),
                 count("fit_hi", 40, 1, "largest L in the fit"),
                 {"r2_min", Kind::number, 0.95, "R^2 floor for --check", 0.0, 1.0}, allow};
    t["markov-type"] = {lattice_field("triangular"), prob("p", 0.5, "open probability"), rate("mu", 0.1),
                        {"s", Kind::number, 200.0, "base time", 0.0, {}, true},
                        {"ks", Kind::integer_array, json::array({2, 4, 8}), "time multipliers", 1.0},
                        count("replicas", 4000, 100, "replicas"),
                        {"ratio_bound", Kind::number, 3.0, "upper 95% bound limit for --check", 0.0}, allow};
    for (auto& [name, fields] : t) {
      for (const Field& f : common_fields()) fields.push_back(f);
    }
    return t;
  }();
  return table;
}

const std::vector<Field>& fields_of(const std::string& sub) {
  const auto it = schemas().find(sub);
  if (it == schemas().end()) throw ConfigError("unknown subcommand: " + sub);
  return it->second;
}

json field_schema(const Field& f) {
  json s;
  const bool integral = f.kind == Kind::integer || f.kind == Kind::integer_array;
  auto bound = [&](double v) { return integral ? json(static_cast<std::int64_t>(v)) : json(v); };
  auto bounds = [&](json& target) {
    if (f.min) target[f.exclusive_min ? "exclusiveMinimum" : "minimum"] = bound(*f.min);
    if (f.max) target["maximum"] = bound(*f.max);
  };
  switch (f.kind) {
    case Kind::integer: s["type"] = "integer"; bounds(s); break;
    case Kind::number: s["type"] = "number"; bounds(s); break;
    case Kind::boolean: s["type"] = "boolean"; break;
    case Kind::string:
      s["type"] = "string";
      if (!f.pattern.empty()) s["pattern"] = f.pattern;
      break;
    case Kind::integer_array:
    case Kind::number_array: {
      s["type"] = "array";
      s["minItems"] = 1;
      json items{{"type", f.kind == Kind::integer_array ? "integer" : "number"}};
      bounds(items);
      s["items"] = items;
      break;
    }
  }
  if (f.def.is_null()) {
    s["type"] = json::array({s["type"], "null"});
  } else {
    s["default"] = f.def;
  }
  s["description"] = f.description;
  return s;
}

bool matches_kind(const json& v, Kind k) {
  switch (k) {
    case Kind::integer: return v.is_number_integer();
    case Kind::number: return v.is_number();
    case Kind::boolean: return v.is_boolean();
    case Kind::string: return v.is_string();
    case Kind::integer_array:
    case Kind::number_array:
      if (!v.is_array() || v.empty()) return false;
      for (const auto& e : v) {
        if (!(k == Kind::integer_array ? e.is_number_integer() : e.is_number())) return false;
      }
      return true;
  }
  return false;
}

void check_bounds(const Field& f, const json& v) {
  const double x = v.get<double>();
  const bool low = f.min && (f.exclusive_min ? !(x > *f.min) : !(x >= *f.min));
  const bool high = f.max && !(x <= *f.max);
  if (low || high || !std::isfinite(x)) {
    throw ConfigError("config key '" + f.name + "': value " + v.dump() + " out of range");
  }
}

void validate_value(const Field& f, const json& v) {
  if (v.is_null()) {
    if (f.def.is_null()) return;
    throw ConfigError("config key '" + f.name + "' may not be null");
  }
  if (!matches_kind(v, f.kind)) throw ConfigError("config key '" + f.name + "' has the wrong type");
  if (v.is_number()) check_bounds(f, v);
  if (v.is_array()) {
    for (const auto& e : v) check_bounds(f, e);
  }
  if (v.is_string() && !f.pattern.empty() &&
      !std::regex_match(v.get<std::string>(), std::regex(f.pattern))) {
    throw ConfigError("config key '" + f.name + "': '" + v.get<std::string>() + "' not allowed");
  }
}

// Defaults, then the config file, then --param overrides; unknown keys rejected.
json resolve_config(const std::string& sub, const json& file_cfg, const json& overrides) {
  const auto& fields = fields_of(sub);
  json cfg = json::object();
  for (const Field& f : fields) cfg[f.name] = f.def;
  for (const json* layer : {&file_cfg, &overrides}) {
    for (const auto& [key, value] : layer->items()) {
      const auto it = std::find_if(fields.begin(), fields.end(), [&](const Field& f) { return f.name == key; });
      if (it == fields.end()) throw ConfigError("unknown config key '" + key + "' for " + sub);
      cfg[key] = value;
    }
  }
  for (const Field& f : fields) validate_value(f, cfg[f.name]);
  return cfg;
}

// ---------------------------------------------------------------------------
// Helpers

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

Lattice parse_lattice(const std::string& name, std::int64_t side = 0) {
  Lattice lat = name == "triangular" ? Lattice::triangular() : Lattice::hypercubic(std::stoi(name.substr(1)));
  if (side > 0) lat = lat.torus(static_cast<int>(side));
  return lat;
}

EnvParams env_from(const json& c, const Lattice& lat, double p, double mu) {
  EnvParams e;
  e.lattice = lat;
  e.p = p;
  e.mu = mu;
  e.allow_large_mu = c.value("allow_large_mu", false);
  e.validate();
  return e;
}

template <class T>
std::vector<T> vec(const json& v) {
  return v.get<std::vector<T>>();
}

std::vector<double> even_checkpoints(double t_max, std::int64_t n) {
  std::vector<double> out;
  for (std::int64_t i = 1; i <= n; ++i) out.push_back(t_max * static_cast<double>(i) / static_cast<double>(n));
  return out;
}

std::string regime_of(double p, double pc) {
  if (p < pc) return "subcritical";
  if (p > pc) return "supercritical";
  return "critical";
}

struct Context {
  std::string sub;
  json cfg;
  fs::path out_dir;
  bool check = false;
  bool svg = false;
  bool dump_env = false;
  int threads = 0;
  std::uint64_t seed = 1;
  std::vector<std::pair<std::string, std::string>> files;  // name, bytes
  json summary = json::object();
  std::vector<std::string> failures;
  std::ostream* out = nullptr;

  void emit(const std::string& name, std::string bytes) { files.emplace_back(name, std::move(bytes)); }
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
    if (check) *out << (ok ? "CHECK PASS " : "CHECK FAIL ") << what << '\n';
  }
  void chart(const std::string& name, std::vector<io::Series> series, const io::SvgOptions& opt) {
    if (svg) emit(name, io::render_svg(series, opt));
  }
};

// ---------------------------------------------------------------------------
// Subcommands

void cmd_msd(Context& ctx) {
  const json& c = ctx.cfg;
  MsdConfig mc;
  mc.env = env_from(c, parse_lattice(c["lattice"], c["side"]), c["p"], c["mu"]);
  mc.checkpoints = even_checkpoints(c["t_max"], c["checkpoints"]);
  mc.replicas = c["replicas"];
  mc.seed = ctx.seed;
  mc.threads = ctx.threads;
  const ReplicaSamples samples = run_walk_replicas(mc);
  const MsdTable table = aggregate_msd(mc, samples);
  ctx.emit("msd.csv", table.to_csv());
  io::Series g{"graph distance", {}, {}}, e{"euclidean", {}, {}};
  for (const auto& row : table.rows) {
    g.x.push_back(row.t);
    g.y.push_back(row.mean_sq_graph);
    e.x.push_back(row.t);
    e.y.push_back(row.mean_sq_l2);
  }
  ctx.chart("msd.svg", {g, e}, {"mean squared displacement", "t", "MSD", false, false, ""});
  const MsdRow& last = table.rows.back();
  ctx.summary["mean_sq_graph_at_t_max"] = last.mean_sq_graph;
  if (mc.replicas >= 100 && last.t > 0.0) ctx.summary["sigma2"] = sigma_hat(table).sigma2;

  bool bounded = true;
  for (std::size_t i = 0; i < samples.dist.size(); ++i) {
    bounded = bounded && static_cast<std::uint64_t>(samples.dist[i]) <= samples.attempts[i];
  }
  ctx.expect(bounded, "dist(0, X_t) <= N_t for every replica");
  if (mc.env.p == 0.0) ctx.expect(last.mean_sq_graph == 0.0, "p = 0 walker never moves");
  if (mc.env.p == 1.0 && !mc.env.lattice.is_torus() && !mc.env.lattice.is_triangular()) {
    ctx.expect(std::abs(last.mean_sq_l2 - last.t) <= 4.0 * last.stderr_l2 + 1e-12,
               "p = 1 squared Euclidean norm within 4 stderr of t");
  }

  if (ctx.dump_env) {
    const StreamKey key{ctx.seed, {0}};
    if (mc.env.lattice.is_torus()) {
      const TorusTrajectory traj = torus_trajectory(mc.env, 0.0, mc.t_max(), key);
      std::ostringstream ev;
      traj.write_events_csv(ev);
      ctx.emit("env_events.csv", ev.str());
      ctx.emit("env_initial.txt", traj.initial_bitset() + "\n");
    } else {
      // Replays replica 0 and logs every environment query.
      struct Recorder {
        LazyEnvironment env;
        const Lattice* lat;
        std::ostringstream log;
        bool query(const Unit& u, double t) {
          const bool open = env.query(u, t);
          log << fmt(t) << ',';
          for (int i = 0; i < lat->dim(); ++i) log << (i ? ":" : "") << u.base[i];
          log << ':' << u.dir << ',' << (open ? 1 : 0) << '\n';
          return open;
        }
      } rec{LazyEnvironment(mc.env, key), &mc.env.lattice, {}};
      rec.log << "time,unit,state\n";
      Stream walk = derive_stream(key.child(Purpose::walk));
      simulate_walk(mc.env.lattice, rec, mc.t_max(), mc.checkpoints, walk);
      ctx.emit("env_events.csv", rec.log.str());
    }
  }
}

void cmd_sigma_sweep(Context& ctx) {
  const json& c = ctx.cfg;
  const Lattice lat = parse_lattice(c["lattice"]);
  const double pc = critical_probability(lat);
  const auto ps = vec<double>(c["ps"]);
  const auto mus = vec<double>(c["mus"]);
  std::ostringstream csv, fit_csv;
  csv << "lattice,p,regime,mu,t,replicas,sigma2,ci_lo,ci_hi,sigma2_l2,slope_diag\n";
  fit_csv << "lattice,p,regime,slope,stderr,r2,max_over_min,min_sigma2,increasing\n";
  std::vector<io::Series> series;
  for (double p : ps) {
    std::vector<double> sig;
    io::Series s{"p=" + fmt(p), {}, {}};
    for (double mu : mus) {
      MsdConfig mc;
      mc.env = env_from(c, lat, p, mu);
      mc.checkpoints = even_checkpoints(c["t"], c["checkpoints"]);
      mc.replicas = c["replicas"];
      mc.seed = ctx.seed;
      mc.threads = ctx.threads;
      const SigmaEstimate est = sigma_hat(msd_experiment(mc));
      csv << lattice_name(lat) << ',' << fmt(p) << ',' << regime_of(p, pc) << ',' << fmt(mu) << ','
          << fmt(est.t) << ',' << mc.replicas << ',' << fmt(est.sigma2) << ',' << fmt(est.lo) << ','
          << fmt(est.hi) << ',' << fmt(est.sigma2_l2) << ','
          << (std::isfinite(est.slope_diagnostic) ? fmt(est.slope_diagnostic) : "nan") << '\n';
      sig.push_back(est.sigma2);
      if (est.sigma2 > 0.0) {
        s.x.push_back(mu);
        s.y.push_back(est.sigma2);
      }
    }
    const double mx = *std::max_element(sig.begin(), sig.end());
    const double mn = *std::min_element(sig.begin(), sig.end());
    bool increasing = true;
    for (std::size_t i = 1; i < sig.size(); ++i) increasing = increasing && sig[i] > sig[i - 1];
    stats::FitResult fit;
    const bool fitted = mus.size() >= 2 && mn > 0.0;
    if (fitted) fit = stats::loglog_fit(mus, sig);
    const std::string regime = regime_of(p, pc);
    fit_csv << lattice_name(lat) << ',' << fmt(p) << ',' << regime << ','
            << (fitted ? fmt(fit.slope) : "nan") << ',' << (fitted ? fmt(fit.stderr_slope) : "nan")
            << ',' << (fitted ? fmt(fit.r2) : "nan") << ',' << (mn > 0.0 ? fmt(mx / mn) : "inf") << ','
            << fmt(mn) << ',' << (increasing ? 1 : 0) << '\n';
    const std::string tag = "p=" + fmt(p) + " (" + regime + ")";
    if (regime == "subcritical") {
      ctx.expect(fitted && fit.slope >= 0.8 && fit.slope <= 1.2,
                 tag + ": loglog slope of sigma2 vs mu in [0.8, 1.2] (got " + fmt(fit.slope) + ")");
    } else if (regime == "supercritical") {
      ctx.expect(mn > 0.0 && mx / mn <= 1.5 && mn >= 0.05,
                 tag + ": max/min sigma2 <= 1.5 and min >= 0.05 (got " + fmt(mn > 0 ? mx / mn : 0) +
                     ", " + fmt(mn) + ")");
    } else {
      ctx.expect(increasing && fitted && fit.slope > 0.05 && fit.slope < 1.0,
                 tag + ": sigma2 increasing with loglog slope in (0.05, 1) (got " + fmt(fit.slope) + ")");
    }
    if (!s.x.empty()) series.push_back(std::move(s));
  }
  ctx.emit("sigma.csv", csv.str());
  ctx.emit("sigma_fit.csv", fit_csv.str());
  if (!series.empty()) ctx.chart("sigma.svg", series, {"diffusion constant", "mu", "sigma^2", true, true, ""});
}

void cmd_onearm(Context& ctx) {
  const json& c = ctx.cfg;
  OneArmConfig oc;
  oc.lattice = parse_lattice(c["lattice"]);
  oc.radii = vec<std::int64_t>(c["radii"]);
  oc.p = c["p"];
  oc.critical_window = c["critical_window"];
  oc.nu_tilde = c["nu_tilde"];
  oc.reps = c["reps"];
  oc.seed = ctx.seed;
  oc.threads = ctx.threads;
  oc.fit_cutoff = c["fit_cutoff"];
  const OneArmResult res = one_arm_sweep(oc);
  ctx.emit("onearm.csv", res.to_csv());
  ctx.emit("onearm_fit.json", res.fit_json() + "\n");
  io::Series s{"P(0 <-> boundary of B_r)", {}, {}};
  for (const auto& row : res.rows) {
    if (row.successes > 0) {
      s.x.push_back(static_cast<double>(row.r));
      s.y.push_back(row.ci.phat);
    }
  }
  if (!s.x.empty()) {
    ctx.chart("onearm.svg", {s},
              {"one-arm probability", "r", "phat", true, true,
               res.fitted ? "fitted slope " + fmt(res.fit.slope) + " +/- " + fmt(res.fit.stderr_slope) : ""});
  }
  if (res.fitted) ctx.summary["slope"] = res.fit.slope;
  if (ctx.check) {
    std::optional<double> target;
    if (!c["expected_slope"].is_null()) {
      target = c["expected_slope"].get<double>();
    } else if (oc.lattice.is_triangular() && !oc.critical_window && oc.p == 0.5) {
      target = -5.0 / 48.0;
    }
    if (!target && !c["window_compare"].get<bool>()) {
      throw ConfigError("--check needs expected_slope for this lattice/p");
    }
    if (target) {
      const double tol = c["slope_tolerance"];
      ctx.expect(res.fitted && std::abs(res.fit.slope - *target) <= tol,
                 "one-arm slope " + fmt(res.fit.slope) + " within " + fmt(tol) + " of " + fmt(*target));
    }
  }
  if (c["window_compare"].get<bool>()) {
    OneArmConfig wc = oc;
    wc.critical_window = true;
    const OneArmResult win = one_arm_sweep(wc);
    std::ostringstream csv;
    csv << "r,p_window,phat_base,phat_window,ratio\n";
    const double band = c["window_ratio_max"];
    const std::int64_t rmax = c["window_r_max"];
    bool ok = true;
    for (std::size_t i = 0; i < res.rows.size(); ++i) {
      const double base = res.rows[i].ci.phat;
      const double ratio = base > 0.0 ? win.rows[i].ci.phat / base
                                      : std::numeric_limits<double>::infinity();
      csv << res.rows[i].r << ',' << fmt(win.rows[i].p) << ',' << fmt(base) << ','
          << fmt(win.rows[i].ci.phat) << ',' << fmt(ratio) << '\n';
      if (res.rows[i].r <= rmax) ok = ok && ratio >= 1.0 && ratio <= band;
    }
    ctx.emit("onearm_window.csv", csv.str());
    ctx.expect(ok, "window/base one-arm ratio in [1, " + fmt(band) + "] for r <= " + std::to_string(rmax));
  }
}

void cmd_hcluster(Context& ctx) {
  const json& c = ctx.cfg;
  const Lattice lat = parse_lattice(c["lattice"]);
  const double pc = c["p_c"].is_null() ? critical_probability(lat) : c["p_c"].get<double>();
  const double alpha = c["alpha"];
  std::ostringstream csv;
  csv << "mu,t,r,p_static,trials,dynamical_successes,static_successes,z,p_value\n";
  double min_p = 1.0;
  std::uint64_t cell = 0;
  for (double mu : vec<double>(c["mus"])) {
    env_from(c, lat, pc, mu);
    for (double t : vec<double>(c["ts"])) {
      const auto r = c["r"].get<std::int64_t>();
      // Cells with equal mu * t share a law; separate keys keep them independent.
      const HClusterResult h = h_cluster_experiment(lat, pc, mu, t, r, c["reps"],
                                                    derive_key(ctx.seed, cell++), ctx.threads);
      csv << fmt(mu) << ',' << fmt(t) << ',' << r << ',' << fmt(ever_open_params(pc, mu, t)) << ','
          << h.trials << ',' << h.dynamical_successes << ',' << h.static_successes << ','
          << fmt(h.test.statistic) << ',' << fmt(h.test.p_value) << '\n';
      min_p = std::min(min_p, h.test.p_value);
    }
  }
  ctx.emit("hcluster.csv", csv.str());
  ctx.summary["min_p_value"] = min_p;
  ctx.expect(min_p > alpha, "all two-proportion p-values > " + fmt(alpha) + " (min " + fmt(min_p) + ")");
}

void cmd_theta(Context& ctx) {
  const json& c = ctx.cfg;
  const Lattice base = parse_lattice(c["lattice"]);
  std::ostringstream csv;
  csv << "side,p,trials,successes,theta,ci_lo,ci_hi\n";
  io::Series s{"theta", {}, {}};
  std::vector<ThetaRow> rows;
  for (auto side : vec<std::int64_t>(c["sides"])) {
    const ThetaRow th = theta_estimate(base.torus(static_cast<int>(side)), c["p"], c["reps"], ctx.seed, ctx.threads);
    csv << side << ',' << fmt(th.p) << ',' << th.trials << ',' << th.successes << ',' << fmt(th.ci.phat)
        << ',' << fmt(th.ci.lo) << ',' << fmt(th.ci.hi) << '\n';
    s.x.push_back(static_cast<double>(side));
    s.y.push_back(th.ci.phat);
    rows.push_back(th);
  }
  ctx.emit("theta.csv", csv.str());
  ctx.chart("theta.svg", {s}, {"largest-cluster density", "L", "theta", true, false, ""});
  // Stabilization: the two largest sides agree within their intervals.
  if (rows.size() >= 2) {
    const ThetaRow& a = rows[rows.size() - 2];
    const ThetaRow& b = rows.back();
    ctx.expect(a.ci.lo <= b.ci.hi && b.ci.lo <= a.ci.hi, "theta intervals of the two largest sides overlap");
  }
}

void cmd_evolving_check(Context& ctx) {
  const json& c = ctx.cfg;
  EvolvingCheckConfig ec;
  ec.sides = vec<int>(c["sides"]);
  ec.mus = vec<double>(c["mus"]);
  ec.ps = vec<double>(c["ps"]);
  ec.dim = c["dim"];
  ec.instances = c["instances"];
  ec.seed = ctx.seed;
  ec.threads = ctx.threads;
  for (double mu : ec.mus) env_from(c, Lattice::hypercubic(ec.dim), 0.5, mu);
  const EvolvingCheckResult res = evolving_check(ec);
  ctx.emit("evolving_check.csv", res.to_csv());
  std::int64_t drift_fail = 0, phi_fail = 0;
  double gap = 0.0;
  for (const auto& r : res.rows) {
    drift_fail += !r.drift_pass;
    phi_fail += !r.phi_pass;
    gap = std::max(gap, r.martingale_gap);
  }
  ctx.summary["drift_failures"] = drift_fail;
  ctx.summary["phi_failures"] = phi_fail;
  ctx.summary["max_martingale_gap"] = gap;
  ctx.expect(drift_fail == 0, "drift inequality on every instance");
  ctx.expect(phi_fail == 0, "Phi lower bound on every instance");
  ctx.expect(gap <= 1e-10, "plain martingale identity within 1e-10");
}

void cmd_df_check(Context& ctx) {
  const json& c = ctx.cfg;
  DfCheckConfig dc;
  dc.side = c["side"];
  dc.dim = c["dim"];
  dc.p = c["p"];
  dc.mu = c["mu"];
  dc.steps = c["steps"];
  dc.runs = c["runs"];
  dc.seed = ctx.seed;
  dc.threads = ctx.threads;
  env_from(c, Lattice::hypercubic(dc.dim), dc.p, dc.mu);
  const DfCheckResult res = df_check(dc);
  ctx.emit("df_check.csv", res.to_csv());
  ctx.summary["steps_taken"] = res.steps_taken;
  ctx.summary["membership_violations"] = res.membership_violations;
  ctx.expect(res.membership_violations == 0, "walker in its set after every step");
  const double zmax = c["z_max"];
  for (const auto& row : res.rows) {
    ctx.expect(std::abs(row.z) <= zmax, "estimators agree for " + row.f + " (z = " + fmt(row.z) + ")");
  }
}

void cmd_growth(Context& ctx) {
  const json& c = ctx.cfg;
  const Lattice torus = Lattice::hypercubic(c["dim"]).torus(c["side"]);
  env_from(c, torus, c["p"], c["mu"]);
  if (c["mode"] == "growth") {
    GrowthConfig gc;
    gc.torus = torus;
    gc.p = c["p"];
    gc.mu = c["mu"];
    gc.steps = c["steps"];
    gc.runs = c["runs"];
    gc.seed = ctx.seed;
    gc.threads = ctx.threads;
    gc.fit_from = c["fit_from"];
    const GrowthResult g = growth_experiment(gc);
    ctx.emit("growth.csv", g.to_csv());
    std::ostringstream fit;
    fit << "slope,stderr,r2,c1,c2\n"
        << fmt(g.fit.slope) << ',' << fmt(g.fit.stderr_slope) << ',' << fmt(g.fit.r2) << ','
        << fmt(g.c1) << ',' << fmt(g.c2) << '\n';
    ctx.emit("growth_fit.csv", fit.str());
    io::Series s{"mean |S_m|", {}, {}};
    for (const auto& row : g.rows) {
      if (row.m >= 1) {
        s.x.push_back(static_cast<double>(row.m));
        s.y.push_back(row.size_mean);
      }
    }
    ctx.chart("growth.svg", {s}, {"evolving-set growth", "m", "|S_m|", true, true,
                                  "fitted slope " + fmt(g.fit.slope)});
    const double half_d = torus.dim() / 2.0;
    ctx.summary["slope"] = g.fit.slope;
    ctx.expect(g.fit.slope >= 0.8 * half_d && g.fit.slope <= 1.2 * half_d,
               "growth exponent " + fmt(g.fit.slope) + " within [0.8, 1.2] * d/2");
    ctx.expect(g.c2 > 0.0, "P(|S_n| > c1 n^(d/2)) > 0");
    return;
  }
  SupercriticalConfig sc;
  sc.torus = torus;
  sc.p = c["p"];
  sc.mu = c["mu"];
  sc.steps = c["steps"];
  sc.runs = c["runs"];
  sc.seed = ctx.seed;
  sc.threads = ctx.threads;
  sc.theta_hat = c["theta_hat"].is_null() ? 0.0 : c["theta_hat"].get<double>();
  sc.theta_reps = c["theta_reps"];
  const SupercriticalResult r = supercritical_runs(sc);
  std::ostringstream runs, summary;
  runs << "run,good_fraction,excellent_fraction,final_size\n";
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    runs << i << ',' << fmt(r.runs[i].scan.good_fraction) << ',' << fmt(r.runs[i].scan.excellent_fraction)
         << ',' << r.runs[i].sizes.back() << '\n';
  }
  summary << "theta_hat,runs,frac_good_runs,frac_good_runs_se,mean_good_fraction,mean_excellent_fraction\n"
          << fmt(r.theta_hat) << ',' << r.runs.size() << ',' << fmt(r.frac_good_runs) << ','
          << fmt(r.frac_good_runs_se) << ',' << fmt(r.mean_good_fraction) << ','
          << fmt(r.mean_excellent_fraction) << '\n';
  ctx.emit("good_times.csv", runs.str());
  ctx.emit("good_times_summary.csv", summary.str());
  ctx.summary["theta_hat"] = r.theta_hat;
  ctx.summary["frac_good_runs"] = r.frac_good_runs;
  ctx.expect(r.frac_good_runs >= r.theta_hat / 4.0 - 2.0 * r.frac_good_runs_se,
             "P(good fraction > theta/4) = " + fmt(r.frac_good_runs) + " >= theta/4 - 2 se");
}

void cmd_tail(Context& ctx) {
  const json& c = ctx.cfg;
  MsdConfig mc;
  mc.env = env_from(c, parse_lattice(c["lattice"]), c["p"], c["mu"]);
  mc.checkpoints = {c["t"].get<double>()};
  mc.replicas = c["replicas"];
  mc.seed = ctx.seed;
  mc.threads = ctx.threads;
  const ReplicaSamples samples = run_walk_replicas(mc);
  const std::int64_t lo = c["fit_lo"], hi = c["fit_hi"];
  if (hi <= lo) throw ConfigError("fit_hi must exceed fit_lo");
  std::vector<std::int64_t> grid;
  for (std::int64_t L = 0; L <= hi; ++L) grid.push_back(L);
  const auto rows = tail_survival(samples.dist, grid);
  std::ostringstream csv;
  csv << "L,count,n,survival,ci_lo,ci_hi\n";
  io::Series s{"P(dist >= L)", {}, {}};
  for (const auto& r : rows) {
    csv << r.L << ',' << r.count << ',' << r.n << ',' << fmt(r.survival.phat) << ','
        << fmt(r.survival.lo) << ',' << fmt(r.survival.hi) << '\n';
    if (r.count > 0) {
      s.x.push_back(static_cast<double>(r.L * r.L));
      s.y.push_back(r.survival.phat);
    }
  }
  const stats::FitResult fit = tail_fit(rows, lo, hi);
  std::ostringstream fcsv;
  fcsv << "fit_lo,fit_hi,slope,intercept,r2,n_points\n"
       << lo << ',' << hi << ',' << fmt(fit.slope) << ',' << fmt(fit.intercept) << ',' << fmt(fit.r2)
       << ',' << fit.n_points << '\n';
  ctx.emit("tail.csv", csv.str());
  ctx.emit("tail_fit.csv", fcsv.str());
  ctx.chart("tail.svg", {s}, {"displacement tail", "L^2", "survival", false, true, "R^2 " + fmt(fit.r2)});
  ctx.summary["r2"] = fit.r2;
  const double r2min = c["r2_min"];
  ctx.expect(fit.r2 > r2min, "log-survival vs L^2 R^2 = " + fmt(fit.r2) + " > " + fmt(r2min));
}

void cmd_markov_type(Context& ctx) {
  const json& c = ctx.cfg;
  MsdConfig mc;
  mc.env = env_from(c, parse_lattice(c["lattice"]), c["p"], c["mu"]);
  mc.replicas = c["replicas"];
  mc.seed = ctx.seed;
  mc.threads = ctx.threads;
  const auto ks = vec<int>(c["ks"]);
  const double s = c["s"];
  const auto rows = markov_type_check(mc, ks, s);
  std::ostringstream csv;
  csv << "k,s,ratio,ci_lo,ci_hi\n";
  io::Series ser{"MSD(ks)/(k MSD(s))", {}, {}};
  const double bound = c["ratio_bound"];
  for (const auto& r : rows) {
    csv << r.k << ',' << fmt(s) << ',' << fmt(r.ratio) << ',' << fmt(r.lo) << ',' << fmt(r.hi) << '\n';
    ser.x.push_back(r.k);
    ser.y.push_back(r.ratio);
    ctx.expect(r.hi <= bound, "k = " + std::to_string(r.k) + ": upper 95% bound " + fmt(r.hi) +
                                  " <= " + fmt(bound));
  }
  ctx.emit("markov_type.csv", csv.str());
  ctx.chart("markov_type.svg", {ser}, {"Markov type ratios", "k", "ratio", true, false, ""});
}

const std::map<std::string, std::pair<std::function<void(Context&)>, std::string>>& commands() {
  static const std::map<std::string, std::pair<std::function<void(Context&)>, std::string>> table = {
      {"msd", {cmd_msd, "mean squared displacement over time"}},
      {"sigma-sweep", {cmd_sigma_sweep, "diffusion constant over (p, mu)"}},
      {"onearm", {cmd_onearm, "one-arm probability sweep over radii"}},
      {"hcluster", {cmd_hcluster, "ever-open subgraph vs static percolation"}},
      {"theta", {cmd_theta, "largest-cluster density on tori"}},
      {"evolving-check", {cmd_evolving_check, "exact drift and Phi inequalities"}},
      {"df-check", {cmd_df_check, "Diaconis-Fill uniformity"}},
      {"growth", {cmd_growth, "evolving-set growth and good/excellent times"}},
      {"tail", {cmd_tail, "displacement tail envelope"}},
      {"markov-type", {cmd_markov_type, "MSD(ks) / (k MSD(s)) ratios"}},
  };
  return table;
}

std::string version_string() {
  std::string v = DYNPERC_VERSION;
  const std::string rev = DYNPERC_GIT_REV;
  if (!rev.empty()) v += "+g" + rev;
  return v;
}

json parse_param_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

}  // namespace

std::vector<std::string> subcommands() {
  std::vector<std::string> out;
  for (const auto& [name, entry] : commands()) out.push_back(name);
  return out;
}

std::vector<std::string> config_keys(const std::string& subcommand) {
  std::vector<std::string> out;
  for (const Field& f : fields_of(subcommand)) out.push_back(f.name);
  return out;
}

std::string config_schema() {
  json schema;
  schema["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  schema["title"] = "dynperc experiment configuration";
  schema["description"] = "One object per subcommand; unknown keys are rejected.";
  json defs = json::object();
  for (const auto& [name, fields] : schemas()) {
    json obj{{"type", "object"}, {"additionalProperties", false}};
    json props = json::object();
    for (const Field& f : fields) props[f.name] = field_schema(f);
    obj["properties"] = props;
    defs[name] = obj;
  }
  schema["$defs"] = defs;
  return schema.dump(2) + "\n";
}

std::vector<std::pair<std::string, std::string>> csv_headers(const std::string& sub) {
  static const std::map<std::string, std::vector<std::pair<std::string, std::string>>> table = {
      {"msd", {{"msd.csv", MsdTable::kCsvHeader}, {"env_events.csv", "time,unit,state"}}},
      {"sigma-sweep",
       {{"sigma.csv", "lattice,p,regime,mu,t,replicas,sigma2,ci_lo,ci_hi,sigma2_l2,slope_diag"},
        {"sigma_fit.csv", "lattice,p,regime,slope,stderr,r2,max_over_min,min_sigma2,increasing"}}},
      {"onearm",
       {{"onearm.csv", OneArmResult::kCsvHeader}, {"onearm_window.csv", "r,p_window,phat_base,phat_window,ratio"}}},
      {"hcluster", {{"hcluster.csv", "mu,t,r,p_static,trials,dynamical_successes,static_successes,z,p_value"}}},
      {"theta", {{"theta.csv", "side,p,trials,successes,theta,ci_lo,ci_hi"}}},
      {"evolving-check", {{"evolving_check.csv", EvolvingCheckResult::kCsvHeader}}},
      {"df-check", {{"df_check.csv", DfCheckResult::kCsvHeader}}},
      {"growth",
       {{"growth.csv", GrowthResult::kCsvHeader},
        {"growth_fit.csv", "slope,stderr,r2,c1,c2"},
        {"good_times.csv", "run,good_fraction,excellent_fraction,final_size"},
        {"good_times_summary.csv",
         "theta_hat,runs,frac_good_runs,frac_good_runs_se,mean_good_fraction,mean_excellent_fraction"}}},
      {"tail", {{"tail.csv", "L,count,n,survival,ci_lo,ci_hi"}, {"tail_fit.csv", "fit_lo,fit_hi,slope,intercept,r2,n_points"}}},
      {"markov-type", {{"markov_type.csv", "k,s,ratio,ci_lo,ci_hi"}}},
  };
  const auto it = table.find(sub);
  if (it == table.end()) throw std::invalid_argument("unknown subcommand: " + sub);
  return it->second;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamical percolation experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string());

  struct Flags {
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string config;
    std::string out;
    std::vector<std::string> params;
    bool check = false;
    bool svg = false;
    bool dump_env = false;
    bool allow_large_mu = false;
  } flags;

  bool print_schema = false;
  auto* schema_cmd = app.add_subcommand("schema", "print the config JSON schema");
  schema_cmd->callback([&] { print_schema = true; });
  for (const auto& [name, entry] : commands()) {
    auto* sc = app.add_subcommand(name, entry.second);
    sc->add_option("--seed", flags.seed, "master seed (overrides config)");
    sc->add_option("--threads", flags.threads, "worker threads (0 = all cores)");
    sc->add_option("--config", flags.config, "JSON config file")->check(CLI::ExistingFile);
    sc->add_option("--out", flags.out, "output directory (overrides DYNPERC_OUT_DIR and config)");
    sc->add_option("--param", flags.params, "config override key=value (value parsed as JSON)");
    sc->add_flag("--check", flags.check, "evaluate acceptance checks; exit 3 on failure");
    sc->add_flag("--svg", flags.svg, "also write SVG charts");
    sc->add_flag("--allow-large-mu", flags.allow_large_mu, "accept mu > 1/e");
    if (name == "msd") sc->add_flag("--dump-env", flags.dump_env, "dump replica 0's environment");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << version_string() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (print_schema) {
    out << config_schema();
    return kExitOk;
  }

  Context ctx;
  ctx.out = &out;
  ctx.sub = app.get_subcommands().front()->get_name();
  try {
    json file_cfg = json::object();
    if (!flags.config.empty()) {
      try {
        file_cfg = json::parse(io::read_text(flags.config));
      } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
      }
      if (!file_cfg.is_object()) throw ConfigError("config must be a JSON object");
    }
    json overrides = json::object();
    for (const std::string& kv : flags.params) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--param expects key=value, got '" + kv + "'");
      overrides[kv.substr(0, eq)] = parse_param_value(kv.substr(eq + 1));
    }
    // Flags win over both the file and --param.
    if (flags.seed) overrides["seed"] = *flags.seed;
    if (flags.threads) overrides["threads"] = *flags.threads;
    if (flags.allow_large_mu) {
      const auto keys = config_keys(ctx.sub);
      if (std::find(keys.begin(), keys.end(), "allow_large_mu") != keys.end()) overrides["allow_large_mu"] = true;
    }
    ctx.cfg = resolve_config(ctx.sub, file_cfg, overrides);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  ctx.seed = ctx.cfg["seed"].get<std::uint64_t>();
  ctx.threads = ctx.cfg["threads"].get<int>();
  ctx.check = flags.check;
  ctx.svg = flags.svg;
  ctx.dump_env = flags.dump_env;
  if (!flags.out.empty()) {
    ctx.out_dir = flags.out;
  } else if (const char* env = std::getenv("DYNPERC_OUT_DIR"); env && *env) {
    ctx.out_dir = env;
  } else if (!ctx.cfg["out"].is_null()) {
    ctx.out_dir = ctx.cfg["out"].get<std::string>();
  } else {
    ctx.out_dir = fs::path("out") / ctx.sub;
  }

  const auto start = std::chrono::steady_clock::now();
  try {
    commands().at(ctx.sub).first(ctx);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Unsupported& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  // Data-affecting config only: threads and the output location never change results.
  json hashed = ctx.cfg;
  hashed.erase("threads");
  hashed.erase("out");
  json manifest;
  manifest["subcommand"] = ctx.sub;
  manifest["version"] = version_string();
  manifest["config"] = ctx.cfg;
  manifest["config_hash"] = io::hex64(io::fnv1a64(ctx.sub + "\n" + hashed.dump()));
  manifest["seed"] = ctx.seed;
  manifest["threads"] = ctx.threads;
  manifest["out_dir"] = ctx.out_dir.string();
  manifest["wall_time_seconds"] = wall;
  manifest["summary"] = ctx.summary;
  json files = json::object();
  try {
    for (const auto& [name, bytes] : ctx.files) {
      io::write_text(ctx.out_dir / name, bytes);
      files[name] = {{"fnv1a64", io::hex64(io::fnv1a64(bytes))}, {"bytes", bytes.size()}};
    }
    manifest["files"] = files;
    if (ctx.check) {
      manifest["checks"] = {{"passed", ctx.failures.empty()}, {"failures", ctx.failures}};
    }
    io::write_text(ctx.out_dir / "manifest.json", manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  out << ctx.sub << ": wrote " << ctx.files.size() << " file(s) to " << ctx.out_dir.string() << " in "
      << fmt(wall) << " s\n";
  for (const auto& [k, v] : ctx.summary.items()) out << "  " << k << " = " << v.dump() << '\n';
  if (ctx.check && !ctx.failures.empty()) return kExitCheck;
  return kExitOk;
}

}  // namespace dynperc::cli
