#include "dynperc/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dynperc::io {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

constexpr double kWidth = 800.0, kHeight = 600.0;
constexpr double kLeft = 90.0, kRight = 200.0, kTop = 50.0, kBottom = 70.0;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Axis {
  bool log;
  double lo, hi;  // in transformed units
  double map(double v) const { return log ? std::log10(v) : v; }
};

Axis make_axis(std::span<const Series> series, bool log, bool is_x) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const Series& s : series) {
    for (double v : is_x ? s.x : s.y) {
      if (!std::isfinite(v)) continue;
      if (log && v <= 0.0) throw std::invalid_argument("render_svg: nonpositive value on a log axis");
      const double t = log ? std::log10(v) : v;
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
  }
  if (!std::isfinite(lo)) throw std::invalid_argument("render_svg: no finite points");
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  } else {
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  return {log, lo, hi};
}

std::vector<double> ticks(const Axis& a) {
  std::vector<double> out;  // transformed positions
  if (a.log) {
    for (double d = std::ceil(a.lo); d <= a.hi; d += 1.0) out.push_back(d);
    if (out.size() >= 2) return out;
    out.clear();
  }
  const double span = a.hi - a.lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {2.0, 5.0, 10.0}) {
    if (raw / mag > m * 0.75) step = mag * m;
  }
  for (double t = std::ceil(a.lo / step) * step; t <= a.hi; t += step) out.push_back(t);
  return out;
}

}  // namespace

std::string render_svg(std::span<const Series> series, const SvgOptions& opt) {
  std::size_t points = 0;
  for (const Series& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("render_svg: x/y length mismatch");
    points += s.x.size();
  }
  if (points == 0) throw std::invalid_argument("render_svg: no points");
  const Axis ax = make_axis(series, opt.log_x, true);
  const Axis ay = make_axis(series, opt.log_y, false);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (ax.map(v) - ax.lo) / (ax.hi - ax.lo) * pw; };
  auto py = [&](double v) { return kTop + ph - (ay.map(v) - ay.lo) / (ay.hi - ay.lo) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 600\" width=\"800\" height=\"600\""
       " font-family=\"sans-serif\" font-size=\"13\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"600\" fill=\"white\"/>\n";
  o << "<text class=\"title\" x=\"" << num(kLeft + pw / 2) << "\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">"
    << escape(opt.title) << "</text>\n";
  o << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\""
    << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ticks(ax)) {
    const double x = kLeft + (t - ax.lo) / (ax.hi - ax.lo) * pw;
    o << "<line x1=\"" << num(x) << "\" y1=\"" << num(kTop + ph) << "\" x2=\"" << num(x) << "\" y2=\""
      << num(kTop + ph + 6) << "\" stroke=\"black\"/>\n";
    o << "<text class=\"tick\" x=\"" << num(x) << "\" y=\"" << num(kTop + ph + 22)
      << "\" text-anchor=\"middle\">" << tick_label(ax.log ? std::pow(10.0, t) : t) << "</text>\n";
  }
  for (double t : ticks(ay)) {
    const double y = kTop + ph - (t - ay.lo) / (ay.hi - ay.lo) * ph;
    o << "<line x1=\"" << num(kLeft - 6) << "\" y1=\"" << num(y) << "\" x2=\"" << num(kLeft) << "\" y2=\""
      << num(y) << "\" stroke=\"black\"/>\n";
    o << "<text class=\"tick\" x=\"" << num(kLeft - 10) << "\" y=\"" << num(y + 4)
      << "\" text-anchor=\"end\">" << tick_label(ay.log ? std::pow(10.0, t) : t) << "</text>\n";
  }
  o << "<text class=\"xlabel\" x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 20)
    << "\" text-anchor=\"middle\">" << escape(opt.x_label) << (opt.log_x ? " (log)" : "") << "</text>\n";
  o << "<text class=\"ylabel\" transform=\"translate(22," << num(kTop + ph / 2)
    << ") rotate(-90)\" text-anchor=\"middle\">" << escape(opt.y_label) << (opt.log_y ? " (log)" : "")
    << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const Series& s = series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    std::ostringstream pts;
    for (std::size_t j = 0; j < s.x.size(); ++j) {
      if (!std::isfinite(s.x[j]) || !std::isfinite(s.y[j])) continue;
      pts << num(px(s.x[j])) << ',' << num(py(s.y[j])) << ' ';
    }
    if (s.x.size() > 1) {
      o << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
        << pts.str() << "\"/>\n";
    }
    for (std::size_t j = 0; j < s.x.size(); ++j) {
      if (!std::isfinite(s.x[j]) || !std::isfinite(s.y[j])) continue;
      o << "<circle class=\"marker\" cx=\"" << num(px(s.x[j])) << "\" cy=\"" << num(py(s.y[j]))
        << "\" r=\"3.5\" fill=\"" << color << "\"/>\n";
    }
    const double ly = kTop + 20.0 + 22.0 * static_cast<double>(i);
    o << "<g class=\"legend\"><line x1=\"" << num(kWidth - kRight + 15) << "\" y1=\"" << num(ly)
      << "\" x2=\"" << num(kWidth - kRight + 40) << "\" y2=\"" << num(ly) << "\" stroke=\"" << color
      << "\" stroke-width=\"2\"/><text x=\"" << num(kWidth - kRight + 46) << "\" y=\"" << num(ly + 4)
      << "\">" << escape(s.label) << "</text></g>\n";
  }
  if (!opt.annotation.empty()) {
    o << "<text class=\"annotation\" x=\"" << num(kLeft + 12) << "\" y=\"" << num(kTop + 20) << "\">"
      << escape(opt.annotation) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace dynperc::io
