#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dynperc::io {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Writes bytes to path, creating parent directories. Throws on failure.
void write_text(const std::filesystem::path& path, std::string_view bytes);
std::string read_text(const std::filesystem::path& path);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct SvgOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  /// Free text placed in a <text class="annotation"> node (e.g. a fitted slope).
  std::string annotation;
};

/// Self-contained line chart on an 800x600 viewBox with one marker per point
/// and a legend entry per series. Throws std::invalid_argument when there is
/// no point, or a log axis meets a nonpositive value.
std::string render_svg(std::span<const Series> series, const SvgOptions& opt);

}  // namespace dynperc::io
