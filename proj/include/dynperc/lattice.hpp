#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <vector>

namespace dynperc {

/// Largest supported dimension for hypercubic lattices.
inline constexpr int kMaxDim = 12;

/// A vertex of Z^d, or of the triangular lattice in axial coordinates
/// (x, y) standing for x + y e^{i pi/3}. Unused trailing coordinates are 0.
/// Arithmetic is exact for |coord| <= 2^40.
struct Point {
  std::array<std::int64_t, kMaxDim> c{};

  Point() = default;
  Point(std::initializer_list<std::int64_t> coords);

  std::int64_t& operator[](int i) { return c[static_cast<std::size_t>(i)]; }
  std::int64_t operator[](int i) const { return c[static_cast<std::size_t>(i)]; }

  friend bool operator==(const Point&, const Point&) = default;
};

/// A refreshing unit: a bond (base, +e_dir) of Z^d, or a site of the
/// triangular lattice (dir == kSiteUnit).
struct Unit {
  static constexpr int kSiteUnit = -1;

  Point base;
  int dir = kSiteUnit;

  bool is_site() const { return dir == kSiteUnit; }
  friend bool operator==(const Unit&, const Unit&) = default;
};

enum class Geometry { hypercubic, triangular };

enum class BallRegion { interior, boundary, outside };

struct Neighbor {
  Unit unit;  // the bond crossed, or the destination site
  Point vertex;
};

/// Z^d bond lattice (d >= 2) or triangular site lattice, optionally wrapped
/// on a torus of even side >= 4.
class Lattice {
 public:
  static Lattice hypercubic(int d);
  static Lattice triangular();

  /// Same geometry wrapped on a torus of the given side.
  Lattice torus(int side) const;

  Geometry geometry() const { return geometry_; }
  bool is_triangular() const { return geometry_ == Geometry::triangular; }
  int dim() const { return dim_; }
  int degree() const { return is_triangular() ? 6 : 2 * dim_; }
  bool is_torus() const { return side_.has_value(); }
  int side() const { return side_.value_or(0); }

  Point origin() const { return Point{}; }
  Point wrap(Point v) const;

  /// The k-th neighbor, k in [0, degree()). Order: axis ascending, negative
  /// step before positive; for the triangular lattice the third axis is the
  /// diagonal (-1,+1)/(+1,-1).
  Neighbor neighbor(const Point& v, int k) const;
  std::vector<Neighbor> neighbors(const Point& v) const;

  /// Canonical form of a unit (torus wrap of the base). Idempotent.
  Unit canonical(Unit u) const;
  /// The bond joining two adjacent vertices; symmetric in its arguments.
  Unit bond_between(const Point& a, const Point& b) const;

  std::int64_t distance(const Point& a, const Point& b) const;
  /// Squared Euclidean norm of a displacement (no torus wrap).
  double squared_norm(const Point& v) const;

  BallRegion ball_membership(std::int64_t r, const Point& v) const;

  // Torus indexing; all require is_torus().
  std::int64_t vertex_count() const;
  std::int64_t unit_count() const;
  std::int64_t vertex_index(const Point& v) const;
  Point vertex_at(std::int64_t index) const;
  std::int64_t unit_index(const Unit& u) const;
  Unit unit_at(std::int64_t index) const;

  /// 64-bit mix of a canonical unit's coordinates.
  std::uint64_t unit_hash(const Unit& u) const;

  friend bool operator==(const Lattice&, const Lattice&) = default;

 private:
  Lattice(Geometry g, int d) : geometry_(g), dim_(d) {}

  Geometry geometry_;
  int dim_;
  std::optional<int> side_;
};

/// Unit set membership within the box B_r: bonds with both endpoints in
/// B_r, or sites in B_r.
std::vector<Unit> units_in_ball(const Lattice& lattice, std::int64_t r);

/// Triangular-lattice graph distance of a displacement (dx, dy).
std::int64_t triangular_distance(std::int64_t dx, std::int64_t dy);

struct UnitHash {
  std::size_t operator()(const Unit& u) const noexcept;
};

}  // namespace dynperc
