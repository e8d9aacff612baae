#include "dynperc/lattice.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "dynperc/errors.hpp"
#include "dynperc/random.hpp"

namespace dynperc {

namespace {

// Axial unit steps of the triangular lattice, in neighbor order.
constexpr std::array<std::array<int, 2>, 6> kTriSteps{{
    {-1, 0}, {1, 0}, {0, -1}, {0, 1}, {-1, 1}, {1, -1}}};

std::int64_t floor_mod(std::int64_t a, std::int64_t m) {
  const std::int64_t r = a % m;
  return r < 0 ? r + m : r;
}

}  // namespace

Point::Point(std::initializer_list<std::int64_t> coords) {
  if (coords.size() > static_cast<std::size_t>(kMaxDim)) {
    throw std::invalid_argument("Point: too many coordinates");
  }
  std::copy(coords.begin(), coords.end(), c.begin());
}

Lattice Lattice::hypercubic(int d) {
  if (d < 2 || d > kMaxDim) {
    throw std::invalid_argument("hypercubic lattice needs 2 <= d <= " +
                                std::to_string(kMaxDim));
  }
  return Lattice(Geometry::hypercubic, d);
}

Lattice Lattice::triangular() { return Lattice(Geometry::triangular, 2); }

Lattice Lattice::torus(int side) const {
  if (side < 4 || side % 2 != 0) {
    throw std::invalid_argument("torus side must be even and >= 4");
  }
  Lattice out = *this;
  out.side_ = side;
  return out;
}

Point Lattice::wrap(Point v) const {
  if (!side_) return v;
  for (int i = 0; i < dim_; ++i) v[i] = floor_mod(v[i], *side_);
  return v;
}

Neighbor Lattice::neighbor(const Point& v, int k) const {
  Point w = v;
  if (is_triangular()) {
    const auto& s = kTriSteps[static_cast<std::size_t>(k)];
    w[0] += s[0];
    w[1] += s[1];
    w = wrap(w);
    return {Unit{w, Unit::kSiteUnit}, w};
  }
  const int axis = k / 2;
  if (k % 2 == 0) {
    w[axis] -= 1;
    w = wrap(w);
    return {Unit{w, axis}, w};
  }
  w[axis] += 1;
  w = wrap(w);
  return {Unit{wrap(v), axis}, w};
}

std::vector<Neighbor> Lattice::neighbors(const Point& v) const {
  std::vector<Neighbor> out;
  out.reserve(static_cast<std::size_t>(degree()));
  for (int k = 0; k < degree(); ++k) out.push_back(neighbor(v, k));
  return out;
}

Unit Lattice::canonical(Unit u) const {
  u.base = wrap(u.base);
  return u;
}

Unit Lattice::bond_between(const Point& a, const Point& b) const {
  if (is_triangular()) {
    throw Unsupported("triangular lattice refreshes sites, not bonds");
  }
  for (int k = 0; k < degree(); ++k) {
    const Neighbor n = neighbor(a, k);
    if (n.vertex == wrap(b)) return n.unit;
  }
  throw std::invalid_argument("bond_between: vertices are not adjacent");
}

std::int64_t triangular_distance(std::int64_t dx, std::int64_t dy) {
  if ((dx >= 0 && dy >= 0) || (dx <= 0 && dy <= 0)) {
    return std::abs(dx) + std::abs(dy);
  }
  return std::max(std::abs(dx), std::abs(dy));
}

std::int64_t Lattice::distance(const Point& a, const Point& b) const {
  if (is_triangular()) {
    const std::int64_t dx = b[0] - a[0];
    const std::int64_t dy = b[1] - a[1];
    if (!side_) return triangular_distance(dx, dy);
    const std::int64_t L = *side_;
    const std::int64_t rx = floor_mod(dx, L);
    const std::int64_t ry = floor_mod(dy, L);
    std::int64_t best = triangular_distance(rx, ry);
    for (std::int64_t sx : {rx - L, rx}) {
      for (std::int64_t sy : {ry - L, ry}) {
        best = std::min(best, triangular_distance(sx, sy));
      }
    }
    return best;
  }
  std::int64_t total = 0;
  for (int i = 0; i < dim_; ++i) {
    std::int64_t d = b[i] - a[i];
    if (side_) {
      d = floor_mod(d, *side_);
      d = std::min<std::int64_t>(d, *side_ - d);
    }
    total += std::abs(d);
  }
  return total;
}

double Lattice::squared_norm(const Point& v) const {
  if (is_triangular()) {
    const double x = static_cast<double>(v[0]);
    const double y = static_cast<double>(v[1]);
    return x * x + x * y + y * y;
  }
  double s = 0.0;
  for (int i = 0; i < dim_; ++i) {
    const double x = static_cast<double>(v[i]);
    s += x * x;
  }
  return s;
}

BallRegion Lattice::ball_membership(std::int64_t r, const Point& v) const {
  if (r < 1) throw std::invalid_argument("ball radius must be >= 1");
  std::int64_t m = 0;
  for (int i = 0; i < dim_; ++i) m = std::max(m, std::abs(v[i]));
  if (m > r) return BallRegion::outside;
  // Inside the coordinate box every lattice step changes each coordinate by
  // at most 1, so a neighbor leaves the box exactly when some |coord| == r.
  return m == r ? BallRegion::boundary : BallRegion::interior;
}

std::int64_t Lattice::vertex_count() const {
  if (!side_) throw Unsupported("vertex_count requires a torus");
  std::int64_t n = 1;
  for (int i = 0; i < dim_; ++i) n *= *side_;
  return n;
}

std::int64_t Lattice::unit_count() const {
  return is_triangular() ? vertex_count() : vertex_count() * dim_;
}

std::int64_t Lattice::vertex_index(const Point& v) const {
  if (!side_) throw Unsupported("vertex_index requires a torus");
  const Point w = wrap(v);
  std::int64_t idx = 0;
  for (int i = dim_ - 1; i >= 0; --i) idx = idx * *side_ + w[i];
  return idx;
}

Point Lattice::vertex_at(std::int64_t index) const {
  if (!side_) throw Unsupported("vertex_at requires a torus");
  Point v;
  for (int i = 0; i < dim_; ++i) {
    v[i] = index % *side_;
    index /= *side_;
  }
  return v;
}

std::int64_t Lattice::unit_index(const Unit& u) const {
  const std::int64_t v = vertex_index(u.base);
  return is_triangular() ? v : v * dim_ + u.dir;
}

Unit Lattice::unit_at(std::int64_t index) const {
  if (is_triangular()) return Unit{vertex_at(index), Unit::kSiteUnit};
  return Unit{vertex_at(index / dim_), static_cast<int>(index % dim_)};
}

std::uint64_t Lattice::unit_hash(const Unit& u) const {
  const Unit cu = canonical(u);
  std::uint64_t h = mix64(0x6a09e667f3bcc909ULL ^ static_cast<std::uint64_t>(cu.dir + 2));
  for (int i = 0; i < dim_; ++i) {
    h = mix64(h ^ (static_cast<std::uint64_t>(cu.base[i]) +
                   0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(i + 1)));
  }
  return h;
}

std::size_t UnitHash::operator()(const Unit& u) const noexcept {
  std::uint64_t h = static_cast<std::uint64_t>(u.dir + 2);
  for (std::int64_t c : u.base.c) {
    h = (h ^ static_cast<std::uint64_t>(c)) * 0x100000001b3ULL;
    h ^= h >> 29;
  }
  return static_cast<std::size_t>(mix64(h));
}

std::vector<Unit> units_in_ball(const Lattice& lattice, std::int64_t r) {
  if (lattice.is_torus()) throw Unsupported("units_in_ball: infinite lattices only");
  const int d = lattice.dim();
  std::vector<Unit> out;
  Point v;
  for (int i = 0; i < d; ++i) v[i] = -r;
  while (true) {
    if (lattice.is_triangular()) {
      out.push_back(Unit{v, Unit::kSiteUnit});
    } else {
      for (int axis = 0; axis < d; ++axis) {
        if (v[axis] < r) out.push_back(Unit{v, axis});
      }
    }
    int i = 0;
    while (i < d && v[i] == r) {
      v[i] = -r;
      ++i;
    }
    if (i == d) break;
    ++v[i];
  }
  return out;
}

}  // namespace dynperc
