#pragma once

// Gridded geophysical fields: a Grid is an H x W single-precision raster with
// a per-cell validity mask. Variables are identified by Var; a GridStack is a
// dense (day, variable) series on one grid with a start date.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "floe/common.hpp"

namespace floe {

// --------------------------------------------------------------------------
// dates
// --------------------------------------------------------------------------

using Date = std::chrono::year_month_day;

inline Date parse_date(const std::string& s) {
  int y = 0, m = 0, d = 0;
  if (std::sscanf(s.c_str(), "%d-%d-%d", &y, &m, &d) != 3)
    throw ConfigError("date must be ISO-8601 YYYY-MM-DD, got '" + s + "'");
  Date ymd{std::chrono::year(y), std::chrono::month(static_cast<unsigned>(m)),
           std::chrono::day(static_cast<unsigned>(d))};
  if (!ymd.ok()) throw ConfigError("invalid calendar date '" + s + "'");
  return ymd;
}

inline std::string format_date(const Date& d) {
  return strprintf("%04d-%02u-%02u", static_cast<int>(d.year()),
                   static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
}

inline Date add_days(const Date& d, int n) {
  return Date{std::chrono::sys_days(d) + std::chrono::days(n)};
}

inline int month_of(const Date& d) { return static_cast<int>(static_cast<unsigned>(d.month())); }
inline int year_of(const Date& d) { return static_cast<int>(d.year()); }

// --------------------------------------------------------------------------
// variables and grids
// --------------------------------------------------------------------------

enum class Var { SivU, SivV, Sic, T2m, WindU, WindV, CoordX, CoordY, Land };

inline constexpr Var kAllVars[] = {Var::SivU, Var::SivV, Var::Sic,    Var::T2m, Var::WindU,
                                   Var::WindV, Var::CoordX, Var::CoordY, Var::Land};

inline const char* var_name(Var v) {
  switch (v) {
    case Var::SivU: return "siv_u";
    case Var::SivV: return "siv_v";
    case Var::Sic: return "sic";
    case Var::T2m: return "t2m";
    case Var::WindU: return "wind_u";
    case Var::WindV: return "wind_v";
    case Var::CoordX: return "coord_x";
    case Var::CoordY: return "coord_y";
    case Var::Land: return "land";
  }
  return "?";
}

inline Var var_from_name(const std::string& s) {
  for (Var v : kAllVars)
    if (s == var_name(v)) return v;
  throw ConfigError("unknown variable name: " + s);
}

struct Grid {
  int h = 0, w = 0;
  std::vector<float> v;
  std::vector<uint8_t> ok;

  Grid() = default;
  Grid(int h_, int w_, float fill = 0.f, bool valid = true)
      : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill),
        ok(static_cast<size_t>(h_) * w_, valid ? 1 : 0) {}

  float& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  float at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  bool valid(int y, int x) const { return ok[static_cast<size_t>(y) * w + x] != 0; }
  void set(int y, int x, float val, bool valid_ = true) {
    v[static_cast<size_t>(y) * w + x] = val;
    ok[static_cast<size_t>(y) * w + x] = valid_ ? 1 : 0;
  }
  size_t cells() const { return v.size(); }
  bool all_invalid() const {
    return std::find(ok.begin(), ok.end(), uint8_t(1)) == ok.end();
  }
};

// One variable on one day, with its validity mask.
struct VarGrid {
  Var var = Var::Sic;
  Date date{};
  Grid grid;
};

struct GridStack {
  int h = 0, w = 0;
  Date start{};
  std::vector<Var> vars;
  std::vector<Grid> grids;  // day-major: grids[day * vars.size() + vi]

  int days() const {
    return vars.empty() ? 0 : static_cast<int>(grids.size() / vars.size());
  }

  Date date(int day) const { return add_days(start, day); }

  int var_index(Var v) const {
    for (size_t i = 0; i < vars.size(); ++i)
      if (vars[i] == v) return static_cast<int>(i);
    return -1;
  }

  bool has(Var v) const { return var_index(v) >= 0; }

  Grid& at(int day, Var v) {
    const int i = var_index(v);
    if (i < 0) throw DataError(std::string("stack has no variable ") + var_name(v));
    return grids[static_cast<size_t>(day) * vars.size() + i];
  }
  const Grid& at(int day, Var v) const {
    return const_cast<GridStack*>(this)->at(day, v);
  }

  VarGrid var_grid(int day, Var v) const { return {v, date(day), at(day, v)}; }
};

// --------------------------------------------------------------------------
// normalization: affine map of the nominal [lo, hi] onto [-1, 1], clamped.
// --------------------------------------------------------------------------

struct NormSpec {
  struct Range {
    double lo = -1, hi = 1;
  };
  std::map<Var, Range> ranges;

  static constexpr double kDefaultCellKm = 25.0;

  // Physically generous envelopes; coordinates span the grid extent.
  static NormSpec defaults(int h, int w, double cell_km = kDefaultCellKm) {
    NormSpec n;
    n.ranges[Var::SivU] = {-50, 50};   // km/day
    n.ranges[Var::SivV] = {-50, 50};
    n.ranges[Var::Sic] = {0, 1};       // fraction
    n.ranges[Var::T2m] = {-50, 30};    // degC
    n.ranges[Var::WindU] = {-40, 40};  // m/s
    n.ranges[Var::WindV] = {-40, 40};
    n.ranges[Var::CoordX] = {0, std::max(1, w - 1) * cell_km};
    n.ranges[Var::CoordY] = {0, std::max(1, h - 1) * cell_km};
    return n;
  }

  const Range& range(Var v) const {
    auto it = ranges.find(v);
    if (it == ranges.end())
      throw ConfigError(std::string("no normalization range for variable ") + var_name(v));
    if (!(it->second.lo < it->second.hi))
      throw ConfigError(strprintf("normalization range for %s is degenerate [%g, %g]",
                                  var_name(v), it->second.lo, it->second.hi));
    return it->second;
  }

  double normalize(Var v, double x) const {
    const Range& r = range(v);
    const double t = 2.0 * (x - r.lo) / (r.hi - r.lo) - 1.0;
    return std::clamp(t, -1.0, 1.0);
  }

  double denormalize(Var v, double t) const {
    const Range& r = range(v);
    return r.lo + (t + 1.0) * 0.5 * (r.hi - r.lo);
  }
};

inline Grid normalize(const Grid& g, Var v, const NormSpec& n) {
  Grid out = g;
  for (size_t i = 0; i < g.v.size(); ++i)
    if (g.ok[i]) out.v[i] = static_cast<float>(n.normalize(v, g.v[i]));
  return out;
}

inline Grid denormalize(const Grid& g, Var v, const NormSpec& n) {
  Grid out = g;
  for (size_t i = 0; i < g.v.size(); ++i)
    if (g.ok[i]) out.v[i] = static_cast<float>(n.denormalize(v, g.v[i]));
  return out;
}

// --------------------------------------------------------------------------
// bilinear reprojection from a rectilinear source grid (strictly increasing
// axes) onto arbitrary destination points. Out-of-extent points and points
// touching any invalid source node come back invalid.
// --------------------------------------------------------------------------

inline Grid bilinear_reproject(const Grid& src, const std::vector<double>& src_x,
                               const std::vector<double>& src_y, int dst_h, int dst_w,
                               const std::vector<double>& dst_x,
                               const std::vector<double>& dst_y) {
  if (static_cast<int>(src_x.size()) != src.w || static_cast<int>(src_y.size()) != src.h)
    throw ShapeError("bilinear_reproject: axis lengths do not match the source grid");
  if (dst_x.size() != static_cast<size_t>(dst_h) * dst_w || dst_y.size() != dst_x.size())
    throw ShapeError("bilinear_reproject: destination coordinate arrays mismatch");
  Grid out(dst_h, dst_w, 0.f, false);
  for (size_t i = 0; i < dst_x.size(); ++i) {
    const double x = dst_x[i], y = dst_y[i];
    if (x < src_x.front() || x > src_x.back() || y < src_y.front() || y > src_y.back())
      continue;
    auto locate = [](const std::vector<double>& ax, double t) {
      auto it = std::upper_bound(ax.begin(), ax.end(), t);
      long j = std::distance(ax.begin(), it) - 1;
      if (j < 0) j = 0;
      if (j > static_cast<long>(ax.size()) - 2) j = static_cast<long>(ax.size()) - 2;
      return static_cast<int>(j);
    };
    const int jx = locate(src_x, x), jy = locate(src_y, y);
    const double fx = (x - src_x[jx]) / (src_x[jx + 1] - src_x[jx]);
    const double fy = (y - src_y[jy]) / (src_y[jy + 1] - src_y[jy]);
    if (!src.valid(jy, jx) || !src.valid(jy, jx + 1) || !src.valid(jy + 1, jx) ||
        !src.valid(jy + 1, jx + 1))
      continue;
    const double v00 = src.at(jy, jx), v01 = src.at(jy, jx + 1);
    const double v10 = src.at(jy + 1, jx), v11 = src.at(jy + 1, jx + 1);
    const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                     fy * ((1 - fx) * v10 + fx * v11);
    out.v[i] = static_cast<float>(v);
    out.ok[i] = 1;
  }
  return out;
}

// --------------------------------------------------------------------------
// coast mask: a cell is usable iff it is ocean and its Chebyshev distance to
// the nearest land cell exceeds buffer_px.
// --------------------------------------------------------------------------

inline std::vector<uint8_t> coast_mask(const Grid& land, int buffer_px = 2) {
  std::vector<uint8_t> mask(land.cells(), 0);
  const int h = land.h, w = land.w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (land.at(y, x) != 0.f) continue;  // land itself
      bool clear = true;
      for (int dy = -buffer_px; clear && dy <= buffer_px; ++dy)
        for (int dx = -buffer_px; dx <= buffer_px; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if (land.at(yy, xx) != 0.f) {
            clear = false;
            break;
          }
        }
      mask[static_cast<size_t>(y) * w + x] = clear ? 1 : 0;
    }
  return mask;
}

}  // namespace floe
