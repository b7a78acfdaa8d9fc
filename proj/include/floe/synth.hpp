#pragma once

// Coupled synthetic sea-ice world. Wind is a smooth AR(1) random field; drift
// is free drift (rotated, scaled wind plus a constant background current);
// concentration evolves by semi-Lagrangian advection of the flux form
// dA/dt + div(u A) = f_c with a freeze/melt source and no mechanical
// redistribution. The coupling puts real cross-variable signal into the data:
// tomorrow's concentration is a deterministic function of today's fields.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "floe/grid.hpp"

namespace floe {

inline constexpr double kMsToKmDay = 86.4;  // 1 m/s sustained for one day

struct WorldConfig {
  int h = 48, w = 48;
  int days = 250;
  uint64_t seed = 0;
  double alpha = 0.02;       // drift speed as a fraction of wind speed
  double theta_deg = 20.0;   // turning angle between wind and drift
  double k_freeze = 0.01;    // fraction/day per degC away from freezing
  double rho = 0.4;          // AR(1) persistence of the wind field
  double wind_sigma = 3.0;   // m/s, per component
  int wind_modes = 6;        // Fourier modes per innovation field
  double wind_clamp = 14.0;  // m/s, vector-magnitude saturation
  double current_u = 0.5;    // km/day background current
  double current_v = -0.3;
  double t2m_mean = -2.0;    // degC relative to freezing
  double t2m_amp = 8.0;      // seasonal amplitude
  double t2m_grad = 12.0;    // north-south gradient across the grid
  double t2m_noise = 1.5;    // smooth day-to-day noise
  double ice_edge = 0.55;    // initial edge as a fraction of grid height
  int land_rows = 4;         // coastal band along the southern edge
  bool periodic = false;     // boundary handling for advection
  double cell_km = 25.0;
  Date start = Date{std::chrono::year(2020), std::chrono::month(1), std::chrono::day(1)};

  void validate() const {
    if (h < 4 || w < 4) throw ConfigError("world grid must be at least 4x4");
    if (days < 1) throw ConfigError("world needs at least one day");
    if (!(alpha >= 0.0 && alpha < 1.0))
      throw ConfigError(strprintf("drift factor alpha must lie in [0, 1), got %g", alpha));
    if (!(rho >= 0.0 && rho < 1.0))
      throw ConfigError(strprintf("wind persistence rho must lie in [0, 1), got %g", rho));
    if (wind_sigma < 0 || wind_modes < 1) throw ConfigError("bad wind field parameters");
    if (land_rows < 0 || land_rows >= h) throw ConfigError("land_rows out of range");
    if (cell_km <= 0) throw ConfigError("cell_km must be positive");
  }
};

namespace synth_detail {

// Sum of integer-frequency cosine modes: exactly zero-mean over the grid,
// variance sigma^2, smooth, and cheap to evaluate.
struct ModeField {
  struct Mode {
    int kx, ky;
    double phase, amp;
  };
  std::vector<Mode> modes;

  static ModeField draw(Rng& rng, int n_modes, double sigma) {
    ModeField f;
    const double amp = sigma * std::sqrt(2.0 / n_modes);
    for (int m = 0; m < n_modes; ++m) {
      int kx = 0, ky = 0;
      while (kx == 0 && ky == 0) {
        kx = static_cast<int>(rng.below(5)) - 2;
        ky = static_cast<int>(rng.below(5)) - 2;
      }
      f.modes.push_back({kx, ky, rng.uniform(0.0, 6.283185307179586), amp});
    }
    return f;
  }

  void add_to(std::vector<double>& out, int h, int w, double gain) const {
    for (const Mode& m : modes) {
      const double fx = 6.283185307179586 * m.kx / w;
      const double fy = 6.283185307179586 * m.ky / h;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out[static_cast<size_t>(y) * w + x] +=
              gain * m.amp * std::cos(fx * x + fy * y + m.phase);
    }
  }
};

}  // namespace synth_detail

// AR(1) wind field generator. Each component evolves as
// w_t = rho w_{t-1} + sqrt(1-rho^2) eta_t with fresh smooth innovations, so
// the per-cell variance is stationary at wind_sigma^2.
class WindGen {
 public:
  explicit WindGen(const WorldConfig& cfg)
      : cfg_(cfg), rng_(Rng(cfg.seed).derive(0x77696e64)),
        u_(static_cast<size_t>(cfg.h) * cfg.w, 0.0), v_(u_) {
    cfg_.validate();
    innovate(u_, 1.0);
    innovate(v_, 1.0);
    clamp_vec();
  }

  void advance() {
    const double keep = cfg_.rho;
    const double fresh = std::sqrt(1.0 - keep * keep);
    for (auto& x : u_) x *= keep;
    for (auto& x : v_) x *= keep;
    innovate(u_, fresh);
    innovate(v_, fresh);
    clamp_vec();
  }

  const std::vector<double>& u() const { return u_; }
  const std::vector<double>& v() const { return v_; }

 private:
  void innovate(std::vector<double>& f, double gain) {
    synth_detail::ModeField::draw(rng_, cfg_.wind_modes, cfg_.wind_sigma)
        .add_to(f, cfg_.h, cfg_.w, gain);
  }

  void clamp_vec() {
    const double cap = cfg_.wind_clamp;
    if (cap <= 0) return;
    for (size_t i = 0; i < u_.size(); ++i) {
      const double mag = std::hypot(u_[i], v_[i]);
      if (mag > cap) {
        const double s = cap / mag;
        u_[i] *= s;
        v_[i] *= s;
      }
    }
  }

  WorldConfig cfg_;
  Rng rng_;
  std::vector<double> u_, v_;
};

// Wind for an absolute day index (runs the generator from day zero).
inline std::pair<Grid, Grid> gen_wind(const WorldConfig& cfg, int day) {
  WindGen gen(cfg);
  for (int d = 0; d < day; ++d) gen.advance();
  Grid u(cfg.h, cfg.w), v(cfg.h, cfg.w);
  for (size_t i = 0; i < u.v.size(); ++i) {
    u.v[i] = static_cast<float>(gen.u()[i]);
    v.v[i] = static_cast<float>(gen.v()[i]);
  }
  return {u, v};
}

// Free drift: alpha * R(theta) * wind (in km/day) plus the background
// current; zero over land.
inline std::pair<Grid, Grid> drift_from_wind(const Grid& wind_u, const Grid& wind_v,
                                             const WorldConfig& cfg, const Grid& land) {
  const double th = cfg.theta_deg * 3.14159265358979323846 / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  Grid su(wind_u.h, wind_u.w), sv(wind_u.h, wind_u.w);
  for (size_t i = 0; i < su.v.size(); ++i) {
    if (!land.v.empty() && land.v[i] != 0.f) continue;  // stays zero on land
    const double wu = wind_u.v[i] * kMsToKmDay;
    const double wv = wind_v.v[i] * kMsToKmDay;
    su.v[i] = static_cast<float>(cfg.alpha * (c * wu - s * wv) + cfg.current_u);
    sv.v[i] = static_cast<float>(cfg.alpha * (s * wu + c * wv) + cfg.current_v);
  }
  return {su, sv};
}

namespace synth_detail {

inline double sample_field(const std::vector<double>& f, int h, int w, double y, double x,
                           bool periodic) {
  if (periodic) {
    y = y - h * std::floor(y / h);
    x = x - w * std::floor(x / w);
  } else {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  }
  const int y0 = std::min(static_cast<int>(y), h - 1);
  const int x0 = std::min(static_cast<int>(x), w - 1);
  const int y1 = periodic ? (y0 + 1) % h : std::min(y0 + 1, h - 1);
  const int x1 = periodic ? (x0 + 1) % w : std::min(x0 + 1, w - 1);
  const double fy = y - y0, fx = x - x0;
  const double a = f[static_cast<size_t>(y0) * w + x0];
  const double b = f[static_cast<size_t>(y0) * w + x1];
  const double c = f[static_cast<size_t>(y1) * w + x0];
  const double d = f[static_cast<size_t>(y1) * w + x1];
  return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
}

}  // namespace synth_detail

// One day of concentration evolution: semi-Lagrangian advection (bilinear
// back-interpolation at the departure point), a flux-form divergence factor,
// then the freeze/melt source, clamped to [0, 1]. Land cells are untouched
// and contribute no ice to their neighbours.
inline Grid step_sic(const Grid& sic, const Grid& siv_u, const Grid& siv_v,
                     const Grid& t2m, const WorldConfig& cfg, const Grid& land) {
  const int h = sic.h, w = sic.w;
  const size_t cells = sic.cells();
  const bool has_land = !land.v.empty();
  auto is_land = [&](int y, int x) {
    return has_land && land.v[static_cast<size_t>(y) * w + x] != 0.f;
  };

  std::vector<double> a(cells), cu(cells), cv(cells);
  for (size_t i = 0; i < cells; ++i) {
    a[i] = sic.v[i];
    cu[i] = siv_u.v[i] / cfg.cell_km;  // cells/day
    cv[i] = siv_v.v[i] / cfg.cell_km;
    const double speed = std::max(std::abs(cu[i]), std::abs(cv[i]));
    if (speed > 1.0)
      throw CflError(strprintf(
          "advection moves %.2f cells in one step at cell %zu; reduce the drift "
          "factor alpha (or wind forcing) so transport stays below one cell/day",
          speed, i));
  }
  // ice never sits on land
  if (has_land)
    for (size_t i = 0; i < cells; ++i)
      if (land.v[i] != 0.f) a[i] = 0.0;

  auto wrap = [&](int v, int n) { return ((v % n) + n) % n; };
  Grid out = sic;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      if (is_land(y, x)) continue;  // untouched
      const double dep = synth_detail::sample_field(a, h, w, y - cv[i], x - cu[i],
                                                    cfg.periodic);
      // centered divergence of the transport field
      auto at = [&](const std::vector<double>& f, int yy, int xx) {
        if (cfg.periodic) return f[static_cast<size_t>(wrap(yy, h)) * w + wrap(xx, w)];
        yy = std::clamp(yy, 0, h - 1);
        xx = std::clamp(xx, 0, w - 1);
        return f[static_cast<size_t>(yy) * w + xx];
      };
      const double div = (at(cu, y, x + 1) - at(cu, y, x - 1)) * 0.5 +
                         (at(cv, y + 1, x) - at(cv, y - 1, x)) * 0.5;
      const double t = t2m.v[i];
      const double freeze = cfg.k_freeze * std::max(0.0, -t) - cfg.k_freeze * std::max(0.0, t);
      const double next = dep * (1.0 - div) + freeze;
      out.v[i] = static_cast<float>(std::clamp(next, 0.0, 1.0));
    }
  return out;
}

// The full coupled world: all nine variables over cfg.days days. Drift and
// concentration carry no values over land; everything else is valid
// everywhere. Deterministic in (seed, cfg).
inline GridStack gen_world(const WorldConfig& cfg) {
  cfg.validate();
  const int h = cfg.h, w = cfg.w;
  const size_t cells = static_cast<size_t>(h) * w;

  GridStack st;
  st.h = h;
  st.w = w;
  st.start = cfg.start;
  st.vars.assign(std::begin(kAllVars), std::end(kAllVars));

  Grid land(h, w, 0.f);
  for (int y = h - cfg.land_rows; y < h; ++y)
    for (int x = 0; x < w; ++x) land.at(y, x) = 1.f;

  Grid coord_x(h, w), coord_y(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      coord_x.at(y, x) = static_cast<float>(x * cfg.cell_km);
      coord_y.at(y, x) = static_cast<float>(y * cfg.cell_km);
    }

  Rng rng(cfg.seed);
  Rng ice_rng = rng.derive(0x1ce);
  synth_detail::ModeField ice_noise = synth_detail::ModeField::draw(ice_rng, 5, 1.0);
  std::vector<double> noise(cells, 0.0);
  ice_noise.add_to(noise, h, w, 1.0);
  Grid sic(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double yfrac = static_cast<double>(y) / (h - 1);
      const double a = 2.2 * (cfg.ice_edge - yfrac) + 0.4 * noise[static_cast<size_t>(y) * w + x];
      sic.at(y, x) = static_cast<float>(std::clamp(a, 0.0, 1.0));
      if (land.at(y, x) != 0.f) sic.set(y, x, 0.f, false);
    }

  // slow-moving smooth temperature noise
  std::vector<double> tnoise(cells, 0.0);
  Rng trng = rng.derive(0x7432);
  synth_detail::ModeField::draw(trng, 4, cfg.t2m_noise).add_to(tnoise, h, w, 1.0);

  WindGen wind(cfg);

  for (int d = 0; d < cfg.days; ++d) {
    Grid wu(h, w), wv(h, w);
    for (size_t i = 0; i < cells; ++i) {
      wu.v[i] = static_cast<float>(wind.u()[i]);
      wv.v[i] = static_cast<float>(wind.v()[i]);
    }
    auto [su, sv] = drift_from_wind(wu, wv, cfg, land);

    Grid t2m(h, w);
    const double season = cfg.t2m_amp *
                          std::sin(6.283185307179586 * (d - 80) / 365.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double lat = cfg.t2m_grad * (static_cast<double>(y) / (h - 1) - 0.5);
        t2m.at(y, x) = static_cast<float>(cfg.t2m_mean + season + lat +
                                          tnoise[static_cast<size_t>(y) * w + x]);
      }

    // drift and concentration are observed over ocean only
    Grid su_m = su, sv_m = sv, sic_m = sic;
    for (size_t i = 0; i < cells; ++i)
      if (land.v[i] != 0.f) {
        su_m.ok[i] = sv_m.ok[i] = sic_m.ok[i] = 0;
        sic_m.v[i] = 0.f;
      }

    st.grids.push_back(su_m);
    st.grids.push_back(sv_m);
    st.grids.push_back(sic_m);
    st.grids.push_back(t2m);
    st.grids.push_back(wu);
    st.grids.push_back(wv);
    st.grids.push_back(coord_x);
    st.grids.push_back(coord_y);
    st.grids.push_back(land);

    if (d + 1 < cfg.days) {
      sic = step_sic(sic, su, sv, t2m, cfg, land);
      // refresh the slow temperature noise with a little persistence
      for (auto& x : tnoise) x *= 0.85;
      synth_detail::ModeField::draw(trng, 4, cfg.t2m_noise)
          .add_to(tnoise, h, w, std::sqrt(1.0 - 0.85 * 0.85));
      wind.advance();
    }
  }
  return st;
}

}  // namespace floe
