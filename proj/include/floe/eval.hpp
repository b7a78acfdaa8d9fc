#pragma once

// Forecast scoring: Pearson correlation, RMSE, and MAE over valid pixels,
// pooled across pixels and days, reported overall, per calendar month, and
// per region x month. Drift scores are the arithmetic mean of the u- and
// v-component scores. Concentration is reported in percent, drift in km/day
// (denormalized before accumulation). Also here: WAM weight-map export and
// the climatological anomaly computation.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "floe/baselines.hpp"
#include "floe/checkpoint.hpp"
#include "floe/sigd.hpp"

namespace floe {

// ---------------------------------------------------------------------------
// metric accumulator (merging accumulators is exact recombination)
// ---------------------------------------------------------------------------
struct MetricAcc {
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0, sae = 0, sse = 0;
  long n = 0;

  void add(double pred, double obs) {
    sx += pred;
    sy += obs;
    sxy += pred * obs;
    sxx += pred * pred;
    syy += obs * obs;
    const double d = pred - obs;
    sae += std::abs(d);
    sse += d * d;
    ++n;
  }

  void merge(const MetricAcc& o) {
    sx += o.sx;
    sy += o.sy;
    sxy += o.sxy;
    sxx += o.sxx;
    syy += o.syy;
    sae += o.sae;
    sse += o.sse;
    n += o.n;
  }

  double rmse() const { return n ? std::sqrt(sse / n) : 0.0; }
  double mae() const { return n ? sae / n : 0.0; }

  double var_x() const { return n ? sxx - sx * sx / n : 0.0; }
  double var_y() const { return n ? syy - sy * sy / n : 0.0; }

  std::optional<double> r() const {
    if (n < 2) return std::nullopt;
    const double vx = var_x(), vy = var_y();
    if (vx <= 0 || vy <= 0) return std::nullopt;  // zero variance: undefined
    return (sxy - sx * sy / n) / std::sqrt(vx * vy);
  }
};

// Spec-style free functions over masked value arrays.
template <class VecX, class VecY, class Mask>
MetricAcc accumulate_masked(const VecX& x, const VecY& y, const Mask& mask) {
  MetricAcc acc;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) acc.add(static_cast<double>(x[i]), static_cast<double>(y[i]));
  return acc;
}

template <class VecX, class VecY, class Mask>
std::optional<double> corr(const VecX& x, const VecY& y, const Mask& mask) {
  return accumulate_masked(x, y, mask).r();
}

template <class VecX, class VecY, class Mask>
double rmse(const VecX& x, const VecY& y, const Mask& mask) {
  MetricAcc acc = accumulate_masked(x, y, mask);
  if (acc.n == 0) throw DataError("rmse: empty mask");
  return acc.rmse();
}

template <class VecX, class VecY, class Mask>
double mae(const VecX& x, const VecY& y, const Mask& mask) {
  MetricAcc acc = accumulate_masked(x, y, mask);
  if (acc.n == 0) throw DataError("mae: empty mask");
  return acc.mae();
}

// ---------------------------------------------------------------------------
// regions
// ---------------------------------------------------------------------------
inline constexpr const char* kRegionNames[] = {"none", "CA", "CBS", "LESS",
                                               "KBS",  "EG", "HBB"};
inline constexpr int kNumRegions = 6;

struct RegionMask {
  int h = 0, w = 0;
  std::vector<uint8_t> label;  // 0 = none, 1..6 = region

  bool empty() const { return label.empty(); }
};

// Synthetic-world partition: a 2x3 tiling of the grid restricted to ocean
// cells. Real-geography rasters come in as SIGD files instead.
inline RegionMask make_region_partition(int h, int w, const std::vector<uint8_t>& ocean) {
  RegionMask rm;
  rm.h = h;
  rm.w = w;
  rm.label.assign(static_cast<size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      if (!ocean.empty() && !ocean[i]) continue;
      const int row = std::min(1, y / ((h + 1) / 2));
      const int col = std::min(2, x / ((w + 2) / 3));
      rm.label[i] = static_cast<uint8_t>(1 + row * 3 + col);
    }
  return rm;
}

inline RegionMask read_region_mask(const std::string& path) {
  RawStack raw = read_sigd(path);
  if (raw.names.size() != 1 || raw.days() != 1)
    throw IoError("region raster must hold exactly one layer on one day: " + path);
  RegionMask rm;
  rm.h = raw.h;
  rm.w = raw.w;
  rm.label.resize(raw.grids[0].cells());
  for (size_t i = 0; i < rm.label.size(); ++i) {
    const int v = raw.grids[0].ok[i] ? static_cast<int>(raw.grids[0].v[i]) : 0;
    if (v < 0 || v > kNumRegions)
      throw IoError(strprintf("region label %d out of range in %s", v, path.c_str()));
    rm.label[i] = static_cast<uint8_t>(v);
  }
  return rm;
}

inline void write_region_mask(const std::string& path, const RegionMask& rm) {
  RawStack raw;
  raw.h = rm.h;
  raw.w = rm.w;
  raw.start = Date{std::chrono::year(2000), std::chrono::month(1), std::chrono::day(1)};
  raw.names = {"region"};
  Grid g(rm.h, rm.w);
  for (size_t i = 0; i < rm.label.size(); ++i) g.v[i] = static_cast<float>(rm.label[i]);
  raw.grids.push_back(std::move(g));
  write_sigd(path, raw);
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------
struct MetricsRecord {
  std::string model;
  std::string variable;  // "sic" | "siv"
  std::string scope;     // "overall" | "month" | "region_month"
  std::string region;    // "-" outside region scope
  int month = 0;         // 0 for overall
  long n = 0;
  bool r_defined = false;
  double r = 0, rmse = 0, mae = 0;
};

using PredictFn = std::function<Prediction(const Sample&)>;

inline PredictFn persistence_predictor() {
  return [](const Sample& s) { return persistence_predict(s); };
}

inline PredictFn linreg_predictor(LinregModel model) {
  return [model = std::move(model)](const Sample& s) { return linreg_predict(model, s); };
}

template <class T>
PredictFn neural_predictor(std::shared_ptr<ModelState<T>> state) {
  return [state](const Sample& s) {
    std::vector<Sample> one = {s};
    std::vector<size_t> idx = {0};
    Batch<T> b = assemble_batch<T>(one, idx, 0, 1);
    Tensor<T> y = state->forward(b.input);
    Prediction p{s.h, s.w, std::vector<float>(3 * s.mask.size()), s.mask};
    for (size_t i = 0; i < p.uva.size(); ++i)
      p.uva[i] = static_cast<float>(y.data()[i]);
    return p;
  };
}

// Pooled pixels-days accumulation per (month, region) cell and component;
// merges give the overall and monthly rows exactly.
inline std::vector<MetricsRecord> evaluate(const PredictFn& predict,
                                           const std::vector<Sample>& samples,
                                           const std::vector<size_t>& idx,
                                           const RegionMask& regions,
                                           const NormSpec& norm,
                                           const std::string& model_id) {
  struct Cell {
    MetricAcc comp[3];  // u, v, A (denormalized; A in percent)
  };
  std::map<std::pair<int, int>, Cell> cells;  // (month, region label)

  for (size_t si : idx) {
    const Sample& s = samples[si];
    Prediction p = predict(s);
    const size_t n_px = s.mask.size();
    if (p.uva.size() != 3 * n_px || p.mask.size() != n_px)
      throw DataError("evaluate: prediction grid does not match the sample");
    const int month = month_of(s.date);
    for (size_t i = 0; i < n_px; ++i) {
      if (!s.mask[i] || !p.mask[i]) continue;
      const int reg = regions.empty() ? 0 : regions.label[i];
      Cell& cell = cells[{month, reg}];
      for (int c = 0; c < 3; ++c) {
        const Var v = kTargetVars[c];
        double pr = norm.denormalize(v, p.uva[c * n_px + i]);
        double ob = norm.denormalize(v, s.target[c * n_px + i]);
        if (c == 2) {
          pr *= 100.0;  // concentration in percent
          ob *= 100.0;
        }
        cell.comp[c].add(pr, ob);
      }
    }
  }

  auto make_records = [&](const Cell& cell, const std::string& scope,
                          const std::string& region, int month,
                          std::vector<MetricsRecord>& out) {
    // sic
    {
      MetricsRecord r;
      r.model = model_id;
      r.variable = "sic";
      r.scope = scope;
      r.region = region;
      r.month = month;
      r.n = cell.comp[2].n;
      auto cc = cell.comp[2].r();
      r.r_defined = cc.has_value();
      r.r = cc.value_or(std::nan(""));
      r.rmse = cell.comp[2].rmse();
      r.mae = cell.comp[2].mae();
      out.push_back(std::move(r));
    }
    // siv: average of the u and v scores
    {
      MetricsRecord r;
      r.model = model_id;
      r.variable = "siv";
      r.scope = scope;
      r.region = region;
      r.month = month;
      r.n = cell.comp[0].n;
      auto cu = cell.comp[0].r(), cv = cell.comp[1].r();
      r.r_defined = cu.has_value() && cv.has_value();
      r.r = r.r_defined ? 0.5 * (*cu + *cv) : std::nan("");
      r.rmse = 0.5 * (cell.comp[0].rmse() + cell.comp[1].rmse());
      r.mae = 0.5 * (cell.comp[0].mae() + cell.comp[1].mae());
      out.push_back(std::move(r));
    }
  };

  std::vector<MetricsRecord> records;
  {
    Cell overall;
    for (const auto& [key, cell] : cells)
      for (int c = 0; c < 3; ++c) overall.comp[c].merge(cell.comp[c]);
    make_records(overall, "overall", "-", 0, records);
  }
  {
    std::map<int, Cell> by_month;
    for (const auto& [key, cell] : cells)
      for (int c = 0; c < 3; ++c) by_month[key.first].comp[c].merge(cell.comp[c]);
    for (const auto& [month, cell] : by_month)
      make_records(cell, "month", "-", month, records);
  }
  if (!regions.empty()) {
    for (const auto& [key, cell] : cells) {
      if (key.second == 0) continue;
      make_records(cell, "region_month", kRegionNames[key.second], key.first, records);
    }
  }
  return records;
}

inline void write_metrics(const std::string& path, const std::vector<MetricsRecord>& recs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write metrics: " + path);
  os << "# model variable scope region month n r_defined r rmse mae\n";
  for (const MetricsRecord& r : recs)
    os << strprintf("%s %s %s %s %d %ld %d %.17g %.17g %.17g\n", r.model.c_str(),
                    r.variable.c_str(), r.scope.c_str(), r.region.c_str(), r.month, r.n,
                    r.r_defined ? 1 : 0, r.r, r.rmse, r.mae);
}

inline std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read metrics: " + path);
  std::vector<MetricsRecord> recs;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    char model[128], variable[16], scope[32], region[16];
    int month, rdef;
    long n;
    double r, rm, ma;
    if (std::sscanf(line.c_str(), "%127s %15s %31s %15s %d %ld %d %lg %lg %lg", model,
                    variable, scope, region, &month, &n, &rdef, &r, &rm, &ma) != 10)
      throw IoError("malformed metrics row: " + line);
    MetricsRecord rec;
    rec.model = model;
    rec.variable = variable;
    rec.scope = scope;
    rec.region = region;
    rec.month = month;
    rec.n = n;
    rec.r_defined = rdef != 0;
    rec.r = r;
    rec.rmse = rm;
    rec.mae = ma;
    recs.push_back(std::move(rec));
  }
  return recs;
}

// ---------------------------------------------------------------------------
// WAM weight-map export: for each of the six levels and each of the four
// weight grids, the mean over channels as an H_l x W_l map.
// ---------------------------------------------------------------------------
struct WamMap {
  int level = 0;             // 1..6
  std::string weight;        // a_in_siv | a_in_sic | a_out_siv | a_out_sic
  Grid map;
};

template <class T>
std::vector<WamMap> export_wam_maps(const ModelState<T>& state) {
  if (state.spec.kind != ModelKind::HisUnet)
    throw ConfigError(strprintf("wam maps require a his_unet checkpoint, got %s",
                                model_kind_name(state.spec.kind)));
  const auto& net = std::get<HisUnetNet<T>>(state.net);
  std::vector<WamMap> maps;
  const char* names[4] = {"a_in_siv", "a_in_sic", "a_out_siv", "a_out_sic"};
  for (int lvl = 1; lvl <= 6; ++lvl) {
    const WamParams<T>& p = net.wams[lvl - 1];
    const Tensor<T>* grids[4] = {&p.a_in_siv, &p.a_in_sic, &p.a_out_siv, &p.a_out_sic};
    for (int g = 0; g < 4; ++g) {
      const Shape s = grids[g]->shape();
      Grid m(s[2], s[3]);
      const long N = static_cast<long>(s[2]) * s[3];
      for (long i = 0; i < N; ++i) {
        double acc = 0;
        for (int c = 0; c < s[1]; ++c) acc += static_cast<double>(grids[g]->data()[c * N + i]);
        m.v[i] = static_cast<float>(acc / s[1]);
      }
      maps.push_back({lvl, names[g], std::move(m)});
    }
  }
  return maps;
}

// One SIGD file per level: four layers, one day.
template <class T>
std::vector<std::string> write_wam_maps(const std::string& prefix,
                                        const ModelState<T>& state) {
  auto maps = export_wam_maps(state);
  std::vector<std::string> paths;
  for (int lvl = 1; lvl <= 6; ++lvl) {
    RawStack raw;
    raw.start = Date{std::chrono::year(2000), std::chrono::month(1), std::chrono::day(1)};
    for (const WamMap& m : maps)
      if (m.level == lvl) {
        raw.h = m.map.h;
        raw.w = m.map.w;
        raw.names.push_back(m.weight);
        raw.grids.push_back(m.map);
      }
    const std::string path = strprintf("%s_wam%d.sigd", prefix.c_str(), lvl);
    write_sigd(path, raw);
    paths.push_back(path);
  }
  return paths;
}

// ---------------------------------------------------------------------------
// climatological anomalies: target-year monthly values minus the baseline
// monthly mean (mean of per-year means), plus per-pixel annual anomaly maps.
// Ice area counts cells with concentration above the threshold.
// ---------------------------------------------------------------------------
struct AnomalyReport {
  struct Row {
    int month = 0;
    bool defined = false;
    double t2m = 0, wind_speed = 0, ice_area_km2 = 0, siv_speed = 0;
  };
  std::vector<Row> rows;                       // 12 rows, months 1..12
  Grid t2m_map, wind_map, sic_map, siv_map;    // per-pixel annual anomalies
};

inline AnomalyReport anomaly(const GridStack& stack, const std::vector<int>& baseline_years,
                             int target_year, double sic_threshold = 0.15,
                             double cell_km = NormSpec::kDefaultCellKm) {
  if (baseline_years.empty()) throw ConfigError("anomaly: baseline years must be non-empty");
  const size_t cells = static_cast<size_t>(stack.h) * stack.w;

  // scalar series: per (year, month) means of the four quantities
  struct MonthAgg {
    double t2m = 0, wind = 0, area = 0, siv = 0;
    long days = 0;
  };
  std::map<std::pair<int, int>, MonthAgg> agg;
  for (int d = 0; d < stack.days(); ++d) {
    const Date date = stack.date(d);
    MonthAgg& a = agg[{year_of(date), month_of(date)}];
    const Grid& t2m = stack.at(d, Var::T2m);
    const Grid& wu = stack.at(d, Var::WindU);
    const Grid& wv = stack.at(d, Var::WindV);
    const Grid& sic = stack.at(d, Var::Sic);
    const Grid& su = stack.at(d, Var::SivU);
    const Grid& sv = stack.at(d, Var::SivV);
    double st = 0, sw = 0, ss = 0;
    long nt = 0, nw = 0, ns = 0, n_ice = 0;
    for (size_t i = 0; i < cells; ++i) {
      if (t2m.ok[i]) {
        st += t2m.v[i];
        ++nt;
      }
      if (wu.ok[i] && wv.ok[i]) {
        sw += std::hypot(wu.v[i], wv.v[i]);
        ++nw;
      }
      if (sic.ok[i] && sic.v[i] > sic_threshold) ++n_ice;
      if (su.ok[i] && sv.ok[i]) {
        ss += std::hypot(su.v[i], sv.v[i]);
        ++ns;
      }
    }
    a.t2m += nt ? st / nt : 0;
    a.wind += nw ? sw / nw : 0;
    a.area += static_cast<double>(n_ice) * cell_km * cell_km;
    a.siv += ns ? ss / ns : 0;
    ++a.days;
  }

  AnomalyReport rep;
  for (int m = 1; m <= 12; ++m) {
    AnomalyReport::Row row;
    row.month = m;
    auto it = agg.find({target_year, m});
    double bt = 0, bw = 0, ba = 0, bs = 0;
    int n_years = 0;
    for (int y : baseline_years) {
      auto b = agg.find({y, m});
      if (b == agg.end()) continue;
      bt += b->second.t2m / b->second.days;
      bw += b->second.wind / b->second.days;
      ba += b->second.area / b->second.days;
      bs += b->second.siv / b->second.days;
      ++n_years;
    }
    if (it != agg.end() && n_years > 0) {
      row.defined = true;
      const MonthAgg& t = it->second;
      row.t2m = t.t2m / t.days - bt / n_years;
      row.wind_speed = t.wind / t.days - bw / n_years;
      row.ice_area_km2 = t.area / t.days - ba / n_years;
      row.siv_speed = t.siv / t.days - bs / n_years;
    }
    rep.rows.push_back(row);
  }

  // per-pixel annual means
  auto pixel_mean = [&](auto&& value_of, bool in_target) {
    std::vector<double> acc(cells, 0.0);
    std::vector<long> cnt(cells, 0);
    for (int d = 0; d < stack.days(); ++d) {
      const int y = year_of(stack.date(d));
      const bool pick = in_target ? (y == target_year)
                                  : std::find(baseline_years.begin(), baseline_years.end(),
                                              y) != baseline_years.end();
      if (!pick) continue;
      for (size_t i = 0; i < cells; ++i) {
        auto v = value_of(d, i);
        if (!v.has_value()) continue;
        acc[i] += *v;
        ++cnt[i];
      }
    }
    Grid g(stack.h, stack.w, 0.f, false);
    for (size_t i = 0; i < cells; ++i)
      if (cnt[i]) {
        g.v[i] = static_cast<float>(acc[i] / cnt[i]);
        g.ok[i] = 1;
      }
    return g;
  };

  auto diff_map = [&](auto&& value_of) {
    Grid t = pixel_mean(value_of, true);
    Grid b = pixel_mean(value_of, false);
    Grid out(stack.h, stack.w, 0.f, false);
    for (size_t i = 0; i < cells; ++i)
      if (t.ok[i] && b.ok[i]) {
        out.v[i] = t.v[i] - b.v[i];
        out.ok[i] = 1;
      }
    return out;
  };

  rep.t2m_map = diff_map([&](int d, size_t i) -> std::optional<double> {
    const Grid& g = stack.at(d, Var::T2m);
    if (!g.ok[i]) return std::nullopt;
    return g.v[i];
  });
  rep.wind_map = diff_map([&](int d, size_t i) -> std::optional<double> {
    const Grid& u = stack.at(d, Var::WindU);
    const Grid& v = stack.at(d, Var::WindV);
    if (!u.ok[i] || !v.ok[i]) return std::nullopt;
    return std::hypot(u.v[i], v.v[i]);
  });
  rep.sic_map = diff_map([&](int d, size_t i) -> std::optional<double> {
    const Grid& g = stack.at(d, Var::Sic);
    if (!g.ok[i]) return std::nullopt;
    return g.v[i];
  });
  rep.siv_map = diff_map([&](int d, size_t i) -> std::optional<double> {
    const Grid& u = stack.at(d, Var::SivU);
    const Grid& v = stack.at(d, Var::SivV);
    if (!u.ok[i] || !v.ok[i]) return std::nullopt;
    return std::hypot(u.v[i], v.v[i]);
  });
  return rep;
}

}  // namespace floe
