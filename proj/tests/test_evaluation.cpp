#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "floe/eval.hpp"
#include "floe/synth.hpp"
#include "floe/train.hpp"
#include "test_util.hpp"

using namespace floe;

namespace {

std::filesystem::path tmp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "floe_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

const MetricsRecord& find_record(const std::vector<MetricsRecord>& recs,
                                 const std::string& variable, const std::string& scope,
                                 int month = 0, const std::string& region = "-") {
  for (const auto& r : recs)
    if (r.variable == variable && r.scope == scope && r.month == month && r.region == region)
      return r;
  throw std::runtime_error("record not found: " + variable + "/" + scope);
}

}  // namespace

TEST_CASE("corr analytic values and covariance oracle") {
  Rng rng(1);
  std::vector<double> x(200), y(200);
  std::vector<uint8_t> mask(200, 1);
  for (auto& v : x) v = rng.uniform(-2, 2);

  SECTION("y == x gives 1; y == -x gives -1") {
    REQUIRE(*corr(x, x, mask) == Catch::Approx(1.0).margin(1e-12));
    for (size_t i = 0; i < x.size(); ++i) y[i] = -x[i];
    REQUIRE(*corr(x, y, mask) == Catch::Approx(-1.0).margin(1e-12));
  }

  SECTION("random pair matches the direct covariance formula") {
    for (auto& v : y) v = rng.uniform(-2, 2);
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      mx += x[i];
      my += y[i];
    }
    mx /= x.size();
    my /= y.size();
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
    }
    REQUIRE(*corr(x, y, mask) == Catch::Approx(sxy / std::sqrt(sxx * syy)).margin(1e-12));
  }

  SECTION("zero variance is flagged undefined") {
    std::fill(y.begin(), y.end(), 3.0);
    REQUIRE(!corr(x, y, mask).has_value());
    REQUIRE(!corr(y, x, mask).has_value());
  }

  SECTION("invariant under positive affine transforms of either argument") {
    for (auto& v : y) v = rng.uniform(-2, 2);
    const double base = *corr(x, y, mask);
    std::vector<double> x2(x.size()), y2(y.size());
    for (size_t i = 0; i < x.size(); ++i) {
      x2[i] = 3.7 * x[i] + 11.0;
      y2[i] = 0.2 * y[i] - 5.0;
    }
    REQUIRE(*corr(x2, y, mask) == Catch::Approx(base).margin(1e-10));
    REQUIRE(*corr(x, y2, mask) == Catch::Approx(base).margin(1e-10));
  }
}

TEST_CASE("rmse and mae") {
  Rng rng(2);
  std::vector<double> x(100), y(100);
  std::vector<uint8_t> mask(100, 1);
  for (auto& v : x) v = rng.uniform(-5, 5);

  SECTION("identical inputs score zero") {
    REQUIRE(rmse(x, x, mask) == 0.0);
    REQUIRE(mae(x, x, mask) == 0.0);
  }
  SECTION("a constant offset c gives RMSE = MAE = |c|") {
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] - 1.75;
    REQUIRE(rmse(x, y, mask) == Catch::Approx(1.75).margin(1e-12));
    REQUIRE(mae(x, y, mask) == Catch::Approx(1.75).margin(1e-12));
  }
  SECTION("random pair matches the explicit loop oracle") {
    std::vector<uint8_t> m(100);
    for (auto& v : y) v = rng.uniform(-5, 5);
    for (auto& v : m) v = rng.uniform() < 0.8 ? 1 : 0;
    m[0] = 1;
    double sse = 0, sae = 0;
    long n = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      if (!m[i]) continue;
      sse += (x[i] - y[i]) * (x[i] - y[i]);
      sae += std::abs(x[i] - y[i]);
      ++n;
    }
    REQUIRE(rmse(x, y, m) == Catch::Approx(std::sqrt(sse / n)).margin(1e-12));
    REQUIRE(mae(x, y, m) == Catch::Approx(sae / n).margin(1e-12));
  }
  SECTION("empty mask is an error") {
    std::vector<uint8_t> empty(100, 0);
    REQUIRE_THROWS_AS(rmse(x, y, empty), DataError);
    REQUIRE_THROWS_AS(mae(x, y, empty), DataError);
  }
  SECTION("rmse^2 recombines exactly from a partition") {
    for (auto& v : y) v = rng.uniform(-5, 5);
    MetricAcc all = accumulate_masked(x, y, mask);
    std::vector<uint8_t> ma(100, 0), mb(100, 0);
    for (size_t i = 0; i < 100; ++i) (i % 3 == 0 ? ma : mb)[i] = 1;
    MetricAcc a = accumulate_masked(x, y, ma), b = accumulate_masked(x, y, mb);
    const double recomb =
        std::sqrt((a.rmse() * a.rmse() * a.n + b.rmse() * b.rmse() * b.n) / (a.n + b.n));
    REQUIRE(all.rmse() == Catch::Approx(recomb).margin(1e-12));
  }
}

TEST_CASE("evaluate on a constant world: zero rows, undefined R") {
  WorldConfig wc;
  wc.h = wc.w = 16;
  wc.days = 8;
  wc.seed = 3;
  wc.alpha = 0.0;
  wc.current_u = wc.current_v = 0.0;
  wc.t2m_mean = wc.t2m_amp = wc.t2m_noise = wc.t2m_grad = 0.0;
  wc.ice_edge = 2.0;  // fully ice covered: spatially constant concentration
  wc.land_rows = 0;
  GridStack world = gen_world(wc);
  NormSpec norm = NormSpec::defaults(wc.h, wc.w);
  auto samples = build_samples(world, norm);
  std::vector<size_t> idx(samples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  auto recs = evaluate(persistence_predictor(), samples, idx, RegionMask{}, norm, "persistence");
  const auto& sic = find_record(recs, "sic", "overall");
  const auto& siv = find_record(recs, "siv", "overall");
  REQUIRE(sic.rmse == 0.0);
  REQUIRE(sic.mae == 0.0);
  REQUIRE(!sic.r_defined);
  REQUIRE(siv.rmse == 0.0);
  REQUIRE(!siv.r_defined);

  SECTION("evaluating the same model twice gives identical records") {
    auto again = evaluate(persistence_predictor(), samples, idx, RegionMask{}, norm, "persistence");
    REQUIRE(again.size() == recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
      REQUIRE(again[i].rmse == recs[i].rmse);
      REQUIRE(again[i].mae == recs[i].mae);
    }
  }
}

TEST_CASE("evaluate: siv averaging, recombination, permutation invariance") {
  WorldConfig wc;
  wc.h = wc.w = 16;
  wc.days = 40;
  wc.seed = 4;
  wc.alpha = 0.01;
  wc.land_rows = 3;
  GridStack world = gen_world(wc);
  NormSpec norm = NormSpec::defaults(wc.h, wc.w);
  auto samples = build_samples(world, norm);
  std::vector<size_t> idx(samples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  std::vector<uint8_t> ocean(world.at(0, Var::Land).cells());
  for (size_t i = 0; i < ocean.size(); ++i) ocean[i] = world.at(0, Var::Land).v[i] == 0.f;
  RegionMask regions = make_region_partition(wc.h, wc.w, ocean);

  auto recs = evaluate(persistence_predictor(), samples, idx, regions, norm, "persistence");

  SECTION("siv rows average the u and v component scores") {
    // recompute the components directly from the samples
    MetricAcc u, v;
    for (const auto& s : samples) {
      Prediction p = persistence_predict(s);
      const size_t cells = s.mask.size();
      for (size_t i = 0; i < cells; ++i) {
        if (!s.mask[i]) continue;
        u.add(norm.denormalize(Var::SivU, p.uva[i]),
              norm.denormalize(Var::SivU, s.target[i]));
        v.add(norm.denormalize(Var::SivV, p.uva[cells + i]),
              norm.denormalize(Var::SivV, s.target[cells + i]));
      }
    }
    const auto& siv = find_record(recs, "siv", "overall");
    REQUIRE(siv.rmse == Catch::Approx(0.5 * (u.rmse() + v.rmse())).margin(1e-10));
    REQUIRE(siv.mae == Catch::Approx(0.5 * (u.mae() + v.mae())).margin(1e-10));
    REQUIRE(siv.r == Catch::Approx(0.5 * (*u.r() + *v.r())).margin(1e-10));
  }

  SECTION("overall RMSE recombines from the region x month partition") {
    for (const char* variable : {"sic", "siv"}) {
      if (std::string(variable) == "siv") continue;  // averaging breaks pooling for siv
      const auto& overall = find_record(recs, variable, "overall");
      double sse = 0;
      long n = 0;
      for (const auto& r : recs)
        if (r.variable == variable && r.scope == "region_month") {
          sse += r.rmse * r.rmse * r.n;
          n += r.n;
        }
      REQUIRE(n == overall.n);
      REQUIRE(overall.rmse == Catch::Approx(std::sqrt(sse / n)).margin(1e-10));
    }
  }

  SECTION("sample order does not change the records") {
    std::vector<size_t> shuffled = idx;
    Rng rng(9);
    for (size_t i = shuffled.size(); i > 1; --i)
      std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    auto recs2 = evaluate(persistence_predictor(), samples, shuffled, regions, norm,
                          "persistence");
    REQUIRE(recs2.size() == recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
      REQUIRE(recs2[i].variable == recs[i].variable);
      REQUIRE(recs2[i].scope == recs[i].scope);
      REQUIRE(recs2[i].rmse == Catch::Approx(recs[i].rmse).margin(1e-10));
      REQUIRE(recs2[i].mae == Catch::Approx(recs[i].mae).margin(1e-10));
    }
  }

  SECTION("metrics table round trips through the text format") {
    const auto path = tmp_path("metrics.txt");
    write_metrics(path.string(), recs);
    auto back = read_metrics(path.string());
    REQUIRE(back.size() == recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
      REQUIRE(back[i].model == recs[i].model);
      REQUIRE(back[i].variable == recs[i].variable);
      REQUIRE(back[i].scope == recs[i].scope);
      REQUIRE(back[i].region == recs[i].region);
      REQUIRE(back[i].month == recs[i].month);
      REQUIRE(back[i].n == recs[i].n);
      REQUIRE(back[i].rmse == recs[i].rmse);
      REQUIRE(back[i].mae == recs[i].mae);
      if (recs[i].r_defined) REQUIRE(back[i].r == recs[i].r);
    }
  }
}

TEST_CASE("neural predictor plugs into evaluate") {
  WorldConfig wc;
  wc.h = wc.w = 16;
  wc.days = 8;
  wc.seed = 6;
  wc.alpha = 0.01;
  GridStack world = gen_world(wc);
  NormSpec norm = NormSpec::defaults(wc.h, wc.w);
  auto samples = build_samples(world, norm);
  std::vector<size_t> idx(samples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  ModelSpec ms;
  ms.kind = ModelKind::Unet;
  ms.h = ms.w = 16;
  auto state = std::make_shared<ModelState<double>>(ModelState<double>::build(ms));
  state->params.set_requires_grad(false);
  auto recs = evaluate(neural_predictor<double>(state), samples, idx, RegionMask{}, norm,
                       "unet");
  REQUIRE(!recs.empty());
  REQUIRE(find_record(recs, "sic", "overall").n > 0);
}

TEST_CASE("wam weight-map export") {
  ModelSpec ms;
  ms.kind = ModelKind::HisUnet;
  ms.h = ms.w = 16;
  ms.seed = 8;
  auto state = ModelState<double>::build(ms);

  SECTION("fresh init exports constant 0.5 maps with the level dims") {
    auto maps = export_wam_maps(state);
    REQUIRE(maps.size() == 24);
    const int dims[6][2] = {{8, 8}, {4, 4}, {2, 2}, {4, 4}, {8, 8}, {16, 16}};
    for (const auto& m : maps) {
      REQUIRE(m.map.h == dims[m.level - 1][0]);
      REQUIRE(m.map.w == dims[m.level - 1][1]);
      for (float v : m.map.v) REQUIRE(v == 0.5f);
    }
  }

  SECTION("channel-mean matches the explicit per-pixel oracle") {
    auto& net = std::get<HisUnetNet<double>>(state.net);
    Rng rng(10);
    for (long i = 0; i < net.wams[0].a_in_siv.numel(); ++i)
      net.wams[0].a_in_siv.data()[i] = rng.uniform(-1, 1);
    auto maps = export_wam_maps(state);
    const auto& m = maps[0];  // level 1, a_in_siv
    const Shape s = net.wams[0].a_in_siv.shape();
    for (int y = 0; y < s[2]; ++y)
      for (int x = 0; x < s[3]; ++x) {
        double acc = 0;
        for (int c = 0; c < s[1]; ++c) acc += net.wams[0].a_in_siv.at(0, c, y, x);
        REQUIRE(m.map.at(y, x) == Catch::Approx(acc / s[1]).margin(1e-6));
      }
  }

  SECTION("maps survive a checkpoint round trip unchanged") {
    const auto path = tmp_path("wam.ckpt");
    save_model(path.string(), state);
    auto loaded = load_model<double>(path.string(), false);
    auto m1 = export_wam_maps(state);
    auto m2 = export_wam_maps(loaded);
    for (size_t i = 0; i < m1.size(); ++i) REQUIRE(m1[i].map.v == m2[i].map.v);
  }

  SECTION("file export writes six level files with four layers each") {
    auto paths = write_wam_maps((tmp_path("maps").string()), state);
    REQUIRE(paths.size() == 6);
    for (const auto& p : paths) {
      RawStack raw = read_sigd(p);
      REQUIRE(raw.names == std::vector<std::string>{"a_in_siv", "a_in_sic", "a_out_siv",
                                                    "a_out_sic"});
      REQUIRE(raw.days() == 1);
    }
  }

  SECTION("non-his_unet checkpoints are rejected") {
    ModelSpec other;
    other.kind = ModelKind::Unet;
    other.h = other.w = 16;
    auto u = ModelState<double>::build(other);
    REQUIRE_THROWS_AS(export_wam_maps(u), ConfigError);
  }
}

TEST_CASE("anomaly") {
  // two synthetic years; year 2021 is year 2020 shifted by +2 in t2m
  const int h = 6, w = 6;
  GridStack st;
  st.h = h;
  st.w = w;
  st.start = parse_date("2021-01-01");
  st.vars.assign(std::begin(kAllVars), std::end(kAllVars));
  Rng rng(11);
  std::vector<float> base_t2m(365 * h * w);
  for (auto& v : base_t2m) v = static_cast<float>(rng.uniform(-10, 5));
  const int days_y1 = 365;  // two non-leap years align calendar slots exactly
  const int total = days_y1 + 365;
  for (int d = 0; d < total; ++d) {
    const bool second = d >= days_y1;
    const int base_day = second ? d - days_y1 : d;
    for (Var v : st.vars) {
      Grid g(h, w);
      for (int i = 0; i < h * w; ++i) {
        switch (v) {
          case Var::T2m:
            g.v[i] = base_t2m[static_cast<size_t>(base_day) * h * w + i] + (second ? 2.f : 0.f);
            break;
          case Var::Sic: g.v[i] = 0.5f; break;
          case Var::SivU: g.v[i] = 1.f; break;
          case Var::SivV: g.v[i] = 0.f; break;
          case Var::WindU: g.v[i] = 3.f; break;
          case Var::WindV: g.v[i] = 4.f; break;
          default: g.v[i] = 0.f; break;
        }
      }
      st.grids.push_back(std::move(g));
    }
  }

  AnomalyReport rep = anomaly(st, {2021}, 2022);
  REQUIRE(rep.rows.size() == 12);
  for (const auto& row : rep.rows) {
    REQUIRE(row.defined);
    REQUIRE(row.t2m == Catch::Approx(2.0).margin(1e-6));
    REQUIRE(row.wind_speed == Catch::Approx(0.0).margin(1e-6));
    REQUIRE(row.siv_speed == Catch::Approx(0.0).margin(1e-6));
    REQUIRE(row.ice_area_km2 == Catch::Approx(0.0).margin(1e-6));
  }
  for (size_t i = 0; i < rep.t2m_map.cells(); ++i) {
    REQUIRE(rep.t2m_map.ok[i] == 1);
    REQUIRE(rep.t2m_map.v[i] == Catch::Approx(2.0).margin(1e-4));
    REQUIRE(rep.sic_map.v[i] == Catch::Approx(0.0).margin(1e-6));
  }

  SECTION("identical target and baseline years give zero anomalies") {
    AnomalyReport z = anomaly(st, {2021}, 2021);
    for (const auto& row : z.rows) {
      REQUIRE(row.defined);
      REQUIRE(row.t2m == Catch::Approx(0.0).margin(1e-9));
    }
  }

  SECTION("months absent from the target year are flagged") {
    GridStack part = st;
    part.grids.resize(static_cast<size_t>(days_y1 + 40) * part.vars.size());
    AnomalyReport p = anomaly(part, {2021}, 2022);
    REQUIRE(p.rows[0].defined);   // january present
    REQUIRE(!p.rows[5].defined);  // june missing
  }

  SECTION("empty baseline is an error") {
    REQUIRE_THROWS_AS(anomaly(st, {}, 2022), ConfigError);
  }
}
