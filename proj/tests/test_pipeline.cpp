#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "floe/baselines.hpp"
#include "floe/pipeline.hpp"
#include "floe/sigd.hpp"
#include "test_util.hpp"

using namespace floe;

namespace {

std::filesystem::path tmp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "floe_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// A complete 9-variable stack; field(day, var, y, x) supplies values.
template <class F>
GridStack make_stack(int h, int w, int days, F field) {
  GridStack st;
  st.h = h;
  st.w = w;
  st.start = parse_date("2020-01-01");
  st.vars.assign(std::begin(kAllVars), std::end(kAllVars));
  for (int d = 0; d < days; ++d)
    for (Var v : st.vars) {
      Grid g(h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) g.at(y, x) = field(d, v, y, x);
      st.grids.push_back(std::move(g));
    }
  return st;
}

float default_field(int d, Var v, int y, int x) {
  switch (v) {
    case Var::CoordX: return 25.f * x;
    case Var::CoordY: return 25.f * y;
    case Var::Land: return 0.f;
    case Var::Sic: return 0.5f + 0.01f * ((d + y + x) % 7);
    case Var::T2m: return -5.f + 0.3f * d + 0.1f * y;
    default: return 0.1f * static_cast<int>(v) + 0.02f * d + 0.005f * (y - x);
  }
}

std::vector<uint8_t> coast_oracle(const Grid& land, int buffer) {
  std::vector<uint8_t> mask(land.cells(), 0);
  for (int y = 0; y < land.h; ++y)
    for (int x = 0; x < land.w; ++x) {
      if (land.at(y, x) != 0.f) continue;
      int best = 1 << 20;
      for (int yy = 0; yy < land.h; ++yy)
        for (int xx = 0; xx < land.w; ++xx)
          if (land.at(yy, xx) != 0.f)
            best = std::min(best, std::max(std::abs(yy - y), std::abs(xx - x)));
      mask[static_cast<size_t>(y) * land.w + x] = best > buffer ? 1 : 0;
    }
  return mask;
}

}  // namespace

TEST_CASE("normalization endpoints, midpoint, and round trip") {
  NormSpec n = NormSpec::defaults(8, 8);
  REQUIRE(n.normalize(Var::T2m, -50.0) == -1.0);
  REQUIRE(n.normalize(Var::T2m, 30.0) == 1.0);
  REQUIRE(n.normalize(Var::T2m, -10.0) == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(n.normalize(Var::Sic, 0.5) == Catch::Approx(0.0).margin(1e-15));

  Rng rng(1);
  for (Var v : {Var::SivU, Var::Sic, Var::T2m, Var::WindV, Var::CoordX}) {
    const auto& r = n.range(v);
    for (int i = 0; i < 200; ++i) {
      const double x = rng.uniform(r.lo, r.hi);
      REQUIRE(std::abs(n.denormalize(v, n.normalize(v, x)) - x) < 1e-12);
    }
  }

  SECTION("out-of-range values clamp") {
    REQUIRE(n.normalize(Var::Sic, 2.0) == 1.0);
    REQUIRE(n.normalize(Var::Sic, -1.0) == -1.0);
  }
  SECTION("unknown variable and degenerate range rejected") {
    REQUIRE_THROWS_AS(n.normalize(Var::Land, 0.0), ConfigError);
    NormSpec bad = n;
    bad.ranges[Var::Sic] = {1.0, 1.0};
    REQUIRE_THROWS_AS(bad.normalize(Var::Sic, 0.5), ConfigError);
  }
}

TEST_CASE("bilinear_reproject") {
  const int h = 6, w = 7;
  std::vector<double> ax(w), ay(h);
  for (int i = 0; i < w; ++i) ax[i] = i;
  for (int i = 0; i < h; ++i) ay[i] = i;

  SECTION("identity coordinates reproduce the grid") {
    Rng rng(2);
    Grid src(h, w);
    for (auto& v : src.v) v = static_cast<float>(rng.uniform(-2, 2));
    std::vector<double> dx, dy;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        dx.push_back(x);
        dy.push_back(y);
      }
    Grid out = bilinear_reproject(src, ax, ay, h, w, dx, dy);
    for (size_t i = 0; i < src.v.size(); ++i) {
      REQUIRE(out.ok[i] == 1);
      REQUIRE(out.v[i] == Catch::Approx(src.v[i]).margin(1e-12));
    }
  }

  SECTION("constant and planar fields are reproduced exactly") {
    Grid cst(h, w, 3.5f);
    Grid pln(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) pln.at(y, x) = static_cast<float>(0.5 * x - 1.25 * y + 2.0);
    Rng rng(3);
    std::vector<double> dx, dy;
    for (int i = 0; i < 40; ++i) {
      dx.push_back(rng.uniform(0.0, w - 1.0));
      dy.push_back(rng.uniform(0.0, h - 1.0));
    }
    Grid oc = bilinear_reproject(cst, ax, ay, 1, 40, dx, dy);
    Grid op = bilinear_reproject(pln, ax, ay, 1, 40, dx, dy);
    for (int i = 0; i < 40; ++i) {
      REQUIRE(oc.v[i] == Catch::Approx(3.5).margin(1e-10));
      REQUIRE(op.v[i] == Catch::Approx(0.5 * dx[i] - 1.25 * dy[i] + 2.0).margin(1e-10));
    }
  }

  SECTION("out-of-extent points and invalid nodes come back masked") {
    Grid src(h, w, 1.f);
    src.set(2, 3, 0.f, false);
    std::vector<double> dx = {-0.5, 3.2, 1.0}, dy = {2.0, 2.4, 1.0};
    Grid out = bilinear_reproject(src, ax, ay, 1, 3, dx, dy);
    REQUIRE(out.ok[0] == 0);  // outside extent
    REQUIRE(out.ok[1] == 0);  // touches the invalid node
    REQUIRE(out.ok[2] == 1);
  }

  SECTION("interpolated values stay within the contributing nodes") {
    Rng rng(4);
    Grid src(h, w);
    for (auto& v : src.v) v = static_cast<float>(rng.uniform(-5, 5));
    for (int trial = 0; trial < 100; ++trial) {
      const double x = rng.uniform(0.0, w - 1.001), y = rng.uniform(0.0, h - 1.001);
      Grid out = bilinear_reproject(src, ax, ay, 1, 1, {x}, {y});
      const int jx = static_cast<int>(x), jy = static_cast<int>(y);
      float lo = 1e9f, hi = -1e9f;
      for (int dy2 = 0; dy2 < 2; ++dy2)
        for (int dx2 = 0; dx2 < 2; ++dx2) {
          lo = std::min(lo, src.at(jy + dy2, jx + dx2));
          hi = std::max(hi, src.at(jy + dy2, jx + dx2));
        }
      REQUIRE(out.v[0] >= lo - 1e-6f);
      REQUIRE(out.v[0] <= hi + 1e-6f);
    }
  }
}

TEST_CASE("coast_mask") {
  SECTION("all ocean is all valid") {
    Grid land(5, 5, 0.f);
    auto m = coast_mask(land, 2);
    for (uint8_t v : m) REQUIRE(v == 1);
  }
  SECTION("a single land pixel voids the 5x5 block around it") {
    Grid land(9, 9, 0.f);
    land.at(4, 4) = 1.f;
    auto m = coast_mask(land, 2);
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 9; ++x) {
        const bool inside = std::max(std::abs(y - 4), std::abs(x - 4)) <= 2;
        REQUIRE(m[static_cast<size_t>(y) * 9 + x] == (inside ? 0 : 1));
      }
  }
  SECTION("random masks match the brute-force Chebyshev scan") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      Grid land(8, 11, 0.f);
      for (auto& v : land.v) v = rng.uniform() < 0.2 ? 1.f : 0.f;
      const int buffer = 1 + static_cast<int>(rng.below(3));
      REQUIRE(coast_mask(land, buffer) == coast_oracle(land, buffer));
    }
  }
  SECTION("masks are monotone: adding land only shrinks the valid set") {
    Rng rng(6);
    Grid land(10, 10, 0.f);
    for (auto& v : land.v) v = rng.uniform() < 0.1 ? 1.f : 0.f;
    auto before = coast_mask(land, 2);
    Grid more = land;
    for (int k = 0; k < 5; ++k) more.v[rng.below(more.v.size())] = 1.f;
    auto after = coast_mask(more, 2);
    for (size_t i = 0; i < before.size(); ++i)
      if (after[i]) REQUIRE(before[i] == 1);
  }
}

TEST_CASE("build_samples windows and masks") {
  NormSpec norm = NormSpec::defaults(4, 4);

  SECTION("a 4-day series yields exactly one sample; N days yield N-3") {
    for (int days : {4, 5, 9}) {
      auto st = make_stack(4, 4, days, default_field);
      auto samples = build_samples(st, norm);
      REQUIRE(static_cast<int>(samples.size()) == days - 3);
      REQUIRE(samples.front().date == add_days(st.start, 3));
    }
    auto st3 = make_stack(4, 4, 3, default_field);
    REQUIRE(build_samples(st3, norm).empty());
  }

  SECTION("a wholly-missing day drops exactly the windows covering it") {
    auto st = make_stack(4, 4, 10, default_field);
    const int k = 5;
    Grid& g = st.at(k, Var::Sic);
    std::fill(g.ok.begin(), g.ok.end(), uint8_t(0));
    auto samples = build_samples(st, norm);
    // windows with target day t in [3,9]; day 5 participates in t = 5..8
    REQUIRE(samples.size() == 3);
    std::vector<Date> dates;
    for (const auto& s : samples) dates.push_back(s.date);
    REQUIRE(dates == std::vector<Date>{add_days(st.start, 3), add_days(st.start, 4),
                                       add_days(st.start, 9)});
  }

  SECTION("channel order and normalization") {
    auto st = make_stack(4, 4, 4, default_field);
    auto samples = build_samples(st, norm);
    REQUIRE(samples.size() == 1);
    const Sample& s = samples[0];
    const size_t cells = 16;
    for (float v : s.input) {
      REQUIRE(v >= -1.f);
      REQUIRE(v <= 1.f);
    }
    // day t-1 sic sits at channel 14 and equals the normalized day-2 grid
    for (size_t i = 0; i < cells; ++i) {
      const double raw = st.at(2, Var::Sic).v[i];
      REQUIRE(s.input[14 * cells + i] ==
              Catch::Approx(norm.normalize(Var::Sic, raw)).margin(1e-7));
    }
    // target channel 2 is day-3 sic
    for (size_t i = 0; i < cells; ++i) {
      const double raw = st.at(3, Var::Sic).v[i];
      REQUIRE(s.target[2 * cells + i] ==
              Catch::Approx(norm.normalize(Var::Sic, raw)).margin(1e-7));
    }
  }

  SECTION("land, coastal buffer and per-pixel gaps flow into the mask") {
    auto st = make_stack(8, 8, 4, default_field);
    for (int d = 0; d < 4; ++d) {
      Grid& land = st.at(d, Var::Land);
      for (int x = 0; x < 8; ++x) land.at(7, x) = 1.f;  // south coast
    }
    st.at(1, Var::WindU).set(0, 0, 0.f, false);  // one-pixel gap on an input day
    auto samples = build_samples(st, norm);
    REQUIRE(samples.size() == 1);
    const Sample& s = samples[0];
    REQUIRE(s.mask[0 * 8 + 0] == 0);          // the gap
    REQUIRE(s.mask[7 * 8 + 3] == 0);          // land
    REQUIRE(s.mask[6 * 8 + 3] == 0);          // buffer
    REQUIRE(s.mask[5 * 8 + 3] == 0);          // buffer (2 px)
    REQUIRE(s.mask[4 * 8 + 3] == 1);          // clear ocean
    REQUIRE(s.n_valid == 8 * 5 - 1);
  }
}

TEST_CASE("split_dataset") {
  auto s = split_dataset(10, 0.8, 42);
  REQUIRE(s.train.size() == 8);
  REQUIRE(s.val.size() == 2);

  auto s2 = split_dataset(10, 0.8, 42);
  REQUIRE(s.train == s2.train);
  REQUIRE(s.val == s2.val);

  auto s3 = split_dataset(10, 0.8, 43);
  REQUIRE(s.train != s3.train);

  std::vector<size_t> all = s.train;
  all.insert(all.end(), s.val.begin(), s.val.end());
  std::sort(all.begin(), all.end());
  std::vector<size_t> want(10);
  for (size_t i = 0; i < 10; ++i) want[i] = i;
  REQUIRE(all == want);
}

TEST_CASE("SIGD round trips") {
  auto st = make_stack(5, 6, 4, default_field);
  st.at(2, Var::Sic).set(1, 1, 0.f, false);
  const auto path = tmp_path("roundtrip.sigd");
  write_stack(path.string(), st);
  GridStack back = read_stack(path.string());
  REQUIRE(back.h == st.h);
  REQUIRE(back.w == st.w);
  REQUIRE(back.days() == st.days());
  REQUIRE(back.vars == st.vars);
  REQUIRE(back.start == st.start);
  for (size_t i = 0; i < st.grids.size(); ++i) {
    REQUIRE(back.grids[i].ok == st.grids[i].ok);
    for (size_t j = 0; j < st.grids[i].v.size(); ++j)
      if (st.grids[i].ok[j]) REQUIRE(back.grids[i].v[j] == st.grids[i].v[j]);
  }

  SECTION("file-level round trip is bitwise") {
    const auto path2 = tmp_path("roundtrip2.sigd");
    write_stack(path2.string(), back);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)), {});
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)), {});
    REQUIRE(b1 == b2);
  }
}

TEST_CASE("SIGD rejects corruption and matches the golden byte layout") {
  SECTION("corrupt magic") {
    const auto path = tmp_path("corrupt.sigd");
    std::ofstream os(path, std::ios::binary);
    os.write("SIGDX<garbage>", 14);
    os.close();
    REQUIRE_THROWS_AS(read_stack(path.string()), IoError);
  }
  SECTION("truncated body") {
    auto st = make_stack(4, 4, 2, default_field);
    const auto path = tmp_path("trunc.sigd");
    write_stack(path.string(), st);
    auto sz = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, sz - 10);
    REQUIRE_THROWS_AS(read_stack(path.string()), IoError);
  }
  SECTION("golden reference bytes") {
    // 2x2 grid, one variable (sic), one day, cell (1,0) missing
    GridStack st;
    st.h = 2;
    st.w = 2;
    st.start = parse_date("2020-01-01");
    st.vars = {Var::Sic};
    Grid g(2, 2);
    g.at(0, 0) = 0.25f;
    g.at(0, 1) = 1.0f;
    g.set(1, 0, 0.f, false);
    g.at(1, 1) = -2.0f;
    st.grids.push_back(g);

    std::vector<unsigned char> want;
    auto put_u32 = [&want](uint32_t v) {
      for (int i = 0; i < 4; ++i) want.push_back(static_cast<unsigned char>(v >> (8 * i)));
    };
    auto put_f32 = [&put_u32](float f) {
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(bits);
    };
    for (char c : {'S', 'I', 'G', 'D', '1'}) want.push_back(static_cast<unsigned char>(c));
    put_u32(2);
    put_u32(2);
    put_u32(1);
    put_u32(1);
    put_u32(3);
    for (char c : {'s', 'i', 'c'}) want.push_back(static_cast<unsigned char>(c));
    put_u32(10);
    for (char c : std::string("2020-01-01")) want.push_back(static_cast<unsigned char>(c));
    put_f32(0.25f);
    put_f32(1.0f);
    put_u32(0x7fc00000u);  // canonical quiet NaN
    put_f32(-2.0f);

    const auto path = tmp_path("golden.sigd");
    write_stack(path.string(), st);
    std::ifstream f(path, std::ios::binary);
    std::vector<unsigned char> got((std::istreambuf_iterator<char>(f)), {});
    REQUIRE(got == want);
  }
}

TEST_CASE("persistence prediction copies yesterday bitwise") {
  auto st = make_stack(4, 4, 6, default_field);
  NormSpec norm = NormSpec::defaults(4, 4);
  auto samples = build_samples(st, norm);
  const Sample& s = samples[0];
  Prediction p = persistence_predict(s);
  const size_t cells = 16;
  for (int j = 0; j < 3; ++j) {
    const int ch = input_channel(kTargetVars[j], 1);
    for (size_t i = 0; i < cells; ++i)
      REQUIRE(p.uva[j * cells + i] == s.input[ch * cells + i]);
  }

  SECTION("on a constant-in-time world the prediction equals the target") {
    auto cst = make_stack(4, 4, 5, [](int, Var v, int y, int x) {
      return default_field(0, v, y, x);
    });
    auto cs = build_samples(cst, norm);
    for (const auto& smp : cs) {
      Prediction pp = persistence_predict(smp);
      for (size_t i = 0; i < pp.uva.size(); ++i)
        REQUIRE(pp.uva[i] == Catch::Approx(smp.target[i]).margin(1e-7));
    }
  }
}

TEST_CASE("linreg recovers planted coefficients") {
  const int h = 3, w = 4;
  const size_t cells = static_cast<size_t>(h) * w;
  constexpr int K = kInputChannels;
  Rng rng(7);

  // planted per-pixel coefficients
  std::array<std::vector<double>, 3> planted;
  for (auto& c : planted) {
    c.resize(cells * K);
    for (auto& v : c) v = rng.uniform(-0.5, 0.5);
  }

  auto make_sample = [&](Rng& r) {
    Sample s;
    s.h = h;
    s.w = w;
    s.date = parse_date("2020-01-01");
    s.input.resize(K * cells);
    s.target.assign(3 * cells, 0.f);
    s.mask.assign(cells, 1);
    s.n_valid = static_cast<long>(cells);
    for (auto& v : s.input) v = static_cast<float>(r.uniform(-1, 1));
    for (size_t p = 0; p < cells; ++p)
      for (int o = 0; o < 3; ++o) {
        double acc = 0;
        for (int k = 0; k < K; ++k)
          acc += planted[o][p * K + k] * s.input[static_cast<size_t>(k) * cells + p];
        s.target[static_cast<size_t>(o) * cells + p] = static_cast<float>(acc);
      }
    return s;
  };

  std::vector<Sample> samples;
  std::vector<size_t> idx;
  for (int i = 0; i < 45; ++i) {
    samples.push_back(make_sample(rng));
    idx.push_back(i);
  }
  LinregModel m = linreg_fit(samples, idx);
  for (size_t p = 0; p < cells; ++p) REQUIRE(m.fit_ok[p] == 1);
  double worst = 0;
  for (int o = 0; o < 3; ++o)
    for (size_t i = 0; i < cells * K; ++i)
      worst = std::max(worst, std::abs(m.coef[o][i] - planted[o][i]));
  // float32 sample storage bounds the attainable accuracy; the planted system
  // itself is noiseless
  REQUIRE(worst < 1e-5);

  SECTION("training residual on the noiseless system is tiny") {
    double rss = 0;
    long n = 0;
    for (const auto& s : samples) {
      Prediction p = linreg_predict(m, s);
      for (size_t i = 0; i < p.uva.size(); ++i) {
        const double d = p.uva[i] - s.target[i];
        rss += d * d;
        ++n;
      }
    }
    REQUIRE(std::sqrt(rss / n) < 1e-6);
  }

  SECTION("perturbing any coefficient does not decrease the residual") {
    auto residual = [&](const LinregModel& mm) {
      double rss = 0;
      for (const auto& s : samples) {
        Prediction p = linreg_predict(mm, s);
        for (size_t i = 0; i < p.uva.size(); ++i) {
          const double d = p.uva[i] - s.target[i];
          rss += d * d;
        }
      }
      return rss;
    };
    const double base = residual(m);
    Rng pr(8);
    for (int trial = 0; trial < 10; ++trial) {
      LinregModel mm = m;
      const int o = static_cast<int>(pr.below(3));
      const size_t i = pr.below(cells * K);
      mm.coef[o][i] += pr.uniform() < 0.5 ? 1e-3 : -1e-3;
      REQUIRE(residual(mm) >= base);
    }
  }
}

TEST_CASE("linreg edge cases") {
  const int h = 2, w = 2;
  const size_t cells = 4;
  constexpr int K = kInputChannels;
  Rng rng(9);

  SECTION("zero targets give zero coefficients") {
    std::vector<Sample> samples;
    std::vector<size_t> idx;
    for (int i = 0; i < 30; ++i) {
      Sample s;
      s.h = h;
      s.w = w;
      s.input.resize(K * cells);
      for (auto& v : s.input) v = static_cast<float>(rng.uniform(-1, 1));
      s.target.assign(3 * cells, 0.f);
      s.mask.assign(cells, 1);
      s.n_valid = 4;
      samples.push_back(std::move(s));
      idx.push_back(i);
    }
    LinregModel m = linreg_fit(samples, idx);
    for (int o = 0; o < 3; ++o)
      for (double c : m.coef[o]) REQUIRE(std::abs(c) < 1e-12);
  }

  SECTION("pixels with too few valid samples stay unfit and masked") {
    std::vector<Sample> samples;
    std::vector<size_t> idx;
    for (int i = 0; i < 30; ++i) {
      Sample s;
      s.h = h;
      s.w = w;
      s.input.resize(K * cells);
      for (auto& v : s.input) v = static_cast<float>(rng.uniform(-1, 1));
      s.target.assign(3 * cells, 0.1f);
      s.mask.assign(cells, 1);
      if (i >= 5) s.mask[0] = 0;  // pixel 0 valid in only 5 samples (< 20)
      s.n_valid = 4;
      samples.push_back(std::move(s));
      idx.push_back(i);
    }
    LinregModel m = linreg_fit(samples, idx);
    REQUIRE(m.fit_ok[0] == 0);
    REQUIRE(m.fit_ok[1] == 1);
    Prediction p = linreg_predict(m, samples[0]);
    REQUIRE(p.mask[0] == 0);
    REQUIRE(p.mask[1] == 1);
  }
}
