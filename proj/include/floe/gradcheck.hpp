#pragma once

// Finite-difference verification sweep across every differentiable op, the
// attention blocks, the WAM, and the loss. Runs in double precision; each
// entry reports its max relative error over the requested seeds.

#include <string>
#include <utility>
#include <vector>

#include "floe/attention.hpp"
#include "floe/train.hpp"

namespace floe {

struct GradCheckResult {
  std::string op;
  double max_rel_err = 0;
  bool pass = false;
};

inline constexpr double kGradCheckTol = 1e-4;

inline std::vector<GradCheckResult> run_gradcheck(int n_seeds = 5, double eps = 1e-5) {
  using Td = Tensor<double>;
  std::vector<GradCheckResult> results;

  auto tensor = [](Rng& rng, Shape s, double lo = -1, double hi = 1) {
    return Td::uniform(s, lo, hi, rng);
  };
  // entries within a pooling block separated well beyond the probe step
  auto pool_safe = [&tensor](Rng& rng, Shape s) {
    Td x = tensor(rng, s);
    for (;;) {
      bool ok = true;
      for (int b = 0; ok && b < s[0]; ++b)
        for (int c = 0; ok && c < s[1]; ++c)
          for (int y = 0; ok && y < s[2]; y += 2)
            for (int x2 = 0; x2 < s[3]; x2 += 2) {
              double v[4] = {x.at(b, c, y, x2), x.at(b, c, y, x2 + 1),
                             x.at(b, c, y + 1, x2), x.at(b, c, y + 1, x2 + 1)};
              for (int i = 0; i < 4 && ok; ++i)
                for (int j = i + 1; j < 4; ++j)
                  if (std::abs(v[i] - v[j]) < 1e-3) {
                    ok = false;
                    break;
                  }
              if (!ok) break;
            }
      if (ok) return x;
      x = tensor(rng, s);
    }
  };

  struct Entry {
    std::string name;
    std::function<double(Rng&, double)> run;  // returns max rel err for one seed
  };
  std::vector<Entry> entries;

  entries.push_back({"conv2d(input)", [&](Rng& rng, double e) {
    Td k = tensor(rng, {3, 2, 3, 3}, -0.6, 0.6);
    Td b = tensor(rng, {1, 3, 1, 1}, -0.2, 0.2);
    Td x = tensor(rng, {2, 2, 5, 5});
    auto f = [&](Td& t) { return sum_all(activation(conv2d(t, k, b), Act::Tanh)); };
    return grad_check(f, x, e);
  }});
  entries.push_back({"conv2d(kernel,bias)", [&](Rng& rng, double e) {
    Td k = tensor(rng, {3, 2, 3, 3}, -0.6, 0.6);
    Td b = tensor(rng, {1, 3, 1, 1}, -0.2, 0.2);
    Td x = tensor(rng, {1, 2, 5, 5});
    auto fk = [&](Td& t) { return sum_all(activation(conv2d(x, t, b), Act::Tanh)); };
    double worst = grad_check(fk, k, e);
    auto fb = [&](Td& t) { return sum_all(activation(conv2d(x, k, t), Act::Tanh)); };
    return std::max(worst, grad_check(fb, b, e));
  }});
  entries.push_back({"conv_transpose2d", [&](Rng& rng, double e) {
    Td k = tensor(rng, {3, 2, 2, 2}, -0.6, 0.6);
    Td x = tensor(rng, {1, 3, 4, 4});
    auto f = [&](Td& t) { return sum_all(activation(conv_transpose2d(t, k), Act::Tanh)); };
    double worst = grad_check(f, x, e);
    auto fk = [&](Td& t) { return sum_all(activation(conv_transpose2d(x, t), Act::Tanh)); };
    return std::max(worst, grad_check(fk, k, e));
  }});
  entries.push_back({"maxpool2d", [&](Rng& rng, double e) {
    Td x = pool_safe(rng, {1, 2, 6, 6});
    auto f = [](Td& t) { return sum_all(ew(maxpool2d(t), maxpool2d(t), EwOp::Mul)); };
    return grad_check(f, x, e);
  }});
  entries.push_back({"pool_spatial(avg)", [&](Rng& rng, double e) {
    Td x = tensor(rng, {2, 3, 4, 4});
    auto f = [](Td& t) {
      Td p = pool_spatial(t, PoolMode::Avg);
      return sum_all(ew(p, p, EwOp::Mul));
    };
    return grad_check(f, x, e);
  }});
  // the global max only needs the top two values separated per plane
  auto spatial_max_safe = [&tensor](Rng& rng, Shape s) {
    const long N = static_cast<long>(s[2]) * s[3];
    for (;;) {
      Td x = tensor(rng, s);
      bool ok = true;
      for (long p = 0; ok && p < static_cast<long>(s[0]) * s[1]; ++p) {
        double top = -1e9, second = -1e9;
        for (long i = 0; i < N; ++i) {
          const double v = x.data()[p * N + i];
          if (v > top) {
            second = top;
            top = v;
          } else if (v > second) {
            second = v;
          }
        }
        ok = top - second > 1e-3;
      }
      if (ok) return x;
    }
  };
  entries.push_back({"pool_spatial(max)", [&](Rng& rng, double e) {
    Td x = spatial_max_safe(rng, {1, 3, 4, 4});
    auto f = [](Td& t) { return sum_all(activation(pool_spatial(t, PoolMode::Max), Act::Tanh)); };
    return grad_check(f, x, e);
  }});
  entries.push_back({"pool_channel(avg)", [&](Rng& rng, double e) {
    Td x = tensor(rng, {2, 4, 3, 3});
    auto f = [](Td& t) { return sum_all(activation(pool_channel(t, PoolMode::Avg), Act::Tanh)); };
    return grad_check(f, x, e);
  }});
  // per-pixel channel max: separate the top two values across channels
  auto channel_max_safe = [&tensor](Rng& rng, Shape s) {
    const long N = static_cast<long>(s[2]) * s[3];
    for (;;) {
      Td x = tensor(rng, s);
      bool ok = true;
      for (int b = 0; ok && b < s[0]; ++b)
        for (long i = 0; ok && i < N; ++i) {
          double top = -1e9, second = -1e9;
          for (int c = 0; c < s[1]; ++c) {
            const double v = x.data()[(static_cast<long>(b) * s[1] + c) * N + i];
            if (v > top) {
              second = top;
              top = v;
            } else if (v > second) {
              second = v;
            }
          }
          ok = top - second > 1e-3;
        }
      if (ok) return x;
    }
  };
  entries.push_back({"pool_channel(max)", [&](Rng& rng, double e) {
    Td x = channel_max_safe(rng, {1, 4, 4, 4});
    auto f = [](Td& t) { return sum_all(activation(pool_channel(t, PoolMode::Max), Act::Tanh)); };
    return grad_check(f, x, e);
  }});
  entries.push_back({"activation(tanh)", [&](Rng& rng, double e) {
    Td x = tensor(rng, {1, 2, 4, 4}, -1.5, 1.5);
    auto f = [](Td& t) { return sum_all(activation(t, Act::Tanh)); };
    return grad_check(f, x, e);
  }});
  entries.push_back({"activation(sigmoid)", [&](Rng& rng, double e) {
    Td x = tensor(rng, {1, 2, 4, 4}, -2.0, 2.0);
    auto f = [](Td& t) { return sum_all(ew(activation(t, Act::Sigmoid),
                                            activation(t, Act::Sigmoid), EwOp::Mul)); };
    return grad_check(f, x, e);
  }});
  entries.push_back({"activation(relu)", [&](Rng& rng, double e) {
    Td x = tensor(rng, {1, 2, 4, 4});
    for (long i = 0; i < x.numel(); ++i) {
      double v = x.data()[i];
      x.data()[i] = (v >= 0 ? 0.2 : -0.2) + v;  // keep probes away from the kink
    }
    auto f = [](Td& t) { return sum_all(activation(t, Act::Relu)); };
    return grad_check(f, x, e);
  }});
  entries.push_back({"dense", [&](Rng& rng, double e) {
    Td w = tensor(rng, {3, 6, 1, 1}, -0.5, 0.5);
    Td b = tensor(rng, {1, 3, 1, 1}, -0.2, 0.2);
    Td x = tensor(rng, {2, 6, 1, 1});
    auto f = [&](Td& t) { return sum_all(activation(dense(t, w, b), Act::Tanh)); };
    double worst = grad_check(f, x, e);
    auto fw = [&](Td& t) { return sum_all(activation(dense(x, t, b), Act::Tanh)); };
    return std::max(worst, grad_check(fw, w, e));
  }});
  entries.push_back({"ew(add,broadcast)", [&](Rng& rng, double e) {
    Td y = tensor(rng, {1, 3, 4, 4});
    Td x = tensor(rng, {2, 3, 4, 4});
    auto f = [&](Td& t) { return sum_all(activation(ew(t, y, EwOp::Add), Act::Tanh)); };
    double worst = grad_check(f, x, e);
    auto fy = [&](Td& t) { return sum_all(activation(ew(x, t, EwOp::Add), Act::Tanh)); };
    return std::max(worst, grad_check(fy, y, e));
  }});
  entries.push_back({"ew(mul,broadcast)", [&](Rng& rng, double e) {
    Td y = tensor(rng, {2, 1, 4, 4});
    Td x = tensor(rng, {2, 3, 4, 4});
    auto f = [&](Td& t) { return sum_all(ew(t, y, EwOp::Mul)); };
    double worst = grad_check(f, x, e);
    auto fy = [&](Td& t) { return sum_all(ew(x, t, EwOp::Mul)); };
    return std::max(worst, grad_check(fy, y, e));
  }});
  entries.push_back({"cbam_apply", [&](Rng& rng, double e) {
    auto pc = make_channel_attn<double>(6, 8, rng);
    auto ps = make_spatial_attn<double>(7, rng);
    Td x = tensor(rng, {1, 6, 4, 4});
    auto f = [&](Td& t) { return sum_all(cbam_apply(t, pc, ps)); };
    double worst = grad_check(f, x, e);
    auto fk = [&](Td& t) {
      SpatialAttnParams<double> ps2 = ps;
      ps2.kernel = t;
      return sum_all(cbam_apply(x, pc, ps2));
    };
    Td kk = ps.kernel.clone();
    worst = std::max(worst, grad_check(fk, kk, e));
    auto fw = [&](Td& t) {
      ChannelAttnParams<double> pc2 = pc;
      pc2.w1 = t;
      return sum_all(cbam_apply(x, pc2, ps));
    };
    Td w1 = pc.w1.clone();
    return std::max(worst, grad_check(fw, w1, e));
  }});
  entries.push_back({"wam_forward", [&](Rng& rng, double e) {
    WamParams<double> p = make_wam<double>(4, 4, 4, 8, 7, rng);
    for (Td* g : {&p.a_in_siv, &p.a_in_sic, &p.a_out_siv, &p.a_out_sic})
      for (long i = 0; i < g->numel(); ++i) g->data()[i] = rng.uniform(-1, 1);
    Td xs = tensor(rng, {1, 4, 4, 4});
    Td xc = tensor(rng, {1, 4, 4, 4});
    auto loss = [&]() {
      auto [os, oc] = wam_forward(xs, xc, p);
      return ew(sum_all(ew(os, os, EwOp::Mul)), sum_all(ew(oc, oc, EwOp::Mul)), EwOp::Add);
    };
    double worst = 0;
    auto ff = [&](Td&) { return loss(); };
    for (Td* g : {&p.a_in_siv, &p.a_in_sic, &p.a_out_siv, &p.a_out_sic})
      worst = std::max(worst, grad_check(ff, *g, e));
    worst = std::max(worst, grad_check(ff, xs, e));
    return worst;
  }});
  entries.push_back({"masked_loss", [&](Rng& rng, double e) {
    Td target = tensor(rng, {2, 3, 4, 4});
    Td mask = Td::zeros({2, 1, 4, 4});
    for (long i = 0; i < mask.numel(); ++i) mask.data()[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
    mask.data()[0] = 1.0;
    Td pred = tensor(rng, {2, 3, 4, 4});
    auto f = [&](Td& t) { return masked_loss(t, target, mask, 0.5); };
    return grad_check(f, pred, e);
  }});

  for (const Entry& entry : entries) {
    GradCheckResult r;
    r.op = entry.name;
    for (int s = 1; s <= n_seeds; ++s) {
      Rng rng(0xf10e5eed + static_cast<uint64_t>(s));
      r.max_rel_err = std::max(r.max_rel_err, entry.run(rng, eps));
    }
    r.pass = r.max_rel_err < kGradCheckTol;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace floe
