#pragma once

// Sample assembly: slides a 4-day window over a GridStack and emits one
// training/eval record per window. Inputs are the previous 3 days of the six
// dynamic variables plus the two coordinate channels (20 channels total, in
// that order, day-major); the target is the next day's (u, v, A). Windows
// touching a wholly-missing grid are dropped; per-pixel gaps, land, and the
// coastal buffer go into the sample mask instead.

#include <vector>

#include "floe/grid.hpp"
#include "floe/tensor.hpp"

namespace floe {

inline constexpr Var kDynamicVars[6] = {Var::SivU, Var::SivV, Var::Sic,
                                        Var::T2m,  Var::WindU, Var::WindV};
inline constexpr Var kTargetVars[3] = {Var::SivU, Var::SivV, Var::Sic};
inline constexpr int kInputDays = 3;
inline constexpr int kInputChannels = kInputDays * 6 + 2;  // 20

// Channel index of variable `v` on input day offset `back` (1 = yesterday,
// 2 = two days ago, 3 = three days ago).
inline int input_channel(Var v, int back) {
  for (int j = 0; j < 6; ++j)
    if (kDynamicVars[j] == v) return (kInputDays - back) * 6 + j;
  if (v == Var::CoordX) return 18;
  if (v == Var::CoordY) return 19;
  throw ConfigError(std::string("variable not part of the input stack: ") + var_name(v));
}

struct Sample {
  Date date{};  // target day
  int h = 0, w = 0;
  std::vector<float> input;   // kInputChannels * h * w, normalized
  std::vector<float> target;  // 3 * h * w, normalized
  std::vector<uint8_t> mask;  // h * w
  long n_valid = 0;
};

inline std::vector<Sample> build_samples(const GridStack& stack, const NormSpec& norm,
                                         int coast_buffer_px = 2) {
  std::vector<Sample> out;
  const int days = stack.days();
  if (days < kInputDays + 1) return out;
  for (Var v : kDynamicVars)
    if (!stack.has(v))
      throw DataError(std::string("stack lacks required variable ") + var_name(v));
  if (!stack.has(Var::CoordX) || !stack.has(Var::CoordY))
    throw DataError("stack lacks coordinate variables");

  const int h = stack.h, w = stack.w;
  const size_t cells = static_cast<size_t>(h) * w;

  std::vector<uint8_t> coast(cells, 1);
  if (stack.has(Var::Land)) coast = coast_mask(stack.at(0, Var::Land), coast_buffer_px);

  Grid coord_x = normalize(stack.at(0, Var::CoordX), Var::CoordX, norm);
  Grid coord_y = normalize(stack.at(0, Var::CoordY), Var::CoordY, norm);

  for (int t = kInputDays; t < days; ++t) {
    // whole-grid gaps drop the window
    bool gap = false;
    for (int d = t - kInputDays; d <= t && !gap; ++d)
      for (Var v : kDynamicVars)
        if (stack.at(d, v).all_invalid()) {
          gap = true;
          break;
        }
    if (gap) continue;

    Sample s;
    s.date = stack.date(t);
    s.h = h;
    s.w = w;
    s.input.assign(static_cast<size_t>(kInputChannels) * cells, 0.f);
    s.target.assign(3 * cells, 0.f);
    s.mask.assign(coast.begin(), coast.end());

    for (int back = kInputDays; back >= 1; --back) {
      const int day = t - back;
      for (int j = 0; j < 6; ++j) {
        const Var v = kDynamicVars[j];
        const Grid g = normalize(stack.at(day, v), v, norm);
        float* dst = s.input.data() + static_cast<size_t>(input_channel(v, back)) * cells;
        for (size_t i = 0; i < cells; ++i) {
          if (g.ok[i]) dst[i] = g.v[i];
          else s.mask[i] = 0;
        }
      }
    }
    for (size_t i = 0; i < cells; ++i) {
      if (coord_x.ok[i]) s.input[18 * cells + i] = coord_x.v[i];
      if (coord_y.ok[i]) s.input[19 * cells + i] = coord_y.v[i];
      if (!coord_x.ok[i] || !coord_y.ok[i]) s.mask[i] = 0;
    }
    for (int j = 0; j < 3; ++j) {
      const Var v = kTargetVars[j];
      const Grid g = normalize(stack.at(t, v), v, norm);
      float* dst = s.target.data() + static_cast<size_t>(j) * cells;
      for (size_t i = 0; i < cells; ++i) {
        if (g.ok[i]) dst[i] = g.v[i];
        else s.mask[i] = 0;
      }
    }
    for (uint8_t m : s.mask) s.n_valid += m;
    if (s.n_valid == 0) continue;  // nothing to learn or score
    out.push_back(std::move(s));
  }
  return out;
}

struct Split {
  std::vector<size_t> train, val;
};

// Deterministic shuffled split: disjoint, exhaustive, reproducible per seed.
inline Split split_dataset(size_t n, double ratio, uint64_t seed) {
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("split ratio must lie in [0, 1]");
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  const size_t n_train = static_cast<size_t>(std::llround(ratio * static_cast<double>(n)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + std::min(n_train, n));
  s.val.assign(idx.begin() + std::min(n_train, n), idx.end());
  return s;
}

template <class T>
struct Batch {
  Tensor<T> input, target, mask;
};

template <class T>
Batch<T> assemble_batch(const std::vector<Sample>& samples, const std::vector<size_t>& idx,
                        size_t first, size_t count) {
  const Sample& s0 = samples[idx[first]];
  const int B = static_cast<int>(count), h = s0.h, w = s0.w;
  const size_t cells = static_cast<size_t>(h) * w;
  Batch<T> b{Tensor<T>({B, kInputChannels, h, w}), Tensor<T>({B, 3, h, w}),
             Tensor<T>({B, 1, h, w})};
  for (int k = 0; k < B; ++k) {
    const Sample& s = samples[idx[first + k]];
    for (size_t i = 0; i < s.input.size(); ++i)
      b.input.data()[k * s.input.size() + i] = static_cast<T>(s.input[i]);
    for (size_t i = 0; i < s.target.size(); ++i)
      b.target.data()[k * s.target.size() + i] = static_cast<T>(s.target[i]);
    for (size_t i = 0; i < cells; ++i)
      b.mask.data()[k * cells + i] = static_cast<T>(s.mask[i]);
  }
  return b;
}

}  // namespace floe
