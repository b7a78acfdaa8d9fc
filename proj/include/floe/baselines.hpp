#pragma once

// Statistical baselines: persistence and per-pixel linear regression. Both
// predict in the normalized space, like the neural models, with the channel
// layout [u, v, A].

#include <Eigen/Dense>

#include <array>
#include <vector>

#include "floe/pipeline.hpp"

namespace floe {

struct Prediction {
  int h = 0, w = 0;
  std::vector<float> uva;     // 3 * h * w, normalized
  std::vector<uint8_t> mask;  // h * w
};

// Tomorrow equals yesterday: copy the day t-1 input channels bitwise.
inline Prediction persistence_predict(const Sample& s) {
  Prediction p{s.h, s.w, std::vector<float>(3 * s.mask.size()), s.mask};
  const size_t cells = s.mask.size();
  for (int j = 0; j < 3; ++j) {
    const int ch = input_channel(kTargetVars[j], 1);
    std::copy_n(s.input.data() + static_cast<size_t>(ch) * cells, cells,
                p.uva.data() + static_cast<size_t>(j) * cells);
  }
  return p;
}

// Independent least squares per pixel and per output over the 20 input
// channels (no intercept). Pixels with fewer than 20 valid samples are left
// unfit; rank-deficient normal equations fall back to a small ridge.
struct LinregModel {
  int h = 0, w = 0;
  std::array<std::vector<double>, 3> coef;  // [out][pixel * kInputChannels + k]
  std::vector<uint8_t> fit_ok;

  static constexpr double kRidge = 1e-8;
};

inline LinregModel linreg_fit(const std::vector<Sample>& samples,
                              const std::vector<size_t>& idx, double ridge = LinregModel::kRidge) {
  if (idx.empty()) throw DataError("linreg_fit: empty training set");
  const int h = samples[idx[0]].h, w = samples[idx[0]].w;
  const size_t cells = static_cast<size_t>(h) * w;
  constexpr int K = kInputChannels;
  constexpr int KU = K * (K + 1) / 2;  // packed upper triangle

  std::vector<double> gram(cells * KU, 0.0);
  std::vector<double> rhs(cells * 3 * K, 0.0);
  std::vector<int> count(cells, 0);

  std::vector<double> xk(K);
  for (size_t si : idx) {
    const Sample& s = samples[si];
    if (static_cast<size_t>(s.h) * s.w != cells)
      throw DataError("linreg_fit: samples on different grids");
    for (size_t p = 0; p < cells; ++p) {
      if (!s.mask[p]) continue;
      for (int k = 0; k < K; ++k) xk[k] = s.input[static_cast<size_t>(k) * cells + p];
      double* g = gram.data() + p * KU;
      int u = 0;
      for (int a = 0; a < K; ++a)
        for (int b = a; b < K; ++b) g[u++] += xk[a] * xk[b];
      for (int o = 0; o < 3; ++o) {
        const double y = s.target[static_cast<size_t>(o) * cells + p];
        double* r = rhs.data() + (p * 3 + o) * K;
        for (int k = 0; k < K; ++k) r[k] += xk[k] * y;
      }
      ++count[p];
    }
  }

  LinregModel m;
  m.h = h;
  m.w = w;
  m.fit_ok.assign(cells, 0);
  for (auto& c : m.coef) c.assign(cells * K, 0.0);

  Eigen::MatrixXd G(K, K);
  Eigen::VectorXd b(K);
  for (size_t p = 0; p < cells; ++p) {
    if (count[p] < K) continue;
    const double* g = gram.data() + p * KU;
    int u = 0;
    for (int a = 0; a < K; ++a)
      for (int bb = a; bb < K; ++bb) {
        G(a, bb) = g[u];
        G(bb, a) = g[u];
        ++u;
      }
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() != Eigen::Success) {
      Eigen::MatrixXd Gr = G;
      for (int a = 0; a < K; ++a) Gr(a, a) += ridge;
      llt.compute(Gr);
      if (llt.info() != Eigen::Success) continue;  // hopeless pixel, stays unfit
    }
    m.fit_ok[p] = 1;
    for (int o = 0; o < 3; ++o) {
      const double* r = rhs.data() + (p * 3 + o) * K;
      for (int k = 0; k < K; ++k) b(k) = r[k];
      Eigen::VectorXd a = llt.solve(b);
      double* c = m.coef[o].data() + p * K;
      for (int k = 0; k < K; ++k) c[k] = a(k);
    }
  }
  return m;
}

inline Prediction linreg_predict(const LinregModel& m, const Sample& s) {
  const size_t cells = static_cast<size_t>(m.h) * m.w;
  if (s.mask.size() != cells) throw DataError("linreg_predict: grid mismatch");
  Prediction p{m.h, m.w, std::vector<float>(3 * cells, 0.f),
               std::vector<uint8_t>(cells, 0)};
  constexpr int K = kInputChannels;
  for (size_t px = 0; px < cells; ++px) {
    if (!s.mask[px] || !m.fit_ok[px]) continue;  // unfit pixels stay masked
    p.mask[px] = 1;
    for (int o = 0; o < 3; ++o) {
      const double* c = m.coef[o].data() + px * K;
      double acc = 0;
      for (int k = 0; k < K; ++k)
        acc += c[k] * s.input[static_cast<size_t>(k) * cells + px];
      p.uva[static_cast<size_t>(o) * cells + px] = static_cast<float>(acc);
    }
  }
  return p;
}

}  // namespace floe
