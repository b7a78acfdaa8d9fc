#pragma once

// Channel attention, spatial attention, and the weighting attention module
// (WAM) that lets the two forecast branches exchange features. A WAM blends
// the branch features with learnable per-element input weights, refines the
// blend with channel+spatial attention, and re-injects it into each branch
// scaled by learnable output weights, added to that branch's own attended
// features.

#include <utility>

#include "floe/tensor.hpp"

namespace floe {

// MLP bottleneck C -> max(1, C/r) -> C, shared between the average- and
// max-pooled descriptors. No biases.
template <class T>
struct ChannelAttnParams {
  Tensor<T> w1;  // (hidden, C, 1, 1)
  Tensor<T> w2;  // (C, hidden, 1, 1)
  bool identity = false;  // test hook: skip the sigmoid, emit an all-ones map
};

// Single k x k convolution collapsing the 2-channel pooled stack to 1 channel.
template <class T>
struct SpatialAttnParams {
  Tensor<T> kernel;  // (1, 2, k, k)
  bool identity = false;
};

template <class T>
struct AttnPair {
  ChannelAttnParams<T> channel;
  SpatialAttnParams<T> spatial;
};

template <class T>
struct WamParams {
  // Learnable weight grids, one element per feature-map cell, initialized to
  // 0.5 so both branches start equally shared.
  Tensor<T> a_in_siv, a_in_sic, a_out_siv, a_out_sic;  // (1, C, H, W)
  AttnPair<T> shared, siv, sic;

  void set_identity_attention(bool on) {
    for (AttnPair<T>* p : {&shared, &siv, &sic}) {
      p->channel.identity = on;
      p->spatial.identity = on;
    }
  }
};

template <class T>
Tensor<T> init_uniform(Shape s, long fan_in, Rng& rng) {
  const T bound = static_cast<T>(std::sqrt(1.0 / static_cast<double>(fan_in)));
  return Tensor<T>::uniform(s, -bound, bound, rng, true);
}

template <class T>
ChannelAttnParams<T> make_channel_attn(int channels, int reduction, Rng& rng) {
  const int hidden = std::max(1, channels / reduction);
  ChannelAttnParams<T> p;
  p.w1 = init_uniform<T>({hidden, channels, 1, 1}, channels, rng);
  p.w2 = init_uniform<T>({channels, hidden, 1, 1}, hidden, rng);
  return p;
}

template <class T>
SpatialAttnParams<T> make_spatial_attn(int kernel, Rng& rng) {
  SpatialAttnParams<T> p;
  p.kernel = init_uniform<T>({1, 2, kernel, kernel}, 2L * kernel * kernel, rng);
  return p;
}

template <class T>
WamParams<T> make_wam(int channels, int h, int w, int reduction, int kernel, Rng& rng) {
  WamParams<T> p;
  const Shape gs{1, channels, h, w};
  p.a_in_siv = Tensor<T>::full(gs, T(0.5), true);
  p.a_in_sic = Tensor<T>::full(gs, T(0.5), true);
  p.a_out_siv = Tensor<T>::full(gs, T(0.5), true);
  p.a_out_sic = Tensor<T>::full(gs, T(0.5), true);
  p.shared.channel = make_channel_attn<T>(channels, reduction, rng);
  p.shared.spatial = make_spatial_attn<T>(kernel, rng);
  p.siv.channel = make_channel_attn<T>(channels, reduction, rng);
  p.siv.spatial = make_spatial_attn<T>(kernel, rng);
  p.sic.channel = make_channel_attn<T>(channels, reduction, rng);
  p.sic.spatial = make_spatial_attn<T>(kernel, rng);
  return p;
}

// M_c(x) = sigmoid(MLP(avgpool_s(x)) + MLP(maxpool_s(x))), shape (B, C, 1, 1).
template <class T>
Tensor<T> channel_attention(const Tensor<T>& x, const ChannelAttnParams<T>& p) {
  if (p.identity) return Tensor<T>::full({x.batch(), x.channels(), 1, 1}, T(1));
  if (x.channels() != p.w1.shape()[1])
    throw ShapeError(strprintf(
        "channel_attention: input has %d channels but parameters expect %d",
        x.channels(), p.w1.shape()[1]));
  auto mlp = [&p](const Tensor<T>& d) {
    return dense(activation(dense(d, p.w1), Act::Relu), p.w2);
  };
  Tensor<T> a = mlp(pool_spatial(x, PoolMode::Avg));
  Tensor<T> m = mlp(pool_spatial(x, PoolMode::Max));
  return activation(ew(a, m, EwOp::Add), Act::Sigmoid);
}

// M_s(x) = sigmoid(conv_k([avgpool_c(x); maxpool_c(x)])), shape (B, 1, H, W),
// broadcast over channels when applied.
template <class T>
Tensor<T> spatial_attention(const Tensor<T>& x, const SpatialAttnParams<T>& p) {
  if (p.identity) return Tensor<T>::full({x.batch(), 1, x.height(), x.width()}, T(1));
  Tensor<T> stacked =
      concat_channels(pool_channel(x, PoolMode::Avg), pool_channel(x, PoolMode::Max));
  return activation(conv2d(stacked, p.kernel), Act::Sigmoid);
}

// M_s(x) (*) (M_c(x) (*) x). Both maps are computed from the same input x.
template <class T>
Tensor<T> cbam_apply(const Tensor<T>& x, const ChannelAttnParams<T>& pc,
                     const SpatialAttnParams<T>& ps) {
  Tensor<T> mc = channel_attention(x, pc);
  Tensor<T> ms = spatial_attention(x, ps);
  return ew(ew(x, mc, EwOp::Mul), ms, EwOp::Mul);
}

template <class T>
Tensor<T> cbam_apply(const Tensor<T>& x, const AttnPair<T>& p) {
  return cbam_apply(x, p.channel, p.spatial);
}

// The input shared information: A_in_siv (*) xi_siv + A_in_sic (*) xi_sic.
template <class T>
Tensor<T> wam_share(const Tensor<T>& xi_siv, const Tensor<T>& xi_sic,
                    const WamParams<T>& p) {
  if (xi_siv.shape() != xi_sic.shape())
    throw ShapeError("wam: branch features differ, " + shape_str(xi_siv.shape()) +
                     " vs " + shape_str(xi_sic.shape()));
  const Shape gs = p.a_in_siv.shape();
  if (gs[1] != xi_siv.channels() || gs[2] != xi_siv.height() || gs[3] != xi_siv.width())
    throw ShapeError("wam: weight grids " + shape_str(gs) +
                     " do not match features " + shape_str(xi_siv.shape()));
  return ew(ew(xi_siv, p.a_in_siv, EwOp::Mul),
            ew(xi_sic, p.a_in_sic, EwOp::Mul), EwOp::Add);
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> wam_forward(const Tensor<T>& xi_siv,
                                            const Tensor<T>& xi_sic,
                                            const WamParams<T>& p) {
  Tensor<T> share = wam_share(xi_siv, xi_sic, p);
  Tensor<T> share_attn = cbam_apply(share, p.shared);
  Tensor<T> out_siv =
      ew(ew(share_attn, p.a_out_siv, EwOp::Mul), cbam_apply(xi_siv, p.siv), EwOp::Add);
  Tensor<T> out_sic =
      ew(ew(share_attn, p.a_out_sic, EwOp::Mul), cbam_apply(xi_sic, p.sic), EwOp::Add);
  return {out_siv, out_sic};
}

}  // namespace floe
