#pragma once

// The forecasting model zoo. All neural models consume a (B, 20, H, W) input
// stack and emit (B, 3, H, W): normalized u-drift, v-drift, concentration.
// Output heads are 1x1 convolutions under tanh so predictions live in the
// same [-1, 1] space as the normalized targets.
//
//   his_unet   shared 32-filter stem, two U-net branches (drift / sic) that
//              exchange features through six weighting attention modules,
//              one after each pool and each up-convolution
//   eb_unet    same two branches with no cross-talk (early branch)
//   lb_unet    one shared trunk, branched at the last conv + output layer
//   unet       single U-net, three output channels
//   fcn7       seven 3x3 convs of 64 filters, no pooling, 3x3 head
//   cnn_dense  five conv+pool stages, flatten, one dense layer, reshape
//
// persistence and the per-pixel linear regression baseline live in
// baselines.hpp since they operate on samples, not parameter tensors.

#include <array>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "floe/attention.hpp"
#include "floe/tensor.hpp"

namespace floe {

enum class ModelKind { HisUnet, EbUnet, LbUnet, Unet, Fcn7, CnnDense, Persistence, Linreg };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::HisUnet: return "his_unet";
    case ModelKind::EbUnet: return "eb_unet";
    case ModelKind::LbUnet: return "lb_unet";
    case ModelKind::Unet: return "unet";
    case ModelKind::Fcn7: return "fcn7";
    case ModelKind::CnnDense: return "cnn_dense";
    case ModelKind::Persistence: return "persistence";
    case ModelKind::Linreg: return "linreg";
  }
  return "?";
}

inline ModelKind model_kind_from_name(const std::string& s) {
  for (ModelKind k : {ModelKind::HisUnet, ModelKind::EbUnet, ModelKind::LbUnet,
                      ModelKind::Unet, ModelKind::Fcn7, ModelKind::CnnDense,
                      ModelKind::Persistence, ModelKind::Linreg})
    if (s == model_kind_name(k)) return k;
  throw ConfigError("unknown model kind: " + s);
}

struct ModelSpec {
  ModelKind kind = ModelKind::HisUnet;
  int input_channels = 20;
  int output_channels = 3;
  int stem_channels = 32;
  int depth = 3;  // pool levels; channel ladder 32 -> 64 -> 128 -> 256
  Act activation = Act::Tanh;
  uint64_t seed = 0;
  int h = 256, w = 256;  // grid the model is built for
  int attn_reduction = 8;
  int attn_kernel = 7;

  int pool_factor() const { return 1 << depth; }
};

inline constexpr int kFcn7Width = 64;
inline constexpr int kCnnDenseWidth = 64;
inline constexpr int kCnnDenseStages = 5;

template <class T>
struct ParamStore {
  std::vector<std::pair<std::string, Tensor<T>>> items;

  Tensor<T> add(const std::string& name, Tensor<T> t) {
    items.emplace_back(name, t);
    return t;
  }

  Tensor<T>* find(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }

  long total_parameters() const {
    long n = 0;
    for (const auto& [name, t] : items) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [n, t] : items) t.zero_grad();
  }

  void set_requires_grad(bool rg) {
    for (auto& [n, t] : items) t.set_requires_grad(rg);
  }
};

template <class T>
struct ConvLayer {
  Tensor<T> w, b;
};

template <class T>
struct UpconvLayer {
  Tensor<T> w;
};

template <class T>
struct DenseLayer {
  Tensor<T> w, b;
};

template <class T>
struct EncBlock {
  ConvLayer<T> c1, c2;
};

template <class T>
struct DecBlock {
  UpconvLayer<T> up;
  ConvLayer<T> c1, c2;
};

// Encoder/bottleneck/decoder of one depth-3 U-net, without stem and head.
template <class T>
struct UnetCore {
  std::array<EncBlock<T>, 3> enc;
  EncBlock<T> mid;
  std::array<DecBlock<T>, 3> dec;
};

template <class T>
struct HisUnetNet {
  ConvLayer<T> stem;
  UnetCore<T> siv, sic;
  ConvLayer<T> head_siv, head_sic;
  std::array<WamParams<T>, 6> wams;
};

template <class T>
struct EbUnetNet {
  ConvLayer<T> stem;
  UnetCore<T> siv, sic;
  ConvLayer<T> head_siv, head_sic;
};

template <class T>
struct LbUnetNet {
  ConvLayer<T> stem;
  std::array<EncBlock<T>, 3> enc;
  EncBlock<T> mid;
  DecBlock<T> dec0, dec1;
  UpconvLayer<T> dec2_up;
  ConvLayer<T> dec2_c1;
  ConvLayer<T> last_siv, last_sic;  // branched final 3x3 convs
  ConvLayer<T> head_siv, head_sic;
};

template <class T>
struct UnetNet {
  ConvLayer<T> stem;
  UnetCore<T> core;
  ConvLayer<T> head;
};

template <class T>
struct Fcn7Net {
  std::array<ConvLayer<T>, 7> convs;
  ConvLayer<T> head;  // 3x3 as well
};

template <class T>
struct CnnDenseNet {
  std::array<ConvLayer<T>, kCnnDenseStages> convs;
  DenseLayer<T> fc;
};

namespace detail {

template <class T>
ConvLayer<T> add_conv(ParamStore<T>& st, Rng& rng, const std::string& name, int cout,
                      int cin, int k = 3) {
  ConvLayer<T> L;
  L.w = st.add(name + ".w", init_uniform<T>({cout, cin, k, k}, static_cast<long>(cin) * k * k, rng));
  L.b = st.add(name + ".b", init_uniform<T>({1, cout, 1, 1}, static_cast<long>(cin) * k * k, rng));
  return L;
}

template <class T>
UpconvLayer<T> add_upconv(ParamStore<T>& st, Rng& rng, const std::string& name, int cin,
                          int cout) {
  UpconvLayer<T> L;
  L.w = st.add(name + ".w", init_uniform<T>({cin, cout, 2, 2}, static_cast<long>(cin) * 4, rng));
  return L;
}

template <class T>
EncBlock<T> add_enc(ParamStore<T>& st, Rng& rng, const std::string& p, int cin, int cout) {
  return {add_conv(st, rng, p + ".c1", cout, cin), add_conv(st, rng, p + ".c2", cout, cout)};
}

template <class T>
DecBlock<T> add_dec(ParamStore<T>& st, Rng& rng, const std::string& p, int cin, int cout) {
  DecBlock<T> d;
  d.up = add_upconv(st, rng, p + ".up", cin, cout);
  d.c1 = add_conv(st, rng, p + ".c1", cout, 2 * cout);  // after skip concat
  d.c2 = add_conv(st, rng, p + ".c2", cout, cout);
  return d;
}

template <class T>
UnetCore<T> add_core(ParamStore<T>& st, Rng& rng, const std::string& p, int stem) {
  UnetCore<T> c;
  c.enc[0] = add_enc(st, rng, p + ".enc0", stem, stem);
  c.enc[1] = add_enc(st, rng, p + ".enc1", stem, 2 * stem);
  c.enc[2] = add_enc(st, rng, p + ".enc2", 2 * stem, 4 * stem);
  c.mid = add_enc(st, rng, p + ".mid", 4 * stem, 8 * stem);
  c.dec[0] = add_dec(st, rng, p + ".dec0", 8 * stem, 4 * stem);
  c.dec[1] = add_dec(st, rng, p + ".dec1", 4 * stem, 2 * stem);
  c.dec[2] = add_dec(st, rng, p + ".dec2", 2 * stem, stem);
  return c;
}

template <class T>
WamParams<T> add_wam(ParamStore<T>& st, Rng& rng, const std::string& p, int c, int h,
                     int w, int reduction, int kernel) {
  WamParams<T> wam = make_wam<T>(c, h, w, reduction, kernel, rng);
  st.add(p + ".a_in_siv", wam.a_in_siv);
  st.add(p + ".a_in_sic", wam.a_in_sic);
  st.add(p + ".a_out_siv", wam.a_out_siv);
  st.add(p + ".a_out_sic", wam.a_out_sic);
  const char* sub[3] = {"shared", "siv", "sic"};
  AttnPair<T>* pairs[3] = {&wam.shared, &wam.siv, &wam.sic};
  for (int i = 0; i < 3; ++i) {
    st.add(p + "." + sub[i] + ".ca.w1", pairs[i]->channel.w1);
    st.add(p + "." + sub[i] + ".ca.w2", pairs[i]->channel.w2);
    st.add(p + "." + sub[i] + ".sa.w", pairs[i]->spatial.kernel);
  }
  return wam;
}

// WAM level dimensions: encoder levels 1-3 sit after each pool, decoder
// levels 4-6 right after each up-convolution.
inline void wam_dims(const ModelSpec& s, int level /*1-6*/, int& c, int& h, int& w) {
  const int stem = s.stem_channels;
  if (level <= 3) {
    c = stem << (level - 1);
    h = s.h >> level;
    w = s.w >> level;
  } else {
    const int j = level - 4;  // dec block index
    c = stem << (2 - j);
    h = s.h >> (3 - 1 - j);
    w = s.w >> (3 - 1 - j);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> conv_act(const Tensor<T>& x, const ConvLayer<T>& L, Act act) {
  return activation(conv2d(x, L.w, L.b), act);
}

// Both branches in lockstep; `wams` null runs the early-branched variant.
template <class T>
std::pair<Tensor<T>, Tensor<T>> dual_core_forward(const Tensor<T>& stem_out,
                                                  const UnetCore<T>& siv,
                                                  const UnetCore<T>& sic,
                                                  const std::array<WamParams<T>, 6>* wams,
                                                  Act act) {
  Tensor<T> a = stem_out, b = stem_out;
  std::array<Tensor<T>, 3> skip_a, skip_b;
  for (int l = 0; l < 3; ++l) {
    a = conv_act(a, siv.enc[l].c1, act);
    a = conv_act(a, siv.enc[l].c2, act);
    skip_a[l] = a;
    a = maxpool2d(a);
    b = conv_act(b, sic.enc[l].c1, act);
    b = conv_act(b, sic.enc[l].c2, act);
    skip_b[l] = b;
    b = maxpool2d(b);
    if (wams) std::tie(a, b) = wam_forward(a, b, (*wams)[l]);
  }
  a = conv_act(a, siv.mid.c1, act);
  a = conv_act(a, siv.mid.c2, act);
  b = conv_act(b, sic.mid.c1, act);
  b = conv_act(b, sic.mid.c2, act);
  for (int l = 0; l < 3; ++l) {
    a = activation(conv_transpose2d(a, siv.dec[l].up.w), act);
    b = activation(conv_transpose2d(b, sic.dec[l].up.w), act);
    if (wams) std::tie(a, b) = wam_forward(a, b, (*wams)[3 + l]);
    a = concat_channels(a, skip_a[2 - l]);
    a = conv_act(a, siv.dec[l].c1, act);
    a = conv_act(a, siv.dec[l].c2, act);
    b = concat_channels(b, skip_b[2 - l]);
    b = conv_act(b, sic.dec[l].c1, act);
    b = conv_act(b, sic.dec[l].c2, act);
  }
  return {a, b};
}

template <class T>
Tensor<T> single_core_forward(const Tensor<T>& stem_out, const UnetCore<T>& c, Act act) {
  Tensor<T> a = stem_out;
  std::array<Tensor<T>, 3> skip;
  for (int l = 0; l < 3; ++l) {
    a = conv_act(a, c.enc[l].c1, act);
    a = conv_act(a, c.enc[l].c2, act);
    skip[l] = a;
    a = maxpool2d(a);
  }
  a = conv_act(a, c.mid.c1, act);
  a = conv_act(a, c.mid.c2, act);
  for (int l = 0; l < 3; ++l) {
    a = activation(conv_transpose2d(a, c.dec[l].up.w), act);
    a = concat_channels(a, skip[2 - l]);
    a = conv_act(a, c.dec[l].c1, act);
    a = conv_act(a, c.dec[l].c2, act);
  }
  return a;
}

template <class T>
struct ModelState {
  ModelSpec spec;
  ParamStore<T> params;
  std::variant<HisUnetNet<T>, EbUnetNet<T>, LbUnetNet<T>, UnetNet<T>, Fcn7Net<T>,
               CnnDenseNet<T>>
      net;

  static ModelState build(const ModelSpec& spec) {
    using namespace detail;
    ModelState s;
    s.spec = spec;
    Rng rng(spec.seed);
    ParamStore<T>& st = s.params;
    const int stem = spec.stem_channels;
    const int in = spec.input_channels;
    switch (spec.kind) {
      case ModelKind::HisUnet: {
        HisUnetNet<T> n;
        n.stem = add_conv(st, rng, "stem", stem, in);
        n.siv = add_core(st, rng, "siv", stem);
        n.sic = add_core(st, rng, "sic", stem);
        n.head_siv = add_conv(st, rng, "siv.head", 2, stem, 1);
        n.head_sic = add_conv(st, rng, "sic.head", 1, stem, 1);
        for (int lvl = 1; lvl <= 6; ++lvl) {
          int c, h, w;
          wam_dims(spec, lvl, c, h, w);
          n.wams[lvl - 1] = add_wam(st, rng, strprintf("wam%d", lvl), c, h, w,
                                    spec.attn_reduction, spec.attn_kernel);
        }
        s.net = std::move(n);
        break;
      }
      case ModelKind::EbUnet: {
        EbUnetNet<T> n;
        n.stem = add_conv(st, rng, "stem", stem, in);
        n.siv = add_core(st, rng, "siv", stem);
        n.sic = add_core(st, rng, "sic", stem);
        n.head_siv = add_conv(st, rng, "siv.head", 2, stem, 1);
        n.head_sic = add_conv(st, rng, "sic.head", 1, stem, 1);
        s.net = std::move(n);
        break;
      }
      case ModelKind::LbUnet: {
        LbUnetNet<T> n;
        n.stem = add_conv(st, rng, "stem", stem, in);
        n.enc[0] = add_enc(st, rng, "trunk.enc0", stem, stem);
        n.enc[1] = add_enc(st, rng, "trunk.enc1", stem, 2 * stem);
        n.enc[2] = add_enc(st, rng, "trunk.enc2", 2 * stem, 4 * stem);
        n.mid = add_enc(st, rng, "trunk.mid", 4 * stem, 8 * stem);
        n.dec0 = add_dec(st, rng, "trunk.dec0", 8 * stem, 4 * stem);
        n.dec1 = add_dec(st, rng, "trunk.dec1", 4 * stem, 2 * stem);
        n.dec2_up = add_upconv(st, rng, "trunk.dec2.up", 2 * stem, stem);
        n.dec2_c1 = add_conv(st, rng, "trunk.dec2.c1", stem, 2 * stem);
        n.last_siv = add_conv(st, rng, "siv.last", stem, stem);
        n.last_sic = add_conv(st, rng, "sic.last", stem, stem);
        n.head_siv = add_conv(st, rng, "siv.head", 2, stem, 1);
        n.head_sic = add_conv(st, rng, "sic.head", 1, stem, 1);
        s.net = std::move(n);
        break;
      }
      case ModelKind::Unet: {
        UnetNet<T> n;
        n.stem = add_conv(st, rng, "stem", stem, in);
        n.core = add_core(st, rng, "trunk", stem);
        n.head = add_conv(st, rng, "head", spec.output_channels, stem, 1);
        s.net = std::move(n);
        break;
      }
      case ModelKind::Fcn7: {
        Fcn7Net<T> n;
        for (int i = 0; i < 7; ++i)
          n.convs[i] = add_conv(st, rng, strprintf("conv%d", i + 1), kFcn7Width,
                                i == 0 ? in : kFcn7Width);
        n.head = add_conv(st, rng, "head", spec.output_channels, kFcn7Width);
        s.net = std::move(n);
        break;
      }
      case ModelKind::CnnDense: {
        if (spec.h % 32 != 0 || spec.w % 32 != 0)
          throw ShapeError(strprintf(
              "cnn_dense: grid %dx%d must be a multiple of 32 (five pooling stages)",
              spec.h, spec.w));
        CnnDenseNet<T> n;
        for (int i = 0; i < kCnnDenseStages; ++i)
          n.convs[i] = add_conv(st, rng, strprintf("conv%d", i + 1), kCnnDenseWidth,
                                i == 0 ? in : kCnnDenseWidth);
        const long feat = static_cast<long>(kCnnDenseWidth) * (spec.h / 32) * (spec.w / 32);
        const long out = static_cast<long>(spec.output_channels) * spec.h * spec.w;
        DenseLayer<T> fc;
        fc.w = st.add("fc.w", init_uniform<T>({static_cast<int>(out), static_cast<int>(feat), 1, 1},
                                              feat, rng));
        fc.b = st.add("fc.b", init_uniform<T>({1, static_cast<int>(out), 1, 1}, feat, rng));
        n.fc = fc;
        s.net = std::move(n);
        break;
      }
      default:
        throw ConfigError(strprintf("model kind '%s' has no parametric network",
                                    model_kind_name(spec.kind)));
    }
    return s;
  }

  // (B, input_channels, H, W) -> (B, 3, H, W) in normalized space.
  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.channels() != spec.input_channels)
      throw ShapeError(strprintf("forward: expected %d input channels, got %d",
                                 spec.input_channels, x.channels()));
    const Act act = spec.activation;
    return std::visit(
        [&](const auto& n) -> Tensor<T> {
          using N = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<N, HisUnetNet<T>>) {
            require_grid(x, true);
            Tensor<T> s0 = conv_act(x, n.stem, act);
            auto [a, b] = dual_core_forward(s0, n.siv, n.sic, &n.wams, act);
            Tensor<T> uv = activation(conv2d(a, n.head_siv.w, n.head_siv.b), Act::Tanh);
            Tensor<T> ac = activation(conv2d(b, n.head_sic.w, n.head_sic.b), Act::Tanh);
            return concat_channels(uv, ac);
          } else if constexpr (std::is_same_v<N, EbUnetNet<T>>) {
            require_grid(x, false);
            Tensor<T> s0 = conv_act(x, n.stem, act);
            auto [a, b] = dual_core_forward(s0, n.siv, n.sic,
                                            static_cast<const std::array<WamParams<T>, 6>*>(nullptr),
                                            act);
            Tensor<T> uv = activation(conv2d(a, n.head_siv.w, n.head_siv.b), Act::Tanh);
            Tensor<T> ac = activation(conv2d(b, n.head_sic.w, n.head_sic.b), Act::Tanh);
            return concat_channels(uv, ac);
          } else if constexpr (std::is_same_v<N, LbUnetNet<T>>) {
            require_grid(x, false);
            Tensor<T> a = conv_act(x, n.stem, act);
            std::array<Tensor<T>, 3> skip;
            for (int l = 0; l < 3; ++l) {
              a = conv_act(a, n.enc[l].c1, act);
              a = conv_act(a, n.enc[l].c2, act);
              skip[l] = a;
              a = maxpool2d(a);
            }
            a = conv_act(a, n.mid.c1, act);
            a = conv_act(a, n.mid.c2, act);
            const DecBlock<T>* blocks[2] = {&n.dec0, &n.dec1};
            for (int l = 0; l < 2; ++l) {
              a = activation(conv_transpose2d(a, blocks[l]->up.w), act);
              a = concat_channels(a, skip[2 - l]);
              a = conv_act(a, blocks[l]->c1, act);
              a = conv_act(a, blocks[l]->c2, act);
            }
            a = activation(conv_transpose2d(a, n.dec2_up.w), act);
            a = concat_channels(a, skip[0]);
            a = conv_act(a, n.dec2_c1, act);
            Tensor<T> fa = conv_act(a, n.last_siv, act);
            Tensor<T> fb = conv_act(a, n.last_sic, act);
            Tensor<T> uv = activation(conv2d(fa, n.head_siv.w, n.head_siv.b), Act::Tanh);
            Tensor<T> ac = activation(conv2d(fb, n.head_sic.w, n.head_sic.b), Act::Tanh);
            return concat_channels(uv, ac);
          } else if constexpr (std::is_same_v<N, UnetNet<T>>) {
            require_grid(x, false);
            Tensor<T> s0 = conv_act(x, n.stem, act);
            Tensor<T> a = single_core_forward(s0, n.core, act);
            return activation(conv2d(a, n.head.w, n.head.b), Act::Tanh);
          } else if constexpr (std::is_same_v<N, Fcn7Net<T>>) {
            Tensor<T> a = x;
            for (const auto& c : n.convs) a = conv_act(a, c, act);
            return activation(conv2d(a, n.head.w, n.head.b), Act::Tanh);
          } else {
            static_assert(std::is_same_v<N, CnnDenseNet<T>>);
            if (x.height() != spec.h || x.width() != spec.w)
              throw ShapeError(strprintf("cnn_dense: built for %dx%d, got %dx%d",
                                         spec.h, spec.w, x.height(), x.width()));
            Tensor<T> a = x;
            for (const auto& c : n.convs) a = maxpool2d(conv_act(a, c, act));
            Tensor<T> f = dense(flatten(a), n.fc.w, n.fc.b);
            return activation(reshape(f, {x.batch(), spec.output_channels, spec.h, spec.w}),
                              Act::Tanh);
          }
        },
        net);
  }

 private:
  void require_grid(const Tensor<T>& x, bool exact) const {
    const int f = spec.pool_factor();
    if (x.height() % f != 0 || x.width() % f != 0)
      throw ShapeError(strprintf(
          "%s: spatial dims %dx%d must be multiples of %d (depth %d)",
          model_kind_name(spec.kind), x.height(), x.width(), f, spec.depth));
    if (exact && (x.height() != spec.h || x.width() != spec.w))
      throw ShapeError(strprintf(
          "%s: weight grids were built for %dx%d, got %dx%d",
          model_kind_name(spec.kind), spec.h, spec.w, x.height(), x.width()));
  }
};

}  // namespace floe
