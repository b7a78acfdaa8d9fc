#pragma once

// Rank-4 (batch, channel, height, width) tensors with reverse-mode automatic
// differentiation. The graph is built on the fly: every op returns a fresh
// node holding its value, links to its parents, and a closure that scatters
// the node's cotangent into the parents' grad buffers. backward() walks the
// nodes in reverse topological order. Convolutions and dense layers lower to
// GEMM (im2col) so a single core gets SIMD throughput; everything else is
// plain loops.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <utility>
#include <vector>

#include "floe/common.hpp"

namespace floe {

using Shape = std::array<int, 4>;  // B, C, H, W

inline long shape_numel(const Shape& s) {
  return static_cast<long>(s[0]) * s[1] * s[2] * s[3];
}

inline std::string shape_str(const Shape& s) {
  return strprintf("(%d,%d,%d,%d)", s[0], s[1], s[2], s[3]);
}

enum class Act { Tanh, Sigmoid, Relu };

inline Act act_from_name(const std::string& s) {
  if (s == "tanh") return Act::Tanh;
  if (s == "sigmoid") return Act::Sigmoid;
  if (s == "relu") return Act::Relu;
  throw ConfigError("unknown activation kind: " + s);
}

inline const char* act_name(Act a) {
  switch (a) {
    case Act::Tanh: return "tanh";
    case Act::Sigmoid: return "sigmoid";
    case Act::Relu: return "relu";
  }
  return "?";
}

enum class PoolMode { Avg, Max };
enum class EwOp { Add, Mul };

template <class T>
class Tensor {
 public:
  struct Node {
    Shape shape{0, 0, 0, 0};
    AVec<T> value;
    AVec<T> grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
  };

  Tensor() = default;

  explicit Tensor(Shape s, bool requires_grad = false) {
    if (s[0] <= 0 || s[1] <= 0 || s[2] <= 0 || s[3] <= 0)
      throw ShapeError("tensor dimensions must be positive, got " + shape_str(s));
    n_ = std::make_shared<Node>();
    n_->shape = s;
    n_->value.assign(shape_numel(s), T(0));
    n_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape s, bool rg = false) { return Tensor(s, rg); }

  static Tensor full(Shape s, T v, bool rg = false) {
    Tensor t(s, rg);
    std::fill(t.n_->value.begin(), t.n_->value.end(), v);
    return t;
  }

  static Tensor from(Shape s, const std::vector<T>& v, bool rg = false) {
    Tensor t(s, rg);
    if (static_cast<long>(v.size()) != t.numel())
      throw ShapeError(strprintf("buffer length %zu does not match shape %s",
                                 v.size(), shape_str(s).c_str()));
    t.n_->value.assign(v.begin(), v.end());
    return t;
  }

  static Tensor uniform(Shape s, T lo, T hi, Rng& rng, bool rg = false) {
    Tensor t(s, rg);
    for (auto& v : t.n_->value) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  int batch() const { return n_->shape[0]; }
  int channels() const { return n_->shape[1]; }
  int height() const { return n_->shape[2]; }
  int width() const { return n_->shape[3]; }
  long numel() const { return static_cast<long>(n_->value.size()); }

  T* data() { return n_->value.data(); }
  const T* data() const { return n_->value.data(); }
  AVec<T>& values() { return n_->value; }
  const AVec<T>& values() const { return n_->value; }

  T& at(int b, int c, int y, int x) { return n_->value[flat(b, c, y, x)]; }
  T at(int b, int c, int y, int x) const { return n_->value[flat(b, c, y, x)]; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) { n_->requires_grad = rg; }

  bool has_grad() const { return n_ && !n_->grad.empty(); }
  AVec<T>& grad() { return n_->grad; }
  const AVec<T>& grad() const { return n_->grad; }
  void zero_grad() { n_->grad.clear(); }

  // Deep, detached copy (leaf; keeps requires_grad flag).
  Tensor clone() const {
    Tensor t(n_->shape, n_->requires_grad);
    t.n_->value = n_->value;
    return t;
  }

  T scalar() const {
    if (numel() != 1)
      throw ShapeError("scalar() on tensor of shape " + shape_str(n_->shape));
    return n_->value[0];
  }

  // Reverse-mode sweep from a scalar node. Repeated calls accumulate.
  void backward() const {
    if (numel() != 1)
      throw ShapeError("backward() requires a scalar loss, got shape " +
                       shape_str(n_->shape));
    std::vector<Node*> order;
    topo(order);
    // Interior nodes get a fresh cotangent each sweep; leaves accumulate, so
    // repeated backward() calls add their contributions.
    for (Node* n : order)
      if (n->backprop) n->grad.assign(n->value.size(), T(0));
    n_->ensure_grad();
    n_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
  }

  std::shared_ptr<Node> node() const { return n_; }

  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

 private:
  long flat(int b, int c, int y, int x) const {
    const Shape& s = n_->shape;
    return ((static_cast<long>(b) * s[1] + c) * s[2] + y) * s[3] + x;
  }

  // Post-order DFS over parent edges; reversed it yields children before
  // parents, so each node's grad is complete before its backprop runs.
  void topo(std::vector<Node*>& order) const {
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node* p = n->parents[i++].get();
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> n_;
};

namespace detail {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <class T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Builds the op node. Parents and the backprop closure are only retained when
// some input requires grad, so inference builds no graph at all.
template <class T>
Tensor<T> make_op(Shape s, std::vector<Tensor<T>> inputs,
                  std::function<void(typename Tensor<T>::Node&)> backprop) {
  bool rg = false;
  for (const auto& in : inputs)
    if (in.defined() && in.requires_grad()) rg = true;
  Tensor<T> out(s, rg);
  if (rg) {
    auto n = out.node();
    for (const auto& in : inputs)
      if (in.defined()) n->parents.push_back(in.node());
    n->backprop = std::move(backprop);
  }
  return out;
}

// Patch matrix for same-padding convolution: column j is the zero-padded
// (C*k*k) patch around output pixel j, laid out (c, ky, kx) row-major to
// match the kernel's (co, ci, ky, kx) flattening.
template <class T>
void im2col(const T* src, int C, int H, int W, int k, T* col) {
  const int pad = k / 2;
  long idx = 0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < C; ++c) {
        const T* plane = src + static_cast<long>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= H) {
            for (int kx = 0; kx < k; ++kx) col[idx++] = T(0);
            continue;
          }
          const T* row = plane + static_cast<long>(sy) * W;
          for (int kx = 0; kx < k; ++kx) {
            const int sx = x + kx - pad;
            col[idx++] = (sx >= 0 && sx < W) ? row[sx] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, int C, int H, int W, int k, T* dst) {
  const int pad = k / 2;
  long idx = 0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < C; ++c) {
        T* plane = dst + static_cast<long>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= H) {
            idx += k;
            continue;
          }
          T* row = plane + static_cast<long>(sy) * W;
          for (int kx = 0; kx < k; ++kx) {
            const int sx = x + kx - pad;
            if (sx >= 0 && sx < W) row[sx] += col[idx];
            ++idx;
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: odd square kernel, stride 1, zero padding k/2 ("same"), so spatial
// dims are preserved. kernel shape (C_out, C_in, k, k); bias (1, C_out, 1, 1)
// or default-constructed for none.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel,
                 const Tensor<T>& bias = {}) {
  const Shape xs = x.shape(), ks = kernel.shape();
  const int k = ks[2];
  if (ks[2] != ks[3] || k % 2 == 0)
    throw ShapeError(strprintf("conv2d: kernel must be square with odd size, got %dx%d",
                               ks[2], ks[3]));
  if (xs[1] != ks[1])
    throw ShapeError(strprintf(
        "conv2d: input channels (%d) do not match kernel input channels (%d)",
        xs[1], ks[1]));
  const int B = xs[0], Cin = xs[1], H = xs[2], W = xs[3], Cout = ks[0];
  if (bias.defined()) {
    const Shape bs = bias.shape();
    if (bs != Shape{1, Cout, 1, 1})
      throw ShapeError(strprintf("conv2d: bias shape %s does not match output channels (%d)",
                                 shape_str(bs).c_str(), Cout));
  }
  const long N = static_cast<long>(H) * W;
  const long Kdim = static_cast<long>(Cin) * k * k;

  auto xn = x.node();
  auto kn = kernel.node();
  auto bn = bias.defined() ? bias.node() : nullptr;

  Tensor<T> out = detail::make_op<T>(
      {B, Cout, H, W}, {x, kernel, bias},
      [xn, kn, bn, B, Cin, Cout, H, W, k, N, Kdim](typename Tensor<T>::Node& self) {
        using namespace detail;
        AVec<T> colbuf(Kdim * N);
        const bool need_dx = xn->requires_grad;
        const bool need_dk = kn->requires_grad;
        const bool need_db = bn && bn->requires_grad;
        if (need_dx) xn->ensure_grad();
        if (need_dk) kn->ensure_grad();
        if (need_db) bn->ensure_grad();
        Eigen::Map<const MatRM<T>> Km(kn->value.data(), Cout, Kdim);
        AVec<T> dcol(need_dx ? Kdim * N : 0);
        for (int b = 0; b < B; ++b) {
          Eigen::Map<const MatRM<T>> G(self.grad.data() + static_cast<long>(b) * Cout * N,
                                       Cout, N);
          if (need_dk || need_dx)
            im2col(xn->value.data() + static_cast<long>(b) * Cin * H * W, Cin, H, W, k,
                   colbuf.data());
          if (need_dk) {
            Eigen::Map<const MatCM<T>> Col(colbuf.data(), Kdim, N);
            Eigen::Map<MatRM<T>> dK(kn->grad.data(), Cout, Kdim);
            dK.noalias() += G * Col.transpose();
          }
          if (need_db) {
            Eigen::Map<VecX<T>> db(bn->grad.data(), Cout);
            db.noalias() += G.rowwise().sum();
          }
          if (need_dx) {
            Eigen::Map<const MatCM<T>> Col(colbuf.data(), Kdim, N);
            Eigen::Map<MatCM<T>> dCol(dcol.data(), Kdim, N);
            dCol.noalias() = Km.transpose() * G;
            col2im_add(dcol.data(), Cin, H, W, k,
                       xn->grad.data() + static_cast<long>(b) * Cin * H * W);
          }
        }
      });

  {
    using namespace detail;
    AVec<T> colbuf(Kdim * N);
    Eigen::Map<const MatRM<T>> Km(kn->value.data(), Cout, Kdim);
    for (int b = 0; b < B; ++b) {
      im2col(xn->value.data() + static_cast<long>(b) * Cin * H * W, Cin, H, W, k,
             colbuf.data());
      Eigen::Map<const MatCM<T>> Col(colbuf.data(), Kdim, N);
      Eigen::Map<MatRM<T>> O(out.data() + static_cast<long>(b) * Cout * N, Cout, N);
      O.noalias() = Km * Col;
      if (bn) {
        Eigen::Map<const VecX<T>> bv(bn->value.data(), Cout);
        O.colwise() += bv;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv_transpose2d: 2x2 kernel, stride 2, so output spatial dims are exactly
// doubled and the stride-2 tiles do not overlap. kernel shape
// (C_in, C_out, 2, 2); no bias (the up-convolution layers carry none).
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& kernel) {
  const Shape xs = x.shape(), ks = kernel.shape();
  if (ks[2] != 2 || ks[3] != 2)
    throw ShapeError(strprintf("conv_transpose2d: kernel must be 2x2, got %dx%d",
                               ks[2], ks[3]));
  if (xs[1] != ks[0])
    throw ShapeError(strprintf(
        "conv_transpose2d: input channels (%d) do not match kernel input channels (%d)",
        xs[1], ks[0]));
  const int B = xs[0], Cin = xs[1], H = xs[2], W = xs[3], Cout = ks[1];
  const int Ho = 2 * H, Wo = 2 * W;
  const long N = static_cast<long>(H) * W;

  auto xn = x.node();
  auto kn = kernel.node();

  // Kernel tap (dy,dx) as a contiguous (Cout x Cin) matrix.
  auto gather_tap = [Cin, Cout](const T* kv, int dy, int dx, AVec<T>& ks_) {
    ks_.resize(static_cast<size_t>(Cout) * Cin);
    for (int co = 0; co < Cout; ++co)
      for (int ci = 0; ci < Cin; ++ci)
        ks_[static_cast<size_t>(co) * Cin + ci] =
            kv[((static_cast<long>(ci) * Cout + co) * 2 + dy) * 2 + dx];
  };

  Tensor<T> out = detail::make_op<T>(
      {B, Cout, Ho, Wo}, {x, kernel},
      [xn, kn, gather_tap, B, Cin, Cout, H, W, Ho, Wo, N](typename Tensor<T>::Node& self) {
        using namespace detail;
        const bool need_dx = xn->requires_grad;
        const bool need_dk = kn->requires_grad;
        if (need_dx) xn->ensure_grad();
        if (need_dk) kn->ensure_grad();
        AVec<T> ksub, gsub(static_cast<size_t>(Cout) * N),
            dks(static_cast<size_t>(Cout) * Cin);
        for (int b = 0; b < B; ++b) {
          const T* xv = xn->value.data() + static_cast<long>(b) * Cin * H * W;
          T* dxv = need_dx ? xn->grad.data() + static_cast<long>(b) * Cin * H * W : nullptr;
          const T* gout = self.grad.data() + static_cast<long>(b) * Cout * Ho * Wo;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              // gather strided cotangent tap into (Cout x N)
              for (int co = 0; co < Cout; ++co) {
                const T* gp = gout + static_cast<long>(co) * Ho * Wo;
                T* gs = gsub.data() + static_cast<long>(co) * N;
                for (int y = 0; y < H; ++y)
                  for (int x2 = 0; x2 < W; ++x2)
                    gs[y * W + x2] = gp[(2 * y + dy) * Wo + (2 * x2 + dx)];
              }
              Eigen::Map<const MatRM<T>> G(gsub.data(), Cout, N);
              Eigen::Map<const MatRM<T>> X(xv, Cin, N);
              if (need_dk) {
                Eigen::Map<MatRM<T>> dKs(dks.data(), Cout, Cin);
                dKs.noalias() = G * X.transpose();
                for (int co = 0; co < Cout; ++co)
                  for (int ci = 0; ci < Cin; ++ci)
                    kn->grad[((static_cast<long>(ci) * Cout + co) * 2 + dy) * 2 + dx] +=
                        dks[static_cast<size_t>(co) * Cin + ci];
              }
              if (need_dx) {
                gather_tap(kn->value.data(), dy, dx, ksub);
                Eigen::Map<const MatRM<T>> Ks(ksub.data(), Cout, Cin);
                Eigen::Map<MatRM<T>> dX(dxv, Cin, N);
                dX.noalias() += Ks.transpose() * G;
              }
            }
          }
        }
      });

  {
    using namespace detail;
    AVec<T> ksub, osub(static_cast<size_t>(Cout) * N);
    for (int b = 0; b < B; ++b) {
      const T* xv = xn->value.data() + static_cast<long>(b) * Cin * H * W;
      T* ov = out.data() + static_cast<long>(b) * Cout * Ho * Wo;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          gather_tap(kn->value.data(), dy, dx, ksub);
          Eigen::Map<const MatRM<T>> Ks(ksub.data(), Cout, Cin);
          Eigen::Map<const MatRM<T>> X(xv, Cin, N);
          Eigen::Map<MatRM<T>> O(osub.data(), Cout, N);
          O.noalias() = Ks * X;
          for (int co = 0; co < Cout; ++co) {
            const T* os = osub.data() + static_cast<long>(co) * N;
            T* op = ov + static_cast<long>(co) * Ho * Wo;
            for (int y = 0; y < H; ++y)
              for (int x2 = 0; x2 < W; ++x2)
                op[(2 * y + dy) * Wo + (2 * x2 + dx)] = os[y * W + x2];
          }
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// maxpool2d: 2x2, stride 2. Gradient goes to the argmax only; ties break to
// the first element in row-major scan order of the block.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
  const Shape xs = x.shape();
  const int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (H % 2 != 0 || W % 2 != 0)
    throw ShapeError(strprintf("maxpool2d: spatial dims must be even, got %dx%d", H, W));
  const int Ho = H / 2, Wo = W / 2;
  auto xn = x.node();
  auto arg = std::make_shared<std::vector<long>>(
      static_cast<size_t>(B) * C * Ho * Wo);

  Tensor<T> out = detail::make_op<T>(
      {B, C, Ho, Wo}, {x},
      [xn, arg](typename Tensor<T>::Node& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          xn->grad[(*arg)[i]] += self.grad[i];
      });

  long oi = 0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* plane = x.data() + (static_cast<long>(b) * C + c) * H * W;
      for (int y = 0; y < Ho; ++y)
        for (int xo = 0; xo < Wo; ++xo) {
          long base = static_cast<long>(2 * y) * W + 2 * xo;
          long best = base;
          T bv = plane[base];
          const long cand[3] = {base + 1, base + W, base + W + 1};
          for (long p : cand)
            if (plane[p] > bv) {
              bv = plane[p];
              best = p;
            }
          out.data()[oi] = bv;
          (*arg)[oi] = (static_cast<long>(b) * C + c) * H * W + best;
          ++oi;
        }
    }
  return out;
}

// Global spatial reduction per channel -> (B, C, 1, 1).
template <class T>
Tensor<T> pool_spatial(const Tensor<T>& x, PoolMode mode) {
  const Shape xs = x.shape();
  const int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const long N = static_cast<long>(H) * W;
  auto xn = x.node();

  if (mode == PoolMode::Avg) {
    Tensor<T> out = detail::make_op<T>(
        {B, C, 1, 1}, {x},
        [xn, N](typename Tensor<T>::Node& self) {
          xn->ensure_grad();
          const T inv = T(1) / static_cast<T>(N);
          for (size_t i = 0; i < self.grad.size(); ++i) {
            const T g = self.grad[i] * inv;
            T* d = xn->grad.data() + static_cast<long>(i) * N;
            for (long j = 0; j < N; ++j) d[j] += g;
          }
        });
    for (long i = 0; i < static_cast<long>(B) * C; ++i) {
      const T* p = x.data() + i * N;
      double s = 0;
      for (long j = 0; j < N; ++j) s += p[j];
      out.data()[i] = static_cast<T>(s / static_cast<double>(N));
    }
    return out;
  }

  auto arg = std::make_shared<std::vector<long>>(static_cast<size_t>(B) * C);
  Tensor<T> out = detail::make_op<T>(
      {B, C, 1, 1}, {x},
      [xn, arg, N](typename Tensor<T>::Node& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          xn->grad[static_cast<long>(i) * N + (*arg)[i]] += self.grad[i];
      });
  for (long i = 0; i < static_cast<long>(B) * C; ++i) {
    const T* p = x.data() + i * N;
    long best = 0;
    for (long j = 1; j < N; ++j)
      if (p[j] > p[best]) best = j;
    out.data()[i] = p[best];
    (*arg)[i] = best;
  }
  return out;
}

// Reduction along the channel axis -> (B, 1, H, W).
template <class T>
Tensor<T> pool_channel(const Tensor<T>& x, PoolMode mode) {
  const Shape xs = x.shape();
  const int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const long N = static_cast<long>(H) * W;
  auto xn = x.node();

  if (mode == PoolMode::Avg) {
    Tensor<T> out = detail::make_op<T>(
        {B, 1, H, W}, {x},
        [xn, B, C, N](typename Tensor<T>::Node& self) {
          xn->ensure_grad();
          const T inv = T(1) / static_cast<T>(C);
          for (int b = 0; b < B; ++b) {
            const T* g = self.grad.data() + static_cast<long>(b) * N;
            for (int c = 0; c < C; ++c) {
              T* d = xn->grad.data() + (static_cast<long>(b) * C + c) * N;
              for (long j = 0; j < N; ++j) d[j] += g[j] * inv;
            }
          }
        });
    for (int b = 0; b < B; ++b) {
      T* o = out.data() + static_cast<long>(b) * N;
      for (long j = 0; j < N; ++j) {
        double s = 0;
        for (int c = 0; c < C; ++c) s += x.data()[(static_cast<long>(b) * C + c) * N + j];
        o[j] = static_cast<T>(s / C);
      }
    }
    return out;
  }

  auto arg = std::make_shared<std::vector<int>>(static_cast<size_t>(B) * N);
  Tensor<T> out = detail::make_op<T>(
      {B, 1, H, W}, {x},
      [xn, arg, B, C, N](typename Tensor<T>::Node& self) {
        xn->ensure_grad();
        for (int b = 0; b < B; ++b) {
          const T* g = self.grad.data() + static_cast<long>(b) * N;
          for (long j = 0; j < N; ++j) {
            int c = (*arg)[static_cast<long>(b) * N + j];
            xn->grad[(static_cast<long>(b) * C + c) * N + j] += g[j];
          }
        }
      });
  for (int b = 0; b < B; ++b) {
    T* o = out.data() + static_cast<long>(b) * N;
    for (long j = 0; j < N; ++j) {
      int best = 0;
      T bv = x.data()[static_cast<long>(b) * C * N + j];
      for (int c = 1; c < C; ++c) {
        T v = x.data()[(static_cast<long>(b) * C + c) * N + j];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      o[j] = bv;
      (*arg)[static_cast<long>(b) * N + j] = best;
    }
  }
  return out;
}

// Numerically stable logistic.
template <class T>
inline T sigmoid_value(T v) {
  if (v >= T(0)) {
    const T e = std::exp(-v);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> activation(const Tensor<T>& x, Act kind) {
  auto xn = x.node();
  Tensor<T> out = detail::make_op<T>(
      x.shape(), {x},
      [xn, kind](typename Tensor<T>::Node& self) {
        xn->ensure_grad();
        const size_t n = self.value.size();
        switch (kind) {
          case Act::Tanh:
            for (size_t i = 0; i < n; ++i) {
              const T y = self.value[i];
              xn->grad[i] += self.grad[i] * (T(1) - y * y);
            }
            break;
          case Act::Sigmoid:
            for (size_t i = 0; i < n; ++i) {
              const T y = self.value[i];
              xn->grad[i] += self.grad[i] * y * (T(1) - y);
            }
            break;
          case Act::Relu:
            for (size_t i = 0; i < n; ++i)
              if (xn->value[i] > T(0)) xn->grad[i] += self.grad[i];
            break;
        }
      });
  const size_t n = x.values().size();
  switch (kind) {
    case Act::Tanh:
      for (size_t i = 0; i < n; ++i) out.data()[i] = std::tanh(x.data()[i]);
      break;
    case Act::Sigmoid:
      for (size_t i = 0; i < n; ++i) out.data()[i] = sigmoid_value(x.data()[i]);
      break;
    case Act::Relu:
      for (size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// dense: affine map on flattened features. x (B, F, 1, 1), w (O, F, 1, 1),
// bias (1, O, 1, 1) or undefined -> (B, O, 1, 1).
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  const Shape xs = x.shape(), ws = w.shape();
  if (xs[2] != 1 || xs[3] != 1)
    throw ShapeError("dense: input must be flattened to (B,F,1,1), got " + shape_str(xs));
  if (ws[1] != xs[1])
    throw ShapeError(strprintf("dense: input length (%d) does not match weight columns (%d)",
                               xs[1], ws[1]));
  const int B = xs[0], F = xs[1], O = ws[0];
  if (bias.defined() && bias.shape() != Shape{1, O, 1, 1})
    throw ShapeError("dense: bias shape " + shape_str(bias.shape()) + " does not match output");
  auto xn = x.node();
  auto wn = w.node();
  auto bn = bias.defined() ? bias.node() : nullptr;

  Tensor<T> out = detail::make_op<T>(
      {B, O, 1, 1}, {x, w, bias},
      [xn, wn, bn, B, F, O](typename Tensor<T>::Node& self) {
        using namespace detail;
        Eigen::Map<const MatRM<T>> G(self.grad.data(), B, O);
        Eigen::Map<const MatRM<T>> X(xn->value.data(), B, F);
        Eigen::Map<const MatRM<T>> Wm(wn->value.data(), O, F);
        if (xn->requires_grad) {
          xn->ensure_grad();
          Eigen::Map<MatRM<T>> dX(xn->grad.data(), B, F);
          dX.noalias() += G * Wm;
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          Eigen::Map<MatRM<T>> dW(wn->grad.data(), O, F);
          dW.noalias() += G.transpose() * X;
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          Eigen::Map<VecX<T>> db(bn->grad.data(), O);
          db.noalias() += G.colwise().sum().transpose();
        }
      });
  {
    using namespace detail;
    Eigen::Map<const MatRM<T>> X(xn->value.data(), B, F);
    Eigen::Map<const MatRM<T>> Wm(wn->value.data(), O, F);
    Eigen::Map<MatRM<T>> O_(out.data(), B, O);
    O_.noalias() = X * Wm.transpose();
    if (bn) {
      Eigen::Map<const VecX<T>> bv(bn->value.data(), O);
      O_.rowwise() += bv.transpose();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// ew: elementwise add/mul. y must have x's shape, or broadcast along any
// subset of axes where its extent is 1 (covers (B,C,1,1), (B,1,H,W) and
// (1,C,H,W) maps).
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> ew(const Tensor<T>& x, const Tensor<T>& y, EwOp op) {
  const Shape xs = x.shape(), ys = y.shape();
  for (int d = 0; d < 4; ++d)
    if (ys[d] != xs[d] && ys[d] != 1)
      throw ShapeError(strprintf("ew: shape %s is not broadcastable to %s (dim %d)",
                                 shape_str(ys).c_str(), shape_str(xs).c_str(), d));
  auto xn = x.node();
  auto yn = y.node();

  // Strides into y for each x axis (0 where broadcast).
  std::array<long, 4> yst;
  {
    long s = 1;
    for (int d = 3; d >= 0; --d) {
      yst[d] = (ys[d] == 1) ? 0 : s;
      s *= ys[d];
    }
  }
  const int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  auto yindex = [yst, W](int b, int c, int y2, int x2) {
    return static_cast<long>(b) * yst[0] + static_cast<long>(c) * yst[1] +
           static_cast<long>(y2) * yst[2] + static_cast<long>(x2) * yst[3];
  };

  Tensor<T> out = detail::make_op<T>(
      xs, {x, y},
      [xn, yn, yindex, op, B, C, H, W](typename Tensor<T>::Node& self) {
        const bool ndx = xn->requires_grad, ndy = yn->requires_grad;
        if (ndx) xn->ensure_grad();
        if (ndy) yn->ensure_grad();
        long i = 0;
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c)
            for (int yy = 0; yy < H; ++yy)
              for (int xx = 0; xx < W; ++xx, ++i) {
                const T g = self.grad[i];
                const long yi = yindex(b, c, yy, xx);
                if (op == EwOp::Add) {
                  if (ndx) xn->grad[i] += g;
                  if (ndy) yn->grad[yi] += g;
                } else {
                  if (ndx) xn->grad[i] += g * yn->value[yi];
                  if (ndy) yn->grad[yi] += g * xn->value[i];
                }
              }
      });
  {
    long i = 0;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int yy = 0; yy < H; ++yy)
          for (int xx = 0; xx < W; ++xx, ++i) {
            const T yv = y.data()[yindex(b, c, yy, xx)];
            out.data()[i] = (op == EwOp::Add) ? x.data()[i] + yv : x.data()[i] * yv;
          }
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T a) {
  auto xn = x.node();
  Tensor<T> out = detail::make_op<T>(
      x.shape(), {x},
      [xn, a](typename Tensor<T>::Node& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * a;
      });
  for (long i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] * a;
  return out;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape as = a.shape(), bs = b.shape();
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    throw ShapeError("concat_channels: " + shape_str(as) + " vs " + shape_str(bs));
  const int B = as[0], Ca = as[1], Cb = bs[1], H = as[2], W = as[3];
  const long N = static_cast<long>(H) * W;
  auto an = a.node();
  auto bn = b.node();
  Tensor<T> out = detail::make_op<T>(
      {B, Ca + Cb, H, W}, {a, b},
      [an, bn, B, Ca, Cb, N](typename Tensor<T>::Node& self) {
        const bool nda = an->requires_grad, ndb = bn->requires_grad;
        if (nda) an->ensure_grad();
        if (ndb) bn->ensure_grad();
        for (int bb = 0; bb < B; ++bb) {
          const T* g = self.grad.data() + static_cast<long>(bb) * (Ca + Cb) * N;
          if (nda) {
            T* d = an->grad.data() + static_cast<long>(bb) * Ca * N;
            for (long j = 0; j < Ca * N; ++j) d[j] += g[j];
          }
          if (ndb) {
            T* d = bn->grad.data() + static_cast<long>(bb) * Cb * N;
            for (long j = 0; j < Cb * N; ++j) d[j] += g[Ca * N + j];
          }
        }
      });
  for (int bb = 0; bb < B; ++bb) {
    T* o = out.data() + static_cast<long>(bb) * (Ca + Cb) * N;
    std::memcpy(o, a.data() + static_cast<long>(bb) * Ca * N, sizeof(T) * Ca * N);
    std::memcpy(o + Ca * N, b.data() + static_cast<long>(bb) * Cb * N, sizeof(T) * Cb * N);
  }
  return out;
}

// Channels [c0, c1) as a new tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
  const Shape xs = x.shape();
  if (c0 < 0 || c1 > xs[1] || c0 >= c1)
    throw ShapeError(strprintf("slice_channels: [%d,%d) out of range for %d channels",
                               c0, c1, xs[1]));
  const int B = xs[0], C = xs[1], H = xs[2], W = xs[3], Cs = c1 - c0;
  const long N = static_cast<long>(H) * W;
  auto xn = x.node();
  Tensor<T> out = detail::make_op<T>(
      {B, Cs, H, W}, {x},
      [xn, B, C, Cs, c0, N](typename Tensor<T>::Node& self) {
        xn->ensure_grad();
        for (int b = 0; b < B; ++b) {
          const T* g = self.grad.data() + static_cast<long>(b) * Cs * N;
          T* d = xn->grad.data() + (static_cast<long>(b) * C + c0) * N;
          for (long j = 0; j < Cs * N; ++j) d[j] += g[j];
        }
      });
  for (int b = 0; b < B; ++b)
    std::memcpy(out.data() + static_cast<long>(b) * Cs * N,
                x.data() + (static_cast<long>(b) * C + c0) * N, sizeof(T) * Cs * N);
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape s) {
  if (shape_numel(s) != x.numel())
    throw ShapeError("reshape: element count mismatch, " + shape_str(x.shape()) +
                     " -> " + shape_str(s));
  auto xn = x.node();
  Tensor<T> out = detail::make_op<T>(
      s, {x},
      [xn](typename Tensor<T>::Node& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
      });
  out.values() = x.values();
  return out;
}

template <class T>
Tensor<T> flatten(const Tensor<T>& x) {
  return reshape(x, Shape{x.batch(), static_cast<int>(x.numel() / x.batch()), 1, 1});
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  auto xn = x.node();
  Tensor<T> out = detail::make_op<T>(
      {1, 1, 1, 1}, {x},
      [xn](typename Tensor<T>::Node& self) {
        xn->ensure_grad();
        const T g = self.grad[0];
        for (auto& d : xn->grad) d += g;
      });
  double s = 0;
  for (long i = 0; i < x.numel(); ++i) s += x.data()[i];
  out.data()[0] = static_cast<T>(s);
  return out;
}

// Max relative error between analytic and central finite-difference gradients
// of a scalar-valued tensor function, probed elementwise.
template <class T, class F>
double grad_check(F&& f, Tensor<T>& x, T eps = static_cast<T>(1e-5)) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor<T> y = f(x);
  if (y.numel() != 1) throw ShapeError("grad_check: function must be scalar-valued");
  y.backward();
  std::vector<T> analytic(x.grad().begin(), x.grad().end());
  if (analytic.empty()) analytic.assign(x.numel(), T(0));
  double worst = 0;
  for (long i = 0; i < x.numel(); ++i) {
    const T orig = x.data()[i];
    x.data()[i] = orig + eps;
    const double fp = static_cast<double>(f(x).scalar());
    x.data()[i] = orig - eps;
    const double fm = static_cast<double>(f(x).scalar());
    x.data()[i] = orig;
    const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
    const double a = static_cast<double>(analytic[i]);
    const double rel = std::abs(a - numeric) /
                       std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace floe
