#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridsight/parallel.hpp"
#include "gridsight/rng.hpp"

namespace gridsight {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) n *= d;
  return n;
}

struct AutogradNode;

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  bool consumed = false;  // set once backward has run through this value
  std::vector<float> grad;
  std::shared_ptr<AutogradNode> grad_fn;
};

// Value-semantics handle onto a shared f32 buffer participating in a
// reverse-mode graph. Ops build the graph implicitly whenever an input
// requires gradients; backward() consumes it.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor full(Shape shape, float value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
      throw std::invalid_argument("Tensor: data length does not match shape");
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (float& v : t.impl_->data) v = rng.normal_f32() * stddev;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(int i) const { return impl_->shape[i]; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  float* data() { return impl_->data.data(); }
  const float* data() const { return impl_->data.data(); }
  std::vector<float>& vec() { return impl_->data; }
  const std::vector<float>& vec() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<float>& grad() { return impl_->grad; }
  const std::vector<float>& grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  float item() const {
    if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor is not a scalar");
    return impl_->data[0];
  }

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

struct AutogradNode {
  std::vector<Tensor> inputs;
  // Reads out.grad, accumulates into the inputs' grads.
  std::function<void(const TensorImpl& out)> backward;
};

// Graph construction can be suspended for pure-inference passes.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace detail {

inline void accumulate_grad(TensorImpl& t, const float* g, std::int64_t n) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0f);
  for (std::int64_t i = 0; i < n; ++i) t.grad[i] += g[i];
}

inline bool tracks_grad(const Tensor& t) {
  return t.impl()->requires_grad || t.impl()->grad_fn != nullptr;
}

inline Tensor make_op_output(Shape shape, std::vector<Tensor> inputs,
                             std::function<void(const TensorImpl&)> backward) {
  Tensor out = Tensor::zeros(std::move(shape));
  bool needs = false;
  if (grad_mode()) {
    for (const Tensor& in : inputs) {
      if (tracks_grad(in)) needs = true;
    }
  }
  if (needs) {
    out.set_requires_grad(true);
    auto node = std::make_shared<AutogradNode>();
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl()->grad_fn = std::move(node);
  }
  return out;
}

// ---- GEMM kernels -----------------------------------------------------
// All kernels are row-parallel over C: each output row is produced by one
// thread with a fixed accumulation order, so results are bitwise identical
// for any thread count.

// C[M,N] (+)= A[M,K] * B[K,N]
inline void sgemm_nn(std::int64_t M, std::int64_t K, std::int64_t N, const float* A,
                     const float* B, float* C, bool accumulate) {
  parallel_for(M, [&](std::int64_t m) {
    float* c_row = C + m * N;
    if (!accumulate) std::fill(c_row, c_row + N, 0.0f);
    const float* a_row = A + m * K;
    for (std::int64_t k = 0; k < K; ++k) {
      const float a = a_row[k];
      if (a == 0.0f) continue;
      const float* b_row = B + k * N;
      for (std::int64_t n = 0; n < N; ++n) c_row[n] += a * b_row[n];
    }
  });
}

// C[M,N] (+)= A^T * B with A[K0,M], B[K0,N]
inline void sgemm_tn(std::int64_t M, std::int64_t K0, std::int64_t N, const float* A,
                     const float* B, float* C, bool accumulate) {
  parallel_for(M, [&](std::int64_t m) {
    float* c_row = C + m * N;
    if (!accumulate) std::fill(c_row, c_row + N, 0.0f);
    for (std::int64_t k = 0; k < K0; ++k) {
      const float a = A[k * M + m];
      if (a == 0.0f) continue;
      const float* b_row = B + k * N;
      for (std::int64_t n = 0; n < N; ++n) c_row[n] += a * b_row[n];
    }
  });
}

// C[M,N] (+)= A * B^T with A[M,K], B[N,K]. The dot product accumulates in 16
// fixed-order lanes so the loop vectorizes without changing the result
// between runs.
inline void sgemm_nt(std::int64_t M, std::int64_t K, std::int64_t N, const float* A,
                     const float* B, float* C, bool accumulate) {
  constexpr std::int64_t kLanes = 16;
  parallel_for(M, [&](std::int64_t m) {
    const float* a_row = A + m * K;
    float* c_row = C + m * N;
    for (std::int64_t n = 0; n < N; ++n) {
      const float* b_row = B + n * K;
      float lanes[kLanes] = {};
      const std::int64_t k_main = K - K % kLanes;
      for (std::int64_t k = 0; k < k_main; k += kLanes) {
        for (std::int64_t j = 0; j < kLanes; ++j) lanes[j] += a_row[k + j] * b_row[k + j];
      }
      float acc = 0.0f;
      for (std::int64_t j = 0; j < kLanes; ++j) acc += lanes[j];
      for (std::int64_t k = k_main; k < K; ++k) acc += a_row[k] * b_row[k];
      if (accumulate) c_row[n] += acc;
      else c_row[n] = acc;
    }
  });
}

// ---- conv helpers (3x3, stride 1, pad 1) -------------------------------

inline void im2col3x3(const float* x, std::int64_t C, std::int64_t H, std::int64_t W,
                      float* cols) {
  // cols layout: (C*9) x (H*W); row (c,ky,kx) is x[c] shifted by
  // (ky-1, kx-1) with zero padding.
  for (std::int64_t c = 0; c < C; ++c) {
    const float* xc = x + c * H * W;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        float* row = cols + ((c * 3 + ky) * 3 + kx) * H * W;
        for (std::int64_t y = 0; y < H; ++y) {
          const std::int64_t sy = y + ky - 1;
          float* dst = row + y * W;
          if (sy < 0 || sy >= H) {
            std::fill(dst, dst + W, 0.0f);
            continue;
          }
          const float* src = xc + sy * W;
          if (kx == 0) {
            dst[0] = 0.0f;
            std::memcpy(dst + 1, src, sizeof(float) * (W - 1));
          } else if (kx == 1) {
            std::memcpy(dst, src, sizeof(float) * W);
          } else {
            std::memcpy(dst, src + 1, sizeof(float) * (W - 1));
            dst[W - 1] = 0.0f;
          }
        }
      }
    }
  }
}

inline void col2im3x3(const float* cols, std::int64_t C, std::int64_t H, std::int64_t W,
                      float* x_accum) {
  for (std::int64_t c = 0; c < C; ++c) {
    float* xc = x_accum + c * H * W;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const float* row = cols + ((c * 3 + ky) * 3 + kx) * H * W;
        for (std::int64_t y = 0; y < H; ++y) {
          const std::int64_t sy = y + ky - 1;
          if (sy < 0 || sy >= H) continue;
          const float* src = row + y * W;
          float* dst = xc + sy * W;
          if (kx == 0) {
            for (std::int64_t i = 1; i < W; ++i) dst[i - 1] += src[i];
          } else if (kx == 1) {
            for (std::int64_t i = 0; i < W; ++i) dst[i] += src[i];
          } else {
            for (std::int64_t i = 0; i < W - 1; ++i) dst[i + 1] += src[i];
          }
        }
      }
    }
  }
}

inline void check_4d(const Tensor& t, const char* op) {
  if (t.ndim() != 4) throw std::invalid_argument(std::string(op) + ": expected 4-D tensor");
}

}  // namespace detail

// ---- elementwise / shape ops -------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
  Tensor out = detail::make_op_output(a.shape(), {a, b}, [a, b](const TensorImpl& o) {
    if (detail::tracks_grad(a)) detail::accumulate_grad(*a.impl(), o.grad.data(), o.grad.size());
    if (detail::tracks_grad(b)) detail::accumulate_grad(*b.impl(), o.grad.data(), o.grad.size());
  });
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
  Tensor out = detail::make_op_output(a.shape(), {a, b}, [a, b](const TensorImpl& o) {
    const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
    if (detail::tracks_grad(a)) {
      std::vector<float> g(n);
      for (std::int64_t i = 0; i < n; ++i) g[i] = o.grad[i] * b.data()[i];
      detail::accumulate_grad(*a.impl(), g.data(), n);
    }
    if (detail::tracks_grad(b)) {
      std::vector<float> g(n);
      for (std::int64_t i = 0; i < n; ++i) g[i] = o.grad[i] * a.data()[i];
      detail::accumulate_grad(*b.impl(), g.data(), n);
    }
  });
  for (std::int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  const float sf = static_cast<float>(s);
  Tensor out = detail::make_op_output(a.shape(), {a}, [a, sf](const TensorImpl& o) {
    const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
    std::vector<float> g(n);
    for (std::int64_t i = 0; i < n; ++i) g[i] = o.grad[i] * sf;
    detail::accumulate_grad(*a.impl(), g.data(), n);
  });
  for (std::int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * sf;
  return out;
}

inline Tensor texp(const Tensor& a) {
  Tensor out = detail::make_op_output(a.shape(), {a}, [a](const TensorImpl& o) {
    const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
    std::vector<float> g(n);
    for (std::int64_t i = 0; i < n; ++i) g[i] = o.grad[i] * o.data[i];
    detail::accumulate_grad(*a.impl(), g.data(), n);
  });
  for (std::int64_t i = 0; i < out.numel(); ++i) out.data()[i] = std::exp(a.data()[i]);
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = detail::make_op_output(a.shape(), {a}, [a](const TensorImpl& o) {
    const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
    std::vector<float> g(n);
    for (std::int64_t i = 0; i < n; ++i) g[i] = a.data()[i] > 0.0f ? o.grad[i] : 0.0f;
    detail::accumulate_grad(*a.impl(), g.data(), n);
  });
  for (std::int64_t i = 0; i < out.numel(); ++i) out.data()[i] = std::max(0.0f, a.data()[i]);
  return out;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) throw std::invalid_argument("reshape: numel mismatch");
  Tensor out = detail::make_op_output(std::move(shape), {a}, [a](const TensorImpl& o) {
    detail::accumulate_grad(*a.impl(), o.grad.data(), o.grad.size());
  });
  std::memcpy(out.data(), a.data(), sizeof(float) * a.numel());
  return out;
}

inline Tensor sum(const Tensor& a) {
  Tensor out = detail::make_op_output({1}, {a}, [a](const TensorImpl& o) {
    std::vector<float> g(a.numel(), o.grad[0]);
    detail::accumulate_grad(*a.impl(), g.data(), g.size());
  });
  double acc = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
  out.data()[0] = static_cast<float>(acc);
  return out;
}

// ---- neural network ops --------------------------------------------------

// 3x3 cross-correlation, stride 1, zero padding 1 (same-size output).
// x: N,C,H,W; w: O,C,3,3; b: O.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::check_4d(x, "conv2d");
  if (w.ndim() != 4 || w.dim(2) != 3 || w.dim(3) != 3) {
    throw std::invalid_argument("conv2d: weight must be O x C x 3 x 3");
  }
  if (w.dim(1) != x.dim(1)) throw std::invalid_argument("conv2d: channel mismatch");
  if (b.ndim() != 1 || b.dim(0) != w.dim(0)) throw std::invalid_argument("conv2d: bad bias");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0);
  const std::int64_t HW = H * W, K = C * 9;

  Tensor out = detail::make_op_output({N, O, H, W}, {x, w, b}, [=](const TensorImpl& o) {
    std::vector<float> cols(static_cast<std::size_t>(K) * HW);
    std::vector<float> dw_acc;
    std::vector<float> dcols;
    const bool need_dx = detail::tracks_grad(x);
    const bool need_dw = detail::tracks_grad(w);
    const bool need_db = detail::tracks_grad(b);
    if (need_dw) dw_acc.assign(static_cast<std::size_t>(O) * K, 0.0f);
    if (need_dx) dcols.resize(static_cast<std::size_t>(K) * HW);
    std::vector<float> dx_acc;
    if (need_dx) dx_acc.assign(static_cast<std::size_t>(N) * C * HW, 0.0f);
    std::vector<float> db_acc;
    if (need_db) db_acc.assign(static_cast<std::size_t>(O), 0.0f);

    for (std::int64_t n = 0; n < N; ++n) {
      const float* dy_n = o.grad.data() + n * O * HW;
      if (need_dw || need_dx) {
        if (need_dw) {
          detail::im2col3x3(x.data() + n * C * HW, C, H, W, cols.data());
          detail::sgemm_nt(O, HW, K, dy_n, cols.data(), dw_acc.data(), true);
        }
        if (need_dx) {
          detail::sgemm_tn(K, O, HW, w.data(), dy_n, dcols.data(), false);
          detail::col2im3x3(dcols.data(), C, H, W, dx_acc.data() + n * C * HW);
        }
      }
      if (need_db) {
        for (std::int64_t oc = 0; oc < O; ++oc) {
          double acc = 0;
          const float* row = dy_n + oc * HW;
          for (std::int64_t i = 0; i < HW; ++i) acc += row[i];
          db_acc[oc] += static_cast<float>(acc);
        }
      }
    }
    if (need_dx) detail::accumulate_grad(*x.impl(), dx_acc.data(), dx_acc.size());
    if (need_dw) detail::accumulate_grad(*w.impl(), dw_acc.data(), dw_acc.size());
    if (need_db) detail::accumulate_grad(*b.impl(), db_acc.data(), db_acc.size());
  });

  std::vector<float> cols(static_cast<std::size_t>(K) * HW);
  for (std::int64_t n = 0; n < N; ++n) {
    detail::im2col3x3(x.data() + n * C * HW, C, H, W, cols.data());
    float* y_n = out.data() + n * O * HW;
    detail::sgemm_nn(O, K, HW, w.data(), cols.data(), y_n, false);
    for (std::int64_t oc = 0; oc < O; ++oc) {
      const float bias = b.data()[oc];
      float* row = y_n + oc * HW;
      for (std::int64_t i = 0; i < HW; ++i) row[i] += bias;
    }
  }
  return out;
}

// 2x2 max pooling, stride 2. Gradient routes to the first-occurrence argmax
// within each window.
inline Tensor maxpool2(const Tensor& x) {
  detail::check_4d(x, "maxpool2");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw std::invalid_argument("maxpool2: spatial dimensions must be even");
  }
  const std::int64_t Ho = H / 2, Wo = W / 2;
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(N) * C * Ho * Wo);

  Tensor out = detail::make_op_output({N, C, Ho, Wo}, {x}, [x, argmax](const TensorImpl& o) {
    std::vector<float> dx(x.numel(), 0.0f);
    for (std::size_t i = 0; i < o.grad.size(); ++i) dx[(*argmax)[i]] += o.grad[i];
    detail::accumulate_grad(*x.impl(), dx.data(), dx.size());
  });

  const float* px = x.data();
  float* po = out.data();
  std::int64_t oi = 0;
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const float* plane = px + nc * H * W;
    for (std::int64_t y = 0; y < Ho; ++y) {
      for (std::int64_t xo = 0; xo < Wo; ++xo, ++oi) {
        const std::int64_t base = (2 * y) * W + 2 * xo;
        const std::int64_t idx[4] = {base, base + 1, base + W, base + W + 1};
        std::int64_t best = idx[0];
        float bv = plane[idx[0]];
        for (int k = 1; k < 4; ++k) {
          if (plane[idx[k]] > bv) {
            bv = plane[idx[k]];
            best = idx[k];
          }
        }
        po[oi] = bv;
        (*argmax)[oi] = nc * H * W + best;
      }
    }
  }
  return out;
}

// Transposed convolution, kernel 2x2, stride 2: exact spatial doubling.
// x: N,C,H,W; w: C,O,2,2; b: O.
inline Tensor upconv2(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::check_4d(x, "upconv2");
  if (w.ndim() != 4 || w.dim(2) != 2 || w.dim(3) != 2) {
    throw std::invalid_argument("upconv2: weight must be C x O x 2 x 2");
  }
  if (w.dim(0) != x.dim(1)) throw std::invalid_argument("upconv2: channel mismatch");
  if (b.ndim() != 1 || b.dim(0) != w.dim(1)) throw std::invalid_argument("upconv2: bad bias");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(1);
  const std::int64_t HW = H * W, O4 = O * 4;

  // Stride equals kernel size, so each output pixel receives exactly one
  // (dy,dx) tap: the core is a [C,O4] x [C,HW] GEMM plus a reshuffle.
  const auto scatter = [=](const float* block, const float* bias, float* y_n) {
    for (std::int64_t oc = 0; oc < O; ++oc) {
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const float* src = block + ((oc * 2 + dy) * 2 + dx) * HW;
          float* dst = y_n + oc * (4 * HW);
          for (std::int64_t yy = 0; yy < H; ++yy) {
            for (std::int64_t xx = 0; xx < W; ++xx) {
              dst[(2 * yy + dy) * (2 * W) + 2 * xx + dx] = src[yy * W + xx] + bias[oc];
            }
          }
        }
      }
    }
  };

  Tensor out = detail::make_op_output({N, O, 2 * H, 2 * W}, {x, w, b}, [=](const TensorImpl& o) {
    const bool need_dx = detail::tracks_grad(x);
    const bool need_dw = detail::tracks_grad(w);
    const bool need_db = detail::tracks_grad(b);
    std::vector<float> dblock(static_cast<std::size_t>(O4) * HW);
    std::vector<float> dw_acc, dx_acc, db_acc;
    if (need_dw) dw_acc.assign(static_cast<std::size_t>(C) * O4, 0.0f);
    if (need_dx) dx_acc.assign(static_cast<std::size_t>(N) * C * HW, 0.0f);
    if (need_db) db_acc.assign(static_cast<std::size_t>(O), 0.0f);

    for (std::int64_t n = 0; n < N; ++n) {
      const float* dy_n = o.grad.data() + n * O * 4 * HW;
      // gather dY into (o,dy,dx) x (h,w) layout
      for (std::int64_t oc = 0; oc < O; ++oc) {
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            float* dst = dblock.data() + ((oc * 2 + dy) * 2 + dx) * HW;
            const float* src = dy_n + oc * 4 * HW;
            for (std::int64_t yy = 0; yy < H; ++yy) {
              for (std::int64_t xx = 0; xx < W; ++xx) {
                dst[yy * W + xx] = src[(2 * yy + dy) * (2 * W) + 2 * xx + dx];
              }
            }
          }
        }
      }
      if (need_db) {
        for (std::int64_t oc = 0; oc < O; ++oc) {
          double acc = 0;
          const float* src = dy_n + oc * 4 * HW;
          for (std::int64_t i = 0; i < 4 * HW; ++i) acc += src[i];
          db_acc[oc] += static_cast<float>(acc);
        }
      }
      if (need_dw) {
        detail::sgemm_nt(C, HW, O4, x.data() + n * C * HW, dblock.data(), dw_acc.data(), true);
      }
      if (need_dx) {
        detail::sgemm_nn(C, O4, HW, w.data(), dblock.data(), dx_acc.data() + n * C * HW, false);
      }
    }
    if (need_dx) detail::accumulate_grad(*x.impl(), dx_acc.data(), dx_acc.size());
    if (need_dw) detail::accumulate_grad(*w.impl(), dw_acc.data(), dw_acc.size());
    if (need_db) detail::accumulate_grad(*b.impl(), db_acc.data(), db_acc.size());
  });

  std::vector<float> block(static_cast<std::size_t>(O4) * HW);
  for (std::int64_t n = 0; n < N; ++n) {
    detail::sgemm_tn(O4, C, HW, w.data(), x.data() + n * C * HW, block.data(), false);
    scatter(block.data(), b.data(), out.data() + n * O * 4 * HW);
  }
  return out;
}

// x: N,D; w: D,E; b: E.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1) {
    throw std::invalid_argument("linear: expected x[N,D], w[D,E], b[E]");
  }
  if (x.dim(1) != w.dim(0) || b.dim(0) != w.dim(1)) {
    throw std::invalid_argument("linear: shape mismatch");
  }
  const std::int64_t N = x.dim(0), D = x.dim(1), E = w.dim(1);

  Tensor out = detail::make_op_output({N, E}, {x, w, b}, [=](const TensorImpl& o) {
    if (detail::tracks_grad(x)) {
      std::vector<float> dx(static_cast<std::size_t>(N) * D);
      detail::sgemm_nt(N, E, D, o.grad.data(), w.data(), dx.data(), false);
      detail::accumulate_grad(*x.impl(), dx.data(), dx.size());
    }
    if (detail::tracks_grad(w)) {
      std::vector<float> dw(static_cast<std::size_t>(D) * E);
      detail::sgemm_tn(D, N, E, x.data(), o.grad.data(), dw.data(), false);
      detail::accumulate_grad(*w.impl(), dw.data(), dw.size());
    }
    if (detail::tracks_grad(b)) {
      std::vector<float> db(static_cast<std::size_t>(E), 0.0f);
      for (std::int64_t n = 0; n < N; ++n) {
        const float* row = o.grad.data() + n * E;
        for (std::int64_t e = 0; e < E; ++e) db[e] += row[e];
      }
      detail::accumulate_grad(*b.impl(), db.data(), db.size());
    }
  });

  detail::sgemm_nn(N, D, E, x.data(), w.data(), out.data(), false);
  for (std::int64_t n = 0; n < N; ++n) {
    float* row = out.data() + n * E;
    for (std::int64_t e = 0; e < E; ++e) row[e] += b.data()[e];
  }
  return out;
}

// Running statistics owned by the model, updated in train mode with
// momentum 0.1 (running variance uses the unbiased batch estimate).
struct BnStats {
  std::vector<float> mean;
  std::vector<float> var;

  explicit BnStats(std::int64_t channels = 0)
      : mean(static_cast<std::size_t>(channels), 0.0f),
        var(static_cast<std::size_t>(channels), 1.0f) {}
};

inline constexpr float kBnEps = 1e-5f;
inline constexpr float kBnMomentum = 0.1f;

// x: N,C,H,W; gamma/beta: C. Train mode normalizes by batch statistics and
// updates stats in place; eval mode normalizes by the running statistics.
inline Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BnStats& stats,
                        bool training) {
  detail::check_4d(x, "batchnorm");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C) {
    throw std::invalid_argument("batchnorm: gamma/beta must have C entries");
  }
  if (static_cast<std::int64_t>(stats.mean.size()) != C) {
    throw std::invalid_argument("batchnorm: running stats channel mismatch");
  }
  if (training && N < 2) {
    throw std::invalid_argument("batchnorm: train mode requires batch size >= 2");
  }
  const std::int64_t HW = H * W;
  const std::int64_t m = N * HW;

  auto batch_mean = std::make_shared<std::vector<float>>(C);
  auto batch_invstd = std::make_shared<std::vector<float>>(C);

  if (training) {
    parallel_for(C, [&](std::int64_t c) {
      double acc = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const float* p = x.data() + (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) acc += p[i];
      }
      const double mu = acc / m;
      double var_acc = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const float* p = x.data() + (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) {
          const double d = p[i] - mu;
          var_acc += d * d;
        }
      }
      const double var = var_acc / m;
      (*batch_mean)[c] = static_cast<float>(mu);
      (*batch_invstd)[c] = static_cast<float>(1.0 / std::sqrt(var + kBnEps));
      stats.mean[c] = (1.0f - kBnMomentum) * stats.mean[c] + kBnMomentum * static_cast<float>(mu);
      const double unbiased = m > 1 ? var_acc / (m - 1) : var;
      stats.var[c] =
          (1.0f - kBnMomentum) * stats.var[c] + kBnMomentum * static_cast<float>(unbiased);
    });
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      (*batch_mean)[c] = stats.mean[c];
      (*batch_invstd)[c] = 1.0f / std::sqrt(stats.var[c] + kBnEps);
    }
  }

  Tensor out = detail::make_op_output(
      x.shape(), {x, gamma, beta},
      [x, gamma, beta, batch_mean, batch_invstd, N, C, HW, m, training](const TensorImpl& o) {
        const bool need_dx = detail::tracks_grad(x);
        std::vector<float> dx;
        if (need_dx) dx.assign(x.numel(), 0.0f);
        std::vector<float> dgamma(static_cast<std::size_t>(C), 0.0f);
        std::vector<float> dbeta(static_cast<std::size_t>(C), 0.0f);
        parallel_for(C, [&](std::int64_t c) {
          const float mu = (*batch_mean)[c];
          const float invstd = (*batch_invstd)[c];
          const float g = gamma.data()[c];
          double sum_dy = 0, sum_dy_xhat = 0;
          for (std::int64_t n = 0; n < N; ++n) {
            const float* xp = x.data() + (n * C + c) * HW;
            const float* dyp = o.grad.data() + (n * C + c) * HW;
            for (std::int64_t i = 0; i < HW; ++i) {
              const float xhat = (xp[i] - mu) * invstd;
              sum_dy += dyp[i];
              sum_dy_xhat += dyp[i] * xhat;
            }
          }
          dgamma[c] = static_cast<float>(sum_dy_xhat);
          dbeta[c] = static_cast<float>(sum_dy);
          if (!need_dx) return;
          if (training) {
            const float k1 = static_cast<float>(sum_dy / m);
            const float k2 = static_cast<float>(sum_dy_xhat / m);
            for (std::int64_t n = 0; n < N; ++n) {
              const float* xp = x.data() + (n * C + c) * HW;
              const float* dyp = o.grad.data() + (n * C + c) * HW;
              float* dxp = dx.data() + (n * C + c) * HW;
              for (std::int64_t i = 0; i < HW; ++i) {
                const float xhat = (xp[i] - mu) * invstd;
                dxp[i] = g * invstd * (dyp[i] - k1 - xhat * k2);
              }
            }
          } else {
            for (std::int64_t n = 0; n < N; ++n) {
              const float* dyp = o.grad.data() + (n * C + c) * HW;
              float* dxp = dx.data() + (n * C + c) * HW;
              for (std::int64_t i = 0; i < HW; ++i) dxp[i] = dyp[i] * g * invstd;
            }
          }
        });
        if (need_dx) detail::accumulate_grad(*x.impl(), dx.data(), dx.size());
        if (detail::tracks_grad(gamma)) {
          detail::accumulate_grad(*gamma.impl(), dgamma.data(), dgamma.size());
        }
        if (detail::tracks_grad(beta)) {
          detail::accumulate_grad(*beta.impl(), dbeta.data(), dbeta.size());
        }
      });

  parallel_for(N * C, [&](std::int64_t nc) {
    const std::int64_t c = nc % C;
    const float mu = (*batch_mean)[c];
    const float invstd = (*batch_invstd)[c];
    const float g = gamma.data()[c];
    const float be = beta.data()[c];
    const float* xp = x.data() + nc * HW;
    float* op = out.data() + nc * HW;
    for (std::int64_t i = 0; i < HW; ++i) op[i] = g * (xp[i] - mu) * invstd + be;
  });
  return out;
}

// Mean cross-entropy between softmax(logits) and a one-hot target over all
// N*H*W cells, stabilized by max subtraction. logits/target: N,K,H,W.
inline Tensor softmax_ce(const Tensor& logits, const Tensor& target) {
  detail::check_4d(logits, "softmax_ce");
  if (logits.shape() != target.shape()) {
    throw std::invalid_argument("softmax_ce: logits/target shape mismatch");
  }
  const std::int64_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  const std::int64_t HW = H * W;
  const std::int64_t cells = N * HW;

  // One-hot validation: entries in {0,1} and per-cell channel sum exactly 1.
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < HW; ++i) {
      float s = 0;
      for (std::int64_t k = 0; k < K; ++k) {
        const float t = target.data()[(n * K + k) * HW + i];
        if (t != 0.0f && t != 1.0f) {
          throw std::invalid_argument("softmax_ce: target is not one-hot");
        }
        s += t;
      }
      if (s != 1.0f) throw std::invalid_argument("softmax_ce: target is not one-hot");
    }
  }

  auto softmax = std::make_shared<std::vector<float>>(logits.numel());
  Tensor out = detail::make_op_output({1}, {logits, target}, [=](const TensorImpl& o) {
    if (!detail::tracks_grad(logits)) return;
    const float g = o.grad[0] / static_cast<float>(cells);
    std::vector<float> dl(logits.numel());
    for (std::size_t i = 0; i < dl.size(); ++i) {
      dl[i] = ((*softmax)[i] - target.data()[i]) * g;
    }
    detail::accumulate_grad(*logits.impl(), dl.data(), dl.size());
  });

  double loss_acc = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < HW; ++i) {
      float maxv = -std::numeric_limits<float>::infinity();
      for (std::int64_t k = 0; k < K; ++k) {
        maxv = std::max(maxv, logits.data()[(n * K + k) * HW + i]);
      }
      double denom = 0;
      for (std::int64_t k = 0; k < K; ++k) {
        denom += std::exp(static_cast<double>(logits.data()[(n * K + k) * HW + i] - maxv));
      }
      const double log_denom = std::log(denom);
      for (std::int64_t k = 0; k < K; ++k) {
        const std::int64_t idx = (n * K + k) * HW + i;
        const double centered = logits.data()[idx] - maxv;
        (*softmax)[idx] = static_cast<float>(std::exp(centered) / denom);
        if (target.data()[idx] == 1.0f) loss_acc += log_denom - centered;
      }
    }
  }
  out.data()[0] = static_cast<float>(loss_acc / cells);
  return out;
}

// KL(q || N(0, I)) for a diagonal Gaussian, averaged over the batch.
// mu/logvar: N,L.
inline Tensor kl_diag_gaussian(const Tensor& mu, const Tensor& logvar) {
  if (mu.ndim() != 2 || mu.shape() != logvar.shape()) {
    throw std::invalid_argument("kl_diag_gaussian: mu/logvar must both be N x L");
  }
  const std::int64_t N = mu.dim(0);

  Tensor out = detail::make_op_output({1}, {mu, logvar}, [=](const TensorImpl& o) {
    const float g = o.grad[0] / static_cast<float>(N);
    if (detail::tracks_grad(mu)) {
      std::vector<float> dm(mu.numel());
      for (std::int64_t i = 0; i < mu.numel(); ++i) dm[i] = g * mu.data()[i];
      detail::accumulate_grad(*mu.impl(), dm.data(), dm.size());
    }
    if (detail::tracks_grad(logvar)) {
      std::vector<float> dv(logvar.numel());
      for (std::int64_t i = 0; i < logvar.numel(); ++i) {
        dv[i] = g * 0.5f * (std::exp(logvar.data()[i]) - 1.0f);
      }
      detail::accumulate_grad(*logvar.impl(), dv.data(), dv.size());
    }
  });

  double acc = 0;
  for (std::int64_t i = 0; i < mu.numel(); ++i) {
    const double m = mu.data()[i];
    const double lv = logvar.data()[i];
    acc += -0.5 * (1.0 + lv - m * m - std::exp(lv));
  }
  out.data()[0] = static_cast<float>(acc / N);
  return out;
}

// Channel softmax without graph participation (inference output).
inline Tensor softmax_channels(const Tensor& logits) {
  detail::check_4d(logits, "softmax_channels");
  const std::int64_t N = logits.dim(0), K = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  Tensor out = Tensor::zeros(logits.shape());
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < HW; ++i) {
      float maxv = -std::numeric_limits<float>::infinity();
      for (std::int64_t k = 0; k < K; ++k) {
        maxv = std::max(maxv, logits.data()[(n * K + k) * HW + i]);
      }
      double denom = 0;
      for (std::int64_t k = 0; k < K; ++k) {
        denom += std::exp(static_cast<double>(logits.data()[(n * K + k) * HW + i] - maxv));
      }
      for (std::int64_t k = 0; k < K; ++k) {
        const std::int64_t idx = (n * K + k) * HW + i;
        out.data()[idx] = static_cast<float>(
            std::exp(static_cast<double>(logits.data()[idx] - maxv)) / denom);
      }
    }
  }
  return out;
}

// Reverse-mode sweep from a scalar loss. Accumulates exact gradients into
// every reachable tensor that requires them, then releases the graph; a
// second call on the same graph is an error.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  if (loss.impl()->consumed) {
    throw std::runtime_error("backward: graph already consumed by a previous backward");
  }
  if (!loss.impl()->grad_fn && !loss.requires_grad()) {
    throw std::invalid_argument("backward: loss does not require gradients");
  }

  // Topological order over the impl graph. Shared ownership keeps every impl
  // alive through the sweep even as the graph edges are released.
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  std::vector<const TensorImpl*> visited;
  const auto was_visited = [&](const TensorImpl* t) {
    return std::find(visited.begin(), visited.end(), t) != visited.end();
  };
  stack.push_back({loss.impl_ptr(), 0});
  visited.push_back(loss.impl());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->grad_fn && next < impl->grad_fn->inputs.size()) {
      const std::shared_ptr<TensorImpl>& child = impl->grad_fn->inputs[next].impl_ptr();
      ++next;
      if (child->grad_fn && !was_visited(child.get())) {
        visited.push_back(child.get());
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(impl);
      stack.pop_back();
    }
  }

  loss.impl()->grad.assign(1, 1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = it->get();
    if (!impl->grad_fn) continue;
    if (!impl->grad.empty()) impl->grad_fn->backward(*impl);
    impl->consumed = true;
    impl->grad_fn.reset();  // graph is consumed
  }
}

}  // namespace gridsight
