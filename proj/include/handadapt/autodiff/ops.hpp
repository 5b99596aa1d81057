#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "handadapt/autodiff/graph.hpp"

namespace handadapt {

struct PrimitiveInfo {
  OpKind kind;
  std::string_view name;
};

/// The fixed primitive catalog. Every entry has a forward and a backward rule.
inline std::span<const PrimitiveInfo> primitive_set() {
  static constexpr std::array<PrimitiveInfo, 21> kCatalog{{
      {OpKind::kAdd, "add"},
      {OpKind::kSub, "sub"},
      {OpKind::kMul, "mul"},
      {OpKind::kScale, "scale"},
      {OpKind::kAddScalar, "add_scalar"},
      {OpKind::kMatmul, "matmul"},
      {OpKind::kConv2d, "conv2d"},
      {OpKind::kUpsample2x, "upsample2x"},
      {OpKind::kMaxPool2x2, "maxpool2x2"},
      {OpKind::kRelu, "relu"},
      {OpKind::kSigmoid, "sigmoid"},
      {OpKind::kExp, "exp"},
      {OpKind::kLog, "log"},
      {OpKind::kSum, "sum"},
      {OpKind::kMean, "mean"},
      {OpKind::kConcatChannels, "concat_channels"},
      {OpKind::kSpatialSoftmax, "spatial_softmax"},
      {OpKind::kStopGradient, "stop_gradient"},
      {OpKind::kReshape, "reshape"},
      {OpKind::kSmoothL1, "smooth_l1"},
      {OpKind::kBceWithLogits, "bce_with_logits"},
  }};
  return kCatalog;
}

namespace detail {

inline void check_finite(const Tensor& t, std::string_view op) {
  if (!t.all_finite()) throw NumericalError("non-finite value produced by " + std::string(op));
}

inline void same_graph(Var a, Var b, std::string_view op) {
  if (a.graph != b.graph || a.graph == nullptr) {
    throw std::invalid_argument(std::string(op) + ": operands belong to different graphs");
  }
}

inline void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

// Four partial sums keep the order fixed while letting the compiler pipeline.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class Fwd, class Deriv>
Var unary(Var a, OpKind kind, std::string_view name, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = fwd(av[i]);
  check_finite(out, name);
  const std::size_t ia = a.id;
  return a.graph->record(kind, {ia}, std::move(out), [ia, deriv](Graph& g, std::size_t self) {
    auto* da = g.grad_sink(ia);
    if (!da) return;
    const auto& up = g.upstream(self);
    const Tensor& x = g.value(ia);
    const Tensor& y = g.value(self);
    for (std::size_t i = 0; i < up.size(); ++i) (*da)[i] += up[i] * deriv(x[i], y[i]);
  });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::same_graph(a, b, "add");
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  detail::check_finite(out, "add");
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(OpKind::kAdd, {ia, ib}, std::move(out), [ia, ib](Graph& g, std::size_t self) {
    const auto& up = g.upstream(self);
    if (auto* da = g.grad_sink(ia)) for (std::size_t i = 0; i < up.size(); ++i) (*da)[i] += up[i];
    if (auto* db = g.grad_sink(ib)) for (std::size_t i = 0; i < up.size(); ++i) (*db)[i] += up[i];
  });
}

inline Var sub(Var a, Var b) {
  detail::same_graph(a, b, "sub");
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  detail::check_finite(out, "sub");
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(OpKind::kSub, {ia, ib}, std::move(out), [ia, ib](Graph& g, std::size_t self) {
    const auto& up = g.upstream(self);
    if (auto* da = g.grad_sink(ia)) for (std::size_t i = 0; i < up.size(); ++i) (*da)[i] += up[i];
    if (auto* db = g.grad_sink(ib)) for (std::size_t i = 0; i < up.size(); ++i) (*db)[i] -= up[i];
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::same_graph(a, b, "mul");
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  detail::check_finite(out, "mul");
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(OpKind::kMul, {ia, ib}, std::move(out), [ia, ib](Graph& g, std::size_t self) {
    const auto& up = g.upstream(self);
    const Tensor& av = g.value(ia);
    const Tensor& bv = g.value(ib);
    if (auto* da = g.grad_sink(ia)) for (std::size_t i = 0; i < up.size(); ++i) (*da)[i] += up[i] * bv[i];
    if (auto* db = g.grad_sink(ib)) for (std::size_t i = 0; i < up.size(); ++i) (*db)[i] += up[i] * av[i];
  });
}

inline Var scale(Var a, double s) {
  return detail::unary(a, OpKind::kScale, "scale", [s](double x) { return s * x; },
                       [s](double, double) { return s; });
}

inline Var add_scalar(Var a, double s) {
  return detail::unary(a, OpKind::kAddScalar, "add_scalar", [s](double x) { return x + s; },
                       [](double, double) { return 1.0; });
}

// [M,K] x [K,N] -> [M,N]
inline Var matmul(Var a, Var b) {
  detail::same_graph(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_rank(av, 2, "matmul");
  detail::require_rank(bv, 2, "matmul");
  if (av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      detail::axpy(av[i * k + p], &bv.data()[p * n], &out.data()[i * n], n);
    }
  }
  detail::check_finite(out, "matmul");
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(OpKind::kMatmul, {ia, ib}, std::move(out), [ia, ib, m, k, n](Graph& g, std::size_t self) {
    const auto& up = g.upstream(self);
    const Tensor& av = g.value(ia);
    const Tensor& bv = g.value(ib);
    if (auto* da = g.grad_sink(ia)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) (*da)[i * k + p] += detail::dot(&up[i * n], &bv.data()[p * n], n);
    }
    if (auto* db = g.grad_sink(ib)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) detail::axpy(av[i * k + p], &up[i * n], &db->data()[p * n], n);
    }
  });
}

namespace detail {

// Zero-padded copy of every plane of one batch item: [C, H+2p, W+2p].
inline std::vector<double> pad_planes(const double* src, std::size_t c, std::size_t h, std::size_t w, std::size_t pad) {
  const std::size_t wp = w + 2 * pad, hp = h + 2 * pad;
  std::vector<double> out(c * hp * wp, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(src + (ch * h + y) * w, w, &out[(ch * hp + y + pad) * wp + pad]);
  return out;
}

}  // namespace detail

/// Stride-1 "same" convolution, x [N,C,H,W], weight [O,C,k,k], bias [O], k odd.
///
/// Works on padded planes laid out with row stride W+2p so that each kernel
/// tap is one long contiguous axpy; the extra columns are discarded.
inline Var conv2d(Var x, Var weight, Var bias) {
  detail::same_graph(x, weight, "conv2d");
  detail::same_graph(x, bias, "conv2d");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  detail::require_rank(xv, 4, "conv2d input");
  detail::require_rank(wv, 4, "conv2d weight");
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t o = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != c || wv.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " +
                     shape_str(xv.shape()));
  }
  if (bv.shape() != Shape{o}) {
    throw ShapeError("conv2d: bias " + shape_str(bv.shape()) + " expected [" + std::to_string(o) + "]");
  }
  const std::size_t pad = k / 2, wp = w + 2 * pad, hp = h + 2 * pad;
  const std::size_t plane = h * w, pplane = hp * wp;
  // Output rows in stride-wp layout; the last row is cut short so every tap
  // stays inside the padded input plane.
  const std::size_t span_len = (h - 1) * wp + w;

  Tensor out({n, o, h, w});
  std::vector<double> acc(span_len);
  for (std::size_t b = 0; b < n; ++b) {
    const auto padded = detail::pad_planes(&xv.data()[b * c * plane], c, h, w, pad);
    for (std::size_t oc = 0; oc < o; ++oc) {
      std::fill(acc.begin(), acc.end(), bv[oc]);
      for (std::size_t ic = 0; ic < c; ++ic) {
        const double* src = &padded[ic * pplane];
        const double* kern = &wv.data()[(oc * c + ic) * k * k];
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) detail::axpy(kern[ky * k + kx], src + ky * wp + kx, acc.data(), span_len);
      }
      double* dst = &out.data()[(b * o + oc) * plane];
      for (std::size_t y = 0; y < h; ++y) std::copy_n(&acc[y * wp], w, dst + y * w);
    }
  }
  detail::check_finite(out, "conv2d");
  const std::size_t ix = x.id, iw = weight.id, ib = bias.id;
  return x.graph->record(
      OpKind::kConv2d, {ix, iw, ib}, std::move(out),
      [ix, iw, ib, n, c, h, w, o, k, pad, wp, plane, pplane, span_len](Graph& g, std::size_t self) {
        const auto& up = g.upstream(self);
        const Tensor& xv = g.value(ix);
        const Tensor& wv = g.value(iw);
        auto* dx = g.grad_sink(ix);
        auto* dw = g.grad_sink(iw);
        auto* db = g.grad_sink(ib);
        std::vector<double> gout(span_len);
        std::vector<double> gpad(dx ? c * pplane : 0);
        for (std::size_t b = 0; b < n; ++b) {
          const auto padded = dw ? detail::pad_planes(&xv.data()[b * c * plane], c, h, w, pad) : std::vector<double>{};
          if (dx) std::fill(gpad.begin(), gpad.end(), 0.0);
          for (std::size_t oc = 0; oc < o; ++oc) {
            const double* g_plane = &up[(b * o + oc) * plane];
            std::fill(gout.begin(), gout.end(), 0.0);
            for (std::size_t y = 0; y < h; ++y) std::copy_n(g_plane + y * w, w, &gout[y * wp]);
            if (db) {
              double s = 0;
              for (std::size_t i = 0; i < plane; ++i) s += g_plane[i];
              (*db)[oc] += s;
            }
            for (std::size_t ic = 0; ic < c; ++ic) {
              const double* kern = &wv.data()[(oc * c + ic) * k * k];
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const std::size_t off = ic * pplane + ky * wp + kx;
                  if (dx) detail::axpy(kern[ky * k + kx], gout.data(), &gpad[off], span_len);
                  if (dw) (*dw)[(oc * c + ic) * k * k + ky * k + kx] += detail::dot(gout.data(), &padded[off], span_len);
                }
            }
          }
          if (dx) {
            for (std::size_t ic = 0; ic < c; ++ic)
              for (std::size_t y = 0; y < h; ++y) {
                const double* src = &gpad[(ic * (h + 2 * pad) + y + pad) * wp + pad];
                double* dst = &(*dx)[(b * c + ic) * plane + y * w];
                for (std::size_t xx = 0; xx < w; ++xx) dst[xx] += src[xx];
              }
          }
        }
      });
}

// Nearest-neighbour upsampling by two on the trailing spatial dims of [N,C,H,W].
inline Var upsample2x(Var x) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 4, "upsample2x");
  const std::size_t nc = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({xv.dim(0), xv.dim(1), 2 * h, 2 * w});
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(p * 2 * h + y) * 2 * w + xx] = xv[(p * h + y / 2) * w + xx / 2];
  const std::size_t ix = x.id;
  return x.graph->record(OpKind::kUpsample2x, {ix}, std::move(out), [ix, nc, h, w](Graph& g, std::size_t self) {
    auto* dx = g.grad_sink(ix);
    if (!dx) return;
    const auto& up = g.upstream(self);
    for (std::size_t p = 0; p < nc; ++p)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx)
          (*dx)[(p * h + y / 2) * w + xx / 2] += up[(p * 2 * h + y) * 2 * w + xx];
  });
}

// 2x2 max pooling, stride 2. Ties route the gradient to the first maximum.
inline Var maxpool2x2(Var x) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 4, "maxpool2x2");
  const std::size_t nc = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h % 2 || w % 2) throw ShapeError("maxpool2x2: odd spatial size " + shape_str(xv.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({xv.dim(0), xv.dim(1), oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (p * h + 2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (p * h + 2 * y + dy) * w + 2 * xx + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (p * oh + y) * ow + xx;
        out[o] = xv[best];
        argmax[o] = best;
      }
  const std::size_t ix = x.id;
  return x.graph->record(OpKind::kMaxPool2x2, {ix}, std::move(out),
                         [ix, argmax = std::move(argmax)](Graph& g, std::size_t self) {
                           auto* dx = g.grad_sink(ix);
                           if (!dx) return;
                           const auto& up = g.upstream(self);
                           for (std::size_t o = 0; o < up.size(); ++o) (*dx)[argmax[o]] += up[o];
                         });
}

// Subgradient 0 at exactly 0.
inline Var relu(Var a) {
  return detail::unary(a, OpKind::kRelu, "relu", [](double x) { return x > 0 ? x : 0.0; },
                       [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  return detail::unary(a, OpKind::kSigmoid, "sigmoid", sigmoid_value,
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(Var a) {
  return detail::unary(a, OpKind::kExp, "exp", [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}

inline Var log(Var a) {
  return detail::unary(a, OpKind::kLog, "log", [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

inline Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0;
  for (double v : av.data()) s += v;
  Tensor out = Tensor::scalar(s);
  detail::check_finite(out, "sum");
  const std::size_t ia = a.id;
  return a.graph->record(OpKind::kSum, {ia}, std::move(out), [ia](Graph& g, std::size_t self) {
    auto* da = g.grad_sink(ia);
    if (!da) return;
    const double up = g.upstream(self)[0];
    for (double& d : *da) d += up;
  });
}

inline Var mean(Var a) {
  const Tensor& av = a.value();
  if (av.numel() == 0) throw ShapeError("mean of empty tensor");
  double s = 0;
  for (double v : av.data()) s += v;
  const double inv = 1.0 / static_cast<double>(av.numel());
  Tensor out = Tensor::scalar(s * inv);
  detail::check_finite(out, "mean");
  const std::size_t ia = a.id;
  return a.graph->record(OpKind::kMean, {ia}, std::move(out), [ia, inv](Graph& g, std::size_t self) {
    auto* da = g.grad_sink(ia);
    if (!da) return;
    const double up = g.upstream(self)[0] * inv;
    for (double& d : *da) d += up;
  });
}

// Concatenation of [N,C_i,H,W] tensors along the channel axis.
inline Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Tensor& first = parts[0].value();
  detail::require_rank(first, 4, "concat_channels");
  const std::size_t n = first.dim(0), h = first.dim(2), w = first.dim(3);
  std::size_t total_c = 0;
  std::vector<std::size_t> ids, chans;
  for (const Var& p : parts) {
    detail::same_graph(parts[0], p, "concat_channels");
    const Tensor& v = p.value();
    detail::require_rank(v, 4, "concat_channels");
    if (v.dim(0) != n || v.dim(2) != h || v.dim(3) != w) {
      throw ShapeError("concat_channels: " + shape_str(v.shape()) + " incompatible with " + shape_str(first.shape()));
    }
    ids.push_back(p.id);
    chans.push_back(v.dim(1));
    total_c += v.dim(1);
  }
  const std::size_t plane = h * w;
  Tensor out({n, total_c, h, w});
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const Tensor& v = parts[i].value();
      std::copy_n(&v.data()[b * chans[i] * plane], chans[i] * plane, &out.data()[(b * total_c + off) * plane]);
      off += chans[i];
    }
  }
  return parts[0].graph->record(OpKind::kConcatChannels, ids, std::move(out),
                                [ids, chans, n, total_c, plane](Graph& g, std::size_t self) {
                                  const auto& up = g.upstream(self);
                                  std::size_t off = 0;
                                  for (std::size_t i = 0; i < ids.size(); ++i) {
                                    if (auto* d = g.grad_sink(ids[i])) {
                                      for (std::size_t b = 0; b < n; ++b) {
                                        const double* src = &up[(b * total_c + off) * plane];
                                        double* dst = &(*d)[b * chans[i] * plane];
                                        for (std::size_t j = 0; j < chans[i] * plane; ++j) dst[j] += src[j];
                                      }
                                    }
                                    off += chans[i];
                                  }
                                });
}

inline Var concat_channels(std::initializer_list<Var> parts) {
  return concat_channels(std::span<const Var>(parts.begin(), parts.size()));
}

// Softmax over the H*W cells of every (n, c) plane of [N,C,H,W].
inline Var spatial_softmax(Var a) {
  const Tensor& av = a.value();
  detail::require_rank(av, 4, "spatial_softmax");
  const std::size_t planes = av.dim(0) * av.dim(1), plane = av.dim(2) * av.dim(3);
  Tensor out(av.shape());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = &av.data()[p * plane];
    double* dst = &out.data()[p * plane];
    const double mx = *std::max_element(src, src + plane);
    double z = 0;
    for (std::size_t i = 0; i < plane; ++i) z += (dst[i] = std::exp(src[i] - mx));
    for (std::size_t i = 0; i < plane; ++i) dst[i] /= z;
  }
  detail::check_finite(out, "spatial_softmax");
  const std::size_t ia = a.id;
  return a.graph->record(OpKind::kSpatialSoftmax, {ia}, std::move(out), [ia, planes, plane](Graph& g, std::size_t self) {
    auto* da = g.grad_sink(ia);
    if (!da) return;
    const auto& up = g.upstream(self);
    const Tensor& y = g.value(self);
    for (std::size_t p = 0; p < planes; ++p) {
      const double inner = detail::dot(&up[p * plane], &y.data()[p * plane], plane);
      for (std::size_t i = 0; i < plane; ++i) (*da)[p * plane + i] += y[p * plane + i] * (up[p * plane + i] - inner);
    }
  });
}

// Identity forward, no gradient backward.
inline Var stop_gradient(Var a) {
  return a.graph->record_detached(OpKind::kStopGradient, {a.id}, a.value());
}

inline Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id;
  return a.graph->record(OpKind::kReshape, {ia}, std::move(out), [ia](Graph& g, std::size_t self) {
    auto* da = g.grad_sink(ia);
    if (!da) return;
    const auto& up = g.upstream(self);
    for (std::size_t i = 0; i < up.size(); ++i) (*da)[i] += up[i];
  });
}

/// Elementwise Huber penalty with threshold 1:
/// 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
inline Var smooth_l1(Var d) {
  return detail::unary(
      d, OpKind::kSmoothL1, "smooth_l1",
      [](double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; },
      [](double x, double) { return std::abs(x) < 1.0 ? x : (x > 0 ? 1.0 : -1.0); });
}

/// Elementwise binary cross-entropy on logits against fixed 0/1 targets,
/// max(z,0) - z*y + log(1 + exp(-|z|)).
inline Var bce_with_logits(Var logits, const Tensor& target) {
  const Tensor& z = logits.value();
  require_same_shape(z.shape(), target.shape(), "bce_with_logits");
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) {
    out[i] = std::max(z[i], 0.0) - z[i] * target[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  detail::check_finite(out, "bce_with_logits");
  const std::size_t iz = logits.id;
  return logits.graph->record(OpKind::kBceWithLogits, {iz}, std::move(out), [iz, target](Graph& g, std::size_t self) {
    auto* dz = g.grad_sink(iz);
    if (!dz) return;
    const auto& up = g.upstream(self);
    const Tensor& zv = g.value(iz);
    for (std::size_t i = 0; i < up.size(); ++i) (*dz)[i] += up[i] * (sigmoid_value(zv[i]) - target[i]);
  });
}

}  // namespace handadapt
