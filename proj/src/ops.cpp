/**
 * @file ops.cpp
 * @brief Forward kernels and backward rules for the tensor ops.
 *
 * Matrix products go through Eigen maps over the row-major buffers;
 * convolutions are lowered to im2col + GEMM.
 */
#include "csifb/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "csifb/errors.hpp"

namespace csifb::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap view(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MutMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap view(Buffer& s, std::size_t rows, std::size_t cols) {
  return MutMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                     to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// out[i] = x[index[i]]; the backward rule scatters back.
Tensor gather(const char* op, const Tensor& x, Shape shape, std::shared_ptr<const std::vector<std::size_t>> index) {
  const auto in = x.values();
  Buffer out(index->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[(*index)[i]];
  return Tensor::make_result(op, std::move(shape), std::move(out), {x},
                             [x, index](std::span<const double>, std::span<const double> g) mutable {
                               auto gx = x.mutable_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) gx[(*index)[i]] += g[i];
                             });
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kh, kw;
  std::size_t stride;
  std::size_t pad_r, pad_c;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t pixels() const { return out_h * out_w; }
};

std::size_t conv_extent(std::size_t in, std::size_t pad, std::size_t k, std::size_t stride, const char* op) {
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be >= 1");
  const std::size_t padded = in + 2 * pad;
  if (k == 0 || k > padded) {
    throw ShapeError(std::string(op) + ": kernel extent " + std::to_string(k) + " exceeds padded extent " +
                     std::to_string(padded));
  }
  if ((padded - k) % stride != 0) {
    throw ShapeError(std::string(op) + ": non-integral output extent (" + std::to_string(padded) + " - " +
                     std::to_string(k) + ") / " + std::to_string(stride));
  }
  return (padded - k) / stride + 1;
}

// cols[(c * kh + i) * kw + j][oy * out_w + ox] = x[c][oy * s + i - pr][ox * s + j - pc]
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t pixels = g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * pixels;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad_r);
          double* dst = row + oy * g.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = x + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t xx =
                static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad_c);
            dst[ox] = (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.width)) ? 0.0 : src[xx];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates into x.
void col2im(const double* cols, const ConvGeometry& g, double* x) {
  const std::size_t pixels = g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * pixels;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad_r);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst = x + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t xx =
                static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad_c);
            if (xx >= 0 && xx < static_cast<std::ptrdiff_t>(g.width)) dst[xx] += src[ox];
          }
        }
      }
    }
  }
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }


}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t r = a.dim(0), k = a.dim(1), c = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Buffer out(r * c);
  view(out, r, c).noalias() = view(a.values(), r, k) * view(b.values(), k, c);
  mac_counter() += r * k * c;
  return Tensor::make_result("matmul", {r, c}, std::move(out), {a, b},
                             [a, b, r, k, c](std::span<const double>, std::span<const double> g) mutable {
                               const auto grad = view(g, r, c);
                               if (a.requires_grad()) {
                                 view(a.mutable_grad(), r, k).noalias() += grad * view(b.values(), k, c).transpose();
                               }
                               if (b.requires_grad()) {
                                 view(b.mutable_grad(), k, c).noalias() += view(a.values(), r, k).transpose() * grad;
                               }
                             });
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "batched_matmul");
  require_rank(b, 3, "batched_matmul");
  const std::size_t groups = a.dim(0), n = a.dim(1), k = a.dim(2);
  const std::size_t c = transpose_b ? b.dim(1) : b.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != groups || bk != k) {
    throw ShapeError("batched_matmul: incompatible extents " + to_string(a.shape()) + " x " +
                     to_string(b.shape()) + (transpose_b ? "^T" : ""));
  }
  Buffer out(groups * n * c);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t g = 0; g < groups; ++g) {
    const auto lhs = view(av.subspan(g * n * k, n * k), n, k);
    auto dst = MutMap(out.data() + g * n * c, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
    if (transpose_b) {
      dst.noalias() = lhs * view(bv.subspan(g * c * k, c * k), c, k).transpose();
    } else {
      dst.noalias() = lhs * view(bv.subspan(g * k * c, k * c), k, c);
    }
  }
  mac_counter() += groups * n * k * c;
  return Tensor::make_result(
      "batched_matmul", {groups, n, c}, std::move(out), {a, b},
      [a, b, groups, n, k, c, transpose_b](std::span<const double>, std::span<const double> grad) mutable {
        const auto av = a.values();
        const auto bv = b.values();
        for (std::size_t g = 0; g < groups; ++g) {
          const auto gout = view(grad.subspan(g * n * c, n * c), n, c);
          if (a.requires_grad()) {
            auto da = view(a.mutable_grad().subspan(g * n * k, n * k), n, k);
            if (transpose_b) {
              da.noalias() += gout * view(bv.subspan(g * c * k, c * k), c, k);
            } else {
              da.noalias() += gout * view(bv.subspan(g * k * c, k * c), k, c).transpose();
            }
          }
          if (b.requires_grad()) {
            const auto lhs = view(av.subspan(g * n * k, n * k), n, k);
            if (transpose_b) {
              view(b.mutable_grad().subspan(g * c * k, c * k), c, k).noalias() += gout.transpose() * lhs;
            } else {
              view(b.mutable_grad().subspan(g * k * c, k * c), k, c).noalias() += lhs.transpose() * gout;
            }
          }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::make_result("add", a.shape(), std::move(out), {a, b},
                             [a, b](std::span<const double>, std::span<const double> g) mutable {
                               for (const Tensor* t : {&a, &b}) {
                                 if (!t->requires_grad()) continue;
                                 auto d = t->mutable_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                               }
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor::make_result("sub", a.shape(), std::move(out), {a, b},
                             [a, b](std::span<const double>, std::span<const double> g) mutable {
                               if (a.requires_grad()) {
                                 auto d = a.mutable_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                               }
                               if (b.requires_grad()) {
                                 auto d = b.mutable_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
                               }
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::make_result("mul", a.shape(), std::move(out), {a, b},
                             [a, b](std::span<const double>, std::span<const double> g) mutable {
                               const auto av = a.values();
                               const auto bv = b.values();
                               if (a.requires_grad()) {
                                 auto d = a.mutable_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
                               }
                               if (b.requires_grad()) {
                                 auto d = b.mutable_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
                               }
                             });
}

Tensor scale(const Tensor& a, double factor) {
  Buffer out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  return Tensor::make_result("scale", a.shape(), std::move(out), {a},
                             [a, factor](std::span<const double>, std::span<const double> g) mutable {
                               auto d = a.mutable_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
                             });
}

Tensor add_bias(const Tensor& x, const Tensor& bias, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "add_bias");
  if (bias.numel() != s.extent) {
    throw ShapeError("add_bias: bias of shape " + to_string(bias.shape()) + " does not match axis " +
                     std::to_string(axis) + " of " + to_string(x.shape()));
  }
  Buffer out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.extent; ++i) {
      double* row = out.data() + (o * s.extent + i) * s.inner;
      for (std::size_t j = 0; j < s.inner; ++j) row[j] += bv[i];
    }
  }
  return Tensor::make_result("add_bias", x.shape(), std::move(out), {x, bias},
                             [x, bias, s](std::span<const double>, std::span<const double> g) mutable {
                               if (x.requires_grad()) {
                                 auto d = x.mutable_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                               }
                               if (bias.requires_grad()) {
                                 auto d = bias.mutable_grad();
                                 for (std::size_t o = 0; o < s.outer; ++o) {
                                   for (std::size_t i = 0; i < s.extent; ++i) {
                                     const double* row = g.data() + (o * s.extent + i) * s.inner;
                                     double acc = 0.0;
                                     for (std::size_t j = 0; j < s.inner; ++j) acc += row[j];
                                     d[i] += acc;
                                   }
                                 }
                               }
                             });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return Tensor::make_result("sum", {}, {acc}, {x}, [x](std::span<const double>, std::span<const double> g) mutable {
    auto d = x.mutable_grad();
    for (double& v : d) v += g[0];
  });
}

Tensor sum_squares(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v * v;
  return Tensor::make_result("sum_squares", {}, {acc}, {x},
                             [x](std::span<const double>, std::span<const double> g) mutable {
                               const auto xv = x.values();
                               auto d = x.mutable_grad();
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * xv[i] * g[0];
                             });
}

Tensor activation(const Tensor& x, Activation kind) {
  const auto xv = x.values();
  Buffer out(xv.size());
  switch (kind) {
    case Activation::kGelu: {
      // Phi(x) is kept for the backward rule.
      auto cdf = std::make_shared<Buffer>(xv.size());
      for (std::size_t i = 0; i < out.size(); ++i) {
        (*cdf)[i] = normal_cdf(xv[i]);
        out[i] = xv[i] * (*cdf)[i];
      }
      return Tensor::make_result("gelu", x.shape(), std::move(out), {x},
                                 [x, cdf](std::span<const double>, std::span<const double> g) {
                                   const auto xv = x.values();
                                   const Eigen::Index n = static_cast<Eigen::Index>(xv.size());
                                   Eigen::Map<const Eigen::ArrayXd> xa(xv.data(), n);
                                   Eigen::Map<const Eigen::ArrayXd> phi(cdf->data(), n);
                                   Eigen::Map<const Eigen::ArrayXd> ga(g.data(), n);
                                   const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
                                   Eigen::Map<Eigen::ArrayXd>(x.mutable_grad().data(), n) +=
                                       ga * (phi + xa * (-0.5 * xa.square()).exp() * inv_sqrt_2pi);
                                 });
    }
    case Activation::kTanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
      return Tensor::make_result("tanh", x.shape(), std::move(out), {x},
                                 [x](std::span<const double> y, std::span<const double> g) {
                                   auto d = x.mutable_grad();
                                   for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
                                 });
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
      return Tensor::make_result("sigmoid", x.shape(), std::move(out), {x},
                                 [x](std::span<const double> y, std::span<const double> g) {
                                   auto d = x.mutable_grad();
                                   for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
                                 });
  }
  throw std::invalid_argument("activation: unknown kind");
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  const auto xv = x.values();
  Buffer out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.inner; ++j) {
      const std::size_t base = o * s.extent * s.inner + j;
      double mx = xv[base];
      for (std::size_t i = 1; i < s.extent; ++i) mx = std::max(mx, xv[base + i * s.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < s.extent; ++i) {
        const double e = std::exp(xv[base + i * s.inner] - mx);
        out[base + i * s.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < s.extent; ++i) out[base + i * s.inner] /= total;
    }
  }
  return Tensor::make_result("softmax", x.shape(), std::move(out), {x},
                             [x, s](std::span<const double> y, std::span<const double> g) mutable {
                               auto d = x.mutable_grad();
                               for (std::size_t o = 0; o < s.outer; ++o) {
                                 for (std::size_t j = 0; j < s.inner; ++j) {
                                   const std::size_t base = o * s.extent * s.inner + j;
                                   double dot = 0.0;
                                   for (std::size_t i = 0; i < s.extent; ++i) {
                                     dot += g[base + i * s.inner] * y[base + i * s.inner];
                                   }
                                   for (std::size_t i = 0; i < s.extent; ++i) {
                                     const std::size_t at = base + i * s.inner;
                                     d[at] += y[at] * (g[at] - dot);
                                   }
                                 }
                               }
                             });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "layer_norm");
  if (gain.numel() != s.extent || bias.numel() != s.extent) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(s.extent) + " entries");
  }
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  auto normalized = std::make_shared<Buffer>(xv.size());
  auto inv_std = std::make_shared<Buffer>(s.outer * s.inner);
  Buffer out(xv.size());
  const double n = static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.inner; ++j) {
      const std::size_t base = o * s.extent * s.inner + j;
      double mean = 0.0;
      for (std::size_t i = 0; i < s.extent; ++i) mean += xv[base + i * s.inner];
      mean /= n;
      double var = 0.0;
      for (std::size_t i = 0; i < s.extent; ++i) {
        const double c = xv[base + i * s.inner] - mean;
        var += c * c;
      }
      var /= n;
      const double r = 1.0 / std::sqrt(var + kLayerNormEps);
      (*inv_std)[o * s.inner + j] = r;
      for (std::size_t i = 0; i < s.extent; ++i) {
        const std::size_t at = base + i * s.inner;
        const double h = (xv[at] - mean) * r;
        (*normalized)[at] = h;
        out[at] = h * gv[i] + bv[i];
      }
    }
  }
  return Tensor::make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, s, normalized, inv_std](std::span<const double>, std::span<const double> g) mutable {
        const auto& h = *normalized;
        const auto gv = gain.values();
        if (gain.requires_grad() || bias.requires_grad()) {
          Buffer dg(s.extent, 0.0), db(s.extent, 0.0);
          for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < s.extent; ++i) {
              for (std::size_t j = 0; j < s.inner; ++j) {
                const std::size_t at = (o * s.extent + i) * s.inner + j;
                dg[i] += g[at] * h[at];
                db[i] += g[at];
              }
            }
          }
          if (gain.requires_grad()) {
            auto d = gain.mutable_grad();
            for (std::size_t i = 0; i < s.extent; ++i) d[i] += dg[i];
          }
          if (bias.requires_grad()) {
            auto d = bias.mutable_grad();
            for (std::size_t i = 0; i < s.extent; ++i) d[i] += db[i];
          }
        }
        if (!x.requires_grad()) return;
        auto dx = x.mutable_grad();
        const double n = static_cast<double>(s.extent);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t j = 0; j < s.inner; ++j) {
            const std::size_t base = o * s.extent * s.inner + j;
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t i = 0; i < s.extent; ++i) {
              const std::size_t at = base + i * s.inner;
              const double dh = g[at] * gv[i];
              mean_dh += dh;
              mean_dh_h += dh * h[at];
            }
            mean_dh /= n;
            mean_dh_h /= n;
            const double r = (*inv_std)[o * s.inner + j];
            for (std::size_t i = 0; i < s.extent; ++i) {
              const std::size_t at = base + i * s.inner;
              dx[at] += r * (g[at] * gv[i] - mean_dh - h[at] * mean_dh_h);
            }
          }
        }
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return Tensor::make_alias(std::move(shape), x, [x](std::span<const double>, std::span<const double> g) {
    auto d = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const Shape& in = x.shape();
  if (perm.size() != in.size()) throw ShapeError("permute: permutation rank mismatch for " + to_string(in));
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  const std::size_t rank = in.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < index->size(); ++i) {
    (*index)[i] = src;
    for (std::size_t a = rank; a-- > 0;) {
      if (++counter[a] < out_shape[a]) {
        src += strides[a];
        break;
      }
      src -= strides[a] * (out_shape[a] - 1);
      counter[a] = 0;
    }
  }
  return gather("permute", x, std::move(out_shape), std::move(index));
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw ShapeError("concat: scalar inputs");
  shape[0] = 0;
  for (const auto& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    if (p.rank() != shape.size() || !std::equal(tail.begin(), tail.end(), parts.front().shape().begin() + 1)) {
      throw ShapeError("concat: trailing extents differ: " + to_string(p.shape()));
    }
    shape[0] += p.dim(0);
  }
  Buffer out;
  out.reserve(numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return Tensor::make_result("concat", std::move(shape), std::move(out), parts,
                             [parts](std::span<const double>, std::span<const double> g) mutable {
                               std::size_t offset = 0;
                               for (auto& p : parts) {
                                 if (p.requires_grad()) {
                                   auto d = p.mutable_grad();
                                   for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[offset + i];
                                 }
                                 offset += p.numel();
                               }
                             });
}

namespace {

std::shared_ptr<std::vector<std::size_t>> window_index(std::size_t d, std::size_t side, std::size_t window) {
  const std::size_t m = side / window;
  auto index = std::make_shared<std::vector<std::size_t>>(d * side * side);
  std::size_t at = 0;
  for (std::size_t wr = 0; wr < m; ++wr) {
    for (std::size_t wc = 0; wc < m; ++wc) {
      for (std::size_t i = 0; i < window; ++i) {
        for (std::size_t j = 0; j < window; ++j) {
          const std::size_t pixel = (wr * window + i) * side + wc * window + j;
          for (std::size_t c = 0; c < d; ++c) (*index)[at++] = c * side * side + pixel;
        }
      }
    }
  }
  return index;
}

}  // namespace

Tensor window_partition(const Tensor& x, std::size_t window) {
  require_rank(x, 3, "window_partition");
  const std::size_t d = x.dim(0), side = x.dim(1);
  if (x.dim(2) != side) throw ShapeError("window_partition: map must be square, got " + to_string(x.shape()));
  if (window == 0 || side % window != 0) {
    throw ShapeError("window_partition: window " + std::to_string(window) + " does not divide side " +
                     std::to_string(side));
  }
  const std::size_t m = side / window;
  return gather("window_partition", x, {m * m, window * window, d}, window_index(d, side, window));
}

Tensor window_merge(const Tensor& windows, std::size_t side) {
  require_rank(windows, 3, "window_merge");
  const std::size_t groups = windows.dim(0), tokens = windows.dim(1), d = windows.dim(2);
  const auto window = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
  if (window * window != tokens || window == 0 || side % window != 0 ||
      (side / window) * (side / window) != groups) {
    throw ShapeError("window_merge: " + to_string(windows.shape()) + " is not a window grid of side " +
                     std::to_string(side));
  }
  // Invert the partition permutation.
  const auto forward = window_index(d, side, window);
  auto index = std::make_shared<std::vector<std::size_t>>(forward->size());
  for (std::size_t i = 0; i < forward->size(); ++i) (*index)[(*forward)[i]] = i;
  return gather("window_merge", windows, {d, side, side}, std::move(index));
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "affine");
  require_rank(weight, 2, "affine");
  const std::size_t r = x.dim(0), k = x.dim(1), c = weight.dim(1);
  if (weight.dim(0) != k || bias.numel() != c) {
    throw ShapeError("affine: " + to_string(x.shape()) + " x " + to_string(weight.shape()) + " + " +
                     to_string(bias.shape()));
  }
  Buffer out(r * c);
  auto dst = view(out, r, c);
  dst.noalias() = view(x.values(), r, k) * view(weight.values(), k, c);
  dst.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), static_cast<Eigen::Index>(c));
  mac_counter() += r * k * c;
  return Tensor::make_result(
      "affine", {r, c}, std::move(out), {x, weight, bias},
      [x, weight, bias, r, k, c](std::span<const double>, std::span<const double> g) {
        const auto grad = view(g, r, c);
        if (x.requires_grad()) view(x.mutable_grad(), r, k).noalias() += grad * view(weight.values(), k, c).transpose();
        if (weight.requires_grad()) {
          view(weight.mutable_grad(), k, c).noalias() += view(x.values(), r, k).transpose() * grad;
        }
        if (bias.requires_grad()) view(bias.mutable_grad(), 1, c) += grad.colwise().sum();
      });
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                                    std::uint64_t* score_macs) {
  require_rank(q, 3, "attention");
  require_rank(k, 3, "attention");
  require_same_shape(k, v, "attention");
  const std::size_t groups = q.dim(0), n = q.dim(1), d = q.dim(2), nk = k.dim(1);
  if (k.dim(0) != groups || k.dim(2) != d || heads == 0 || d % heads != 0) {
    throw ShapeError("attention: queries " + to_string(q.shape()) + ", keys " + to_string(k.shape()) + ", " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));
  // Attention weights per (group, head), kept for the backward rule.
  auto weights = std::make_shared<Buffer>(groups * heads * n * nk);
  Buffer out(groups * n * d);
  const auto qv = q.values();
  const auto kv = k.values();
  const auto vv = v.values();
  for (std::size_t g = 0; g < groups; ++g) {
    const auto qg = view(qv.subspan(g * n * d, n * d), n, d);
    const auto kg = view(kv.subspan(g * nk * d, nk * d), nk, d);
    const auto vg = view(vv.subspan(g * nk * d, nk * d), nk, d);
    auto og = MutMap(out.data() + g * n * d, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t h = 0; h < heads; ++h) {
      const auto col = static_cast<Eigen::Index>(h * dh);
      const auto width = static_cast<Eigen::Index>(dh);
      auto a = MutMap(weights->data() + (g * heads + h) * n * nk, static_cast<Eigen::Index>(n),
                      static_cast<Eigen::Index>(nk));
      a.noalias() = qg.middleCols(col, width) * kg.middleCols(col, width).transpose();
      a *= alpha;
      // Row softmax with max subtraction.
      a = (a.colwise() - a.rowwise().maxCoeff()).array().exp().matrix();
      a.array().colwise() /= a.rowwise().sum().array();
      og.middleCols(col, width).noalias() = a * vg.middleCols(col, width);
    }
  }
  const std::uint64_t macs = groups * n * nk * d;
  mac_counter() += 2 * macs;
  if (score_macs != nullptr) *score_macs += macs;

  return Tensor::make_result(
      "attention", {groups, n, d}, std::move(out), {q, k, v},
      [q, k, v, weights, groups, heads, n, nk, d, dh, alpha](std::span<const double>, std::span<const double> grad) {
        const auto qv = q.values();
        const auto kv = k.values();
        const auto vv = v.values();
        std::span<double> dq = q.requires_grad() ? q.mutable_grad() : std::span<double>();
        std::span<double> dk = k.requires_grad() ? k.mutable_grad() : std::span<double>();
        std::span<double> dv = v.requires_grad() ? v.mutable_grad() : std::span<double>();
        RowMat da(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(nk));
        for (std::size_t g = 0; g < groups; ++g) {
          const auto qg = view(qv.subspan(g * n * d, n * d), n, d);
          const auto kg = view(kv.subspan(g * nk * d, nk * d), nk, d);
          const auto vg = view(vv.subspan(g * nk * d, nk * d), nk, d);
          const auto gg = view(grad.subspan(g * n * d, n * d), n, d);
          for (std::size_t h = 0; h < heads; ++h) {
            const auto col = static_cast<Eigen::Index>(h * dh);
            const auto width = static_cast<Eigen::Index>(dh);
            const auto a = ConstMap(weights->data() + (g * heads + h) * n * nk, static_cast<Eigen::Index>(n),
                                    static_cast<Eigen::Index>(nk));
            const auto gout = gg.middleCols(col, width);
            if (!dv.empty()) {
              view(dv.subspan(g * nk * d, nk * d), nk, d).middleCols(col, width).noalias() += a.transpose() * gout;
            }
            if (dq.empty() && dk.empty()) continue;
            da.noalias() = gout * vg.middleCols(col, width).transpose();
            // Softmax Jacobian, then the 1/sqrt(dh) scale.
            const Eigen::VectorXd row_dot = (da.array() * a.array()).rowwise().sum();
            da = (a.array() * (da.colwise() - row_dot).array()).matrix() * alpha;
            if (!dq.empty()) {
              view(dq.subspan(g * n * d, n * d), n, d).middleCols(col, width).noalias() += da * kg.middleCols(col, width);
            }
            if (!dk.empty()) {
              view(dk.subspan(g * nk * d, nk * d), nk, d).middleCols(col, width).noalias() +=
                  da.transpose() * qg.middleCols(col, width);
            }
          }
        }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, Padding padding) {
  require_rank(x, 3, "conv2d");
  require_rank(kernel, 4, "conv2d");
  if (kernel.dim(1) != x.dim(0)) {
    throw ShapeError("conv2d: kernel " + to_string(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)) +
                     " input channels, got " + to_string(x.shape()));
  }
  ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), kernel.dim(2), kernel.dim(3), stride, padding.rows, padding.cols, 0, 0};
  geo.out_h = conv_extent(geo.height, geo.pad_r, geo.kh, stride, "conv2d");
  geo.out_w = conv_extent(geo.width, geo.pad_c, geo.kw, stride, "conv2d");
  const std::size_t out_c = kernel.dim(0);

  auto cols = std::make_shared<Buffer>(geo.patch() * geo.pixels());
  im2col(x.values().data(), geo, cols->data());
  Buffer out(out_c * geo.pixels());
  view(out, out_c, geo.pixels()).noalias() =
      view(kernel.values(), out_c, geo.patch()) * view(std::span<const double>(*cols), geo.patch(), geo.pixels());
  mac_counter() += out_c * geo.patch() * geo.pixels();

  return Tensor::make_result(
      "conv2d", {out_c, geo.out_h, geo.out_w}, std::move(out), {x, kernel},
      [x, kernel, geo, out_c, cols](std::span<const double>, std::span<const double> g) mutable {
        const auto grad = view(g, out_c, geo.pixels());
        const auto col_view = view(std::span<const double>(*cols), geo.patch(), geo.pixels());
        if (kernel.requires_grad()) {
          view(kernel.mutable_grad(), out_c, geo.patch()).noalias() += grad * col_view.transpose();
        }
        if (x.requires_grad()) {
          Buffer dcols(geo.patch() * geo.pixels());
          view(dcols, geo.patch(), geo.pixels()).noalias() =
              view(kernel.values(), out_c, geo.patch()).transpose() * grad;
          col2im(dcols.data(), geo, x.mutable_grad().data());
        }
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& kernel, std::size_t stride, Padding padding) {
  require_rank(x, 3, "conv_transpose2d");
  require_rank(kernel, 4, "conv_transpose2d");
  if (kernel.dim(0) != x.dim(0)) {
    throw ShapeError("conv_transpose2d: kernel " + to_string(kernel.shape()) + " expects " +
                     std::to_string(kernel.dim(0)) + " input channels, got " + to_string(x.shape()));
  }
  if (stride == 0) throw ShapeError("conv_transpose2d: stride must be >= 1");
  const std::size_t in_c = x.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const std::size_t full_h = (x.dim(1) - 1) * stride + kh;
  const std::size_t full_w = (x.dim(2) - 1) * stride + kw;
  if (full_h <= 2 * padding.rows || full_w <= 2 * padding.cols) {
    throw ShapeError("conv_transpose2d: padding leaves an empty output for input " + to_string(x.shape()));
  }
  ConvGeometry geo{kernel.dim(1), full_h - 2 * padding.rows, full_w - 2 * padding.cols, kh, kw, stride,
                   padding.rows, padding.cols, x.dim(1), x.dim(2)};

  Buffer cols(geo.patch() * geo.pixels());
  view(cols, geo.patch(), geo.pixels()).noalias() =
      view(kernel.values(), in_c, geo.patch()).transpose() * view(x.values(), in_c, geo.pixels());
  mac_counter() += in_c * geo.patch() * geo.pixels();
  Buffer out(geo.channels * geo.height * geo.width, 0.0);
  col2im(cols.data(), geo, out.data());

  return Tensor::make_result(
      "conv_transpose2d", {geo.channels, geo.height, geo.width}, std::move(out), {x, kernel},
      [x, kernel, geo, in_c](std::span<const double>, std::span<const double> g) mutable {
        Buffer gcols(geo.patch() * geo.pixels());
        im2col(g.data(), geo, gcols.data());
        const auto gv = view(std::span<const double>(gcols), geo.patch(), geo.pixels());
        if (x.requires_grad()) {
          view(x.mutable_grad(), in_c, geo.pixels()).noalias() += view(kernel.values(), in_c, geo.patch()) * gv;
        }
        if (kernel.requires_grad()) {
          view(kernel.mutable_grad(), in_c, geo.patch()).noalias() +=
              view(x.values(), in_c, geo.pixels()) * gv.transpose();
        }
      });
}

}  // namespace csifb::ad
