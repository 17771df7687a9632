#include "aslpar/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace aslpar {
namespace {

[[noreturn]] void dim_error(const char* op, const std::string& detail) {
  throw DimensionError(std::string(op) + ": " + detail);
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    dim_error(op, "expected rank " + std::to_string(rank) + ", got " + t.shape().str());
  }
}

void require_equal(const char* op, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) dim_error(op, "shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (dst == nullptr) return;
  float* d = dst->ptr();
  const float* s = src.ptr();
  for (std::size_t i = 0, n = src.size(); i < n; ++i) d[i] += s[i];
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const float* __restrict a, const float* __restrict b, float* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    float* __restrict crow = c + i * n;
    const float* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Dot product with eight fixed partial sums, combined in a fixed order.
float dot(const float* __restrict x, const float* __restrict y, std::size_t n) {
  float lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += x[j + l] * y[j + l];
  }
  float acc = ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
  for (; j < n; ++j) acc += x[j] * y[j];
  return acc;
}

// C[m x k] += G[m x n] * B[k x n]^T
void gemm_nt(const float* __restrict g, const float* __restrict b, float* __restrict c, std::size_t m,
             std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* grow = g + i * n;
    float* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) crow[p] += dot(grow, b + p * n, n);
  }
}

// C[k x n] += A[m x k]^T * G[m x n]
void gemm_tn(const float* __restrict a, const float* __restrict g, float* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    const float* __restrict grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      float* __restrict crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

float stable_sigmoid(float x) {
  if (x >= 0.0F) return 1.0F / (1.0F + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0F + e);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit out;
  for (std::size_t i = 0; i < axis; ++i) out.outer *= s[i];
  out.len = s[axis];
  for (std::size_t i = axis + 1; i < s.rank(); ++i) out.inner *= s[i];
  return out;
}

}  // namespace

namespace ops {

Var add(Var a, Var b) {
  require_equal("add", a.value(), b.value());
  Tensor out = a.value();
  accumulate(&out, b.value());
  return a.graph->record(OpKind::kAdd, {a, b}, std::move(out), [](const BackwardContext& ctx) {
    accumulate(ctx.input_grads[0], ctx.grad_output);
    accumulate(ctx.input_grads[1], ctx.grad_output);
  });
}

Var sub(Var a, Var b) {
  require_equal("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.graph->record(OpKind::kSub, {a, b}, std::move(out), [](const BackwardContext& ctx) {
    accumulate(ctx.input_grads[0], ctx.grad_output);
    if (Tensor* gb = ctx.input_grads[1]) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= ctx.grad_output[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_equal("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.graph->record(OpKind::kMul, {a, b}, std::move(out), [](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output;
    if (Tensor* ga = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (*ctx.inputs[1])[i];
    }
    if (Tensor* gb = ctx.input_grads[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * (*ctx.inputs[0])[i];
    }
  });
}

Var scale(Var a, float factor) { return affine(a, factor, 0.0F); }

Var affine(Var a, float factor, float offset) {
  Tensor out = a.value();
  for (float& v : out.data()) v = factor * v + offset;
  return a.graph->record(OpKind::kAffine, {a}, std::move(out), [factor](const BackwardContext& ctx) {
    if (Tensor* ga = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += factor * ctx.grad_output[i];
    }
  });
}

Var add_row_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_rank("add_row_bias", xv, 2);
  require_rank("add_row_bias", bv, 1);
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (bv.dim(0) != n) dim_error("add_row_bias", "bias " + bv.shape().str() + " vs input " + xv.shape().str());
  Tensor out = xv;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  }
  return x.graph->record(OpKind::kAddRowBias, {x, bias}, std::move(out), [m, n](const BackwardContext& ctx) {
    accumulate(ctx.input_grads[0], ctx.grad_output);
    if (Tensor* gb = ctx.input_grads[1]) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += ctx.grad_output[i * n + j];
      }
    }
  });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    dim_error("matmul", "cannot multiply " + av.shape().str() + " by " + bv.shape().str());
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n});
  gemm_nn(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
  return a.graph->record(OpKind::kMatmul, {a, b}, std::move(out), [m, k, n](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output;
    if (Tensor* ga = ctx.input_grads[0]) gemm_nt(g.ptr(), ctx.inputs[1]->ptr(), ga->ptr(), m, n, k);
    if (Tensor* gb = ctx.input_grads[1]) gemm_tn(ctx.inputs[0]->ptr(), g.ptr(), gb->ptr(), m, k, n);
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_rank("transpose", av, 2);
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  }
  return a.graph->record(OpKind::kTranspose, {a}, std::move(out), [m, n](const BackwardContext& ctx) {
    if (Tensor* ga = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += ctx.grad_output[j * m + i];
      }
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(shape);
  return a.graph->record(OpKind::kReshape, {a}, std::move(out), [](const BackwardContext& ctx) {
    if (Tensor* ga = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += ctx.grad_output[i];
    }
  });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (float& v : out.data()) v = stable_sigmoid(v);
  return x.graph->record(OpKind::kSigmoid, {x}, std::move(out), [](const BackwardContext& ctx) {
    if (Tensor* gx = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < gx->size(); ++i) {
        const float s = ctx.output[i];
        (*gx)[i] += ctx.grad_output[i] * s * (1.0F - s);
      }
    }
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (float& v : out.data()) v = v > 0.0F ? v : 0.0F;
  return x.graph->record(OpKind::kRelu, {x}, std::move(out), [](const BackwardContext& ctx) {
    if (Tensor* gx = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < gx->size(); ++i) {
        if ((*ctx.inputs[0])[i] > 0.0F) (*gx)[i] += ctx.grad_output[i];
      }
    }
  });
}

Var softmax(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank()) dim_error("softmax", "axis " + std::to_string(axis) + " invalid for " + xv.shape().str());
  const AxisSplit s = split_axis(xv.shape(), axis);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      float mx = xv[base];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, xv[base + l * s.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const float e = std::exp(xv[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        total += e;
      }
      const float inv = 1.0F / total;
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] *= inv;
    }
  }
  return x.graph->record(OpKind::kSoftmax, {x}, std::move(out), [s](const BackwardContext& ctx) {
    Tensor* gx = ctx.input_grads[0];
    if (gx == nullptr) return;
    const Tensor& y = ctx.output;
    const Tensor& g = ctx.grad_output;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) dot += y[base + l * s.inner] * g[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = base + l * s.inner;
          (*gx)[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, float eps) {
  const Tensor& xv = x.value();
  require_rank("layer_norm", xv, 2);
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (gain.value().size() != n || bias.value().size() != n) {
    dim_error("layer_norm", "gain/bias " + gain.value().shape().str() + "/" + bias.value().shape().str() +
                                " vs input " + xv.shape().str());
  }
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out(xv.shape());
  std::vector<float> xhat(m * n);
  std::vector<float> rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    const float* row = xv.ptr() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<float>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<float>(n);
    rstd[i] = 1.0F / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * rstd[i];
      out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
    }
  }
  return x.graph->record(
      OpKind::kLayerNorm, {x, gain, bias}, std::move(out),
      [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](const BackwardContext& ctx) {
        const Tensor& g = ctx.grad_output;
        const Tensor& gv = *ctx.inputs[1];
        if (Tensor* gg = ctx.input_grads[1]) {
          for (std::size_t i = 0; i < m * n; ++i) (*gg)[i % n] += g[i] * xhat[i];
        }
        if (Tensor* gb = ctx.input_grads[2]) {
          for (std::size_t i = 0; i < m * n; ++i) (*gb)[i % n] += g[i];
        }
        if (Tensor* gx = ctx.input_grads[0]) {
          const float inv_n = 1.0F / static_cast<float>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const float d = g[i * n + j] * gv[j];
              mean_d += d;
              mean_dx += d * xhat[i * n + j];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const float d = g[i * n + j] * gv[j];
              (*gx)[i * n + j] += rstd[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
            }
          }
        }
      });
}

Var embedding(Var table, std::span<const std::size_t> indices) {
  const Tensor& tv = table.value();
  require_rank("embedding", tv, 2);
  if (indices.empty()) dim_error("embedding", "no indices");
  const std::size_t rows = tv.dim(0), d = tv.dim(1);
  Tensor out(Shape{indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= rows) {
      dim_error("embedding", "index " + std::to_string(indices[r]) + " out of range for " + tv.shape().str());
    }
    std::copy_n(tv.ptr() + indices[r] * d, d, out.ptr() + r * d);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return table.graph->record(OpKind::kEmbedding, {table}, std::move(out),
                             [d, idx = std::move(idx)](const BackwardContext& ctx) {
                               if (Tensor* gt = ctx.input_grads[0]) {
                                 for (std::size_t r = 0; r < idx.size(); ++r) {
                                   for (std::size_t j = 0; j < d; ++j) {
                                     (*gt)[idx[r] * d + j] += ctx.grad_output[r * d + j];
                                   }
                                 }
                               }
                             });
}

Var concat_rows(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank("concat_rows", av, 2);
  require_rank("concat_rows", bv, 2);
  if (av.dim(1) != bv.dim(1)) dim_error("concat_rows", "width mismatch " + av.shape().str() + " vs " + bv.shape().str());
  const std::size_t na = av.size();
  std::vector<float> data(av.data().begin(), av.data().end());
  data.insert(data.end(), bv.data().begin(), bv.data().end());
  Tensor out(Shape{av.dim(0) + bv.dim(0), av.dim(1)}, std::move(data));
  return a.graph->record(OpKind::kConcatRows, {a, b}, std::move(out), [na](const BackwardContext& ctx) {
    const float* g = ctx.grad_output.ptr();
    if (Tensor* ga = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = ctx.input_grads[1]) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += g[na + i];
    }
  });
}

Var slice_rows(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  require_rank("slice_rows", xv, 2);
  if (count == 0 || start + count > xv.dim(0)) {
    dim_error("slice_rows", "rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                                ") outside " + xv.shape().str());
  }
  const std::size_t d = xv.dim(1);
  std::vector<float> data(xv.ptr() + start * d, xv.ptr() + (start + count) * d);
  Tensor out(Shape{count, d}, std::move(data));
  const std::size_t offset = start * d;
  return x.graph->record(OpKind::kSliceRows, {x}, std::move(out), [offset](const BackwardContext& ctx) {
    if (Tensor* gx = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < ctx.grad_output.size(); ++i) (*gx)[offset + i] += ctx.grad_output[i];
    }
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (float v : x.value().data()) total += v;
  return x.graph->record(OpKind::kSum, {x}, Tensor::scalar(total), [](const BackwardContext& ctx) {
    if (Tensor* gx = ctx.input_grads[0]) {
      const float g = ctx.grad_output[0];
      for (float& v : gx->data()) v += g;
    }
  });
}

Var mean(Var x) {
  const float n = static_cast<float>(x.value().size());
  double total = 0.0;
  for (float v : x.value().data()) total += v;
  return x.graph->record(OpKind::kMean, {x}, Tensor::scalar(total / n), [n](const BackwardContext& ctx) {
    if (Tensor* gx = ctx.input_grads[0]) {
      const float g = ctx.grad_output[0] / n;
      for (float& v : gx->data()) v += g;
    }
  });
}

Var sum_last_axis(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.dim(xv.rank() - 1);
  const std::size_t rows = xv.size() / n;
  Shape shape = Shape{1};
  if (xv.rank() > 1) shape = Shape(xv.shape().dims().first(xv.rank() - 1));
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += xv[r * n + j];
    out[r] = acc;
  }
  return x.graph->record(OpKind::kSumLastAxis, {x}, std::move(out), [rows, n](const BackwardContext& ctx) {
    if (Tensor* gx = ctx.input_grads[0]) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) (*gx)[r * n + j] += ctx.grad_output[r];
      }
    }
  });
}

Var clamp(Var x, float lo, float hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
  Tensor out = x.value();
  for (float& v : out.data()) v = std::min(std::max(v, lo), hi);
  return x.graph->record(OpKind::kClamp, {x}, std::move(out), [lo, hi](const BackwardContext& ctx) {
    if (Tensor* gx = ctx.input_grads[0]) {
      const Tensor& xv = *ctx.inputs[0];
      for (std::size_t i = 0; i < gx->size(); ++i) {
        if (xv[i] >= lo && xv[i] <= hi) (*gx)[i] += ctx.grad_output[i];
      }
    }
  });
}

Var conv2d_same(Var x, Var kernel, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  const Tensor& bv = bias.value();
  require_rank("conv2d_same", xv, 3);
  require_rank("conv2d_same", kv, 4);
  require_rank("conv2d_same", bv, 1);
  const std::size_t cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const std::size_t cout = kv.dim(0), k = kv.dim(2);
  if (kv.dim(1) != cin || kv.dim(3) != k) {
    dim_error("conv2d_same", "kernel " + kv.shape().str() + " incompatible with input " + xv.shape().str());
  }
  if (k % 2 == 0) dim_error("conv2d_same", "kernel size must be odd, got " + std::to_string(k));
  if (bv.dim(0) != cout) dim_error("conv2d_same", "bias " + bv.shape().str() + " vs kernel " + kv.shape().str());
  const long pad = static_cast<long>(k / 2);
  const long hl = static_cast<long>(h), wl = static_cast<long>(w), kl = static_cast<long>(k);

  // Visits every (output, input, kernel) index triple that lands inside the image.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t ci = 0; ci < cin; ++ci) {
        for (long ky = 0; ky < kl; ++ky) {
          for (long kx = 0; kx < kl; ++kx) {
            const std::size_t kidx = ((co * cin + ci) * k + static_cast<std::size_t>(ky)) * k + static_cast<std::size_t>(kx);
            for (long y = 0; y < hl; ++y) {
              const long iy = y + ky - pad;
              if (iy < 0 || iy >= hl) continue;
              const long x_lo = std::max(0L, pad - kx);
              const long x_hi = std::min(wl, wl + pad - kx);
              const std::size_t orow = (co * h + static_cast<std::size_t>(y)) * w;
              const std::size_t irow = (ci * h + static_cast<std::size_t>(iy)) * w;
              fn(kidx, orow, irow, x_lo, x_hi, kx - pad);
            }
          }
        }
      }
    }
  };

  Tensor out(Shape{cout, h, w});
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t i = 0; i < h * w; ++i) out[co * h * w + i] = bv[co];
  }
  for_each_tap([&](std::size_t kidx, std::size_t orow, std::size_t irow, long x_lo, long x_hi, long shift) {
    const float kval = kv[kidx];
    for (long xx = x_lo; xx < x_hi; ++xx) {
      out[orow + static_cast<std::size_t>(xx)] += kval * xv[irow + static_cast<std::size_t>(xx + shift)];
    }
  });

  return x.graph->record(
      OpKind::kConv2dSame, {x, kernel, bias}, std::move(out), [=](const BackwardContext& ctx) {
        const Tensor& g = ctx.grad_output;
        const Tensor& xin = *ctx.inputs[0];
        const Tensor& kin = *ctx.inputs[1];
        Tensor* gx = ctx.input_grads[0];
        Tensor* gk = ctx.input_grads[1];
        if (Tensor* gb = ctx.input_grads[2]) {
          for (std::size_t co = 0; co < cout; ++co) {
            for (std::size_t i = 0; i < h * w; ++i) (*gb)[co] += g[co * h * w + i];
          }
        }
        if (gx == nullptr && gk == nullptr) return;
        for_each_tap([&](std::size_t kidx, std::size_t orow, std::size_t irow, long x_lo, long x_hi, long shift) {
          if (gk != nullptr) {
            double acc = 0.0;
            for (long xx = x_lo; xx < x_hi; ++xx) {
              acc += g[orow + static_cast<std::size_t>(xx)] * xin[irow + static_cast<std::size_t>(xx + shift)];
            }
            (*gk)[kidx] += acc;
          }
          if (gx != nullptr) {
            const float kval = kin[kidx];
            for (long xx = x_lo; xx < x_hi; ++xx) {
              (*gx)[irow + static_cast<std::size_t>(xx + shift)] += kval * g[orow + static_cast<std::size_t>(xx)];
            }
          }
        });
      });
}

Var multi_head_attention(Var qkv, std::size_t heads) {
  const Tensor& in = qkv.value();
  require_rank("multi_head_attention", in, 2);
  if (in.dim(1) % 3 != 0) dim_error("multi_head_attention", "packed width must be 3d, got " + in.shape().str());
  const std::size_t s = in.dim(0), d = in.dim(1) / 3;
  if (heads == 0 || d % heads != 0) {
    dim_error("multi_head_attention", std::to_string(heads) + " heads do not divide width " + std::to_string(d));
  }
  std::vector<Tensor> probs = attention_weights(in, heads);
  const std::size_t dh = d / heads;
  const std::size_t stride = 3 * d;
  Tensor out(Shape{s, d});
  for (std::size_t hh = 0; hh < heads; ++hh) {
    const float* p = probs[hh].ptr();
    for (std::size_t i = 0; i < s; ++i) {
      float* orow = out.ptr() + i * d + hh * dh;
      for (std::size_t j = 0; j < s; ++j) {
        const float pij = p[i * s + j];
        const float* vrow = in.ptr() + j * stride + 2 * d + hh * dh;
        for (std::size_t c = 0; c < dh; ++c) orow[c] += pij * vrow[c];
      }
    }
  }
  const float sc = 1.0F / std::sqrt(static_cast<float>(dh));
  return qkv.graph->record(
      OpKind::kAttention, {qkv}, std::move(out),
      [s, d, dh, heads, stride, sc, probs = std::move(probs)](const BackwardContext& ctx) {
        Tensor* gq = ctx.input_grads[0];
        if (gq == nullptr) return;
        const Tensor& in = *ctx.inputs[0];
        const Tensor& g = ctx.grad_output;
        std::vector<float> dp(s * s);
        for (std::size_t hh = 0; hh < heads; ++hh) {
          const float* p = probs[hh].ptr();
          const std::size_t qoff = hh * dh, koff = d + hh * dh, voff = 2 * d + hh * dh;
          for (std::size_t i = 0; i < s; ++i) {
            const float* grow = g.ptr() + i * d + hh * dh;
            for (std::size_t j = 0; j < s; ++j) {
              const float* vrow = in.ptr() + j * stride + voff;
              double acc = 0.0;
              for (std::size_t c = 0; c < dh; ++c) acc += grow[c] * vrow[c];
              dp[i * s + j] = acc;
              float* gv = gq->ptr() + j * stride + voff;
              const float pij = p[i * s + j];
              for (std::size_t c = 0; c < dh; ++c) gv[c] += pij * grow[c];
            }
          }
          for (std::size_t i = 0; i < s; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < s; ++j) dot += p[i * s + j] * dp[i * s + j];
            const float* qrow = in.ptr() + i * stride + qoff;
            float* gqrow = gq->ptr() + i * stride + qoff;
            for (std::size_t j = 0; j < s; ++j) {
              const float ds = p[i * s + j] * (dp[i * s + j] - dot) * sc;
              const float* krow = in.ptr() + j * stride + koff;
              float* gkrow = gq->ptr() + j * stride + koff;
              for (std::size_t c = 0; c < dh; ++c) {
                gqrow[c] += ds * krow[c];
                gkrow[c] += ds * qrow[c];
              }
            }
          }
        }
      });
}

Var normalize_rows(Var x) {
  const Tensor& xv = x.value();
  require_rank("normalize_rows", xv, 2);
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor out(xv.shape());
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += static_cast<double>(xv[i * n + j]) * xv[i * n + j];
    norms[i] = std::sqrt(ss);
    if (norms[i] < kNormFloor) continue;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<float>(xv[i * n + j] / norms[i]);
  }
  // The backward pass rebuilds the unit rows in double from the input: the
  // rounded float output would cancel badly in g - y <y, g>.
  return x.graph->record(OpKind::kNormalizeRows, {x}, std::move(out),
                         [m, n, norms = std::move(norms)](const BackwardContext& ctx) {
                           Tensor* gx = ctx.input_grads[0];
                           if (gx == nullptr) return;
                           const Tensor& xv = *ctx.inputs[0];
                           const Tensor& g = ctx.grad_output;
                           for (std::size_t i = 0; i < m; ++i) {
                             if (norms[i] < kNormFloor) continue;
                             double dot = 0.0;
                             for (std::size_t j = 0; j < n; ++j) dot += xv[i * n + j] / norms[i] * g[i * n + j];
                             for (std::size_t j = 0; j < n; ++j) {
                               const double y = xv[i * n + j] / norms[i];
                               (*gx)[i * n + j] += static_cast<float>((g[i * n + j] - y * dot) / norms[i]);
                             }
                           }
                         });
}

Var row_dot(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank("row_dot", av, 2);
  require_equal("row_dot", av, bv);
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += av[i * n + j] * bv[i * n + j];
    out[i] = acc;
  }
  return a.graph->record(OpKind::kRowDot, {a, b}, std::move(out), [m, n](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output;
    if (Tensor* ga = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < m * n; ++i) (*ga)[i] += g[i / n] * (*ctx.inputs[1])[i];
    }
    if (Tensor* gb = ctx.input_grads[1]) {
      for (std::size_t i = 0; i < m * n; ++i) (*gb)[i] += g[i / n] * (*ctx.inputs[0])[i];
    }
  });
}

Var patchify(Var image, std::size_t patch) {
  const Tensor& iv = image.value();
  require_rank("patchify", iv, 3);
  const std::size_t c = iv.dim(0), h = iv.dim(1), w = iv.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    dim_error("patchify", "patch size " + std::to_string(patch) + " does not tile " + iv.shape().str());
  }
  const std::size_t gw = w / patch;
  const std::size_t tokens = (h / patch) * gw;
  const std::size_t feat = c * patch * patch;
  // Flat gather map: output element -> image element.
  std::vector<std::size_t> src(tokens * feat);
  for (std::size_t t = 0; t < tokens; ++t) {
    const std::size_t r0 = (t / gw) * patch, c0 = (t % gw) * patch;
    std::size_t f = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t dy = 0; dy < patch; ++dy) {
        for (std::size_t dx = 0; dx < patch; ++dx) src[t * feat + f++] = (ch * h + r0 + dy) * w + c0 + dx;
      }
    }
  }
  Tensor out(Shape{tokens, feat});
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = iv[src[i]];
  return image.graph->record(OpKind::kPatchify, {image}, std::move(out),
                             [src = std::move(src)](const BackwardContext& ctx) {
                               if (Tensor* gi = ctx.input_grads[0]) {
                                 for (std::size_t i = 0; i < src.size(); ++i) (*gi)[src[i]] += ctx.grad_output[i];
                               }
                             });
}

Var add_window(Var image, Var patch, std::size_t row0, std::size_t col0) {
  const Tensor& iv = image.value();
  const Tensor& pv = patch.value();
  require_rank("add_window", iv, 3);
  require_rank("add_window", pv, 3);
  const std::size_t c = iv.dim(0), h = iv.dim(1), w = iv.dim(2);
  const std::size_t ph = pv.dim(1), pw = pv.dim(2);
  if (pv.dim(0) != c || row0 + ph > h || col0 + pw > w) {
    dim_error("add_window", "patch " + pv.shape().str() + " at (" + std::to_string(row0) + ", " +
                                std::to_string(col0) + ") does not fit image " + iv.shape().str());
  }
  Tensor out = iv;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < ph; ++y) {
      for (std::size_t x = 0; x < pw; ++x) out[(ch * h + row0 + y) * w + col0 + x] += pv[(ch * ph + y) * pw + x];
    }
  }
  return image.graph->record(OpKind::kAddWindow, {image, patch}, std::move(out), [=](const BackwardContext& ctx) {
    accumulate(ctx.input_grads[0], ctx.grad_output);
    if (Tensor* gp = ctx.input_grads[1]) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < ph; ++y) {
          for (std::size_t x = 0; x < pw; ++x) {
            (*gp)[(ch * ph + y) * pw + x] += ctx.grad_output[(ch * h + row0 + y) * w + col0 + x];
          }
        }
      }
    }
  });
}

Var weighted_bce(Var probs, const Tensor& targets, const Tensor& weights) {
  const Tensor& pv = probs.value();
  require_rank("weighted_bce", pv, 2);
  require_equal("weighted_bce", pv, targets);
  const std::size_t m = pv.dim(0), n = pv.dim(1);
  if (weights.rank() != 1 || weights.dim(0) != n) {
    dim_error("weighted_bce", "weights " + weights.shape().str() + " vs probabilities " + pv.shape().str());
  }
  double total = 0.0;
  for (std::size_t i = 0; i < m * n; ++i) {
    const float p = pv[i];
    if (!(p > 0.0F && p < 1.0F)) {
      throw std::domain_error("weighted_bce: probability " + std::to_string(p) + " outside (0, 1); clamp first");
    }
    const float y = targets[i];
    total += static_cast<double>(weights[i % n]) *
             (static_cast<double>(y) * std::log(static_cast<double>(p)) +
              (1.0 - static_cast<double>(y)) * std::log1p(-static_cast<double>(p)));
  }
  const float loss = static_cast<float>(-total / static_cast<double>(m));
  return probs.graph->record(OpKind::kWeightedBce, {probs}, Tensor::scalar(loss),
                             [m, n, targets, weights](const BackwardContext& ctx) {
                               Tensor* gp = ctx.input_grads[0];
                               if (gp == nullptr) return;
                               const Tensor& pv = *ctx.inputs[0];
                               const float g = ctx.grad_output[0] / static_cast<float>(m);
                               for (std::size_t i = 0; i < m * n; ++i) {
                                 const float p = pv[i], y = targets[i];
                                 (*gp)[i] += -g * weights[i % n] * (y / p - (1.0F - y) / (1.0F - p));
                               }
                             });
}

}  // namespace ops

CosineResult cosine_similarity(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) {
    throw DimensionError("cosine_similarity: lengths " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += static_cast<double>(u[i]) * v[i];
    nu += static_cast<double>(u[i]) * u[i];
    nv += static_cast<double>(v[i]) * v[i];
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  if (nu < kNormFloor || nv < kNormFloor) return {0.0F, true};
  const double c = std::clamp(dot / (nu * nv), -1.0, 1.0);
  return {static_cast<float>(c), false};
}

std::vector<Tensor> attention_weights(const Tensor& qkv, std::size_t heads) {
  const std::size_t s = qkv.dim(0), d = qkv.dim(1) / 3;
  const std::size_t dh = d / heads;
  const std::size_t stride = 3 * d;
  const float sc = 1.0F / std::sqrt(static_cast<float>(dh));
  std::vector<Tensor> probs;
  probs.reserve(heads);
  for (std::size_t hh = 0; hh < heads; ++hh) {
    Tensor p(Shape{s, s});
    for (std::size_t i = 0; i < s; ++i) {
      const float* q = qkv.ptr() + i * stride + hh * dh;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t j = 0; j < s; ++j) {
        const float* k = qkv.ptr() + j * stride + d + hh * dh;
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += q[c] * k[c];
        p[i * s + j] = acc * sc;
        mx = std::max(mx, p[i * s + j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < s; ++j) {
        p[i * s + j] = std::exp(p[i * s + j] - mx);
        total += p[i * s + j];
      }
      const float inv = 1.0F / total;
      for (std::size_t j = 0; j < s; ++j) p[i * s + j] *= inv;
    }
    probs.push_back(std::move(p));
  }
  return probs;
}

}  // namespace aslpar
