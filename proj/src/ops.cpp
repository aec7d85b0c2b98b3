// SPDX-License-Identifier: Apache-2.0
#include "hne/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hne/error.hpp"

namespace hne {
namespace {

std::string dims(std::size_t axis, std::size_t extent) {
  return "axis " + std::to_string(axis) + " (extent " + std::to_string(extent) +
         ")";
}

void expect_rank(const char* op, const char* what, const Shape& s,
                 std::size_t rank) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " +
                     std::to_string(rank) + ", got " + to_string(s));
  }
}

std::size_t inner_extent(const Shape& s) {
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return inner;
}

template <typename T>
void accumulate(Tensor<T>& into, const Tensor<T>& from) {
  T* dst = into.data();
  const T* src = from.data();
  for (std::size_t i = 0; i < into.size(); ++i) dst[i] += src[i];
}

template <typename T>
T logsumexp_row(const T* row, std::size_t n, T inv_t) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t l = 0; l < n; ++l) mx = std::max(mx, row[l] * inv_t);
  T acc{0};
  for (std::size_t l = 0; l < n; ++l) acc += std::exp(row[l] * inv_t - mx);
  return mx + std::log(acc);
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_stable(const Tensor<T>& logits, T temperature) {
  if (!(temperature > T{0})) {
    throw DomainError("softmax: temperature must be positive, got " +
                      std::to_string(temperature));
  }
  expect_rank("softmax", "logits", logits.shape(), 2);
  const std::size_t rows = logits.dim(0), n = logits.dim(1);
  const T inv_t = T{1} / temperature;
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data() + r * n;
    T* p = out.data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t l = 0; l < n; ++l) mx = std::max(mx, z[l] * inv_t);
    T total{0};
    for (std::size_t l = 0; l < n; ++l) {
      p[l] = std::exp(z[l] * inv_t - mx);
      total += p[l];
    }
    for (std::size_t l = 0; l < n; ++l) p[l] /= total;
  }
  return out;
}

template <typename T>
Tensor<T> prefix_mean(const Tensor<T>& x, std::size_t groups, std::size_t count) {
  if (x.rank() < 2) throw ShapeError("prefix_mean: input must have rank >= 2");
  const std::size_t batch = x.dim(0);
  const std::size_t width = x.size() / std::max<std::size_t>(batch, 1);
  if (groups == 0 || width % groups != 0) {
    throw ShapeError("prefix_mean: " + dims(1, width) + " not divisible by " +
                     std::to_string(groups) + " groups");
  }
  if (count == 0 || count > groups) {
    throw DomainError("prefix_mean: count " + std::to_string(count) +
                      " outside 1.." + std::to_string(groups));
  }
  const std::size_t c = width / groups;
  Tensor<T> out({batch, c});
  const T denom = static_cast<T>(count);
  for (std::size_t m = 0; m < batch; ++m) {
    const T* row = x.data() + m * width;
    T* o = out.data() + m * c;
    for (std::size_t k = 0; k < count; ++k) {
      for (std::size_t l = 0; l < c; ++l) o[l] += row[k * c + l];
    }
    for (std::size_t l = 0; l < c; ++l) o[l] /= denom;
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Var grouped_linear(Graph<T>& g, Var x, Var weight, Var bias,
                   std::size_t group_offset) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(weight);
  expect_rank("grouped_linear", "input", xv.shape(), 2);
  expect_rank("grouped_linear", "weight", wv.shape(), 3);
  const std::size_t batch = xv.dim(0);
  const std::size_t k_total = wv.dim(0), cout = wv.dim(1), cin = wv.dim(2);
  if (cin == 0 || cout == 0) throw ShapeError("grouped_linear: zero-width weight");
  if (xv.dim(1) % cin != 0) {
    throw ShapeError("grouped_linear: input " + dims(1, xv.dim(1)) +
                     " not divisible by weight " + dims(2, cin));
  }
  const std::size_t groups = xv.dim(1) / cin;
  if (group_offset + groups > k_total) {
    throw ShapeError("grouped_linear: input needs weight groups " +
                     std::to_string(group_offset) + ".." +
                     std::to_string(group_offset + groups) + " but weight " +
                     dims(0, k_total));
  }
  if (bias.valid()) {
    const Tensor<T>& bv = g.value(bias);
    if (bv.size() != k_total * cout) {
      throw ShapeError("grouped_linear: bias " + to_string(bv.shape()) +
                       " does not match weight groups x c_out = " +
                       std::to_string(k_total) + " x " + std::to_string(cout));
    }
  }

  // Transposed copy of the used weight groups: [G][c_in][c_out].
  std::vector<T> wt(groups * cin * cout);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const T* w = wv.data() + (group_offset + gi) * cout * cin;
    T* t = wt.data() + gi * cin * cout;
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < cin; ++i) t[i * cout + o] = w[o * cin + i];
  }

  Tensor<T> y({batch, groups * cout});
  const T* bptr = bias.valid() ? g.value(bias).data() : nullptr;
  for (std::size_t m = 0; m < batch; ++m) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const T* xin = xv.data() + m * groups * cin + gi * cin;
      T* out = y.data() + m * groups * cout + gi * cout;
      const T* t = wt.data() + gi * cin * cout;
      for (std::size_t i = 0; i < cin; ++i) {
        const T xi = xin[i];
        const T* trow = t + i * cout;
        for (std::size_t o = 0; o < cout; ++o) out[o] += xi * trow[o];
      }
      if (bptr) {
        const T* b = bptr + (group_offset + gi) * cout;
        for (std::size_t o = 0; o < cout; ++o) out[o] += b[o];
      }
    }
  }

  return g.record(
      std::move(y), {x, weight, bias},
      [x, weight, bias, group_offset, groups, batch, cin, cout](
          Graph<T>& gr, const Tensor<T>& dy) {
        const Tensor<T>& xv = gr.value(x);
        const Tensor<T>& wv = gr.value(weight);
        if (gr.requires_grad(x)) {
          Tensor<T>& dx = gr.grad_slot(x);
          for (std::size_t m = 0; m < batch; ++m) {
            for (std::size_t gi = 0; gi < groups; ++gi) {
              const T* d = dy.data() + m * groups * cout + gi * cout;
              const T* w = wv.data() + (group_offset + gi) * cout * cin;
              T* out = dx.data() + m * groups * cin + gi * cin;
              for (std::size_t o = 0; o < cout; ++o) {
                const T dyo = d[o];
                const T* wrow = w + o * cin;
                for (std::size_t i = 0; i < cin; ++i) out[i] += dyo * wrow[i];
              }
            }
          }
        }
        if (gr.requires_grad(weight)) {
          Tensor<T>& dw = gr.grad_slot(weight);
          for (std::size_t m = 0; m < batch; ++m) {
            for (std::size_t gi = 0; gi < groups; ++gi) {
              const T* d = dy.data() + m * groups * cout + gi * cout;
              const T* xin = xv.data() + m * groups * cin + gi * cin;
              T* w = dw.data() + (group_offset + gi) * cout * cin;
              for (std::size_t o = 0; o < cout; ++o) {
                const T dyo = d[o];
                T* wrow = w + o * cin;
                for (std::size_t i = 0; i < cin; ++i) wrow[i] += dyo * xin[i];
              }
            }
          }
        }
        if (bias.valid() && gr.requires_grad(bias)) {
          Tensor<T>& db = gr.grad_slot(bias);
          for (std::size_t m = 0; m < batch; ++m) {
            for (std::size_t gi = 0; gi < groups; ++gi) {
              const T* d = dy.data() + m * groups * cout + gi * cout;
              T* b = db.data() + (group_offset + gi) * cout;
              for (std::size_t o = 0; o < cout; ++o) b[o] += d[o];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t batch, groups, cin, cout, k, h, w, oh, ow, stride, pad, offset;
};

/// Output rows/cols [lo, hi) for which input index o*stride - pad + kk is in
/// range [0, extent).
inline void valid_range(std::size_t kk, std::size_t extent, std::size_t out,
                        std::size_t stride, std::size_t pad, std::size_t& lo,
                        std::size_t& hi) {
  // need o*stride + kk >= pad  and  o*stride + kk - pad < extent
  lo = kk >= pad ? 0 : (pad - kk + stride - 1) / stride;
  const std::size_t limit = extent + pad;  // o*stride + kk < limit
  hi = kk >= limit ? 0 : std::min(out, (limit - kk + stride - 1) / stride);
  if (hi < lo) hi = lo;
}

}  // namespace

template <typename T>
Var grouped_conv2d(Graph<T>& g, Var x, Var weight, Var bias,
                   const Conv2dOptions& opts) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(weight);
  expect_rank("grouped_conv2d", "input", xv.shape(), 4);
  expect_rank("grouped_conv2d", "weight", wv.shape(), 5);
  ConvGeometry geo{};
  geo.batch = xv.dim(0);
  const std::size_t k_total = wv.dim(0);
  geo.cout = wv.dim(1);
  geo.cin = wv.dim(2);
  geo.k = wv.dim(3);
  if (wv.dim(4) != geo.k) throw ShapeError("grouped_conv2d: kernel must be square");
  if (geo.k != 1 && geo.k != 3) {
    throw ShapeError("grouped_conv2d: kernel " + dims(3, geo.k) +
                     " must be 1x1 or 3x3");
  }
  if (geo.cin == 0 || geo.cout == 0) throw ShapeError("grouped_conv2d: zero-width weight");
  if (opts.stride == 0) throw DomainError("grouped_conv2d: stride must be positive");
  if (xv.dim(1) % geo.cin != 0) {
    throw ShapeError("grouped_conv2d: input channel " + dims(1, xv.dim(1)) +
                     " not divisible by weight c_in " + dims(2, geo.cin));
  }
  geo.groups = xv.dim(1) / geo.cin;
  geo.offset = opts.group_offset;
  if (geo.offset + geo.groups > k_total) {
    throw ShapeError("grouped_conv2d: input needs " + std::to_string(geo.groups) +
                     " weight groups from " + std::to_string(geo.offset) +
                     " but weight " + dims(0, k_total));
  }
  geo.h = xv.dim(2);
  geo.w = xv.dim(3);
  geo.stride = opts.stride;
  geo.pad = opts.padding;
  if (geo.h + 2 * geo.pad < geo.k || geo.w + 2 * geo.pad < geo.k) {
    throw ShapeError("grouped_conv2d: spatial extent smaller than kernel");
  }
  geo.oh = (geo.h + 2 * geo.pad - geo.k) / geo.stride + 1;
  geo.ow = (geo.w + 2 * geo.pad - geo.k) / geo.stride + 1;
  if (bias.valid() && g.value(bias).size() != k_total * geo.cout) {
    throw ShapeError("grouped_conv2d: bias does not match weight groups x c_out");
  }

  const ConvGeometry c = geo;
  const std::size_t kk2 = c.k * c.k;
  Tensor<T> y({c.batch, c.groups * c.cout, c.oh, c.ow});
  const T* bptr = bias.valid() ? g.value(bias).data() : nullptr;
  for (std::size_t m = 0; m < c.batch; ++m) {
    for (std::size_t gi = 0; gi < c.groups; ++gi) {
      for (std::size_t o = 0; o < c.cout; ++o) {
        T* out = y.data() + ((m * c.groups + gi) * c.cout + o) * c.oh * c.ow;
        const T* wo = wv.data() + ((c.offset + gi) * c.cout + o) * c.cin * kk2;
        for (std::size_t i = 0; i < c.cin; ++i) {
          const T* in = xv.data() + ((m * c.groups + gi) * c.cin + i) * c.h * c.w;
          for (std::size_t kh = 0; kh < c.k; ++kh) {
            std::size_t r0, r1;
            valid_range(kh, c.h, c.oh, c.stride, c.pad, r0, r1);
            for (std::size_t kw = 0; kw < c.k; ++kw) {
              std::size_t q0, q1;
              valid_range(kw, c.w, c.ow, c.stride, c.pad, q0, q1);
              const T wk = wo[i * kk2 + kh * c.k + kw];
              for (std::size_t r = r0; r < r1; ++r) {
                const T* irow = in + (r * c.stride + kh - c.pad) * c.w;
                T* orow = out + r * c.ow;
                for (std::size_t q = q0; q < q1; ++q) {
                  orow[q] += wk * irow[q * c.stride + kw - c.pad];
                }
              }
            }
          }
        }
        if (bptr) {
          const T b = bptr[(c.offset + gi) * c.cout + o];
          for (std::size_t p = 0; p < c.oh * c.ow; ++p) out[p] += b;
        }
      }
    }
  }

  return g.record(std::move(y), {x, weight, bias},
                  [x, weight, bias, c, kk2](Graph<T>& gr, const Tensor<T>& dy) {
    const Tensor<T>& xv = gr.value(x);
    const Tensor<T>& wv = gr.value(weight);
    const bool need_x = gr.requires_grad(x);
    const bool need_w = gr.requires_grad(weight);
    T* dx = need_x ? gr.grad_slot(x).data() : nullptr;
    T* dw = need_w ? gr.grad_slot(weight).data() : nullptr;
    for (std::size_t m = 0; m < c.batch; ++m) {
      for (std::size_t gi = 0; gi < c.groups; ++gi) {
        for (std::size_t o = 0; o < c.cout; ++o) {
          const T* d = dy.data() + ((m * c.groups + gi) * c.cout + o) * c.oh * c.ow;
          const std::size_t wbase = ((c.offset + gi) * c.cout + o) * c.cin * kk2;
          for (std::size_t i = 0; i < c.cin; ++i) {
            const std::size_t ibase = ((m * c.groups + gi) * c.cin + i) * c.h * c.w;
            for (std::size_t kh = 0; kh < c.k; ++kh) {
              std::size_t r0, r1;
              valid_range(kh, c.h, c.oh, c.stride, c.pad, r0, r1);
              for (std::size_t kw = 0; kw < c.k; ++kw) {
                std::size_t q0, q1;
                valid_range(kw, c.w, c.ow, c.stride, c.pad, q0, q1);
                const std::size_t widx = wbase + i * kk2 + kh * c.k + kw;
                const T wk = wv[widx];
                T acc{0};
                for (std::size_t r = r0; r < r1; ++r) {
                  const std::size_t irow = ibase + (r * c.stride + kh - c.pad) * c.w;
                  const T* drow = d + r * c.ow;
                  for (std::size_t q = q0; q < q1; ++q) {
                    const std::size_t idx = irow + q * c.stride + kw - c.pad;
                    if (dx) dx[idx] += wk * drow[q];
                    acc += drow[q] * xv[idx];
                  }
                }
                if (dw) dw[widx] += acc;
              }
            }
          }
        }
      }
    }
    if (bias.valid() && gr.requires_grad(bias)) {
      T* db = gr.grad_slot(bias).data();
      for (std::size_t m = 0; m < c.batch; ++m)
        for (std::size_t gi = 0; gi < c.groups; ++gi)
          for (std::size_t o = 0; o < c.cout; ++o) {
            const T* d = dy.data() + ((m * c.groups + gi) * c.cout + o) * c.oh * c.ow;
            T acc{0};
            for (std::size_t p = 0; p < c.oh * c.ow; ++p) acc += d[p];
            db[(c.offset + gi) * c.cout + o] += acc;
          }
    }
  });
}

// ---------------------------------------------------------------------------

template <typename T>
Var replicate_groups(Graph<T>& g, Var x, std::size_t groups, std::size_t factor) {
  const Tensor<T>& xv = g.value(x);
  if (xv.rank() < 2) throw ShapeError("replicate_groups: input must have rank >= 2");
  if (groups == 0 || xv.dim(1) % groups != 0) {
    throw ShapeError("replicate_groups: channel " + dims(1, xv.dim(1)) +
                     " not divisible by " + std::to_string(groups) + " groups");
  }
  if (factor == 0) throw DomainError("replicate_groups: factor must be positive");
  const std::size_t batch = xv.dim(0);
  const std::size_t block = xv.dim(1) / groups * inner_extent(xv.shape());
  Shape out_shape = xv.shape();
  out_shape[1] *= factor;
  Tensor<T> y(out_shape);
  for (std::size_t m = 0; m < batch; ++m) {
    const T* in = xv.data() + m * groups * block;
    T* out = y.data() + m * groups * factor * block;
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t r = 0; r < factor; ++r)
        std::copy_n(in + gi * block, block, out + (gi * factor + r) * block);
  }
  return g.record(std::move(y), {x},
                  [x, batch, groups, factor, block](Graph<T>& gr, const Tensor<T>& dy) {
    Tensor<T>& dx = gr.grad_slot(x);
    for (std::size_t m = 0; m < batch; ++m) {
      T* out = dx.data() + m * groups * block;
      const T* d = dy.data() + m * groups * factor * block;
      for (std::size_t gi = 0; gi < groups; ++gi)
        for (std::size_t r = 0; r < factor; ++r) {
          const T* src = d + (gi * factor + r) * block;
          T* dst = out + gi * block;
          for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
        }
    }
  });
}

// ---------------------------------------------------------------------------

template <typename T>
Var batch_norm(Graph<T>& g, Var x, Var gamma, Var beta, RunningStats<T>& stats,
               std::size_t channel_offset, BnMode mode, const BnOptions& opts) {
  const Tensor<T>& xv = g.value(x);
  if (xv.rank() < 2) throw ShapeError("batch_norm: input must have rank >= 2");
  const std::size_t batch = xv.dim(0), channels = xv.dim(1);
  const std::size_t inner = inner_extent(xv.shape());
  const std::size_t total = g.value(gamma).size();
  if (g.value(beta).size() != total || stats.mean.size() != total ||
      stats.var.size() != total) {
    throw ShapeError("batch_norm: scale, shift and running statistics disagree");
  }
  if (channel_offset + channels > total) {
    throw ShapeError("batch_norm: channels " + std::to_string(channel_offset) +
                     ".." + std::to_string(channel_offset + channels) +
                     " exceed parameter " + dims(0, total));
  }
  const std::size_t n = batch * inner;
  if (mode == BnMode::infer && !stats.recorded) {
    throw Error("batch_norm: inference requested before any running statistics were recorded");
  }
  if (mode == BnMode::train && n == 0) throw ShapeError("batch_norm: empty batch");

  const T eps = static_cast<T>(opts.eps);
  std::vector<T> mean(channels), invstd(channels);
  const T* gv = g.value(gamma).data() + channel_offset;
  const T* bv = g.value(beta).data() + channel_offset;
  auto at = [&](std::size_t m, std::size_t ch) {
    return (m * channels + ch) * inner;
  };
  if (mode == BnMode::train) {
    const T mom = static_cast<T>(opts.momentum);
    for (std::size_t ch = 0; ch < channels; ++ch) {
      T s{0};
      for (std::size_t m = 0; m < batch; ++m)
        for (std::size_t p = 0; p < inner; ++p) s += xv[at(m, ch) + p];
      const T mu = s / static_cast<T>(n);
      T v{0};
      for (std::size_t m = 0; m < batch; ++m)
        for (std::size_t p = 0; p < inner; ++p) {
          const T d = xv[at(m, ch) + p] - mu;
          v += d * d;
        }
      const T var = v / static_cast<T>(n);
      mean[ch] = mu;
      invstd[ch] = T{1} / std::sqrt(var + eps);
      const T unbiased = n > 1 ? v / static_cast<T>(n - 1) : var;
      T& rm = stats.mean[channel_offset + ch];
      T& rv = stats.var[channel_offset + ch];
      rm = (T{1} - mom) * rm + mom * mu;
      rv = (T{1} - mom) * rv + mom * unbiased;
    }
    stats.recorded = true;
  } else {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      mean[ch] = stats.mean[channel_offset + ch];
      invstd[ch] = T{1} / std::sqrt(stats.var[channel_offset + ch] + eps);
    }
  }

  Tensor<T> y(xv.shape());
  for (std::size_t m = 0; m < batch; ++m)
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const T mu = mean[ch], is = invstd[ch], ga = gv[ch], be = bv[ch];
      const T* in = xv.data() + at(m, ch);
      T* out = y.data() + at(m, ch);
      for (std::size_t p = 0; p < inner; ++p) out[p] = (in[p] - mu) * is * ga + be;
    }

  return g.record(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, mode, batch, channels, inner, n, channel_offset,
       mean = std::move(mean), invstd = std::move(invstd)](Graph<T>& gr,
                                                           const Tensor<T>& dy) {
        const Tensor<T>& xv = gr.value(x);
        const T* gv = gr.value(gamma).data() + channel_offset;
        auto at = [&](std::size_t m, std::size_t ch) {
          return (m * channels + ch) * inner;
        };
        const bool need_x = gr.requires_grad(x);
        T* dgamma = gr.requires_grad(gamma) ? gr.grad_slot(gamma).data() + channel_offset : nullptr;
        T* dbeta = gr.requires_grad(beta) ? gr.grad_slot(beta).data() + channel_offset : nullptr;
        T* dx = need_x ? gr.grad_slot(x).data() : nullptr;
        for (std::size_t ch = 0; ch < channels; ++ch) {
          const T mu = mean[ch], is = invstd[ch];
          T sum_dy{0}, sum_dy_xhat{0};
          for (std::size_t m = 0; m < batch; ++m)
            for (std::size_t p = 0; p < inner; ++p) {
              const std::size_t idx = at(m, ch) + p;
              sum_dy += dy[idx];
              sum_dy_xhat += dy[idx] * (xv[idx] - mu) * is;
            }
          if (dgamma) dgamma[ch] += sum_dy_xhat;
          if (dbeta) dbeta[ch] += sum_dy;
          if (!dx) continue;
          const T ga = gv[ch];
          if (mode == BnMode::train) {
            const T nn = static_cast<T>(n);
            const T coef = ga * is / nn;
            for (std::size_t m = 0; m < batch; ++m)
              for (std::size_t p = 0; p < inner; ++p) {
                const std::size_t idx = at(m, ch) + p;
                const T xhat = (xv[idx] - mu) * is;
                dx[idx] += coef * (nn * dy[idx] - sum_dy - xhat * sum_dy_xhat);
              }
          } else {
            for (std::size_t m = 0; m < batch; ++m)
              for (std::size_t p = 0; p < inner; ++p) {
                const std::size_t idx = at(m, ch) + p;
                dx[idx] += dy[idx] * ga * is;
              }
          }
        }
      });
}

// ---------------------------------------------------------------------------

template <typename T>
Var relu(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > T{0} ? xv[i] : T{0};
  return g.record(std::move(y), {x}, [x](Graph<T>& gr, const Tensor<T>& dy) {
    const Tensor<T>& xv = gr.value(x);
    Tensor<T>& dx = gr.grad_slot(x);
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > T{0}) dx[i] += dy[i];
  });
}

template <typename T>
Var global_avg_pool(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  expect_rank("global_avg_pool", "input", xv.shape(), 4);
  const std::size_t batch = xv.dim(0), ch = xv.dim(1);
  const std::size_t inner = xv.dim(2) * xv.dim(3);
  if (inner == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  Tensor<T> y({batch, ch});
  for (std::size_t r = 0; r < batch * ch; ++r) {
    T s{0};
    for (std::size_t p = 0; p < inner; ++p) s += xv[r * inner + p];
    y[r] = s / static_cast<T>(inner);
  }
  return g.record(std::move(y), {x},
                  [x, batch, ch, inner](Graph<T>& gr, const Tensor<T>& dy) {
    Tensor<T>& dx = gr.grad_slot(x);
    const T inv = T{1} / static_cast<T>(inner);
    for (std::size_t r = 0; r < batch * ch; ++r)
      for (std::size_t p = 0; p < inner; ++p) dx[r * inner + p] += dy[r] * inv;
  });
}

template <typename T>
Var take_group(Graph<T>& g, Var x, std::size_t group, std::size_t groups) {
  const Tensor<T>& xv = g.value(x);
  expect_rank("take_group", "input", xv.shape(), 2);
  if (groups == 0 || xv.dim(1) % groups != 0) {
    throw ShapeError("take_group: " + dims(1, xv.dim(1)) + " not divisible by " +
                     std::to_string(groups) + " groups");
  }
  if (group >= groups) throw DomainError("take_group: group index out of range");
  const std::size_t batch = xv.dim(0), c = xv.dim(1) / groups;
  Tensor<T> y({batch, c});
  for (std::size_t m = 0; m < batch; ++m)
    std::copy_n(xv.data() + m * groups * c + group * c, c, y.data() + m * c);
  return g.record(std::move(y), {x},
                  [x, batch, c, group, groups](Graph<T>& gr, const Tensor<T>& dy) {
    Tensor<T>& dx = gr.grad_slot(x);
    for (std::size_t m = 0; m < batch; ++m) {
      T* dst = dx.data() + m * groups * c + group * c;
      for (std::size_t l = 0; l < c; ++l) dst[l] += dy[m * c + l];
    }
  });
}

template <typename T>
Var group_prefix_mean(Graph<T>& g, Var x, std::size_t groups, std::size_t count) {
  Tensor<T> y = prefix_mean(g.value(x), groups, count);
  const std::size_t batch = g.value(x).dim(0);
  const std::size_t c = y.dim(1);
  return g.record(std::move(y), {x},
                  [x, batch, c, groups, count](Graph<T>& gr, const Tensor<T>& dy) {
    Tensor<T>& dx = gr.grad_slot(x);
    const T denom = static_cast<T>(count);
    for (std::size_t m = 0; m < batch; ++m)
      for (std::size_t k = 0; k < count; ++k) {
        T* dst = dx.data() + m * groups * c + k * c;
        for (std::size_t l = 0; l < c; ++l) dst[l] += dy[m * c + l] / denom;
      }
  });
}

// ---------------------------------------------------------------------------

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  if (av.shape() != bv.shape()) {
    throw ShapeError("add: " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  }
  Tensor<T> y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return g.record(std::move(y), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& dy) {
    if (gr.requires_grad(a)) accumulate(gr.grad_slot(a), dy);
    if (gr.requires_grad(b)) accumulate(gr.grad_slot(b), dy);
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  if (av.shape() != bv.shape()) {
    throw ShapeError("mul: " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  }
  Tensor<T> y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return g.record(std::move(y), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& dy) {
    const Tensor<T>& av = gr.value(a);
    const Tensor<T>& bv = gr.value(b);
    if (gr.requires_grad(a)) {
      Tensor<T>& da = gr.grad_slot(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (gr.requires_grad(b)) {
      Tensor<T>& db = gr.grad_slot(b);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, T factor) {
  Tensor<T> y = g.value(a);
  for (auto& v : y.values()) v *= factor;
  return g.record(std::move(y), {a}, [a, factor](Graph<T>& gr, const Tensor<T>& dy) {
    Tensor<T>& da = gr.grad_slot(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * factor;
  });
}

template <typename T>
Var sum(Graph<T>& g, Var a) {
  T s{0};
  for (T v : g.value(a).values()) s += v;
  return g.record(Tensor<T>({1}, {s}), {a}, [a](Graph<T>& gr, const Tensor<T>& dy) {
    Tensor<T>& da = gr.grad_slot(a);
    for (auto& v : da.values()) v += dy[0];
  });
}

template <typename T>
Var softmax(Graph<T>& g, Var logits, T temperature) {
  Tensor<T> y = softmax_stable(g.value(logits), temperature);
  const std::size_t rows = y.dim(0), n = y.dim(1);
  return g.record(y, {logits},
                  [logits, y, rows, n, temperature](Graph<T>& gr, const Tensor<T>& dy) {
    Tensor<T>& dz = gr.grad_slot(logits);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* p = y.data() + r * n;
      const T* d = dy.data() + r * n;
      T dot{0};
      for (std::size_t l = 0; l < n; ++l) dot += d[l] * p[l];
      for (std::size_t l = 0; l < n; ++l)
        dz[r * n + l] += p[l] * (d[l] - dot) / temperature;
    }
  });
}

template <typename T>
Var cross_entropy_hard(Graph<T>& g, Var logits, std::span<const int> labels) {
  const Tensor<T>& z = g.value(logits);
  expect_rank("cross_entropy_hard", "logits", z.shape(), 2);
  const std::size_t batch = z.dim(0), n = z.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy_hard: " + std::to_string(labels.size()) +
                     " labels for batch " + dims(0, batch));
  }
  if (batch == 0) throw ShapeError("cross_entropy_hard: empty batch");
  std::vector<int> lab(labels.begin(), labels.end());
  for (int l : lab) {
    if (l < 0 || static_cast<std::size_t>(l) >= n) {
      throw DomainError("cross_entropy_hard: label " + std::to_string(l) +
                        " outside 0.." + std::to_string(n - 1));
    }
  }
  T total{0};
  for (std::size_t m = 0; m < batch; ++m) {
    const T* row = z.data() + m * n;
    total += logsumexp_row(row, n, T{1}) - row[lab[m]];
  }
  total /= static_cast<T>(batch);
  return g.record(Tensor<T>({1}, {total}), {logits},
                  [logits, lab = std::move(lab), batch, n](Graph<T>& gr,
                                                           const Tensor<T>& dy) {
    const Tensor<T>& z = gr.value(logits);
    Tensor<T> p = softmax_stable(z, T{1});
    Tensor<T>& dz = gr.grad_slot(logits);
    const T coef = dy[0] / static_cast<T>(batch);
    for (std::size_t m = 0; m < batch; ++m)
      for (std::size_t l = 0; l < n; ++l) {
        const T target = static_cast<std::size_t>(lab[m]) == l ? T{1} : T{0};
        dz[m * n + l] += coef * (p[m * n + l] - target);
      }
  });
}

template <typename T>
Var cross_entropy_soft(Graph<T>& g, Var student_logits, Var teacher_probs,
                       T temperature, bool t2_scaling) {
  if (!(temperature > T{0})) {
    throw DomainError("cross_entropy_soft: temperature must be positive");
  }
  const Tensor<T>& z = g.value(student_logits);
  const Tensor<T>& p = g.value(teacher_probs);
  expect_rank("cross_entropy_soft", "student logits", z.shape(), 2);
  if (p.shape() != z.shape()) {
    throw ShapeError("cross_entropy_soft: teacher " + to_string(p.shape()) +
                     " vs student " + to_string(z.shape()));
  }
  const std::size_t batch = z.dim(0), n = z.dim(1);
  if (batch == 0) throw ShapeError("cross_entropy_soft: empty batch");
  for (std::size_t m = 0; m < batch; ++m) {
    T s{0};
    for (std::size_t l = 0; l < n; ++l) {
      const T v = p[m * n + l];
      if (v < T{0} || !std::isfinite(v)) {
        throw DomainError("cross_entropy_soft: teacher row " + std::to_string(m) +
                          " has a negative or non-finite entry");
      }
      s += v;
    }
    if (std::abs(s - T{1}) > T(1e-5)) {
      throw DomainError("cross_entropy_soft: teacher row " + std::to_string(m) +
                        " sums to " + std::to_string(s) + ", not 1");
    }
  }
  Tensor<T> teacher = p;
  const T inv_t = T{1} / temperature;
  const T gain = t2_scaling ? temperature * temperature : T{1};
  T total{0};
  for (std::size_t m = 0; m < batch; ++m) {
    const T* row = z.data() + m * n;
    const T lse = logsumexp_row(row, n, inv_t);
    T acc{0};
    for (std::size_t l = 0; l < n; ++l) acc -= teacher[m * n + l] * (row[l] * inv_t - lse);
    total += acc;
  }
  total = gain * total / static_cast<T>(batch);
  return g.record(Tensor<T>({1}, {total}), {student_logits},
                  [student_logits, teacher = std::move(teacher), batch, temperature,
                   gain](Graph<T>& gr, const Tensor<T>& dy) {
    const Tensor<T>& z = gr.value(student_logits);
    Tensor<T> q = softmax_stable(z, temperature);
    Tensor<T>& dz = gr.grad_slot(student_logits);
    const T coef = dy[0] * gain / (static_cast<T>(batch) * temperature);
    for (std::size_t i = 0; i < q.size(); ++i) dz[i] += coef * (q[i] - teacher[i]);
  });
}

// ---------------------------------------------------------------------------

#define HNE_INSTANTIATE_OPS(T)                                                  \
  template Tensor<T> softmax_stable(const Tensor<T>&, T);                      \
  template Tensor<T> prefix_mean(const Tensor<T>&, std::size_t, std::size_t);  \
  template Var grouped_linear(Graph<T>&, Var, Var, Var, std::size_t);          \
  template Var grouped_conv2d(Graph<T>&, Var, Var, Var, const Conv2dOptions&); \
  template Var replicate_groups(Graph<T>&, Var, std::size_t, std::size_t);     \
  template Var batch_norm(Graph<T>&, Var, Var, Var, RunningStats<T>&,          \
                          std::size_t, BnMode, const BnOptions&);              \
  template Var relu(Graph<T>&, Var);                                           \
  template Var global_avg_pool(Graph<T>&, Var);                                \
  template Var take_group(Graph<T>&, Var, std::size_t, std::size_t);           \
  template Var group_prefix_mean(Graph<T>&, Var, std::size_t, std::size_t);    \
  template Var add(Graph<T>&, Var, Var);                                       \
  template Var mul(Graph<T>&, Var, Var);                                       \
  template Var scale(Graph<T>&, Var, T);                                       \
  template Var sum(Graph<T>&, Var);                                            \
  template Var softmax(Graph<T>&, Var, T);                                     \
  template Var cross_entropy_hard(Graph<T>&, Var, std::span<const int>);       \
  template Var cross_entropy_soft(Graph<T>&, Var, Var, T, bool);

HNE_INSTANTIATE_OPS(float)
HNE_INSTANTIATE_OPS(double)

}  // namespace hne
