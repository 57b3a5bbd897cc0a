// Copyright (c) 2026 The s2d Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "s2d/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace s2d {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::string Shape::str() const {
  std::ostringstream os;
  for (size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << 'x';
    os << dims_[i];
  }
  if (dims_.empty()) os << "scalar";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(impl->shape.numel()), 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.vec().begin(), t.vec().end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (static_cast<int64_t>(values.size()) != shape.numel())
    fail("tensor data length " + std::to_string(values.size()) + " does not match shape " + shape.str());
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from(Shape{1}, {value}, requires_grad);
}

Tensor Tensor::clone() const {
  Tensor t = zeros(impl_->shape, impl_->requires_grad);
  t.vec() = impl_->data;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : impl_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tape::backward(Tensor loss) {
  if (!loss.defined() || loss.numel() != 1) fail("backward requires a scalar loss");
  if (!loss.requires_grad() || nodes_.empty())
    fail("backward on a tensor detached from the tape");
  loss.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  reset();
}

namespace {

Tensor make_out(Shape shape, bool track) {
  Tensor t = Tensor::zeros(std::move(shape), track);
  return t;
}

struct ConvDims {
  int64_t n, c, h, w, o, kh, kw, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int padding, bool depthwise) {
  if (x.shape().rank() != 4) fail("conv2d input must be rank 4, got " + x.shape().str());
  if (w.shape().rank() != 4) fail("conv2d weight must be rank 4, got " + w.shape().str());
  ConvDims d;
  d.n = x.shape()[0];
  d.c = x.shape()[1];
  d.h = x.shape()[2];
  d.w = x.shape()[3];
  d.o = w.shape()[0];
  d.kh = w.shape()[2];
  d.kw = w.shape()[3];
  if (depthwise) {
    if (w.shape()[0] != d.c || w.shape()[1] != 1)
      fail("dwconv2d weight must be [C,1,kh,kw]; got " + w.shape().str() + " for C=" + std::to_string(d.c));
  } else if (w.shape()[1] != d.c) {
    fail("conv2d channel mismatch: input C=" + std::to_string(d.c) + ", weight C=" +
         std::to_string(w.shape()[1]));
  }
  // floor convention on the output size; reject only empty outputs
  int64_t num_h = d.h + 2 * padding - d.kh;
  int64_t num_w = d.w + 2 * padding - d.kw;
  if (num_h < 0 || num_w < 0)
    fail("conv2d output size is not positive for input " + x.shape().str() + " kernel " +
         std::to_string(d.kh) + " stride " + std::to_string(stride) + " padding " +
         std::to_string(padding));
  d.oh = num_h / stride + 1;
  d.ow = num_w / stride + 1;
  return d;
}

// col layout: row (c,ki,kj), column (n,oh,ow); zero padding.
void im2col(const double* x, const ConvDims& d, int stride, int padding, double* col) {
  const int64_t cols = d.n * d.oh * d.ow;
  for (int64_t c = 0; c < d.c; ++c) {
    for (int64_t ki = 0; ki < d.kh; ++ki) {
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        double* row = col + ((c * d.kh + ki) * d.kw + kj) * cols;
        for (int64_t n = 0; n < d.n; ++n) {
          const double* xn = x + (n * d.c + c) * d.h * d.w;
          double* out = row + n * d.oh * d.ow;
          for (int64_t oh = 0; oh < d.oh; ++oh) {
            int64_t ih = oh * stride - padding + ki;
            if (ih < 0 || ih >= d.h) {
              std::memset(out + oh * d.ow, 0, sizeof(double) * static_cast<size_t>(d.ow));
              continue;
            }
            const double* xrow = xn + ih * d.w;
            for (int64_t ow = 0; ow < d.ow; ++ow) {
              int64_t iw = ow * stride - padding + kj;
              out[oh * d.ow + ow] = (iw >= 0 && iw < d.w) ? xrow[iw] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im_acc(const double* col, const ConvDims& d, int stride, int padding, double* dx) {
  const int64_t cols = d.n * d.oh * d.ow;
  for (int64_t c = 0; c < d.c; ++c) {
    for (int64_t ki = 0; ki < d.kh; ++ki) {
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        const double* row = col + ((c * d.kh + ki) * d.kw + kj) * cols;
        for (int64_t n = 0; n < d.n; ++n) {
          double* dxn = dx + (n * d.c + c) * d.h * d.w;
          const double* in = row + n * d.oh * d.ow;
          for (int64_t oh = 0; oh < d.oh; ++oh) {
            int64_t ih = oh * stride - padding + ki;
            if (ih < 0 || ih >= d.h) continue;
            for (int64_t ow = 0; ow < d.ow; ++ow) {
              int64_t iw = ow * stride - padding + kj;
              if (iw >= 0 && iw < d.w) dxn[ih * d.w + iw] += in[oh * d.ow + ow];
            }
          }
        }
      }
    }
  }
}

// [O, n*OH*OW] (gemm layout) <-> [N,O,OH,OW] (tensor layout)
void scatter_rows_to_nchw(const double* mat, const ConvDims& d, double* out) {
  const int64_t hw = d.oh * d.ow;
  const int64_t cols = d.n * hw;
  for (int64_t o = 0; o < d.o; ++o)
    for (int64_t n = 0; n < d.n; ++n)
      std::memcpy(out + (n * d.o + o) * hw, mat + o * cols + n * hw,
                  sizeof(double) * static_cast<size_t>(hw));
}

void gather_nchw_to_rows(const double* t, const ConvDims& d, double* mat) {
  const int64_t hw = d.oh * d.ow;
  const int64_t cols = d.n * hw;
  for (int64_t o = 0; o < d.o; ++o)
    for (int64_t n = 0; n < d.n; ++n)
      std::memcpy(mat + o * cols + n * hw, t + (n * d.o + o) * hw,
                  sizeof(double) * static_cast<size_t>(hw));
}

}  // namespace

Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w, int stride, int padding) {
  ConvDims d = conv_dims(x, w, stride, padding, false);
  const int64_t krows = d.c * d.kh * d.kw;
  const int64_t cols = d.n * d.oh * d.ow;

  auto col = std::make_shared<std::vector<double>>(static_cast<size_t>(krows * cols));
  im2col(x.data(), d, stride, padding, col->data());

  std::vector<double> out_mat(static_cast<size_t>(d.o * cols));
  MapMat(out_mat.data(), d.o, cols).noalias() =
      CMapMat(w.data(), d.o, krows) * CMapMat(col->data(), krows, cols);

  bool track = taped(tape, {&x, &w});
  Tensor out = make_out(Shape{d.n, d.o, d.oh, d.ow}, track);
  scatter_rows_to_nchw(out_mat.data(), d, out.data());

  if (track) {
    Tensor xc = x, wc = w, oc = out;
    tape->record([xc, wc, oc, col, d, stride, padding]() mutable {
      const int64_t krows = d.c * d.kh * d.kw;
      const int64_t cols = d.n * d.oh * d.ow;
      std::vector<double> dout_mat(static_cast<size_t>(d.o * cols));
      gather_nchw_to_rows(oc.grad().data(), d, dout_mat.data());
      if (wc.requires_grad()) {
        MapMat(wc.grad().data(), d.o, krows).noalias() +=
            CMapMat(dout_mat.data(), d.o, cols) * CMapMat(col->data(), krows, cols).transpose();
      }
      if (xc.requires_grad()) {
        std::vector<double> dcol(static_cast<size_t>(krows * cols));
        MapMat(dcol.data(), krows, cols).noalias() =
            CMapMat(wc.data(), d.o, krows).transpose() * CMapMat(dout_mat.data(), d.o, cols);
        col2im_acc(dcol.data(), d, stride, padding, xc.grad().data());
      }
    });
  }
  return out;
}

Tensor dwconv2d(Tape* tape, const Tensor& x, const Tensor& w, int stride, int padding) {
  ConvDims d = conv_dims(x, w, stride, padding, true);
  bool track = taped(tape, {&x, &w});
  Tensor out = make_out(Shape{d.n, d.c, d.oh, d.ow}, track);

  const double* xp = x.data();
  const double* wp = w.data();
  double* op = out.data();
  for (int64_t n = 0; n < d.n; ++n) {
    for (int64_t c = 0; c < d.c; ++c) {
      const double* xc = xp + (n * d.c + c) * d.h * d.w;
      const double* wc = wp + c * d.kh * d.kw;
      double* oc = op + (n * d.c + c) * d.oh * d.ow;
      for (int64_t oh = 0; oh < d.oh; ++oh) {
        for (int64_t ow = 0; ow < d.ow; ++ow) {
          double acc = 0.0;
          for (int64_t ki = 0; ki < d.kh; ++ki) {
            int64_t ih = oh * stride - padding + ki;
            if (ih < 0 || ih >= d.h) continue;
            for (int64_t kj = 0; kj < d.kw; ++kj) {
              int64_t iw = ow * stride - padding + kj;
              if (iw < 0 || iw >= d.w) continue;
              acc += xc[ih * d.w + iw] * wc[ki * d.kw + kj];
            }
          }
          oc[oh * d.ow + ow] = acc;
        }
      }
    }
  }

  if (track) {
    Tensor xc = x, wc = w, oc = out;
    tape->record([xc, wc, oc, d, stride, padding]() mutable {
      const double* dout = oc.grad().data();
      double* dx = xc.requires_grad() ? xc.grad().data() : nullptr;
      double* dw = wc.requires_grad() ? wc.grad().data() : nullptr;
      const double* xp = xc.data();
      const double* wp = wc.data();
      for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t c = 0; c < d.c; ++c) {
          const double* xcc = xp + (n * d.c + c) * d.h * d.w;
          const double* wcc = wp + c * d.kh * d.kw;
          const double* doc = dout + (n * d.c + c) * d.oh * d.ow;
          for (int64_t oh = 0; oh < d.oh; ++oh) {
            for (int64_t ow = 0; ow < d.ow; ++ow) {
              double g = doc[oh * d.ow + ow];
              if (g == 0.0) continue;
              for (int64_t ki = 0; ki < d.kh; ++ki) {
                int64_t ih = oh * stride - padding + ki;
                if (ih < 0 || ih >= d.h) continue;
                for (int64_t kj = 0; kj < d.kw; ++kj) {
                  int64_t iw = ow * stride - padding + kj;
                  if (iw < 0 || iw >= d.w) continue;
                  if (dw) dw[c * d.kh * d.kw + ki * d.kw + kj] += g * xcc[ih * d.w + iw];
                  if (dx) dx[(n * d.c + c) * d.h * d.w + ih * d.w + iw] += g * wcc[ki * d.kw + kj];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor batch_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training, double momentum,
                  double eps) {
  if (x.shape().rank() != 4) fail("batch_norm input must be rank 4, got " + x.shape().str());
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c || running_var.numel() != c)
    fail("batch_norm parameter length does not match channel count " + std::to_string(c));
  const int64_t m = n * h * w;
  const int64_t hw = h * w;

  std::vector<double> mean(static_cast<size_t>(c), 0.0), invstd(static_cast<size_t>(c), 0.0);
  if (training) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) s += p[j];
      }
      mean[static_cast<size_t>(ch)] = s / static_cast<double>(m);
    }
    for (int64_t ch = 0; ch < c; ++ch) {
      double mu = mean[static_cast<size_t>(ch)], s = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          double dlt = p[j] - mu;
          s += dlt * dlt;
        }
      }
      double var = s / static_cast<double>(m);
      invstd[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var + eps);
      running_mean.data()[ch] += momentum * (mu - running_mean.data()[ch]);
      running_var.data()[ch] += momentum * (var - running_var.data()[ch]);
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[static_cast<size_t>(ch)] = running_mean.data()[ch];
      invstd[static_cast<size_t>(ch)] = 1.0 / std::sqrt(running_var.data()[ch] + eps);
    }
  }

  bool track = taped(tape, {&x, &gamma, &beta});
  Tensor out = make_out(x.shape(), track);
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* p = x.data() + (i * c + ch) * hw;
      double* xh = xhat->data() + (i * c + ch) * hw;
      double* o = out.data() + (i * c + ch) * hw;
      double mu = mean[static_cast<size_t>(ch)], is = invstd[static_cast<size_t>(ch)];
      double g = gamma.data()[ch], b = beta.data()[ch];
      for (int64_t j = 0; j < hw; ++j) {
        xh[j] = (p[j] - mu) * is;
        o[j] = g * xh[j] + b;
      }
    }
  }

  if (track) {
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    auto istd = std::make_shared<std::vector<double>>(invstd);
    tape->record([xc, gc, bc, oc, xhat, istd, n, c, hw, m, training]() mutable {
      const double* dy = oc.grad().data();
      for (int64_t ch = 0; ch < c; ++ch) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int64_t i = 0; i < n; ++i) {
          const double* dyp = dy + (i * c + ch) * hw;
          const double* xh = xhat->data() + (i * c + ch) * hw;
          for (int64_t j = 0; j < hw; ++j) {
            sum_dy += dyp[j];
            sum_dy_xhat += dyp[j] * xh[j];
          }
        }
        if (gc.requires_grad()) gc.grad()[static_cast<size_t>(ch)] += sum_dy_xhat;
        if (bc.requires_grad()) bc.grad()[static_cast<size_t>(ch)] += sum_dy;
        if (xc.requires_grad()) {
          double g = gc.data()[ch], is = (*istd)[static_cast<size_t>(ch)];
          double inv_m = 1.0 / static_cast<double>(m);
          for (int64_t i = 0; i < n; ++i) {
            const double* dyp = dy + (i * c + ch) * hw;
            const double* xh = xhat->data() + (i * c + ch) * hw;
            double* dx = xc.grad().data() + (i * c + ch) * hw;
            for (int64_t j = 0; j < hw; ++j) {
              if (training)
                dx[j] += g * is * (dyp[j] - sum_dy * inv_m - xh[j] * sum_dy_xhat * inv_m);
              else
                dx[j] += g * is * dyp[j];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(Tape* tape, const Tensor& x) {
  bool track = taped(tape, {&x});
  Tensor out = make_out(x.shape(), track);
  const double* p = x.data();
  double* o = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) o[i] = p[i] > 0.0 ? p[i] : 0.0;
  if (track) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc, n]() mutable {
      const double* g = oc.grad().data();
      const double* p = xc.data();
      double* dx = xc.grad().data();
      for (int64_t i = 0; i < n; ++i)
        if (p[i] > 0.0) dx[i] += g[i];
    });
  }
  return out;
}

Tensor max_pool(Tape* tape, const Tensor& x, int kernel, int stride) {
  if (x.shape().rank() != 4) fail("max_pool input must be rank 4, got " + x.shape().str());
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if ((h - kernel) % stride != 0 || (w - kernel) % stride != 0 || h < kernel || w < kernel)
    fail("max_pool output size is not an integer for input " + x.shape().str());
  const int64_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  bool track = taped(tape, {&x});
  Tensor out = make_out(Shape{n, c, oh, ow}, track);
  auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
  const double* p = x.data();
  double* o = out.data();
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const double* xp = p + nc * h * w;
    double* op = o + nc * oh * ow;
    int64_t* ap = arg->data() + nc * oh * ow;
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) {
        int64_t best = (i * stride) * w + (j * stride);
        double bv = xp[best];
        for (int64_t ki = 0; ki < kernel; ++ki)
          for (int64_t kj = 0; kj < kernel; ++kj) {
            int64_t idx = (i * stride + ki) * w + (j * stride + kj);
            if (xp[idx] > bv) {
              bv = xp[idx];
              best = idx;
            }
          }
        op[i * ow + j] = bv;
        ap[i * ow + j] = nc * h * w + best;
      }
    }
  }
  if (track) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc, arg]() mutable {
      const double* g = oc.grad().data();
      double* dx = xc.grad().data();
      const int64_t m = oc.numel();
      for (int64_t i = 0; i < m; ++i) dx[(*arg)[static_cast<size_t>(i)]] += g[i];
    });
  }
  return out;
}

Tensor global_avg_pool(Tape* tape, const Tensor& x) {
  if (x.shape().rank() != 4) fail("global_avg_pool input must be rank 4, got " + x.shape().str());
  const int64_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  bool track = taped(tape, {&x});
  Tensor out = make_out(Shape{n, c}, track);
  for (int64_t i = 0; i < n * c; ++i) {
    const double* p = x.data() + i * hw;
    double s = 0.0;
    for (int64_t j = 0; j < hw; ++j) s += p[j];
    out.data()[i] = s / static_cast<double>(hw);
  }
  if (track) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc, n, c, hw]() mutable {
      const double* g = oc.grad().data();
      double* dx = xc.grad().data();
      double inv = 1.0 / static_cast<double>(hw);
      for (int64_t i = 0; i < n * c; ++i)
        for (int64_t j = 0; j < hw; ++j) dx[i * hw + j] += g[i] * inv;
    });
  }
  return out;
}

Tensor linear(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().rank() != 2 || w.shape().rank() != 2)
    fail("linear expects rank-2 input and weight");
  const int64_t n = x.shape()[0], in = x.shape()[1], out_f = w.shape()[0];
  if (w.shape()[1] != in)
    fail("linear shape mismatch: input " + x.shape().str() + " weight " + w.shape().str());
  if (b.defined() && b.numel() != out_f) fail("linear bias length mismatch");
  bool track = b.defined() ? taped(tape, {&x, &w, &b}) : taped(tape, {&x, &w});
  Tensor out = make_out(Shape{n, out_f}, track);
  MapMat(out.data(), n, out_f).noalias() =
      CMapMat(x.data(), n, in) * CMapMat(w.data(), out_f, in).transpose();
  if (b.defined()) {
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < out_f; ++j) out.data()[i * out_f + j] += b.data()[j];
  }
  if (track) {
    Tensor xc = x, wc = w, bc = b, oc = out;
    tape->record([xc, wc, bc, oc, n, in, out_f]() mutable {
      CMapMat dy(oc.grad().data(), n, out_f);
      if (wc.requires_grad())
        MapMat(wc.grad().data(), out_f, in).noalias() +=
            dy.transpose() * CMapMat(xc.data(), n, in);
      if (bc.defined() && bc.requires_grad())
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < out_f; ++j) bc.grad()[static_cast<size_t>(j)] += dy(i, j);
      if (xc.requires_grad())
        MapMat(xc.grad().data(), n, in).noalias() += dy * CMapMat(wc.data(), out_f, in);
    });
  }
  return out;
}

Tensor channel_concat(Tape* tape, std::span<const Tensor> parts) {
  if (parts.empty()) fail("channel_concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  int64_t total_c = 0;
  bool track = false;
  for (const Tensor& t : parts) {
    if (t.shape().rank() != s0.rank()) fail("channel_concat rank mismatch");
    for (int i = 0; i < s0.rank(); ++i)
      if (i != 1 && t.shape()[i] != s0[i])
        fail("channel_concat non-channel dimension mismatch: " + t.shape().str() + " vs " + s0.str());
    total_c += t.shape()[1];
    if (tape && t.requires_grad()) track = true;
  }
  std::vector<int64_t> dims = s0.dims();
  dims[1] = total_c;
  Tensor out = make_out(Shape(dims), track);

  const int64_t n = s0[0];
  int64_t inner = 1;
  for (int i = 2; i < s0.rank(); ++i) inner *= s0[i];

  int64_t coff = 0;
  for (const Tensor& t : parts) {
    const int64_t tc = t.shape()[1];
    for (int64_t b = 0; b < n; ++b)
      std::memcpy(out.data() + (b * total_c + coff) * inner, t.data() + b * tc * inner,
                  sizeof(double) * static_cast<size_t>(tc * inner));
    coff += tc;
  }

  if (track) {
    std::vector<Tensor> held(parts.begin(), parts.end());
    Tensor oc = out;
    tape->record([held, oc, n, inner, total_c]() mutable {
      const double* g = oc.grad().data();
      int64_t coff = 0;
      for (Tensor& t : held) {
        const int64_t tc = t.shape()[1];
        if (t.requires_grad()) {
          double* dx = t.grad().data();
          for (int64_t b = 0; b < n; ++b) {
            const double* src = g + (b * total_c + coff) * inner;
            double* dst = dx + b * tc * inner;
            for (int64_t i = 0; i < tc * inner; ++i) dst[i] += src[i];
          }
        }
        coff += tc;
      }
    });
  }
  return out;
}

Tensor channel_slice(Tape* tape, const Tensor& x, int64_t begin, int64_t end) {
  if (x.shape().rank() < 2) fail("channel_slice input must have a channel dimension");
  const int64_t c = x.shape()[1];
  if (begin < 0 || end > c || begin >= end) fail("channel_slice range out of bounds");
  std::vector<int64_t> dims = x.shape().dims();
  dims[1] = end - begin;
  const int64_t n = x.shape()[0];
  int64_t inner = 1;
  for (int i = 2; i < x.shape().rank(); ++i) inner *= x.shape()[i];
  bool track = taped(tape, {&x});
  Tensor out = make_out(Shape(dims), track);
  for (int64_t b = 0; b < n; ++b)
    std::memcpy(out.data() + b * (end - begin) * inner, x.data() + (b * c + begin) * inner,
                sizeof(double) * static_cast<size_t>((end - begin) * inner));
  if (track) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc, begin, end, c, n, inner]() mutable {
      const double* g = oc.grad().data();
      double* dx = xc.grad().data();
      for (int64_t b = 0; b < n; ++b) {
        const double* src = g + b * (end - begin) * inner;
        double* dst = dx + (b * c + begin) * inner;
        for (int64_t i = 0; i < (end - begin) * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    fail("add shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  bool track = taped(tape, {&a, &b});
  Tensor out = make_out(a.shape(), track);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (track) {
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, n]() mutable {
      const double* g = oc.grad().data();
      if (ac.requires_grad()) {
        double* da = ac.grad().data();
        for (int64_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (bc.requires_grad()) {
        double* db = bc.grad().data();
        for (int64_t i = 0; i < n; ++i) db[i] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    fail("mul shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  bool track = taped(tape, {&a, &b});
  Tensor out = make_out(a.shape(), track);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (track) {
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, n]() mutable {
      const double* g = oc.grad().data();
      if (ac.requires_grad()) {
        double* da = ac.grad().data();
        for (int64_t i = 0; i < n; ++i) da[i] += g[i] * bc.data()[i];
      }
      if (bc.requires_grad()) {
        double* db = bc.grad().data();
        for (int64_t i = 0; i < n; ++i) db[i] += g[i] * ac.data()[i];
      }
    });
  }
  return out;
}

Tensor affine(Tape* tape, const Tensor& x, double scale, double shift) {
  bool track = taped(tape, {&x});
  Tensor out = make_out(x.shape(), track);
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = scale * x.data()[i] + shift;
  if (track) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc, scale, n]() mutable {
      const double* g = oc.grad().data();
      double* dx = xc.grad().data();
      for (int64_t i = 0; i < n; ++i) dx[i] += scale * g[i];
    });
  }
  return out;
}

Tensor sigmoid(Tape* tape, const Tensor& x) {
  bool track = taped(tape, {&x});
  Tensor out = make_out(x.shape(), track);
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
  if (track) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc, n]() mutable {
      const double* g = oc.grad().data();
      const double* y = oc.data();
      double* dx = xc.grad().data();
      for (int64_t i = 0; i < n; ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
  }
  return out;
}

Tensor tanh_op(Tape* tape, const Tensor& x) {
  bool track = taped(tape, {&x});
  Tensor out = make_out(x.shape(), track);
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::tanh(x.data()[i]);
  if (track) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc, n]() mutable {
      const double* g = oc.grad().data();
      const double* y = oc.data();
      double* dx = xc.grad().data();
      for (int64_t i = 0; i < n; ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
    });
  }
  return out;
}

Tensor exp_op(Tape* tape, const Tensor& x) {
  bool track = taped(tape, {&x});
  Tensor out = make_out(x.shape(), track);
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::exp(x.data()[i]);
  if (track) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc, n]() mutable {
      const double* g = oc.grad().data();
      const double* y = oc.data();
      double* dx = xc.grad().data();
      for (int64_t i = 0; i < n; ++i) dx[i] += g[i] * y[i];
    });
  }
  return out;
}

Tensor clamp(Tape* tape, const Tensor& x, double lo, double hi) {
  bool track = taped(tape, {&x});
  Tensor out = make_out(x.shape(), track);
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::min(std::max(x.data()[i], lo), hi);
  if (track) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc, lo, hi, n]() mutable {
      const double* g = oc.grad().data();
      const double* p = xc.data();
      double* dx = xc.grad().data();
      for (int64_t i = 0; i < n; ++i)
        if (p[i] > lo && p[i] < hi) dx[i] += g[i];
    });
  }
  return out;
}

Tensor min2(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) fail("min2 shape mismatch");
  bool track = taped(tape, {&a, &b});
  Tensor out = make_out(a.shape(), track);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::min(a.data()[i], b.data()[i]);
  if (track) {
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, n]() mutable {
      const double* g = oc.grad().data();
      for (int64_t i = 0; i < n; ++i) {
        // ties route to the first argument
        bool take_a = ac.data()[i] <= bc.data()[i];
        if (take_a && ac.requires_grad()) ac.grad()[static_cast<size_t>(i)] += g[i];
        if (!take_a && bc.requires_grad()) bc.grad()[static_cast<size_t>(i)] += g[i];
      }
    });
  }
  return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
  bool track = taped(tape, {&x});
  Tensor out = make_out(Shape{1}, track);
  double s = 0.0;
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) s += x.data()[i];
  out.data()[0] = s;
  if (track) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc, n]() mutable {
      double g = oc.grad()[0];
      double* dx = xc.grad().data();
      for (int64_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return out;
}

Tensor mean_all(Tape* tape, const Tensor& x) {
  Tensor s = sum(tape, x);
  return affine(tape, s, 1.0 / static_cast<double>(x.numel()), 0.0);
}

Tensor reshape(Tape* tape, const Tensor& x, Shape shape) {
  if (shape.numel() != x.numel())
    fail("reshape from " + x.shape().str() + " to " + shape.str() + " changes element count");
  bool track = taped(tape, {&x});
  Tensor out = make_out(std::move(shape), track);
  out.vec() = x.vec();
  if (track) {
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      const double* g = oc.grad().data();
      double* dx = xc.grad().data();
      const int64_t n = xc.numel();
      for (int64_t i = 0; i < n; ++i) dx[i] += g[i];
    });
  }
  return out;
}

Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape().rank() != 2) fail("softmax_cross_entropy expects [N,K] logits");
  const int64_t n = logits.shape()[0], k = logits.shape()[1];
  if (static_cast<int64_t>(labels.size()) != n) fail("label count does not match batch size");
  for (int lbl : labels)
    if (lbl < 0 || lbl >= k) fail("label " + std::to_string(lbl) + " out of range [0," + std::to_string(k) + ")");

  bool track = taped(tape, {&logits});
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n * k));
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    double m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
    double lse = std::log(z) + m;
    loss += lse - row[labels[static_cast<size_t>(i)]];
    for (int64_t j = 0; j < k; ++j)
      (*probs)[static_cast<size_t>(i * k + j)] = std::exp(row[j] - lse);
  }
  Tensor out = make_out(Shape{1}, track);
  out.data()[0] = loss / static_cast<double>(n);

  if (track) {
    Tensor lc = logits, oc = out;
    auto lbl = std::make_shared<std::vector<int>>(labels);
    tape->record([lc, oc, probs, lbl, n, k]() mutable {
      double g = oc.grad()[0] / static_cast<double>(n);
      double* dl = lc.grad().data();
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < k; ++j) {
          double p = (*probs)[static_cast<size_t>(i * k + j)];
          double y = (j == (*lbl)[static_cast<size_t>(i)]) ? 1.0 : 0.0;
          dl[i * k + j] += g * (p - y);
        }
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  if (logits.shape().rank() != 2) fail("softmax expects [N,K]");
  const int64_t n = logits.shape()[0], k = logits.shape()[1];
  Tensor out = Tensor::zeros(logits.shape());
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    double* o = out.data() + i * k;
    double m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
    for (int64_t j = 0; j < k; ++j) o[j] = std::exp(row[j] - m) / z;
  }
  return out;
}

Tensor embed_row(Tape* tape, const Tensor& table, int64_t row) {
  if (table.shape().rank() != 2) fail("embed_row expects a [V,E] table");
  const int64_t v = table.shape()[0], e = table.shape()[1];
  if (row < 0 || row >= v) fail("embedding row " + std::to_string(row) + " out of range");
  bool track = taped(tape, {&table});
  Tensor out = make_out(Shape{1, e}, track);
  std::memcpy(out.data(), table.data() + row * e, sizeof(double) * static_cast<size_t>(e));
  if (track) {
    Tensor tc = table, oc = out;
    tape->record([tc, oc, row, e]() mutable {
      const double* g = oc.grad().data();
      double* dt = tc.grad().data() + row * e;
      for (int64_t i = 0; i < e; ++i) dt[i] += g[i];
    });
  }
  return out;
}

namespace {

// softmax probabilities of a flat logits vector
std::vector<double> flat_softmax(const Tensor& logits) {
  const int64_t n = logits.numel();
  std::vector<double> p(static_cast<size_t>(n));
  const double* z = logits.data();
  double m = z[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, z[i]);
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += std::exp(z[i] - m);
  for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = std::exp(z[i] - m) / s;
  return p;
}

}  // namespace

Tensor categorical_log_prob(Tape* tape, const Tensor& logits, int index) {
  const int64_t n = logits.numel();
  if (index < 0 || index >= n) fail("categorical index out of range");
  auto p = std::make_shared<std::vector<double>>(flat_softmax(logits));
  bool track = taped(tape, {&logits});
  Tensor out = make_out(Shape{1}, track);
  out.data()[0] = std::log((*p)[static_cast<size_t>(index)]);
  if (track) {
    Tensor lc = logits, oc = out;
    tape->record([lc, oc, p, index, n]() mutable {
      double g = oc.grad()[0];
      double* dl = lc.grad().data();
      for (int64_t i = 0; i < n; ++i) {
        double y = (i == index) ? 1.0 : 0.0;
        dl[i] += g * (y - (*p)[static_cast<size_t>(i)]);
      }
    });
  }
  return out;
}

Tensor bernoulli_log_prob(Tape* tape, const Tensor& logits, const std::vector<int>& bits) {
  const int64_t n = logits.numel();
  if (static_cast<int64_t>(bits.size()) != n) fail("bernoulli bit count mismatch");
  bool track = taped(tape, {&logits});
  Tensor out = make_out(Shape{1}, track);
  double lp = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double z = logits.data()[i];
    // log sigmoid(z) = -softplus(-z); log(1 - sigmoid(z)) = -softplus(z)
    double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    lp += bits[static_cast<size_t>(i)] ? (z - softplus) : -softplus;
  }
  out.data()[0] = lp;
  if (track) {
    Tensor lc = logits, oc = out;
    auto b = std::make_shared<std::vector<int>>(bits);
    tape->record([lc, oc, b, n]() mutable {
      double g = oc.grad()[0];
      double* dl = lc.grad().data();
      for (int64_t i = 0; i < n; ++i) {
        double s = 1.0 / (1.0 + std::exp(-lc.data()[i]));
        dl[i] += g * (static_cast<double>((*b)[static_cast<size_t>(i)]) - s);
      }
    });
  }
  return out;
}

Tensor categorical_entropy(Tape* tape, const Tensor& logits) {
  const int64_t n = logits.numel();
  auto p = std::make_shared<std::vector<double>>(flat_softmax(logits));
  bool track = taped(tape, {&logits});
  Tensor out = make_out(Shape{1}, track);
  double h = 0.0;
  for (double pi : *p)
    if (pi > 0.0) h -= pi * std::log(pi);
  out.data()[0] = h;
  if (track) {
    Tensor lc = logits, oc = out;
    double hv = h;
    tape->record([lc, oc, p, hv, n]() mutable {
      double g = oc.grad()[0];
      double* dl = lc.grad().data();
      for (int64_t i = 0; i < n; ++i) {
        double pi = (*p)[static_cast<size_t>(i)];
        double lg = pi > 0.0 ? std::log(pi) : 0.0;
        dl[i] += g * (-pi * (lg + hv));
      }
    });
  }
  return out;
}

Tensor bernoulli_entropy(Tape* tape, const Tensor& logits) {
  const int64_t n = logits.numel();
  bool track = taped(tape, {&logits});
  Tensor out = make_out(Shape{1}, track);
  double h = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double s = 1.0 / (1.0 + std::exp(-logits.data()[i]));
    if (s > 0.0 && s < 1.0) h += -s * std::log(s) - (1.0 - s) * std::log(1.0 - s);
  }
  out.data()[0] = h;
  if (track) {
    Tensor lc = logits, oc = out;
    tape->record([lc, oc, n]() mutable {
      double g = oc.grad()[0];
      double* dl = lc.grad().data();
      for (int64_t i = 0; i < n; ++i) {
        double z = lc.data()[i];
        double s = 1.0 / (1.0 + std::exp(-z));
        // dH/dz = -z * s * (1 - s)
        dl[i] += g * (-z * s * (1.0 - s));
      }
    });
  }
  return out;
}

}  // namespace s2d
