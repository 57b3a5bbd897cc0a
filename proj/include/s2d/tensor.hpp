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

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace s2d {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int64_t> dims) : dims_(dims) {}
  explicit Shape(std::vector<int64_t> dims) : dims_(std::move(dims)) {}

  int rank() const { return static_cast<int>(dims_.size()); }
  int64_t operator[](int i) const { return dims_[static_cast<size_t>(i)]; }
  const std::vector<int64_t>& dims() const { return dims_; }

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : dims_) n *= d;
    return n;
  }

  bool operator==(const Shape& o) const { return dims_ == o.dims_; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const;

 private:
  std::vector<int64_t> dims_;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
};

// Dense 64-bit tensor with shared storage. Copies are shallow; use clone()
// for an independent buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return impl_->shape.numel(); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& vec() { return impl_->data; }
  const std::vector<double>& vec() const { return impl_->data; }

  double item() const {
    if (numel() != 1) fail("item() on tensor of " + std::to_string(numel()) + " elements");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  // Gradient buffer, allocated (zeroed) on first access.
  std::vector<double>& grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
  }
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  Tensor clone() const;
  bool all_finite() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Define-by-run gradient tape. Ops append backward closures in execution
// order; backward() replays them in reverse exactly once, then resets.
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  size_t size() const { return nodes_.size(); }
  void reset() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad tensor.
  void backward(Tensor loss);

 private:
  std::vector<std::function<void()>> nodes_;
};

// True when the op should record a backward closure.
inline bool taped(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// ---- Neural net ops (all differentiable; tape may be null for inference) ----

// x: [N,C,H,W], w: [O,C,kh,kw], bias-free cross-correlation.
Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w, int stride, int padding);

// Depthwise: x: [N,C,H,W], w: [C,1,kh,kw].
Tensor dwconv2d(Tape* tape, const Tensor& x, const Tensor& w, int stride, int padding);

// Per-channel affine normalization over (N,H,W). Train mode uses batch
// statistics (biased variance) and folds them into the running buffers with
// `momentum`; eval mode normalizes with the running buffers.
Tensor batch_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum = 0.1, double eps = 1e-5);

Tensor relu(Tape* tape, const Tensor& x);
Tensor max_pool(Tape* tape, const Tensor& x, int kernel, int stride);
Tensor global_avg_pool(Tape* tape, const Tensor& x);  // [N,C,H,W] -> [N,C]

// x: [N,in], w: [out,in], b: [out] (pass undefined Tensor for no bias).
Tensor linear(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b);

// Concatenate along dim 1; every other dimension must match.
Tensor channel_concat(Tape* tape, std::span<const Tensor> parts);
Tensor channel_slice(Tape* tape, const Tensor& x, int64_t begin, int64_t end);

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor affine(Tape* tape, const Tensor& x, double scale, double shift);
Tensor sigmoid(Tape* tape, const Tensor& x);
Tensor tanh_op(Tape* tape, const Tensor& x);
Tensor exp_op(Tape* tape, const Tensor& x);
Tensor clamp(Tape* tape, const Tensor& x, double lo, double hi);
Tensor min2(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sum(Tape* tape, const Tensor& x);        // -> [1]
Tensor mean_all(Tape* tape, const Tensor& x);   // -> [1]
Tensor reshape(Tape* tape, const Tensor& x, Shape shape);  // same numel

// Mean over the batch of -log softmax(logits)[label]; max-subtraction
// stabilized. logits: [N,K].
Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int>& labels);

// Row-wise softmax, forward only (confidences, not on any tape).
Tensor softmax(const Tensor& logits);

// Differentiable lookup of one row of `table` ([V,E]) -> [1,E].
Tensor embed_row(Tape* tape, const Tensor& table, int64_t row);

// log softmax(logits)[index] as a scalar; logits is a vector or [1,n].
Tensor categorical_log_prob(Tape* tape, const Tensor& logits, int index);
// Sum over locations of log Bernoulli(bit | sigmoid(logit)).
Tensor bernoulli_log_prob(Tape* tape, const Tensor& logits, const std::vector<int>& bits);
Tensor categorical_entropy(Tape* tape, const Tensor& logits);
Tensor bernoulli_entropy(Tape* tape, const Tensor& logits);

}  // namespace s2d
