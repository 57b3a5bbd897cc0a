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

#include "s2d/optimizer.hpp"

#include <cmath>

namespace s2d {

void sgd_step(WeightStore& params, OptimizerState& state, const SgdConfig& cfg) {
  for (auto& [name, p] : params.items()) {
    if (!p.requires_grad()) continue;
    auto& buf = state.momentum[name];
    if (buf.empty()) buf.assign(static_cast<size_t>(p.numel()), 0.0);
    if (static_cast<int64_t>(buf.size()) != p.numel())
      fail("optimizer buffer shape mismatch for " + name);
    double* pd = p.data();
    const std::vector<double>& g = p.grad();
    for (size_t i = 0; i < buf.size(); ++i) {
      double grad = g[i] + cfg.weight_decay * pd[i];
      buf[i] = cfg.momentum * buf[i] + grad;
      pd[i] -= cfg.lr * buf[i];
    }
  }
  ++state.step_count;
}

void adam_step(WeightStore& params, OptimizerState& state, const AdamConfig& cfg) {
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params.items()) {
    if (!p.requires_grad()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(static_cast<size_t>(p.numel()), 0.0);
    if (v.empty()) v.assign(static_cast<size_t>(p.numel()), 0.0);
    if (static_cast<int64_t>(m.size()) != p.numel())
      fail("optimizer buffer shape mismatch for " + name);
    double* pd = p.data();
    const std::vector<double>& g = p.grad();
    for (size_t i = 0; i < m.size(); ++i) {
      double grad = g[i] + cfg.weight_decay * pd[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad * grad;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      pd[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace s2d
