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

#include <map>
#include <string>
#include <vector>

#include "s2d/weights.hpp"

namespace s2d {

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Per-parameter buffers keyed by weight name; shapes always mirror the
// parameter shapes. One state object serves one optimizer over one store.
struct OptimizerState {
  std::map<std::string, std::vector<double>> momentum;  // SGD
  std::map<std::string, std::vector<double>> m, v;      // Adam moments
  int64_t step_count = 0;
};

// v <- mu*v + (g + wd*p); p <- p - lr*v
void sgd_step(WeightStore& params, OptimizerState& state, const SgdConfig& cfg);

// Standard bias-corrected Adam; weight decay folded into the gradient.
void adam_step(WeightStore& params, OptimizerState& state, const AdamConfig& cfg);

}  // namespace s2d
