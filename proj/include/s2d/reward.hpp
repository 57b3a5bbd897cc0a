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

#include <cmath>

#include "s2d/tensor.hpp"

namespace s2d {

// R = acc * cost^omega. `cost` is the mean dynamic MACs normalized by the
// base model's static total, so omega's scale is portable across models.
// omega <= 0: cost must never be rewarded.
inline double compute_reward(double acc, double cost, double omega) {
  if (!(acc >= 0.0 && acc <= 1.0)) fail("reward: acc must lie in [0,1]");
  if (!(cost > 0.0)) fail("reward: cost must be positive");
  return acc * std::pow(cost, omega);
}

}  // namespace s2d
