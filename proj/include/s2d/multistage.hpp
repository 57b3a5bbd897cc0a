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

#include "s2d/transform.hpp"
#include "s2d/weights.hpp"

namespace s2d {

// Multi-stage weight names mirror the static scheme with a stage prefix:
// "s{i}.l{k}.w", "s{i}.l{k}.gamma|beta|rmean|rvar", "s{i}.l{k}.proj.w",
// "s{i}.head.w|b" (stages are 1-based in names).
WeightStore init_msm_weights(const MultiStageModel& msm, uint64_t seed);

// Renames static-graph weights into the single stage of an s=1 transform.
WeightStore lift_static_weights(const WeightStore& static_ws);

// Full cascade: evaluates every stage and returns one [N,K] logits tensor
// per stage. Reused features are computed once and shared.
std::vector<Tensor> forward_multistage(const MultiStageModel& msm, WeightStore& weights,
                                       const Tensor& images, Tape* tape = nullptr,
                                       bool training = false);

}  // namespace s2d
