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

#include "s2d/graph.hpp"
#include "s2d/rng.hpp"
#include "s2d/weights.hpp"

namespace s2d {

// Weight names for the static graph: feature layer i owns "l{i}.w"
// (and "l{i}.proj.w" for a projected shortcut), batch norm at layer i owns
// "l{i}.gamma|beta|rmean|rvar", the prediction layer owns "head.w|head.b".
WeightStore init_static_weights(const ModelGraph& g, uint64_t seed);

// He-normal fed by `rng`; biases zero, BN scale one / shift zero.
Tensor he_conv_weight(Rng& rng, int out_c, int in_c, int k);
Tensor he_linear_weight(Rng& rng, int out_f, int in_f);

// Deterministic logits [N, num_classes] for an image batch [N,C,H,W].
// `tape` may be null (inference); `training` selects batch-norm mode.
Tensor forward_static(const ModelGraph& g, WeightStore& weights, const Tensor& images,
                      Tape* tape = nullptr, bool training = false);

}  // namespace s2d
