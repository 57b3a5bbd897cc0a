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
#include <string>
#include <utility>
#include <vector>

#include "s2d/tensor.hpp"

namespace s2d {

enum class LayerKind {
  Conv,
  DwConv,
  BatchNorm,
  Relu,
  MaxPool,
  GlobalAvgPool,
  Linear,
  ResidualAdd,
  SoftmaxHead,
};

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
  LayerKind kind;
  int out_channels = 0;  // Conv/Linear
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  // ResidualAdd: index of the layer whose output is added. When the source
  // shape differs, `proj` enables a strided 1x1 projection on the shortcut.
  int res_source = -1;
  bool proj = false;
  int proj_stride = 1;
};

struct ShapeCHW {
  int c = 0, h = 0, w = 0;
  bool operator==(const ShapeCHW&) const = default;
};

// Validated chain-plus-residual computation graph of a static CNN.
// `indexed` lists the positions of the feature layers (Conv/DwConv) that
// carry the layer index k used by the transform machinery; the trailing
// Linear is the prediction layer and is not part of any resolution group.
struct ModelGraph {
  std::vector<LayerSpec> layers;
  int in_channels = 0, in_h = 0, in_w = 0;
  int num_classes = 0;
  int head_linear = -1;  // layer index of the prediction Linear

  std::vector<ShapeCHW> out_shapes;         // per layer
  std::vector<int> indexed;                 // layer indices of feature layers
  std::vector<std::pair<int, int>> groups;  // [begin,end) ranges into `indexed`

  std::string canonical_text;  // normalized description, hashed for provenance
  uint64_t hash() const;

  int k_groups() const { return static_cast<int>(groups.size()); }
  // resolution group (index into `groups`) owning indexed-layer position ki
  int group_of(int ki) const;
};

// Parses the line-oriented model description (see README for the grammar)
// and runs shape inference. Throws Error on malformed input.
ModelGraph build_model(const std::string& text);
ModelGraph load_model_file(const std::string& path);

// Maximal contiguous ranges of equal output resolution over feature layers.
std::vector<std::pair<int, int>> resolution_groups(const ModelGraph& g);

struct FlopsReport {
  std::vector<uint64_t> per_layer;       // aligned with graph.layers
  std::vector<uint64_t> per_group;       // per resolution group (projections included)
  uint64_t total = 0;
};

// MAC counts: Conv O*C*k^2*H'*W', DwConv C*k^2*H'*W', Linear in*out,
// residual projection O*C*H'*W'; BN/ReLU/pool/softmax and the elementwise
// residual addition count zero.
FlopsReport count_flops(const ModelGraph& g);

}  // namespace s2d
