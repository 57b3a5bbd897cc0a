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

#include "s2d/executor.hpp"

#include <cmath>

namespace s2d {

Tensor he_conv_weight(Rng& rng, int out_c, int in_c, int k) {
  double std = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
  Tensor w = Tensor::zeros(Shape{out_c, in_c, k, k}, /*requires_grad=*/true);
  for (double& v : w.vec()) v = rng.normal() * std;
  return w;
}

Tensor he_linear_weight(Rng& rng, int out_f, int in_f) {
  double std = std::sqrt(2.0 / static_cast<double>(in_f));
  Tensor w = Tensor::zeros(Shape{out_f, in_f}, /*requires_grad=*/true);
  for (double& v : w.vec()) v = rng.normal() * std;
  return w;
}

WeightStore init_static_weights(const ModelGraph& g, uint64_t seed) {
  Rng rng(seed);
  WeightStore ws;
  int cur_c = g.in_channels;
  for (size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& ls = g.layers[i];
    std::string base = "l" + std::to_string(i);
    switch (ls.kind) {
      case LayerKind::Conv:
        ws.add(base + ".w", he_conv_weight(rng, ls.out_channels, cur_c, ls.kernel));
        break;
      case LayerKind::DwConv: {
        double std = std::sqrt(2.0 / (static_cast<double>(ls.kernel) * ls.kernel));
        Tensor w = Tensor::zeros(Shape{cur_c, 1, ls.kernel, ls.kernel}, true);
        for (double& v : w.vec()) v = rng.normal() * std;
        ws.add(base + ".w", w);
        break;
      }
      case LayerKind::BatchNorm: {
        int c = g.out_shapes[i].c;
        ws.add(base + ".gamma", Tensor::full(Shape{c}, 1.0, true));
        ws.add(base + ".beta", Tensor::zeros(Shape{c}, true));
        ws.add(base + ".rmean", Tensor::zeros(Shape{c}));
        ws.add(base + ".rvar", Tensor::full(Shape{c}, 1.0));
        break;
      }
      case LayerKind::ResidualAdd:
        if (ls.proj) {
          int src_c = g.out_shapes[static_cast<size_t>(ls.res_source)].c;
          ws.add(base + ".proj.w", he_conv_weight(rng, g.out_shapes[i].c, src_c, 1));
        }
        break;
      case LayerKind::Linear:
        ws.add("head.w", he_linear_weight(rng, ls.out_channels, cur_c));
        ws.add("head.b", Tensor::zeros(Shape{ls.out_channels}, true));
        break;
      default:
        break;
    }
    cur_c = g.out_shapes[i].c;
  }
  return ws;
}

Tensor forward_static(const ModelGraph& g, WeightStore& weights, const Tensor& images, Tape* tape,
                      bool training) {
  if (images.shape().rank() != 4 || images.shape()[1] != g.in_channels ||
      images.shape()[2] != g.in_h || images.shape()[3] != g.in_w)
    fail("input batch " + images.shape().str() + " does not match model input " +
         std::to_string(g.in_channels) + "x" + std::to_string(g.in_h) + "x" + std::to_string(g.in_w));

  std::vector<Tensor> outs(g.layers.size());
  Tensor cur = images;
  Tensor logits;
  for (size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& ls = g.layers[i];
    std::string base = "l" + std::to_string(i);
    switch (ls.kind) {
      case LayerKind::Conv:
        cur = conv2d(tape, cur, weights.at(base + ".w"), ls.stride, ls.padding);
        break;
      case LayerKind::DwConv:
        cur = dwconv2d(tape, cur, weights.at(base + ".w"), ls.stride, ls.padding);
        break;
      case LayerKind::BatchNorm:
        cur = batch_norm(tape, cur, weights.at(base + ".gamma"), weights.at(base + ".beta"),
                         weights.at(base + ".rmean"), weights.at(base + ".rvar"), training);
        break;
      case LayerKind::Relu:
        cur = relu(tape, cur);
        break;
      case LayerKind::MaxPool:
        cur = max_pool(tape, cur, ls.kernel, ls.stride);
        break;
      case LayerKind::GlobalAvgPool:
        cur = global_avg_pool(tape, cur);
        break;
      case LayerKind::Linear:
        cur = linear(tape, cur, weights.at("head.w"), weights.at("head.b"));
        logits = cur;
        break;
      case LayerKind::ResidualAdd: {
        Tensor shortcut = outs[static_cast<size_t>(ls.res_source)];
        if (ls.proj) shortcut = conv2d(tape, shortcut, weights.at(base + ".proj.w"), ls.proj_stride, 0);
        cur = add(tape, cur, shortcut);
        break;
      }
      case LayerKind::SoftmaxHead:
        break;  // logits are returned; softmax applied by confidence consumers
    }
    outs[i] = cur;
  }
  return logits;
}

}  // namespace s2d
