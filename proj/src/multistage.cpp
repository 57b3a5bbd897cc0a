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

#include "s2d/multistage.hpp"

#include <cmath>

#include "s2d/executor.hpp"

namespace s2d {

WeightStore init_msm_weights(const MultiStageModel& msm, uint64_t seed) {
  Rng rng(seed);
  WeightStore ws;
  for (int i = 0; i < msm.num_stages; ++i) {
    std::string sp = "s" + std::to_string(i + 1) + ".";
    const auto& stage = msm.stages[static_cast<size_t>(i)];
    for (size_t li = 0; li < stage.size(); ++li) {
      const MsLayer& ml = stage[li];
      std::string base = sp + "l" + std::to_string(li);
      switch (ml.kind) {
        case LayerKind::Conv:
          ws.add(base + ".w", he_conv_weight(rng, ml.out_c, ml.in_c, ml.kernel));
          break;
        case LayerKind::DwConv: {
          double std = std::sqrt(2.0 / (static_cast<double>(ml.kernel) * ml.kernel));
          Tensor w = Tensor::zeros(Shape{ml.in_c, 1, ml.kernel, ml.kernel}, true);
          for (double& v : w.vec()) v = rng.normal() * std;
          ws.add(base + ".w", w);
          break;
        }
        case LayerKind::BatchNorm:
          ws.add(base + ".gamma", Tensor::full(Shape{ml.out_c}, 1.0, true));
          ws.add(base + ".beta", Tensor::zeros(Shape{ml.out_c}, true));
          ws.add(base + ".rmean", Tensor::zeros(Shape{ml.out_c}));
          ws.add(base + ".rvar", Tensor::full(Shape{ml.out_c}, 1.0));
          break;
        case LayerKind::ResidualAdd:
          if (ml.proj) ws.add(base + ".proj.w", he_conv_weight(rng, ml.out_c, ml.proj_in, 1));
          break;
        default:
          break;
      }
    }
    ws.add(sp + "head.w",
           he_linear_weight(rng, msm.num_classes, msm.head_in[static_cast<size_t>(i)]));
    ws.add(sp + "head.b", Tensor::zeros(Shape{msm.num_classes}, true));
  }
  return ws;
}

WeightStore lift_static_weights(const WeightStore& static_ws) {
  WeightStore out;
  for (const auto& [name, t] : static_ws.items()) out.add("s1." + name, t.clone());
  return out;
}

std::vector<Tensor> forward_multistage(const MultiStageModel& msm, WeightStore& weights,
                                       const Tensor& images, Tape* tape, bool training) {
  const ModelGraph& g = msm.base;
  if (images.shape().rank() != 4 || images.shape()[1] != g.in_channels ||
      images.shape()[2] != g.in_h || images.shape()[3] != g.in_w)
    fail("input batch " + images.shape().str() + " does not match model input");

  const int s = msm.num_stages;
  const int n_layers = static_cast<int>(g.layers.size());
  // outs[i][li]: stage i's tensor after base layer li (feature part only)
  std::vector<std::vector<Tensor>> outs(static_cast<size_t>(s),
                                        std::vector<Tensor>(static_cast<size_t>(n_layers)));
  std::vector<Tensor> final_feat(static_cast<size_t>(s));

  for (int i = 0; i < s; ++i) {
    std::string sp = "s" + std::to_string(i + 1) + ".";
    const auto& stage = msm.stages[static_cast<size_t>(i)];
    Tensor cur = images;
    for (int li = 0; li < n_layers; ++li) {
      const MsLayer& ml = stage[static_cast<size_t>(li)];
      if (ml.kind == LayerKind::GlobalAvgPool) break;  // heads handle the rest
      std::string base = sp + "l" + std::to_string(li);
      switch (ml.kind) {
        case LayerKind::Conv: {
          Tensor in = cur;
          if (!ml.sources.empty()) {
            std::vector<Tensor> parts;
            for (int src : ml.sources)
              parts.push_back(outs[static_cast<size_t>(src)][static_cast<size_t>(li) - 1]);
            parts.push_back(cur);
            in = channel_concat(tape, parts);
          }
          cur = conv2d(tape, in, weights.at(base + ".w"), ml.stride, ml.padding);
          break;
        }
        case LayerKind::DwConv:
          cur = dwconv2d(tape, cur, weights.at(base + ".w"), ml.stride, ml.padding);
          break;
        case LayerKind::BatchNorm:
          cur = batch_norm(tape, cur, weights.at(base + ".gamma"), weights.at(base + ".beta"),
                           weights.at(base + ".rmean"), weights.at(base + ".rvar"), training);
          break;
        case LayerKind::Relu:
          cur = relu(tape, cur);
          break;
        case LayerKind::MaxPool:
          cur = max_pool(tape, cur, ml.kernel, ml.stride);
          break;
        case LayerKind::ResidualAdd: {
          Tensor shortcut = outs[static_cast<size_t>(i)][static_cast<size_t>(ml.res_source)];
          if (ml.proj)
            shortcut = conv2d(tape, shortcut, weights.at(base + ".proj.w"), ml.proj_stride, 0);
          cur = add(tape, cur, shortcut);
          break;
        }
        default:
          fail("unexpected layer kind inside a stage pipeline");
      }
      outs[static_cast<size_t>(i)][static_cast<size_t>(li)] = cur;
    }
    final_feat[static_cast<size_t>(i)] = cur;
  }

  // prediction heads: head i consumes the final features of stages 1..i
  std::vector<Tensor> logits(static_cast<size_t>(s));
  for (int i = 0; i < s; ++i) {
    std::string sp = "s" + std::to_string(i + 1) + ".";
    std::vector<Tensor> parts(final_feat.begin(), final_feat.begin() + i + 1);
    Tensor feats = channel_concat(tape, parts);
    Tensor pooled = global_avg_pool(tape, feats);
    logits[static_cast<size_t>(i)] = linear(tape, pooled, weights.at(sp + "head.w"), weights.at(sp + "head.b"));
  }
  return logits;
}

}  // namespace s2d
