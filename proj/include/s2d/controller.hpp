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
#include "s2d/transform.hpp"
#include "s2d/weights.hpp"

namespace s2d {

struct ControllerConfig {
  int G = 8;
  int s = 3;
  int k_groups = 1;
  int hidden = 64;
  int embed = 32;

  int n_split() const { return static_cast<int>(binomial(G - 1, s - 1)); }
  int n_loc() const { return s * (s - 1) / 2; }
  int decisions_per_group() const { return n_loc() > 0 ? 2 : 1; }
  int seq_len() const { return k_groups * decisions_per_group(); }
  // token vocabulary: split options, then reuse bitmasks
  int vocab() const { return n_split() + (n_loc() > 0 ? (1 << n_loc()) : 0); }
};

// Recurrent policy: a GRU cell whose hidden state feeds, per resolution
// group, a softmax split predictor and a per-location logistic reuse
// predictor, plus a per-episode value baseline read from the hidden state
// at the episode start (before any action, so the baseline cannot absorb
// per-action reward and bias the policy gradient). Each sampled token is
// embedded and fed to the next step. Predictor weights initialize to zero,
// so the fresh policy is exactly uniform.
class Controller {
 public:
  Controller(ControllerConfig cfg, uint64_t seed);

  const ControllerConfig& config() const { return cfg_; }
  WeightStore& params() { return params_; }
  const WeightStore& params() const { return params_; }

  struct Sample {
    std::vector<int> tokens;
    std::vector<double> logp;  // per decision
    double value = 0.0;
    double entropy = 0.0;  // mean per decision
  };
  Sample sample(Rng& rng);

  // Mode of the policy: argmax split options, reuse bits at p > 0.5.
  std::vector<int> greedy_tokens();

  struct Eval {
    std::vector<Tensor> logp;  // per decision, scalar tensors
    Tensor value;              // scalar tensor
    Tensor entropy_sum;        // sum over decisions
  };
  // Recomputes decision distributions along a stored token sequence.
  Eval evaluate(const std::vector<int>& tokens, Tape* tape);

  // Decision arity sanity check against a base graph.
  void check_arity(const ModelGraph& g) const;

 private:
  ControllerConfig cfg_;
  WeightStore params_;

  Tensor step(Tape* tape, const Tensor& input, const Tensor& h);
  Tensor logits_for(Tape* tape, const Tensor& h, int group, bool concat_decision);
};

}  // namespace s2d
