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

#include "s2d/controller.hpp"
#include "s2d/optimizer.hpp"

namespace s2d {

struct PpoConfig {
  int epochs = 4;
  double clip = 0.1;
  int minibatch = 4;
  double vf_coef = 0.5;
  double ent_coef = 0.01;
  double lr = 0.001;  // Adam
};

// One sampled architecture = one single-step episode.
struct Trajectory {
  std::vector<int> tokens;
  std::vector<double> logp_old;  // per decision, at sample time
  double value_old = 0.0;
  double reward = 0.0;
};

struct PpoDiagnostics {
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
  double entropy = 0.0;      // mean per decision
  double policy_loss = 0.0;  // last minibatch
  double value_loss = 0.0;
  bool aborted = false;  // non-finite loss; controller rolled back
};

// Clipped-surrogate update: `epochs` passes over shuffled minibatches,
// advantage = reward - value baseline (no discounting), total loss =
// policy + vf_coef * value - ent_coef * entropy. A non-finite loss aborts
// the whole update and restores the controller.
PpoDiagnostics ppo_update(Controller& controller, OptimizerState& adam,
                          const std::vector<Trajectory>& batch, const PpoConfig& cfg, Rng& rng);

}  // namespace s2d
