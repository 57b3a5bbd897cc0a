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

#include "s2d/trainer.hpp"

namespace s2d {

// Exit thresholds t_1..t_{s-1}; the last stage always exits. The exit test
// is c_i >= t_i, so t_i = 0 always exits and anything > 1 never does.
struct ThresholdPolicy {
  std::vector<double> t;
};

struct ExitStats {
  std::vector<double> fraction;  // per stage, sums to 1
  std::vector<double> accuracy;  // among samples exiting at that stage (0 if none)
  double overall_accuracy = 0.0;
  double mean_macs = 0.0;  // == sum_i fraction[i] * accumulated[i], exactly
};

// Pure bookkeeping over a TraceTable; no re-inference. mean_macs is computed
// as the left-to-right sum of fraction[i] * accumulated[i] so the accounting
// identity holds with zero floating-point error.
ExitStats simulate_policy(const TraceTable& trace, const ThresholdPolicy& policy);

struct TradeoffPoint {
  std::vector<double> t;
  double mean_macs = 0.0;
  double accuracy = 0.0;
  double reward = 0.0;
  bool pareto = false;
};

// Per-stage threshold grid; default 0.00..1.00 step 0.05 plus the 1.01
// sentinel ("never exit here").
struct GridSpec {
  double start = 0.0;
  double stop = 1.0;
  double step = 0.05;
  bool sentinel = true;
  std::vector<double> values() const;
};

// Cartesian product of the grid over the s-1 thresholds, evaluated through
// simulate_policy, sorted by mean MACs; Pareto-optimal points are flagged.
std::vector<TradeoffPoint> sweep_thresholds(const TraceTable& trace, const GridSpec& grid,
                                            double omega);

// Argmax of compute_reward over the grid. Ties break toward lower mean MACs,
// then lexicographically smaller thresholds.
ThresholdPolicy select_thresholds(const TraceTable& trace, double omega,
                                  const GridSpec& grid = {});

struct InferResult {
  int label = 0;
  int exit_stage = 0;  // 1-based
  uint64_t macs = 0;
  double confidence = 0.0;
};

// Live early-exit inference for one sample [1,C,H,W]: stages are evaluated
// in order with feature caching; the first stage whose confidence clears its
// threshold exits and is charged its accumulated MACs.
InferResult infer(const MultiStageModel& msm, WeightStore& weights, const Tensor& sample,
                  const ThresholdPolicy& policy);

// t_1..t_{s-1},mean_macs,accuracy,reward,pareto
void save_sweep_csv(const std::vector<TradeoffPoint>& points, int num_stages,
                    const std::string& path);
// stage,fraction,accuracy + overall summary row
void save_exit_stats_csv(const ExitStats& stats, const std::string& path);

}  // namespace s2d
