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

#include <functional>
#include <iosfwd>
#include <optional>

#include "s2d/dataset.hpp"
#include "s2d/dynrt.hpp"
#include "s2d/ppo.hpp"

namespace s2d {

struct SearchConfig {
  int G = 8;
  int s = 3;
  double omega = -0.06;
  int budget = 10000;       // total sampled candidates (duplicates included)
  int inner_epochs = 6;     // approximate training per candidate
  int traj_per_update = 8;  // trajectories per PPO round
  int top_k = 10;           // candidates retrained with the full config
  PpoConfig ppo;
  GridSpec grid;
  TrainConfig train;  // shared hyperparameters; epochs apply to full retraining
  uint64_t seed = 1;
  int threads = 1;

  void validate() const;
};

struct RewardRecord {
  std::vector<int> tokens;
  std::string encoding;  // comma-joined tokens
  double acc = 0.0;      // dynamic accuracy at the chosen thresholds
  double cost = 0.0;     // mean dynamic MACs / base static MACs
  double reward = 0.0;
  std::vector<double> thresholds;
  uint64_t seed = 0;             // candidate weight/training seed
  uint64_t duration_iters = 0;   // optimizer iterations spent (deterministic)
  double wall_seconds = 0.0;     // informational; never written to artifacts
  bool diverged = false;
};

struct TopCandidate {
  TransformSetting setting;
  WeightStore weights;
  ThresholdPolicy thresholds;  // selected on validation after full training
  double val_acc = 0.0;
  double val_cost = 0.0;
  double val_reward = 0.0;
  RewardRecord search_record;
};

struct SearchResult {
  std::vector<RewardRecord> records;   // unique settings, sorted by reward desc
  std::vector<TopCandidate> top;       // retrained top-k (empty in synthetic mode)
  std::vector<std::string> log_lines;  // deterministic search log, one record per line
  std::vector<int> modal_tokens;       // greedy decode of the final controller
  Controller controller;
};

// Reward override for calibration runs: no training, the reward is a pure
// function of the sampled setting.
using SyntheticReward = std::function<double(const TransformSetting&, const std::vector<int>&)>;

// Deterministic candidate seed, independent of evaluation order.
uint64_t candidate_seed(uint64_t search_seed, const std::vector<int>& tokens);

// Transform + approximate training + validation trace + best-threshold
// selection; ACC/COST are the dynamic numbers at that threshold. A training
// divergence yields reward 0 with the diverged flag set.
RewardRecord evaluate_candidate(const TransformSetting& setting, const ModelGraph& g,
                                const Dataset& train_set, const Dataset& val_set,
                                const SearchConfig& cfg);

// The sample -> evaluate -> update loop over the candidate budget, with an
// evaluation cache keyed by the token encoding. Reproducible given the seed.
// Datasets may be null only in synthetic-reward mode (which also skips the
// top-k retraining). When `live_log` is given, every log line is written and
// flushed as it is produced, so an aborted search still leaves its log.
SearchResult search(const ModelGraph& g, const Dataset* train_set, const Dataset* val_set,
                    const SearchConfig& cfg, SyntheticReward synthetic = nullptr,
                    std::ostream* live_log = nullptr);

}  // namespace s2d
