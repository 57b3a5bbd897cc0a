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

#include <string>
#include <vector>

#include "s2d/dataset.hpp"
#include "s2d/multistage.hpp"
#include "s2d/rng.hpp"

namespace s2d {

struct TrainConfig {
  int epochs = 30;
  int batch = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<double> alpha;  // per-stage loss weights; empty = all ones
  std::vector<double> milestones{0.5, 0.75};  // lr/10 at these epoch fractions
  int warmup_iters = 100;                     // linear warm-up, full training only
  bool augment_flip = false;                  // random horizontal flip
  int augment_pad_crop = 0;                   // zero-pad by this much, crop back
  uint64_t seed = 1;

  void validate(int stages) const;
};

// Training-time augmentation: per-sample horizontal flip and random crop
// out of a zero-padded canvas. Mutates the batch in place, deterministic
// under `rng`.
void augment_batch(Tensor& images, Rng& rng, bool flip, int pad);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::vector<double> stage_acc;  // on the validation set, empty if none
};

struct TrainResult {
  std::vector<EpochStats> history;
};

// Sum_i alpha_i * CE(stage_logits[i], labels).
Tensor joint_loss(Tape* tape, const std::vector<Tensor>& stage_logits,
                  const std::vector<int>& labels, const std::vector<double>& alpha);

// SGD with momentum under the milestone schedule plus linear warm-up.
// Deterministic given config.seed. Throws Error on a non-finite loss.
TrainResult train(const MultiStageModel& msm, WeightStore& weights, const Dataset& train_set,
                  const Dataset* val_set, const TrainConfig& config);

// Truncated training used for reward estimation: `inner_epochs` at a fixed
// learning rate, no warm-up, no milestones.
TrainResult approx_train(const MultiStageModel& msm, WeightStore& weights,
                         const Dataset& train_set, int inner_epochs, const TrainConfig& config);

// Per-stage accuracy of the full cascade on a dataset (eval mode).
std::vector<double> evaluate_stages(const MultiStageModel& msm, WeightStore& weights,
                                    const Dataset& ds);

// Per-sample, per-stage record of a trained cascade. Enables analytic
// threshold sweeps with no re-inference.
struct TraceTable {
  int num_stages = 0;
  int num_classes = 0;
  std::vector<uint64_t> accumulated;  // per-stage accumulated MACs
  uint64_t base_static_macs = 0;      // cost normalizer

  std::vector<uint16_t> labels;  // N
  std::vector<double> conf;      // N*s, top-1 softmax confidence
  std::vector<uint16_t> pred;    // N*s
  std::vector<uint8_t> correct;  // N*s

  size_t rows() const { return labels.size(); }
  double confidence(size_t row, int stage) const {
    return conf[row * static_cast<size_t>(num_stages) + static_cast<size_t>(stage)];
  }
  bool is_correct(size_t row, int stage) const {
    return correct[row * static_cast<size_t>(num_stages) + static_cast<size_t>(stage)] != 0;
  }
};

// Full cascade over the dataset; confidences are softmax maxima.
TraceTable build_trace_table(const MultiStageModel& msm, WeightStore& weights, const Dataset& ds);

// Trace file, magic "S2DT" (little-endian):
//   "S2DT" | u8 version (1) | u32 stages | u32 classes | u64 rows
//   | u64 base_static_macs | u64 accumulated[stages]
//   | per row: u16 label, then per stage f64 confidence, u16 pred, u8 correct
void save_trace(const TraceTable& t, const std::string& path);
TraceTable load_trace(const std::string& path);

// epoch,loss,lr,acc_stage_1..s
void save_history_csv(const TrainResult& r, const std::string& path);

}  // namespace s2d
