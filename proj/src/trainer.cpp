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

#include "s2d/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "s2d/optimizer.hpp"
#include "s2d/rng.hpp"

namespace s2d {

void TrainConfig::validate(int stages) const {
  if (epochs < 0 || batch < 1) fail("train config: epochs/batch out of range");
  if (!alpha.empty()) {
    if (static_cast<int>(alpha.size()) != stages)
      fail("train config: alpha has " + std::to_string(alpha.size()) + " entries for " +
           std::to_string(stages) + " stages");
    bool any = false;
    for (double a : alpha) {
      if (a < 0) fail("train config: alpha entries must be nonnegative");
      if (a > 0) any = true;
    }
    if (!any) fail("train config: at least one alpha must be positive");
  }
  for (double m : milestones)
    if (m <= 0.0 || m >= 1.0) fail("train config: milestones must lie in (0,1)");
}

Tensor joint_loss(Tape* tape, const std::vector<Tensor>& stage_logits,
                  const std::vector<int>& labels, const std::vector<double>& alpha) {
  if (stage_logits.empty()) fail("joint_loss needs at least one stage");
  if (!alpha.empty() && alpha.size() != stage_logits.size())
    fail("joint_loss: alpha count does not match stage count");
  Tensor total;
  for (size_t i = 0; i < stage_logits.size(); ++i) {
    double a = alpha.empty() ? 1.0 : alpha[i];
    if (a == 0.0) continue;  // stage contributes nothing, keep it off the tape
    Tensor term = softmax_cross_entropy(tape, stage_logits[i], labels);
    if (a != 1.0) term = affine(tape, term, a, 0.0);
    total = total.defined() ? add(tape, total, term) : term;
  }
  if (!total.defined()) fail("joint_loss: all alpha weights are zero");
  return total;
}

void augment_batch(Tensor& images, Rng& rng, bool flip, int pad) {
  if (!flip && pad <= 0) return;
  const int64_t n = images.shape()[0], c = images.shape()[1];
  const int64_t h = images.shape()[2], w = images.shape()[3];
  std::vector<double> plane(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < n; ++i) {
    bool do_flip = flip && rng.uniform() < 0.5;
    int64_t dy = 0, dx = 0;
    if (pad > 0) {
      dy = rng.uniform_int(2 * pad + 1) - pad;
      dx = rng.uniform_int(2 * pad + 1) - pad;
    }
    if (!do_flip && dy == 0 && dx == 0) continue;
    for (int64_t ch = 0; ch < c; ++ch) {
      double* img = images.data() + (i * c + ch) * h * w;
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
          int64_t sy = y + dy;
          int64_t sx = (do_flip ? w - 1 - x : x) + dx;
          plane[static_cast<size_t>(y * w + x)] =
              (sy >= 0 && sy < h && sx >= 0 && sx < w) ? img[sy * w + sx] : 0.0;
        }
      }
      std::copy(plane.begin(), plane.end(), img);
    }
  }
}

namespace {

struct LrSchedule {
  double base;
  int warmup_iters;
  std::vector<int> milestone_epochs;

  double at(int epoch, int64_t iter) const {
    double lr = base;
    for (int m : milestone_epochs)
      if (epoch >= m) lr /= 10.0;
    if (warmup_iters > 0 && iter < warmup_iters)
      lr *= static_cast<double>(iter + 1) / static_cast<double>(warmup_iters);
    return lr;
  }
};

TrainResult run_training(const MultiStageModel& msm, WeightStore& weights,
                         const Dataset& train_set, const Dataset* val_set, int epochs,
                         const LrSchedule& sched, const TrainConfig& config) {
  config.validate(msm.num_stages);
  if (train_set.channels != msm.base.in_channels || train_set.height != msm.base.in_h ||
      train_set.width != msm.base.in_w)
    fail("training set shape does not match model input");
  if (train_set.classes != msm.num_classes) fail("training set class count mismatch");

  Rng rng(config.seed);
  OptimizerState opt;
  SgdConfig sgd{config.lr, config.momentum, config.weight_decay};
  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  int64_t iter = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t batches = 0;
    double lr_last = sched.at(epoch, iter);
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(config.batch)) {
      size_t end = std::min(order.size(), off + static_cast<size_t>(config.batch));
      std::vector<size_t> idx(order.begin() + static_cast<long>(off),
                              order.begin() + static_cast<long>(end));
      Tensor images = train_set.batch(idx);
      std::vector<int> labels = train_set.batch_labels(idx);
      augment_batch(images, rng, config.augment_flip, config.augment_pad_crop);

      Tape tape;
      std::vector<Tensor> logits = forward_multistage(msm, weights, images, &tape, true);
      Tensor loss = joint_loss(&tape, logits, labels, config.alpha);
      double lv = loss.item();
      if (!std::isfinite(lv))
        fail("training diverged: non-finite loss " + std::to_string(lv) + " at epoch " +
             std::to_string(epoch + 1) + " iteration " + std::to_string(iter));
      weights.zero_grads();
      tape.backward(loss);

      sgd.lr = sched.at(epoch, iter);
      lr_last = sgd.lr;
      sgd_step(weights, opt, sgd);
      loss_sum += lv;
      ++batches;
      ++iter;
    }

    EpochStats es;
    es.epoch = epoch + 1;
    es.loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    es.lr = lr_last;
    if (val_set) es.stage_acc = evaluate_stages(msm, weights, *val_set);
    result.history.push_back(std::move(es));
  }
  return result;
}

}  // namespace

TrainResult train(const MultiStageModel& msm, WeightStore& weights, const Dataset& train_set,
                  const Dataset* val_set, const TrainConfig& config) {
  LrSchedule sched;
  sched.base = config.lr;
  sched.warmup_iters = config.warmup_iters;
  for (double m : config.milestones)
    sched.milestone_epochs.push_back(static_cast<int>(m * config.epochs));
  return run_training(msm, weights, train_set, val_set, config.epochs, sched, config);
}

TrainResult approx_train(const MultiStageModel& msm, WeightStore& weights,
                         const Dataset& train_set, int inner_epochs, const TrainConfig& config) {
  if (inner_epochs < 1) fail("approx_train requires inner_epochs >= 1");
  LrSchedule sched;
  sched.base = config.lr;
  sched.warmup_iters = 0;  // stays cheap: constant lr, no warm-up
  return run_training(msm, weights, train_set, nullptr, inner_epochs, sched, config);
}

namespace {

constexpr size_t kEvalBatch = 64;

template <typename Fn>
void for_eval_batches(const Dataset& ds, Fn&& fn) {
  std::vector<size_t> idx;
  for (size_t off = 0; off < ds.size(); off += kEvalBatch) {
    size_t end = std::min(ds.size(), off + kEvalBatch);
    idx.clear();
    for (size_t i = off; i < end; ++i) idx.push_back(i);
    fn(idx);
  }
}

}  // namespace

std::vector<double> evaluate_stages(const MultiStageModel& msm, WeightStore& weights,
                                    const Dataset& ds) {
  std::vector<int64_t> hits(static_cast<size_t>(msm.num_stages), 0);
  for_eval_batches(ds, [&](const std::vector<size_t>& idx) {
    Tensor images = ds.batch(idx);
    std::vector<int> labels = ds.batch_labels(idx);
    std::vector<Tensor> logits = forward_multistage(msm, weights, images, nullptr, false);
    for (int s = 0; s < msm.num_stages; ++s) {
      const Tensor& lg = logits[static_cast<size_t>(s)];
      const int64_t k = lg.shape()[1];
      for (size_t i = 0; i < idx.size(); ++i) {
        const double* row = lg.data() + static_cast<int64_t>(i) * k;
        int best = 0;
        for (int j = 1; j < k; ++j)
          if (row[j] > row[best]) best = j;
        if (best == labels[i]) ++hits[static_cast<size_t>(s)];
      }
    }
  });
  std::vector<double> acc;
  for (int64_t h : hits) acc.push_back(static_cast<double>(h) / static_cast<double>(ds.size()));
  return acc;
}

TraceTable build_trace_table(const MultiStageModel& msm, WeightStore& weights, const Dataset& ds) {
  TraceTable t;
  t.num_stages = msm.num_stages;
  t.num_classes = msm.num_classes;
  t.accumulated = msm.accumulated;
  t.base_static_macs = count_flops(msm.base).total;
  t.labels.assign(ds.labels.begin(), ds.labels.end());
  t.conf.assign(ds.size() * static_cast<size_t>(msm.num_stages), 0.0);
  t.pred.assign(ds.size() * static_cast<size_t>(msm.num_stages), 0);
  t.correct.assign(ds.size() * static_cast<size_t>(msm.num_stages), 0);

  for_eval_batches(ds, [&](const std::vector<size_t>& idx) {
    Tensor images = ds.batch(idx);
    std::vector<Tensor> logits = forward_multistage(msm, weights, images, nullptr, false);
    for (int s = 0; s < msm.num_stages; ++s) {
      Tensor probs = softmax(logits[static_cast<size_t>(s)]);
      const int64_t k = probs.shape()[1];
      for (size_t i = 0; i < idx.size(); ++i) {
        const double* row = probs.data() + static_cast<int64_t>(i) * k;
        int best = 0;
        for (int j = 1; j < k; ++j)
          if (row[j] > row[best]) best = j;
        size_t cell = idx[i] * static_cast<size_t>(msm.num_stages) + static_cast<size_t>(s);
        t.conf[cell] = row[best];
        t.pred[cell] = static_cast<uint16_t>(best);
        t.correct[cell] = best == ds.labels[idx[i]] ? 1 : 0;
      }
    }
  });
  return t;
}

namespace {

template <typename T>
void put_le(std::ofstream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

struct TraceReader {
  std::vector<unsigned char> bytes;
  size_t pos = 0;
  std::string path;
  void need(size_t n, const char* what) const {
    if (pos + n > bytes.size())
      fail("truncated trace '" + path + "' reading " + what + " at offset " + std::to_string(pos));
  }
  template <typename T>
  T get_le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[pos + i]) << (8 * i);
    pos += sizeof(T);
    return v;
  }
};

}  // namespace

void save_trace(const TraceTable& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("cannot open '" + path + "' for writing");
  os.write("S2DT", 4);
  put_le<uint8_t>(os, 1);
  put_le<uint32_t>(os, static_cast<uint32_t>(t.num_stages));
  put_le<uint32_t>(os, static_cast<uint32_t>(t.num_classes));
  put_le<uint64_t>(os, t.rows());
  put_le<uint64_t>(os, t.base_static_macs);
  for (uint64_t a : t.accumulated) put_le<uint64_t>(os, a);
  for (size_t r = 0; r < t.rows(); ++r) {
    put_le<uint16_t>(os, t.labels[r]);
    for (int s = 0; s < t.num_stages; ++s) {
      size_t cell = r * static_cast<size_t>(t.num_stages) + static_cast<size_t>(s);
      uint64_t u;
      std::memcpy(&u, &t.conf[cell], 8);
      put_le<uint64_t>(os, u);
      put_le<uint16_t>(os, t.pred[cell]);
      put_le<uint8_t>(os, t.correct[cell]);
    }
  }
  if (!os) fail("write failure on '" + path + "'");
}

TraceTable load_trace(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open trace '" + path + "'");
  TraceReader r;
  r.path = path;
  r.bytes.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  r.need(4, "magic");
  if (std::memcmp(r.bytes.data(), "S2DT", 4) != 0) fail("'" + path + "' is not an S2DT trace");
  r.pos = 4;
  if (r.get_le<uint8_t>("version") != 1) fail("unsupported trace version");
  TraceTable t;
  t.num_stages = static_cast<int>(r.get_le<uint32_t>("stages"));
  t.num_classes = static_cast<int>(r.get_le<uint32_t>("classes"));
  uint64_t rows = r.get_le<uint64_t>("rows");
  t.base_static_macs = r.get_le<uint64_t>("base macs");
  for (int s = 0; s < t.num_stages; ++s) t.accumulated.push_back(r.get_le<uint64_t>("accumulated"));
  t.labels.resize(rows);
  t.conf.resize(rows * static_cast<size_t>(t.num_stages));
  t.pred.resize(rows * static_cast<size_t>(t.num_stages));
  t.correct.resize(rows * static_cast<size_t>(t.num_stages));
  for (uint64_t i = 0; i < rows; ++i) {
    t.labels[i] = r.get_le<uint16_t>("label");
    for (int s = 0; s < t.num_stages; ++s) {
      size_t cell = i * static_cast<size_t>(t.num_stages) + static_cast<size_t>(s);
      uint64_t u = r.get_le<uint64_t>("confidence");
      std::memcpy(&t.conf[cell], &u, 8);
      t.pred[cell] = r.get_le<uint16_t>("prediction");
      t.correct[cell] = r.get_le<uint8_t>("correct flag");
    }
  }
  return t;
}

void save_history_csv(const TrainResult& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail("cannot open '" + path + "' for writing");
  size_t stages = r.history.empty() ? 0 : r.history.front().stage_acc.size();
  os << "epoch,loss,lr";
  for (size_t s = 0; s < stages; ++s) os << ",acc_stage_" << (s + 1);
  os << "\n";
  char buf[64];
  for (const EpochStats& e : r.history) {
    os << e.epoch;
    snprintf(buf, sizeof(buf), ",%.6f", e.loss);
    os << buf;
    snprintf(buf, sizeof(buf), ",%.6g", e.lr);
    os << buf;
    for (double a : e.stage_acc) {
      snprintf(buf, sizeof(buf), ",%.6f", a);
      os << buf;
    }
    os << "\n";
  }
}

}  // namespace s2d
