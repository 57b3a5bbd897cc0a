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

#include "s2d/dynrt.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "s2d/reward.hpp"

namespace s2d {

namespace {

int exit_stage_of(const TraceTable& trace, const ThresholdPolicy& policy, size_t row) {
  for (int s = 0; s + 1 < trace.num_stages; ++s)
    if (trace.confidence(row, s) >= policy.t[static_cast<size_t>(s)]) return s;
  return trace.num_stages - 1;
}

}  // namespace

ExitStats simulate_policy(const TraceTable& trace, const ThresholdPolicy& policy) {
  if (static_cast<int>(policy.t.size()) != trace.num_stages - 1)
    fail("threshold policy has " + std::to_string(policy.t.size()) + " entries, trace has " +
         std::to_string(trace.num_stages) + " stages");
  const size_t n = trace.rows();
  if (n == 0) fail("empty trace");

  std::vector<int64_t> count(static_cast<size_t>(trace.num_stages), 0);
  std::vector<int64_t> correct(static_cast<size_t>(trace.num_stages), 0);
  for (size_t r = 0; r < n; ++r) {
    int s = exit_stage_of(trace, policy, r);
    ++count[static_cast<size_t>(s)];
    if (trace.is_correct(r, s)) ++correct[static_cast<size_t>(s)];
  }

  ExitStats st;
  st.fraction.resize(static_cast<size_t>(trace.num_stages));
  st.accuracy.resize(static_cast<size_t>(trace.num_stages));
  int64_t total_correct = 0;
  for (int s = 0; s < trace.num_stages; ++s) {
    st.fraction[static_cast<size_t>(s)] =
        static_cast<double>(count[static_cast<size_t>(s)]) / static_cast<double>(n);
    st.accuracy[static_cast<size_t>(s)] =
        count[static_cast<size_t>(s)] > 0
            ? static_cast<double>(correct[static_cast<size_t>(s)]) /
                  static_cast<double>(count[static_cast<size_t>(s)])
            : 0.0;
    total_correct += correct[static_cast<size_t>(s)];
  }
  st.overall_accuracy = static_cast<double>(total_correct) / static_cast<double>(n);
  // left-to-right so the accounting identity is exact, not approximate
  double mean = 0.0;
  for (int s = 0; s < trace.num_stages; ++s)
    mean += st.fraction[static_cast<size_t>(s)] *
            static_cast<double>(trace.accumulated[static_cast<size_t>(s)]);
  st.mean_macs = mean;
  return st;
}

std::vector<double> GridSpec::values() const {
  if (step <= 0.0 || stop < start) fail("empty threshold grid");
  std::vector<double> v;
  for (int i = 0;; ++i) {
    double t = start + step * i;
    if (t > stop + 1e-12) break;
    v.push_back(t);
  }
  if (v.empty()) fail("empty threshold grid");
  if (sentinel) v.push_back(stop + 0.01);  // "never exit here"
  return v;
}

namespace {

template <typename Fn>
void for_grid(const std::vector<double>& values, int dims, Fn&& fn) {
  std::vector<double> t(static_cast<size_t>(dims));
  std::vector<size_t> pos(static_cast<size_t>(dims), 0);
  if (dims == 0) {
    fn(t);
    return;
  }
  for (;;) {
    for (int d = 0; d < dims; ++d) t[static_cast<size_t>(d)] = values[pos[static_cast<size_t>(d)]];
    fn(t);
    int d = dims - 1;
    while (d >= 0 && ++pos[static_cast<size_t>(d)] == values.size()) {
      pos[static_cast<size_t>(d)] = 0;
      --d;
    }
    if (d < 0) break;
  }
}

}  // namespace

std::vector<TradeoffPoint> sweep_thresholds(const TraceTable& trace, const GridSpec& grid,
                                            double omega) {
  std::vector<double> values = grid.values();
  std::vector<TradeoffPoint> points;
  const double base = static_cast<double>(trace.base_static_macs);
  for_grid(values, trace.num_stages - 1, [&](const std::vector<double>& t) {
    ExitStats st = simulate_policy(trace, {t});
    TradeoffPoint p;
    p.t = t;
    p.mean_macs = st.mean_macs;
    p.accuracy = st.overall_accuracy;
    p.reward = compute_reward(st.overall_accuracy, st.mean_macs / base, omega);
    points.push_back(std::move(p));
  });
  std::stable_sort(points.begin(), points.end(), [](const TradeoffPoint& a, const TradeoffPoint& b) {
    if (a.mean_macs != b.mean_macs) return a.mean_macs < b.mean_macs;
    return a.accuracy > b.accuracy;
  });
  // Pareto frontier: not dominated in (mean_macs asc, accuracy)
  double best_acc = -1.0;
  for (TradeoffPoint& p : points) {
    if (p.accuracy > best_acc) {
      p.pareto = true;
      best_acc = p.accuracy;
    }
  }
  return points;
}

ThresholdPolicy select_thresholds(const TraceTable& trace, double omega, const GridSpec& grid) {
  std::vector<double> values = grid.values();
  const double base = static_cast<double>(trace.base_static_macs);
  bool have = false;
  double best_reward = 0.0, best_macs = 0.0;
  std::vector<double> best_t;
  for_grid(values, trace.num_stages - 1, [&](const std::vector<double>& t) {
    ExitStats st = simulate_policy(trace, {t});
    double r = compute_reward(st.overall_accuracy, st.mean_macs / base, omega);
    bool better = !have || r > best_reward ||
                  (r == best_reward && st.mean_macs < best_macs) ||
                  (r == best_reward && st.mean_macs == best_macs &&
                   std::lexicographical_compare(t.begin(), t.end(), best_t.begin(), best_t.end()));
    if (better) {
      have = true;
      best_reward = r;
      best_macs = st.mean_macs;
      best_t = t;
    }
  });
  return {best_t};
}

InferResult infer(const MultiStageModel& msm, WeightStore& weights, const Tensor& sample,
                  const ThresholdPolicy& policy) {
  if (static_cast<int>(policy.t.size()) != msm.num_stages - 1)
    fail("threshold policy length does not match stage count");
  const ModelGraph& g = msm.base;
  const int n_layers = static_cast<int>(g.layers.size());

  // per-stage cached layer outputs; later stages reuse them via concat
  std::vector<std::vector<Tensor>> outs(static_cast<size_t>(msm.num_stages),
                                        std::vector<Tensor>(static_cast<size_t>(n_layers)));
  std::vector<Tensor> final_feat(static_cast<size_t>(msm.num_stages));

  for (int i = 0; i < msm.num_stages; ++i) {
    std::string sp = "s" + std::to_string(i + 1) + ".";
    const auto& stage = msm.stages[static_cast<size_t>(i)];
    Tensor cur = sample;
    for (int li = 0; li < n_layers; ++li) {
      const MsLayer& ml = stage[static_cast<size_t>(li)];
      if (ml.kind == LayerKind::GlobalAvgPool) break;
      std::string base = sp + "l" + std::to_string(li);
      switch (ml.kind) {
        case LayerKind::Conv: {
          Tensor in = cur;
          if (!ml.sources.empty()) {
            std::vector<Tensor> parts;
            for (int src : ml.sources)
              parts.push_back(outs[static_cast<size_t>(src)][static_cast<size_t>(li) - 1]);
            parts.push_back(cur);
            in = channel_concat(nullptr, parts);
          }
          cur = conv2d(nullptr, in, weights.at(base + ".w"), ml.stride, ml.padding);
          break;
        }
        case LayerKind::DwConv:
          cur = dwconv2d(nullptr, cur, weights.at(base + ".w"), ml.stride, ml.padding);
          break;
        case LayerKind::BatchNorm:
          cur = batch_norm(nullptr, cur, weights.at(base + ".gamma"), weights.at(base + ".beta"),
                           weights.at(base + ".rmean"), weights.at(base + ".rvar"), false);
          break;
        case LayerKind::Relu:
          cur = relu(nullptr, cur);
          break;
        case LayerKind::MaxPool:
          cur = max_pool(nullptr, cur, ml.kernel, ml.stride);
          break;
        case LayerKind::ResidualAdd: {
          Tensor shortcut = outs[static_cast<size_t>(i)][static_cast<size_t>(ml.res_source)];
          if (ml.proj)
            shortcut = conv2d(nullptr, shortcut, weights.at(base + ".proj.w"), ml.proj_stride, 0);
          cur = add(nullptr, cur, shortcut);
          break;
        }
        default:
          fail("unexpected layer kind inside a stage pipeline");
      }
      outs[static_cast<size_t>(i)][static_cast<size_t>(li)] = cur;
    }
    final_feat[static_cast<size_t>(i)] = cur;

    std::vector<Tensor> parts(final_feat.begin(), final_feat.begin() + i + 1);
    Tensor pooled = global_avg_pool(nullptr, channel_concat(nullptr, parts));
    Tensor logits = linear(nullptr, pooled, weights.at(sp + "head.w"), weights.at(sp + "head.b"));
    Tensor probs = softmax(logits);
    int best = 0;
    for (int j = 1; j < msm.num_classes; ++j)
      if (probs.data()[j] > probs.data()[best]) best = j;
    double conf = probs.data()[best];

    bool last = i == msm.num_stages - 1;
    if (last || conf >= policy.t[static_cast<size_t>(i)]) {
      return {best, i + 1, msm.accumulated[static_cast<size_t>(i)], conf};
    }
  }
  fail("unreachable: no stage exited");
}

void save_sweep_csv(const std::vector<TradeoffPoint>& points, int num_stages,
                    const std::string& path) {
  std::ofstream os(path);
  if (!os) fail("cannot open '" + path + "' for writing");
  for (int s = 1; s < num_stages; ++s) os << "t_" << s << ",";
  os << "mean_macs,accuracy,reward,pareto\n";
  char buf[64];
  for (const TradeoffPoint& p : points) {
    for (double t : p.t) {
      snprintf(buf, sizeof(buf), "%.2f,", t);
      os << buf;
    }
    snprintf(buf, sizeof(buf), "%.1f,%.6f,%.6f,%d\n", p.mean_macs, p.accuracy, p.reward,
             p.pareto ? 1 : 0);
    os << buf;
  }
}

void save_exit_stats_csv(const ExitStats& stats, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail("cannot open '" + path + "' for writing");
  os << "stage,fraction,accuracy\n";
  char buf[64];
  for (size_t s = 0; s < stats.fraction.size(); ++s) {
    snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f\n", s + 1, stats.fraction[s], stats.accuracy[s]);
    os << buf;
  }
  snprintf(buf, sizeof(buf), "overall,%.6f,%.1f\n", stats.overall_accuracy, stats.mean_macs);
  os << "# overall,accuracy,mean_macs\n" << buf;
}

}  // namespace s2d
