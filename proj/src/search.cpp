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

#include "s2d/search.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "s2d/reward.hpp"

namespace s2d {

void SearchConfig::validate() const {
  if (s < 1 || s > G) fail("search config: need 1 <= s <= G");
  if (omega > 0.0) fail("search config: omega must be <= 0 (cost must not be rewarded)");
  if (budget < traj_per_update) fail("search config: budget must cover one update round");
  if (traj_per_update < 1 || inner_epochs < 1 || top_k < 0) fail("search config out of range");
}

uint64_t candidate_seed(uint64_t search_seed, const std::vector<int>& tokens) {
  uint64_t h = fnv1a(&search_seed, sizeof(search_seed));
  for (int t : tokens) h = fnv1a(&t, sizeof(t), h);
  return h;
}

namespace {

std::string encode_tokens(const std::vector<int>& tokens) {
  std::string s;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(tokens[i]);
  }
  return s;
}

std::string format_record(size_t sample_no, const RewardRecord& r, bool cached) {
  char buf[512];
  std::string th = "-";
  if (!r.thresholds.empty()) {
    th.clear();
    char t[32];
    for (size_t i = 0; i < r.thresholds.size(); ++i) {
      snprintf(t, sizeof(t), "%s%.2f", i ? "," : "", r.thresholds[i]);
      th += t;
    }
  }
  snprintf(buf, sizeof(buf),
           "sample=%zu encoding=%s acc=%.9g cost=%.9g reward=%.9g thresholds=%s seed=%llu "
           "duration=%llu cached=%d diverged=%d",
           sample_no, r.encoding.c_str(), r.acc, r.cost, r.reward, th.c_str(),
           static_cast<unsigned long long>(r.seed),
           static_cast<unsigned long long>(r.duration_iters), cached ? 1 : 0, r.diverged ? 1 : 0);
  return buf;
}

}  // namespace

RewardRecord evaluate_candidate(const TransformSetting& setting, const ModelGraph& g,
                                const Dataset& train_set, const Dataset& val_set,
                                const SearchConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  RewardRecord rec;
  rec.tokens = encode_setting(setting);
  rec.encoding = encode_tokens(rec.tokens);
  rec.seed = candidate_seed(cfg.seed, rec.tokens);

  MultiStageModel msm = apply_transform(g, setting);
  WeightStore ws = init_msm_weights(msm, rec.seed);
  TrainConfig tc = cfg.train;
  tc.seed = rec.seed ^ 0x5bd1e995u;
  if (!tc.alpha.empty() && static_cast<int>(tc.alpha.size()) != msm.num_stages)
    tc.alpha.assign(static_cast<size_t>(msm.num_stages), 1.0);

  size_t iters_per_epoch = (train_set.size() + static_cast<size_t>(tc.batch) - 1) /
                           static_cast<size_t>(tc.batch);
  rec.duration_iters = static_cast<uint64_t>(cfg.inner_epochs) * iters_per_epoch;

  try {
    approx_train(msm, ws, train_set, cfg.inner_epochs, tc);
  } catch (const Error&) {
    rec.acc = 0.0;
    rec.cost = 1.0;
    rec.reward = 0.0;
    rec.diverged = true;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

  TraceTable trace = build_trace_table(msm, ws, val_set);
  ThresholdPolicy policy = select_thresholds(trace, cfg.omega, cfg.grid);
  ExitStats stats = simulate_policy(trace, policy);
  rec.thresholds = policy.t;
  rec.acc = stats.overall_accuracy;
  rec.cost = stats.mean_macs / static_cast<double>(trace.base_static_macs);
  rec.reward = compute_reward(rec.acc, rec.cost, cfg.omega);
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

SearchResult search(const ModelGraph& g, const Dataset* train_set, const Dataset* val_set,
                    const SearchConfig& cfg, SyntheticReward synthetic, std::ostream* live_log) {
  cfg.validate();
  if (!synthetic && (!train_set || !val_set))
    fail("search requires train and validation datasets unless a synthetic reward is supplied");

  ControllerConfig cc;
  cc.G = cfg.G;
  cc.s = cfg.s;
  cc.k_groups = g.k_groups();

  SearchResult result{{}, {}, {}, {}, Controller(cc, cfg.seed ^ 0xc0ffee)};
  Controller& ctrl = result.controller;
  ctrl.check_arity(g);
  Rng rng(cfg.seed);
  OptimizerState adam;

  std::map<std::string, RewardRecord> cache;
  std::vector<std::string> record_order;  // first-seen order of unique settings

  int samples_drawn = 0;
  int round = 0;
  while (samples_drawn < cfg.budget) {
    ++round;
    int round_size = std::min(cfg.traj_per_update, cfg.budget - samples_drawn);
    std::vector<Controller::Sample> samples;
    for (int i = 0; i < round_size; ++i) samples.push_back(ctrl.sample(rng));

    // evaluate settings not seen before; order and results are independent
    // of the worker count
    std::vector<std::string> fresh;
    std::vector<TransformSetting> fresh_settings;
    for (const auto& smp : samples) {
      std::string enc = encode_tokens(smp.tokens);
      if (cache.count(enc) || std::find(fresh.begin(), fresh.end(), enc) != fresh.end()) continue;
      fresh.push_back(enc);
      fresh_settings.push_back(decode_setting(smp.tokens, g, cfg.G, cfg.s));
    }
    std::vector<RewardRecord> fresh_records(fresh.size());
    if (synthetic) {
      for (size_t i = 0; i < fresh.size(); ++i) {
        RewardRecord rec;
        rec.tokens = encode_setting(fresh_settings[i]);
        rec.encoding = fresh[i];
        rec.seed = candidate_seed(cfg.seed, rec.tokens);
        rec.reward = synthetic(fresh_settings[i], rec.tokens);
        rec.acc = rec.reward;
        rec.cost = 1.0;
        fresh_records[i] = std::move(rec);
      }
    } else if (!fresh.empty()) {
      int workers = std::max(1, std::min<int>(cfg.threads, static_cast<int>(fresh.size())));
      if (workers == 1) {
        for (size_t i = 0; i < fresh.size(); ++i)
          fresh_records[i] = evaluate_candidate(fresh_settings[i], g, *train_set, *val_set, cfg);
      } else {
        std::mutex mu;
        size_t next = 0;
        auto worker = [&]() {
          for (;;) {
            size_t i;
            {
              std::lock_guard<std::mutex> lk(mu);
              if (next >= fresh.size()) return;
              i = next++;
            }
            fresh_records[i] = evaluate_candidate(fresh_settings[i], g, *train_set, *val_set, cfg);
          }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
      }
    }
    for (size_t i = 0; i < fresh.size(); ++i) {
      cache.emplace(fresh[i], std::move(fresh_records[i]));
      record_order.push_back(fresh[i]);
    }

    // log + PPO batch
    auto emit = [&](const std::string& line) {
      result.log_lines.push_back(line);
      if (live_log) *live_log << line << "\n" << std::flush;
    };
    std::vector<Trajectory> batch;
    for (const auto& smp : samples) {
      ++samples_drawn;
      std::string enc = encode_tokens(smp.tokens);
      const RewardRecord& rec = cache.at(enc);
      bool cached = std::find(fresh.begin(), fresh.end(), enc) == fresh.end();
      emit(format_record(static_cast<size_t>(samples_drawn), rec, cached));
      batch.push_back({smp.tokens, smp.logp, smp.value, rec.reward});
    }
    PpoDiagnostics diag = ppo_update(ctrl, adam, batch, cfg.ppo, rng);
    char buf[256];
    snprintf(buf, sizeof(buf),
             "update=%d mean_ratio=%.9g clip_fraction=%.9g entropy=%.9g policy_loss=%.9g "
             "value_loss=%.9g aborted=%d",
             round, diag.mean_ratio, diag.clip_fraction, diag.entropy, diag.policy_loss,
             diag.value_loss, diag.aborted ? 1 : 0);
    emit(buf);
  }

  for (const std::string& enc : record_order) result.records.push_back(cache.at(enc));
  std::stable_sort(result.records.begin(), result.records.end(),
                   [](const RewardRecord& a, const RewardRecord& b) {
                     if (a.reward != b.reward) return a.reward > b.reward;
                     return a.encoding < b.encoding;
                   });
  result.modal_tokens = ctrl.greedy_tokens();

  if (!synthetic) {
    int k = std::min<int>(cfg.top_k, static_cast<int>(result.records.size()));
    for (int i = 0; i < k; ++i) {
      const RewardRecord& rec = result.records[static_cast<size_t>(i)];
      TopCandidate tc;
      tc.search_record = rec;
      tc.setting = decode_setting(rec.tokens, g, cfg.G, cfg.s);
      MultiStageModel msm = apply_transform(g, tc.setting);
      tc.weights = init_msm_weights(msm, rec.seed ^ 0xfull);
      TrainConfig full = cfg.train;
      full.seed = rec.seed ^ 0xf00dull;
      if (!full.alpha.empty() && static_cast<int>(full.alpha.size()) != msm.num_stages)
        full.alpha.assign(static_cast<size_t>(msm.num_stages), 1.0);
      train(msm, tc.weights, *train_set, val_set, full);
      TraceTable trace = build_trace_table(msm, tc.weights, *val_set);
      tc.thresholds = select_thresholds(trace, cfg.omega, cfg.grid);
      ExitStats stats = simulate_policy(trace, tc.thresholds);
      tc.val_acc = stats.overall_accuracy;
      tc.val_cost = stats.mean_macs / static_cast<double>(trace.base_static_macs);
      tc.val_reward = compute_reward(tc.val_acc, tc.val_cost, cfg.omega);
      result.top.push_back(std::move(tc));
    }
  }
  return result;
}

}  // namespace s2d
