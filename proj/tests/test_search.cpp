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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "s2d/search.hpp"
#include "test_util.hpp"

using namespace s2d;

namespace {

const char* kOneGroup =
    "input 3x8x8\n"
    "conv out=8 k=3 s=1 p=1 bn relu\n"
    "conv out=8 k=3 s=1 p=1 bn relu\n"
    "conv out=8 k=3 s=1 p=1 bn relu\n"
    "gap\n"
    "fc out=4\n";

ControllerConfig one_group_cc(int G, int s) {
  ControllerConfig cc;
  cc.G = G;
  cc.s = s;
  cc.k_groups = 1;
  return cc;
}

}  // namespace

TEST_CASE("fresh controller samples split options uniformly") {
  Controller ctrl(one_group_cc(4, 2), 42);
  Rng rng(1);
  const int n = 10000;
  std::map<int, int> split_counts, mask_counts;
  for (int i = 0; i < n; ++i) {
    auto smp = ctrl.sample(rng);
    REQUIRE(smp.tokens.size() == 2);
    ++split_counts[smp.tokens[0]];
    ++mask_counts[smp.tokens[1]];
  }
  // 3 split options: 3 sigma of a fair multinomial
  double sigma_split = std::sqrt(n * (1.0 / 3) * (2.0 / 3));
  for (int opt = 0; opt < 3; ++opt)
    CHECK(std::fabs(split_counts[opt] - n / 3.0) <= 3.0 * sigma_split);
  // 2 reuse masks (1 location)
  double sigma_mask = std::sqrt(n * 0.25);
  for (int tok = 3; tok <= 4; ++tok)
    CHECK(std::fabs(mask_counts[tok] - n / 2.0) <= 3.0 * sigma_mask);
}

TEST_CASE("s=1 sampling is deterministic") {
  Controller ctrl(one_group_cc(4, 1), 7);
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    auto smp = ctrl.sample(rng);
    CHECK(smp.tokens == std::vector<int>({0}));
    CHECK(smp.logp[0] == 0.0);  // probability 1
  }
}

TEST_CASE("every sample decodes into a valid setting") {
  ModelGraph g = build_model(kOneGroup);
  Controller ctrl(one_group_cc(8, 3), 11);
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    auto smp = ctrl.sample(rng);
    TransformSetting st = decode_setting(smp.tokens, g, 8, 3);
    CHECK(encode_setting(st) == smp.tokens);  // round trip
    validate_setting(st, g);                  // throws on violation
  }
}

TEST_CASE("controller evaluate matches sampled log-probabilities") {
  Controller ctrl(one_group_cc(8, 3), 13);
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    auto smp = ctrl.sample(rng);
    auto ev = ctrl.evaluate(smp.tokens, nullptr);
    REQUIRE(ev.logp.size() == smp.logp.size());
    for (size_t d = 0; d < smp.logp.size(); ++d)
      CHECK(ev.logp[d].item() == doctest::Approx(smp.logp[d]).epsilon(1e-12));
    CHECK(ev.value.item() == doctest::Approx(smp.value).epsilon(1e-12));
  }
}

TEST_CASE("ppo_update mechanics") {
  SUBCASE("zero advantages leave the policy predictors untouched") {
    Controller ctrl(one_group_cc(4, 2), 17);
    Rng rng(7);
    std::vector<Trajectory> batch;
    for (int i = 0; i < 4; ++i) {
      auto smp = ctrl.sample(rng);
      batch.push_back({smp.tokens, smp.logp, smp.value, smp.value});  // reward == baseline
    }
    WeightStore before = ctrl.params().deep_copy();
    PpoConfig cfg;
    cfg.ent_coef = 0.0;  // isolate the policy term
    OptimizerState adam;
    ppo_update(ctrl, adam, batch, cfg, rng);
    CHECK(ctrl.params().at("p0.split.w").vec() == before.at("p0.split.w").vec());
    CHECK(ctrl.params().at("p0.split.b").vec() == before.at("p0.split.b").vec());
    CHECK(ctrl.params().at("p0.concat.w").vec() == before.at("p0.concat.w").vec());
    // the value head is allowed to move
  }
  SUBCASE("a positive-advantage trajectory gains log-probability") {
    Controller ctrl(one_group_cc(4, 2), 19);
    Rng rng(9);
    auto smp = ctrl.sample(rng);
    double before = 0.0;
    for (double lp : smp.logp) before += lp;
    std::vector<Trajectory> batch{{smp.tokens, smp.logp, 0.0, 1.0}};  // advantage +1
    PpoConfig cfg;
    OptimizerState adam;
    ppo_update(ctrl, adam, batch, cfg, rng);
    auto ev = ctrl.evaluate(smp.tokens, nullptr);
    double after = 0.0;
    for (const Tensor& lp : ev.logp) after += lp.item();
    CHECK(after > before);
  }
  SUBCASE("at ratio 1 the clipped and unclipped objectives coincide") {
    Controller ctrl(one_group_cc(4, 2), 23);
    Rng rng(11);
    auto smp = ctrl.sample(rng);
    double advantage = 0.8;
    std::vector<Trajectory> batch{{smp.tokens, smp.logp, smp.value, smp.value + advantage}};
    PpoConfig cfg;
    cfg.epochs = 1;  // single pass: ratios stay exactly 1 on the first minibatch
    cfg.ent_coef = 0.0;
    cfg.vf_coef = 0.0;
    OptimizerState adam;
    PpoDiagnostics diag = ppo_update(ctrl, adam, batch, cfg, rng);
    CHECK(diag.mean_ratio == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(diag.clip_fraction == 0.0);
    CHECK(diag.policy_loss == doctest::Approx(-advantage).epsilon(1e-9));
  }
  SUBCASE("a non-finite reward aborts and rolls back") {
    Controller ctrl(one_group_cc(4, 2), 29);
    Rng rng(13);
    auto smp = ctrl.sample(rng);
    std::vector<Trajectory> batch{
        {smp.tokens, smp.logp, smp.value, std::numeric_limits<double>::quiet_NaN()}};
    WeightStore before = ctrl.params().deep_copy();
    PpoConfig cfg;
    OptimizerState adam;
    PpoDiagnostics diag = ppo_update(ctrl, adam, batch, cfg, rng);
    CHECK(diag.aborted);
    for (const auto& [name, t] : ctrl.params().items())
      CHECK(t.vec() == before.at(name).vec());
  }
  SUBCASE("an empty batch is rejected") {
    Controller ctrl(one_group_cc(4, 2), 31);
    Rng rng(15);
    OptimizerState adam;
    std::vector<Trajectory> batch;
    CHECK_THROWS_AS(ppo_update(ctrl, adam, batch, {}, rng), Error);
  }
}

namespace {

SearchConfig bandit_config(uint64_t seed, int budget = 500) {
  SearchConfig cfg;
  cfg.G = 4;
  cfg.s = 2;
  cfg.budget = budget;
  cfg.traj_per_update = 8;
  cfg.top_k = 0;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("bandit: the controller concentrates on the reward-1 arm") {
  ModelGraph g = build_model(kOneGroup);
  const std::vector<int> best = {1, 4};  // one of the 6 settings
  auto reward = [&](const TransformSetting&, const std::vector<int>& tokens) {
    return tokens == best ? 1.0 : 0.5;
  };
  int hits = 0;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    SearchResult res = search(g, nullptr, nullptr, bandit_config(seed), reward);
    if (res.modal_tokens == best) ++hits;
  }
  CHECK(hits >= 19);  // 95% of 20 seeded runs
}

TEST_CASE("search bookkeeping") {
  ModelGraph g = build_model(kOneGroup);
  auto reward = [](const TransformSetting&, const std::vector<int>& tokens) {
    return tokens[0] == 2 ? 0.9 : 0.2;
  };
  SUBCASE("budget one with one trajectory per update runs exactly one update") {
    SearchConfig cfg = bandit_config(3, 1);
    cfg.traj_per_update = 1;
    SearchResult res = search(g, nullptr, nullptr, cfg, reward);
    int updates = 0;
    for (const auto& line : res.log_lines)
      if (line.rfind("update=", 0) == 0) ++updates;
    CHECK(updates == 1);
  }
  SUBCASE("records are unique, ranked, and elitist") {
    SearchConfig cfg = bandit_config(5, 96);
    SearchResult res = search(g, nullptr, nullptr, cfg, reward);
    CHECK(res.records.size() <= 6);  // space size
    for (size_t i = 1; i < res.records.size(); ++i)
      CHECK(res.records[i - 1].reward >= res.records[i].reward);
    double best_logged = 0.0;
    for (const auto& line : res.log_lines) {
      auto pos = line.find("reward=");
      if (line.rfind("sample=", 0) == 0 && pos != std::string::npos)
        best_logged = std::max(best_logged, std::atof(line.c_str() + pos + 7));
    }
    CHECK(res.records.front().reward == best_logged);
  }
  SUBCASE("identical seeds reproduce the log bitwise") {
    SearchConfig cfg = bandit_config(7, 64);
    SearchResult a = search(g, nullptr, nullptr, cfg, reward);
    SearchResult b = search(g, nullptr, nullptr, cfg, reward);
    REQUIRE(a.log_lines.size() == b.log_lines.size());
    for (size_t i = 0; i < a.log_lines.size(); ++i) CHECK(a.log_lines[i] == b.log_lines[i]);
  }
  SUBCASE("omega must not reward cost") {
    SearchConfig cfg = bandit_config(9, 8);
    cfg.omega = 0.1;
    CHECK_THROWS_AS(search(g, nullptr, nullptr, cfg, reward), Error);
  }
}

TEST_CASE("worker count does not change search results") {
  ModelGraph g = load_model_file("models/toy6.txt");
  SyntheticSpec spec;
  spec.train_n = 96;
  spec.val_n = 48;
  spec.test_n = 48;
  spec.seed = 9;
  DataBundle data = generate_synthetic(spec);

  SearchConfig cfg;
  cfg.G = 4;
  cfg.s = 2;
  cfg.budget = 16;
  cfg.traj_per_update = 8;
  cfg.inner_epochs = 1;
  cfg.top_k = 0;
  cfg.seed = 21;
  cfg.train.batch = 32;
  cfg.train.lr = 0.05;
  cfg.train.alpha = {1, 1};

  cfg.threads = 1;
  SearchResult serial = search(g, &data.train, &data.val, cfg);
  cfg.threads = 3;
  SearchResult pooled = search(g, &data.train, &data.val, cfg);
  REQUIRE(serial.log_lines.size() == pooled.log_lines.size());
  for (size_t i = 0; i < serial.log_lines.size(); ++i)
    CHECK(serial.log_lines[i] == pooled.log_lines[i]);
}

TEST_CASE("evaluate_candidate end to end on the toy problem") {
  ModelGraph g = load_model_file("models/toy6.txt");
  SyntheticSpec spec;
  spec.train_n = 96;
  spec.val_n = 48;
  spec.test_n = 48;
  spec.seed = 5;
  DataBundle data = generate_synthetic(spec);

  SearchConfig cfg;
  cfg.G = 4;
  cfg.s = 2;
  cfg.inner_epochs = 1;
  cfg.seed = 11;
  cfg.train.batch = 32;
  cfg.train.lr = 0.05;
  cfg.train.alpha = {1, 1};

  SUBCASE("the identity setting has cost exactly 1") {
    SearchConfig id_cfg = cfg;
    id_cfg.s = 1;
    TransformSetting id = identity_setting(g, 4);
    RewardRecord rec = evaluate_candidate(id, g, data.train, data.val, id_cfg);
    CHECK(rec.cost == 1.0);
    CHECK(rec.reward == rec.acc);  // cost^omega == 1
    CHECK_FALSE(rec.diverged);
  }
  SUBCASE("re-evaluating the same setting reproduces the record bitwise") {
    TransformSetting st = decode_setting({1, 4, 0, 3}, g, 4, 2);
    RewardRecord a = evaluate_candidate(st, g, data.train, data.val, cfg);
    RewardRecord b = evaluate_candidate(st, g, data.train, data.val, cfg);
    CHECK(a.acc == b.acc);
    CHECK(a.cost == b.cost);
    CHECK(a.reward == b.reward);
    CHECK(a.thresholds == b.thresholds);
    CHECK(a.seed == b.seed);
  }
  SUBCASE("an all-to-stage-1 split undercuts the identity cost when exits happen") {
    // stage 1 gets 3 of 4 groups: cheap early exits must reduce mean cost
    TransformSetting st = decode_setting({2, 3, 2, 3}, g, 4, 2);
    RewardRecord rec = evaluate_candidate(st, g, data.train, data.val, cfg);
    SearchConfig id_cfg = cfg;
    id_cfg.s = 1;
    RewardRecord id = evaluate_candidate(identity_setting(g, 4), g, data.train, data.val, id_cfg);
    if (!rec.thresholds.empty() && rec.thresholds[0] <= 1.0) CHECK(rec.cost < id.cost);
  }
}
