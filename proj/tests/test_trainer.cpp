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
#include <filesystem>
#include <fstream>

#include "s2d/multistage.hpp"
#include "s2d/trainer.hpp"
#include "test_util.hpp"

using namespace s2d;

namespace {

const char* kTinyNet =
    "input 3x8x8\n"
    "conv out=4 k=3 s=1 p=1 bn relu\n"
    "conv out=4 k=3 s=1 p=1 bn relu\n"
    "gap\n"
    "fc out=2\n";

// Two classes separated by mean intensity; linearly separable by design.
Dataset separable_set(int n, uint64_t seed) {
  Dataset ds;
  ds.channels = 3;
  ds.height = 8;
  ds.width = 8;
  ds.classes = 2;
  ds.split = "train";
  Rng rng(seed);
  size_t plane = 3 * 8 * 8;
  ds.pixels.resize(static_cast<size_t>(n) * plane);
  ds.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int label = i % 2;
    ds.labels[static_cast<size_t>(i)] = static_cast<uint16_t>(label);
    double base = label == 0 ? 0.25 : 0.75;
    for (size_t j = 0; j < plane; ++j) {
      double v = base + rng.uniform(-0.05, 0.05);
      ds.pixels[static_cast<size_t>(i) * plane + j] =
          static_cast<uint8_t>(std::lround(std::min(std::max(v, 0.0), 1.0) * 255.0));
    }
  }
  return ds;
}

MultiStageModel two_stage_model(const ModelGraph& g) {
  TransformSetting st;
  st.G = 2;
  st.s = 2;
  st.model_hash = g.hash();
  st.groups.assign(static_cast<size_t>(g.k_groups()), {{0, 1, 2}, {1}});
  return apply_transform(g, st);
}

}  // namespace

TEST_CASE("joint_loss spot values") {
  Tensor uniform = Tensor::zeros(Shape{4, 10});
  std::vector<int> labels = {0, 3, 5, 9};
  SUBCASE("single stage with unit weight is plain cross-entropy") {
    Tensor want = softmax_cross_entropy(nullptr, uniform, labels);
    Tensor got = joint_loss(nullptr, {uniform}, labels, {1.0});
    CHECK(got.item() == want.item());
  }
  SUBCASE("alpha selecting the last stage ignores the others") {
    Rng rng(3);
    Tensor noisy = test::random_tensor(rng, Shape{4, 10}, 3.0);
    Tensor got = joint_loss(nullptr, {noisy, uniform}, labels, {0.0, 1.0});
    CHECK(got.item() == softmax_cross_entropy(nullptr, uniform, labels).item());
  }
  SUBCASE("three uniform stages give 3 ln 10") {
    Tensor got = joint_loss(nullptr, {uniform, uniform, uniform}, labels, {1, 1, 1});
    CHECK(got.item() == doctest::Approx(3.0 * std::log(10.0)).epsilon(1e-12));
  }
  SUBCASE("linearity in alpha") {
    Rng rng(5);
    Tensor a = test::random_tensor(rng, Shape{4, 10});
    Tensor b = test::random_tensor(rng, Shape{4, 10});
    double l1 = joint_loss(nullptr, {a, b}, labels, {2.0, 0.5}).item();
    double ca = softmax_cross_entropy(nullptr, a, labels).item();
    double cb = softmax_cross_entropy(nullptr, b, labels).item();
    CHECK(l1 == doctest::Approx(2.0 * ca + 0.5 * cb).epsilon(1e-12));
  }
  SUBCASE("mismatched stage count is an error") {
    CHECK_THROWS_AS(joint_loss(nullptr, {uniform, uniform}, labels, {1.0}), Error);
  }
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.alpha = {0.0, 0.0};
  CHECK_THROWS_AS(tc.validate(2), Error);
  tc.alpha = {1.0, -0.5};
  CHECK_THROWS_AS(tc.validate(2), Error);
  tc.alpha = {1.0, 1.0};
  tc.milestones = {1.5};
  CHECK_THROWS_AS(tc.validate(2), Error);
}

TEST_CASE("zero learning rate leaves trainable weights unchanged") {
  ModelGraph g = build_model(kTinyNet);
  MultiStageModel msm = two_stage_model(g);
  Dataset ds = separable_set(32, 1);
  WeightStore ws = init_msm_weights(msm, 5);
  WeightStore before = ws.deep_copy();
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch = 16;
  tc.lr = 0.0;
  tc.warmup_iters = 0;
  tc.alpha = {1, 1};
  train(msm, ws, ds, nullptr, tc);
  for (const auto& [name, t] : ws.items())
    if (t.requires_grad()) CHECK(t.vec() == before.at(name).vec());
}

TEST_CASE("alpha (1,0) sends no gradient into stage 2") {
  ModelGraph g = build_model(kTinyNet);
  MultiStageModel msm = two_stage_model(g);
  Dataset ds = separable_set(16, 2);
  WeightStore ws = init_msm_weights(msm, 7);

  std::vector<size_t> idx(16);
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Tensor images = ds.batch(idx);
  std::vector<int> labels = ds.batch_labels(idx);
  Tape tape;
  std::vector<Tensor> logits = forward_multistage(msm, ws, images, &tape, true);
  Tensor loss = joint_loss(&tape, logits, labels, {1.0, 0.0});
  ws.zero_grads();
  tape.backward(loss);

  bool stage1_has_signal = false;
  for (auto& [name, t] : ws.items()) {
    if (!t.requires_grad()) continue;
    if (name.rfind("s2.", 0) == 0) {
      if (t.has_grad())
        for (double gv : t.grad()) CHECK(gv == 0.0);
    } else if (t.has_grad()) {
      for (double gv : t.grad())
        if (gv != 0.0) stage1_has_signal = true;
    }
  }
  CHECK(stage1_has_signal);
}

TEST_CASE("separable two-class set trains to 99% within 30 epochs") {
  ModelGraph g = build_model(kTinyNet);
  MultiStageModel msm = two_stage_model(g);
  Dataset ds = separable_set(200, 3);
  WeightStore ws = init_msm_weights(msm, 11);
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch = 32;
  tc.lr = 0.05;
  tc.warmup_iters = 0;
  tc.weight_decay = 0.0;
  tc.alpha = {1, 1};
  tc.seed = 4;
  train(msm, ws, ds, nullptr, tc);
  std::vector<double> acc = evaluate_stages(msm, ws, ds);
  CHECK(acc.back() >= 0.99);
}

TEST_CASE("approx_train") {
  ModelGraph g = build_model(kTinyNet);
  MultiStageModel msm = two_stage_model(g);
  Dataset ds = separable_set(64, 4);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch = 16;
  tc.lr = 0.05;
  tc.warmup_iters = 0;
  tc.milestones = {};
  tc.alpha = {1, 1};
  tc.seed = 9;

  SUBCASE("equals full train when the schedule is constant") {
    WeightStore a = init_msm_weights(msm, 13);
    WeightStore b = init_msm_weights(msm, 13);
    train(msm, a, ds, nullptr, tc);
    approx_train(msm, b, ds, 3, tc);
    for (const auto& [name, t] : a.items()) CHECK(t.vec() == b.at(name).vec());
  }
  SUBCASE("identical seeds give bitwise-identical weights") {
    WeightStore a = init_msm_weights(msm, 13);
    WeightStore b = init_msm_weights(msm, 13);
    approx_train(msm, a, ds, 2, tc);
    approx_train(msm, b, ds, 2, tc);
    for (const auto& [name, t] : a.items()) CHECK(t.vec() == b.at(name).vec());
  }
  SUBCASE("six inner epochs beat chance on the separable set") {
    WeightStore ws = init_msm_weights(msm, 13);
    approx_train(msm, ws, ds, 6, tc);
    std::vector<double> acc = evaluate_stages(msm, ws, ds);
    for (double a : acc) CHECK(a > 0.6);
  }
  SUBCASE("inner_epochs must be positive") {
    WeightStore ws = init_msm_weights(msm, 13);
    CHECK_THROWS_AS(approx_train(msm, ws, ds, 0, tc), Error);
  }
}

TEST_CASE("trace table") {
  ModelGraph g = build_model(kTinyNet);
  MultiStageModel msm = two_stage_model(g);
  Dataset ds = separable_set(48, 5);

  SUBCASE("a saturated head yields confidence exactly 1") {
    WeightStore ws = init_msm_weights(msm, 17);
    for (auto& [name, t] : ws.items()) {
      if (name.ends_with("head.w")) std::fill(t.vec().begin(), t.vec().end(), 0.0);
      if (name.ends_with("head.b")) t.vec() = {60.0, 0.0};
    }
    TraceTable tr = build_trace_table(msm, ws, ds);
    for (size_t r = 0; r < tr.rows(); ++r)
      for (int s = 0; s < tr.num_stages; ++s) CHECK(tr.confidence(r, s) == 1.0);
  }
  SUBCASE("confidences of a random model are bounded below by 1/K") {
    WeightStore ws = init_msm_weights(msm, 19);
    TraceTable tr = build_trace_table(msm, ws, ds);
    REQUIRE(tr.rows() == 48);
    double mean = 0.0;
    for (size_t r = 0; r < tr.rows(); ++r) {
      for (int s = 0; s < tr.num_stages; ++s) {
        CHECK(tr.confidence(r, s) >= 1.0 / 2.0);
        CHECK(tr.confidence(r, s) <= 1.0);
        mean += tr.confidence(r, s);
      }
    }
    CHECK(mean / static_cast<double>(tr.rows() * 2) >= 0.5);
  }
  SUBCASE("table-driven per-stage accuracy equals direct evaluation exactly") {
    WeightStore ws = init_msm_weights(msm, 23);
    approx_train(msm, ws, ds, 1, TrainConfig{.epochs = 1, .batch = 16, .lr = 0.05,
                                             .alpha = {1, 1}, .warmup_iters = 0, .seed = 2});
    TraceTable tr = build_trace_table(msm, ws, ds);
    std::vector<double> want = evaluate_stages(msm, ws, ds);
    for (int s = 0; s < tr.num_stages; ++s) {
      int64_t hits = 0;
      for (size_t r = 0; r < tr.rows(); ++r)
        if (tr.is_correct(r, s)) ++hits;
      CHECK(static_cast<double>(hits) / static_cast<double>(tr.rows()) == want[static_cast<size_t>(s)]);
    }
  }
  SUBCASE("binary round trip") {
    WeightStore ws = init_msm_weights(msm, 29);
    TraceTable tr = build_trace_table(msm, ws, ds);
    std::string path = (std::filesystem::temp_directory_path() / "s2d_trace_test.bin").string();
    save_trace(tr, path);
    TraceTable back = load_trace(path);
    CHECK(back.num_stages == tr.num_stages);
    CHECK(back.accumulated == tr.accumulated);
    CHECK(back.base_static_macs == tr.base_static_macs);
    CHECK(back.labels == tr.labels);
    CHECK(back.conf == tr.conf);
    CHECK(back.pred == tr.pred);
    CHECK(back.correct == tr.correct);
    std::filesystem::remove(path);
  }
}

TEST_CASE("augmentation") {
  Rng fill(41);
  Tensor base = test::random_tensor(fill, Shape{4, 2, 6, 6});
  SUBCASE("disabled augmentation is the identity") {
    Tensor x = base.clone();
    Rng rng(1);
    augment_batch(x, rng, false, 0);
    CHECK(x.vec() == base.vec());
  }
  SUBCASE("flip preserves multisets of pixel values per row") {
    Tensor x = base.clone();
    Rng rng(2);
    augment_batch(x, rng, true, 0);
    for (int64_t i = 0; i < x.numel(); i += 6) {
      double s0 = 0.0, s1 = 0.0;
      for (int j = 0; j < 6; ++j) {
        s0 += base.data()[i + j];
        s1 += x.data()[i + j];
      }
      CHECK(s0 == doctest::Approx(s1).epsilon(1e-12));
    }
  }
  SUBCASE("pad-crop keeps the shape and zero-fills borders") {
    Tensor x = Tensor::full(Shape{8, 1, 6, 6}, 1.0);
    Rng rng(3);
    augment_batch(x, rng, false, 2);
    CHECK(x.shape() == Shape{8, 1, 6, 6});
    bool any_zero = false;
    for (int64_t i = 0; i < x.numel(); ++i) {
      CHECK((x.data()[i] == 0.0 || x.data()[i] == 1.0));
      if (x.data()[i] == 0.0) any_zero = true;
    }
    CHECK(any_zero);  // at least one sample shifted
  }
  SUBCASE("deterministic under the seed") {
    Tensor a = base.clone(), b = base.clone();
    Rng r1(7), r2(7);
    augment_batch(a, r1, true, 2);
    augment_batch(b, r2, true, 2);
    CHECK(a.vec() == b.vec());
  }
}

TEST_CASE("history CSV") {
  TrainResult r;
  r.history.push_back({1, 2.5, 0.1, {0.5, 0.6}});
  r.history.push_back({2, 1.5, 0.1, {0.7, 0.8}});
  std::string path = (std::filesystem::temp_directory_path() / "s2d_history.csv").string();
  save_history_csv(r, path);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "epoch,loss,lr,acc_stage_1,acc_stage_2");
  std::getline(is, line);
  CHECK(line.rfind("1,2.5", 0) == 0);
  std::filesystem::remove(path);
}
