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

#include "s2d/checkpoint.hpp"
#include "s2d/optimizer.hpp"
#include "s2d/tensor.hpp"
#include "test_util.hpp"

using namespace s2d;

TEST_CASE("conv2d all-ones 4x4 with 3x3 kernel, pad 1") {
  Tensor x = Tensor::full(Shape{1, 1, 4, 4}, 1.0);
  Tensor w = Tensor::full(Shape{1, 1, 3, 3}, 1.0);
  Tensor y = conv2d(nullptr, x, w, 1, 1);
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  CHECK(y.data()[0] == doctest::Approx(4.0));   // corner
  CHECK(y.data()[5] == doctest::Approx(9.0));   // interior
  CHECK(y.data()[3] == doctest::Approx(4.0));
  CHECK(y.data()[10] == doctest::Approx(9.0));
}

TEST_CASE("conv2d 1x1 kernel scales") {
  Tensor x = Tensor::from(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w = Tensor::from(Shape{1, 1, 1, 1}, {2});
  Tensor y = conv2d(nullptr, x, w, 1, 0);
  for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(2.0 * (i + 1)));
}

TEST_CASE("conv2d matches the naive loop oracle") {
  Rng rng(11);
  Tensor x = test::random_tensor(rng, Shape{2, 3, 8, 8});
  Tensor w = test::random_tensor(rng, Shape{4, 3, 3, 3});
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      if ((8 + 2 * pad - 3) % stride != 0) continue;
      Tensor got = conv2d(nullptr, x, w, stride, pad);
      Tensor want = test::conv2d_naive(x, w, stride, pad);
      REQUIRE(got.shape() == want.shape());
      for (int64_t i = 0; i < got.numel(); ++i)
        CHECK(std::fabs(got.data()[i] - want.data()[i]) < 1e-10);
    }
  }
}

TEST_CASE("conv2d rejects bad shapes") {
  Tensor x = Tensor::zeros(Shape{1, 3, 8, 8});
  Tensor w = Tensor::zeros(Shape{4, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(nullptr, x, w, 1, 1), Error);  // channel mismatch
  Tensor small = Tensor::zeros(Shape{1, 3, 2, 2});
  Tensor w5 = Tensor::zeros(Shape{4, 3, 5, 5});
  CHECK_THROWS_AS(conv2d(nullptr, small, w5, 1, 0), Error);  // empty output
}

TEST_CASE("strided conv drops trailing positions under the floor convention") {
  Rng rng(41);
  Tensor x = test::random_tensor(rng, Shape{1, 2, 32, 32});
  Tensor w = test::random_tensor(rng, Shape{2, 2, 3, 3});
  Tensor y = conv2d(nullptr, x, w, 2, 1);
  CHECK(y.shape() == Shape{1, 2, 16, 16});
  Tensor want = test::conv2d_naive(x, w, 2, 1);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(y.data()[i] - want.data()[i]) < 1e-10);
}

TEST_CASE("batch_norm eval with matching running stats is zero") {
  Tensor x = Tensor::full(Shape{2, 3, 4, 4}, 2.5);
  Tensor gamma = Tensor::full(Shape{3}, 1.0);
  Tensor beta = Tensor::zeros(Shape{3});
  Tensor rmean = Tensor::full(Shape{3}, 2.5);
  Tensor rvar = Tensor::full(Shape{3}, 1.0);
  Tensor y = batch_norm(nullptr, x, gamma, beta, rmean, rvar, false);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(y.data()[i]) < 1e-12);
}

TEST_CASE("batch_norm train mode centers each channel") {
  Rng rng(3);
  Tensor x = test::random_tensor(rng, Shape{4, 2, 5, 5}, 2.0);
  Tensor gamma = Tensor::full(Shape{2}, 1.0);
  Tensor beta = Tensor::zeros(Shape{2});
  Tensor rmean = Tensor::zeros(Shape{2});
  Tensor rvar = Tensor::full(Shape{2}, 1.0);
  Tensor y = batch_norm(nullptr, x, gamma, beta, rmean, rvar, true);
  for (int c = 0; c < 2; ++c) {
    double s = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) s += y.data()[(n * 2 + c) * 25 + i];
    CHECK(std::fabs(s / 100.0) < 1e-8);
  }
  // running stats moved toward the batch statistics
  CHECK(rmean.data()[0] != 0.0);
}

TEST_CASE("batch_norm scale gradient matches finite differences") {
  Rng rng(5);
  WeightStore ws;
  Tensor x = test::random_tensor(rng, Shape{3, 2, 4, 4});
  ws.add("gamma", Tensor::full(Shape{2}, 1.0, true));
  ws.add("beta", Tensor::zeros(Shape{2}, true));
  Tensor rmean = Tensor::zeros(Shape{2});
  Tensor rvar = Tensor::full(Shape{2}, 1.0);
  std::vector<int> labels = {0, 1, 0};

  auto loss_value = [&]() {
    Tensor rm = rmean.clone(), rv = rvar.clone();
    Tensor y = batch_norm(nullptr, x, ws.at("gamma"), ws.at("beta"), rm, rv, true);
    Tensor pooled = global_avg_pool(nullptr, y);
    return softmax_cross_entropy(nullptr, pooled, labels).item();
  };
  auto backward = [&]() {
    Tape tape;
    Tensor rm = rmean.clone(), rv = rvar.clone();
    Tensor y = batch_norm(&tape, x, ws.at("gamma"), ws.at("beta"), rm, rv, true);
    Tensor pooled = global_avg_pool(&tape, y);
    Tensor loss = softmax_cross_entropy(&tape, pooled, labels);
    tape.backward(loss);
  };
  auto res = test::finite_difference_check(ws, loss_value, backward);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("channel_concat preserves blocks and slices recover inputs") {
  Rng rng(7);
  Tensor a = test::random_tensor(rng, Shape{2, 2, 3, 3});
  Tensor b = test::random_tensor(rng, Shape{2, 3, 3, 3});
  std::vector<Tensor> parts = {a, b};
  Tensor cat = channel_concat(nullptr, parts);
  REQUIRE(cat.shape() == Shape{2, 5, 3, 3});
  Tensor a2 = channel_slice(nullptr, cat, 0, 2);
  Tensor b2 = channel_slice(nullptr, cat, 2, 5);
  CHECK(a2.vec() == a.vec());
  CHECK(b2.vec() == b.vec());
}

TEST_CASE("channel_concat rejects mismatched spatial dims") {
  Tensor a = Tensor::zeros(Shape{1, 2, 3, 3});
  Tensor b = Tensor::zeros(Shape{1, 2, 4, 4});
  std::vector<Tensor> parts = {a, b};
  CHECK_THROWS_AS(channel_concat(nullptr, parts), Error);
}

TEST_CASE("global_avg_pool of a constant map is that constant") {
  Tensor x = Tensor::full(Shape{2, 3, 4, 4}, 0.7);
  Tensor y = global_avg_pool(nullptr, x);
  REQUIRE(y.shape() == Shape{2, 3});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(0.7));
}

TEST_CASE("linear with identity weight and zero bias is identity") {
  Tensor x = Tensor::from(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor w = Tensor::from(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor b = Tensor::zeros(Shape{3});
  Tensor y = linear(nullptr, x, w, b);
  CHECK(y.vec() == x.vec());
}

TEST_CASE("max_pool picks window maxima") {
  Tensor x = Tensor::from(Shape{1, 1, 4, 4}, {1, 2, 5, 4, 3, 4, 1, 2, 9, 0, 1, 1, 0, 0, 2, 3});
  Tensor y = max_pool(nullptr, x, 2, 2);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.data()[0] == 4.0);
  CHECK(y.data()[1] == 5.0);
  CHECK(y.data()[2] == 9.0);
  CHECK(y.data()[3] == 3.0);
}

TEST_CASE("softmax_cross_entropy spot values") {
  SUBCASE("uniform logits give ln K") {
    Tensor logits = Tensor::zeros(Shape{2, 10});
    Tensor loss = softmax_cross_entropy(nullptr, logits, {3, 7});
    CHECK(loss.item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  }
  SUBCASE("huge true-class margin drives the loss to zero") {
    Tensor logits = Tensor::zeros(Shape{1, 5});
    logits.data()[2] = 60.0;
    CHECK(softmax_cross_entropy(nullptr, logits, {2}).item() < 1e-12);
  }
  SUBCASE("random logits match the direct formula") {
    Rng rng(13);
    Tensor logits = test::random_tensor(rng, Shape{4, 5}, 2.0);
    std::vector<int> labels = {1, 0, 4, 2};
    double want = 0.0;
    for (int i = 0; i < 4; ++i) {
      double z = 0.0;
      for (int j = 0; j < 5; ++j) z += std::exp(logits.data()[i * 5 + j]);
      want += std::log(z) - logits.data()[i * 5 + labels[static_cast<size_t>(i)]];
    }
    want /= 4.0;
    CHECK(std::fabs(softmax_cross_entropy(nullptr, logits, labels).item() - want) < 1e-10);
  }
  SUBCASE("label out of range is an error") {
    Tensor logits = Tensor::zeros(Shape{1, 3});
    CHECK_THROWS_AS(softmax_cross_entropy(nullptr, logits, {3}), Error);
  }
}

TEST_CASE("softmax rows are a probability simplex") {
  Rng rng(17);
  Tensor logits = test::random_tensor(rng, Shape{8, 6}, 3.0);
  Tensor p = softmax(logits);
  for (int i = 0; i < 8; ++i) {
    double s = 0.0;
    for (int j = 0; j < 6; ++j) {
      CHECK(p.data()[i * 6 + j] >= 0.0);
      s += p.data()[i * 6 + j];
    }
    CHECK(std::fabs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("backward on simple closed forms") {
  SUBCASE("sum gives all-ones gradient") {
    Rng rng(19);
    Tensor x = test::random_tensor(rng, Shape{3, 4}, 1.0, true);
    Tape tape;
    Tensor loss = sum(&tape, x);
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("half squared norm gives x back") {
    Rng rng(23);
    Tensor x = test::random_tensor(rng, Shape{5}, 1.0, true);
    Tape tape;
    Tensor loss = affine(&tape, sum(&tape, mul(&tape, x, x)), 0.5, 0.0);
    tape.backward(loss);
    for (int64_t i = 0; i < x.numel(); ++i)
      CHECK(x.grad()[static_cast<size_t>(i)] == doctest::Approx(x.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward errors") {
  Tensor x = Tensor::zeros(Shape{2, 2}, true);
  Tape tape;
  Tensor y = relu(&tape, x);
  CHECK_THROWS_AS(tape.backward(y), Error);  // non-scalar
  Tensor z = Tensor::scalar(1.0);            // detached
  Tape t2;
  CHECK_THROWS_AS(t2.backward(z), Error);
}

TEST_CASE("three-layer conv net matches finite differences") {
  Rng rng(29);
  WeightStore ws;
  ws.add("c1", test::random_tensor(rng, Shape{4, 2, 3, 3}, 0.5, true));
  ws.add("c2", test::random_tensor(rng, Shape{4, 4, 3, 3}, 0.5, true));
  ws.add("fc.w", test::random_tensor(rng, Shape{3, 4}, 0.5, true));
  ws.add("fc.b", Tensor::zeros(Shape{3}, true));
  Tensor x = test::random_tensor(rng, Shape{2, 2, 6, 6});
  std::vector<int> labels = {0, 2};

  auto forward = [&](Tape* tape) {
    Tensor h = relu(tape, conv2d(tape, x, ws.at("c1"), 1, 1));
    h = relu(tape, conv2d(tape, h, ws.at("c2"), 1, 1));
    Tensor pooled = global_avg_pool(tape, h);
    Tensor logits = linear(tape, pooled, ws.at("fc.w"), ws.at("fc.b"));
    return softmax_cross_entropy(tape, logits, labels);
  };
  auto res = test::finite_difference_check(
      ws, [&]() { return forward(nullptr).item(); },
      [&]() {
        Tape tape;
        Tensor loss = forward(&tape);
        tape.backward(loss);
      });
  INFO("worst: " << res.worst_param << "[" << res.worst_index << "]");
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("sgd_step spot checks") {
  SUBCASE("zero gradient leaves parameters alone") {
    WeightStore ws;
    ws.add("p", Tensor::from(Shape{2}, {1.0, -2.0}, true));
    ws.at("p").grad();
    OptimizerState st;
    sgd_step(ws, st, {0.1, 0.9, 0.0});
    CHECK(ws.at("p").data()[0] == 1.0);
    CHECK(ws.at("p").data()[1] == -2.0);
  }
  SUBCASE("single step moves by lr * grad") {
    WeightStore ws;
    ws.add("p", Tensor::from(Shape{1}, {1.0}, true));
    ws.at("p").grad()[0] = 2.0;
    OptimizerState st;
    sgd_step(ws, st, {0.1, 0.0, 0.0});
    CHECK(ws.at("p").data()[0] == doctest::Approx(0.8).epsilon(1e-15));
  }
}

TEST_CASE("adam first step follows the bias-corrected formula") {
  WeightStore ws;
  ws.add("p", Tensor::from(Shape{1}, {0.5}, true));
  double g = 3.7;
  ws.at("p").grad()[0] = g;
  OptimizerState st;
  AdamConfig cfg;
  adam_step(ws, st, cfg);
  double m = (1 - cfg.beta1) * g, v = (1 - cfg.beta2) * g * g;
  double mhat = m / (1 - cfg.beta1), vhat = v / (1 - cfg.beta2);
  double want = 0.5 - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  CHECK(ws.at("p").data()[0] == doctest::Approx(want).epsilon(1e-15));
  CHECK(std::fabs(0.5 - ws.at("p").data()[0]) == doctest::Approx(cfg.lr).epsilon(1e-6));
}

TEST_CASE("checkpoint round-trips at 64-bit and degrades gracefully at 32") {
  Rng rng(31);
  WeightStore ws;
  ws.add("a", test::random_tensor(rng, Shape{3, 4}, 1.0, true));
  ws.add("b.c", test::random_tensor(rng, Shape{2, 2, 2, 2}, 1.0));
  std::string path = (std::filesystem::temp_directory_path() / "s2d_ckpt_test.s2dw").string();
  save_checkpoint(ws, path, 64);
  WeightStore back = load_checkpoint(path);
  REQUIRE(back.size() == 2);
  CHECK(back.at("a").vec() == ws.at("a").vec());
  CHECK(back.at("b.c").shape() == ws.at("b.c").shape());

  save_checkpoint(ws, path, 32);
  WeightStore lossy = load_checkpoint(path);
  for (int64_t i = 0; i < ws.at("a").numel(); ++i)
    CHECK(lossy.at("a").data()[i] == doctest::Approx(ws.at("a").data()[i]).epsilon(1e-6));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader reports truncation with the offset") {
  Rng rng(37);
  WeightStore ws;
  ws.add("t", test::random_tensor(rng, Shape{4}, 1.0));
  std::string path = (std::filesystem::temp_directory_path() / "s2d_ckpt_trunc.s2dw").string();
  save_checkpoint(ws, path, 64);
  auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 9);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("offset"), Error);
  std::filesystem::remove(path);
}

TEST_CASE("identical seeds produce bitwise-identical random tensors") {
  Rng a(123), b(123);
  Tensor ta = test::random_tensor(a, Shape{64});
  Tensor tb = test::random_tensor(b, Shape{64});
  CHECK(ta.vec() == tb.vec());
}
