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

#include "s2d/controller.hpp"

#include <cmath>

namespace s2d {

namespace {

Tensor uniform_init(Rng& rng, Shape shape, double bound) {
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  for (double& v : t.vec()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Controller::Controller(ControllerConfig cfg, uint64_t seed) : cfg_(cfg) {
  if (cfg_.k_groups < 1 || cfg_.hidden < 1 || cfg_.embed < 1)
    fail("controller config out of range");
  if (cfg_.s < 1 || cfg_.s > cfg_.G) fail("controller config: need 1 <= s <= G");
  Rng rng(seed);
  const int h = cfg_.hidden, e = cfg_.embed;
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  // extra embedding row `vocab()` is the start-of-sequence input
  params_.add("embed", uniform_init(rng, Shape{cfg_.vocab() + 1, e}, 0.1));
  params_.add("gru.wx", uniform_init(rng, Shape{3 * h, e}, bound));
  params_.add("gru.wh", uniform_init(rng, Shape{3 * h, h}, bound));
  params_.add("gru.bx", Tensor::zeros(Shape{3 * h}, true));
  params_.add("gru.bh", Tensor::zeros(Shape{3 * h}, true));
  for (int g = 0; g < cfg_.k_groups; ++g) {
    std::string p = "p" + std::to_string(g) + ".";
    params_.add(p + "split.w", Tensor::zeros(Shape{cfg_.n_split(), h}, true));
    params_.add(p + "split.b", Tensor::zeros(Shape{cfg_.n_split()}, true));
    if (cfg_.n_loc() > 0) {
      params_.add(p + "concat.w", Tensor::zeros(Shape{cfg_.n_loc(), h}, true));
      params_.add(p + "concat.b", Tensor::zeros(Shape{cfg_.n_loc()}, true));
    }
  }
  params_.add("value.w", Tensor::zeros(Shape{1, h}, true));
  params_.add("value.b", Tensor::zeros(Shape{1}, true));
}

void Controller::check_arity(const ModelGraph& g) const {
  if (g.k_groups() != cfg_.k_groups)
    fail("controller arity mismatch: model has " + std::to_string(g.k_groups()) +
         " resolution groups, controller predicts for " + std::to_string(cfg_.k_groups));
}

Tensor Controller::step(Tape* tape, const Tensor& input, const Tensor& h) {
  const int hs = cfg_.hidden;
  Tensor xg = linear(tape, input, params_.at("gru.wx"), params_.at("gru.bx"));
  Tensor hg = linear(tape, h, params_.at("gru.wh"), params_.at("gru.bh"));
  Tensor r = sigmoid(tape, add(tape, channel_slice(tape, xg, 0, hs), channel_slice(tape, hg, 0, hs)));
  Tensor z = sigmoid(tape, add(tape, channel_slice(tape, xg, hs, 2 * hs),
                               channel_slice(tape, hg, hs, 2 * hs)));
  Tensor n = tanh_op(tape, add(tape, channel_slice(tape, xg, 2 * hs, 3 * hs),
                               mul(tape, r, channel_slice(tape, hg, 2 * hs, 3 * hs))));
  // h' = n + z * (h - n)
  Tensor diff = add(tape, h, affine(tape, n, -1.0, 0.0));
  return add(tape, n, mul(tape, z, diff));
}

Tensor Controller::logits_for(Tape* tape, const Tensor& h, int group, bool concat_decision) {
  std::string p = "p" + std::to_string(group) + (concat_decision ? ".concat" : ".split");
  Tensor row = linear(tape, h, params_.at(p + ".w"), params_.at(p + ".b"));
  return reshape(tape, row, Shape{row.numel()});
}

Controller::Sample Controller::sample(Rng& rng) {
  Sample out;
  Tensor h = Tensor::zeros(Shape{1, cfg_.hidden});
  Tensor input = embed_row(nullptr, params_.at("embed"), cfg_.vocab());
  const int n_split = cfg_.n_split(), n_loc = cfg_.n_loc();
  double entropy_sum = 0.0;

  for (int g = 0; g < cfg_.k_groups; ++g) {
    // split decision
    h = step(nullptr, input, h);
    if (g == 0) {
      // per-episode baseline, read before any action so it stays unbiased
      Tensor v = linear(nullptr, h, params_.at("value.w"), params_.at("value.b"));
      out.value = v.data()[0];
    }
    Tensor logits = logits_for(nullptr, h, g, false);
    Tensor probs = softmax(reshape(nullptr, logits, Shape{1, logits.numel()}));
    double u = rng.uniform(), cum = 0.0;
    int choice = n_split - 1;
    for (int i = 0; i < n_split; ++i) {
      cum += probs.data()[i];
      if (u < cum) {
        choice = i;
        break;
      }
    }
    out.tokens.push_back(choice);
    out.logp.push_back(std::log(probs.data()[choice]));
    entropy_sum += categorical_entropy(nullptr, logits).item();
    input = embed_row(nullptr, params_.at("embed"), choice);

    if (n_loc > 0) {
      // reuse decision: independent Bernoulli per location
      h = step(nullptr, input, h);
      Tensor clogits = logits_for(nullptr, h, g, true);
      int mask = 0;
      double lp = 0.0;
      for (int l = 0; l < n_loc; ++l) {
        double z = clogits.data()[l];
        double p = 1.0 / (1.0 + std::exp(-z));
        int bit = rng.uniform() < p ? 1 : 0;
        if (bit) mask |= 1 << l;
        double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        lp += bit ? (z - softplus) : -softplus;
      }
      int token = n_split + mask;
      out.tokens.push_back(token);
      out.logp.push_back(lp);
      entropy_sum += bernoulli_entropy(nullptr, clogits).item();
      input = embed_row(nullptr, params_.at("embed"), token);
    }
  }
  out.entropy = entropy_sum / static_cast<double>(cfg_.seq_len());
  return out;
}

std::vector<int> Controller::greedy_tokens() {
  std::vector<int> tokens;
  Tensor h = Tensor::zeros(Shape{1, cfg_.hidden});
  Tensor input = embed_row(nullptr, params_.at("embed"), cfg_.vocab());
  const int n_split = cfg_.n_split(), n_loc = cfg_.n_loc();
  for (int g = 0; g < cfg_.k_groups; ++g) {
    h = step(nullptr, input, h);
    Tensor logits = logits_for(nullptr, h, g, false);
    int best = 0;
    for (int i = 1; i < n_split; ++i)
      if (logits.data()[i] > logits.data()[best]) best = i;
    tokens.push_back(best);
    input = embed_row(nullptr, params_.at("embed"), best);
    if (n_loc > 0) {
      h = step(nullptr, input, h);
      Tensor clogits = logits_for(nullptr, h, g, true);
      int mask = 0;
      for (int l = 0; l < n_loc; ++l)
        if (clogits.data()[l] > 0.0) mask |= 1 << l;  // sigmoid(z) > 0.5
      tokens.push_back(n_split + mask);
      input = embed_row(nullptr, params_.at("embed"), n_split + mask);
    }
  }
  return tokens;
}

Controller::Eval Controller::evaluate(const std::vector<int>& tokens, Tape* tape) {
  const int n_split = cfg_.n_split(), n_loc = cfg_.n_loc();
  const int per_group = cfg_.decisions_per_group();
  if (static_cast<int>(tokens.size()) != cfg_.k_groups * per_group)
    fail("trajectory length does not match controller arity");

  Eval ev;
  Tensor h = Tensor::zeros(Shape{1, cfg_.hidden});
  Tensor input = embed_row(tape, params_.at("embed"), cfg_.vocab());
  size_t pos = 0;
  for (int g = 0; g < cfg_.k_groups; ++g) {
    h = step(tape, input, h);
    if (g == 0) {
      Tensor v = linear(tape, h, params_.at("value.w"), params_.at("value.b"));
      ev.value = reshape(tape, v, Shape{1});
    }
    Tensor logits = logits_for(tape, h, g, false);
    int tok = tokens[pos++];
    if (tok < 0 || tok >= n_split) fail("split token out of range in trajectory");
    ev.logp.push_back(categorical_log_prob(tape, logits, tok));
    Tensor ent = categorical_entropy(tape, logits);
    ev.entropy_sum = ev.entropy_sum.defined() ? add(tape, ev.entropy_sum, ent) : ent;
    input = embed_row(tape, params_.at("embed"), tok);

    if (n_loc > 0) {
      h = step(tape, input, h);
      Tensor clogits = logits_for(tape, h, g, true);
      int tok2 = tokens[pos++];
      int mask = tok2 - n_split;
      if (mask < 0 || mask >= (1 << n_loc)) fail("reuse token out of range in trajectory");
      std::vector<int> bits(static_cast<size_t>(n_loc));
      for (int l = 0; l < n_loc; ++l) bits[static_cast<size_t>(l)] = (mask >> l) & 1;
      ev.logp.push_back(bernoulli_log_prob(tape, clogits, bits));
      ev.entropy_sum = add(tape, ev.entropy_sum, bernoulli_entropy(tape, clogits));
      input = embed_row(tape, params_.at("embed"), tok2);
    }
  }
  return ev;
}

}  // namespace s2d
