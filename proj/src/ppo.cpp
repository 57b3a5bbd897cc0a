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

#include "s2d/ppo.hpp"

#include <cmath>

namespace s2d {

PpoDiagnostics ppo_update(Controller& controller, OptimizerState& adam,
                          const std::vector<Trajectory>& batch, const PpoConfig& cfg, Rng& rng) {
  if (batch.empty()) fail("ppo_update needs a nonempty batch");
  PpoDiagnostics diag;

  // snapshot for rollback on a non-finite loss
  WeightStore snapshot = controller.params().deep_copy();
  OptimizerState adam_snapshot = adam;

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;

  std::vector<size_t> order(batch.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  double ratio_sum = 0.0, ent_sum = 0.0;
  int64_t ratio_count = 0, clip_count = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.minibatch)) {
      size_t end = std::min(order.size(), off + static_cast<size_t>(cfg.minibatch));

      Tape tape;
      Tensor obj_sum, vloss_sum, ent_term_sum;
      int64_t n_decisions = 0;
      for (size_t b = off; b < end; ++b) {
        const Trajectory& tr = batch[order[b]];
        double advantage = tr.reward - tr.value_old;
        Controller::Eval ev = controller.evaluate(tr.tokens, &tape);
        for (size_t d = 0; d < ev.logp.size(); ++d) {
          Tensor ratio = exp_op(&tape, affine(&tape, ev.logp[d], 1.0, -tr.logp_old[d]));
          Tensor unclipped = affine(&tape, ratio, advantage, 0.0);
          Tensor clipped = affine(&tape, clamp(&tape, ratio, 1.0 - cfg.clip, 1.0 + cfg.clip),
                                  advantage, 0.0);
          Tensor obj = min2(&tape, unclipped, clipped);
          obj_sum = obj_sum.defined() ? add(&tape, obj_sum, obj) : obj;
          ++n_decisions;

          double rv = ratio.item();
          ratio_sum += rv;
          ++ratio_count;
          if (std::fabs(rv - 1.0) > cfg.clip) ++clip_count;
        }
        Tensor verr = affine(&tape, ev.value, 1.0, -tr.reward);
        Tensor vsq = mul(&tape, verr, verr);
        vloss_sum = vloss_sum.defined() ? add(&tape, vloss_sum, vsq) : vsq;
        ent_term_sum = ent_term_sum.defined() ? add(&tape, ent_term_sum, ev.entropy_sum)
                                              : ev.entropy_sum;
        ent_sum += ev.entropy_sum.item() / static_cast<double>(ev.logp.size());
      }
      const double n_traj = static_cast<double>(end - off);
      Tensor policy_loss = affine(&tape, obj_sum, -1.0 / static_cast<double>(n_decisions), 0.0);
      Tensor value_loss = affine(&tape, vloss_sum, 1.0 / n_traj, 0.0);
      Tensor entropy_mean = affine(&tape, ent_term_sum, 1.0 / static_cast<double>(n_decisions), 0.0);
      Tensor total = add(&tape, policy_loss,
                         add(&tape, affine(&tape, value_loss, cfg.vf_coef, 0.0),
                             affine(&tape, entropy_mean, -cfg.ent_coef, 0.0)));
      double tv = total.item();
      if (!std::isfinite(tv)) {
        controller.params().assign_from(snapshot);
        adam = adam_snapshot;
        diag.aborted = true;
        return diag;
      }
      diag.policy_loss = policy_loss.item();
      diag.value_loss = value_loss.item();

      controller.params().zero_grads();
      tape.backward(total);
      adam_step(controller.params(), adam, adam_cfg);
    }
  }
  diag.mean_ratio = ratio_count ? ratio_sum / static_cast<double>(ratio_count) : 1.0;
  diag.clip_fraction = ratio_count ? static_cast<double>(clip_count) / static_cast<double>(ratio_count) : 0.0;
  double passes = static_cast<double>(cfg.epochs) * static_cast<double>(batch.size());
  diag.entropy = passes > 0 ? ent_sum / passes : 0.0;
  return diag;
}

}  // namespace s2d
