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

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "s2d/graph.hpp"

namespace s2d {

// One architecture in the search space: per resolution group, the split
// points partitioning the G channel groups among the s stages, and the
// boolean feature-reuse matrix stored as bits over the locations (i,j),
// 1 <= i < j <= s, in row-major order (1,2),(1,3),...,(2,3),...
struct TransformSetting {
  int G = 0;
  int s = 0;
  struct Group {
    std::vector<int> split_points;  // length s+1, 0 = first, G = last
    std::vector<uint8_t> concat;    // length s*(s-1)/2
  };
  std::vector<Group> groups;  // one per resolution group
  uint64_t model_hash = 0;    // hash of the base description (0 = unbound)
};

// Canonical ordering of the reuse locations for stage count s (1-based pairs).
std::vector<std::pair<int, int>> concat_locations(int s);

// Channel grouping: C = m*G gives G groups of m; a remainder is spread one
// per group from the front; C < G degenerates to C singleton groups.
std::vector<int> group_channels(int C, int G);

uint64_t binomial(int n, int k);

// All split-point tuples (p_0..p_s) with p_0=0, p_s=G, strictly increasing,
// in lexicographic order. Exactly C(G-1, s-1) of them.
std::vector<std::vector<int>> enumerate_split_options(int G, int s);

// |Z| = [C(G-1,s-1) * 2^(s(s-1)/2)]^k_groups. The prediction layer's concat
// is forced, so it contributes no choice. Throws on uint64 overflow.
uint64_t space_size(const ModelGraph& g, int G, int s);

TransformSetting identity_setting(const ModelGraph& g, int G);

// Token sequence: per resolution group, the split-option index in
// enumerate_split_options order, then (when s > 1) one token encoding the
// reuse bitmask, offset by the split-option count. Bijective on valid
// settings; s=1 emits no concat tokens.
std::vector<int> encode_setting(const TransformSetting& setting);
TransformSetting decode_setting(const std::vector<int>& tokens, const ModelGraph& g, int G, int s);

// Text form, bit-exact round-trip:
//   s2d-setting v1
//   G 8
//   s 3
//   model 0123456789abcdef
//   group 0: split 0,3,5,8 ; concat 1->2,1->3
std::string setting_to_text(const TransformSetting& setting);
TransformSetting setting_from_text(const std::string& text, const ModelGraph* validate_against = nullptr);

// Throws Error when the setting violates its invariants or does not match
// the graph's resolution-group structure.
void validate_setting(const TransformSetting& setting, const ModelGraph& g);

// Per-stage mirror of one base layer after the transform.
struct MsLayer {
  LayerKind kind;
  int kernel = 0, stride = 1, padding = 0;
  int own_in = 0;            // channels from this stage's previous layer
  int in_c = 0;              // own_in plus reused channels
  int out_c = 0;             // this stage's share of the base layer's output
  std::vector<int> sources;  // 0-based stages whose features are reused here
  int res_source = -1;
  bool proj = false;
  int proj_stride = 1;
  int proj_in = 0;
};

struct ConcatEdge {
  int src_stage = 0, dst_stage = 0, layer = 0;
};

// Materialized multi-stage network. Stage subgraphs mirror the base layer
// list with per-stage channel counts; each stage ends in its own
// gap -> linear -> softmax head, and the head of stage i consumes the
// final-layer features of stages 0..i (the forced concat).
struct MultiStageModel {
  ModelGraph base;
  TransformSetting setting;
  int num_stages = 0;
  int num_classes = 0;
  std::vector<std::vector<MsLayer>> stages;  // [stage][base layer index]
  std::vector<int> final_width;              // per stage, channels entering gap
  std::vector<int> head_in;                  // per stage, head linear input width
  std::vector<ConcatEdge> edges;
  std::vector<uint64_t> stage_macs;   // own cost of each stage evaluated once
  std::vector<uint64_t> accumulated;  // prefix sums, strictly increasing
};

MultiStageModel apply_transform(const ModelGraph& g, const TransformSetting& setting);

// Accumulated MACs of running stages 1..i with earlier-stage features cached.
std::vector<uint64_t> accumulated_flops(const MultiStageModel& msm);

}  // namespace s2d
