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

#include "s2d/transform.hpp"

#include <algorithm>
#include <functional>
#include <sstream>

namespace s2d {

std::vector<std::pair<int, int>> concat_locations(int s) {
  std::vector<std::pair<int, int>> out;
  for (int i = 1; i < s; ++i)
    for (int j = i + 1; j <= s; ++j) out.emplace_back(i, j);
  return out;
}

std::vector<int> group_channels(int C, int G) {
  if (C < 1 || G < 1) fail("group_channels requires positive C and G");
  if (C < G) return std::vector<int>(static_cast<size_t>(C), 1);
  int m = C / G, rem = C % G;
  std::vector<int> sizes(static_cast<size_t>(G), m);
  for (int i = 0; i < rem; ++i) ++sizes[static_cast<size_t>(i)];
  return sizes;
}

uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<uint64_t>(n - k + i) / static_cast<uint64_t>(i);
  return r;
}

std::vector<std::vector<int>> enumerate_split_options(int G, int s) {
  if (s < 1 || s > G) fail("stage count s must satisfy 1 <= s <= G");
  std::vector<std::vector<int>> out;
  std::vector<int> pts(static_cast<size_t>(s) + 1);
  pts[0] = 0;
  pts[static_cast<size_t>(s)] = G;
  // choose s-1 strictly increasing interior points from 1..G-1
  std::function<void(int, int)> rec = [&](int pos, int lo) {
    if (pos == s) {
      out.push_back(pts);
      return;
    }
    for (int p = lo; p <= G - (s - pos); ++p) {
      pts[static_cast<size_t>(pos)] = p;
      rec(pos + 1, p + 1);
    }
  };
  rec(1, 1);
  return out;
}

uint64_t space_size(const ModelGraph& g, int G, int s) {
  uint64_t per_group = binomial(G - 1, s - 1);
  int n_loc = s * (s - 1) / 2;
  for (int i = 0; i < n_loc; ++i) {
    if (per_group > UINT64_MAX / 2) fail("search space size overflows uint64");
    per_group *= 2;
  }
  uint64_t total = 1;
  for (int k = 0; k < g.k_groups(); ++k) {
    if (per_group != 0 && total > UINT64_MAX / per_group) fail("search space size overflows uint64");
    total *= per_group;
  }
  return total;
}

TransformSetting identity_setting(const ModelGraph& g, int G) {
  TransformSetting st;
  st.G = G;
  st.s = 1;
  st.model_hash = g.hash();
  st.groups.assign(static_cast<size_t>(g.k_groups()), {{0, G}, {}});
  return st;
}

std::vector<int> encode_setting(const TransformSetting& setting) {
  auto options = enumerate_split_options(setting.G, setting.s);
  int n_split = static_cast<int>(options.size());
  int n_loc = setting.s * (setting.s - 1) / 2;
  std::vector<int> tokens;
  for (const auto& grp : setting.groups) {
    auto it = std::find(options.begin(), options.end(), grp.split_points);
    if (it == options.end()) fail("split points are not a valid option for (G,s)");
    tokens.push_back(static_cast<int>(it - options.begin()));
    if (n_loc > 0) {
      int mask = 0;
      for (int l = 0; l < n_loc; ++l)
        if (grp.concat[static_cast<size_t>(l)]) mask |= 1 << l;
      tokens.push_back(n_split + mask);
    }
  }
  return tokens;
}

TransformSetting decode_setting(const std::vector<int>& tokens, const ModelGraph& g, int G, int s) {
  auto options = enumerate_split_options(G, s);
  int n_split = static_cast<int>(options.size());
  int n_loc = s * (s - 1) / 2;
  int per_group = n_loc > 0 ? 2 : 1;
  if (static_cast<int>(tokens.size()) != g.k_groups() * per_group)
    fail("token sequence length " + std::to_string(tokens.size()) + " does not match " +
         std::to_string(g.k_groups() * per_group) + " decisions");
  TransformSetting st;
  st.G = G;
  st.s = s;
  st.model_hash = g.hash();
  size_t pos = 0;
  for (int grp = 0; grp < g.k_groups(); ++grp) {
    int split_tok = tokens[pos++];
    if (split_tok < 0 || split_tok >= n_split)
      fail("split token " + std::to_string(split_tok) + " out of range [0," + std::to_string(n_split) + ")");
    TransformSetting::Group gs;
    gs.split_points = options[static_cast<size_t>(split_tok)];
    if (n_loc > 0) {
      int tok = tokens[pos++];
      int mask = tok - n_split;
      if (mask < 0 || mask >= (1 << n_loc))
        fail("concat token " + std::to_string(tok) + " out of range");
      gs.concat.resize(static_cast<size_t>(n_loc));
      for (int l = 0; l < n_loc; ++l) gs.concat[static_cast<size_t>(l)] = (mask >> l) & 1;
    }
    st.groups.push_back(std::move(gs));
  }
  validate_setting(st, g);
  return st;
}

std::string setting_to_text(const TransformSetting& setting) {
  std::ostringstream os;
  os << "s2d-setting v1\n";
  os << "G " << setting.G << "\n";
  os << "s " << setting.s << "\n";
  char hex[17];
  snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(setting.model_hash));
  os << "model " << hex << "\n";
  auto locs = concat_locations(setting.s);
  for (size_t g = 0; g < setting.groups.size(); ++g) {
    const auto& grp = setting.groups[g];
    os << "group " << g << ": split ";
    for (size_t i = 0; i < grp.split_points.size(); ++i) {
      if (i) os << ",";
      os << grp.split_points[i];
    }
    os << " ; concat ";
    bool any = false;
    for (size_t l = 0; l < grp.concat.size(); ++l) {
      if (!grp.concat[l]) continue;
      if (any) os << ",";
      os << locs[l].first << "->" << locs[l].second;
      any = true;
    }
    if (!any) os << "-";
    os << "\n";
  }
  return os.str();
}

TransformSetting setting_from_text(const std::string& text, const ModelGraph* validate_against) {
  std::istringstream is(text);
  std::string line;
  auto next = [&](const char* what) {
    if (!std::getline(is, line)) fail(std::string("setting file truncated before ") + what);
    return line;
  };
  if (next("header") != "s2d-setting v1") fail("not an s2d-setting v1 file");
  TransformSetting st;
  {
    std::istringstream ls(next("G"));
    std::string key;
    if (!(ls >> key >> st.G) || key != "G") fail("setting file: expected 'G <int>'");
  }
  {
    std::istringstream ls(next("s"));
    std::string key;
    if (!(ls >> key >> st.s) || key != "s") fail("setting file: expected 's <int>'");
  }
  {
    std::istringstream ls(next("model"));
    std::string key, hex;
    if (!(ls >> key >> hex) || key != "model" || hex.size() != 16)
      fail("setting file: expected 'model <16 hex digits>'");
    st.model_hash = std::stoull(hex, nullptr, 16);
  }
  auto locs = concat_locations(st.s);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string word;
    int gidx = 0;
    char colon = 0;
    if (!(ls >> word >> gidx >> std::ws) || word != "group")
      fail("setting file: expected 'group <n>: ...', got '" + line + "'");
    ls.get(colon);
    if (colon != ':') fail("setting file: missing ':' in group line");
    if (gidx != static_cast<int>(st.groups.size()))
      fail("setting file: group lines must be consecutive from 0");
    if (!(ls >> word) || word != "split") fail("setting file: expected 'split'");
    std::string pts;
    ls >> pts;
    TransformSetting::Group grp;
    {
      std::istringstream ps(pts);
      std::string tok;
      while (std::getline(ps, tok, ',')) grp.split_points.push_back(std::stoi(tok));
    }
    std::string semi, ckey, clist;
    if (!(ls >> semi >> ckey >> clist) || semi != ";" || ckey != "concat")
      fail("setting file: expected '; concat <list>'");
    grp.concat.assign(locs.size(), 0);
    if (clist != "-") {
      std::istringstream cs(clist);
      std::string tok;
      while (std::getline(cs, tok, ',')) {
        auto arrow = tok.find("->");
        if (arrow == std::string::npos) fail("setting file: bad concat pair '" + tok + "'");
        int i = std::stoi(tok.substr(0, arrow));
        int j = std::stoi(tok.substr(arrow + 2));
        auto it = std::find(locs.begin(), locs.end(), std::make_pair(i, j));
        if (it == locs.end())
          fail("setting file: concat pair " + std::to_string(i) + "->" + std::to_string(j) +
               " is not a valid location (need 1 <= i < j <= s)");
        grp.concat[static_cast<size_t>(it - locs.begin())] = 1;
      }
    }
    st.groups.push_back(std::move(grp));
  }
  if (validate_against) {
    if (st.model_hash != 0 && st.model_hash != validate_against->hash())
      fail("setting file was produced for a different base model (hash mismatch)");
    validate_setting(st, *validate_against);
  }
  return st;
}

void validate_setting(const TransformSetting& setting, const ModelGraph& g) {
  if (setting.s < 1 || setting.s > setting.G)
    fail("setting invariant violated: need 1 <= s <= G");
  if (static_cast<int>(setting.groups.size()) != g.k_groups())
    fail("group-structure mismatch: setting has " + std::to_string(setting.groups.size()) +
         " groups, model has " + std::to_string(g.k_groups()));
  size_t n_loc = static_cast<size_t>(setting.s * (setting.s - 1) / 2);
  for (const auto& grp : setting.groups) {
    if (static_cast<int>(grp.split_points.size()) != setting.s + 1)
      fail("setting invariant violated: split point count");
    if (grp.split_points.front() != 0 || grp.split_points.back() != setting.G)
      fail("setting invariant violated: split points must start at 0 and end at G");
    for (size_t i = 1; i < grp.split_points.size(); ++i)
      if (grp.split_points[i] <= grp.split_points[i - 1])
        fail("setting invariant violated: split points must be strictly increasing");
    if (grp.concat.size() != n_loc) fail("setting invariant violated: concat location count");
  }
}

namespace {

int stage_share(int base_channels, int G, const std::vector<int>& split_points, int stage) {
  std::vector<int> sizes = group_channels(base_channels, G);
  int lo = split_points[static_cast<size_t>(stage)];
  int hi = split_points[static_cast<size_t>(stage) + 1];
  int width = 0;
  for (int grp = lo; grp < hi && grp < static_cast<int>(sizes.size()); ++grp)
    width += sizes[static_cast<size_t>(grp)];
  return width;
}

}  // namespace

MultiStageModel apply_transform(const ModelGraph& g, const TransformSetting& setting) {
  validate_setting(setting, g);
  if (setting.model_hash != 0 && setting.model_hash != g.hash())
    fail("setting was produced for a different base model (hash mismatch)");

  const int s = setting.s;
  const int n_layers = static_cast<int>(g.layers.size());
  auto locs = concat_locations(s);

  MultiStageModel msm;
  msm.base = g;
  msm.setting = setting;
  msm.num_stages = s;
  msm.num_classes = g.num_classes;

  // layer index -> indexed position (k-space), -1 otherwise
  std::vector<int> kpos(static_cast<size_t>(n_layers), -1);
  for (size_t ki = 0; ki < g.indexed.size(); ++ki) kpos[static_cast<size_t>(g.indexed[ki])] = static_cast<int>(ki);

  // pass 1: per-stage output widths of every indexed layer
  std::vector<std::vector<int>> width(static_cast<size_t>(s),
                                      std::vector<int>(g.indexed.size(), 0));
  for (int i = 0; i < s; ++i) {
    for (size_t ki = 0; ki < g.indexed.size(); ++ki) {
      const LayerSpec& ls = g.layers[static_cast<size_t>(g.indexed[ki])];
      int grp = g.group_of(static_cast<int>(ki));
      const auto& split = setting.groups[static_cast<size_t>(grp)].split_points;
      if (ls.kind == LayerKind::Conv) {
        int w = stage_share(ls.out_channels, setting.G, split, i);
        if (w <= 0)
          fail("stage " + std::to_string(i + 1) + " receives no channels at layer " +
               std::to_string(g.indexed[ki]) + " (C=" + std::to_string(ls.out_channels) +
               " < G?)");
        width[static_cast<size_t>(i)][ki] = w;
      } else {  // DwConv: channel-wise, mirrors its own input width
        if (ki == 0) fail("a depthwise layer cannot be the input layer");
        width[static_cast<size_t>(i)][ki] = width[static_cast<size_t>(i)][ki - 1];
      }
    }
  }

  // pass 2: materialize per-stage layers; track own width through every layer
  msm.stages.assign(static_cast<size_t>(s), {});
  for (int i = 0; i < s; ++i) {
    auto& stage = msm.stages[static_cast<size_t>(i)];
    stage.resize(static_cast<size_t>(n_layers));
    std::vector<int> at_layer(static_cast<size_t>(n_layers), 0);  // own width after layer
    int cur = 0;
    for (int li = 0; li < n_layers; ++li) {
      const LayerSpec& ls = g.layers[static_cast<size_t>(li)];
      MsLayer& ml = stage[static_cast<size_t>(li)];
      ml.kind = ls.kind;
      ml.kernel = ls.kernel;
      ml.stride = ls.stride;
      ml.padding = ls.padding;
      switch (ls.kind) {
        case LayerKind::Conv: {
          int ki = kpos[static_cast<size_t>(li)];
          ml.out_c = width[static_cast<size_t>(i)][static_cast<size_t>(ki)];
          if (ki == 0) {
            // the input layer is not split: every stage reads the full image
            ml.own_in = g.in_channels;
            ml.in_c = ml.own_in;
          } else {
            ml.own_in = cur;
            ml.in_c = cur;
            int grp = g.group_of(ki);
            const auto& bits = setting.groups[static_cast<size_t>(grp)].concat;
            for (size_t l = 0; l < locs.size(); ++l) {
              if (!bits[l]) continue;
              int src = locs[l].first - 1, dst = locs[l].second - 1;
              if (dst != i) continue;
              ml.sources.push_back(src);
              ml.in_c += width[static_cast<size_t>(src)][static_cast<size_t>(ki) - 1];
              if (i == 0) fail("internal: reuse edge into stage 1");
            }
            std::sort(ml.sources.begin(), ml.sources.end());
            for (int src : ml.sources)
              msm.edges.push_back({src, i, li});
          }
          cur = ml.out_c;
          break;
        }
        case LayerKind::DwConv: {
          // channel-wise op: consumes and produces this stage's own channels
          ml.own_in = cur;
          ml.in_c = cur;
          ml.out_c = cur;
          break;
        }
        case LayerKind::ResidualAdd: {
          ml.res_source = ls.res_source;
          ml.proj = ls.proj;
          ml.proj_stride = ls.proj_stride;
          ml.proj_in = at_layer[static_cast<size_t>(ls.res_source)];
          ml.out_c = cur;
          if (!ls.proj && ml.proj_in != cur)
            fail("stage " + std::to_string(i + 1) + ": residual width mismatch at layer " +
                 std::to_string(li));
          break;
        }
        default:
          ml.out_c = cur;
          break;
      }
      at_layer[static_cast<size_t>(li)] = cur;
    }
    msm.final_width.push_back(width[static_cast<size_t>(i)].empty()
                                  ? 0
                                  : width[static_cast<size_t>(i)].back());
  }

  // forced concat at the prediction layer: head i sees stages 0..i
  int acc_width = 0;
  for (int i = 0; i < s; ++i) {
    acc_width += msm.final_width[static_cast<size_t>(i)];
    msm.head_in.push_back(acc_width);
  }

  // per-stage MACs (spatial sizes are shared with the base model)
  msm.stage_macs.assign(static_cast<size_t>(s), 0);
  for (int i = 0; i < s; ++i) {
    uint64_t macs = 0;
    for (int li = 0; li < n_layers; ++li) {
      const MsLayer& ml = msm.stages[static_cast<size_t>(i)][static_cast<size_t>(li)];
      const ShapeCHW& out = g.out_shapes[static_cast<size_t>(li)];
      uint64_t hw = static_cast<uint64_t>(out.h) * static_cast<uint64_t>(out.w);
      switch (ml.kind) {
        case LayerKind::Conv:
          macs += static_cast<uint64_t>(ml.out_c) * static_cast<uint64_t>(ml.in_c) *
                  static_cast<uint64_t>(ml.kernel) * static_cast<uint64_t>(ml.kernel) * hw;
          break;
        case LayerKind::DwConv:
          macs += static_cast<uint64_t>(ml.out_c) * static_cast<uint64_t>(ml.kernel) *
                  static_cast<uint64_t>(ml.kernel) * hw;
          break;
        case LayerKind::ResidualAdd:
          if (ml.proj)
            macs += static_cast<uint64_t>(ml.out_c) * static_cast<uint64_t>(ml.proj_in) * hw;
          break;
        default:
          break;
      }
    }
    macs += static_cast<uint64_t>(msm.head_in[static_cast<size_t>(i)]) *
            static_cast<uint64_t>(g.num_classes);
    msm.stage_macs[static_cast<size_t>(i)] = macs;
  }
  msm.accumulated.assign(static_cast<size_t>(s), 0);
  uint64_t run = 0;
  for (int i = 0; i < s; ++i) {
    run += msm.stage_macs[static_cast<size_t>(i)];
    msm.accumulated[static_cast<size_t>(i)] = run;
  }
  return msm;
}

std::vector<uint64_t> accumulated_flops(const MultiStageModel& msm) { return msm.accumulated; }

}  // namespace s2d
