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

#include "s2d/graph.hpp"

#include <fstream>
#include <sstream>

#include "s2d/rng.hpp"

namespace s2d {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::DwConv: return "dwconv";
    case LayerKind::BatchNorm: return "bn";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::Linear: return "fc";
    case LayerKind::ResidualAdd: return "residual_add";
    case LayerKind::SoftmaxHead: return "softmax";
  }
  return "?";
}

int ModelGraph::group_of(int ki) const {
  for (size_t g = 0; g < groups.size(); ++g)
    if (ki >= groups[g].first && ki < groups[g].second) return static_cast<int>(g);
  fail("indexed layer " + std::to_string(ki) + " outside every resolution group");
}

uint64_t ModelGraph::hash() const { return fnv1a_str(canonical_text); }

namespace {

struct Line {
  std::string cmd;
  std::vector<std::pair<std::string, std::string>> kv;  // key=value
  std::vector<std::string> flags;                       // bare words
  int number = 0;
};

[[noreturn]] void parse_fail(const Line& ln, const std::string& msg) {
  fail("model description line " + std::to_string(ln.number) + ": " + msg);
}

int get_int(const Line& ln, const std::string& key, int fallback = INT32_MIN) {
  for (const auto& [k, v] : ln.kv) {
    if (k == key) {
      try {
        size_t used = 0;
        int r = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
      } catch (const std::exception&) {
        parse_fail(ln, "bad integer for " + key + "=" + v);
      }
    }
  }
  if (fallback == INT32_MIN) parse_fail(ln, "missing required parameter " + key + "=");
  return fallback;
}

bool has_flag(const Line& ln, const std::string& f) {
  for (const auto& w : ln.flags)
    if (w == f) return true;
  return false;
}

std::vector<Line> tokenize(const std::string& text) {
  std::vector<Line> out;
  std::istringstream is(text);
  std::string raw;
  int number = 0;
  while (std::getline(is, raw)) {
    ++number;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    Line ln;
    ln.number = number;
    std::string word;
    while (ls >> word) {
      if (ln.cmd.empty()) {
        ln.cmd = word;
      } else if (auto eq = word.find('='); eq != std::string::npos) {
        ln.kv.emplace_back(word.substr(0, eq), word.substr(eq + 1));
      } else {
        ln.flags.push_back(word);
      }
    }
    if (!ln.cmd.empty()) out.push_back(std::move(ln));
  }
  return out;
}

struct Builder {
  ModelGraph g;
  int cur_c = 0;  // channels after the last appended layer

  int last_index() const { return static_cast<int>(g.layers.size()) - 1; }

  int append(LayerSpec ls) {
    if (ls.kind == LayerKind::Conv || ls.kind == LayerKind::Linear) cur_c = ls.out_channels;
    g.layers.push_back(ls);
    return last_index();
  }

  void conv(int out, int k, int s, int p, bool bn, bool act) {
    append({.kind = LayerKind::Conv, .out_channels = out, .kernel = k, .stride = s, .padding = p});
    if (bn) append({.kind = LayerKind::BatchNorm});
    if (act) append({.kind = LayerKind::Relu});
  }

  void dwconv(int k, int s, int p, bool bn, bool act) {
    append({.kind = LayerKind::DwConv, .kernel = k, .stride = s, .padding = p});
    if (bn) append({.kind = LayerKind::BatchNorm});
    if (act) append({.kind = LayerKind::Relu});
  }

  void res_block(const Line& ln, int out, int k, int s) {
    if (g.layers.empty()) parse_fail(ln, "a residual block cannot be the first layer");
    int in_c = cur_c;
    int source = last_index();
    conv(out, k, s, k / 2, true, true);
    conv(out, k, 1, k / 2, true, false);
    LayerSpec addl{.kind = LayerKind::ResidualAdd, .res_source = source};
    if (s != 1 || in_c != out) {
      addl.proj = true;
      addl.proj_stride = s;
    }
    append(addl);
    append({.kind = LayerKind::Relu});
  }

  void mbconv_block(const Line& ln, int out, int expand, int k, int s) {
    if (g.layers.empty()) parse_fail(ln, "an mbconv block cannot be the first layer");
    int in_c = cur_c;
    int source = last_index();
    int hidden = in_c * expand;
    conv(hidden, 1, 1, 0, true, true);
    dwconv(k, s, k / 2, true, true);
    conv(out, 1, 1, 0, true, false);  // linear bottleneck: no activation
    if (s == 1 && in_c == out) append({.kind = LayerKind::ResidualAdd, .res_source = source});
  }
};

void infer_shapes(ModelGraph& g) {
  ShapeCHW cur{g.in_channels, g.in_h, g.in_w};
  g.out_shapes.clear();
  // floor convention: strided convs may drop trailing positions
  auto conv_out = [](int size, int k, int s, int p, int layer) {
    int num = size + 2 * p - k;
    if (num < 0)
      fail("layer " + std::to_string(layer) + ": conv output size is not positive for input size " +
           std::to_string(size) + " k=" + std::to_string(k) + " s=" + std::to_string(s) +
           " p=" + std::to_string(p));
    return num / s + 1;
  };
  for (size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& ls = g.layers[i];
    int li = static_cast<int>(i);
    switch (ls.kind) {
      case LayerKind::Conv:
        cur = {ls.out_channels, conv_out(cur.h, ls.kernel, ls.stride, ls.padding, li),
               conv_out(cur.w, ls.kernel, ls.stride, ls.padding, li)};
        break;
      case LayerKind::DwConv:
        cur = {cur.c, conv_out(cur.h, ls.kernel, ls.stride, ls.padding, li),
               conv_out(cur.w, ls.kernel, ls.stride, ls.padding, li)};
        break;
      case LayerKind::BatchNorm:
      case LayerKind::Relu:
      case LayerKind::SoftmaxHead:
        break;
      case LayerKind::MaxPool: {
        if (cur.h < ls.kernel || (cur.h - ls.kernel) % ls.stride != 0 || cur.w < ls.kernel ||
            (cur.w - ls.kernel) % ls.stride != 0)
          fail("layer " + std::to_string(li) + ": non-integer maxpool output");
        cur = {cur.c, (cur.h - ls.kernel) / ls.stride + 1, (cur.w - ls.kernel) / ls.stride + 1};
        break;
      }
      case LayerKind::GlobalAvgPool:
        cur = {cur.c, 1, 1};
        break;
      case LayerKind::Linear:
        if (cur.h != 1 || cur.w != 1)
          fail("layer " + std::to_string(li) + ": fc requires pooled 1x1 features");
        cur = {ls.out_channels, 1, 1};
        break;
      case LayerKind::ResidualAdd: {
        if (ls.res_source < 0 || ls.res_source >= li)
          fail("layer " + std::to_string(li) + ": dangling residual source");
        ShapeCHW src = g.out_shapes[static_cast<size_t>(ls.res_source)];
        if (ls.proj) {
          if ((src.h - 1) / ls.proj_stride + 1 != cur.h || (src.w - 1) / ls.proj_stride + 1 != cur.w)
            fail("layer " + std::to_string(li) + ": projection shortcut resolution mismatch");
        } else if (!(src == cur)) {
          fail("layer " + std::to_string(li) + ": residual source shape mismatch");
        }
        break;
      }
    }
    g.out_shapes.push_back(cur);
  }
}

std::string canonicalize(const ModelGraph& g) {
  std::ostringstream os;
  os << "input " << g.in_channels << "x" << g.in_h << "x" << g.in_w << "\n";
  for (const LayerSpec& ls : g.layers) {
    os << layer_kind_name(ls.kind);
    switch (ls.kind) {
      case LayerKind::Conv:
        os << " out=" << ls.out_channels << " k=" << ls.kernel << " s=" << ls.stride
           << " p=" << ls.padding;
        break;
      case LayerKind::DwConv:
        os << " k=" << ls.kernel << " s=" << ls.stride << " p=" << ls.padding;
        break;
      case LayerKind::MaxPool:
        os << " k=" << ls.kernel << " s=" << ls.stride;
        break;
      case LayerKind::Linear:
        os << " out=" << ls.out_channels;
        break;
      case LayerKind::ResidualAdd:
        os << " from=" << ls.res_source;
        if (ls.proj) os << " proj s=" << ls.proj_stride;
        break;
      default:
        break;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace

std::vector<std::pair<int, int>> resolution_groups(const ModelGraph& g) {
  std::vector<std::pair<int, int>> out;
  for (size_t ki = 0; ki < g.indexed.size(); ++ki) {
    const ShapeCHW& s = g.out_shapes[static_cast<size_t>(g.indexed[ki])];
    if (ki == 0) {
      out.emplace_back(0, 1);
      continue;
    }
    const ShapeCHW& prev = g.out_shapes[static_cast<size_t>(g.indexed[ki - 1])];
    if (s.h == prev.h && s.w == prev.w)
      out.back().second = static_cast<int>(ki) + 1;
    else
      out.emplace_back(static_cast<int>(ki), static_cast<int>(ki) + 1);
  }
  return out;
}

ModelGraph build_model(const std::string& text) {
  std::vector<Line> lines = tokenize(text);
  if (lines.empty()) fail("empty model description");

  Builder b;
  bool have_input = false, have_gap = false, have_fc = false, have_softmax = false;

  for (const Line& ln : lines) {
    if (!have_input && ln.cmd != "input") parse_fail(ln, "description must start with an input line");
    if (have_fc && ln.cmd != "softmax") parse_fail(ln, "no layers allowed after fc (except softmax)");

    if (ln.cmd == "input") {
      if (have_input) parse_fail(ln, "duplicate input line");
      std::string spec;
      if (!ln.flags.empty()) spec = ln.flags[0];
      int c = 0, h = 0, w = 0;
      char x1 = 0, x2 = 0;
      std::istringstream ss(spec);
      if (!(ss >> c >> x1 >> h >> x2 >> w) || x1 != 'x' || x2 != 'x' || c <= 0 || h <= 0 || w <= 0)
        parse_fail(ln, "expected input CxHxW, got '" + spec + "'");
      b.g.in_channels = c;
      b.g.in_h = h;
      b.g.in_w = w;
      b.cur_c = c;
      have_input = true;
    } else if (ln.cmd == "conv") {
      if (have_gap) parse_fail(ln, "conv after gap");
      int out = get_int(ln, "out");
      int k = get_int(ln, "k");
      if (out <= 0 || k <= 0) parse_fail(ln, "conv parameters must be positive");
      b.conv(out, k, get_int(ln, "s", 1), get_int(ln, "p", 0), has_flag(ln, "bn"), has_flag(ln, "relu"));
    } else if (ln.cmd == "dwconv") {
      if (have_gap) parse_fail(ln, "dwconv after gap");
      int k = get_int(ln, "k");
      if (k <= 0) parse_fail(ln, "dwconv kernel must be positive");
      b.dwconv(k, get_int(ln, "s", 1), get_int(ln, "p", 0), has_flag(ln, "bn"), has_flag(ln, "relu"));
    } else if (ln.cmd == "relu") {
      if (have_gap || b.g.layers.empty()) parse_fail(ln, "relu needs a preceding feature layer");
      b.append({.kind = LayerKind::Relu});
    } else if (ln.cmd == "bn") {
      if (have_gap || b.g.layers.empty()) parse_fail(ln, "bn needs a preceding feature layer");
      b.append({.kind = LayerKind::BatchNorm});
    } else if (ln.cmd == "maxpool") {
      if (have_gap) parse_fail(ln, "maxpool after gap");
      b.append({.kind = LayerKind::MaxPool, .kernel = get_int(ln, "k"), .stride = get_int(ln, "s")});
    } else if (ln.cmd == "block") {
      if (have_gap) parse_fail(ln, "block after gap");
      if (ln.flags.empty()) parse_fail(ln, "block needs a type (res | mbconv)");
      const std::string& type = ln.flags[0];
      int repeat = get_int(ln, "repeat", 1);
      if (repeat <= 0) parse_fail(ln, "repeat must be positive");
      for (int r = 0; r < repeat; ++r) {
        int stride = r == 0 ? get_int(ln, "s", 1) : 1;
        if (type == "res")
          b.res_block(ln, get_int(ln, "out"), get_int(ln, "k", 3), stride);
        else if (type == "mbconv")
          b.mbconv_block(ln, get_int(ln, "out"), get_int(ln, "t", 6), get_int(ln, "k", 3), stride);
        else
          parse_fail(ln, "unknown block type '" + type + "'");
      }
    } else if (ln.cmd == "gap") {
      if (have_gap) parse_fail(ln, "duplicate gap");
      b.append({.kind = LayerKind::GlobalAvgPool});
      have_gap = true;
    } else if (ln.cmd == "fc") {
      if (!have_gap) parse_fail(ln, "fc requires a preceding gap");
      int out = get_int(ln, "out");
      if (out <= 0) parse_fail(ln, "fc out must be positive");
      b.g.head_linear = b.append({.kind = LayerKind::Linear, .out_channels = out});
      b.g.num_classes = out;
      have_fc = true;
    } else if (ln.cmd == "softmax") {
      if (!have_fc || have_softmax) parse_fail(ln, "softmax must follow fc exactly once");
      b.append({.kind = LayerKind::SoftmaxHead});
      have_softmax = true;
    } else {
      parse_fail(ln, "unknown layer kind '" + ln.cmd + "'");
    }
  }
  if (!have_fc) fail("model description has no prediction layer (gap + fc)");
  if (!have_softmax) b.append({.kind = LayerKind::SoftmaxHead});

  ModelGraph& g = b.g;
  infer_shapes(g);
  for (size_t i = 0; i < g.layers.size(); ++i)
    if (g.layers[i].kind == LayerKind::Conv || g.layers[i].kind == LayerKind::DwConv)
      g.indexed.push_back(static_cast<int>(i));
  if (g.indexed.empty()) fail("model has no feature layers");
  g.groups = resolution_groups(g);
  g.canonical_text = canonicalize(g);
  return g;
}

ModelGraph load_model_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("cannot open model description '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return build_model(ss.str());
}

FlopsReport count_flops(const ModelGraph& g) {
  FlopsReport r;
  r.per_layer.assign(g.layers.size(), 0);
  ShapeCHW cur{g.in_channels, g.in_h, g.in_w};
  for (size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& ls = g.layers[i];
    const ShapeCHW& out = g.out_shapes[i];
    uint64_t macs = 0;
    switch (ls.kind) {
      case LayerKind::Conv:
        macs = static_cast<uint64_t>(ls.out_channels) * static_cast<uint64_t>(cur.c) *
               static_cast<uint64_t>(ls.kernel) * static_cast<uint64_t>(ls.kernel) *
               static_cast<uint64_t>(out.h) * static_cast<uint64_t>(out.w);
        break;
      case LayerKind::DwConv:
        macs = static_cast<uint64_t>(cur.c) * static_cast<uint64_t>(ls.kernel) *
               static_cast<uint64_t>(ls.kernel) * static_cast<uint64_t>(out.h) *
               static_cast<uint64_t>(out.w);
        break;
      case LayerKind::Linear:
        macs = static_cast<uint64_t>(cur.c) * static_cast<uint64_t>(ls.out_channels);
        break;
      case LayerKind::ResidualAdd:
        if (ls.proj) {
          const ShapeCHW& src = g.out_shapes[static_cast<size_t>(ls.res_source)];
          macs = static_cast<uint64_t>(out.c) * static_cast<uint64_t>(src.c) *
                 static_cast<uint64_t>(out.h) * static_cast<uint64_t>(out.w);
        }
        break;
      default:
        break;  // BN/ReLU/pool/softmax are free under the MAC convention
    }
    r.per_layer[i] = macs;
    r.total += macs;
    cur = out;
  }
  r.per_group.assign(g.groups.size(), 0);
  for (size_t i = 0; i < g.layers.size(); ++i) {
    if (r.per_layer[i] == 0) continue;
    // attribute each counted layer to the resolution group of the nearest
    // enclosing feature layer (projections follow their block)
    int ki = -1;
    for (size_t j = 0; j < g.indexed.size(); ++j)
      if (g.indexed[j] <= static_cast<int>(i)) ki = static_cast<int>(j);
    if (ki >= 0 && g.layers[i].kind != LayerKind::Linear)
      r.per_group[static_cast<size_t>(g.group_of(ki))] += r.per_layer[i];
  }
  return r;
}

}  // namespace s2d
