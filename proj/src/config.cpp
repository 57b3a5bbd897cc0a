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

#include "s2d/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace s2d {

namespace {

std::vector<double> parse_double_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  std::istringstream is(v);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      fail("config: bad number '" + tok + "' in " + key);
    }
  }
  if (out.empty()) fail("config: empty list for " + key);
  return out;
}

struct Setter {
  ExperimentConfig& c;
  std::string dir;

  std::string resolve(const std::string& p) const {
    std::filesystem::path fp(p);
    if (fp.is_absolute() || dir.empty()) return p;
    return (std::filesystem::path(dir) / fp).string();
  }

  bool apply(const std::string& key, const std::string& v) {
    auto to_int = [&](const std::string& s) {
      try {
        return std::stoll(s);
      } catch (const std::exception&) {
        fail("config: bad integer '" + s + "' for " + key);
      }
    };
    auto to_dbl = [&](const std::string& s) {
      try {
        return std::stod(s);
      } catch (const std::exception&) {
        fail("config: bad number '" + s + "' for " + key);
      }
    };
    SearchConfig& sc = c.search;
    TrainConfig& tc = sc.train;

    if (key == "model") c.model_path = resolve(v);
    else if (key == "data.kind") c.data_kind = v;
    else if (key == "data.train") c.data_train = resolve(v);
    else if (key == "data.val") c.data_val = resolve(v);
    else if (key == "data.test") c.data_test = resolve(v);
    else if (key == "data.holdout") c.holdout = to_dbl(v);
    else if (key == "data.classes") c.synth.classes = static_cast<int>(to_int(v));
    else if (key == "data.size") c.synth.size = static_cast<int>(to_int(v));
    else if (key == "data.channels") c.synth.channels = static_cast<int>(to_int(v));
    else if (key == "data.train_n") c.synth.train_n = static_cast<int>(to_int(v));
    else if (key == "data.val_n") c.synth.val_n = static_cast<int>(to_int(v));
    else if (key == "data.test_n") c.synth.test_n = static_cast<int>(to_int(v));
    else if (key == "data.noise_lo") c.synth.noise_lo = to_dbl(v);
    else if (key == "data.noise_hi") c.synth.noise_hi = to_dbl(v);
    else if (key == "data.seed") c.synth.seed = static_cast<uint64_t>(to_int(v));
    else if (key == "G") sc.G = static_cast<int>(to_int(v));
    else if (key == "s") sc.s = static_cast<int>(to_int(v));
    else if (key == "omega") sc.omega = to_dbl(v);
    else if (key == "alpha") tc.alpha = parse_double_list(v, key);
    else if (key == "train.epochs") tc.epochs = static_cast<int>(to_int(v));
    else if (key == "train.batch") tc.batch = static_cast<int>(to_int(v));
    else if (key == "train.lr") tc.lr = to_dbl(v);
    else if (key == "train.momentum") tc.momentum = to_dbl(v);
    else if (key == "train.weight_decay") tc.weight_decay = to_dbl(v);
    else if (key == "train.milestones") tc.milestones = parse_double_list(v, key);
    else if (key == "train.warmup_iters") tc.warmup_iters = static_cast<int>(to_int(v));
    else if (key == "train.flip") tc.augment_flip = to_int(v) != 0;
    else if (key == "train.pad_crop") tc.augment_pad_crop = static_cast<int>(to_int(v));
    else if (key == "search.budget") sc.budget = static_cast<int>(to_int(v));
    else if (key == "search.inner_epochs") sc.inner_epochs = static_cast<int>(to_int(v));
    else if (key == "search.traj_per_update") sc.traj_per_update = static_cast<int>(to_int(v));
    else if (key == "search.top_k") sc.top_k = static_cast<int>(to_int(v));
    else if (key == "search.ppo_epochs") sc.ppo.epochs = static_cast<int>(to_int(v));
    else if (key == "search.clip") sc.ppo.clip = to_dbl(v);
    else if (key == "search.minibatch") sc.ppo.minibatch = static_cast<int>(to_int(v));
    else if (key == "search.vf_coef") sc.ppo.vf_coef = to_dbl(v);
    else if (key == "search.ent_coef") sc.ppo.ent_coef = to_dbl(v);
    else if (key == "search.ctrl_lr") sc.ppo.lr = to_dbl(v);
    else if (key == "grid.step") sc.grid.step = to_dbl(v);
    else if (key == "seed") sc.seed = static_cast<uint64_t>(to_int(v));
    else if (key == "threads") sc.threads = static_cast<int>(to_int(v));
    else return false;
    return true;
  }
};

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& dir) {
  ExperimentConfig cfg;
  cfg.source_text = text;
  Setter setter{cfg, dir};
  std::istringstream is(text);
  std::string raw;
  int number = 0;
  while (std::getline(is, raw)) {
    ++number;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    // trim
    auto b = raw.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = raw.find_last_not_of(" \t\r");
    std::string line = raw.substr(b, e - b + 1);
    auto eq = line.find('=');
    if (eq == std::string::npos)
      fail("config line " + std::to_string(number) + ": expected key = value");
    auto strip = [](std::string s) {
      auto sb = s.find_first_not_of(" \t");
      auto se = s.find_last_not_of(" \t");
      return sb == std::string::npos ? std::string() : s.substr(sb, se - sb + 1);
    };
    std::string key = strip(line.substr(0, eq));
    std::string value = strip(line.substr(eq + 1));
    if (key.empty() || value.empty())
      fail("config line " + std::to_string(number) + ": empty key or value");
    if (!setter.apply(key, value))
      fail("config line " + std::to_string(number) + ": unknown key '" + key + "'");
  }

  if (cfg.model_path.empty()) fail("config: missing required key 'model'");
  if (!std::filesystem::exists(cfg.model_path))
    fail("config: model description '" + cfg.model_path + "' does not exist");
  if (cfg.data_kind == "file") {
    if (cfg.data_train.empty() || cfg.data_test.empty())
      fail("config: data.kind=file requires data.train and data.test");
    for (const std::string& p : {cfg.data_train, cfg.data_test})
      if (!std::filesystem::exists(p)) fail("config: dataset '" + p + "' does not exist");
    if (!cfg.data_val.empty() && !std::filesystem::exists(cfg.data_val))
      fail("config: dataset '" + cfg.data_val + "' does not exist");
  } else if (cfg.data_kind != "synthetic") {
    fail("config: data.kind must be synthetic or file");
  }
  if (cfg.holdout <= 0.0 || cfg.holdout >= 1.0) fail("config: data.holdout must lie in (0,1)");
  cfg.search.validate();
  cfg.search.train.validate(cfg.search.s);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), std::filesystem::path(path).parent_path().string());
}

namespace {

// carve the last `frac` of the samples into a validation split
DataBundle split_holdout(Dataset train, Dataset test, double frac) {
  size_t n_val = std::max<size_t>(1, static_cast<size_t>(static_cast<double>(train.size()) * frac));
  if (n_val >= train.size()) fail("holdout fraction leaves no training data");
  size_t n_train = train.size() - n_val;
  size_t plane = static_cast<size_t>(train.channels) * train.height * train.width;

  DataBundle b;
  b.val = train;
  b.val.split = "val";
  b.val.pixels.assign(train.pixels.begin() + static_cast<long>(n_train * plane), train.pixels.end());
  b.val.labels.assign(train.labels.begin() + static_cast<long>(n_train), train.labels.end());
  train.pixels.resize(n_train * plane);
  train.labels.resize(n_train);
  train.split = "train";
  b.train = std::move(train);
  b.test = std::move(test);
  return b;
}

}  // namespace

DataBundle load_data(const ExperimentConfig& cfg) {
  if (cfg.data_kind == "synthetic") return generate_synthetic(cfg.synth);
  Dataset train = load_dataset_file(cfg.data_train);
  Dataset test = load_dataset_file(cfg.data_test);
  if (!cfg.data_val.empty()) {
    DataBundle b;
    b.train = std::move(train);
    b.val = load_dataset_file(cfg.data_val);
    b.test = std::move(test);
    return b;
  }
  return split_holdout(std::move(train), std::move(test), cfg.holdout);
}

}  // namespace s2d
