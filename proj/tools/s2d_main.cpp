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

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "s2d/checkpoint.hpp"
#include "s2d/config.hpp"
#include "s2d/dynrt.hpp"
#include "s2d/executor.hpp"
#include "s2d/search.hpp"

namespace fs = std::filesystem;
using namespace s2d;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string setting_path;
  std::string weights_path;
  std::string thresholds;
  std::string model_path;
  double grid_step = 0.0;
  int64_t seed = -1;
  int threads = -1;
};

int default_threads() {
  if (const char* env = std::getenv("S2D_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

// Advisory lock: only one command may write a run directory at a time.
struct RunLock {
  fs::path path;
  explicit RunLock(const fs::path& dir) : path(dir / ".lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    FILE* f = std::fopen(path.c_str(), "wx");
    if (!f)
      fail("run directory '" + dir.string() + "' is locked by another command (remove " +
           path.string() + " if stale)");
    std::fprintf(f, "%d\n", static_cast<int>(::getpid()));
    std::fclose(f);
  }
  ~RunLock() { std::remove(path.c_str()); }
};

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary);
  if (!os) fail("cannot open '" + p.string() + "' for writing");
  os << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) fail("cannot open '" + p.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig load_cfg(CommonOpts& o) {
  if (o.config_path.empty()) fail("--config is required for this command");
  ExperimentConfig cfg = load_config(o.config_path);
  if (o.seed >= 0) cfg.search.seed = static_cast<uint64_t>(o.seed);
  if (o.threads > 0)
    cfg.search.threads = o.threads;
  else if (cfg.search.threads <= 0)
    cfg.search.threads = default_threads();
  if (o.grid_step > 0.0) cfg.search.grid.step = o.grid_step;
  return cfg;
}

void ensure_run_dir(const fs::path& out, const ExperimentConfig& cfg) {
  for (const char* sub : {"settings", "weights", "traces", "reports"})
    fs::create_directories(out / sub);
  write_file(out / "config.txt", cfg.source_text);
  write_file(out / "model.txt", read_file(cfg.model_path));
}

TransformSetting setting_for(const ExperimentConfig& cfg, const ModelGraph& g,
                             const std::string& setting_path) {
  if (setting_path.empty()) return identity_setting(g, cfg.search.G);
  return setting_from_text(read_file(setting_path), &g);
}

std::vector<double> parse_thresholds(const std::string& s) {
  std::vector<double> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

// Traces are cached per (weights bytes, dataset tag) so sweeps rerun without
// inference when nothing changed.
TraceTable trace_for(const fs::path& out, const MultiStageModel& msm, WeightStore& ws,
                     const Dataset& ds, const std::string& weights_file) {
  uint64_t h = fnv1a_str(read_file(weights_file));
  h = fnv1a(ds.pixels.data(), ds.pixels.size(), h);
  h = fnv1a(ds.labels.data(), ds.labels.size() * sizeof(uint16_t), h);
  h = fnv1a(&msm.setting.model_hash, sizeof(uint64_t), h);
  char name[64];
  snprintf(name, sizeof(name), "%016llx.trace", static_cast<unsigned long long>(h));
  fs::path p = out / "traces" / name;
  if (fs::exists(p)) return load_trace(p.string());
  TraceTable t = build_trace_table(msm, ws, ds);
  save_trace(t, p.string());
  return t;
}

std::string fmt_macs_vec(const std::vector<uint64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

int cmd_flops(CommonOpts& o) {
  std::string model = o.model_path;
  std::optional<ExperimentConfig> cfg;
  if (model.empty()) {
    cfg = load_cfg(o);
    model = cfg->model_path;
  }
  ModelGraph g = load_model_file(model);
  FlopsReport r = count_flops(g);
  if (!o.out_dir.empty()) {
    fs::create_directories(fs::path(o.out_dir) / "reports");
    std::ostringstream csv;
    csv << "layer,kind,macs\n";
    for (size_t i = 0; i < g.layers.size(); ++i)
      csv << i << "," << layer_kind_name(g.layers[i].kind) << "," << r.per_layer[i] << "\n";
    csv << "total,," << r.total << "\n";
    write_file(fs::path(o.out_dir) / "reports" / "flops.csv", csv.str());
  }
  std::printf("flops model=%s total=%llu groups=%d per_group=%s\n", model.c_str(),
              static_cast<unsigned long long>(r.total), g.k_groups(),
              fmt_macs_vec(r.per_group).c_str());
  return 0;
}

int cmd_transform(CommonOpts& o) {
  ExperimentConfig cfg = load_cfg(o);
  if (o.out_dir.empty()) fail("--out is required");
  RunLock lock(o.out_dir);
  ensure_run_dir(o.out_dir, cfg);
  ModelGraph g = load_model_file(cfg.model_path);
  TransformSetting st = setting_for(cfg, g, o.setting_path);
  MultiStageModel msm = apply_transform(g, st);

  write_file(fs::path(o.out_dir) / "settings" / "current.setting", setting_to_text(st));
  std::ostringstream rep;
  rep << "stages " << msm.num_stages << "\n";
  rep << "accumulated_macs " << fmt_macs_vec(msm.accumulated) << "\n";
  for (size_t ki = 0; ki < g.indexed.size(); ++ki) {
    int li = g.indexed[ki];
    rep << "layer " << li << " (" << layer_kind_name(g.layers[static_cast<size_t>(li)].kind)
        << ") widths";
    for (int i = 0; i < msm.num_stages; ++i)
      rep << " " << msm.stages[static_cast<size_t>(i)][static_cast<size_t>(li)].out_c;
    rep << "\n";
  }
  for (const ConcatEdge& e : msm.edges)
    rep << "reuse stage" << e.src_stage + 1 << "->stage" << e.dst_stage + 1 << " layer " << e.layer
        << "\n";
  write_file(fs::path(o.out_dir) / "reports" / "transform.txt", rep.str());
  std::printf("transform stages=%d accumulated=%s edges=%zu\n", msm.num_stages,
              fmt_macs_vec(msm.accumulated).c_str(), msm.edges.size());
  return 0;
}

int cmd_search(CommonOpts& o) {
  ExperimentConfig cfg = load_cfg(o);
  if (o.out_dir.empty()) fail("--out is required");
  RunLock lock(o.out_dir);
  ensure_run_dir(o.out_dir, cfg);
  ModelGraph g = load_model_file(cfg.model_path);
  DataBundle data = load_data(cfg);

  std::ofstream live_log(fs::path(o.out_dir) / "search.log", std::ios::binary);
  if (!live_log) fail("cannot open search.log for writing");
  SearchResult res = search(g, &data.train, &data.val, cfg.search, nullptr, &live_log);
  live_log.close();
  save_checkpoint(res.controller.params(),
                  (fs::path(o.out_dir) / "weights" / "controller.s2dw").string());

  std::ostringstream sum;
  sum << "rank,encoding,acc,cost,reward\n";
  char buf[256];
  for (size_t i = 0; i < res.records.size(); ++i) {
    const RewardRecord& r = res.records[i];
    snprintf(buf, sizeof(buf), "%zu,%s,%.9g,%.9g,%.9g\n", i + 1, r.encoding.c_str(), r.acc, r.cost,
             r.reward);
    sum << buf;
  }
  write_file(fs::path(o.out_dir) / "reports" / "search_summary.csv", sum.str());

  for (size_t i = 0; i < res.top.size(); ++i) {
    std::string tag = "top" + std::to_string(i + 1);
    write_file(fs::path(o.out_dir) / "settings" / (tag + ".setting"),
               setting_to_text(res.top[i].setting));
    save_checkpoint(res.top[i].weights, (fs::path(o.out_dir) / "weights" / (tag + ".s2dw")).string());
    std::string th = "-";
    if (!res.top[i].thresholds.t.empty()) {
      th.clear();
      for (size_t j = 0; j < res.top[i].thresholds.t.size(); ++j) {
        snprintf(buf, sizeof(buf), "%s%.2f", j ? "," : "", res.top[i].thresholds.t[j]);
        th += buf;
      }
    }
    write_file(fs::path(o.out_dir) / "reports" / (tag + ".thresholds.txt"), th + "\n");
  }
  double best = res.records.empty() ? 0.0 : res.records.front().reward;
  std::printf("search candidates=%d unique=%zu best_reward=%.9g top_retrained=%zu\n",
              cfg.search.budget, res.records.size(), best, res.top.size());
  return 0;
}

int cmd_train(CommonOpts& o) {
  ExperimentConfig cfg = load_cfg(o);
  if (o.out_dir.empty()) fail("--out is required");
  RunLock lock(o.out_dir);
  ensure_run_dir(o.out_dir, cfg);
  ModelGraph g = load_model_file(cfg.model_path);
  DataBundle data = load_data(cfg);
  TransformSetting st = setting_for(cfg, g, o.setting_path);
  MultiStageModel msm = apply_transform(g, st);

  TrainConfig tc = cfg.search.train;
  tc.seed = cfg.search.seed;
  if (!tc.alpha.empty() && static_cast<int>(tc.alpha.size()) != msm.num_stages)
    tc.alpha.assign(static_cast<size_t>(msm.num_stages), 1.0);
  WeightStore ws = init_msm_weights(msm, cfg.search.seed);
  TrainResult tr = train(msm, ws, data.train, &data.val, tc);

  write_file(fs::path(o.out_dir) / "settings" / "trained.setting", setting_to_text(st));
  save_checkpoint(ws, (fs::path(o.out_dir) / "weights" / "trained.s2dw").string());
  save_history_csv(tr, (fs::path(o.out_dir) / "reports" / "history.csv").string());
  TraceTable val_trace = build_trace_table(msm, ws, data.val);
  TraceTable test_trace = build_trace_table(msm, ws, data.test);
  save_trace(val_trace, (fs::path(o.out_dir) / "traces" / "val.trace").string());
  save_trace(test_trace, (fs::path(o.out_dir) / "traces" / "test.trace").string());

  double final_loss = tr.history.empty() ? 0.0 : tr.history.back().loss;
  double val_acc = tr.history.empty() || tr.history.back().stage_acc.empty()
                       ? 0.0
                       : tr.history.back().stage_acc.back();
  std::printf("train epochs=%d final_loss=%.6f val_acc_final_stage=%.4f weights=%s\n", tc.epochs,
              final_loss, val_acc, (fs::path(o.out_dir) / "weights" / "trained.s2dw").c_str());
  return 0;
}

int cmd_eval(CommonOpts& o) {
  ExperimentConfig cfg = load_cfg(o);
  if (o.weights_path.empty()) fail("--weights is required");
  if (o.out_dir.empty()) fail("--out is required");
  RunLock lock(o.out_dir);
  ensure_run_dir(o.out_dir, cfg);
  ModelGraph g = load_model_file(cfg.model_path);
  DataBundle data = load_data(cfg);
  TransformSetting st = setting_for(cfg, g, o.setting_path);
  MultiStageModel msm = apply_transform(g, st);
  WeightStore ws = init_msm_weights(msm, 0);
  ws.assign_from(load_checkpoint(o.weights_path));

  ThresholdPolicy policy;
  if (!o.thresholds.empty()) {
    policy.t = parse_thresholds(o.thresholds);
  } else {
    TraceTable val_trace = trace_for(o.out_dir, msm, ws, data.val, o.weights_path);
    policy = select_thresholds(val_trace, cfg.search.omega, cfg.search.grid);
  }
  TraceTable trace = trace_for(o.out_dir, msm, ws, data.test, o.weights_path);
  ExitStats stats = simulate_policy(trace, policy);
  save_exit_stats_csv(stats, (fs::path(o.out_dir) / "reports" / "eval.csv").string());

  std::string th = "-";
  if (!policy.t.empty()) {
    th.clear();
    char buf[32];
    for (size_t j = 0; j < policy.t.size(); ++j) {
      snprintf(buf, sizeof(buf), "%s%.2f", j ? "," : "", policy.t[j]);
      th += buf;
    }
  }
  std::printf("eval thresholds=%s accuracy=%.6f mean_macs=%.1f cost=%.6f\n", th.c_str(),
              stats.overall_accuracy, stats.mean_macs,
              stats.mean_macs / static_cast<double>(trace.base_static_macs));
  return 0;
}

int cmd_sweep(CommonOpts& o) {
  ExperimentConfig cfg = load_cfg(o);
  if (o.weights_path.empty()) fail("--weights is required");
  if (o.out_dir.empty()) fail("--out is required");
  RunLock lock(o.out_dir);
  ensure_run_dir(o.out_dir, cfg);
  ModelGraph g = load_model_file(cfg.model_path);
  DataBundle data = load_data(cfg);
  TransformSetting st = setting_for(cfg, g, o.setting_path);
  MultiStageModel msm = apply_transform(g, st);
  WeightStore ws = init_msm_weights(msm, 0);
  ws.assign_from(load_checkpoint(o.weights_path));

  TraceTable trace = trace_for(o.out_dir, msm, ws, data.test, o.weights_path);
  std::vector<TradeoffPoint> points = sweep_thresholds(trace, cfg.search.grid, cfg.search.omega);
  save_sweep_csv(points, msm.num_stages, (fs::path(o.out_dir) / "reports" / "sweep.csv").string());
  size_t pareto = 0;
  for (const TradeoffPoint& p : points)
    if (p.pareto) ++pareto;
  std::printf("sweep points=%zu pareto=%zu csv=%s\n", points.size(), pareto,
              (fs::path(o.out_dir) / "reports" / "sweep.csv").c_str());
  return 0;
}

int cmd_report(CommonOpts& o) {
  if (o.out_dir.empty()) fail("--out is required");
  fs::path out(o.out_dir);
  if (!fs::exists(out)) fail("run directory '" + o.out_dir + "' does not exist");
  std::ostringstream rep;
  if (fs::exists(out / "search.log")) {
    std::string log = read_file(out / "search.log");
    size_t samples = 0;
    std::istringstream is(log);
    std::string line;
    std::string best_line;
    double best = -1.0;
    while (std::getline(is, line)) {
      if (line.rfind("sample=", 0) != 0) continue;
      ++samples;
      auto pos = line.find("reward=");
      if (pos != std::string::npos) {
        double r = std::atof(line.c_str() + pos + 7);
        if (r > best) {
          best = r;
          best_line = line;
        }
      }
    }
    rep << "search: samples=" << samples << " best_reward=" << best << "\n";
    if (!best_line.empty()) rep << "search best: " << best_line << "\n";
  }
  for (const char* f : {"reports/history.csv", "reports/eval.csv", "reports/sweep.csv",
                        "reports/search_summary.csv", "reports/transform.txt"}) {
    if (!fs::exists(out / f)) continue;
    std::string content = read_file(out / f);
    size_t lines = static_cast<size_t>(std::count(content.begin(), content.end(), '\n'));
    rep << f << ": " << lines << " lines\n";
  }
  std::string text = rep.str();
  if (text.empty()) text = "run directory has no artifacts yet\n";
  write_file(out / "reports" / "summary.txt", text);
  std::fputs(text.c_str(), stdout);
  std::printf("report dir=%s\n", o.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"static-to-dynamic CNN transformation workbench"};
  app.require_subcommand(1);
  CommonOpts o;

  auto add_common = [&](CLI::App* c, bool needs_out) {
    c->add_option("--config", o.config_path, "experiment config (key=value)");
    c->add_option("--seed", o.seed, "override config seed");
    c->add_option("--threads", o.threads, "worker threads (default: S2D_THREADS or 1)");
    auto* out = c->add_option("--out", o.out_dir, "run directory");
    if (needs_out) out->required();
  };

  CLI::App* flops = app.add_subcommand("flops", "MAC cost of a model description");
  flops->add_option("--model", o.model_path, "model description file");
  add_common(flops, false);

  CLI::App* transform = app.add_subcommand("transform", "materialize a multi-stage model");
  add_common(transform, true);
  transform->add_option("--setting", o.setting_path, "transformation setting file");

  CLI::App* searchc = app.add_subcommand("search", "run the architecture search");
  add_common(searchc, true);

  CLI::App* trainc = app.add_subcommand("train", "fully train a setting (identity by default)");
  add_common(trainc, true);
  trainc->add_option("--setting", o.setting_path, "transformation setting file");

  CLI::App* evalc = app.add_subcommand("eval", "exit statistics under thresholds");
  add_common(evalc, true);
  evalc->add_option("--setting", o.setting_path, "transformation setting file");
  evalc->add_option("--weights", o.weights_path, "weight checkpoint");
  evalc->add_option("--thresholds", o.thresholds, "comma-separated t_1..t_{s-1}");

  CLI::App* sweepc = app.add_subcommand("sweep", "threshold trade-off sweep");
  add_common(sweepc, true);
  sweepc->add_option("--setting", o.setting_path, "transformation setting file");
  sweepc->add_option("--weights", o.weights_path, "weight checkpoint");
  sweepc->add_option("--grid-step", o.grid_step, "threshold grid step");

  CLI::App* reportc = app.add_subcommand("report", "summarize a run directory");
  reportc->add_option("--out", o.out_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (flops->parsed()) return cmd_flops(o);
    if (transform->parsed()) return cmd_transform(o);
    if (searchc->parsed()) return cmd_search(o);
    if (trainc->parsed()) return cmd_train(o);
    if (evalc->parsed()) return cmd_eval(o);
    if (sweepc->parsed()) return cmd_sweep(o);
    if (reportc->parsed()) return cmd_report(o);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
