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

#include <string>

#include "s2d/dataset.hpp"
#include "s2d/search.hpp"

namespace s2d {

// Flat key=value experiment description ('#' comments). Unknown keys are
// hard errors so hyperparameter typos fail loudly. See README for the full
// key list.
struct ExperimentConfig {
  std::string model_path;

  // data.kind = synthetic | file
  std::string data_kind = "synthetic";
  SyntheticSpec synth;
  std::string data_train, data_val, data_test;  // file mode paths
  double holdout = 0.1;  // validation fraction carved from train when no val set

  SearchConfig search;  // carries G/s/omega/train/ppo/grid/seed/threads

  std::string source_text;  // raw config for provenance copies
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& text, const std::string& dir);

// Resolves the configured dataset: generates the synthetic bundle or loads
// the files, carving a validation split from train when none is given.
DataBundle load_data(const ExperimentConfig& cfg);

}  // namespace s2d
