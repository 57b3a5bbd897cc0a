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
#include <string>
#include <vector>

#include "s2d/tensor.hpp"

namespace s2d {

// Labeled image set. Pixels are stored as the 8-bit values of the on-disk
// format; batches expose them scaled to [0,1].
struct Dataset {
  int channels = 0, height = 0, width = 0, classes = 0;
  std::vector<uint8_t> pixels;  // N*C*H*W row-major
  std::vector<uint16_t> labels;
  std::string split;

  size_t size() const { return labels.size(); }
  Tensor batch(const std::vector<size_t>& idx) const;
  std::vector<int> batch_labels(const std::vector<size_t>& idx) const;
  Tensor one(size_t idx) const;  // [1,C,H,W]
};

struct DataBundle {
  Dataset train, val, test;
};

// Seeded K-class pattern generator: oriented bars (one orientation per
// class) over Gaussian noise whose level varies per sample, so confidence
// spreads from easy to hard. train/val/test come from one stream in order.
struct SyntheticSpec {
  int classes = 3;
  int size = 16;
  int channels = 3;
  int train_n = 2400, val_n = 300, test_n = 300;
  double noise_lo = 0.05, noise_hi = 0.6;
  uint64_t seed = 7;
};

DataBundle generate_synthetic(const SyntheticSpec& spec);

uint32_t crc32(const void* bytes, size_t n, uint32_t seed = 0);

// Dataset file, magic "S2DD" (all integers little-endian):
//   "S2DD" | u8 version (1) | u32 N | u32 C | u32 H | u32 W | u16 classes
//   | N*C*H*W raw 8-bit pixels (row-major) | N u16 labels | u32 CRC32
// The CRC covers every preceding byte including the magic.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset_file(const std::string& path);

}  // namespace s2d
