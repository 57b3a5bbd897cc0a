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

#include "s2d/weights.hpp"

namespace s2d {

// Weight checkpoint, magic "S2DW". Layout (all integers little-endian):
//   "S2DW" | u8 version (1) | u64 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 rank | u64 dims[rank]
//               | u8 precision flag (32 or 64) | raw values at that precision
// Tensors are written in name order.
void save_checkpoint(const WeightStore& store, const std::string& path, int bits = 64);

// Loaded tensors carry requires_grad=false; use WeightStore::assign_from to
// pour them into a model-defined store.
WeightStore load_checkpoint(const std::string& path);

}  // namespace s2d
