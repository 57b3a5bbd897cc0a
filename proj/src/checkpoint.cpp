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

#include "s2d/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace s2d {

namespace {

void put_bytes(std::ofstream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put_le(std::ofstream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(os, buf, sizeof(T));
}

struct Reader {
  std::vector<unsigned char> bytes;
  size_t pos = 0;
  std::string path;

  void need(size_t n, const char* what) const {
    if (pos + n > bytes.size())
      fail("truncated checkpoint '" + path + "' reading " + what + " at offset " + std::to_string(pos));
  }
  template <typename T>
  T get_le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[pos + i]) << (8 * i);
    pos += sizeof(T);
    return v;
  }
  std::string get_str(size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const WeightStore& store, const std::string& path, int bits) {
  if (bits != 32 && bits != 64) fail("checkpoint precision must be 32 or 64");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("cannot open '" + path + "' for writing");
  os.write("S2DW", 4);
  put_le<uint8_t>(os, 1);
  put_le<uint64_t>(os, store.size());
  for (const auto& [name, t] : store.items()) {
    if (name.size() > 0xffff) fail("weight name too long: " + name);
    put_le<uint16_t>(os, static_cast<uint16_t>(name.size()));
    put_bytes(os, name.data(), name.size());
    put_le<uint8_t>(os, static_cast<uint8_t>(t.shape().rank()));
    for (int64_t d : t.shape().dims()) put_le<uint64_t>(os, static_cast<uint64_t>(d));
    put_le<uint8_t>(os, static_cast<uint8_t>(bits));
    if (bits == 64) {
      for (double v : t.vec()) {
        uint64_t u;
        std::memcpy(&u, &v, 8);
        put_le<uint64_t>(os, u);
      }
    } else {
      for (double v : t.vec()) {
        float f = static_cast<float>(v);
        uint32_t u;
        std::memcpy(&u, &f, 4);
        put_le<uint32_t>(os, u);
      }
    }
  }
  if (!os) fail("write failure on '" + path + "'");
}

WeightStore load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open checkpoint '" + path + "'");
  Reader r;
  r.path = path;
  r.bytes.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());

  if (r.get_str(4, "magic") != "S2DW") fail("'" + path + "' is not an S2DW checkpoint");
  uint8_t version = r.get_le<uint8_t>("version");
  if (version != 1) fail("unsupported checkpoint version " + std::to_string(version));
  uint64_t count = r.get_le<uint64_t>("tensor count");

  WeightStore out;
  for (uint64_t i = 0; i < count; ++i) {
    uint16_t name_len = r.get_le<uint16_t>("name length");
    std::string name = r.get_str(name_len, "name");
    uint8_t rank = r.get_le<uint8_t>("rank");
    std::vector<int64_t> dims;
    int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      uint64_t v = r.get_le<uint64_t>("dim");
      dims.push_back(static_cast<int64_t>(v));
      numel *= static_cast<int64_t>(v);
    }
    uint8_t flag = r.get_le<uint8_t>("precision flag");
    if (flag != 32 && flag != 64) fail("bad precision flag in '" + path + "'");
    std::vector<double> values(static_cast<size_t>(numel));
    if (flag == 64) {
      for (int64_t j = 0; j < numel; ++j) {
        uint64_t u = r.get_le<uint64_t>("value");
        double v;
        std::memcpy(&v, &u, 8);
        values[static_cast<size_t>(j)] = v;
      }
    } else {
      for (int64_t j = 0; j < numel; ++j) {
        uint32_t u = r.get_le<uint32_t>("value");
        float f;
        std::memcpy(&f, &u, 4);
        values[static_cast<size_t>(j)] = static_cast<double>(f);
      }
    }
    out.add(name, Tensor::from(Shape(std::move(dims)), std::move(values)));
  }
  return out;
}

}  // namespace s2d
