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

#include "s2d/dataset.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "s2d/rng.hpp"

namespace s2d {

Tensor Dataset::batch(const std::vector<size_t>& idx) const {
  const size_t plane = static_cast<size_t>(channels) * height * width;
  Tensor t = Tensor::zeros(Shape{static_cast<int64_t>(idx.size()), channels, height, width});
  double* d = t.data();
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= size()) fail("dataset index out of range");
    const uint8_t* src = pixels.data() + idx[i] * plane;
    for (size_t j = 0; j < plane; ++j) d[i * plane + j] = static_cast<double>(src[j]) / 255.0;
  }
  return t;
}

std::vector<int> Dataset::batch_labels(const std::vector<size_t>& idx) const {
  std::vector<int> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
  return out;
}

Tensor Dataset::one(size_t idx) const { return batch({idx}); }

namespace {

void render_sample(Rng& rng, const SyntheticSpec& spec, int label, uint8_t* out) {
  const int n = spec.size;
  // per-sample hardness couples a fading bar, rising noise, and an angle
  // drift toward the class boundary, so confidences spread from easy to hard
  const double hardness = rng.uniform();
  const double class_sep = M_PI / spec.classes;
  const double jitter = hardness * 0.85 * (class_sep / 2.0);
  const double angle = class_sep * label + rng.uniform(-jitter, jitter);
  const double amplitude = 1.0 - 0.8 * hardness;
  const double sigma = spec.noise_lo + (spec.noise_hi - spec.noise_lo) * hardness;
  const double offset = rng.uniform(-n / 5.0, n / 5.0);
  const double cx = (n - 1) / 2.0, cy = (n - 1) / 2.0;
  const double nx = -std::sin(angle), ny = std::cos(angle);  // bar normal

  std::vector<double> bar(static_cast<size_t>(n) * n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double d = (x - cx) * nx + (y - cy) * ny - offset;
      bar[static_cast<size_t>(y) * n + x] = amplitude * std::exp(-(d * d) / (2.0 * 1.2 * 1.2));
    }
  }
  static const double gains[3] = {1.0, 0.75, 0.55};
  for (int c = 0; c < spec.channels; ++c) {
    double gain = gains[c % 3];
    for (int i = 0; i < n * n; ++i) {
      double v = gain * bar[static_cast<size_t>(i)] + sigma * rng.normal();
      v = std::min(std::max(v, 0.0), 1.0);
      out[c * n * n + i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
  }
}

Dataset make_split(Rng& rng, const SyntheticSpec& spec, int count, const char* tag) {
  Dataset ds;
  ds.channels = spec.channels;
  ds.height = spec.size;
  ds.width = spec.size;
  ds.classes = spec.classes;
  ds.split = tag;
  const size_t plane = static_cast<size_t>(spec.channels) * spec.size * spec.size;
  ds.pixels.resize(static_cast<size_t>(count) * plane);
  ds.labels.resize(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    int label = i % spec.classes;  // balanced
    ds.labels[static_cast<size_t>(i)] = static_cast<uint16_t>(label);
    render_sample(rng, spec, label, ds.pixels.data() + static_cast<size_t>(i) * plane);
  }
  return ds;
}

}  // namespace

DataBundle generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.size < 4 || spec.channels < 1)
    fail("synthetic spec out of range (need classes >= 2, size >= 4, channels >= 1)");
  Rng rng(spec.seed);
  DataBundle b;
  b.train = make_split(rng, spec, spec.train_n, "train");
  b.val = make_split(rng, spec, spec.val_n, "val");
  b.test = make_split(rng, spec, spec.test_n, "test");
  return b;
}

uint32_t crc32(const void* bytes, size_t n, uint32_t seed) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = seed ^ 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

namespace {

template <typename T>
void append_le(std::vector<unsigned char>& buf, T v) {
  for (size_t i = 0; i < sizeof(T); ++i)
    buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
  std::vector<unsigned char> bytes;
  size_t pos = 0;
  std::string path;

  void need(size_t n, const char* what) const {
    if (pos + n > bytes.size())
      fail("truncated dataset file '" + path + "' reading " + what + " at offset " +
           std::to_string(pos));
  }
  template <typename T>
  T get_le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[pos + i]) << (8 * i);
    pos += sizeof(T);
    return v;
  }
};

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), {'S', '2', 'D', 'D'});
  append_le<uint8_t>(buf, 1);
  append_le<uint32_t>(buf, static_cast<uint32_t>(ds.size()));
  append_le<uint32_t>(buf, static_cast<uint32_t>(ds.channels));
  append_le<uint32_t>(buf, static_cast<uint32_t>(ds.height));
  append_le<uint32_t>(buf, static_cast<uint32_t>(ds.width));
  append_le<uint16_t>(buf, static_cast<uint16_t>(ds.classes));
  buf.insert(buf.end(), ds.pixels.begin(), ds.pixels.end());
  for (uint16_t l : ds.labels) append_le<uint16_t>(buf, l);
  append_le<uint32_t>(buf, crc32(buf.data(), buf.size()));

  std::ofstream os(path, std::ios::binary);
  if (!os) fail("cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) fail("write failure on '" + path + "'");
}

Dataset load_dataset_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open dataset '" + path + "'");
  ByteReader r;
  r.path = path;
  r.bytes.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());

  r.need(4, "magic");
  if (std::memcmp(r.bytes.data(), "S2DD", 4) != 0) fail("'" + path + "' is not an S2DD dataset");
  r.pos = 4;
  uint8_t version = r.get_le<uint8_t>("version");
  if (version != 1) fail("unsupported dataset version " + std::to_string(version));

  Dataset ds;
  uint32_t n = r.get_le<uint32_t>("sample count");
  ds.channels = static_cast<int>(r.get_le<uint32_t>("channels"));
  ds.height = static_cast<int>(r.get_le<uint32_t>("height"));
  ds.width = static_cast<int>(r.get_le<uint32_t>("width"));
  ds.classes = static_cast<int>(r.get_le<uint16_t>("class count"));
  if (n == 0) fail("dataset '" + path + "' is empty");

  size_t pixel_bytes = static_cast<size_t>(n) * ds.channels * ds.height * ds.width;
  r.need(pixel_bytes, "pixels");
  ds.pixels.assign(r.bytes.begin() + static_cast<long>(r.pos),
                   r.bytes.begin() + static_cast<long>(r.pos + pixel_bytes));
  r.pos += pixel_bytes;
  ds.labels.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    ds.labels[i] = r.get_le<uint16_t>("label");
    if (ds.labels[i] >= ds.classes)
      fail("label " + std::to_string(ds.labels[i]) + " out of range in '" + path + "'");
  }
  size_t body = r.pos;
  uint32_t stored = r.get_le<uint32_t>("checksum");
  uint32_t actual = crc32(r.bytes.data(), body);
  if (stored != actual) fail("checksum mismatch in '" + path + "'");
  if (r.pos != r.bytes.size()) fail("trailing bytes after checksum in '" + path + "'");
  return ds;
}

}  // namespace s2d
