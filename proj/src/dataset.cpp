// Copyright 2026 The fedmeta Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "fedmeta/dataset.hpp"
#include "fedmeta/errors.hpp"
#include "fedmeta/random.hpp"

namespace fedmeta {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) {
    throw FormatError(path.string() + ": truncated header");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

void check_payload(const std::vector<std::uint8_t>& bytes, std::size_t header,
                   std::size_t payload, const std::filesystem::path& path) {
  if (bytes.size() < header + payload) {
    throw FormatError(path.string() + ": truncated, expected " +
                      std::to_string(header + payload) + " bytes, found " +
                      std::to_string(bytes.size()));
  }
  if (bytes.size() > header + payload) {
    throw FormatError(path.string() + ": " +
                      std::to_string(bytes.size() - header - payload) +
                      " trailing bytes");
  }
}

}  // namespace

ImageDims Dataset::dims() const {
  if (images.rank() != 4) {
    throw ShapeError("dataset images must be (n,c,w,h), got " +
                     shape_to_string(images.shape()));
  }
  return {images.dim(1), images.dim(2), images.dim(3)};
}

void Dataset::validate() const {
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw ContractError("dataset: images " + shape_to_string(images.shape()) +
                        " vs " + std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ContractError("dataset: label " + std::to_string(y) + " outside [0," +
                          std::to_string(num_classes) + ")");
    }
  }
  for (double v : images.values()) {
    if (!(v >= -1.0 && v <= 1.0)) throw ContractError("dataset: pixel outside [-1,+1]");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.images = gather_rows(images, indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels.at(i));
  out.num_classes = num_classes;
  return out;
}

std::uint8_t byte_from_pixel(double v) {
  const double scaled = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(scaled);
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path,
                 std::size_t num_classes) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  if (auto magic = read_be32(img, 0, images_path); magic != kImageMagic) {
    throw FormatError(images_path.string() + ": bad image magic " + std::to_string(magic));
  }
  if (auto magic = read_be32(lab, 0, labels_path); magic != kLabelMagic) {
    throw FormatError(labels_path.string() + ": bad label magic " + std::to_string(magic));
  }
  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t n_labels = read_be32(lab, 4, labels_path);
  if (n != n_labels) {
    throw FormatError("image count " + std::to_string(n) + " != label count " +
                      std::to_string(n_labels));
  }
  check_payload(img, 16, n * rows * cols, images_path);
  check_payload(lab, 8, n, labels_path);

  Dataset ds;
  ds.images = Tensor(Shape{n, 1, rows, cols});
  auto pixels = ds.images.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = pixel_from_byte(img[16 + i]);
  ds.labels.resize(n);
  int top = -1;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    top = std::max(top, ds.labels[i]);
  }
  ds.num_classes = num_classes > 0 ? num_classes : static_cast<std::size_t>(top + 1);
  for (int y : ds.labels) {
    if (static_cast<std::size_t>(y) >= ds.num_classes) {
      throw FormatError(labels_path.string() + ": label " + std::to_string(y) +
                        " exceeds class count " + std::to_string(ds.num_classes));
    }
  }
  return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  const auto dims = ds.dims();
  if (dims.channels != 1) throw ContractError("write_idx: single-channel images only");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw FormatError("cannot write IDX files");
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<std::uint32_t>(ds.size()));
  write_be32(img, static_cast<std::uint32_t>(dims.width));
  write_be32(img, static_cast<std::uint32_t>(dims.height));
  for (double v : ds.images.values()) img.put(static_cast<char>(byte_from_pixel(v)));
  write_be32(lab, kLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) lab.put(static_cast<char>(y));
}

Dataset synth_blobs(std::size_t num_classes, std::size_t n_per_class, ImageDims dims,
                    double spread, std::uint64_t seed) {
  if (num_classes < 2) throw ContractError("synth_blobs: need at least 2 classes");
  if (n_per_class < 1) throw ContractError("synth_blobs: need at least 1 sample per class");
  if (spread < 0.0) throw ContractError("synth_blobs: spread must be >= 0");

  const std::size_t d = dims.size();
  Rng mean_rng = make_rng({seed, stream::kDataset, 0});
  Rng noise_rng = make_rng({seed, stream::kDataset, 1});
  std::uniform_real_distribution<double> center(-0.7, 0.7);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<double> means(num_classes * d);
  for (auto& m : means) m = center(mean_rng);

  Dataset ds;
  ds.num_classes = num_classes;
  ds.images = Tensor(Shape{num_classes * n_per_class, dims.channels, dims.width, dims.height});
  ds.labels.reserve(num_classes * n_per_class);
  auto px = ds.images.data();
  std::size_t row = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
      for (std::size_t j = 0; j < d; ++j) {
        const double jitter = spread > 0.0 ? spread * noise(noise_rng) : 0.0;
        px[row * d + j] = std::clamp(means[k * d + j] + jitter, -1.0, 1.0);
      }
      ds.labels.push_back(static_cast<int>(k));
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split_per_class(const Dataset& ds, std::size_t test_per_class,
                                            std::uint64_t seed) {
  Rng rng = make_rng({seed, stream::kDataset, 2});
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  std::vector<std::size_t> train, test;
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t cut = std::min(test_per_class, idx.size());
    test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(test)};
}

}  // namespace fedmeta
