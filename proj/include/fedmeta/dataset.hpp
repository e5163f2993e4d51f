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

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "fedmeta/tensor.hpp"

namespace fedmeta {

struct ImageDims {
  std::size_t channels = 1;
  std::size_t width = 28;
  std::size_t height = 28;

  std::size_t size() const { return channels * width * height; }
  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

/// Labelled images with pixels in [-1, +1]; images are (n, c, w, h).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  ImageDims dims() const;

  /// Checks shape/label/range invariants; throws ContractError.
  void validate() const;

  Dataset subset(std::span<const std::size_t> indices) const;
};

/// byte 0 -> -1, byte 255 -> +1.
constexpr double pixel_from_byte(std::uint8_t b) { return b / 127.5 - 1.0; }
std::uint8_t byte_from_pixel(double v);

/// Reads an IDX image/label file pair (classic MNIST layout). When
/// `num_classes` is 0 it is inferred as max(label) + 1.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path,
                 std::size_t num_classes = 0);

/// Writes the IDX pair that `load_idx` reads back.
void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// Gaussian blobs around per-class mean images, clipped to [-1, +1]. Samples
/// are ordered by class.
Dataset synth_blobs(std::size_t num_classes, std::size_t n_per_class,
                    ImageDims dims, double spread, std::uint64_t seed);

/// Stratified split: `test_per_class` samples of every class go to the second
/// dataset.
std::pair<Dataset, Dataset> split_per_class(const Dataset& ds,
                                            std::size_t test_per_class,
                                            std::uint64_t seed);

/// Client data assignment with weights p^c = n^c / sum n^c.
struct Partition {
  std::vector<std::vector<std::size_t>> assignments;
  std::vector<double> weights;

  std::size_t num_clients() const { return assignments.size(); }
  std::size_t total() const;
};

struct PartitionOptions {
  std::size_t clients = 20;
  double alpha = 0.5;
  double fraction = 0.5;
  /// 0 disables the cap; otherwise each client only draws from this many
  /// randomly chosen classes.
  std::size_t max_classes_per_client = 0;
  std::uint64_t seed = 0;
};

/// Per-class Dirichlet split of a class-stratified subsample.
Partition dirichlet_partition(const Dataset& ds, const PartitionOptions& opts);

/// Draw from Dir(alpha * 1_k).
std::vector<double> sample_dirichlet(std::size_t k, double alpha, std::mt19937_64& rng);

/// Split `total` into integer counts proportional to `shares`, largest
/// remainder first; counts sum to `total` exactly.
std::vector<std::size_t> largest_remainder(std::span<const double> shares,
                                           std::size_t total);

}  // namespace fedmeta
