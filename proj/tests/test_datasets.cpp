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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "fedmeta/dataset.hpp"
#include "fedmeta/errors.hpp"

namespace fedmeta {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() /
            (std::string("fedmeta_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

/// Hand-rolled IDX writer, independent of write_idx.
void write_raw_idx(const fs::path& images, const fs::path& labels, std::uint32_t image_magic,
                   std::uint32_t n_images, std::uint32_t n_labels, std::size_t pixel_bytes) {
  std::ofstream img(images, std::ios::binary);
  write_be32(img, image_magic);
  write_be32(img, n_images);
  write_be32(img, 2);
  write_be32(img, 3);
  for (std::size_t i = 0; i < pixel_bytes; ++i) img.put(static_cast<char>(i * 37 % 256));
  std::ofstream lab(labels, std::ios::binary);
  write_be32(lab, 0x801);
  write_be32(lab, n_labels);
  for (std::uint32_t i = 0; i < n_labels; ++i) lab.put(static_cast<char>(i % 3));
}

TEST(Idx, ReadsHandWrittenFile) {
  TempDir dir;
  write_raw_idx(dir / "i", dir / "l", 0x803, 4, 4, 4 * 6);
  const auto ds = load_idx(dir / "i", dir / "l");
  EXPECT_EQ(ds.images.shape(), (Shape{4, 1, 2, 3}));
  EXPECT_EQ(ds.num_classes, 3u);
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1, 2, 0}));
  EXPECT_DOUBLE_EQ(ds.images[1], pixel_from_byte(37));
}

TEST(Idx, ByteMapEndpoints) {
  EXPECT_DOUBLE_EQ(pixel_from_byte(0), -1.0);
  EXPECT_DOUBLE_EQ(pixel_from_byte(255), 1.0);
  for (int b = 0; b < 256; ++b) {
    EXPECT_EQ(byte_from_pixel(pixel_from_byte(static_cast<std::uint8_t>(b))), b);
  }
}

TEST(Idx, RoundTripsThroughWriter) {
  TempDir dir;
  const auto ds = synth_blobs(3, 4, {1, 5, 4}, 0.5, 11);
  write_idx(ds, dir / "i", dir / "l");
  const auto back = load_idx(dir / "i", dir / "l");
  ASSERT_EQ(back.images.shape(), ds.images.shape());
  EXPECT_EQ(back.labels, ds.labels);
  for (std::size_t i = 0; i < ds.images.numel(); ++i) {
    EXPECT_NEAR(back.images[i], ds.images[i], 1.0 / 127.5);
  }
}

TEST(Idx, LabelMagicAsImagesIsFormatError) {
  TempDir dir;
  write_raw_idx(dir / "i", dir / "l", 0x801, 4, 4, 24);
  EXPECT_THROW(load_idx(dir / "i", dir / "l"), FormatError);
  // Labels passed where images are expected.
  EXPECT_THROW(load_idx(dir / "l", dir / "l"), FormatError);
}

TEST(Idx, CountMismatchIsFormatError) {
  TempDir dir;
  write_raw_idx(dir / "i", dir / "l", 0x803, 4, 3, 24);
  EXPECT_THROW(load_idx(dir / "i", dir / "l"), FormatError);
}

TEST(Idx, TruncatedFileIsFormatError) {
  TempDir dir;
  write_raw_idx(dir / "i", dir / "l", 0x803, 4, 4, 23);
  EXPECT_THROW(load_idx(dir / "i", dir / "l"), FormatError);
}

TEST(Idx, MissingFileIsFormatError) {
  TempDir dir;
  EXPECT_THROW(load_idx(dir / "nope", dir / "nope2"), FormatError);
}

TEST(Blobs, DeterministicForFixedSeed) {
  const auto a = synth_blobs(2, 10, {1, 4, 4}, 0.3, 7);
  const auto b = synth_blobs(2, 10, {1, 4, 4}, 0.3, 7);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.images, synth_blobs(2, 10, {1, 4, 4}, 0.3, 8).images);
}

TEST(Blobs, ZeroSpreadGivesIdenticalSamplesPerClass) {
  const auto ds = synth_blobs(3, 6, {1, 3, 3}, 0.0, 1);
  const std::size_t d = 9;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t first = (i / 6) * 6;
    for (std::size_t j = 0; j < d; ++j) EXPECT_EQ(ds.images[i * d + j], ds.images[first * d + j]);
  }
}

TEST(Blobs, LabelsOrderedByClass) {
  const auto ds = synth_blobs(3, 5, {1, 2, 2}, 0.5, 3);
  ASSERT_EQ(ds.size(), 15u);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_EQ(ds.labels[i], static_cast<int>(i / 5));
  EXPECT_NO_THROW(ds.validate());
}

TEST(Blobs, RejectsBadArguments) {
  EXPECT_THROW(synth_blobs(1, 5, {1, 2, 2}, 0.5, 3), ContractError);
  EXPECT_THROW(synth_blobs(2, 0, {1, 2, 2}, 0.5, 3), ContractError);
}

TEST(Split, StratifiedAndDisjoint) {
  const auto ds = synth_blobs(4, 10, {1, 2, 2}, 0.5, 3);
  const auto [train, test] = split_per_class(ds, 3, 9);
  EXPECT_EQ(train.size(), 28u);
  EXPECT_EQ(test.size(), 12u);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(std::count(test.labels.begin(), test.labels.end(), k), 3);
}

TEST(LargestRemainder, SumsExactly) {
  const std::vector<double> shares{0.3333, 0.3333, 0.3334};
  const auto counts = largest_remainder(shares, 10);
  EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), std::size_t{0}), 10u);
  EXPECT_EQ(counts[2], 4u);
}

void expect_partition_law(const Partition& p, std::size_t expected_total, std::size_t n) {
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& a : p.assignments) {
    EXPECT_FALSE(a.empty());
    for (auto i : a) {
      EXPECT_LT(i, n);
      EXPECT_TRUE(seen.insert(i).second) << "index " << i << " assigned twice";
    }
    total += a.size();
  }
  EXPECT_EQ(total, expected_total);
  EXPECT_EQ(p.total(), expected_total);
  double sum = 0.0;
  for (std::size_t c = 0; c < p.num_clients(); ++c) {
    EXPECT_EQ(p.weights[c], static_cast<double>(p.assignments[c].size()) /
                                static_cast<double>(expected_total));
    sum += p.weights[c];
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Partition, DisjointAndCoveringOverRandomConfigs) {
  std::mt19937_64 rng(2024);
  // Configs that cannot give every client a sample raise RetryExhausted
  // (covered separately) and are redrawn.
  int redrawn = 0;
  for (int trial = 0; trial < 100;) {
    const std::size_t k = 2 + rng() % 5;
    const std::size_t per_class = 20 + rng() % 40;
    const auto ds = synth_blobs(k, per_class, {1, 2, 2}, 0.5, trial);
    PartitionOptions opts;
    opts.clients = 1 + rng() % 8;
    opts.alpha = std::exp(std::uniform_real_distribution<double>(std::log(0.1), std::log(100.0))(rng));
    opts.fraction = std::uniform_real_distribution<double>(0.3, 1.0)(rng);
    opts.seed = rng();
    Partition p;
    try {
      p = dirichlet_partition(ds, opts);
    } catch (const RetryExhausted&) {
      ++redrawn;
      continue;
    }
    ++trial;
    ASSERT_EQ(p.num_clients(), opts.clients);
    // Subsample size: the stratified fraction of every class.
    std::size_t expected = 0;
    for (std::size_t c = 0; c < k; ++c) {
      expected += static_cast<std::size_t>(std::llround(opts.fraction * per_class));
    }
    SCOPED_TRACE("trial " + std::to_string(trial));
    expect_partition_law(p, expected, ds.size());
  }
  EXPECT_LT(redrawn, 50);
}

TEST(Partition, LargeAlphaSplitsEvenly) {
  const auto ds = synth_blobs(3, 100, {1, 2, 2}, 0.5, 5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    PartitionOptions opts{.clients = 2, .alpha = 1e6, .fraction = 1.0, .seed = seed};
    const auto p = dirichlet_partition(ds, opts);
    for (const auto& a : p.assignments) {
      for (int k = 0; k < 3; ++k) {
        const auto n = std::count_if(a.begin(), a.end(), [&](auto i) { return ds.labels[i] == k; });
        EXPECT_GE(n, 48);
        EXPECT_LE(n, 52);
      }
    }
  }
}

TEST(Partition, DirichletSampleMatchesLargeAlphaLimit) {
  std::mt19937_64 rng(3);
  const auto q = sample_dirichlet(2, 1e6, rng);
  EXPECT_NEAR(q[0] + q[1], 1.0, 1e-12);
  EXPECT_NEAR(q[0], 0.5, 0.01);
}

TEST(Partition, SingleClientOwnsEverything) {
  const auto ds = synth_blobs(2, 10, {1, 2, 2}, 0.5, 5);
  PartitionOptions opts{.clients = 1, .alpha = 0.5, .fraction = 1.0, .seed = 1};
  const auto p = dirichlet_partition(ds, opts);
  EXPECT_EQ(p.assignments[0].size(), 20u);
  EXPECT_EQ(p.weights[0], 1.0);
}

TEST(Partition, ClassCapLimitsClassesPerClient) {
  const auto ds = synth_blobs(6, 30, {1, 2, 2}, 0.5, 5);
  PartitionOptions opts{.clients = 5, .alpha = 1.0, .fraction = 1.0,
                        .max_classes_per_client = 2, .seed = 4};
  const auto p = dirichlet_partition(ds, opts);
  for (const auto& a : p.assignments) {
    std::set<int> classes;
    for (auto i : a) classes.insert(ds.labels[i]);
    EXPECT_LE(classes.size(), 2u);
  }
}

TEST(Partition, ImpossibleSplitExhaustsRetries) {
  // Two samples cannot give five clients one each.
  const auto ds = synth_blobs(2, 1, {1, 2, 2}, 0.5, 5);
  PartitionOptions opts{.clients = 5, .alpha = 0.5, .fraction = 1.0, .seed = 1};
  EXPECT_THROW(dirichlet_partition(ds, opts), RetryExhausted);
}

TEST(Partition, RejectsBadOptions) {
  const auto ds = synth_blobs(2, 10, {1, 2, 2}, 0.5, 5);
  EXPECT_THROW(dirichlet_partition(ds, {.clients = 0}), ContractError);
  EXPECT_THROW(dirichlet_partition(ds, {.alpha = 0.0}), ContractError);
  EXPECT_THROW(dirichlet_partition(ds, {.fraction = 1.5}), ContractError);
}

}  // namespace
}  // namespace fedmeta
