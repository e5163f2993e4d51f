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

// JSON experiment configs and the driver behind the `fedmeta` CLI.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmeta/dataset.hpp"
#include "fedmeta/errors.hpp"
#include "fedmeta/federation.hpp"

namespace fedmeta {

class ConfigError : public Error {
 public:
  enum class Kind { kMissingKey, kTypeMismatch, kUnknownKey };

  ConfigError(Kind kind, std::string key, const std::string& detail);

  Kind kind() const { return kind_; }
  /// Dotted path of the offending key, e.g. "fmke.eta".
  const std::string& key() const { return key_; }

 private:
  Kind kind_;
  std::string key_;
};

const char* to_string(ConfigError::Kind kind);

struct BlobSource {
  std::size_t classes = 4;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 100;
  ImageDims dims{1, 8, 8};
  double spread = 0.6;
  std::uint64_t seed = 1;
};

struct IdxSource {
  std::filesystem::path train_images, train_labels, test_images, test_labels;
};

struct DatasetSource {
  enum class Kind { kBlobs, kIdx } kind = Kind::kBlobs;
  BlobSource blobs;
  IdxSource idx;
};

enum class Method { kFedMK, kFedAvg };
const char* to_string(Method m);

struct ExperimentSpec {
  DatasetSource dataset;
  FederationConfig federation;
  std::vector<Method> methods{Method::kFedMK, Method::kFedAvg};
  std::filesystem::path output_dir = "runs";
};

/// Validates and fills defaults; unknown keys are rejected.
ExperimentSpec parse_config(const nlohmann::json& config);
/// Reads a JSON file; unreadable or malformed files raise ConfigError too.
ExperimentSpec parse_config_file(const std::filesystem::path& path);

/// Canonical form of everything that affects results (no output dir, no
/// worker count). Feeding it back to parse_config reproduces the spec.
nlohmann::json canonical_json(const ExperimentSpec& spec);
std::string spec_hash(const ExperimentSpec& spec);

struct TrainTest {
  Dataset train;
  Dataset test;
};
TrainTest load_data(const DatasetSource& source);

/// Runs every method, writing `<method>.csv` per method and `summary.txt` into
/// the output directory. Returns 0 on success and 3 on a runtime failure.
int run_experiment(const ExperimentSpec& spec, std::ostream& log);

/// Communication cost table for the experiment's model and federation.
void print_cost_table(const ExperimentSpec& spec, std::ostream& out);

}  // namespace fedmeta
