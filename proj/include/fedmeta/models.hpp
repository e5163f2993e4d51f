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

// Global classifier W_G = (feature extractor, classifier head) and the
// conditional generator that maps (label, noise) into the latent space.
//
// Dense layers are stored as (weight (in,out), bias (out)) tensor pairs. The
// forward functions come in two flavours: one over autodiff Vars, used when
// gradients are needed, and a convenience one over plain parameter tensors.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmeta/autodiff.hpp"
#include "fedmeta/dataset.hpp"
#include "fedmeta/tensor.hpp"

namespace fedmeta {

struct ArchConfig {
  ImageDims input{1, 28, 28};
  /// Hidden widths of the feature extractor before the latent layer.
  std::vector<std::size_t> hidden{128};
  std::size_t latent_dim = 64;
  std::size_t num_classes = 10;
  std::size_t noise_dim = 32;
  std::size_t generator_hidden = 128;

  void validate() const;
  nlohmann::json to_json() const;
  static ArchConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

std::size_t classifier_parameter_count(const ArchConfig& arch);
std::size_t generator_parameter_count(const ArchConfig& arch);

struct ClassifierModel {
  ArchConfig arch;
  std::vector<Tensor> extractor;
  std::vector<Tensor> head;

  /// Extractor tensors followed by head tensors.
  std::vector<Tensor> parameters() const;
  static ClassifierModel from_parameters(const ArchConfig& arch,
                                         std::vector<Tensor> params);
  std::size_t parameter_count() const;
};

struct ConditionalGenerator {
  ArchConfig arch;
  std::vector<Tensor> params;

  std::size_t parameter_count() const;
};

/// Weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)), zero biases.
ClassifierModel init_classifier(const ArchConfig& arch, std::uint64_t seed);
ConditionalGenerator init_generator(const ArchConfig& arch, std::uint64_t seed);

/// Number of leading tensors in `ClassifierModel::parameters()` that belong to
/// the feature extractor.
std::size_t extractor_tensor_count(const ArchConfig& arch);

struct ForwardPass {
  ad::Var latent;
  ad::Var logits;
};

/// x is (n,c,w,h) matching `arch.input`, or already flattened to (n, c*w*h).
ad::Var extractor_forward(const ArchConfig& arch, std::span<const ad::Var> extractor,
                          const ad::Var& x);
ad::Var head_forward(std::span<const ad::Var> head, const ad::Var& latent);
ForwardPass classifier_forward(const ArchConfig& arch, std::span<const ad::Var> params,
                               const ad::Var& x);
ForwardPass classifier_forward(const ClassifierModel& model, const Tensor& x);

ad::Var generator_forward(const ArchConfig& arch, std::span<const ad::Var> params,
                          std::span<const int> labels, const Tensor& noise);
Tensor generator_forward(const ConditionalGenerator& g, std::span<const int> labels,
                         const Tensor& noise);

/// params[i] -= lr * grads[i].
void apply_sgd(std::vector<Tensor>& params, std::span<const ad::Var> grads, double lr);
/// Same over the model's extractor-then-head parameter order.
void apply_sgd(ClassifierModel& model, std::span<const Tensor> grads, double lr);

/// Argmax predictions, evaluated in chunks without recording gradients.
std::vector<int> predict(const ClassifierModel& model, const Tensor& images);
double accuracy(const ClassifierModel& model, const Dataset& ds);

// Checkpoints: one line of JSON (tensor manifest + config hash) terminated by
// '\n', then every tensor's values as little-endian f64 in manifest order.

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  nlohmann::json header;
  std::vector<NamedTensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, nlohmann::json header,
                      std::span<const NamedTensor> tensors);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void save_classifier(const std::filesystem::path& path, const ClassifierModel& model);
ClassifierModel load_classifier(const std::filesystem::path& path);
void save_generator(const std::filesystem::path& path, const ConditionalGenerator& g);
ConditionalGenerator load_generator(const std::filesystem::path& path);

}  // namespace fedmeta
