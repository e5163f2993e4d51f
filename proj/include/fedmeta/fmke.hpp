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

// Client-side meta knowledge extraction.
//
// A client condenses its private data D^c into a small learnable synthetic set
// (meta knowledge) by bi-level optimization. The inner problem takes SGD steps
// of the model on the meta knowledge. The outer problem moves the meta images
// along the hypergradient of the (dynamically weighted) loss that the
// inner-updated model attains on real data.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fedmeta/dataset.hpp"
#include "fedmeta/models.hpp"
#include "fedmeta/random.hpp"

namespace fedmeta {

/// Synthetic images with fixed, balanced labels: `per_class` of each class.
struct MetaKnowledge {
  Tensor images;  // (K*m, c, w, h)
  std::vector<int> labels;
  std::size_t per_class = 0;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  bool balanced() const;
};

struct MetaShape {
  std::size_t num_classes = 10;
  std::size_t per_class = 20;
  ImageDims dims;
};

struct FmkeConfig {
  double eta = 0.3;            // inner-loop learning rate
  double alpha_meta = 3000.0;  // outer-loop learning rate
  double tau = 5.0;            // sigmoid smoothing of the sample weights
  std::size_t outer_steps = 20;
  std::size_t inner_steps = 1;
  std::size_t batch_size = 32;
  bool dynamic_weights = true;
  /// Keep the inner-updated model as the starting point of the next outer
  /// step instead of restarting from the broadcast model every time.
  bool carry_local_model = true;

  void validate() const;
};

/// Images i.i.d. U[-1, +1]; labels 0..0,1..1,... (m of each).
MetaKnowledge uniform_init(const MetaShape& shape, std::uint64_t seed);

/// Previous-round meta knowledge keyed by client id.
using MetaPool = std::map<std::size_t, MetaKnowledge>;

struct SharedInit {
  MetaKnowledge meta;
  /// Peer whose meta knowledge was copied; empty when uniform_init was used.
  std::optional<std::size_t> peer;
};

/// Copy of a uniformly chosen peer's meta knowledge (peer != client), or
/// `uniform_init(shape, fallback_seed)` when no such peer exists.
SharedInit conditional_init(const MetaPool& previous, std::size_t client, Rng& rng,
                            const MetaShape& shape, std::uint64_t fallback_seed);

/// phi_i = 1 / (1 + exp(-tau * loss_i)).
std::vector<double> weights_from_losses(std::span<const double> losses, double tau);

/// Per-sample weights from the cross-entropy of `model` on (images, labels).
std::vector<double> dynamic_weights(const ClassifierModel& model, const Tensor& images,
                                    std::span<const int> labels, double tau);

/// Per-sample cross-entropy, no gradient recording.
std::vector<double> per_sample_loss(const ClassifierModel& model, const Tensor& images,
                                    std::span<const int> labels);

/// `steps` SGD steps of the parameters on the meta-knowledge loss, recorded
/// on the tape so the result is a differentiable function of `meta_images`.
std::vector<ad::Var> unrolled_inner(const ArchConfig& arch, std::vector<ad::Var> params,
                                    const ad::Var& meta_images,
                                    std::span<const int> meta_labels, double eta,
                                    std::size_t steps);

/// One inner SGD step on the meta knowledge, returned as plain values.
ClassifierModel inner_step(const ClassifierModel& model, const MetaKnowledge& meta,
                           double eta);

/// Real-data batch with per-sample weights (all 1 when weighting is off).
struct WeightedBatch {
  Tensor images;
  std::vector<int> labels;
  std::vector<double> weights;
};

struct Hypergradient {
  double outer_loss = 0.0;
  /// d(outer loss)/d(meta images), same shape as the images.
  Tensor grad;
  /// Inner-updated model w*.
  ClassifierModel adapted;
};

/// Outer loss (1/|B|) sum_i phi_i * loss(w*, x_i, y_i) and its gradient with
/// respect to the meta images through `cfg.inner_steps` unrolled steps.
Hypergradient meta_hypergradient(const MetaKnowledge& meta, const ClassifierModel& model,
                                 const WeightedBatch& batch, const FmkeConfig& cfg);

/// meta.images <- clip(meta.images - alpha * hypergradient, -1, +1).
MetaKnowledge outer_step(const MetaKnowledge& meta, const ClassifierModel& model,
                         const WeightedBatch& batch, const FmkeConfig& cfg);

/// Indices of a batch of `batch_size` samples from [0, n): without
/// replacement when n >= batch_size, with replacement otherwise.
std::vector<std::size_t> sample_batch(std::size_t n, std::size_t batch_size, Rng& rng);

/// Runs `cfg.outer_steps` outer steps on the client's data and returns the
/// final meta knowledge. NumericErrors are rethrown tagged with `client_id`.
MetaKnowledge extract_meta_knowledge(const Dataset& local, const ClassifierModel& broadcast,
                                     MetaKnowledge init, const FmkeConfig& cfg, Rng& rng,
                                     std::size_t client_id = 0);

/// Concatenation of several clients' meta knowledge, in the given order.
MetaKnowledge concat_meta(std::span<const MetaKnowledge> parts);

void save_meta(const std::filesystem::path& path, const MetaKnowledge& meta);
MetaKnowledge load_meta(const std::filesystem::path& path);

}  // namespace fedmeta
