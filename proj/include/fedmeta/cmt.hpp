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

// Server-side central model training on uploaded meta knowledge, regularized
// by pseudo meta knowledge drawn from a conditional generator in latent space.

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fedmeta/fmke.hpp"
#include "fedmeta/models.hpp"
#include "fedmeta/random.hpp"

namespace fedmeta {

struct ServerConfig {
  std::size_t epochs = 5;
  double lr = 0.01;
  std::size_t batch_size = 32;
  std::size_t generator_steps = 200;
  double generator_lr = 0.05;
  std::size_t generator_batch = 64;
  /// Pseudo sample count; empty means |D̂| (beta = 1).
  std::optional<std::size_t> n_pseudo;

  void validate() const;
};

/// Latent vectors with labels, fed straight into the classifier head.
struct PseudoKnowledge {
  Tensor latents;  // (n, latent_dim)
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// beta = |pseudo| / |meta|.
double pseudo_weight(std::size_t pseudo_size, std::size_t meta_size);

/// Mini-batch SGD on the mean cross-entropy over the meta knowledge.
ClassifierModel train_global_on_meta(ClassifierModel model, const MetaKnowledge& meta_all,
                                     std::size_t epochs, double lr, std::size_t batch_size,
                                     Rng& rng);

/// Maximizes log p(y | G(y, eps)) under the frozen classifier head; only the
/// generator parameters change.
ConditionalGenerator train_generator(ConditionalGenerator generator,
                                     const ClassifierModel& frozen,
                                     const MetaKnowledge& meta_all, std::size_t steps,
                                     double lr, std::size_t batch_size, Rng& rng);

/// Labels drawn from the empirical label distribution of `meta_all`,
/// eps ~ N(0, I), latents = G(y, eps).
PseudoKnowledge sample_pseudo(const ConditionalGenerator& generator,
                              const MetaKnowledge& meta_all, std::size_t n, Rng& rng);

/// Loss value and parameter gradients (extractor then head) of
/// mean CE(meta batch) + beta * mean CE(head(pseudo latents)).
struct CombinedStep {
  double loss = 0.0;
  std::vector<Tensor> grads;
};
CombinedStep combined_gradients(const ClassifierModel& model, const Tensor& meta_images,
                                std::span<const int> meta_labels,
                                const Tensor& pseudo_latents,
                                std::span<const int> pseudo_labels, double beta);

/// Minimizes L(W, D̂) + beta * L(W, D̂_pseu). An empty pseudo set reduces to
/// train_global_on_meta exactly.
ClassifierModel train_global_combined(ClassifierModel model, const MetaKnowledge& meta_all,
                                      const PseudoKnowledge& pseudo, std::size_t epochs,
                                      double lr, std::size_t batch_size, Rng& rng);

}  // namespace fedmeta
