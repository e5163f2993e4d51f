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

#include "fedmeta/cmt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedmeta/errors.hpp"

namespace fedmeta {

namespace {

void check_meta(const MetaKnowledge& meta_all, const char* who) {
  if (meta_all.size() == 0) throw ContractError(std::string(who) + ": empty meta knowledge");
}

std::vector<int> pick_labels(std::span<const int> labels, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels[i]);
  return out;
}

}  // namespace

void ServerConfig::validate() const {
  if (!(lr > 0.0)) throw ContractError("server: lr must be > 0");
  if (!(generator_lr > 0.0)) throw ContractError("server: generator_lr must be > 0");
  if (batch_size < 1 || generator_batch < 1) {
    throw ContractError("server: batch sizes must be >= 1");
  }
}

double pseudo_weight(std::size_t pseudo_size, std::size_t meta_size) {
  if (meta_size == 0) throw ContractError("pseudo_weight: empty meta knowledge");
  return static_cast<double>(pseudo_size) / static_cast<double>(meta_size);
}

CombinedStep combined_gradients(const ClassifierModel& model, const Tensor& meta_images,
                                std::span<const int> meta_labels,
                                const Tensor& pseudo_latents,
                                std::span<const int> pseudo_labels, double beta) {
  const auto params = ad::variables(model.parameters());
  const auto fwd = classifier_forward(model.arch, params, ad::constant(meta_images));
  ad::Var loss = ad::mean(ad::softmax_cross_entropy(fwd.logits, meta_labels));
  if (!pseudo_labels.empty()) {
    const auto head = std::span<const ad::Var>(params).subspan(extractor_tensor_count(model.arch));
    const auto logits = head_forward(head, ad::constant(pseudo_latents));
    loss = ad::add(loss, ad::scale(ad::mean(ad::softmax_cross_entropy(logits, pseudo_labels)), beta));
  }
  CombinedStep step;
  step.loss = loss.value().item();
  if (!std::isfinite(step.loss)) throw NumericError("server training diverged");
  step.grads = ad::values_of(ad::grad(loss, params));
  return step;
}

ClassifierModel train_global_on_meta(ClassifierModel model, const MetaKnowledge& meta_all,
                                     std::size_t epochs, double lr, std::size_t batch_size,
                                     Rng& rng) {
  return train_global_combined(std::move(model), meta_all, PseudoKnowledge{}, epochs, lr,
                               batch_size, rng);
}

ClassifierModel train_global_combined(ClassifierModel model, const MetaKnowledge& meta_all,
                                      const PseudoKnowledge& pseudo, std::size_t epochs,
                                      double lr, std::size_t batch_size, Rng& rng) {
  check_meta(meta_all, "train_global_combined");
  if (batch_size < 1) throw ContractError("train_global_combined: batch_size must be >= 1");
  const std::size_t n = meta_all.size();
  const std::size_t p = pseudo.size();
  const double beta = pseudo_weight(p, n);
  const std::size_t batches = (n + batch_size - 1) / batch_size;

  std::vector<std::size_t> order(n), pseudo_order(p);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    if (p > 0) {
      std::iota(pseudo_order.begin(), pseudo_order.end(), 0);
      std::shuffle(pseudo_order.begin(), pseudo_order.end(), rng);
    }
    for (std::size_t b = 0; b < batches; ++b) {
      const auto idx = std::span<const std::size_t>(order).subspan(
          b * batch_size, std::min(batch_size, n - b * batch_size));
      // Spread the pseudo set evenly over the epoch's batches.
      const auto pidx = std::span<const std::size_t>(pseudo_order)
                            .subspan(b * p / batches, (b + 1) * p / batches - b * p / batches);
      const auto step = combined_gradients(
          model, gather_rows(meta_all.images, idx), pick_labels(meta_all.labels, idx),
          pidx.empty() ? Tensor() : gather_rows(pseudo.latents, pidx),
          pick_labels(pseudo.labels, pidx), beta);
      apply_sgd(model, step.grads, lr);
    }
  }
  return model;
}

ConditionalGenerator train_generator(ConditionalGenerator generator,
                                     const ClassifierModel& frozen,
                                     const MetaKnowledge& meta_all, std::size_t steps,
                                     double lr, std::size_t batch_size, Rng& rng) {
  check_meta(meta_all, "train_generator");
  if (generator.arch.latent_dim != frozen.arch.latent_dim ||
      generator.arch.num_classes != frozen.arch.num_classes) {
    throw ShapeError("train_generator: generator and classifier disagree on latent/classes");
  }
  const auto head = ad::constants(frozen.head);
  std::uniform_int_distribution<std::size_t> pick(0, meta_all.size() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t noise_dim = generator.arch.noise_dim;
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<int> labels(batch_size);
    for (auto& y : labels) y = meta_all.labels[pick(rng)];
    Tensor noise(Shape{batch_size, noise_dim});
    for (auto& v : noise.data()) v = normal(rng);

    const auto params = ad::variables(generator.params);
    const auto z = generator_forward(generator.arch, params, labels, noise);
    const auto loss = ad::mean(ad::softmax_cross_entropy(head_forward(head, z), labels));
    if (!std::isfinite(loss.value().item())) throw NumericError("generator training diverged");
    apply_sgd(generator.params, ad::grad(loss, params), lr);
  }
  return generator;
}

PseudoKnowledge sample_pseudo(const ConditionalGenerator& generator,
                              const MetaKnowledge& meta_all, std::size_t n, Rng& rng) {
  PseudoKnowledge out;
  if (n == 0) return out;
  check_meta(meta_all, "sample_pseudo");
  std::uniform_int_distribution<std::size_t> pick(0, meta_all.size() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  out.labels.resize(n);
  for (auto& y : out.labels) y = meta_all.labels[pick(rng)];
  Tensor noise(Shape{n, generator.arch.noise_dim});
  for (auto& v : noise.data()) v = normal(rng);
  out.latents = generator_forward(generator, out.labels, noise);
  return out;
}

}  // namespace fedmeta
