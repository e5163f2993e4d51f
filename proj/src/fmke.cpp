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

#include "fedmeta/fmke.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedmeta/errors.hpp"

namespace fedmeta {

namespace {

void descend_and_clip(MetaKnowledge& meta, const Tensor& grad, double alpha) {
  if (!grad.all_finite()) throw NumericError("non-finite hypergradient");
  auto px = meta.images.data();
  const auto g = grad.data();
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = std::clamp(px[i] - alpha * g[i], -1.0, 1.0);
  }
  if (!meta.images.all_finite()) throw NumericError("meta images diverged");
}

}  // namespace

bool MetaKnowledge::balanced() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) return false;
    ++counts[static_cast<std::size_t>(y)];
  }
  return std::all_of(counts.begin(), counts.end(),
                     [this](std::size_t c) { return c == per_class; });
}

void FmkeConfig::validate() const {
  if (!(eta >= 0.0)) throw ContractError("fmke: eta must be >= 0");
  if (!(alpha_meta >= 0.0)) throw ContractError("fmke: alpha_meta must be >= 0");
  if (!(tau > 0.0)) throw ContractError("fmke: tau must be > 0");
  if (inner_steps < 1) throw ContractError("fmke: inner_steps must be >= 1");
  if (batch_size < 1) throw ContractError("fmke: batch_size must be >= 1");
}

MetaKnowledge uniform_init(const MetaShape& shape, std::uint64_t seed) {
  if (shape.per_class < 1) throw ContractError("uniform_init: per_class must be >= 1");
  const std::size_t n = shape.num_classes * shape.per_class;
  Rng rng = make_rng({seed, stream::kMetaInit});
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  MetaKnowledge meta;
  meta.images = Tensor(Shape{n, shape.dims.channels, shape.dims.width, shape.dims.height});
  for (auto& v : meta.images.data()) v = u(rng);
  meta.labels.reserve(n);
  for (std::size_t k = 0; k < shape.num_classes; ++k)
    meta.labels.insert(meta.labels.end(), shape.per_class, static_cast<int>(k));
  meta.per_class = shape.per_class;
  meta.num_classes = shape.num_classes;
  return meta;
}

SharedInit conditional_init(const MetaPool& previous, std::size_t client, Rng& rng,
                            const MetaShape& shape, std::uint64_t fallback_seed) {
  std::vector<std::size_t> peers;
  for (const auto& [id, meta] : previous) {
    if (id != client) peers.push_back(id);
  }
  if (peers.empty()) return {uniform_init(shape, fallback_seed), std::nullopt};
  std::uniform_int_distribution<std::size_t> pick(0, peers.size() - 1);
  const std::size_t peer = peers[pick(rng)];
  return {previous.at(peer), peer};
}

std::vector<double> weights_from_losses(std::span<const double> losses, double tau) {
  std::vector<double> phi(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    phi[i] = 1.0 / (1.0 + std::exp(-tau * losses[i]));
  }
  return phi;
}

std::vector<double> per_sample_loss(const ClassifierModel& model, const Tensor& images,
                                    std::span<const int> labels) {
  ad::NoGradGuard guard;
  const auto logits = classifier_forward(model, images).logits;
  return ad::softmax_cross_entropy(logits, labels).value().values();
}

std::vector<double> dynamic_weights(const ClassifierModel& model, const Tensor& images,
                                    std::span<const int> labels, double tau) {
  if (labels.empty()) throw ContractError("dynamic_weights: empty batch");
  return weights_from_losses(per_sample_loss(model, images, labels), tau);
}

std::vector<ad::Var> unrolled_inner(const ArchConfig& arch, std::vector<ad::Var> params,
                                    const ad::Var& meta_images,
                                    std::span<const int> meta_labels, double eta,
                                    std::size_t steps) {
  for (std::size_t s = 0; s < steps; ++s) {
    const auto fwd = classifier_forward(arch, params, meta_images);
    const auto loss = ad::mean(ad::softmax_cross_entropy(fwd.logits, meta_labels));
    const auto grads = ad::grad(loss, params, /*create_graph=*/true);
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] = ad::sub(params[i], ad::scale(grads[i], eta));
    }
  }
  return params;
}

ClassifierModel inner_step(const ClassifierModel& model, const MetaKnowledge& meta,
                           double eta) {
  if (meta.size() == 0) throw ContractError("inner_step: empty meta knowledge");
  const auto params = ad::variables(model.parameters());
  const auto fwd = classifier_forward(model.arch, params, ad::constant(meta.images));
  const auto loss = ad::mean(ad::softmax_cross_entropy(fwd.logits, meta.labels));
  if (!std::isfinite(loss.value().item())) throw NumericError("inner_step: non-finite loss");
  const auto grads = ad::grad(loss, params);
  std::vector<Tensor> updated = model.parameters();
  for (std::size_t i = 0; i < updated.size(); ++i) {
    auto dst = updated[i].data();
    const auto g = grads[i].value().data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] -= eta * g[j];
  }
  return ClassifierModel::from_parameters(model.arch, std::move(updated));
}

Hypergradient meta_hypergradient(const MetaKnowledge& meta, const ClassifierModel& model,
                                 const WeightedBatch& batch, const FmkeConfig& cfg) {
  if (meta.size() == 0) throw ContractError("meta_hypergradient: empty meta knowledge");
  const std::size_t b = batch.labels.size();
  if (b == 0 || batch.weights.size() != b) {
    throw ContractError("meta_hypergradient: batch needs one weight per sample");
  }
  const auto meta_images = ad::variable(meta.images);
  const auto adapted = unrolled_inner(model.arch, ad::variables(model.parameters()),
                                      meta_images, meta.labels, cfg.eta, cfg.inner_steps);

  const auto fwd = classifier_forward(model.arch, adapted, ad::constant(batch.images));
  const auto losses = ad::softmax_cross_entropy(fwd.logits, batch.labels);
  const auto phi = ad::constant(Tensor(Shape{b}, batch.weights));
  const auto outer = ad::scale(ad::sum(ad::mul(losses, phi)), 1.0 / static_cast<double>(b));

  Hypergradient out;
  out.outer_loss = outer.value().item();
  out.grad = ad::grad(outer, meta_images).value();
  out.adapted = ClassifierModel::from_parameters(model.arch, ad::values_of(adapted));
  return out;
}

MetaKnowledge outer_step(const MetaKnowledge& meta, const ClassifierModel& model,
                         const WeightedBatch& batch, const FmkeConfig& cfg) {
  const auto hg = meta_hypergradient(meta, model, batch, cfg);
  MetaKnowledge next = meta;
  descend_and_clip(next, hg.grad, cfg.alpha_meta);
  return next;
}

std::vector<std::size_t> sample_batch(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (n == 0) throw ContractError("sample_batch: empty dataset");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  if (n < batch_size) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < batch_size; ++i) out.push_back(pick(rng));
    return out;
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.push_back(idx[i]);
  }
  return out;
}

MetaKnowledge extract_meta_knowledge(const Dataset& local, const ClassifierModel& broadcast,
                                     MetaKnowledge init, const FmkeConfig& cfg, Rng& rng,
                                     std::size_t client_id) {
  cfg.validate();
  if (local.size() == 0) throw ContractError("extract_meta_knowledge: no local data");
  MetaKnowledge meta = std::move(init);
  ClassifierModel local_model = broadcast;
  try {
    for (std::size_t step = 0; step < cfg.outer_steps; ++step) {
      const auto idx = sample_batch(local.size(), cfg.batch_size, rng);
      WeightedBatch batch;
      batch.images = gather_rows(local.images, idx);
      for (auto i : idx) batch.labels.push_back(local.labels[i]);
      batch.weights = cfg.dynamic_weights
                          ? dynamic_weights(local_model, batch.images, batch.labels, cfg.tau)
                          : std::vector<double>(idx.size(), 1.0);

      const auto hg = meta_hypergradient(meta, local_model, batch, cfg);
      descend_and_clip(meta, hg.grad, cfg.alpha_meta);
      if (cfg.carry_local_model) local_model = hg.adapted;
    }
  } catch (const NumericError& e) {
    throw NumericError("client " + std::to_string(client_id) + ": " + e.what());
  }
  return meta;
}

MetaKnowledge concat_meta(std::span<const MetaKnowledge> parts) {
  if (parts.empty()) throw ContractError("concat_meta: nothing to concatenate");
  std::vector<Tensor> images;
  MetaKnowledge out;
  out.num_classes = parts.front().num_classes;
  for (const auto& p : parts) {
    if (p.num_classes != out.num_classes) {
      throw ShapeError("concat_meta: class counts differ across clients");
    }
    images.push_back(p.images);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.per_class += p.per_class;
  }
  out.images = concat_rows(images);
  return out;
}

void save_meta(const std::filesystem::path& path, const MetaKnowledge& meta) {
  Tensor labels(Shape{meta.labels.size()});
  for (std::size_t i = 0; i < meta.labels.size(); ++i) labels[i] = meta.labels[i];
  const NamedTensor tensors[] = {{"images", meta.images}, {"labels", std::move(labels)}};
  write_checkpoint(path,
                   {{"kind", "meta_knowledge"},
                    {"per_class", meta.per_class},
                    {"num_classes", meta.num_classes}},
                   tensors);
}

MetaKnowledge load_meta(const std::filesystem::path& path) {
  auto ckpt = read_checkpoint(path);
  if (ckpt.header.value("kind", "") != "meta_knowledge" || ckpt.tensors.size() != 2) {
    throw FormatError(path.string() + ": not a meta knowledge checkpoint");
  }
  MetaKnowledge meta;
  meta.images = std::move(ckpt.tensors[0].value);
  for (double v : ckpt.tensors[1].value.values()) meta.labels.push_back(static_cast<int>(v));
  meta.per_class = ckpt.header.at("per_class").get<std::size_t>();
  meta.num_classes = ckpt.header.at("num_classes").get<std::size_t>();
  if (meta.images.rank() != 4 || meta.images.dim(0) != meta.labels.size() || !meta.balanced()) {
    throw FormatError(path.string() + ": inconsistent meta knowledge");
  }
  return meta;
}

}  // namespace fedmeta
