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

#include "fedmeta/models.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedmeta/errors.hpp"
#include "fedmeta/random.hpp"

namespace fedmeta {

namespace {

std::vector<std::size_t> extractor_widths(const ArchConfig& arch) {
  std::vector<std::size_t> w{arch.input.size()};
  w.insert(w.end(), arch.hidden.begin(), arch.hidden.end());
  w.push_back(arch.latent_dim);
  return w;
}

std::vector<std::size_t> head_widths(const ArchConfig& arch) {
  return {arch.latent_dim, arch.num_classes};
}

std::vector<std::size_t> generator_widths(const ArchConfig& arch) {
  return {arch.num_classes + arch.noise_dim, arch.generator_hidden, arch.latent_dim};
}

std::size_t dense_count(const std::vector<std::size_t>& widths) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) n += (widths[i] + 1) * widths[i + 1];
  return n;
}

std::vector<Tensor> init_dense(const std::vector<std::size_t>& widths, Rng& rng) {
  std::vector<Tensor> params;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[i]));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w(Shape{widths[i], widths[i + 1]});
    for (auto& v : w.data()) v = u(rng);
    params.push_back(std::move(w));
    params.emplace_back(Shape{widths[i + 1]}, 0.0);
  }
  return params;
}

void check_dense(const std::vector<std::size_t>& widths, std::span<const Tensor> params,
                 const char* what) {
  if (params.size() != 2 * (widths.size() - 1)) {
    throw ShapeError(std::string(what) + ": expected " +
                     std::to_string(2 * (widths.size() - 1)) + " tensors, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const Shape w{widths[i], widths[i + 1]};
    const Shape b{widths[i + 1]};
    if (params[2 * i].shape() != w || params[2 * i + 1].shape() != b) {
      throw ShapeError(std::string(what) + ": layer " + std::to_string(i) +
                       " expects " + shape_to_string(w) + "/" + shape_to_string(b));
    }
  }
}

ad::Var dense_stack(std::span<const ad::Var> layers, ad::Var h, bool relu_last) {
  const std::size_t n = layers.size() / 2;
  for (std::size_t i = 0; i < n; ++i) {
    h = ad::add_bias(ad::matmul(h, layers[2 * i]), layers[2 * i + 1]);
    if (i + 1 < n || relu_last) h = ad::relu(h);
  }
  return h;
}

}  // namespace

void ArchConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ContractError(std::string("arch: ") + name + " must be >= 1");
  };
  positive(input.channels, "input channels");
  positive(input.width, "input width");
  positive(input.height, "input height");
  for (auto h : hidden) positive(h, "hidden width");
  positive(latent_dim, "latent_dim");
  if (num_classes < 2) throw ContractError("arch: num_classes must be >= 2");
  positive(noise_dim, "noise_dim");
  positive(generator_hidden, "generator_hidden");
}

nlohmann::json ArchConfig::to_json() const {
  return {{"input", {input.channels, input.width, input.height}},
          {"hidden", hidden},
          {"latent_dim", latent_dim},
          {"num_classes", num_classes},
          {"noise_dim", noise_dim},
          {"generator_hidden", generator_hidden}};
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  ArchConfig a;
  const auto& in = j.at("input");
  a.input = {in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(),
             in.at(2).get<std::size_t>()};
  a.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  a.latent_dim = j.at("latent_dim").get<std::size_t>();
  a.num_classes = j.at("num_classes").get<std::size_t>();
  a.noise_dim = j.at("noise_dim").get<std::size_t>();
  a.generator_hidden = j.at("generator_hidden").get<std::size_t>();
  a.validate();
  return a;
}

std::size_t classifier_parameter_count(const ArchConfig& arch) {
  return dense_count(extractor_widths(arch)) + dense_count(head_widths(arch));
}

std::size_t generator_parameter_count(const ArchConfig& arch) {
  return dense_count(generator_widths(arch));
}

std::size_t extractor_tensor_count(const ArchConfig& arch) {
  return 2 * (arch.hidden.size() + 1);
}

std::vector<Tensor> ClassifierModel::parameters() const {
  std::vector<Tensor> all = extractor;
  all.insert(all.end(), head.begin(), head.end());
  return all;
}

ClassifierModel ClassifierModel::from_parameters(const ArchConfig& arch,
                                                 std::vector<Tensor> params) {
  const std::size_t split = extractor_tensor_count(arch);
  if (params.size() < split) throw ShapeError("classifier: too few parameter tensors");
  ClassifierModel m;
  m.arch = arch;
  m.extractor.assign(std::make_move_iterator(params.begin()),
                     std::make_move_iterator(params.begin() + static_cast<std::ptrdiff_t>(split)));
  m.head.assign(std::make_move_iterator(params.begin() + static_cast<std::ptrdiff_t>(split)),
                std::make_move_iterator(params.end()));
  check_dense(extractor_widths(arch), m.extractor, "feature extractor");
  check_dense(head_widths(arch), m.head, "classifier head");
  return m;
}

std::size_t ClassifierModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : extractor) n += t.numel();
  for (const auto& t : head) n += t.numel();
  return n;
}

std::size_t ConditionalGenerator::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : params) n += t.numel();
  return n;
}

ClassifierModel init_classifier(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng = make_rng({seed, stream::kInitModel});
  ClassifierModel m;
  m.arch = arch;
  m.extractor = init_dense(extractor_widths(arch), rng);
  m.head = init_dense(head_widths(arch), rng);
  return m;
}

ConditionalGenerator init_generator(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng = make_rng({seed, stream::kInitGenerator});
  return {arch, init_dense(generator_widths(arch), rng)};
}

ad::Var extractor_forward(const ArchConfig& arch, std::span<const ad::Var> extractor,
                          const ad::Var& x) {
  const auto& s = x.shape();
  const std::size_t d = arch.input.size();
  const bool image_batch = s.size() == 4 && s[1] == arch.input.channels &&
                           s[2] == arch.input.width && s[3] == arch.input.height;
  const bool flat_batch = s.size() == 2 && s[1] == d;
  if (!image_batch && !flat_batch) {
    throw ShapeError("classifier input " + shape_to_string(s) + " does not match (n," +
                     std::to_string(arch.input.channels) + "," +
                     std::to_string(arch.input.width) + "," +
                     std::to_string(arch.input.height) + ")");
  }
  if (extractor.size() != extractor_tensor_count(arch)) {
    throw ShapeError("feature extractor parameter count mismatch");
  }
  ad::Var h = image_batch ? ad::reshape(x, Shape{s[0], d}) : x;
  return dense_stack(extractor, h, /*relu_last=*/true);
}

ad::Var head_forward(std::span<const ad::Var> head, const ad::Var& latent) {
  return dense_stack(head, latent, /*relu_last=*/false);
}

ForwardPass classifier_forward(const ArchConfig& arch, std::span<const ad::Var> params,
                               const ad::Var& x) {
  const std::size_t split = extractor_tensor_count(arch);
  if (params.size() != split + 2) throw ShapeError("classifier parameter count mismatch");
  ad::Var z = extractor_forward(arch, params.first(split), x);
  return {z, head_forward(params.subspan(split), z)};
}

ForwardPass classifier_forward(const ClassifierModel& model, const Tensor& x) {
  const auto params = ad::constants(model.parameters());
  return classifier_forward(model.arch, params, ad::constant(x));
}

ad::Var generator_forward(const ArchConfig& arch, std::span<const ad::Var> params,
                          std::span<const int> labels, const Tensor& noise) {
  const std::size_t n = labels.size();
  if (noise.shape() != Shape{n, arch.noise_dim}) {
    throw ShapeError("generator noise must be " +
                     shape_to_string(Shape{n, arch.noise_dim}) + ", got " +
                     shape_to_string(noise.shape()));
  }
  const std::size_t K = arch.num_classes;
  const std::size_t width = K + arch.noise_dim;
  Tensor input(Shape{n, width});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= K) {
      throw ContractError("generator: label " + std::to_string(labels[i]) +
                          " outside [0," + std::to_string(K) + ")");
    }
    input[i * width + static_cast<std::size_t>(labels[i])] = 1.0;
    std::copy_n(noise.values().begin() + static_cast<std::ptrdiff_t>(i * arch.noise_dim),
                arch.noise_dim,
                input.data().begin() + static_cast<std::ptrdiff_t>(i * width + K));
  }
  return dense_stack(params, ad::constant(std::move(input)), /*relu_last=*/false);
}

Tensor generator_forward(const ConditionalGenerator& g, std::span<const int> labels,
                         const Tensor& noise) {
  ad::NoGradGuard guard;
  const auto params = ad::constants(g.params);
  return generator_forward(g.arch, params, labels, noise).value();
}

void apply_sgd(std::vector<Tensor>& params, std::span<const ad::Var> grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("apply_sgd: gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    const auto g = grads[i].value().data();
    if (p.size() != g.size()) throw ShapeError("apply_sgd: gradient shape mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
  }
}

void apply_sgd(ClassifierModel& model, std::span<const Tensor> grads, double lr) {
  if (grads.size() != model.extractor.size() + model.head.size()) {
    throw ShapeError("apply_sgd: gradient count mismatch");
  }
  std::size_t i = 0;
  for (auto* group : {&model.extractor, &model.head}) {
    for (auto& t : *group) {
      const auto g = grads[i++].data();
      auto p = t.data();
      if (p.size() != g.size()) throw ShapeError("apply_sgd: gradient shape mismatch");
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
    }
  }
}

std::vector<int> predict(const ClassifierModel& model, const Tensor& images) {
  constexpr std::size_t kChunk = 1024;
  ad::NoGradGuard guard;
  const auto params = ad::constants(model.parameters());
  const std::size_t n = images.dim(0);
  const std::size_t K = model.arch.num_classes;
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t end = std::min(n, begin + kChunk);
    const auto logits =
        classifier_forward(model.arch, params, ad::constant(slice_rows(images, begin, end)))
            .logits.value();
    for (std::size_t i = 0; i < end - begin; ++i) {
      const auto row = logits.data().subspan(i * K, K);
      out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

double accuracy(const ClassifierModel& model, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  const auto pred = predict(model, ds.images);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == ds.labels[i];
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

}  // namespace fedmeta
