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

#include "fedmeta/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

#include "fedmeta/errors.hpp"
#include "fedmeta/random.hpp"

namespace fedmeta {

namespace {

using Clock = std::chrono::steady_clock;

/// Runs fn(0..n-1) on up to `workers` threads. Each index writes only its own
/// output slot, so results match serial execution. The lowest-index failure
/// is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) run(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

[[noreturn]] void rethrow_with_round(std::size_t round, const char* method) {
  const std::string where = std::string(method) + " round " + std::to_string(round) + ": ";
  try {
    throw;
  } catch (const NumericError& e) {
    throw NumericError(where + e.what());
  } catch (const ContractError& e) {
    throw ContractError(where + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(where + e.what());
  } catch (const Error& e) {
    throw Error(where + e.what());
  }
}

ArchConfig arch_for(const FederationConfig& cfg, const Dataset& train) {
  ArchConfig arch = cfg.arch;
  arch.input = train.dims();
  arch.num_classes = train.num_classes;
  arch.validate();
  return arch;
}

std::vector<Dataset> client_datasets(const FederationConfig& cfg, const Dataset& train) {
  const auto part = dirichlet_partition(
      train, {cfg.clients, cfg.alpha_dirichlet, cfg.data_fraction,
              cfg.max_classes_per_client, cfg.seed});
  std::vector<Dataset> out;
  out.reserve(part.num_clients());
  for (const auto& idx : part.assignments) out.push_back(train.subset(idx));
  return out;
}

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

}  // namespace

void FederationConfig::validate() const {
  if (clients < 1) throw ContractError("federation: clients must be >= 1");
  if (active < 1 || active > clients) {
    throw ContractError("federation: active must lie in [1, clients]");
  }
  if (rounds < 1) throw ContractError("federation: rounds must be >= 1");
  if (!(alpha_dirichlet > 0.0)) throw ContractError("federation: alpha_dirichlet must be > 0");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) {
    throw ContractError("federation: data_fraction must lie in (0, 1]");
  }
  if (meta_per_class < 1) throw ContractError("federation: meta_per_class must be >= 1");
  if (fedavg.local_steps < 1 || fedavg.batch_size < 1 || !(fedavg.lr > 0.0)) {
    throw ContractError("federation: invalid FedAvg settings");
  }
  fmke.validate();
  server.validate();
}

std::vector<std::size_t> select_active(std::size_t clients, std::size_t active,
                                       std::size_t round, std::uint64_t seed) {
  if (active > clients) throw ContractError("select_active: active > clients");
  Rng rng = make_rng({seed, stream::kSelect, round});
  std::vector<std::size_t> ids(clients);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < active; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(active);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<Tensor> weighted_average(std::span<const std::vector<Tensor>> models,
                                     std::span<const double> weights) {
  if (models.empty() || models.size() != weights.size()) {
    throw ContractError("weighted_average: need one weight per model");
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) {
    throw ContractError("weighted_average: weights must sum to 1");
  }
  std::vector<Tensor> out;
  for (const auto& t : models.front()) out.emplace_back(t.shape(), 0.0);
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (models[m].size() != out.size()) throw ShapeError("weighted_average: model layouts differ");
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (models[m][i].shape() != out[i].shape()) {
        throw ShapeError("weighted_average: tensor shapes differ");
      }
      auto dst = out[i].data();
      const auto src = models[m][i].data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += weights[m] * src[j];
    }
  }
  return out;
}

std::vector<RoundLedger> run_fedmk(const FederationConfig& cfg, const Dataset& train,
                                   const Dataset& test, const RoundCallback& on_round) {
  cfg.validate();
  const ArchConfig arch = arch_for(cfg, train);
  const auto clients = client_datasets(cfg, train);
  const MetaShape shape{arch.num_classes, cfg.meta_per_class, arch.input};
  const auto cost = comm_cost(cfg, classifier_parameter_count(arch), arch.input,
                              cfg.meta_per_class, arch.num_classes);

  FmkeConfig fmke = cfg.fmke;
  fmke.dynamic_weights = fmke.dynamic_weights && cfg.ablation.dynamic_weights;

  ClassifierModel global = init_classifier(arch, cfg.seed);
  ConditionalGenerator generator = init_generator(arch, cfg.seed);
  MetaPool previous;
  std::vector<RoundLedger> ledger;
  std::uint64_t cumulative = 0;
  const std::size_t rounds = cfg.ablation.iterate ? cfg.rounds : 1;

  for (std::size_t t = 1; t <= rounds; ++t) {
    const auto start = Clock::now();
    try {
      const auto active = select_active(cfg.clients, cfg.active, t, cfg.seed);
      std::vector<MetaKnowledge> uploads(active.size());
      parallel_for(active.size(), cfg.workers, [&](std::size_t i) {
        const std::size_t c = active[i];
        Rng rng = make_rng({cfg.seed, stream::kClient, t, c});
        const std::uint64_t init_seed = derive_seed({cfg.seed, stream::kMetaInit, t, c});
        MetaKnowledge init = cfg.ablation.sharing
                                 ? conditional_init(previous, c, rng, shape, init_seed).meta
                                 : uniform_init(shape, init_seed);
        uploads[i] =
            extract_meta_knowledge(clients[c], global, std::move(init), fmke, rng, c);
      });

      previous.clear();
      for (std::size_t i = 0; i < active.size(); ++i) previous[active[i]] = uploads[i];
      const MetaKnowledge meta_all = concat_meta(uploads);

      Rng server_rng = make_rng({cfg.seed, stream::kServer, t});
      const auto& sc = cfg.server;
      if (cfg.ablation.pseudo) {
        generator = train_generator(std::move(generator), global, meta_all, sc.generator_steps,
                                    sc.generator_lr, sc.generator_batch, server_rng);
        const auto pseudo = sample_pseudo(generator, meta_all,
                                          sc.n_pseudo.value_or(meta_all.size()), server_rng);
        global = train_global_combined(std::move(global), meta_all, pseudo, sc.epochs, sc.lr,
                                       sc.batch_size, server_rng);
      } else {
        global = train_global_on_meta(std::move(global), meta_all, sc.epochs, sc.lr,
                                      sc.batch_size, server_rng);
      }
    } catch (const Error&) {
      rethrow_with_round(t, "fedmk");
    }

    RoundLedger row;
    row.round = t;
    row.accuracy = accuracy(global, test);
    row.up_bytes = cost.fedmk_up_per_round;
    row.down_bytes = cost.fedmk_down_per_round;
    cumulative += row.up_bytes + row.down_bytes;
    row.cum_bytes = cumulative;
    row.wall_ms = elapsed_ms(start);
    ledger.push_back(row);
    if (on_round) on_round(row);
  }
  return ledger;
}

std::vector<RoundLedger> run_fedavg(const FederationConfig& cfg, const Dataset& train,
                                    const Dataset& test, const RoundCallback& on_round) {
  cfg.validate();
  const ArchConfig arch = arch_for(cfg, train);
  const auto clients = client_datasets(cfg, train);
  const std::uint64_t model_bytes = 4ull * classifier_parameter_count(arch);

  ClassifierModel global = init_classifier(arch, cfg.seed);
  std::vector<RoundLedger> ledger;
  std::uint64_t cumulative = 0;

  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const auto start = Clock::now();
    try {
      const auto active = select_active(cfg.clients, cfg.active, t, cfg.seed);
      std::vector<std::vector<Tensor>> updates(active.size());
      parallel_for(active.size(), cfg.workers, [&](std::size_t i) {
        const Dataset& local = clients[active[i]];
        Rng rng = make_rng({cfg.seed, stream::kClient, t, active[i], 1});
        ClassifierModel model = global;
        for (std::size_t s = 0; s < cfg.fedavg.local_steps; ++s) {
          const auto idx = sample_batch(local.size(), cfg.fedavg.batch_size, rng);
          std::vector<int> labels;
          for (auto j : idx) labels.push_back(local.labels[j]);
          const auto params = ad::variables(model.parameters());
          const auto fwd = classifier_forward(arch, params, ad::constant(gather_rows(local.images, idx)));
          const auto loss = ad::mean(ad::softmax_cross_entropy(fwd.logits, labels));
          apply_sgd(model, ad::values_of(ad::grad(loss, params)), cfg.fedavg.lr);
        }
        updates[i] = model.parameters();
      });

      double total = 0.0;
      for (auto c : active) total += static_cast<double>(clients[c].size());
      std::vector<double> weights;
      for (auto c : active) weights.push_back(static_cast<double>(clients[c].size()) / total);
      global = ClassifierModel::from_parameters(arch, weighted_average(updates, weights));
    } catch (const Error&) {
      rethrow_with_round(t, "fedavg");
    }

    RoundLedger row;
    row.round = t;
    row.accuracy = accuracy(global, test);
    row.up_bytes = model_bytes * cfg.active;
    row.down_bytes = model_bytes * cfg.active;
    cumulative += row.up_bytes + row.down_bytes;
    row.cum_bytes = cumulative;
    row.wall_ms = elapsed_ms(start);
    ledger.push_back(row);
    if (on_round) on_round(row);
  }
  return ledger;
}

}  // namespace fedmeta
