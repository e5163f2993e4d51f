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

// Round orchestration for FedMK and the FedAvg baseline, plus the
// communication-cost accountant and the per-round ledger.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedmeta/cmt.hpp"
#include "fedmeta/dataset.hpp"
#include "fedmeta/fmke.hpp"
#include "fedmeta/models.hpp"

namespace fedmeta {

/// Switches for the ablation variants; all on is full FedMK.
struct Ablations {
  bool iterate = true;  // off: one-shot, a single round
  bool sharing = true;
  bool pseudo = true;
  bool dynamic_weights = true;
};

struct FedAvgConfig {
  std::size_t local_steps = 20;
  std::size_t batch_size = 32;
  double lr = 0.01;
};

/// What an active client downloads besides the model.
enum class MetaDownload {
  kPerClientShare,  // one meta payload per active client
  kBroadcastOnce,   // a single meta payload per round for everyone
};

struct FederationConfig {
  std::size_t clients = 20;
  std::size_t active = 10;
  std::size_t rounds = 10;
  double alpha_dirichlet = 0.5;
  double data_fraction = 0.5;
  std::size_t max_classes_per_client = 0;
  std::size_t meta_per_class = 20;
  /// Input dims and class count are taken from the dataset at run time.
  ArchConfig arch;
  FmkeConfig fmke;
  ServerConfig server;
  FedAvgConfig fedavg;
  Ablations ablation;
  MetaDownload meta_download = MetaDownload::kPerClientShare;
  std::uint64_t seed = 0;
  /// Client tasks run on this many threads; 0 picks hardware concurrency.
  /// Results do not depend on it.
  std::size_t workers = 0;

  void validate() const;
};

struct RoundLedger {
  std::size_t round = 0;
  double accuracy = 0.0;
  std::uint64_t up_bytes = 0;
  std::uint64_t down_bytes = 0;
  std::uint64_t cum_bytes = 0;
  double wall_ms = 0.0;
};

using RoundCallback = std::function<void(const RoundLedger&)>;

/// `active` distinct ids from [0, clients), uniform without replacement,
/// fixed by (seed, round). Returned sorted.
std::vector<std::size_t> select_active(std::size_t clients, std::size_t active,
                                       std::size_t round, std::uint64_t seed);

std::vector<RoundLedger> run_fedmk(const FederationConfig& cfg, const Dataset& train,
                                   const Dataset& test, const RoundCallback& on_round = {});

std::vector<RoundLedger> run_fedavg(const FederationConfig& cfg, const Dataset& train,
                                    const Dataset& test, const RoundCallback& on_round = {});

/// sum_i weights[i] * models[i], tensor by tensor. Weights must sum to 1.
std::vector<Tensor> weighted_average(std::span<const std::vector<Tensor>> models,
                                     std::span<const double> weights);

/// Byte counts assuming 4-byte (float32) values on the wire.
struct CommCost {
  std::uint64_t meta_payload = 0;  // one client's meta knowledge
  std::uint64_t model_bytes = 0;
  std::uint64_t fedmk_up_per_round = 0;
  std::uint64_t fedmk_down_per_round = 0;
  std::uint64_t fedmk_total = 0;
  std::uint64_t fedavg_per_round = 0;
  std::uint64_t fedavg_total = 0;
};

/// Uses cfg.active, cfg.rounds and cfg.meta_download.
CommCost comm_cost(const FederationConfig& cfg, std::size_t model_param_count,
                   ImageDims meta_dims, std::size_t per_class, std::size_t num_classes);

/// `# config_hash=<hash>`, then `round,accuracy,up_bytes,down_bytes,cum_bytes,wall_ms`.
void write_ledger_csv(std::ostream& out, std::span<const RoundLedger> ledger,
                      const std::string& config_hash);

}  // namespace fedmeta
