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

#include <cstdio>
#include <ostream>

#include "fedmeta/errors.hpp"
#include "fedmeta/federation.hpp"

namespace fedmeta {

namespace {

constexpr std::uint64_t kBytesPerValue = 4;

}  // namespace

CommCost comm_cost(const FederationConfig& cfg, std::size_t model_param_count,
                   ImageDims meta_dims, std::size_t per_class, std::size_t num_classes) {
  const std::uint64_t active = cfg.active;
  const std::uint64_t rounds = cfg.ablation.iterate ? cfg.rounds : 1;
  CommCost c;
  c.meta_payload = kBytesPerValue * meta_dims.size() * per_class * num_classes;
  c.model_bytes = kBytesPerValue * model_param_count;
  c.fedmk_up_per_round = c.meta_payload * active;
  c.fedmk_down_per_round = cfg.meta_download == MetaDownload::kPerClientShare
                               ? (c.meta_payload + c.model_bytes) * active
                               : c.meta_payload + c.model_bytes * active;
  c.fedmk_total = (c.fedmk_up_per_round + c.fedmk_down_per_round) * rounds;
  c.fedavg_per_round = c.model_bytes * active * 2;
  c.fedavg_total = c.fedavg_per_round * cfg.rounds;
  return c;
}

void write_ledger_csv(std::ostream& out, std::span<const RoundLedger> ledger,
                      const std::string& config_hash) {
  out << "# config_hash=" << config_hash << '\n';
  out << "round,accuracy,up_bytes,down_bytes,cum_bytes,wall_ms\n";
  char buf[256];
  for (const auto& r : ledger) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%llu,%llu,%llu,%.3f\n", r.round, r.accuracy,
                  static_cast<unsigned long long>(r.up_bytes),
                  static_cast<unsigned long long>(r.down_bytes),
                  static_cast<unsigned long long>(r.cum_bytes), r.wall_ms);
    out << buf;
  }
}

}  // namespace fedmeta
