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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedmeta/dataset.hpp"
#include "fedmeta/errors.hpp"
#include "fedmeta/random.hpp"

namespace fedmeta {

namespace {

constexpr int kMaxAttempts = 100;

}  // namespace

std::size_t Partition::total() const {
  std::size_t n = 0;
  for (const auto& a : assignments) n += a.size();
  return n;
}

std::vector<double> sample_dirichlet(std::size_t k, double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> q(k);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    double total = 0.0;
    for (auto& v : q) total += (v = gamma(rng));
    if (total > 0.0) {
      for (auto& v : q) v /= total;
      return q;
    }
  }
  // Every draw underflowed (alpha tiny): the limit is a vertex of the simplex.
  std::fill(q.begin(), q.end(), 0.0);
  q[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 1.0;
  return q;
}

std::vector<std::size_t> largest_remainder(std::span<const double> shares,
                                           std::size_t total) {
  const double mass = std::accumulate(shares.begin(), shares.end(), 0.0);
  std::vector<std::size_t> counts(shares.size(), 0);
  if (shares.empty() || total == 0) return counts;
  if (!(mass > 0.0)) throw ContractError("largest_remainder: shares sum to zero");

  std::vector<double> frac(shares.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < shares.size(); ++i) {
    const double exact = shares[i] / mass * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    frac[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(shares.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  // Floating error can leave assigned a hair off; clamp and cycle.
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) {
    ++counts[order[i % order.size()]];
  }
  while (assigned > total) {
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  return counts;
}

Partition dirichlet_partition(const Dataset& ds, const PartitionOptions& opts) {
  if (opts.clients < 1) throw ContractError("dirichlet_partition: need at least one client");
  if (!(opts.alpha > 0.0)) throw ContractError("dirichlet_partition: alpha must be > 0");
  if (!(opts.fraction > 0.0 && opts.fraction <= 1.0)) {
    throw ContractError("dirichlet_partition: fraction must lie in (0, 1]");
  }
  const std::size_t K = ds.num_classes;
  const std::size_t C = opts.clients;
  Rng rng = make_rng({opts.seed, stream::kPartition});

  std::vector<std::vector<std::size_t>> kept(K);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    kept[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  for (auto& idx : kept) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto keep = static_cast<std::size_t>(
        std::llround(opts.fraction * static_cast<double>(idx.size())));
    idx.resize(std::min(keep, idx.size()));
  }

  // Which clients may receive each class.
  std::vector<std::vector<std::size_t>> eligible(K);
  if (opts.max_classes_per_client > 0 && opts.max_classes_per_client < K) {
    // Round-robin over a shuffled class order covers every class whenever
    // clients * cap >= K; uncovered classes fall back to all clients below.
    std::vector<std::size_t> classes(K);
    std::iota(classes.begin(), classes.end(), 0);
    std::shuffle(classes.begin(), classes.end(), rng);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t j = 0; j < opts.max_classes_per_client; ++j) {
        eligible[classes[(c * opts.max_classes_per_client + j) % K]].push_back(c);
      }
    }
  }
  for (auto& e : eligible) {
    if (e.empty()) {
      e.resize(C);
      std::iota(e.begin(), e.end(), 0);
    } else {
      std::sort(e.begin(), e.end());
    }
  }

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Partition part;
    part.assignments.assign(C, {});
    for (std::size_t k = 0; k < K; ++k) {
      const auto q = sample_dirichlet(eligible[k].size(), opts.alpha, rng);
      const auto counts = largest_remainder(q, kept[k].size());
      std::size_t offset = 0;
      for (std::size_t j = 0; j < counts.size(); ++j) {
        auto& dst = part.assignments[eligible[k][j]];
        dst.insert(dst.end(), kept[k].begin() + static_cast<std::ptrdiff_t>(offset),
                   kept[k].begin() + static_cast<std::ptrdiff_t>(offset + counts[j]));
        offset += counts[j];
      }
    }
    const bool all_nonempty =
        std::none_of(part.assignments.begin(), part.assignments.end(),
                     [](const auto& a) { return a.empty(); });
    if (!all_nonempty) continue;

    const double total = static_cast<double>(part.total());
    for (auto& a : part.assignments) {
      std::sort(a.begin(), a.end());
      part.weights.push_back(static_cast<double>(a.size()) / total);
    }
    return part;
  }
  throw RetryExhausted("dirichlet_partition: could not give every one of " +
                       std::to_string(C) + " clients a sample after " +
                       std::to_string(kMaxAttempts) + " attempts");
}

}  // namespace fedmeta
