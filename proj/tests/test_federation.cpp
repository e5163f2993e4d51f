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

#include <sstream>

#include <gtest/gtest.h>

#include "fedmeta/errors.hpp"
#include "fedmeta/federation.hpp"

namespace fedmeta {
namespace {

struct BlobFederation {
  Dataset train, test;
  FederationConfig cfg;

  explicit BlobFederation(std::uint64_t seed = 0) {
    auto all = synth_blobs(3, 60, {1, 4, 4}, 0.6, 21);
    std::tie(train, test) = split_per_class(all, 20, 21);
    cfg.clients = 6;
    cfg.active = 3;
    cfg.rounds = 3;
    cfg.data_fraction = 1.0;
    cfg.meta_per_class = 3;
    cfg.arch.hidden = {8};
    cfg.arch.latent_dim = 6;
    cfg.arch.noise_dim = 4;
    cfg.arch.generator_hidden = 8;
    cfg.fmke.outer_steps = 4;
    cfg.server.generator_steps = 10;
    cfg.fedavg.local_steps = 5;
    cfg.seed = seed;
    cfg.workers = 1;
  }
};

void expect_same_ledgers(const std::vector<RoundLedger>& a, const std::vector<RoundLedger>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].round, b[i].round);
    EXPECT_EQ(a[i].accuracy, b[i].accuracy);
    EXPECT_EQ(a[i].up_bytes, b[i].up_bytes);
    EXPECT_EQ(a[i].down_bytes, b[i].down_bytes);
    EXPECT_EQ(a[i].cum_bytes, b[i].cum_bytes);
  }
}

TEST(SelectActive, AllClientsWhenActiveEqualsClients) {
  EXPECT_EQ(select_active(5, 5, 3, 1), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(SelectActive, DeterministicPerSeedAndRound) {
  EXPECT_EQ(select_active(20, 10, 4, 9), select_active(20, 10, 4, 9));
  EXPECT_NE(select_active(20, 10, 4, 9), select_active(20, 10, 5, 9));
  EXPECT_THROW(select_active(3, 4, 1, 0), ContractError);
}

TEST(SelectActive, UniformFrequencies) {
  std::vector<int> hits(20, 0);
  for (std::size_t draw = 0; draw < 10000; ++draw) {
    const auto ids = select_active(20, 10, draw, 77);
    ASSERT_EQ(ids.size(), 10u);
    for (std::size_t i = 1; i < ids.size(); ++i) ASSERT_LT(ids[i - 1], ids[i]);
    for (auto c : ids) ++hits[c];
  }
  for (int h : hits) EXPECT_NEAR(h / 10000.0, 0.5, 0.02);
}

TEST(WeightedAverage, ScalarExample) {
  const std::vector<std::vector<Tensor>> models{{Tensor::scalar(0.0)}, {Tensor::scalar(1.0)}};
  const std::vector<double> w{0.25, 0.75};
  EXPECT_DOUBLE_EQ(weighted_average(models, w)[0].item(), 0.75);
}

TEST(WeightedAverage, IdenticalModelsAverageToThemselves) {
  const std::vector<Tensor> m{Tensor({2, 2}, {1.0, -2.0, 0.5, 3.0}), Tensor({2}, {0.25, 4.0})};
  const std::vector<std::vector<Tensor>> models{m, m, m, m};
  const std::vector<double> w{0.25, 0.25, 0.25, 0.25};
  EXPECT_EQ(weighted_average(models, w), m);
}

TEST(WeightedAverage, RejectsBadWeights) {
  const std::vector<std::vector<Tensor>> models{{Tensor::scalar(0.0)}, {Tensor::scalar(1.0)}};
  const std::vector<double> w{0.5, 0.6};
  EXPECT_THROW(weighted_average(models, w), ContractError);
}

TEST(CommCost, MnistMetaPayloadAndFedAvgTotal) {
  FederationConfig cfg;
  cfg.active = 10;
  cfg.rounds = 200;
  // 26,250 float32 parameters = a 105,000-byte model.
  const auto c = comm_cost(cfg, 26250, {1, 28, 28}, 20, 10);
  EXPECT_EQ(c.meta_payload, 627200u);
  EXPECT_EQ(c.model_bytes, 105000u);
  EXPECT_EQ(c.fedavg_total, 420000000u);
  EXPECT_EQ(c.fedmk_up_per_round, 6272000u);
  EXPECT_EQ(c.fedmk_down_per_round, (627200u + 105000u) * 10);
}

TEST(CommCost, BroadcastOnceDownload) {
  FederationConfig cfg;
  cfg.active = 10;
  cfg.rounds = 10;
  cfg.meta_download = MetaDownload::kBroadcastOnce;
  const auto c = comm_cost(cfg, 26250, {1, 28, 28}, 20, 10);
  EXPECT_EQ(c.fedmk_down_per_round, 1677200u);
  EXPECT_EQ(c.fedmk_total, (6272000u + 1677200u) * 10);
}

TEST(CommCost, FedMkBelowFedAvgAtEqualAccuracyBudget) {
  FederationConfig mk;
  mk.rounds = 10;
  FederationConfig avg = mk;
  avg.rounds = 200;
  EXPECT_LT(comm_cost(mk, 26250, {1, 28, 28}, 20, 10).fedmk_total,
            comm_cost(avg, 26250, {1, 28, 28}, 20, 10).fedavg_total);
}

TEST(CommCost, OneShotCountsOneRound) {
  FederationConfig cfg;
  cfg.rounds = 10;
  cfg.ablation.iterate = false;
  const auto c = comm_cost(cfg, 100, {1, 2, 2}, 1, 2);
  EXPECT_EQ(c.fedmk_total, c.fedmk_up_per_round + c.fedmk_down_per_round);
}

TEST(Ledger, CsvLayout) {
  const std::vector<RoundLedger> rows{{1, 0.5, 10, 20, 30, 1.25}, {2, 0.75, 10, 20, 60, 2.5}};
  std::ostringstream out;
  write_ledger_csv(out, rows, "abc");
  EXPECT_EQ(out.str(),
            "# config_hash=abc\n"
            "round,accuracy,up_bytes,down_bytes,cum_bytes,wall_ms\n"
            "1,0.500000,10,20,30,1.250\n"
            "2,0.750000,10,20,60,2.500\n");
}

TEST(FedMK, OneShotGivesSingleRow) {
  BlobFederation f;
  f.cfg.ablation.iterate = false;
  f.cfg.rounds = 5;
  const auto ledger = run_fedmk(f.cfg, f.train, f.test);
  ASSERT_EQ(ledger.size(), 1u);
  EXPECT_EQ(ledger[0].round, 1u);
}

TEST(FedMK, LedgerBytesFollowCostModel) {
  BlobFederation f;
  const auto ledger = run_fedmk(f.cfg, f.train, f.test);
  ASSERT_EQ(ledger.size(), 3u);
  ArchConfig arch = f.cfg.arch;
  arch.input = f.train.dims();
  arch.num_classes = 3;
  const auto c = comm_cost(f.cfg, classifier_parameter_count(arch), arch.input, 3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(ledger[i].up_bytes, c.fedmk_up_per_round);
    EXPECT_EQ(ledger[i].down_bytes, c.fedmk_down_per_round);
    EXPECT_EQ(ledger[i].cum_bytes, (i + 1) * (c.fedmk_up_per_round + c.fedmk_down_per_round));
  }
}

TEST(FedMK, DeterministicForSeed) {
  BlobFederation f(3);
  expect_same_ledgers(run_fedmk(f.cfg, f.train, f.test), run_fedmk(f.cfg, f.train, f.test));
}

TEST(FedMK, ParallelMatchesSerial) {
  BlobFederation f(4);
  const auto serial = run_fedmk(f.cfg, f.train, f.test);
  f.cfg.workers = 3;
  expect_same_ledgers(serial, run_fedmk(f.cfg, f.train, f.test));
}

TEST(FedMK, EveryAblationRuns) {
  for (int which = 0; which < 4; ++which) {
    BlobFederation f(5);
    f.cfg.rounds = 2;
    auto& a = f.cfg.ablation;
    (which == 0 ? a.iterate : which == 1 ? a.sharing : which == 2 ? a.pseudo : a.dynamic_weights) =
        false;
    const auto ledger = run_fedmk(f.cfg, f.train, f.test);
    EXPECT_EQ(ledger.size(), which == 0 ? 1u : 2u);
    for (const auto& row : ledger) {
      EXPECT_GE(row.accuracy, 0.0);
      EXPECT_LE(row.accuracy, 1.0);
    }
  }
}

TEST(FedMK, ErrorsCarryRoundContext) {
  BlobFederation f;
  f.cfg.fmke.alpha_meta = 1e300;
  f.cfg.fmke.eta = 1e300;
  try {
    run_fedmk(f.cfg, f.train, f.test);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("fedmk round 1"), std::string::npos) << e.what();
  }
}

TEST(FedAvg, DeterministicAndParallelSafe) {
  BlobFederation f(6);
  const auto a = run_fedavg(f.cfg, f.train, f.test);
  f.cfg.workers = 3;
  expect_same_ledgers(a, run_fedavg(f.cfg, f.train, f.test));
  ArchConfig arch = f.cfg.arch;
  arch.input = f.train.dims();
  arch.num_classes = 3;
  const std::uint64_t model_bytes = 4 * classifier_parameter_count(arch);
  EXPECT_EQ(a[0].up_bytes, model_bytes * 3);
  EXPECT_EQ(a.back().cum_bytes, model_bytes * 3 * 2 * 3);
}

TEST(FedAvg, LearnsOnBlobs) {
  BlobFederation f(7);
  f.cfg.rounds = 10;
  f.cfg.fedavg.local_steps = 20;
  f.cfg.fedavg.lr = 0.1;
  const auto ledger = run_fedavg(f.cfg, f.train, f.test);
  EXPECT_GT(ledger.back().accuracy, 0.8);
}

TEST(Config, InvalidFederationRejected) {
  BlobFederation f;
  f.cfg.active = 7;
  EXPECT_THROW(run_fedmk(f.cfg, f.train, f.test), ContractError);
}

}  // namespace
}  // namespace fedmeta
