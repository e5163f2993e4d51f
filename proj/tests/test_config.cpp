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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "fedmeta/experiment.hpp"

namespace fedmeta {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Kind = ConfigError::Kind;

json minimal() { return json::parse(R"({"dataset": {"source": "blobs"}})"); }

/// Small end-to-end config that runs in well under a second.
json tiny(const fs::path& out) {
  return json{{"dataset", {{"source", "blobs"}, {"classes", 3}, {"train_per_class", 30},
                           {"test_per_class", 10}, {"dims", {1, 3, 3}}}},
              {"output_dir", out.string()},
              {"clients", 4},
              {"active", 2},
              {"rounds", 2},
              {"data_fraction", 1.0},
              {"meta_per_class", 2},
              {"model", {{"hidden", {6}}, {"latent_dim", 4}, {"noise_dim", 3},
                         {"generator_hidden", 6}}},
              {"fmke", {{"outer_steps", 3}}},
              {"server", {{"generator_steps", 5}}},
              {"fedavg", {{"local_steps", 3}}}};
}

void expect_config_error(const json& j, Kind kind, const std::string& key) {
  try {
    parse_config(j);
    ADD_FAILURE() << "expected " << to_string(kind) << " for " << key;
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
    EXPECT_EQ(e.key(), key) << e.what();
    EXPECT_NE(std::string(e.what()).find(key), std::string::npos);
  }
}

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("fedmeta_cfg_") + info->name());
    fs::remove_all(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// CSV text with the wall_ms column blanked.
std::string without_wall_clock(const std::string& csv) {
  std::stringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#' && line.rfind("round,", 0) != 0) {
      line = line.substr(0, line.rfind(','));
    }
    out += line + '\n';
  }
  return out;
}

TEST(ParseConfig, MinimalConfigGetsDefaults) {
  const auto spec = parse_config(minimal());
  EXPECT_EQ(spec.dataset.kind, DatasetSource::Kind::kBlobs);
  EXPECT_EQ(spec.dataset.blobs.classes, BlobSource{}.classes);
  EXPECT_EQ(spec.methods, (std::vector<Method>{Method::kFedMK, Method::kFedAvg}));
  const FederationConfig defaults;
  const auto& f = spec.federation;
  EXPECT_EQ(f.clients, defaults.clients);
  EXPECT_EQ(f.active, defaults.active);
  EXPECT_EQ(f.rounds, defaults.rounds);
  EXPECT_EQ(f.alpha_dirichlet, defaults.alpha_dirichlet);
  EXPECT_EQ(f.meta_per_class, defaults.meta_per_class);
  EXPECT_EQ(f.fmke.tau, 5.0);
  EXPECT_EQ(f.fedavg.local_steps, 20u);
  EXPECT_EQ(f.fedavg.batch_size, 32u);
  EXPECT_FALSE(f.server.n_pseudo.has_value());
  EXPECT_TRUE(f.ablation.iterate && f.ablation.sharing && f.ablation.pseudo &&
              f.ablation.dynamic_weights);
}

TEST(ParseConfig, ReadsEverySection) {
  auto j = minimal();
  j["methods"] = {"fedavg"};
  j["seed"] = 12;
  j["meta_download"] = "broadcast_once";
  j["model"] = {{"hidden", {32, 16}}};
  j["fmke"] = {{"eta", 0.7}, {"dynamic_weights", false}};
  j["server"] = {{"n_pseudo", 17}};
  j["fedavg"] = {{"lr", 0.05}};
  j["ablation"] = {{"sharing", false}};
  const auto spec = parse_config(j);
  EXPECT_EQ(spec.methods, std::vector<Method>{Method::kFedAvg});
  EXPECT_EQ(spec.federation.seed, 12u);
  EXPECT_EQ(spec.federation.meta_download, MetaDownload::kBroadcastOnce);
  EXPECT_EQ(spec.federation.arch.hidden, (std::vector<std::size_t>{32, 16}));
  EXPECT_EQ(spec.federation.fmke.eta, 0.7);
  EXPECT_FALSE(spec.federation.fmke.dynamic_weights);
  EXPECT_EQ(spec.federation.server.n_pseudo, 17u);
  EXPECT_EQ(spec.federation.fedavg.lr, 0.05);
  EXPECT_FALSE(spec.federation.ablation.sharing);
}

TEST(ParseConfig, NegativeAlphaIsTypeMismatch) {
  auto j = minimal();
  j["alpha_dirichlet"] = -1;
  expect_config_error(j, Kind::kTypeMismatch, "alpha_dirichlet");
}

TEST(ParseConfig, MisspelledKeyIsUnknownKey) {
  auto j = minimal();
  j["alpa"] = 0.5;
  expect_config_error(j, Kind::kUnknownKey, "alpa");
  auto nested = minimal();
  nested["fmke"] = {{"etaa", 0.1}};
  expect_config_error(nested, Kind::kUnknownKey, "fmke.etaa");
}

TEST(ParseConfig, MissingKeysAreNamed) {
  expect_config_error(json::object(), Kind::kMissingKey, "dataset");
  expect_config_error(json{{"dataset", json::object()}}, Kind::kMissingKey, "dataset.source");
  expect_config_error(json{{"dataset", {{"source", "idx"}, {"train_images", "a"}}}},
                      Kind::kMissingKey, "dataset.train_labels");
}

TEST(ParseConfig, WrongTypesAreTypeMismatch) {
  auto j = minimal();
  j["rounds"] = "ten";
  expect_config_error(j, Kind::kTypeMismatch, "rounds");
  j = minimal();
  j["rounds"] = 0;
  expect_config_error(j, Kind::kTypeMismatch, "rounds");
  j = minimal();
  j["methods"] = {"fedprox"};
  expect_config_error(j, Kind::kTypeMismatch, "methods");
  j = minimal();
  j["active"] = 30;
  expect_config_error(j, Kind::kTypeMismatch, "active");
  j = minimal();
  j["dataset"]["source"] = "cifar";
  expect_config_error(j, Kind::kTypeMismatch, "dataset.source");
  j = minimal();
  j["ablation"] = {{"pseudo", 1}};
  expect_config_error(j, Kind::kTypeMismatch, "ablation.pseudo");
}

TEST(ParseConfig, UnreadableFileIsConfigError) {
  EXPECT_THROW(parse_config_file("/nonexistent/config.json"), ConfigError);
  TempDir dir;
  fs::create_directories(dir.path());
  std::ofstream(dir.path() / "bad.json") << "{not json";
  EXPECT_THROW(parse_config_file(dir.path() / "bad.json"), ConfigError);
}

TEST(SpecHash, CanonicalFormRoundTrips) {
  auto j = tiny("out");
  j["server"]["n_pseudo"] = 5;
  const auto spec = parse_config(j);
  const auto again = parse_config(canonical_json(spec));
  EXPECT_EQ(canonical_json(again), canonical_json(spec));
  EXPECT_EQ(spec_hash(again), spec_hash(spec));
  EXPECT_EQ(spec_hash(spec).size(), 16u);
}

TEST(SpecHash, TracksResultsNotPlumbing) {
  auto spec = parse_config(tiny("a"));
  const auto base = spec_hash(spec);
  spec.output_dir = "b";
  spec.federation.workers = 7;
  EXPECT_EQ(spec_hash(spec), base);
  spec.federation.seed = 1;
  EXPECT_NE(spec_hash(spec), base);
}

TEST(RunExperiment, WritesLedgersAndSummary) {
  TempDir dir;
  const auto spec = parse_config(tiny(dir.path()));
  std::ostringstream log;
  ASSERT_EQ(run_experiment(spec, log), 0) << log.str();
  const auto fedmk = read_file(dir.path() / "fedmk.csv");
  EXPECT_EQ(fedmk.rfind("# config_hash=" + spec_hash(spec) + "\n", 0), 0u);
  EXPECT_TRUE(fs::exists(dir.path() / "fedavg.csv"));
  EXPECT_FALSE(fs::exists(dir.path() / "fedmk.csv.partial"));
  const auto summary = read_file(dir.path() / "summary.txt");
  EXPECT_NE(summary.find(spec_hash(spec)), std::string::npos);
  EXPECT_NE(summary.find("fedmk "), std::string::npos);
  EXPECT_NE(summary.find("fedavg "), std::string::npos);
}

TEST(RunExperiment, RerunIsIdenticalExceptWallClock) {
  TempDir dir;
  auto spec = parse_config(tiny(dir.path() / "a"));
  std::ostringstream log;
  ASSERT_EQ(run_experiment(spec, log), 0);
  spec.output_dir = dir.path() / "b";
  ASSERT_EQ(run_experiment(spec, log), 0);
  for (const char* name : {"fedmk.csv", "fedavg.csv"}) {
    EXPECT_EQ(without_wall_clock(read_file(dir.path() / "a" / name)),
              without_wall_clock(read_file(dir.path() / "b" / name)));
  }
  EXPECT_EQ(read_file(dir.path() / "a" / "summary.txt"),
            read_file(dir.path() / "b" / "summary.txt"));
}

TEST(RunExperiment, UnreadableIdxLeavesNoOutput) {
  TempDir dir;
  auto j = tiny(dir.path());
  j["dataset"] = {{"source", "idx"}, {"train_images", "/nonexistent/a"},
                  {"train_labels", "/nonexistent/b"}, {"test_images", "/nonexistent/c"},
                  {"test_labels", "/nonexistent/d"}};
  std::ostringstream log;
  EXPECT_EQ(run_experiment(parse_config(j), log), 3);
  EXPECT_FALSE(fs::exists(dir.path()));
  EXPECT_NE(log.str().find("/nonexistent/a"), std::string::npos);
}

TEST(RunExperiment, FailureKeepsEarlierMethodOutput) {
  TempDir dir;
  auto j = tiny(dir.path());
  j["methods"] = {"fedavg", "fedmk"};
  j["fmke"]["eta"] = 1e300;
  j["fmke"]["alpha_meta"] = 1e300;
  std::ostringstream log;
  EXPECT_EQ(run_experiment(parse_config(j), log), 3);
  EXPECT_TRUE(fs::exists(dir.path() / "fedavg.csv"));
  EXPECT_FALSE(fs::exists(dir.path() / "fedmk.csv"));
  EXPECT_FALSE(fs::exists(dir.path() / "fedmk.csv.partial"));
  EXPECT_FALSE(fs::exists(dir.path() / "summary.txt"));
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(FEDMETA_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  fs::create_directories(dir.path());
  const auto good = dir.path() / "good.json";
  std::ofstream(good) << tiny(dir.path() / "out").dump();
  auto j = tiny(dir.path() / "out");
  j["alpa"] = 1;
  const auto bad = dir.path() / "bad.json";
  std::ofstream(bad) << j.dump();
  auto missing = tiny(dir.path() / "out2");
  missing["dataset"] = {{"source", "idx"}, {"train_images", "/nonexistent/a"},
                        {"train_labels", "/nonexistent/b"}, {"test_images", "/nonexistent/c"},
                        {"test_labels", "/nonexistent/d"}};
  const auto runtime = dir.path() / "runtime.json";
  std::ofstream(runtime) << missing.dump();

  EXPECT_EQ(run_cli("cost " + good.string()), 0);
  EXPECT_EQ(run_cli("run " + good.string() + " --seed 3 --out " + (dir.path() / "o").string()), 0);
  EXPECT_TRUE(fs::exists(dir.path() / "o" / "fedmk.csv"));
  EXPECT_EQ(run_cli("run " + bad.string()), 2);
  EXPECT_EQ(run_cli("run"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("run " + runtime.string()), 3);
  EXPECT_EQ(run_cli("cost " + runtime.string()), 3);
}

}  // namespace
}  // namespace fedmeta
