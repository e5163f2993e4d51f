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

// fedmeta run <config.json> [--seed N] [--out DIR] [--workers N]
// fedmeta cost <config.json>
//
// Exit codes: 0 ok, 2 bad arguments or config, 3 runtime failure.

#include <iostream>

#include <CLI11.hpp>

#include "fedmeta/experiment.hpp"

namespace {

constexpr int kConfigFailure = 2;
constexpr int kRuntimeFailure = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning with meta-knowledge extraction"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> workers;

  auto* run = app.add_subcommand("run", "Train every configured method and write ledgers");
  run->add_option("config", config_path, "Experiment JSON")->required();
  run->add_option("--seed", seed, "Override the federation seed");
  run->add_option("--out", out_dir, "Override the output directory");
  run->add_option("--workers", workers, "Client threads (0 = all cores)");

  auto* cost = app.add_subcommand("cost", "Print the communication cost table");
  cost->add_option("config", config_path, "Experiment JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigFailure;
  }

  fedmeta::ExperimentSpec spec;
  try {
    spec = fedmeta::parse_config_file(config_path);
  } catch (const fedmeta::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigFailure;
  }
  if (seed) spec.federation.seed = *seed;
  if (out_dir) spec.output_dir = *out_dir;
  if (workers) spec.federation.workers = *workers;

  try {
    if (*cost) {
      fedmeta::print_cost_table(spec, std::cout);
      return 0;
    }
    std::cerr << "config_hash " << fedmeta::spec_hash(spec) << '\n';
    return fedmeta::run_experiment(spec, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
}
