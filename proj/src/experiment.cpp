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

#include "fedmeta/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>

#include "fedmeta/hash.hpp"

namespace fedmeta {

namespace {

using nlohmann::json;
using Kind = ConfigError::Kind;

bool is_count(const json& v, std::size_t min) {
  return v.is_number_integer() && v.get<std::int64_t>() >= 0 && v.get<std::size_t>() >= min;
}

/// Reads one JSON object, tracking which keys were consumed.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) {
      throw ConfigError(Kind::kTypeMismatch, path_.empty() ? "<root>" : path_,
                        "expected an object");
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key);
  }

  const json& raw(const std::string& key) {
    if (!has(key)) throw ConfigError(Kind::kMissingKey, full(key), "required key is missing");
    return obj_.at(key);
  }

  Section child(const std::string& key) {
    static const json empty = json::object();
    return Section(has(key) ? obj_.at(key) : empty, full(key));
  }

  double number(const std::string& key, double fallback, bool (*ok)(double) = nullptr,
                const char* expect = "a number") {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_number() || (ok != nullptr && !ok(v.get<double>()))) {
      throw ConfigError(Kind::kTypeMismatch, full(key), std::string("expected ") + expect);
    }
    return v.get<double>();
  }

  std::size_t count(const std::string& key, std::size_t fallback, std::size_t min = 0) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!is_count(v, min)) {
      throw ConfigError(Kind::kTypeMismatch, full(key),
                        "expected an integer >= " + std::to_string(min));
    }
    return v.get<std::size_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_boolean()) throw ConfigError(Kind::kTypeMismatch, full(key), "expected a boolean");
    return v.get<bool>();
  }

  std::string string(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_string()) throw ConfigError(Kind::kTypeMismatch, full(key), "expected a string");
    return v.get<std::string>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    return has(key) ? string(key) : fallback;
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback,
                                  std::size_t min) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_array()) throw ConfigError(Kind::kTypeMismatch, full(key), "expected an array");
    std::vector<std::size_t> out;
    for (const auto& e : v) {
      if (!is_count(e, min)) {
        throw ConfigError(Kind::kTypeMismatch, full(key),
                          "expected integers >= " + std::to_string(min));
      }
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  /// Rejects keys that no getter asked about.
  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) throw ConfigError(Kind::kUnknownKey, full(key), "unknown key");
    }
  }

  std::string full(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

bool positive(double v) { return v > 0.0; }
bool non_negative(double v) { return v >= 0.0; }
bool unit_interval(double v) { return v > 0.0 && v <= 1.0; }

ImageDims parse_dims(Section& s, const std::string& key, ImageDims fallback) {
  auto v = s.counts(key, {fallback.channels, fallback.width, fallback.height}, 1);
  if (v.size() != 3) {
    throw ConfigError(Kind::kTypeMismatch, s.full(key), "expected [channels, width, height]");
  }
  return {v[0], v[1], v[2]};
}

DatasetSource parse_dataset(Section s) {
  DatasetSource src;
  const std::string kind = s.string("source");
  if (kind == "blobs") {
    src.kind = DatasetSource::Kind::kBlobs;
    auto& b = src.blobs;
    b.classes = s.count("classes", b.classes, 2);
    b.train_per_class = s.count("train_per_class", b.train_per_class, 1);
    b.test_per_class = s.count("test_per_class", b.test_per_class, 1);
    b.dims = parse_dims(s, "dims", b.dims);
    b.spread = s.number("spread", b.spread, non_negative, "a number >= 0");
    b.seed = s.count("seed", b.seed);
  } else if (kind == "idx") {
    src.kind = DatasetSource::Kind::kIdx;
    src.idx.train_images = s.string("train_images");
    src.idx.train_labels = s.string("train_labels");
    src.idx.test_images = s.string("test_images");
    src.idx.test_labels = s.string("test_labels");
  } else {
    throw ConfigError(Kind::kTypeMismatch, s.full("source"), "expected \"blobs\" or \"idx\"");
  }
  s.finish();
  return src;
}

std::vector<Method> parse_methods(Section& s) {
  if (!s.has("methods")) return {Method::kFedMK, Method::kFedAvg};
  const auto& v = s.raw("methods");
  if (!v.is_array() || v.empty()) {
    throw ConfigError(Kind::kTypeMismatch, "methods", "expected a non-empty array");
  }
  std::vector<Method> out;
  for (const auto& e : v) {
    const std::string name = e.is_string() ? e.get<std::string>() : "";
    Method m;
    if (name == "fedmk") {
      m = Method::kFedMK;
    } else if (name == "fedavg") {
      m = Method::kFedAvg;
    } else {
      throw ConfigError(Kind::kTypeMismatch, "methods", "expected \"fedmk\" or \"fedavg\"");
    }
    if (std::find(out.begin(), out.end(), m) != out.end()) {
      throw ConfigError(Kind::kTypeMismatch, "methods", "duplicate method");
    }
    out.push_back(m);
  }
  return out;
}

}  // namespace

ConfigError::ConfigError(Kind kind, std::string key, const std::string& detail)
    : Error(std::string(to_string(kind)) + ": " + key + ": " + detail),
      kind_(kind),
      key_(std::move(key)) {}

const char* to_string(ConfigError::Kind kind) {
  switch (kind) {
    case Kind::kMissingKey: return "MissingKey";
    case Kind::kTypeMismatch: return "TypeMismatch";
    case Kind::kUnknownKey: return "UnknownKey";
  }
  return "ConfigError";
}

const char* to_string(Method m) { return m == Method::kFedMK ? "fedmk" : "fedavg"; }

ExperimentSpec parse_config(const json& config) {
  Section root(config, "");
  ExperimentSpec spec;
  spec.dataset = parse_dataset(Section(root.raw("dataset"), "dataset"));
  spec.methods = parse_methods(root);
  spec.output_dir = root.string("output_dir", spec.output_dir.string());

  auto& f = spec.federation;
  f.seed = root.count("seed", f.seed);
  f.clients = root.count("clients", f.clients, 1);
  f.active = root.count("active", f.active, 1);
  f.rounds = root.count("rounds", f.rounds, 1);
  f.alpha_dirichlet = root.number("alpha_dirichlet", f.alpha_dirichlet, positive, "a number > 0");
  f.data_fraction = root.number("data_fraction", f.data_fraction, unit_interval, "a number in (0, 1]");
  f.max_classes_per_client = root.count("max_classes_per_client", f.max_classes_per_client);
  f.meta_per_class = root.count("meta_per_class", f.meta_per_class, 1);
  f.workers = root.count("workers", f.workers);
  const std::string download = root.string("meta_download", "per_client");
  if (download == "per_client") {
    f.meta_download = MetaDownload::kPerClientShare;
  } else if (download == "broadcast_once") {
    f.meta_download = MetaDownload::kBroadcastOnce;
  } else {
    throw ConfigError(Kind::kTypeMismatch, "meta_download",
                      "expected \"per_client\" or \"broadcast_once\"");
  }
  if (f.active > f.clients) {
    throw ConfigError(Kind::kTypeMismatch, "active", "must not exceed clients");
  }

  {
    auto s = root.child("model");
    f.arch.hidden = s.counts("hidden", f.arch.hidden, 1);
    f.arch.latent_dim = s.count("latent_dim", f.arch.latent_dim, 1);
    f.arch.noise_dim = s.count("noise_dim", f.arch.noise_dim, 1);
    f.arch.generator_hidden = s.count("generator_hidden", f.arch.generator_hidden, 1);
    s.finish();
  }
  {
    auto s = root.child("fmke");
    auto& m = f.fmke;
    m.eta = s.number("eta", m.eta, non_negative, "a number >= 0");
    m.alpha_meta = s.number("alpha_meta", m.alpha_meta, non_negative, "a number >= 0");
    m.tau = s.number("tau", m.tau, positive, "a number > 0");
    m.outer_steps = s.count("outer_steps", m.outer_steps);
    m.inner_steps = s.count("inner_steps", m.inner_steps, 1);
    m.batch_size = s.count("batch_size", m.batch_size, 1);
    m.dynamic_weights = s.boolean("dynamic_weights", m.dynamic_weights);
    m.carry_local_model = s.boolean("carry_local_model", m.carry_local_model);
    s.finish();
  }
  {
    auto s = root.child("server");
    auto& m = f.server;
    m.epochs = s.count("epochs", m.epochs);
    m.lr = s.number("lr", m.lr, positive, "a number > 0");
    m.batch_size = s.count("batch_size", m.batch_size, 1);
    m.generator_steps = s.count("generator_steps", m.generator_steps);
    m.generator_lr = s.number("generator_lr", m.generator_lr, positive, "a number > 0");
    m.generator_batch = s.count("generator_batch", m.generator_batch, 1);
    if (s.has("n_pseudo") && !s.raw("n_pseudo").is_null()) {
      m.n_pseudo = s.count("n_pseudo", 0);
    }
    s.finish();
  }
  {
    auto s = root.child("fedavg");
    auto& m = f.fedavg;
    m.local_steps = s.count("local_steps", m.local_steps, 1);
    m.batch_size = s.count("batch_size", m.batch_size, 1);
    m.lr = s.number("lr", m.lr, positive, "a number > 0");
    s.finish();
  }
  {
    auto s = root.child("ablation");
    auto& a = f.ablation;
    a.iterate = s.boolean("iterate", a.iterate);
    a.sharing = s.boolean("sharing", a.sharing);
    a.pseudo = s.boolean("pseudo", a.pseudo);
    a.dynamic_weights = s.boolean("dynamic_weights", a.dynamic_weights);
    s.finish();
  }
  root.finish();
  return spec;
}

ExperimentSpec parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(Kind::kMissingKey, path.string(), "cannot read config file");
  json config;
  try {
    config = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(Kind::kTypeMismatch, path.string(), std::string("invalid JSON: ") + e.what());
  }
  return parse_config(config);
}

json canonical_json(const ExperimentSpec& spec) {
  json j;
  const auto& d = spec.dataset;
  if (d.kind == DatasetSource::Kind::kBlobs) {
    const auto& b = d.blobs;
    j["dataset"] = {{"source", "blobs"},
                    {"classes", b.classes},
                    {"train_per_class", b.train_per_class},
                    {"test_per_class", b.test_per_class},
                    {"dims", {b.dims.channels, b.dims.width, b.dims.height}},
                    {"spread", b.spread},
                    {"seed", b.seed}};
  } else {
    j["dataset"] = {{"source", "idx"},
                    {"train_images", d.idx.train_images.string()},
                    {"train_labels", d.idx.train_labels.string()},
                    {"test_images", d.idx.test_images.string()},
                    {"test_labels", d.idx.test_labels.string()}};
  }
  j["methods"] = json::array();
  for (auto m : spec.methods) j["methods"].push_back(to_string(m));
  const auto& f = spec.federation;
  j["seed"] = f.seed;
  j["clients"] = f.clients;
  j["active"] = f.active;
  j["rounds"] = f.rounds;
  j["alpha_dirichlet"] = f.alpha_dirichlet;
  j["data_fraction"] = f.data_fraction;
  j["max_classes_per_client"] = f.max_classes_per_client;
  j["meta_per_class"] = f.meta_per_class;
  j["meta_download"] =
      f.meta_download == MetaDownload::kPerClientShare ? "per_client" : "broadcast_once";
  j["model"] = {{"hidden", f.arch.hidden},
                {"latent_dim", f.arch.latent_dim},
                {"noise_dim", f.arch.noise_dim},
                {"generator_hidden", f.arch.generator_hidden}};
  j["fmke"] = {{"eta", f.fmke.eta},
               {"alpha_meta", f.fmke.alpha_meta},
               {"tau", f.fmke.tau},
               {"outer_steps", f.fmke.outer_steps},
               {"inner_steps", f.fmke.inner_steps},
               {"batch_size", f.fmke.batch_size},
               {"dynamic_weights", f.fmke.dynamic_weights},
               {"carry_local_model", f.fmke.carry_local_model}};
  j["server"] = {{"epochs", f.server.epochs},
                 {"lr", f.server.lr},
                 {"batch_size", f.server.batch_size},
                 {"generator_steps", f.server.generator_steps},
                 {"generator_lr", f.server.generator_lr},
                 {"generator_batch", f.server.generator_batch},
                 {"n_pseudo", f.server.n_pseudo ? json(*f.server.n_pseudo) : json(nullptr)}};
  j["fedavg"] = {{"local_steps", f.fedavg.local_steps},
                 {"batch_size", f.fedavg.batch_size},
                 {"lr", f.fedavg.lr}};
  j["ablation"] = {{"iterate", f.ablation.iterate},
                   {"sharing", f.ablation.sharing},
                   {"pseudo", f.ablation.pseudo},
                   {"dynamic_weights", f.ablation.dynamic_weights}};
  return j;
}

std::string spec_hash(const ExperimentSpec& spec) { return config_hash(canonical_json(spec)); }

TrainTest load_data(const DatasetSource& source) {
  if (source.kind == DatasetSource::Kind::kIdx) {
    const auto& p = source.idx;
    auto train = load_idx(p.train_images, p.train_labels);
    auto test = load_idx(p.test_images, p.test_labels, train.num_classes);
    if (train.dims() != test.dims()) throw FormatError("train and test image sizes differ");
    return {std::move(train), std::move(test)};
  }
  const auto& b = source.blobs;
  auto all = synth_blobs(b.classes, b.train_per_class + b.test_per_class, b.dims, b.spread, b.seed);
  auto [train, test] = split_per_class(all, b.test_per_class, b.seed);
  return {std::move(train), std::move(test)};
}

int run_experiment(const ExperimentSpec& spec, std::ostream& log) {
  namespace fs = std::filesystem;
  const std::string hash = spec_hash(spec);
  TrainTest data;
  try {
    data = load_data(spec.dataset);
  } catch (const std::exception& e) {
    log << "error: loading data: " << e.what() << '\n';
    return 3;
  }

  struct Outcome {
    Method method;
    RoundLedger last;
  };
  std::vector<Outcome> outcomes;
  try {
    fs::create_directories(spec.output_dir);
  } catch (const fs::filesystem_error& e) {
    log << "error: " << e.what() << '\n';
    return 3;
  }

  for (auto method : spec.methods) {
    const fs::path final_path = spec.output_dir / (std::string(to_string(method)) + ".csv");
    const fs::path partial = fs::path(final_path).concat(".partial");
    try {
      log << to_string(method) << ": " << spec.federation.rounds << " rounds, "
          << spec.federation.active << "/" << spec.federation.clients << " clients\n";
      auto progress = [&](const RoundLedger& r) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "  round %3zu  acc %.4f  %8.0f ms\n", r.round,
                      r.accuracy, r.wall_ms);
        log << buf << std::flush;
      };
      const auto ledger = method == Method::kFedMK
                              ? run_fedmk(spec.federation, data.train, data.test, progress)
                              : run_fedavg(spec.federation, data.train, data.test, progress);
      {
        std::ofstream out(partial);
        if (!out) throw FormatError("cannot write " + partial.string());
        write_ledger_csv(out, ledger, hash);
        if (!out) throw FormatError("write failed for " + partial.string());
      }
      fs::rename(partial, final_path);
      outcomes.push_back({method, ledger.back()});
    } catch (const std::exception& e) {
      std::error_code ignored;
      fs::remove(partial, ignored);
      log << "error: " << to_string(method) << ": " << e.what() << '\n';
      return 3;
    }
  }

  std::ofstream summary(spec.output_dir / "summary.txt");
  summary << "config_hash " << hash << '\n';
  summary << "method final_accuracy total_bytes rounds\n";
  for (const auto& o : outcomes) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s %.6f %llu %zu\n", to_string(o.method), o.last.accuracy,
                  static_cast<unsigned long long>(o.last.cum_bytes), o.last.round);
    summary << buf;
  }
  if (!summary) {
    log << "error: cannot write summary.txt\n";
    return 3;
  }
  return 0;
}

void print_cost_table(const ExperimentSpec& spec, std::ostream& out) {
  const auto data = load_data(spec.dataset);
  ArchConfig arch = spec.federation.arch;
  arch.input = data.train.dims();
  arch.num_classes = data.train.num_classes;
  const std::size_t params = classifier_parameter_count(arch);
  const auto c = comm_cost(spec.federation, params, arch.input, spec.federation.meta_per_class,
                           arch.num_classes);
  const std::size_t fedmk_rounds = spec.federation.ablation.iterate ? spec.federation.rounds : 1;
  auto row = [&out](const std::string& label, const std::string& value) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-26s %s\n", label.c_str(), value.c_str());
    out << buf;
  };
  row("config_hash", spec_hash(spec));
  row("model parameters", std::to_string(params));
  row("model bytes", std::to_string(c.model_bytes));
  row("meta payload / client", std::to_string(c.meta_payload));
  row("fedmk upload / round", std::to_string(c.fedmk_up_per_round));
  row("fedmk download / round", std::to_string(c.fedmk_down_per_round));
  row("fedmk total (" + std::to_string(fedmk_rounds) + " rounds)", std::to_string(c.fedmk_total));
  row("fedavg per round", std::to_string(c.fedavg_per_round));
  row("fedavg total (" + std::to_string(spec.federation.rounds) + " rounds)",
      std::to_string(c.fedavg_total));
}

}  // namespace fedmeta
