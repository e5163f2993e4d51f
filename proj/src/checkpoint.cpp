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

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

#include "fedmeta/errors.hpp"
#include "fedmeta/hash.hpp"
#include "fedmeta/models.hpp"

namespace fedmeta {

namespace {

constexpr const char* kFormat = "fedmeta-checkpoint/1";

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>(bits >> (8 * i));
  out.write(bytes, 8);
}

double get_f64(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t{bytes[i]} << (8 * i);
  return std::bit_cast<double>(bits);
}

std::vector<NamedTensor> name_layers(const std::string& prefix,
                                     std::span<const Tensor> params) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({prefix + "." + std::to_string(i / 2) + (i % 2 ? ".bias" : ".weight"),
                   params[i]});
  }
  return out;
}

Checkpoint read_kind(const std::filesystem::path& path, const char* kind) {
  auto ckpt = read_checkpoint(path);
  if (ckpt.header.value("kind", "") != kind) {
    throw FormatError(path.string() + ": not a " + kind + " checkpoint");
  }
  return ckpt;
}

std::vector<Tensor> values(std::vector<NamedTensor>&& named) {
  std::vector<Tensor> out;
  for (auto& t : named) out.push_back(std::move(t.value));
  return out;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, nlohmann::json header,
                      std::span<const NamedTensor> tensors) {
  header["format"] = kFormat;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) {
    header["tensors"].push_back({{"name", t.name}, {"shape", t.value.shape()}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << header.dump() << '\n';
  for (const auto& t : tensors)
    for (double v : t.value.values()) put_f64(out, v);
  if (!out) throw FormatError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header");
  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  if (ckpt.header.value("format", "") != kFormat) {
    throw FormatError(path.string() + ": unknown checkpoint format");
  }
  std::vector<unsigned char> buf;
  for (const auto& entry : ckpt.header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    Tensor t(shape);
    buf.resize(t.numel() * 8);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
      throw FormatError(path.string() + ": truncated payload");
    }
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = get_f64(buf.data() + 8 * i);
    ckpt.tensors.push_back({entry.at("name").get<std::string>(), std::move(t)});
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after payload");
  }
  return ckpt;
}

void save_classifier(const std::filesystem::path& path, const ClassifierModel& model) {
  auto tensors = name_layers("extractor", model.extractor);
  auto head = name_layers("head", model.head);
  tensors.insert(tensors.end(), head.begin(), head.end());
  const auto arch = model.arch.to_json();
  write_checkpoint(path, {{"kind", "classifier"}, {"arch", arch}, {"config_hash", config_hash(arch)}},
                   tensors);
}

ClassifierModel load_classifier(const std::filesystem::path& path) {
  auto ckpt = read_kind(path, "classifier");
  const auto arch = ArchConfig::from_json(ckpt.header.at("arch"));
  if (ckpt.header.value("config_hash", "") != config_hash(arch.to_json())) {
    throw FormatError(path.string() + ": config hash mismatch");
  }
  return ClassifierModel::from_parameters(arch, values(std::move(ckpt.tensors)));
}

void save_generator(const std::filesystem::path& path, const ConditionalGenerator& g) {
  const auto arch = g.arch.to_json();
  write_checkpoint(path, {{"kind", "generator"}, {"arch", arch}, {"config_hash", config_hash(arch)}},
                   name_layers("generator", g.params));
}

ConditionalGenerator load_generator(const std::filesystem::path& path) {
  auto ckpt = read_kind(path, "generator");
  ConditionalGenerator g{ArchConfig::from_json(ckpt.header.at("arch")),
                         values(std::move(ckpt.tensors))};
  if (g.params.size() != 4 || g.parameter_count() != generator_parameter_count(g.arch)) {
    throw FormatError(path.string() + ": generator tensors do not match arch");
  }
  return g;
}

}  // namespace fedmeta
