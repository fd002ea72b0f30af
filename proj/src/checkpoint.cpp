// Copyright 2026 The pivotkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pivotkit/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "pivotkit/binio.hpp"

namespace pivotkit {

namespace {

using json = nlohmann::json;
constexpr const char* kFormat = "pivotkit-checkpoint/1";

json encoder_config_json(const EncoderConfig& c) {
  return {{"modality", modality_name(c.modality)},
          {"patch",
           {{"kernel", {c.patch.kernel_h, c.patch.kernel_w}},
            {"stride", {c.patch.stride_h, c.patch.stride_w}},
            {"input_channels", c.patch.input_channels},
            {"embed_dim", c.patch.embed_dim}}},
          {"input", {c.input_h, c.input_w}},
          {"vocab_size", c.vocab_size},
          {"max_tokens", c.max_tokens},
          {"width", c.width},
          {"layers", c.layers},
          {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},
          {"embed_dim", c.embed_dim}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  c.modality = parse_modality(j.at("modality"));
  const json& p = j.at("patch");
  c.patch.kernel_h = p.at("kernel").at(0);
  c.patch.kernel_w = p.at("kernel").at(1);
  c.patch.stride_h = p.at("stride").at(0);
  c.patch.stride_w = p.at("stride").at(1);
  c.patch.input_channels = p.at("input_channels");
  c.patch.embed_dim = p.at("embed_dim");
  c.input_h = j.at("input").at(0);
  c.input_w = j.at("input").at(1);
  c.vocab_size = j.at("vocab_size");
  c.max_tokens = j.at("max_tokens");
  c.width = j.at("width");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.mlp_ratio = j.at("mlp_ratio");
  c.embed_dim = j.at("embed_dim");
  return c;
}

json temperature_json(const Temperature& t) {
  return {{"log_scale", t.log_scale}, {"learnable", t.learnable}, {"min_tau", t.min_tau}};
}

Temperature temperature_from_json(const json& j) {
  Temperature t;
  t.log_scale = j.at("log_scale");
  t.learnable = j.at("learnable");
  t.min_tau = j.at("min_tau");
  return t;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const TriModel& model, const OptimizerState* opt) {
  std::filesystem::create_directories(dir);
  binio::Writer blob;
  std::size_t cursor = 0;
  json m;
  m["format"] = kFormat;
  m["seed"] = model.seed;
  m["stage"] = model.stage;
  m["epoch"] = model.epoch;
  m["temperatures"] = {{"vt", temperature_json(model.vt_temp)},
                       {"va", temperature_json(model.va_temp)},
                       {"at", temperature_json(model.at_temp)}};
  if (model.audio_stats) m["audio_stats"] = {{"mean", model.audio_stats->mean}, {"std", model.audio_stats->std}};
  json encoders = json::object();
  for (const auto& [name, enc] : {std::pair{"image", &model.image}, std::pair{"audio", &model.audio},
                                  std::pair{"text", &model.text}}) {
    if (!*enc) continue;
    const Encoder& e = **enc;
    json table = json::array();
    for (const auto& s : e.layout().slots())
      table.push_back({{"name", s.name}, {"offset", cursor + s.offset}, {"rows", s.rows}, {"cols", s.cols},
                       {"bias_group", s.bias_group}});
    encoders[name] = {{"config", encoder_config_json(e.config())},
                      {"frozen", e.frozen()},
                      {"offset", cursor},
                      {"size", e.params().size()},
                      {"tensors", table}};
    blob.put_span(std::span<const float>(e.params().data(), e.params().size()));
    cursor += e.params().size();
  }
  m["encoders"] = encoders;
  if (opt) {
    json o = {{"kind", opt->kind}, {"step", opt->step}, {"scalars", opt->scalars}};
    json bufs = json::object();
    for (const auto& [name, buf] : opt->buffers) {
      bufs[name] = {{"offset", cursor}, {"size", buf.size()}};
      blob.put_span(std::span<const float>(buf.data(), buf.size()));
      cursor += buf.size();
    }
    o["buffers"] = bufs;
    m["optimizer"] = o;
  }
  binio::write_file(dir / "params.bin", blob.bytes());
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << m.dump(1) << '\n';
  if (!out) throw Error("failed to write checkpoint manifest in " + dir.string());
}

bool checkpoint_exists(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / "manifest.json") && std::filesystem::exists(dir / "params.bin");
}

TriModel load_checkpoint(const std::filesystem::path& dir, OptimizerState* opt) {
  if (!checkpoint_exists(dir)) throw Error("no checkpoint at " + dir.string());
  json m;
  try {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (m.value("format", "") != kFormat) throw Error("unsupported checkpoint format in " + dir.string());
  const std::string bytes = binio::read_file(dir / "params.bin");
  const std::size_t floats = bytes.size() / sizeof(float);
  auto section = [&](std::size_t offset, std::size_t size) {
    if (offset + size > floats) throw Error("checkpoint parameter blob is truncated");
    ParamBuffer<float> out(size);
    std::memcpy(out.data(), bytes.data() + offset * sizeof(float), size * sizeof(float));
    return out;
  };

  TriModel model;
  model.seed = m.at("seed");
  model.stage = m.at("stage");
  model.epoch = m.at("epoch");
  model.vt_temp = temperature_from_json(m.at("temperatures").at("vt"));
  model.va_temp = temperature_from_json(m.at("temperatures").at("va"));
  model.at_temp = temperature_from_json(m.at("temperatures").at("at"));
  if (m.contains("audio_stats")) model.audio_stats = CorpusStats{m["audio_stats"].at("mean"), m["audio_stats"].at("std")};
  for (const auto& [name, slot] : {std::pair{"image", &model.image}, std::pair{"audio", &model.audio},
                                   std::pair{"text", &model.text}}) {
    if (!m.at("encoders").contains(name)) continue;
    const json& e = m["encoders"][name];
    const std::size_t base = e.at("offset");
    slot->emplace(encoder_config_from_json(e.at("config")), section(base, e.at("size")));
    Encoder& enc = **slot;
    const json& table = e.at("tensors");
    const auto& slots = enc.layout().slots();
    if (table.size() != slots.size()) throw Error(std::string("checkpoint offset table mismatch for ") + name);
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const json& t = table[k];
      if (t.at("name") != slots[k].name || t.at("offset").get<std::size_t>() != base + slots[k].offset ||
          t.at("rows") != slots[k].rows || t.at("cols") != slots[k].cols)
        throw Error(std::string("checkpoint offset table mismatch for ") + name + " at " + slots[k].name);
    }
    enc.set_frozen(e.at("frozen"));
  }
  if (opt) {
    *opt = OptimizerState{};
    if (m.contains("optimizer")) {
      const json& o = m["optimizer"];
      opt->kind = o.at("kind");
      opt->step = o.at("step");
      opt->scalars = o.at("scalars").get<std::map<std::string, double>>();
      for (const auto& [name, b] : o.at("buffers").items()) opt->buffers[name] = section(b.at("offset"), b.at("size"));
    }
  }
  return model;
}

void write_embedding_dump(const std::filesystem::path& path, const EmbeddingDump& dump) {
  if (dump.ids.size() != static_cast<std::size_t>(dump.values.rows()) || dump.modalities.size() != dump.ids.size())
    throw Error("embedding dump: ids, modalities and rows differ in count");
  binio::Writer w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dump.ids.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dump.values.cols()));
  for (std::size_t i = 0; i < dump.ids.size(); ++i) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(dump.ids[i].size()));
    w.put_bytes(dump.ids[i].data(), dump.ids[i].size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(dump.modalities[i]));
    w.put_bytes(dump.values.row(i).data(), sizeof(float) * dump.values.cols());
  }
  binio::write_file(path, w.bytes());
}

EmbeddingDump read_embedding_dump(const std::filesystem::path& path) {
  binio::Reader r(binio::read_file(path), path.string());
  EmbeddingDump d;
  const std::uint32_t n = r.get<std::uint32_t>();
  const std::uint32_t dim = r.get<std::uint32_t>();
  d.values.resize(n, dim);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string id(r.get<std::uint32_t>(), '\0');
    r.get_bytes(id.data(), id.size());
    d.ids.push_back(std::move(id));
    const auto m = r.get<std::uint8_t>();
    if (m > 2) throw Error("embedding dump: bad modality byte");
    d.modalities.push_back(static_cast<Modality>(m));
    r.get_bytes(d.values.row(i).data(), sizeof(float) * dim);
  }
  return d;
}

}  // namespace pivotkit
