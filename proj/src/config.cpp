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

#include "pivotkit/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <sstream>

#include "pivotkit/binio.hpp"

namespace pivotkit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  return std::all_of(k.begin(), k.end(), [](char c) { return std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) || c == '_'; });
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw Error("config key '" + key + "': '" + value + "' is not " + what);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw Error(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!valid_key(key)) throw Error(where + ": invalid key '" + key + "'");
    if (kv.has(key)) throw Error(where + ": duplicate key '" + key + "'");
    kv.values_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  return parse(binio::read_file(path), path.string());
}

void KeyValueConfig::apply_env(const std::set<std::string>& known, const char* prefix) {
  for (const auto& key : known) {
    std::string name = prefix;
    for (char c : key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (const char* v = std::getenv(name.c_str())) values_[key] = trim(v);
  }
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  char* end = nullptr;
  const long v = std::strtol(it->second.c_str(), &end, 10);
  if (it->second.empty() || *end != '\0') bad_value(key, it->second, "an integer");
  return static_cast<int>(v);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  char* end = nullptr;
  const double v = std::strtod(it->second.c_str(), &end);
  if (it->second.empty() || *end != '\0') bad_value(key, it->second, "a number");
  return v;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key, const std::vector<int>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<int> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    char* end = nullptr;
    const long v = std::strtol(item.c_str(), &end, 10);
    if (*end != '\0') bad_value(key, it->second, "a comma-separated integer list");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

void KeyValueConfig::require_known(const std::set<std::string>& known) const {
  for (const auto& [k, v] : values_)
    if (!known.count(k)) throw Error("unknown config key '" + k + "'");
}

std::string KeyValueConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

KeyValueConfig KeyValueConfig::subset(const std::set<std::string>& keys) const {
  KeyValueConfig out;
  for (const auto& [k, v] : values_)
    if (keys.count(k)) out.values_[k] = v;
  return out;
}

namespace {

std::string stage_prefix(StageKind s) {
  std::string p = stage_name(s);
  for (char& c : p) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return p + "_";
}

constexpr StageKind kAllStages[] = {StageKind::kVT, StageKind::kVA, StageKind::kAT, StageKind::kCLF};

}  // namespace

const std::set<std::string>& all_config_keys() {
  static const std::set<std::string> k = [] {
    std::set<std::string> out = world_config_keys();
    out.insert(tower_config_keys().begin(), tower_config_keys().end());
    for (const auto& key : stage_config_keys()) {
      out.insert(key);
      for (StageKind s : kAllStages) out.insert(stage_prefix(s) + key);
    }
    return out;
  }();
  return k;
}

KeyValueConfig scoped_stage_config(const KeyValueConfig& kv, StageKind stage) {
  KeyValueConfig out;
  const std::string prefix = stage_prefix(stage);
  for (const auto& key : stage_config_keys()) {
    if (kv.has(prefix + key)) out.set(key, kv.get(prefix + key, ""));
    else if (kv.has(key)) out.set(key, kv.get(key, ""));
  }
  return out;
}

const std::set<std::string>& world_config_keys() {
  static const std::set<std::string> k = {"num_classes", "image_size",   "audio_seconds", "sample_rate",
                                          "mel_bins",    "vocab_size",   "captions_per_audio", "image_noise",
                                          "audio_noise", "text_noise",   "max_labels",    "vt_size",
                                          "va_size",     "at_gold_size", "eval_size"};
  return k;
}

const std::set<std::string>& tower_config_keys() {
  static const std::set<std::string> k = {"width", "layers", "heads", "embed_dim", "patch", "max_tokens"};
  return k;
}

const std::set<std::string>& stage_config_keys() {
  static const std::set<std::string> k = {
      "epochs",     "batch_size", "optimizer",     "lr_weights", "lr_biases",  "weight_decay",     "momentum",
      "beta1",      "beta2",      "eps",           "warmup_epochs", "milestones", "gamma",          "trainable_blocks",
      "fixed_tau",  "augment",    "mask_time",     "mask_freq",  "bibi",       "vat",              "freeze_image",
      "freeze_text"};
  return k;
}

WorldConfig world_config_from(const KeyValueConfig& kv, std::uint64_t seed) {
  WorldConfig c;
  c.num_classes = kv.get_int("num_classes", c.num_classes);
  c.image_size = kv.get_int("image_size", c.image_size);
  c.audio_seconds = kv.get_double("audio_seconds", c.audio_seconds);
  c.sample_rate = kv.get_double("sample_rate", c.sample_rate);
  c.mel_bins = kv.get_int("mel_bins", c.mel_bins);
  c.vocab_size = kv.get_int("vocab_size", c.vocab_size);
  c.captions_per_audio = kv.get_int("captions_per_audio", c.captions_per_audio);
  c.image_noise = kv.get_double("image_noise", c.image_noise);
  c.audio_noise = kv.get_double("audio_noise", c.audio_noise);
  c.text_noise = kv.get_double("text_noise", c.text_noise);
  c.max_labels = kv.get_int("max_labels", c.max_labels);
  c.vt_size = kv.get_int("vt_size", c.vt_size);
  c.va_size = kv.get_int("va_size", c.va_size);
  c.at_gold_size = kv.get_int("at_gold_size", c.at_gold_size);
  c.eval_size = kv.get_int("eval_size", c.eval_size);
  c.seed = seed;
  c.validate();
  return c;
}

TowerShape tower_shape_from(const KeyValueConfig& kv) {
  TowerShape s;
  s.width = kv.get_int("width", s.width);
  s.layers = kv.get_int("layers", s.layers);
  s.heads = kv.get_int("heads", s.heads);
  s.embed_dim = kv.get_int("embed_dim", s.embed_dim);
  s.patch = kv.get_int("patch", s.patch);
  s.max_tokens = kv.get_int("max_tokens", s.max_tokens);
  return s;
}

StageConfig stage_config_from(const KeyValueConfig& kv, StageKind stage, std::uint64_t seed) {
  StageConfig c;
  c.stage = stage;
  c.seed = seed;
  c.epochs = 3;
  c.batch_size = 64;
  c.freeze_image = stage == StageKind::kVA || stage == StageKind::kAT;
  c.freeze_text = stage == StageKind::kAT || stage == StageKind::kVA;
  if (stage == StageKind::kCLF) {
    c.epochs = 20;
    c.optimizer.milestones = {10, 15};
  }
  c.epochs = kv.get_int("epochs", c.epochs);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  const std::string opt = kv.get("optimizer", "adam");
  if (opt == "adam") c.optimizer.kind = OptimizerKind::kAdam;
  else if (opt == "sgd") c.optimizer.kind = OptimizerKind::kSgd;
  else throw Error("config key 'optimizer': expected adam or sgd, got '" + opt + "'");
  auto& o = c.optimizer;
  o.lr_weights = kv.get_double("lr_weights", o.lr_weights);
  o.lr_biases = kv.get_double("lr_biases", o.lr_biases);
  o.weight_decay = kv.get_double("weight_decay", o.weight_decay);
  o.momentum = kv.get_double("momentum", o.momentum);
  o.beta1 = kv.get_double("beta1", o.beta1);
  o.beta2 = kv.get_double("beta2", o.beta2);
  o.eps = kv.get_double("eps", o.eps);
  o.warmup_epochs = kv.get_int("warmup_epochs", o.warmup_epochs);
  o.milestones = kv.get_int_list("milestones", o.milestones);
  o.gamma = kv.get_double("gamma", o.gamma);
  c.trainable_blocks = kv.get_int("trainable_blocks", c.trainable_blocks);
  c.fixed_tau = kv.get_double("fixed_tau", c.fixed_tau);
  c.augment = kv.get_bool("augment", c.augment);
  c.mask_time = kv.get_double("mask_time", c.mask_time);
  c.mask_freq = kv.get_double("mask_freq", c.mask_freq);
  c.bibi = kv.get_bool("bibi", c.bibi);
  c.vat = kv.get_bool("vat", c.vat);
  if (c.bibi) c.freeze_image = false;
  c.freeze_image = kv.get_bool("freeze_image", c.freeze_image);
  c.freeze_text = kv.get_bool("freeze_text", c.freeze_text);
  c.validate();
  return c;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
    throw Error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(binio::read_file(path)); }

}  // namespace pivotkit
