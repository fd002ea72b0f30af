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

#include "pivotkit/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "pivotkit/binio.hpp"
#include "pivotkit/parallel.hpp"
#include "pivotkit/rng.hpp"

namespace pivotkit {

namespace {

using json = nlohmann::json;

struct CatalogueEntry {
  const char* name;
  const char* words[2];
};

// Name first, then two related content words.
constexpr CatalogueEntry kCatalogue[kPatternCapacity] = {
    {"dog", {"barking", "puppy"}},        {"cat", {"meowing", "kitten"}},
    {"rain", {"raindrops", "drizzle"}},   {"siren", {"ambulance", "wailing"}},
    {"bird", {"chirping", "songbird"}},   {"engine", {"motor", "idling"}},
    {"baby", {"crying", "infant"}},       {"clock", {"ticking", "tock"}},
    {"bell", {"ringing", "chime"}},       {"drum", {"drumming", "beat"}},
    {"guitar", {"strumming", "chord"}},   {"piano", {"keys", "melody"}},
    {"thunder", {"storm", "rumble"}},     {"wind", {"gusts", "breeze"}},
    {"waves", {"surf", "ocean"}},         {"train", {"railway", "locomotive"}},
    {"helicopter", {"rotor", "chopper"}}, {"hammer", {"hammering", "nail"}},
    {"saw", {"sawing", "lumber"}},        {"crowd", {"cheering", "audience"}},
    {"laughter", {"laughing", "giggle"}}, {"whistle", {"whistling", "referee"}},
    {"frog", {"croaking", "pond"}},       {"cow", {"mooing", "cattle"}},
    {"rooster", {"crowing", "farmyard"}}, {"keyboard", {"typing", "keystrokes"}},
    {"footsteps", {"walking", "steps"}},  {"door", {"knocking", "slam"}},
    {"water", {"pouring", "splash"}},     {"fire", {"crackling", "flames"}},
    {"chainsaw", {"cutting", "logging"}}, {"insects", {"buzzing", "crickets"}},
};

// Caption templates. {D} intensity word, {C} content phrase, {P} place.
const std::vector<std::string> kTemplates = {
    "the sound of a {D} {C} {P}", "a {D} {C} can be heard {P}", "{C} {P} in the background",
    "someone hears a {D} {C}",    "there is a {D} {C} {P}",     "a recording of {C} {P}",
};
const std::vector<std::string> kPlaces = {"outside", "nearby", "indoors", "far away", "at night", "in the street"};
const std::vector<std::string> kQuietWords = {"soft", "faint", "quiet"};
const std::vector<std::string> kLoudWords = {"loud", "sharp", "strong"};
const std::vector<std::string> kPromptWords = {"the sound of", "a photo of", "and"};

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

template <typename V>
const auto& pick(const V& v, Rng* rng) {
  return rng ? v[rng->below(v.size())] : v[0];
}

ImageTensor make_pattern(std::uint64_t seed, int cls, int size) {
  Rng rng = Rng::stream(seed, "class-pattern", cls);
  ImageTensor p(3, size, size);
  for (int c = 0; c < 3; ++c) {
    const double offset = rng.uniform(-1.0, 1.0);
    struct Wave {
      int fx, fy;
      double amp, phase;
    };
    std::vector<Wave> waves;
    for (int k = 0; k < 3; ++k) {
      Wave w{};
      do {
        w.fx = static_cast<int>(rng.below(5)) - 2;
        w.fy = static_cast<int>(rng.below(5)) - 2;
      } while (w.fx == 0 && w.fy == 0);
      w.amp = rng.uniform(0.5, 1.0);
      w.phase = rng.uniform(0.0, 2 * M_PI);
      waves.push_back(w);
    }
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double v = offset;
        for (const Wave& w : waves) v += w.amp * std::cos(2 * M_PI * (w.fx * x + w.fy * y) / size + w.phase);
        p.at(c, y, x) = static_cast<float>(v);
      }
  }
  double sum = 0, sq = 0;
  for (float v : p.data) {
    sum += v;
    sq += double(v) * v;
  }
  const double n = static_cast<double>(p.data.size());
  const double sd = std::sqrt(std::max(sq / n - (sum / n) * (sum / n), 1e-12));
  for (auto& v : p.data) v = static_cast<float>(v / sd);
  return p;
}

std::vector<ClassInfo> make_classes(const WorldConfig& cfg) {
  // Base frequencies on a log grid, one slot per catalogue entry, assigned by
  // a seeded permutation so no two classes share a slot.
  std::vector<int> slots(kPatternCapacity);
  std::iota(slots.begin(), slots.end(), 0);
  Rng perm = Rng::stream(cfg.seed, "class-slots");
  perm.shuffle(slots.begin(), slots.end());
  std::vector<ClassInfo> classes(cfg.num_classes);
  for (int c = 0; c < cfg.num_classes; ++c) {
    ClassInfo& ci = classes[c];
    ci.name = kCatalogue[c].name;
    ci.words = {kCatalogue[c].name, kCatalogue[c].words[0], kCatalogue[c].words[1]};
    ci.pattern = make_pattern(cfg.seed, c, cfg.image_size);
    Rng rng = Rng::stream(cfg.seed, "class-audio", c);
    ci.base_hz = 180.0 * std::pow(5600.0 / 180.0, slots[c] / double(kPatternCapacity - 1));
    ci.harmonics = 1 + static_cast<int>(rng.below(3));
    ci.envelope = static_cast<int>(rng.below(3));
    ci.rate_hz = rng.uniform(2.0, 8.0);
  }
  return classes;
}

Vocab make_vocab(const WorldConfig& cfg, const std::vector<ClassInfo>& classes) {
  Vocab v;
  for (const auto& group : {kPromptWords, kTemplates, kPlaces, kQuietWords, kLoudWords})
    for (const auto& phrase : group)
      for (const auto& w : split_words(phrase))
        if (w.front() != '{') v.add(w);
  for (const auto& c : classes)
    for (const auto& w : c.words) v.add(w);
  if (cfg.vocab_size > 0) {
    if (cfg.vocab_size < v.size())
      throw Error("vocab_size " + std::to_string(cfg.vocab_size) + " is smaller than the " +
                  std::to_string(v.size()) + " words the caption grammar needs");
    for (int i = 0; v.size() < cfg.vocab_size; ++i) v.add("filler" + std::to_string(i));
  }
  return v;
}

void render_audio_into(const WorldConfig& cfg, const std::vector<ClassInfo>& classes,
                       const std::vector<int>& labels, int intensity, double seconds, Rng* rng,
                       std::vector<float>& out) {
  const int n = static_cast<int>(std::lround(seconds * cfg.sample_rate));
  const double noise = rng ? cfg.audio_noise : 0.0;
  std::vector<double> acc(n, 0.0);
  const double nyquist = 0.5 * cfg.sample_rate;
  for (int l : labels) {
    const ClassInfo& ci = classes[l];
    const double f0 = ci.base_hz * (noise > 0 ? std::exp(0.03 * noise * rng->normal()) : 1.0);
    const double period = 1.0 / ci.rate_hz;
    const double t0 = noise > 0 ? rng->uniform(0.0, period) : 0.0;
    std::vector<double> phases(ci.harmonics, 0.0);
    if (noise > 0)
      for (auto& p : phases) p = rng->uniform(0.0, 2 * M_PI);
    for (int s = 0; s < n; ++s) {
      const double t = s / cfg.sample_rate;
      double env = 1.0;
      if (ci.envelope == 1) env = std::exp(-10.0 * ci.rate_hz * std::fmod(t + t0, period));
      if (ci.envelope == 2) env = 0.5 + 0.5 * std::sin(2 * M_PI * ci.rate_hz * (t + t0));
      double v = 0;
      for (int h = 1; h <= ci.harmonics; ++h) {
        if (h * f0 >= 0.95 * nyquist) break;
        v += std::sin(2 * M_PI * h * f0 * t + phases[h - 1]) / h;
      }
      acc[s] += 0.5 * env * v;
    }
  }
  const double gain = noise > 0 ? (intensity ? 1.4 : 0.6) : 1.0;
  out.resize(n);
  for (int s = 0; s < n; ++s) {
    double v = gain * acc[s];
    if (noise > 0) v += 0.08 * noise * rng->normal();
    out[s] = static_cast<float>(v);
  }
}

std::vector<ImageTensor> render_frames(const WorldConfig& cfg, const std::vector<ClassInfo>& classes,
                                       const std::vector<int>& labels, int intensity, int count, Rng* rng) {
  const int S = cfg.image_size;
  const double noise = rng ? cfg.image_noise : 0.0;
  ImageTensor scene(3, S, S);
  const double norm = 1.0 / std::sqrt(static_cast<double>(labels.size()));
  const double gain = noise > 0 ? (intensity ? 1.25 : 0.75) : 1.0;
  for (int l : labels)
    for (std::size_t k = 0; k < scene.data.size(); ++k)
      scene.data[k] += static_cast<float>(gain * norm * classes[l].pattern.data[k]);
  std::vector<ImageTensor> frames;
  const int max_shift = noise > 0 ? std::max(1, static_cast<int>(std::lround(2 * noise))) : 0;
  for (int f = 0; f < count; ++f) {
    if (noise <= 0) {
      frames.push_back(scene);
      continue;
    }
    const int dx = static_cast<int>(rng->below(2 * max_shift + 1)) - max_shift;
    const int dy = static_cast<int>(rng->below(2 * max_shift + 1)) - max_shift;
    ImageTensor fr(3, S, S);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
          fr.at(c, y, x) = scene.at(c, ((y + dy) % S + S) % S, ((x + dx) % S + S) % S) +
                           static_cast<float>(noise * rng->normal());
    frames.push_back(std::move(fr));
  }
  return frames;
}

Tokens render_caption(const World& w, const std::vector<int>& labels, int intensity, int index, Rng* rng) {
  const WorldConfig& cfg = w.config;
  if (!(cfg.text_noise > 0)) rng = nullptr;
  const std::string& tmpl = rng ? pick(kTemplates, rng) : kTemplates[index % kTemplates.size()];
  std::string content;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (k) content += " and ";
    content += pick(w.classes[labels[k]].words, rng);
  }
  const std::string& d = rng ? pick(intensity ? kLoudWords : kQuietWords, rng) : kLoudWords[0];
  const std::string& p = pick(kPlaces, rng);
  std::string text;
  for (const auto& tok : split_words(tmpl)) {
    if (!text.empty()) text += ' ';
    text += tok == "{D}" ? d : tok == "{C}" ? content : tok == "{P}" ? p : tok;
  }
  Tokens t = w.vocab.encode(text);
  // Occasional filler word when the vocabulary has any.
  const int first_filler = w.vocab.contains("filler0") ? w.vocab.id("filler0") : w.vocab.size();
  const int fillers = w.vocab.size() - first_filler;
  if (rng && fillers > 0 && rng->uniform() < 0.2 * cfg.text_noise) {
    const int word = first_filler + static_cast<int>(rng->below(fillers));
    t.insert(t.begin() + static_cast<long>(rng->below(t.size() + 1)), word);
  }
  return t;
}

struct SplitSpec {
  SplitKind kind;
  int size;
  int frames;  // 0, 1 or kFramesPerClip
  bool audio;
  bool captions;
};

std::vector<TriModalRecord> make_split(const World& w, const SplitSpec& spec, const std::string& stream,
                                       double audio_seconds) {
  const WorldConfig& cfg = w.config;
  std::vector<TriModalRecord> out(spec.size);
  const std::string name = split_name(spec.kind);
  parallel_for(spec.size, [&](int i) {
    TriModalRecord& r = out[i];
    char id[64];
    std::snprintf(id, sizeof id, "%s-%05d", name.c_str(), i);
    r.id = id;
    Rng lab = Rng::stream(cfg.seed, stream + "/labels", i);
    r.labels = {i % cfg.num_classes};
    if (cfg.max_labels > 1) {
      const int count = 1 + static_cast<int>(lab.below(cfg.max_labels));
      while (static_cast<int>(r.labels.size()) < count) {
        const int c = static_cast<int>(lab.below(cfg.num_classes));
        if (std::find(r.labels.begin(), r.labels.end(), c) == r.labels.end()) r.labels.push_back(c);
      }
      std::sort(r.labels.begin(), r.labels.end());
    }
    r.intensity = static_cast<int>(lab.below(2));
    if (spec.frames > 0) {
      Rng rng = Rng::stream(cfg.seed, stream + "/frames", i);
      r.frames = render_frames(cfg, w.classes, r.labels, r.intensity, spec.frames,
                               cfg.image_noise > 0 ? &rng : nullptr);
    }
    if (spec.audio) {
      Rng rng = Rng::stream(cfg.seed, stream + "/audio", i);
      r.audio.sample_rate = cfg.sample_rate;
      render_audio_into(cfg, w.classes, r.labels, r.intensity, audio_seconds, cfg.audio_noise > 0 ? &rng : nullptr,
                        r.audio.samples);
    }
    if (spec.captions) {
      Rng rng = Rng::stream(cfg.seed, stream + "/captions", i);
      for (int k = 0; k < cfg.captions_per_audio; ++k) r.captions.push_back(render_caption(w, r.labels, r.intensity, k, &rng));
    }
  });
  return out;
}

World make_base(const WorldConfig& cfg) {
  cfg.validate();
  World w;
  w.config = cfg;
  w.classes = make_classes(cfg);
  w.vocab = make_vocab(cfg, w.classes);
  return w;
}

// --- serialization helpers -------------------------------------------------

json config_json(const WorldConfig& c) {
  return {{"num_classes", c.num_classes},       {"image_size", c.image_size},
          {"audio_seconds", c.audio_seconds},   {"sample_rate", c.sample_rate},
          {"mel_bins", c.mel_bins},             {"vocab_size", c.vocab_size},
          {"captions_per_audio", c.captions_per_audio},
          {"image_noise", c.image_noise},       {"audio_noise", c.audio_noise},
          {"text_noise", c.text_noise},         {"max_labels", c.max_labels},
          {"vt_size", c.vt_size},               {"va_size", c.va_size},
          {"at_gold_size", c.at_gold_size},     {"eval_size", c.eval_size},
          {"seed", c.seed}};
}

WorldConfig config_from_json(const json& j) {
  WorldConfig c;
  c.num_classes = j.at("num_classes");
  c.image_size = j.at("image_size");
  c.audio_seconds = j.at("audio_seconds");
  c.sample_rate = j.at("sample_rate");
  c.mel_bins = j.at("mel_bins");
  c.vocab_size = j.at("vocab_size");
  c.captions_per_audio = j.at("captions_per_audio");
  c.image_noise = j.at("image_noise");
  c.audio_noise = j.at("audio_noise");
  c.text_noise = j.at("text_noise");
  c.max_labels = j.at("max_labels");
  c.vt_size = j.at("vt_size");
  c.va_size = j.at("va_size");
  c.at_gold_size = j.at("at_gold_size");
  c.eval_size = j.at("eval_size");
  c.seed = j.at("seed");
  return c;
}

void write_frames(const std::filesystem::path& p, const std::vector<ImageTensor>& frames) {
  binio::Writer w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(frames.size()));
  for (const auto& f : frames) {
    w.put<std::uint32_t>(f.channels);
    w.put<std::uint32_t>(f.height);
    w.put<std::uint32_t>(f.width);
    w.put_span(std::span<const float>(f.data));
  }
  binio::write_file(p, w.bytes());
}

std::vector<ImageTensor> read_frames(const std::filesystem::path& p) {
  const auto bytes = binio::read_file(p);
  binio::Reader r(bytes, p.string());
  std::vector<ImageTensor> frames(r.get<std::uint32_t>());
  for (auto& f : frames) {
    const int c = r.get<std::uint32_t>(), h = r.get<std::uint32_t>(), w = r.get<std::uint32_t>();
    f = ImageTensor(c, h, w);
    r.get_bytes(f.data.data(), f.data.size() * sizeof(float));
  }
  return frames;
}

json split_json(const std::vector<TriModalRecord>& recs) {
  json arr = json::array();
  for (const auto& r : recs) {
    json j = {{"id", r.id}, {"labels", r.labels}, {"intensity", r.intensity},
              {"frames", r.frames.size()}, {"audio", r.has_audio()}};
    j["captions"] = r.captions;
    arr.push_back(std::move(j));
  }
  return arr;
}

void save_split(const std::filesystem::path& dir, const std::string& name, const std::vector<TriModalRecord>& recs) {
  const auto sub = dir / "records" / name;
  std::filesystem::create_directories(sub);
  for (const auto& r : recs) {
    if (r.has_frames()) write_frames(sub / (r.id + ".img"), r.frames);
    if (r.has_audio()) write_raw_f32(sub / (r.id + ".f32"), r.audio);
  }
}

std::vector<TriModalRecord> load_split(const std::filesystem::path& dir, const std::string& name, const json& arr) {
  const auto sub = dir / "records" / name;
  std::vector<TriModalRecord> recs(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const json& j = arr[i];
    TriModalRecord& r = recs[i];
    r.id = j.at("id");
    r.labels = j.at("labels").get<std::vector<int>>();
    r.intensity = j.at("intensity");
    r.captions = j.at("captions").get<std::vector<Tokens>>();
    if (j.at("frames").get<int>() > 0) r.frames = read_frames(sub / (r.id + ".img"));
    if (j.at("audio").get<bool>()) r.audio = read_raw_f32(sub / (r.id + ".f32"));
  }
  return recs;
}

}  // namespace

// --- Vocab -----------------------------------------------------------------

int Vocab::add(const std::string& word) {
  auto it = index_.find(word);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(words_.size());
  words_.push_back(word);
  index_.emplace(word, id);
  return id;
}

int Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw Error("word '" + word + "' is not in the vocabulary");
  return it->second;
}

Tokens Vocab::encode(const std::string& text) const {
  Tokens t;
  for (const auto& w : split_words(text)) t.push_back(id(w));
  return t;
}

std::string Vocab::decode(const Tokens& tokens) const {
  std::string s;
  for (int t : tokens) {
    if (!s.empty()) s += ' ';
    s += word(t);
  }
  return s;
}

// --- World -----------------------------------------------------------------

void WorldConfig::validate() const {
  if (num_classes < 2) throw Error("world config: num_classes must be at least 2");
  if (num_classes > kPatternCapacity)
    throw Error("world config: num_classes " + std::to_string(num_classes) + " exceeds pattern capacity " +
                std::to_string(kPatternCapacity));
  if (image_size < 4) throw Error("world config: image_size must be at least 4");
  if (!(sample_rate > 0) || !(audio_seconds > 0)) throw Error("world config: audio duration and rate must be positive");
  if (mel_bins < 2) throw Error("world config: mel_bins must be at least 2");
  if (captions_per_audio < 1) throw Error("world config: captions_per_audio must be positive");
  if (image_noise < 0 || audio_noise < 0 || text_noise < 0) throw Error("world config: noise levels must be >= 0");
  if (max_labels < 1 || max_labels > num_classes) throw Error("world config: max_labels out of range");
  if (vt_size < 0 || va_size < 0 || at_gold_size < 0 || eval_size < 0) throw Error("world config: negative split size");
}

const char* split_name(SplitKind s) {
  switch (s) {
    case SplitKind::kVT: return "vt";
    case SplitKind::kVA: return "va";
    case SplitKind::kATGold: return "at_gold";
    case SplitKind::kEval: return "eval";
  }
  return "unknown";
}

const ImageTensor& TriModalRecord::eval_frame() const {
  if (frames.empty()) throw Error("record " + id + " has no image frames");
  return frames[std::min<std::size_t>(kEvalFrameIndex, frames.size() - 1)];
}

const std::vector<TriModalRecord>& World::at_gold(StageKind requester) const {
  if (requester != StageKind::kAT)
    throw QuarantineError(std::string("AT gold set is quarantined: the ") + stage_name(requester) +
                          " stage may not read audio-text pairs");
  return at_gold_;
}

Tokens World::label_tokens(int c, const std::string& prompt) const {
  Tokens t = vocab.encode(prompt);
  const Tokens name = vocab.encode(classes.at(c).name);
  t.insert(t.end(), name.begin(), name.end());
  return t;
}

World generate_world(const WorldConfig& cfg) {
  World w = make_base(cfg);
  const double secs = cfg.audio_seconds;
  w.vt = make_split(w, {SplitKind::kVT, cfg.vt_size, 1, false, true}, "vt", secs);
  w.va = make_split(w, {SplitKind::kVA, cfg.va_size, kFramesPerClip, true, false}, "va", secs);
  w.at_gold_ = make_split(w, {SplitKind::kATGold, cfg.at_gold_size, kFramesPerClip, true, true}, "at_gold", secs);
  w.eval = make_split(w, {SplitKind::kEval, cfg.eval_size, kFramesPerClip, true, true}, "eval", secs);
  if (cfg.max_labels == 1 && !w.va.empty() && !w.eval.empty()) w.centroid_oracle_accuracy = centroid_accuracy(w, w.va, w.eval);
  return w;
}

World make_multilabel(WorldConfig cfg, int max_labels) {
  if (max_labels < 1) throw Error("make_multilabel: max_labels must be positive");
  cfg.max_labels = max_labels;
  return generate_world(cfg);
}

World domain_shifted(const WorldConfig& cfg, double duration_factor, double noise_factor) {
  WorldConfig shifted = cfg;
  shifted.audio_noise *= noise_factor;
  shifted.image_noise *= noise_factor;
  World w = make_base(cfg);
  w.config = shifted;
  w.config.audio_seconds = cfg.audio_seconds * duration_factor;
  w.config.vt_size = w.config.va_size = w.config.at_gold_size = 0;
  w.eval = make_split(w, {SplitKind::kEval, cfg.eval_size, kFramesPerClip, true, true}, "shifted-eval",
                      w.config.audio_seconds);
  return w;
}

std::vector<Tokens> template_captions(const World& world, int per_class, std::uint64_t seed) {
  std::vector<Tokens> out;
  for (int c = 0; c < world.config.num_classes; ++c)
    for (int intensity = 0; intensity < 2; ++intensity)
      for (int k = 0; k < per_class; ++k) {
        Rng rng = Rng::stream(seed, "caption-pool", static_cast<std::uint64_t>(c) * 2 + intensity, k);
        out.push_back(render_caption(world, {c}, intensity, k, &rng));
      }
  return out;
}

std::vector<int> caption_classes(const World& world, const Tokens& caption) {
  std::vector<int> out;
  for (int c = 0; c < static_cast<int>(world.classes.size()); ++c) {
    bool hit = false;
    for (const auto& w : world.classes[c].words)
      if (world.vocab.contains(w) && std::find(caption.begin(), caption.end(), world.vocab.id(w)) != caption.end())
        hit = true;
    if (hit) out.push_back(c);
  }
  return out;
}

WaveformClip render_clean_audio(const World& world, const std::vector<int>& labels, int intensity) {
  WaveformClip c;
  c.sample_rate = world.config.sample_rate;
  render_audio_into(world.config, world.classes, labels, intensity, world.config.audio_seconds, nullptr, c.samples);
  return c;
}

FbankOptions world_fbank_options(const WorldConfig& cfg) {
  FbankOptions o;
  o.mel_bins = cfg.mel_bins;
  return o;
}

double centroid_accuracy(const World& world, const std::vector<TriModalRecord>& train,
                         const std::vector<TriModalRecord>& test) {
  const FbankComputer fc(world_fbank_options(world.config), world.config.sample_rate);
  auto features = [&](const std::vector<TriModalRecord>& recs) {
    std::vector<FbankSpectrogram> out(recs.size());
    parallel_for(static_cast<int>(recs.size()), [&](int i) { out[i] = fc.compute(recs[i].audio); });
    return out;
  };
  const auto tr = features(train);
  const auto te = features(test);
  const CorpusStats stats = compute_corpus_stats(tr);
  const int K = world.config.num_classes;
  std::vector<Eigen::VectorXd> centroid(K);
  std::vector<int> count(K, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].labels.size() != 1) continue;
    const MatF v = normalize(tr[i], stats).values;
    const Eigen::VectorXd x = Eigen::Map<const VecF>(v.data(), v.size()).cast<double>();
    const int c = train[i].labels[0];
    if (count[c]++ == 0) centroid[c] = x;
    else centroid[c] += x;
  }
  for (int c = 0; c < K; ++c)
    if (count[c]) centroid[c] /= count[c];
  int hits = 0, total = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test[i].labels.size() != 1) continue;
    const MatF v = normalize(te[i], stats).values;
    const Eigen::VectorXd x = Eigen::Map<const VecF>(v.data(), v.size()).cast<double>();
    int best = -1;
    double best_d = 0;
    for (int c = 0; c < K; ++c) {
      if (!count[c] || centroid[c].size() != x.size()) continue;
      const double d = (centroid[c] - x).squaredNorm();
      if (best < 0 || d < best_d) best = c, best_d = d;
    }
    ++total;
    hits += best == test[i].labels[0];
  }
  return total ? static_cast<double>(hits) / total : 0.0;
}

void save_world(const World& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json m;
  m["format"] = "pivotkit-world/1";
  m["config"] = config_json(world.config);
  m["centroid_oracle_accuracy"] = world.centroid_oracle_accuracy;
  json classes = json::array();
  for (const auto& c : world.classes)
    classes.push_back({{"name", c.name}, {"words", c.words}, {"base_hz", c.base_hz}, {"harmonics", c.harmonics},
                       {"envelope", c.envelope}, {"rate_hz", c.rate_hz}});
  m["classes"] = classes;
  m["splits"] = {{"vt", split_json(world.vt)},
                 {"va", split_json(world.va)},
                 {"at_gold", split_json(world.at_gold_)},
                 {"eval", split_json(world.eval)}};
  {
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << m.dump(1) << '\n';
  }
  {
    std::ofstream out(dir / "vocab.txt", std::ios::binary);
    for (const auto& w : world.vocab.words()) out << w << '\n';
  }
  save_split(dir, "vt", world.vt);
  save_split(dir, "va", world.va);
  save_split(dir, "at_gold", world.at_gold_);
  save_split(dir, "eval", world.eval);
}

World load_world(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw Error("missing world manifest in " + dir.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed world manifest: ") + e.what());
  }
  if (m.value("format", "") != "pivotkit-world/1") throw Error("unsupported world format");
  World w = make_base(config_from_json(m.at("config")));
  // The audio length may differ from the base config for shifted worlds.
  w.config = config_from_json(m.at("config"));
  std::ifstream vin(dir / "vocab.txt", std::ios::binary);
  std::vector<std::string> words;
  for (std::string line; std::getline(vin, line);) words.push_back(line);
  if (words != w.vocab.words()) throw Error("world vocabulary does not match its config");
  for (std::size_t c = 0; c < w.classes.size(); ++c)
    if (m.at("classes").at(c).at("name") != w.classes[c].name) throw Error("world classes do not match its config");
  w.centroid_oracle_accuracy = m.at("centroid_oracle_accuracy");
  const json& s = m.at("splits");
  w.vt = load_split(dir, "vt", s.at("vt"));
  w.va = load_split(dir, "va", s.at("va"));
  w.at_gold_ = load_split(dir, "at_gold", s.at("at_gold"));
  w.eval = load_split(dir, "eval", s.at("eval"));
  return w;
}

}  // namespace pivotkit
