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

#include "pivotkit/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pivotkit/binio.hpp"
#include "pivotkit/config.hpp"
#include "pivotkit/curation.hpp"
#include "pivotkit/dataset.hpp"
#include "pivotkit/eval.hpp"
#include "pivotkit/parallel.hpp"
#include "pivotkit/pipeline.hpp"

namespace pivotkit {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr const char* kStageFile = "stage.json";
constexpr const char* kReportFile = "report.json";
constexpr const char* kFormat = "pivotkit-stage/1";

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
  int jobs = 0;
  std::string manifest;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "root seed; every random stream derives from it");
  sub->add_option("--config", c.config, "key-value config file")->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "output directory")->required();
  sub->add_option("--jobs", c.jobs, "worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
  sub->add_option("--manifest", c.manifest, "append a provenance record to this JSON-lines file");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

/// Sorted (relative path, sha256) of every regular file under `dir`.
std::vector<std::pair<std::string, std::string>> file_hashes(const fs::path& dir, bool skip_stage_file) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (skip_stage_file && rel == kStageFile) continue;
    out.emplace_back(rel, sha256_file(e.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string tree_hash(const fs::path& p) {
  if (fs::is_regular_file(p)) return sha256_file(p);
  if (!fs::is_directory(p)) throw Error("missing input " + p.string());
  std::string listing;
  for (const auto& [rel, sha] : file_hashes(p, false)) listing += rel + " " + sha + "\n";
  return sha256_hex(listing);
}

/// One subcommand invocation: resolved config, inputs, and the output
/// directory it owns.
class Stage {
 public:
  Stage(std::string command, const Common& c, std::vector<std::string> argv)
      : command_(std::move(command)), common_(c), argv_(std::move(argv)), start_(std::chrono::steady_clock::now()) {
    if (!c.config.empty()) kv_ = KeyValueConfig::load(c.config);
    kv_.apply_env(all_config_keys());
    kv_.require_known(all_config_keys());
    if (c.jobs > 0) set_worker_count(c.jobs);
    out_ = c.out;
    if (fs::exists(out_)) {
      if (!fs::is_directory(out_)) throw Error("output path " + out_.string() + " is not a directory");
      if (!fs::is_empty(out_) && !fs::exists(out_ / kStageFile))
        throw Error("refusing to overwrite " + out_.string() + ": not a pivotkit output directory");
      fs::remove_all(out_);
    }
    fs::create_directories(out_);
  }

  const KeyValueConfig& kv() const { return kv_; }
  std::uint64_t seed() const { return common_.seed; }
  const fs::path& out() const { return out_; }

  void arg(const std::string& key, json value) { args_[key] = std::move(value); }
  void input(const std::string& role, const fs::path& p) {
    inputs_.push_back({{"role", role}, {"path", p.generic_string()}, {"sha256", tree_hash(p)}});
  }
  void used_config(const KeyValueConfig& c) {
    for (const auto& [k, v] : c.values()) config_.set(k, v);
  }

  void finish(std::ostream& log) {
    json outputs = json::array();
    for (const auto& [rel, sha] : file_hashes(out_, true)) outputs.push_back({{"path", rel}, {"sha256", sha}});
    const std::string canon = config_.canonical();
    json rec = {{"format", kFormat},
                {"command", command_},
                {"seed", common_.seed},
                {"args", args_},
                {"config", config_.values()},
                {"config_sha256", sha256_hex(canon)},
                {"inputs", inputs_},
                {"outputs", outputs}};
    {
      std::ofstream f(out_ / kStageFile, std::ios::binary);
      f << rec.dump(1) << '\n';
      if (!f) throw Error("failed to write " + (out_ / kStageFile).string());
    }
    if (!common_.manifest.empty()) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      json m = {{"command", command_},
                {"argv", argv_},
                {"seed", common_.seed},
                {"config_sha256", sha256_hex(canon)},
                {"inputs", inputs_},
                {"output", {{"path", out_.generic_string()}, {"sha256", tree_hash(out_)}}},
                {"wall_seconds", wall}};
      if (!fs::path(common_.manifest).parent_path().empty())
        fs::create_directories(fs::path(common_.manifest).parent_path());
      std::ofstream f(common_.manifest, std::ios::binary | std::ios::app);
      f << m.dump() << '\n';
      if (!f) throw Error("failed to append to manifest " + common_.manifest);
    }
    log << command_ << ": wrote " << out_.generic_string() << '\n';
  }

 private:
  std::string command_;
  Common common_;
  std::vector<std::string> argv_;
  std::chrono::steady_clock::time_point start_;
  KeyValueConfig kv_;
  KeyValueConfig config_;
  json args_ = json::object();
  json inputs_ = json::array();
  fs::path out_;
};

World load_input_world(Stage& st, const std::string& dir) {
  if (dir.empty() || !fs::exists(fs::path(dir) / "manifest.json")) throw Error("missing world at '" + dir + "'");
  st.input("world", dir);
  return load_world(dir);
}

fs::path checkpoint_of(const fs::path& p) {
  if (checkpoint_exists(p / "model")) return p / "model";
  if (checkpoint_exists(p)) return p;
  return {};
}

/// Loads a stage output's model; `want` names the stage that must have
/// written it (empty: any).
TriModel load_input_model(Stage& st, const std::string& role, const std::string& dir, const std::string& want) {
  const fs::path ckpt = dir.empty() ? fs::path() : checkpoint_of(dir);
  if (ckpt.empty()) throw Error("missing " + (want.empty() ? std::string("model") : want) + " checkpoint at '" + dir + "'");
  TriModel m = load_checkpoint(ckpt);
  if (!want.empty() && m.stage != want)
    throw Error("missing " + want + " checkpoint: '" + dir + "' holds a " + m.stage + " checkpoint");
  st.input(role, ckpt);
  return m;
}

TowerShape shape_of(const TriModel& m) {
  if (!m.image || !m.text) throw Error("model has no image or text tower");
  const EncoderConfig& c = m.image->config();
  TowerShape s;
  s.width = c.width;
  s.layers = c.layers;
  s.heads = c.heads;
  s.embed_dim = c.embed_dim;
  s.patch = c.patch.kernel_h;
  s.max_tokens = m.text->config().max_tokens;
  return s;
}

StageConfig training_config(Stage& st, StageKind kind, const std::string& resume) {
  const KeyValueConfig scoped = scoped_stage_config(st.kv(), kind);
  StageConfig cfg = stage_config_from(scoped, kind, derive_seed(st.seed(), stage_name(kind)));
  st.used_config(scoped);
  cfg.checkpoint_dir = st.out() / "checkpoints";
  cfg.log_path = st.out() / "train.jsonl";
  if (!resume.empty()) {
    const fs::path ckpt = checkpoint_of(resume);
    if (ckpt.empty()) throw Error("missing resume checkpoint at '" + resume + "'");
    cfg.resume_from = ckpt;
  }
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path, std::ios::binary);
  f << j.dump(1) << '\n';
  if (!f) throw Error("failed to write " + path.string());
}

json epochs_json(const StageResult& r) {
  json a = json::array();
  for (const auto& e : r.epochs) a.push_back({{"epoch", e.epoch}, {"steps", e.steps}, {"mean_loss", e.mean_loss}, {"tau", e.tau}});
  return a;
}

void finish_training(Stage& st, const TriModel& model, const StageResult& r, std::ostream& out) {
  save_checkpoint(st.out() / "model", model);
  write_json(st.out() / "epochs.json", epochs_json(r));
  if (!r.epochs.empty()) out << "final loss " << fmt(r.epochs.back().mean_loss) << '\n';
}

std::vector<ImageTensor> eval_features(const World& w, const TriModel& m) {
  if (!m.audio || !m.audio_stats) throw Error("model has no trained audio tower");
  return audio_features(w, w.eval, *m.audio_stats);
}

std::string labels_text(const std::vector<int>& labels) {
  std::string s;
  for (std::size_t i = 0; i < labels.size(); ++i) s += (i ? ";" : "") + std::to_string(labels[i]);
  return s;
}

// ---- subcommands ----------------------------------------------------------

struct Args {
  std::string world, vt, va, model, pairs, resume, strategy = "mined", pool = "in-domain", prompt = kAudioPrompt,
                                                  label, ladder;
  int per_class = 8, top_m = 1;
  std::size_t fewshot = 0;
  bool shifted = false;
  double target = -1.0;
  std::vector<int> ks = {1, 2, 4, 8, 16};
  std::vector<std::string> inputs;
  std::string verify_manifest;
};

void gen_world(Stage& st, const Args&, std::ostream& out) {
  const WorldConfig cfg = world_config_from(st.kv(), st.seed());
  st.used_config(st.kv().subset(world_config_keys()));
  const World w = generate_world(cfg);
  save_world(w, st.out());
  out << "classes " << w.classes.size() << ", centroid oracle " << fmt(100.0 * w.centroid_oracle_accuracy) << "%\n";
}

void pretrain_vt(Stage& st, const Args& a, std::ostream& out) {
  const World w = load_input_world(st, a.world);
  const TowerShape shape = tower_shape_from(st.kv());
  st.used_config(st.kv().subset(tower_config_keys()));
  TriModel model = init_model(w, derive_seed(st.seed(), "init"), shape);
  const StageConfig cfg = training_config(st, StageKind::kVT, a.resume);
  const StageResult r = run_stage(cfg, vt_stage_data(w), model);
  finish_training(st, model, r, out);
}

void pretrain_va(Stage& st, const Args& a, std::ostream& out) {
  const World w = load_input_world(st, a.world);
  TriModel model = load_input_model(st, "vt", a.vt, "VT");
  const CorpusStats stats = audio_corpus_stats(w);
  model.audio_stats = stats;
  const std::vector<ImageTensor> feats = audio_features(w, w.va, stats);
  init_audio_tower(model, w.config, shape_of(model));
  const StageConfig cfg = training_config(st, StageKind::kVA, a.resume);
  const StageData data = cfg.bibi ? bibi_stage_data(w, feats) : va_stage_data(w, feats);
  const StageResult r = run_stage(cfg, data, model);
  finish_training(st, model, r, out);
}

void curate(Stage& st, const Args& a, std::ostream& out) {
  const World w = load_input_world(st, a.world);
  st.arg("strategy", a.strategy);
  std::vector<AlignmentPair> pairs;
  const Provenance kind = parse_provenance(a.strategy);
  if (kind == Provenance::kGoldCaption || kind == Provenance::kGoldLabel) {
    pairs = gold_pairs(w, kind == Provenance::kGoldCaption ? GoldMode::kCaption : GoldMode::kLabel);
  } else {
    st.arg("pool", a.pool);
    st.arg("per_class", a.per_class);
    st.arg("prompt", a.prompt);
    const CaptionPool pool =
        build_pool(w, parse_pool_source(a.pool), a.per_class, derive_seed(st.seed(), "pool"), kImagePrompt);
    if (kind == Provenance::kMined) {
      TriModel m = load_input_model(st, "model", a.model, "");
      if (!m.image || !m.text) throw Error("mining needs a model with image and text towers");
      m.image->set_frozen(true);
      m.text->set_frozen(true);
      st.arg("top_m", a.top_m);
      pairs = mine_pairs(w.va, *m.image, *m.text, pool, a.top_m);
    } else {
      std::vector<std::string> ids;
      for (const auto& r : w.va) ids.push_back(r.id);
      Rng rng = Rng::stream(st.seed(), "random-pairs");
      pairs = random_pairs(ids, pool, rng);
    }
  }
  if (a.fewshot > 0) {
    st.arg("fewshot", a.fewshot);
    if (a.fewshot > pairs.size())
      throw Error("fewshot: " + std::to_string(a.fewshot) + " pairs requested, " + std::to_string(pairs.size()) +
                  " available");
    pairs = fewshot_subset(pairs, a.fewshot, derive_seed(st.seed(), "fewshot"));
  }
  write_pairs(st.out() / "pairs.jsonl", pairs);

  const CorpusStats stats = audio_corpus_stats(w);
  const auto& gold = w.at_gold(StageKind::kAT);
  const auto va_feats = audio_features(w, w.va, stats);
  const auto gold_feats = audio_features(w, gold, stats);
  AudioIndex index;
  index.add(w.va, va_feats);
  index.add(gold, gold_feats);
  const double match = class_match_rate(w, index, pairs);
  write_json(st.out() / "summary.json",
             {{"strategy", a.strategy}, {"pairs", pairs.size()}, {"class_match_rate", match}});
  out << pairs.size() << " pairs, class match " << fmt(match) << '\n';
}

void finetune_at(Stage& st, const Args& a, std::ostream& out) {
  const fs::path va = a.va.empty() ? fs::path() : checkpoint_of(a.va);
  if (va.empty()) throw Error("missing VA checkpoint at '" + a.va + "'; run pretrain-va first");
  const World w = load_input_world(st, a.world);
  TriModel model = load_input_model(st, "va", a.va, "VA");
  if (!model.audio_stats) throw Error("VA checkpoint has no spectrogram statistics");
  fs::path pairs_path = a.pairs;
  if (fs::is_directory(pairs_path)) pairs_path /= "pairs.jsonl";
  if (!fs::exists(pairs_path)) throw Error("missing pairs file '" + pairs_path.string() + "'");
  st.input("pairs", pairs_path);
  const std::vector<AlignmentPair> pairs = read_pairs(pairs_path);

  const auto& gold = w.at_gold(StageKind::kAT);
  const auto va_feats = audio_features(w, w.va, *model.audio_stats);
  const auto gold_feats = audio_features(w, gold, *model.audio_stats);
  AudioIndex index;
  index.add(w.va, va_feats);
  index.add(gold, gold_feats);
  for (const auto& p : pairs)
    if (!index.contains(p.audio_id)) throw Error("pair references unknown audio '" + p.audio_id + "'");

  model.image->set_frozen(true);
  model.text->set_frozen(true);
  const StageConfig cfg = training_config(st, StageKind::kAT, a.resume);
  const StageResult r = run_stage(cfg, at_stage_data(pairs, index), model);
  finish_training(st, model, r, out);
}

std::string config_label(const Args& a, const TriModel& m) { return a.label.empty() ? m.stage : a.label; }

void add_recall(EvalReport& rep, const std::string& table, const std::string& cfg, const std::string& name,
                const RetrievalResult& r) {
  for (int k : {1, 10}) rep.add(table, cfg, name + "_r" + std::to_string(k), 100.0 * r.recall_at(k));
}

void eval_retrieval(Stage& st, const Args& a, std::ostream& out) {
  const World w = load_input_world(st, a.world);
  const TriModel m = load_input_model(st, "model", a.model, "");
  const std::string cfg = config_label(a, m);
  st.arg("label", cfg);
  EvalReport rep;
  rep.name = "retrieval";
  const PairRetrieval vt = vt_retrieval(m, w.eval);
  add_recall(rep, "retrieval", cfg, "vt_i2t", vt.forward);
  add_recall(rep, "retrieval", cfg, "vt_t2i", vt.backward);
  if (m.audio) {
    const MatF audio = embed_audio(*m.audio, eval_features(w, m));
    const PairRetrieval va = va_retrieval(m, audio, w.eval);
    add_recall(rep, "retrieval", cfg, "va_i2a", va.forward);
    add_recall(rep, "retrieval", cfg, "va_a2i", va.backward);
    const TaskMetrics at = audio_text_metrics(w, m, audio, w.eval, a.prompt);
    add_recall(rep, "retrieval", cfg, "at_a2t", at.a2t);
    add_recall(rep, "retrieval", cfg, "at_t2a", at.t2a);
  }
  rep.write(st.out() / kReportFile);
  for (const auto& r : rep.rows) out << r.metric << " " << fmt(r.value) << '\n';
}

void eval_zeroshot(Stage& st, const Args& a, std::ostream& out) {
  const World w = load_input_world(st, a.world);
  const TriModel m = load_input_model(st, "model", a.model, "");
  const std::string cfg = config_label(a, m);
  st.arg("label", cfg);
  st.arg("prompt", a.prompt);
  EvalReport rep;
  rep.name = "zeroshot";
  const MatF audio = embed_audio(*m.audio, eval_features(w, m));
  const TaskMetrics t = audio_text_metrics(w, m, audio, w.eval, a.prompt);
  rep.add("zeroshot", cfg, "accuracy", t.zero_shot);
  rep.add("zeroshot", cfg, "chance", 100.0 / w.config.num_classes);
  add_recall(rep, "zeroshot", cfg, "a2t", t.a2t);
  if (a.shifted) {
    st.arg("shifted", true);
    const World s = domain_shifted(w.config);
    const auto feats = audio_features(s, s.eval, *m.audio_stats);
    const Encoder resized = m.audio->resized_for_input(feats.front().height, feats.front().width);
    rep.add("zeroshot", cfg, "shifted_accuracy", zero_shot_accuracy(w, m, embed_audio(resized, feats), s.eval, a.prompt));
  }
  rep.write(st.out() / kReportFile);
  for (const auto& r : rep.rows) out << r.metric << " " << fmt(r.value) << '\n';
}

void eval_map(Stage& st, const Args& a, std::ostream& out) {
  const World w = load_input_world(st, a.world);
  const TriModel m = load_input_model(st, "model", a.model, "");
  const std::string cfg = config_label(a, m);
  st.arg("label", cfg);
  st.arg("prompt", a.prompt);
  const MatF audio = embed_audio(*m.audio, eval_features(w, m));
  std::vector<std::vector<int>> gold;
  for (const auto& r : w.eval) gold.push_back(r.labels);
  const MapResult res = mean_average_precision(zero_shot_scores(w, m, audio, a.prompt), gold);
  EvalReport rep;
  rep.name = "map";
  rep.add("map", cfg, "map", 100.0 * res.value);
  rep.add("map", cfg, "excluded_classes", static_cast<double>(res.excluded.size()));
  for (std::size_t c = 0; c < res.per_class.size(); ++c)
    if (!std::isnan(res.per_class[c])) rep.add("map_per_class", cfg, w.classes[c].name, 100.0 * res.per_class[c]);
  rep.write(st.out() / kReportFile);
  out << "map " << fmt(100.0 * res.value) << '\n';
}

void probe(Stage& st, const Args& a, std::ostream& out) {
  const World w = load_input_world(st, a.world);
  const TriModel m = load_input_model(st, "model", a.model, "");
  const std::string cfg = config_label(a, m);
  st.arg("label", cfg);
  st.arg("k", a.ks);
  const MatF audio = embed_audio(*m.audio, eval_features(w, m));
  EvalReport rep;
  rep.name = "pivotability";
  std::ostringstream per_audio, categories;
  per_audio << "audio_id,labels,k,value,retrieved_gold,pivotable\n";
  categories << "label,k,count,mean_pivotability,pivotable_fraction\n";
  for (int k : a.ks) {
    const auto scores = probe_pivotability(m, audio, w.eval, k);
    std::map<int, std::pair<double, int>> by_label;
    std::map<int, int> count;
    double sum = 0.0;
    int piv = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const auto& s = scores[i];
      per_audio << s.audio_id << ',' << labels_text(w.eval[i].labels) << ',' << k << ',' << fmt(s.value) << ','
                << s.retrieved_gold << ',' << (pivotable(s) ? 1 : 0) << '\n';
      sum += s.value;
      piv += pivotable(s);
      for (int l : w.eval[i].labels) {
        by_label[l].first += s.value;
        by_label[l].second += pivotable(s);
        ++count[l];
      }
    }
    for (const auto& [l, v] : by_label)
      categories << w.classes[l].name << ',' << k << ',' << count[l] << ',' << fmt(v.first / count[l]) << ','
                 << fmt(static_cast<double>(v.second) / count[l]) << '\n';
    const double n = static_cast<double>(scores.size());
    rep.add("pivotability", cfg, "mean_k" + std::to_string(k), sum / n);
    rep.add("pivotability", cfg, "pivotable_fraction_k" + std::to_string(k), piv / n);
    out << "k=" << k << " mean " << fmt(sum / n) << " pivotable " << fmt(piv / n) << '\n';
  }
  binio::write_file(st.out() / "pivotability.csv", per_audio.str());
  binio::write_file(st.out() / "categories.csv", categories.str());
  rep.write(st.out() / kReportFile);
}

std::vector<ScalingPoint> read_ladder(const fs::path& path) {
  std::istringstream in(binio::read_file(path));
  std::string line;
  std::vector<ScalingPoint> pts;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("count", 0) == 0)) continue;
    const auto comma = line.find(',');
    char* e1 = nullptr;
    char* e2 = nullptr;
    ScalingPoint p;
    if (comma != std::string::npos) {
      const std::string a = line.substr(0, comma), b = line.substr(comma + 1);
      p.count = std::strtod(a.c_str(), &e1);
      p.metric = std::strtod(b.c_str(), &e2);
      if (!a.empty() && !b.empty() && *e1 == '\0' && *e2 == '\0') {
        pts.push_back(p);
        continue;
      }
    }
    throw Error(path.string() + ":" + std::to_string(lineno) + ": expected 'count,metric'");
  }
  return pts;
}

void fit_scaling_cmd(Stage& st, const Args& a, std::ostream& out) {
  if (a.ladder.empty()) throw Error("fit-scaling needs --ladder");
  st.input("ladder", a.ladder);
  const auto pts = read_ladder(a.ladder);
  const ScalingFit f = fit_scaling(pts, a.target);
  st.arg("target", a.target);
  const std::string cfg = a.label.empty() ? "ladder" : a.label;
  EvalReport rep;
  rep.name = "scaling";
  std::ostringstream csv;
  csv << "count,log2_count,metric,fitted,residual\n";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double x = std::log2(pts[i].count);
    csv << fmt(pts[i].count) << ',' << fmt(x) << ',' << fmt(pts[i].metric) << ',' << fmt(f.intercept + f.slope * x)
        << ',' << fmt(f.residuals[i]) << '\n';
    rep.add("scaling", cfg + "@" + fmt(pts[i].count), "metric", pts[i].metric);
  }
  rep.add("scaling_fit", cfg, "slope", f.slope);
  rep.add("scaling_fit", cfg, "intercept", f.intercept);
  rep.add("scaling_fit", cfg, "r2", f.r2);
  rep.add("scaling_fit", cfg, "target_metric", f.target_metric);
  rep.add("scaling_fit", cfg, "extrapolated_log2", f.extrapolated_log2);
  rep.add("scaling_fit", cfg, "extrapolated_count", f.extrapolated_count);
  binio::write_file(st.out() / "ladder.csv", csv.str());
  rep.write(st.out() / kReportFile);
  out << "slope " << fmt(f.slope) << " r2 " << fmt(f.r2) << " log2(n) at target " << fmt(f.extrapolated_log2) << '\n';
}

/// Every output in the manifest must exist with the recorded hash.
std::vector<std::string> verified_outputs(const fs::path& manifest) {
  std::istringstream in(binio::read_file(manifest));
  std::string line;
  std::vector<std::string> dirs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    const std::string path = rec.at("output").at("path");
    if (!fs::exists(path)) throw Error("manifest: artifact " + path + " no longer exists");
    if (tree_hash(path) != rec["output"].at("sha256").get<std::string>())
      throw Error("manifest: content hash of " + path + " does not match the record");
    if (std::find(dirs.begin(), dirs.end(), path) == dirs.end()) dirs.push_back(path);
  }
  return dirs;
}

void report(Stage& st, const Args& a, std::ostream& out) {
  std::vector<std::string> dirs = a.inputs;
  if (!a.verify_manifest.empty()) {
    st.input("manifest", a.verify_manifest);
    for (const auto& d : verified_outputs(a.verify_manifest))
      if (std::find(dirs.begin(), dirs.end(), d) == dirs.end()) dirs.push_back(d);
  }
  std::map<std::string, std::vector<MetricRow>> tables;
  std::map<std::string, std::string> extras;  // bundle name -> source file
  json sources = json::array();
  for (const auto& d : dirs) {
    const fs::path rp = fs::path(d) / kReportFile;
    if (!fs::exists(rp)) continue;
    st.input("report", rp);
    sources.push_back({{"path", fs::path(d).generic_string()}, {"sha256", sha256_file(rp)}});
    const EvalReport r = EvalReport::read(rp);
    for (const auto& row : r.rows) tables[row.table].push_back(row);
    for (const char* extra : {"categories.csv", "ladder.csv"}) {
      if (!fs::exists(fs::path(d) / extra)) continue;
      std::string name = fs::path(extra).stem().string() + "-" + std::to_string(sources.size()) + ".csv";
      extras[name] = (fs::path(d) / extra).string();
    }
  }
  if (tables.empty()) throw Error("report: no EvalReport among the inputs");
  json index = {{"tables", json::array()}, {"files", json::array()}, {"sources", sources}};
  for (const auto& [table, rows] : tables) {
    EvalReport t;
    t.name = table;
    t.rows = rows;
    const std::string file = table + ".csv";
    binio::write_file(st.out() / file, t.to_csv());
    index["tables"].push_back({{"name", table}, {"file", file}, {"rows", rows.size()}});
  }
  for (const auto& [name, src] : extras) {
    fs::copy_file(src, st.out() / name);
    index["files"].push_back(name);
  }
  write_json(st.out() / "index.json", index);
  out << tables.size() << " tables from " << sources.size() << " reports\n";
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"pivotkit: tri-modal alignment through a frozen image pivot", "pivotkit"};
  app.require_subcommand(1);
  Common common;
  Args a;
  using Fn = void (*)(Stage&, const Args&, std::ostream&);
  std::vector<std::pair<CLI::App*, Fn>> commands;
  auto sub = [&](const char* name, const char* desc, Fn fn) {
    CLI::App* s = app.add_subcommand(name, desc);
    add_common(s, common);
    commands.emplace_back(s, fn);
    return s;
  };

  sub("gen-world", "generate a synthetic tri-modal world", gen_world);
  auto* vt = sub("pretrain-vt", "train the image and text towers", pretrain_vt);
  vt->add_option("--world", a.world, "world directory")->required();
  vt->add_option("--resume", a.resume, "epoch checkpoint of an interrupted run");
  auto* va = sub("pretrain-va", "train the audio tower against the frozen image tower", pretrain_va);
  va->add_option("--world", a.world, "world directory")->required();
  va->add_option("--vt", a.vt, "pretrain-vt output")->required();
  va->add_option("--resume", a.resume, "epoch checkpoint of an interrupted run");
  auto* cu = sub("curate", "build audio-caption pairs", curate);
  cu->add_option("--world", a.world, "world directory")->required();
  cu->add_option("--strategy", a.strategy, "gold-caption, gold-label, mined or random")
      ->check(CLI::IsMember({"gold-caption", "gold-label", "mined", "random"}));
  cu->add_option("--model", a.model, "model with image and text towers (mined)");
  cu->add_option("--pool", a.pool, "caption pool: in-domain, template or shifted")
      ->check(CLI::IsMember({"in-domain", "template", "shifted"}));
  cu->add_option("--per-class", a.per_class, "template and shifted pool captions per class")
      ->check(CLI::PositiveNumber);
  cu->add_option("--top-m", a.top_m, "captions kept per clip when mining")->check(CLI::PositiveNumber);
  cu->add_option("--fewshot", a.fewshot, "keep a nested subset of this many pairs");
  auto* at = sub("finetune-at", "train the audio tower on curated pairs", finetune_at);
  at->add_option("--world", a.world, "world directory")->required();
  at->add_option("--va", a.va, "pretrain-va output")->required();
  at->add_option("--pairs", a.pairs, "curate output or pairs file")->required();
  at->add_option("--resume", a.resume, "epoch checkpoint of an interrupted run");
  for (auto [name, desc, fn] : {std::tuple{"eval-retrieval", "R@k for every modality pair", &eval_retrieval},
                                std::tuple{"eval-zeroshot", "prompted zero-shot classification", &eval_zeroshot},
                                std::tuple{"eval-map", "multi-label mAP", &eval_map},
                                std::tuple{"probe-pivotability", "audio->image->caption probe", &probe}}) {
    auto* e = sub(name, desc, fn);
    e->add_option("--world", a.world, "world directory")->required();
    e->add_option("--model", a.model, "any training stage output")->required();
    e->add_option("--label", a.label, "config column in the report (default: the model's stage)");
    if (std::string(name) != "probe-pivotability") e->add_option("--prompt", a.prompt, "label prompt");
    if (std::string(name) == "eval-zeroshot") e->add_flag("--shifted", a.shifted, "also score a domain-shifted eval set");
    if (std::string(name) == "probe-pivotability")
      e->add_option("--k", a.ks, "images retrieved per audio")->delimiter(',')->check(CLI::PositiveNumber);
  }
  auto* fs_ = sub("fit-scaling", "fit metric against log2(pairs) and extrapolate", fit_scaling_cmd);
  fs_->add_option("--ladder", a.ladder, "CSV of count,metric rows")->required()->check(CLI::ExistingFile);
  fs_->add_option("--target", a.target, "metric to extrapolate to")->required();
  fs_->add_option("--label", a.label, "config column in the report");
  auto* rp = sub("report", "bundle EvalReports into CSV tables with a JSON index", report);
  rp->add_option("--inputs", a.inputs, "stage output directories");
  rp->add_option("--from-manifest", a.verify_manifest, "verify a manifest and include its outputs")
      ->check(CLI::ExistingFile);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  try {
    for (auto& [s, fn] : commands) {
      if (!s->parsed()) continue;
      Stage st(s->get_name(), common, args);
      fn(st, a, out);
      st.finish(out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace pivotkit
