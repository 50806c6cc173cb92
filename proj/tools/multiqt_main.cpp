// Command-line front end wiring the library into reproducible experiments:
// dataset generation, training, evaluation, chunked streaming, throughput
// benchmarks, the modality-permutation grid, and artifact inspection.
//
// Every artifact-producing command writes a manifest.json into a run
// directory addressed by the hash of its effective configuration (so changed
// settings land in a fresh directory and reruns land in the same one). The
// run root comes from $MQT_RUN_ROOT, default ./runs.
//
// Exit codes: 0 success, 1 runtime failure (missing files, bad data, config
// file errors), 2 command-line usage errors.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mqt/metrics.hpp"
#include "mqt/model.hpp"
#include "mqt/serialize.hpp"
#include "mqt/stream.hpp"
#include "mqt/synthdata.hpp"
#include "mqt/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mqt;

namespace {

// ---------------------------------------------------------------------------
// formatting helpers

std::string hex64(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// ---------------------------------------------------------------------------
// config files: `key = value` per line, # comments, keys = long flag names

struct ConfigEntry {
  std::string key, value;
  int line = 0;
};

std::string strip(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<ConfigEntry> parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MqtError("cannot open config file " + path);
  std::vector<ConfigEntry> entries;
  std::string raw;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    std::string s = raw;
    size_t hash = s.find('#');
    if (hash != std::string::npos) s.erase(hash);
    s = strip(s);
    if (s.empty()) continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw MqtError(path + " line " + std::to_string(line) + ": expected key = value, got '" +
                     strip(raw) + "'");
    ConfigEntry e;
    e.key = strip(s.substr(0, eq));
    e.value = strip(s.substr(eq + 1));
    e.line = line;
    if (e.key.empty())
      throw MqtError(path + " line " + std::to_string(line) + ": missing key before '='");
    if (e.value.size() >= 2 && e.value.front() == '"' && e.value.back() == '"')
      e.value = e.value.substr(1, e.value.size() - 2);
    entries.push_back(std::move(e));
  }
  return entries;
}

// ---------------------------------------------------------------------------
// run directories and manifests

using Snapshot = std::map<std::string, std::string>;

std::string run_root() {
  const char* e = std::getenv("MQT_RUN_ROOT");
  return e && *e ? std::string(e) : std::string("runs");
}

// <root>/<command>-<hash of the effective configuration>
std::string make_run_dir(const std::string& command, const Snapshot& snap) {
  std::string canon = command + "\n";
  for (const auto& [k, v] : snap) canon += k + "=" + v + "\n";
  fs::path dir = fs::path(run_root()) / (command + "-" + hex64(fnv1a64_str(canon)));
  fs::create_directories(dir);
  return dir.string();
}

struct WallTimer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

struct RunManifest {
  std::string command;
  Snapshot config;
  uint64_t seed = 0;
  std::string dataset_hash;     // empty when the command touches no dataset
  std::string checkpoint_hash;  // empty when the command touches no checkpoint
  json metrics = json::object();
  double wall_seconds = 0;

  void write(const std::string& dir) const {
    json j;
    j["command"] = command;
    json cfg = json::object();
    for (const auto& [k, v] : config) cfg[k] = v;
    j["config"] = cfg;
    j["seed"] = seed;
    j["dataset_hash"] = dataset_hash.empty() ? json() : json(dataset_hash);
    j["checkpoint_hash"] = checkpoint_hash.empty() ? json() : json(checkpoint_hash);
    j["metrics"] = metrics;
    j["wall_seconds"] = wall_seconds;
    std::ofstream os(dir + "/manifest.json", std::ios::trunc);
    if (!os) throw MqtError("cannot write " + dir + "/manifest.json");
    os << j.dump(2) << "\n";
  }
};

uint64_t combine_hash(uint64_t h, uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Hash of the manifest plus every call file it lists, in manifest order.
std::string dataset_hash(const std::string& dir) {
  const std::string man = (fs::path(dir) / "manifest.txt").string();
  if (!fs::exists(man)) throw MqtError("no such dataset: " + dir + " (missing manifest.txt)");
  uint64_t h = file_fnv1a(man);
  std::ifstream is(man);
  std::string header;
  std::getline(is, header);
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;
    h = combine_hash(h, file_fnv1a((fs::path(dir) / name).string()));
  }
  return hex64(h);
}

StoredDataset load_dataset_checked(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "manifest.txt"))
    throw MqtError("no such dataset: " + dir + " (missing manifest.txt)");
  return read_dataset(dir);
}

ModelParams load_checkpoint_checked(const std::string& path) {
  if (!fs::exists(path)) throw MqtError("no such file: " + path);
  return load_checkpoint(path);
}

// ---------------------------------------------------------------------------
// report plumbing

json prf_json(const PrfReport& r) {
  json per = json::array();
  for (const ClassPrf& c : r.per_class)
    per.push_back({{"label", c.label},
                   {"precision", c.precision},
                   {"recall", c.recall},
                   {"f1", c.f1},
                   {"tp", c.tp},
                   {"fp", c.fp},
                   {"fn", c.fn},
                   {"vacuous", c.vacuous}});
  return {{"per_class", per},   {"macro_p", r.macro_p}, {"macro_r", r.macro_r},
          {"macro_f1", r.macro_f1}, {"micro_p", r.micro_p}, {"micro_r", r.micro_r},
          {"micro_f1", r.micro_f1}, {"units", r.units}};
}

json confusion_json(const Confusion& c) {
  json rows = json::array();
  for (int g = 0; g < c.k; ++g) {
    json row = json::array();
    for (int p = 0; p < c.k; ++p) row.push_back(c.at(g, p));
    rows.push_back(row);
  }
  return {{"k", c.k},
          {"counts", rows},
          {"total", c.total},
          {"errors", c.errors},
          {"question_confusion_share", c.question_confusion_share()}};
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw MqtError("cannot write " + path);
  os << text;
}

// ---------------------------------------------------------------------------
// shared option blocks

struct GenOpts {
  std::string out;
  GenConfig g;
  std::string bank = "questions";
  int folds = 5;
  int threads = 0;
};

void add_gen_flags(CLI::App* c, GenOpts& o) {
  c->add_option("--out", o.out, "output dataset directory")->required();
  c->add_option("--n", o.g.n_calls, "number of calls");
  c->add_option("--seed", o.g.seed, "master seed");
  c->add_option("--bank", o.bank, "script vocabulary")
      ->check(CLI::IsMember({"questions", "symptoms"}));
  c->add_option("--duration-mean", o.g.duration_mean_s, "call length mean, seconds");
  c->add_option("--duration-std", o.g.duration_std_s, "call length std");
  c->add_option("--duration-min", o.g.duration_min_s, "call length floor");
  c->add_option("--duration-max", o.g.duration_max_s, "call length ceiling");
  c->add_option("--question-min", o.g.question_min_s, "planted segment min length");
  c->add_option("--question-max", o.g.question_max_s, "planted segment max length");
  c->add_option("--occupancy", o.g.question_occupancy, "fraction of audio inside segments");
  c->add_option("--sigma", o.g.sigma, "audio noise level");
  c->add_option("--corruption", o.g.corruption, "per-character text corruption rate");
  c->add_option("--folds", o.folds, "cross-validation folds");
  c->add_option("--threads", o.threads, "worker threads, 0 = all cores");
}

Snapshot gen_snapshot(const GenOpts& o) {
  return {{"out", o.out},
          {"n", std::to_string(o.g.n_calls)},
          {"seed", std::to_string(o.g.seed)},
          {"bank", o.bank},
          {"duration-mean", fmt_g(o.g.duration_mean_s)},
          {"duration-std", fmt_g(o.g.duration_std_s)},
          {"duration-min", fmt_g(o.g.duration_min_s)},
          {"duration-max", fmt_g(o.g.duration_max_s)},
          {"question-min", fmt_g(o.g.question_min_s)},
          {"question-max", fmt_g(o.g.question_max_s)},
          {"occupancy", fmt_g(o.g.question_occupancy)},
          {"sigma", fmt_g(o.g.sigma)},
          {"corruption", fmt_g(o.g.corruption)},
          {"folds", std::to_string(o.folds)}};
}

struct TrainOpts {
  std::string data;
  int val_fold = 0;  // -1 trains on every call with no validation
  std::string modality = "both";
  std::string fusion = "concat";
  double multitask_beta = 0;  // 0 disables the auxiliary binary head
  int epochs = 30;
  int batch_size = 6;
  double lr = 1e-4;
  double l2 = 0.1;
  double pa = 0.1, ps = 0.5;
  bool permute_train = false;
  std::vector<int> audio_channels{64, 128, 128};
  std::vector<int> text_channels{128, 128};
  int trunk_units = 256;
  int trunk_layers = 3;
  double dropout_conv = 0.2, dropout_trunk = 0.4;
  uint64_t seed = 1;
  int threads = 0;
};

void add_train_flags(CLI::App* c, TrainOpts& o, bool with_permute_switch) {
  c->add_option("--data", o.data, "dataset directory")->required();
  c->add_option("--val-fold", o.val_fold, "held-out fold, -1 = none");
  c->add_option("--modality", o.modality)->check(CLI::IsMember({"audio", "text", "both"}));
  c->add_option("--fusion", o.fusion)->check(CLI::IsMember({"concat", "tensor"}));
  c->add_option("--multitask-beta", o.multitask_beta,
                "binary-head loss weight, 0 = single task");
  c->add_option("--epochs", o.epochs);
  c->add_option("--batch-size", o.batch_size);
  c->add_option("--lr", o.lr);
  c->add_option("--l2", o.l2);
  c->add_option("--pa", o.pa, "audio permutation probability");
  c->add_option("--ps", o.ps, "text permutation probability");
  if (with_permute_switch)
    c->add_flag("--permute-train", o.permute_train, "shuffle modality time axes while training");
  c->add_option("--audio-channels", o.audio_channels, "audio encoder widths")->delimiter(',');
  c->add_option("--text-channels", o.text_channels, "text encoder widths")->delimiter(',');
  c->add_option("--trunk-units", o.trunk_units);
  c->add_option("--trunk-layers", o.trunk_layers);
  c->add_option("--dropout-conv", o.dropout_conv);
  c->add_option("--dropout-trunk", o.dropout_trunk);
  c->add_option("--seed", o.seed, "master seed");
  c->add_option("--threads", o.threads, "worker threads, 0 = all cores");
}

Snapshot train_snapshot(const TrainOpts& o) {
  return {{"data", o.data},
          {"val-fold", std::to_string(o.val_fold)},
          {"modality", o.modality},
          {"fusion", o.fusion},
          {"multitask-beta", fmt_g(o.multitask_beta)},
          {"epochs", std::to_string(o.epochs)},
          {"batch-size", std::to_string(o.batch_size)},
          {"lr", fmt_g(o.lr)},
          {"l2", fmt_g(o.l2)},
          {"pa", fmt_g(o.pa)},
          {"ps", fmt_g(o.ps)},
          {"permute-train", o.permute_train ? "1" : "0"},
          {"audio-channels", join_ints(o.audio_channels)},
          {"text-channels", join_ints(o.text_channels)},
          {"trunk-units", std::to_string(o.trunk_units)},
          {"trunk-layers", std::to_string(o.trunk_layers)},
          {"dropout-conv", fmt_g(o.dropout_conv)},
          {"dropout-trunk", fmt_g(o.dropout_trunk)},
          {"seed", std::to_string(o.seed)}};
}

ModelConfig model_cfg_from(const TrainOpts& o) {
  ModelConfig m;
  m.modality = modality_from_string(o.modality);
  m.fusion = fusion_from_string(o.fusion);
  m.multitask = o.multitask_beta > 0;
  m.audio_channels = o.audio_channels;
  m.text_channels = o.text_channels;
  m.trunk_units = o.trunk_units;
  m.trunk_layers = o.trunk_layers;
  m.dropout_conv = static_cast<float>(o.dropout_conv);
  m.dropout_trunk = static_cast<float>(o.dropout_trunk);
  m.l2 = static_cast<float>(o.l2);
  m.init_seed = o.seed;
  m.validate();
  return m;
}

TrainConfig train_cfg_from(const TrainOpts& o, bool permute_on) {
  TrainConfig t;
  t.batch_size = o.batch_size;
  t.lr = o.lr;
  t.l2 = o.l2;
  t.multitask_beta = o.multitask_beta;
  t.p_a = o.pa;
  t.p_s = o.ps;
  t.permute_augment_on = permute_on;
  t.epochs = o.epochs;
  t.seed = o.seed;
  t.threads = o.threads;
  t.validate();
  return t;
}

struct SplitView {
  std::vector<TrainExample> train, val;
  std::vector<size_t> val_idx;
};

SplitView split_by_fold(const StoredDataset& ds, int val_fold) {
  SplitView sv;
  for (size_t i = 0; i < ds.calls.size(); ++i) {
    const SyntheticCall& c = ds.calls[i];
    TrainExample ex{&c.x_a, &c.x_s, &c.labels};
    if (val_fold >= 0 && ds.folds[i] == val_fold) {
      sv.val.push_back(ex);
      sv.val_idx.push_back(i);
    } else {
      sv.train.push_back(ex);
    }
  }
  if (val_fold >= 0 && sv.val.empty()) {
    int max_fold = 0;
    for (int f : ds.folds) max_fold = std::max(max_fold, f);
    throw MqtError("validation fold " + std::to_string(val_fold) +
                   " is empty (dataset has folds 0.." + std::to_string(max_fold) + ")");
  }
  if (sv.train.empty()) throw MqtError("no training calls left outside the validation fold");
  return sv;
}

// ---------------------------------------------------------------------------
// evaluation with optional test-time modality permutation

enum class PermuteMode { kNone, kAudio, kText };

PermuteMode permute_from_string(const std::string& s) {
  if (s == "none") return PermuteMode::kNone;
  if (s == "audio") return PermuteMode::kAudio;
  if (s == "text") return PermuteMode::kText;
  throw MqtError("unknown permute mode '" + s + "' (expected none|audio|text)");
}

struct EvalResult {
  PrfReport ts, inst;
  Confusion conf;
  size_t n_calls = 0;
};

EvalResult evaluate_subset(const ModelParams& params, const StoredDataset& ds,
                           const std::vector<size_t>& idx, PermuteMode pm, uint64_t seed,
                           int threads) {
  std::vector<Tensor> owned;
  owned.reserve(idx.size());
  std::vector<TrainExample> ex;
  std::vector<LabelSeq> gold;
  const Rng base(fnv1a64_str(pm == PermuteMode::kAudio ? "permute-audio" : "permute-text") ^
                 seed);
  for (size_t i : idx) {
    const SyntheticCall& c = ds.calls[i];
    TrainExample e{&c.x_a, &c.x_s, &c.labels};
    if (pm != PermuteMode::kNone) {
      Rng r = base.fork(i);
      owned.push_back(permute_time(pm == PermuteMode::kAudio ? c.x_a : c.x_s, r));
      (pm == PermuteMode::kAudio ? e.x_a : e.x_s) = &owned.back();
    }
    ex.push_back(e);
    gold.push_back(c.labels);
  }
  const std::vector<LabelSeq> pred = predict_dataset(params, ex, threads);
  EvalResult er;
  er.ts = timestep_prf(pred, gold, params.cfg.num_classes);
  er.inst = instance_prf(pred, gold, params.cfg.num_classes);
  er.conf = confusion(pred, gold, params.cfg.num_classes);
  er.n_calls = idx.size();
  return er;
}

std::string epoch_line(const EpochLog& e, bool with_val) {
  std::ostringstream os;
  os << "epoch=" << e.epoch << " train_ce=" << fmt_g(e.train_ce) << " l2=" << fmt_g(e.l2);
  if (with_val)
    os << " val_ce=" << fmt_g(e.val_ce) << " val_timestep_f1=" << fmt_g(e.val_timestep_f1)
       << " val_instance_f1=" << fmt_g(e.val_instance_f1);
  return os.str();
}

// ---------------------------------------------------------------------------
// commands

int cmd_gen(const GenOpts& o) {
  WallTimer timer;
  GenConfig g = o.g;
  g.bank = o.bank == "symptoms" ? ScriptBank::kSymptoms : ScriptBank::kQuestions;
  g.validate();
  const std::vector<SyntheticCall> calls = gen_dataset(g, o.threads);
  fs::create_directories(o.out);
  write_dataset(calls, o.out, o.folds);
  const std::string dh = dataset_hash(o.out);

  double audio_s = 0;
  int64_t questions = 0;
  for (const SyntheticCall& c : calls) {
    audio_s += c.t_a() / static_cast<double>(kAudioFps);
    questions += c.question_count();
  }
  const std::string dir = make_run_dir("gen", gen_snapshot(o));
  RunManifest m;
  m.command = "gen";
  m.config = gen_snapshot(o);
  m.seed = o.g.seed;
  m.dataset_hash = dh;
  m.metrics = {{"calls", calls.size()}, {"audio_seconds", audio_s}, {"segments", questions}};
  m.wall_seconds = timer.seconds();
  m.write(dir);

  std::printf("dataset %s calls=%zu segments=%lld hash=%s\n", o.out.c_str(), calls.size(),
              static_cast<long long>(questions), dh.c_str());
  std::printf("run %s\n", dir.c_str());
  return 0;
}

int cmd_train(const TrainOpts& o) {
  WallTimer timer;
  const StoredDataset ds = load_dataset_checked(o.data);
  const SplitView sv = split_by_fold(ds, o.val_fold);
  const ModelConfig mcfg = model_cfg_from(o);
  const TrainConfig tcfg = train_cfg_from(o, o.permute_train);

  const std::string dir = make_run_dir("train", train_snapshot(o));
  std::ofstream log(dir + "/train_log.txt", std::ios::trunc);
  const bool with_val = !sv.val.empty();
  const FitResult fr = fit(mcfg, tcfg, sv.train, sv.val, [&](const EpochLog& e) {
    const std::string line = epoch_line(e, with_val);
    log << line << std::endl;  // flush so the log is tailable mid-run
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
  });
  log.close();

  const std::string ckpt = dir + "/model.ckpt";
  save_checkpoint(fr.params, ckpt);
  const std::string ch = hex64(file_fnv1a(ckpt));

  RunManifest m;
  m.command = "train";
  m.config = train_snapshot(o);
  m.seed = o.seed;
  m.dataset_hash = dataset_hash(o.data);
  m.checkpoint_hash = ch;
  m.metrics = {{"n_train", sv.train.size()},
               {"n_val", sv.val.size()},
               {"epochs", o.epochs},
               {"best_epoch", fr.best_epoch},
               {"best_val_instance_f1", fr.best_val_f1},
               {"final_train_ce", fr.log.empty() ? 0.0 : fr.log.back().train_ce}};
  m.wall_seconds = timer.seconds();
  m.write(dir);

  std::printf("checkpoint %s hash=%s\n", ckpt.c_str(), ch.c_str());
  if (with_val)
    std::printf("best epoch=%d val_instance_f1=%s\n", fr.best_epoch, fmt_g(fr.best_val_f1).c_str());
  std::printf("run %s\n", dir.c_str());
  return 0;
}

struct EvalOpts {
  std::string data, ckpt;
  int fold = -1;  // -1 = every call
  std::string permute = "none";
  uint64_t seed = 1;
  int threads = 0;
};

Snapshot eval_snapshot(const EvalOpts& o) {
  return {{"data", o.data},   {"ckpt", o.ckpt}, {"fold", std::to_string(o.fold)},
          {"permute", o.permute}, {"seed", std::to_string(o.seed)}};
}

int cmd_eval(const EvalOpts& o) {
  WallTimer timer;
  const StoredDataset ds = load_dataset_checked(o.data);
  const ModelParams params = load_checkpoint_checked(o.ckpt);
  std::vector<size_t> idx;
  for (size_t i = 0; i < ds.calls.size(); ++i)
    if (o.fold < 0 || ds.folds[i] == o.fold) idx.push_back(i);
  if (idx.empty()) throw MqtError("fold " + std::to_string(o.fold) + " selects no calls");

  const EvalResult er =
      evaluate_subset(params, ds, idx, permute_from_string(o.permute), o.seed, o.threads);

  const std::string dir = make_run_dir("eval", eval_snapshot(o));
  json report = {{"n_calls", er.n_calls},
                 {"fold", o.fold},
                 {"permute", o.permute},
                 {"timestep", prf_json(er.ts)},
                 {"instance", prf_json(er.inst)},
                 {"confusion", confusion_json(er.conf)}};
  write_text_file(dir + "/eval_report.json", report.dump(2) + "\n");
  write_text_file(dir + "/report.txt", prf_to_table("timestep", er.ts) +
                                           prf_to_table("instance", er.inst));

  RunManifest m;
  m.command = "eval";
  m.config = eval_snapshot(o);
  m.seed = o.seed;
  m.dataset_hash = dataset_hash(o.data);
  m.checkpoint_hash = hex64(file_fnv1a(o.ckpt));
  m.metrics = {{"timestep_macro_f1", er.ts.macro_f1},
               {"timestep_micro_f1", er.ts.micro_f1},
               {"instance_macro_f1", er.inst.macro_f1},
               {"instance_micro_f1", er.inst.micro_f1},
               {"n_calls", er.n_calls}};
  m.wall_seconds = timer.seconds();
  m.write(dir);

  std::printf("%s\n", prf_to_line("timestep", er.ts).c_str());
  std::printf("%s\n", prf_to_line("instance", er.inst).c_str());
  std::printf("run %s\n", dir.c_str());
  return 0;
}

struct StreamOpts {
  std::string data, ckpt;
  int call = 0;
  double chunk_seconds = 1.0;
};

Snapshot stream_snapshot(const StreamOpts& o) {
  return {{"data", o.data},
          {"ckpt", o.ckpt},
          {"call", std::to_string(o.call)},
          {"chunk-seconds", fmt_g(o.chunk_seconds)}};
}

Tensor slice_rows(const Tensor& t, int r0, int r1) {
  Tensor out({r1 - r0, t.cols()});
  std::copy(t.row(r0), t.row(r1), out.data.begin());
  return out;
}

int cmd_stream(const StreamOpts& o) {
  WallTimer timer;
  const StoredDataset ds = load_dataset_checked(o.data);
  if (o.call < 0 || o.call >= static_cast<int>(ds.calls.size()))
    throw MqtError("call index " + std::to_string(o.call) + " out of range (dataset has " +
                   std::to_string(ds.calls.size()) + " calls)");
  const ModelParams params = load_checkpoint_checked(o.ckpt);
  const SyntheticCall& c = ds.calls[static_cast<size_t>(o.call)];
  if (o.chunk_seconds <= 0) throw MqtError("--chunk-seconds must be > 0");

  const Tensor offline = model_forward<float>(params, c.x_a, c.x_s, false, nullptr, nullptr);

  StreamSession sess(params);
  int frames = static_cast<int>(std::lround(o.chunk_seconds * kAudioFps));
  frames = std::max(2, frames - frames % 2);  // text frames cover half the audio rate
  std::vector<float> probs;
  LabelSeq labels;
  auto take = [&](const StreamOut& out) {
    probs.insert(probs.end(), out.probs.data.begin(), out.probs.data.end());
    labels.insert(labels.end(), out.labels.begin(), out.labels.end());
  };
  for (int f0 = 0; f0 < c.t_a(); f0 += frames) {
    const int f1 = std::min(f0 + frames, c.t_a());
    take(sess.push_chunk(slice_rows(c.x_a, f0, f1), slice_rows(c.x_s, f0 / 2, f1 / 2)));
  }
  take(sess.finalize());

  const int steps = static_cast<int>(labels.size());
  const int expected = c.t_a() / kLabelStride;
  double max_diff = 0;
  for (size_t i = 0; i < probs.size() && i < offline.data.size(); ++i)
    max_diff = std::max(max_diff, std::abs(static_cast<double>(probs[i]) - offline.data[i]));

  json segs = json::array();
  for (const Segment& s : label_segments(labels))
    if (s.label != 0)
      segs.push_back({{"label", s.label}, {"start_s", s.start_s()}, {"stop_s", s.stop_s()}});
  json gold_segs = json::array();
  for (const Segment& s : label_segments(c.labels))
    if (s.label != 0)
      gold_segs.push_back({{"label", s.label}, {"start_s", s.start_s()}, {"stop_s", s.stop_s()}});

  const std::string dir = make_run_dir("stream", stream_snapshot(o));
  json report = {{"call", o.call},
                 {"chunk_seconds", o.chunk_seconds},
                 {"steps", steps},
                 {"expected_steps", expected},
                 {"max_abs_diff", max_diff},
                 {"segments", segs},
                 {"gold_segments", gold_segs}};
  write_text_file(dir + "/stream_report.json", report.dump(2) + "\n");

  RunManifest m;
  m.command = "stream";
  m.config = stream_snapshot(o);
  m.seed = 0;
  m.dataset_hash = dataset_hash(o.data);
  m.checkpoint_hash = hex64(file_fnv1a(o.ckpt));
  m.metrics = {{"steps", steps}, {"max_abs_diff", max_diff}, {"segments", segs.size()}};
  m.wall_seconds = timer.seconds();
  m.write(dir);

  std::printf("steps=%d expected=%d max_abs_diff=%s\n", steps, expected,
              fmt_g(max_diff).c_str());
  for (const auto& s : segs)
    std::printf("segment label=%d start=%.2f stop=%.2f\n", s["label"].get<int>(),
                s["start_s"].get<double>(), s["stop_s"].get<double>());
  std::printf("run %s\n", dir.c_str());
  return 0;
}

struct BenchOpts {
  std::string ckpt;  // empty benches a freshly initialized default model
  double duration = 166.0;
  double chunk_seconds = 1.0;
  int streams = 1;
  int threads = 0;
  bool offline = false;
  uint64_t seed = 1;
};

Snapshot bench_snapshot(const BenchOpts& o) {
  return {{"ckpt", o.ckpt},
          {"duration", fmt_g(o.duration)},
          {"chunk-seconds", fmt_g(o.chunk_seconds)},
          {"streams", std::to_string(o.streams)},
          {"threads", std::to_string(o.threads)},
          {"offline", o.offline ? "1" : "0"},
          {"seed", std::to_string(o.seed)}};
}

int cmd_bench(const BenchOpts& o) {
  WallTimer timer;
  ModelParams params;
  if (o.ckpt.empty()) {
    ModelConfig mcfg;
    mcfg.init_seed = o.seed;
    params = ModelParams::init(mcfg);
  } else {
    params = load_checkpoint_checked(o.ckpt);
  }
  const RtfReport r = o.offline
                          ? bench_offline(params, o.duration, o.seed)
                          : bench_rtf(params, o.duration, o.chunk_seconds, o.streams, o.threads,
                                      o.seed);

  const std::string dir = make_run_dir("bench", bench_snapshot(o));
  json report = {{"rtf", r.rtf},
                 {"audio_seconds", r.audio_seconds},
                 {"wall_seconds", r.wall_seconds},
                 {"chunk_seconds", r.chunk_seconds},
                 {"n_streams", r.n_streams},
                 {"threads", r.threads},
                 {"latency_p50_ms", r.latency_p50_ms},
                 {"latency_p90_ms", r.latency_p90_ms},
                 {"latency_p99_ms", r.latency_p99_ms},
                 {"latency_max_ms", r.latency_max_ms},
                 {"offline", o.offline}};
  write_text_file(dir + "/bench.json", report.dump(2) + "\n");

  RunManifest m;
  m.command = "bench";
  m.config = bench_snapshot(o);
  m.seed = o.seed;
  if (!o.ckpt.empty()) m.checkpoint_hash = hex64(file_fnv1a(o.ckpt));
  m.metrics = report;
  m.wall_seconds = timer.seconds();
  m.write(dir);

  std::printf("%s\n", r.to_line().c_str());
  std::printf("%s", r.to_table().c_str());
  std::printf("run %s\n", dir.c_str());
  return 0;
}

// Trains a vanilla and a permutation-augmented model on the same split, then
// scores both on the held-out fold under three test conditions: untouched
// input, audio time axis shuffled, text time axis shuffled.
int cmd_ablate(const TrainOpts& o) {
  WallTimer timer;
  if (o.val_fold < 0) throw MqtError("ablate needs --val-fold >= 0 to score the grid on");
  const StoredDataset ds = load_dataset_checked(o.data);
  const SplitView sv = split_by_fold(ds, o.val_fold);
  const ModelConfig mcfg = model_cfg_from(o);

  const std::string dir = make_run_dir("ablate", train_snapshot(o));
  const char* model_names[2] = {"vanilla", "permuted"};
  const char* mode_names[3] = {"none", "audio", "text"};
  const PermuteMode modes[3] = {PermuteMode::kNone, PermuteMode::kAudio, PermuteMode::kText};

  json grid = json::object();
  json full = json::object();
  std::string table = "model     ";
  for (const char* mn : mode_names) table += "  test=" + std::string(mn) + "       ";
  table += "\n";

  for (int mi = 0; mi < 2; ++mi) {
    const TrainConfig tcfg = train_cfg_from(o, mi == 1);
    std::printf("training %s model\n", model_names[mi]);
    const FitResult fr = fit(mcfg, tcfg, sv.train, sv.val, [&](const EpochLog& e) {
      std::printf("  %s %s\n", model_names[mi], epoch_line(e, true).c_str());
    });
    save_checkpoint(fr.params, dir + "/" + model_names[mi] + ".ckpt");
    grid[model_names[mi]] = json::object();
    full[model_names[mi]] = json::object();
    table += std::string(model_names[mi]) + std::string(10 - std::string(model_names[mi]).size(), ' ');
    for (int ci = 0; ci < 3; ++ci) {
      const EvalResult er =
          evaluate_subset(fr.params, ds, sv.val_idx, modes[ci], o.seed, o.threads);
      grid[model_names[mi]][mode_names[ci]] = {{"timestep_macro_f1", er.ts.macro_f1},
                                               {"instance_macro_f1", er.inst.macro_f1}};
      full[model_names[mi]][mode_names[ci]] = {{"timestep", prf_json(er.ts)},
                                               {"instance", prf_json(er.inst)}};
      char cell[32];
      std::snprintf(cell, sizeof cell, "  %.4f         ", er.inst.macro_f1);
      table += cell;
    }
    table += "\n";
  }

  json report = {{"grid", grid}, {"detail", full}, {"val_fold", o.val_fold}};
  write_text_file(dir + "/ablate_report.json", report.dump(2) + "\n");

  RunManifest m;
  m.command = "ablate";
  m.config = train_snapshot(o);
  m.seed = o.seed;
  m.dataset_hash = dataset_hash(o.data);
  m.metrics = grid;
  m.wall_seconds = timer.seconds();
  m.write(dir);

  std::printf("instance macro-F1 grid (rows = training, columns = test permutation)\n%s",
              table.c_str());
  std::printf("run %s\n", dir.c_str());
  return 0;
}

struct DumpOpts {
  std::string data, ckpt;
  int call = -1;
};

int cmd_dump(const DumpOpts& o) {
  if (!o.data.empty()) {
    const StoredDataset ds = load_dataset_checked(o.data);
    if (o.call >= 0) {
      if (o.call >= static_cast<int>(ds.calls.size()))
        throw MqtError("call index " + std::to_string(o.call) + " out of range (dataset has " +
                       std::to_string(ds.calls.size()) + " calls)");
      std::printf("%s", describe_call(ds.calls[static_cast<size_t>(o.call)]).c_str());
      return 0;
    }
    double audio_s = 0;
    std::map<int32_t, int64_t> seg_counts;
    for (const SyntheticCall& c : ds.calls) {
      audio_s += c.t_a() / static_cast<double>(kAudioFps);
      for (const Segment& s : label_segments(c.labels))
        if (s.label != 0) ++seg_counts[s.label];
    }
    int n_folds = 0;
    for (int f : ds.folds) n_folds = std::max(n_folds, f + 1);
    std::printf("calls=%zu folds=%d audio_s=%s hash=%s\n", ds.calls.size(), n_folds,
                fmt_g(audio_s).c_str(), dataset_hash(o.data).c_str());
    for (const auto& [label, n] : seg_counts)
      std::printf("class %d segments=%lld\n", label, static_cast<long long>(n));
    return 0;
  }
  const ModelParams params = load_checkpoint_checked(o.ckpt);
  const ModelConfig& c = params.cfg;
  std::printf("modality=%s fusion=%s classes=%d multitask=%d trunk=%dx%d\n", to_string(c.modality),
              to_string(c.fusion), c.num_classes, c.multitask ? 1 : 0, c.trunk_layers,
              c.trunk_units);
  int64_t total = 0, learnable = 0;
  params.for_each([&](const std::string& name, const Tensor& t, ParamKind k) {
    std::printf("%-24s %-10s %lld\n", name.c_str(), t.shape_str().c_str(),
                static_cast<long long>(t.numel()));
    total += t.numel();
    if (is_learnable(k)) learnable += t.numel();
  });
  std::printf("parameters total=%lld learnable=%lld hash=%s\n", static_cast<long long>(total),
              static_cast<long long>(learnable), hex64(file_fnv1a(o.ckpt)).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"question tracking over simulated call streams"};
  app.require_subcommand(1);
  // config-file tokens are injected before user flags; last value wins
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GenOpts gen_opts;
  TrainOpts train_opts, ablate_opts;
  EvalOpts eval_opts;
  StreamOpts stream_opts;
  BenchOpts bench_opts;
  DumpOpts dump_opts;
  std::string config_path_sink;  // consumed here, applied via token injection

  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset");
  add_gen_flags(gen_cmd, gen_opts);

  auto* train_cmd = app.add_subcommand("train", "train a model on a stored dataset");
  add_train_flags(train_cmd, train_opts, true);

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a stored dataset");
  eval_cmd->add_option("--data", eval_opts.data, "dataset directory")->required();
  eval_cmd->add_option("--ckpt", eval_opts.ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--fold", eval_opts.fold, "restrict to one fold, -1 = all calls");
  eval_cmd->add_option("--permute", eval_opts.permute, "shuffle one modality's time axis")
      ->check(CLI::IsMember({"none", "audio", "text"}));
  eval_cmd->add_option("--seed", eval_opts.seed, "permutation seed");
  eval_cmd->add_option("--threads", eval_opts.threads);

  auto* stream_cmd = app.add_subcommand("stream", "replay one call through chunked inference");
  stream_cmd->add_option("--data", stream_opts.data, "dataset directory")->required();
  stream_cmd->add_option("--ckpt", stream_opts.ckpt, "model checkpoint")->required();
  stream_cmd->add_option("--call", stream_opts.call, "call index");
  stream_cmd->add_option("--chunk-seconds", stream_opts.chunk_seconds, "audio per push");

  auto* bench_cmd = app.add_subcommand("bench", "measure inference throughput");
  bench_cmd->add_option("--ckpt", bench_opts.ckpt, "checkpoint, default fresh weights");
  bench_cmd->add_option("--duration", bench_opts.duration, "synthetic call length, seconds");
  bench_cmd->add_option("--chunk-seconds", bench_opts.chunk_seconds, "audio per push");
  bench_cmd->add_option("--streams", bench_opts.streams, "concurrent calls");
  bench_cmd->add_option("--threads", bench_opts.threads);
  bench_cmd->add_flag("--offline", bench_opts.offline, "bench one full-call forward instead");
  bench_cmd->add_option("--seed", bench_opts.seed);

  auto* ablate_cmd =
      app.add_subcommand("ablate", "train with and without permutation, score the 2x3 grid");
  add_train_flags(ablate_cmd, ablate_opts, false);

  auto* dump_cmd = app.add_subcommand("dump", "describe a dataset, call, or checkpoint");
  auto* dump_src = dump_cmd->add_option_group("source");
  dump_src->add_option("--data", dump_opts.data, "dataset directory");
  dump_src->add_option("--ckpt", dump_opts.ckpt, "model checkpoint");
  dump_src->require_option(1);
  dump_cmd->add_option("--call", dump_opts.call, "describe one call instead of the summary");

  for (CLI::App* sub : {gen_cmd, train_cmd, eval_cmd, stream_cmd, bench_cmd, ablate_cmd, dump_cmd})
    sub->add_option("--config", config_path_sink, "key = value defaults file");

  std::vector<std::string> tokens(argv + 1, argv + argc);
  std::string config_path;
  std::map<std::string, std::pair<int, std::string>> config_origin;  // flag -> line, value
  try {
    size_t sub_pos = tokens.size();
    std::string sub_name;
    for (size_t i = 0; i < tokens.size(); ++i) {
      if (!tokens[i].empty() && tokens[i][0] != '-') {
        sub_pos = i;
        sub_name = tokens[i];
        break;
      }
    }
    for (size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] == "--config" && i + 1 < tokens.size()) config_path = tokens[i + 1];
      else if (tokens[i].rfind("--config=", 0) == 0) config_path = tokens[i].substr(9);
    }
    CLI::App* sub = sub_name.empty() ? nullptr : app.get_subcommand_no_throw(sub_name);
    if (!config_path.empty() && sub) {
      size_t insert_at = sub_pos + 1;
      for (const ConfigEntry& e : parse_config_file(config_path)) {
        if (e.key == "config")
          throw MqtError(config_path + " line " + std::to_string(e.line) +
                         ": a config file cannot include another");
        const std::string flag = "--" + e.key;
        // --call lives outside dump's option group, so probe both
        if (!sub->get_option_no_throw(flag))
          throw MqtError(config_path + " line " + std::to_string(e.line) + ": unknown key '" +
                         e.key + "'");
        tokens.insert(tokens.begin() + static_cast<long>(insert_at++), flag + "=" + e.value);
        config_origin[flag] = {e.line, e.value};
      }
    }
    std::reverse(tokens.begin(), tokens.end());
    app.parse(tokens);
  } catch (const CLI::ParseError& e) {
    const std::string what = e.what();
    for (const auto& [flag, origin] : config_origin) {
      if (what.find(flag) != std::string::npos &&
          (origin.second.empty() || what.find(origin.second) != std::string::npos)) {
        std::fprintf(stderr, "error: %s line %d: %s\n", config_path.c_str(), origin.first,
                     what.c_str());
        return 1;
      }
    }
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen(gen_opts);
    if (train_cmd->parsed()) return cmd_train(train_opts);
    if (eval_cmd->parsed()) return cmd_eval(eval_opts);
    if (stream_cmd->parsed()) return cmd_stream(stream_opts);
    if (bench_cmd->parsed()) return cmd_bench(bench_opts);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_opts);
    if (dump_cmd->parsed()) return cmd_dump(dump_opts);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
