#include "mqt/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mqt/common.hpp"
#include "mqt/ops.hpp"
#include "mqt/parallel.hpp"
#include "mqt/serialize.hpp"

namespace fs = std::filesystem;

namespace mqt {

// ---------------------------------------------------------------------------
// Alphabet
// ---------------------------------------------------------------------------

int char_index(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c == '\'') return kCharApostrophe;
  if (c == ' ') return kCharSpace;
  return -1;
}

char index_char(int idx) {
  if (idx >= 0 && idx < 26) return static_cast<char>('a' + idx);
  if (idx == kCharApostrophe) return '\'';
  if (idx == kCharSpace) return ' ';
  return '_';
}

// ---------------------------------------------------------------------------
// Vocabulary banks. Each positive class owns keywords that never appear in
// any other class's phrases or in the filler bank, so a clean transcript
// identifies the class unambiguously.
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kQuestionNames = {"none",      "address",   "problem",
                                                 "age",       "breathing", "conscious"};
const std::vector<std::string> kSymptomNames = {"none", "consciousness", "breathing",
                                                "pain", "trauma",        "bleeding"};

const std::vector<std::vector<std::string>> kQuestionPhrases = {
    {"what is the address", "where is the incident", "where are you right now",
     "what is the exact address"},
    {"what is the problem", "what exactly happened", "what's the emergency",
     "okay what happened"},
    {"how old is she", "how old is he", "what age is the patient", "do you know how old"},
    {"is she breathing normally", "is he able to breathe", "is the patient breathing",
     "how is the breathing"},
    {"is she conscious", "is he awake and responding", "is the patient conscious",
     "can you tell if he is awake"},
};

const std::vector<std::vector<std::string>> kSymptomPhrases = {
    {"he is unresponsive", "she just fainted", "my father is unconscious",
     "she is unresponsive now"},
    {"she is not breathing", "he keeps gasping for air", "his breathing is very weak",
     "she stopped breathing"},
    {"he has terrible chest pain", "the pain is getting worse", "her stomach hurts a lot",
     "he says everything hurts"},
    {"she fell down the stairs", "he hit his head hard", "i think her arm is broken",
     "he fell off the ladder"},
    {"there is blood everywhere", "the bleeding will not stop", "he is losing a lot of blood",
     "she is bleeding from the head"},
};

const std::vector<std::string> kFillerPhrases = {
    "okay",           "yes i am here",      "please hurry",       "help is on the way",
    "stay with me",   "i understand",       "one moment please",  "they are coming now",
    "thank you",      "hold on",            "i will try",         "we are at the house",
    "i can't tell",   "send someone fast",  "it is getting dark", "my phone is dying",
};

constexpr int kTicksPerSecond = 50;  // 20 ms event grid = one text frame
constexpr int kMinGapTicks = 25;     // half a second between planted segments
constexpr int kEdgeTicks = 25;

int phrase_ticks(const std::string& text) {
  // every character (plus the trailing space) needs at least two text frames
  return 2 * static_cast<int>(text.size() + 1);
}

int weighted_choice(const std::vector<double>& w, Rng& rng) {
  double total = 0;
  for (double v : w) total += v;
  double u = rng.uniform(0.0, total);
  for (size_t i = 0; i < w.size(); ++i) {
    u -= w[i];
    if (u < 0) return static_cast<int>(i);
  }
  return static_cast<int>(w.size()) - 1;
}

float tick_seconds(int tick) { return static_cast<float>(tick) / kTicksPerSecond; }
int to_tick(float seconds) { return static_cast<int>(std::lround(seconds * kTicksPerSecond)); }

}  // namespace

const std::vector<std::vector<std::string>>& phrase_bank(ScriptBank bank) {
  return bank == ScriptBank::kQuestions ? kQuestionPhrases : kSymptomPhrases;
}

const std::vector<std::string>& filler_bank() { return kFillerPhrases; }

const std::vector<std::string>& class_names(ScriptBank bank) {
  return bank == ScriptBank::kQuestions ? kQuestionNames : kSymptomNames;
}

std::vector<float> audio_class_template(int cls, ScriptBank bank) {
  const auto& names = class_names(bank);
  if (cls < 0 || cls >= static_cast<int>(names.size()))
    throw MqtError("audio_class_template: class out of range");
  // fixed world constants: seeded by class name, not by any dataset seed
  const std::string tag = (bank == ScriptBank::kQuestions ? "tone-q-" : "tone-s-") +
                          (cls == 0 ? std::string("speech") : names[static_cast<size_t>(cls)]);
  Rng rng(fnv1a64_str(tag));
  std::vector<float> t(26);
  for (float& v : t) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void GenConfig::validate() const {
  if (n_calls < 1) throw MqtError("gen config: n_calls must be >= 1");
  if (duration_min_s <= 0 || duration_min_s > duration_max_s)
    throw MqtError("gen config: call duration bounds are inconsistent");
  if (duration_std_s < 0) throw MqtError("gen config: duration std must be >= 0");
  if (num_classes != static_cast<int>(class_weights.size()) + 1)
    throw MqtError("gen config: need one weight per positive class");
  for (double w : class_weights)
    if (w <= 0) throw MqtError("gen config: class weights must be positive");
  if (question_min_s <= 0 || question_min_s > question_max_s)
    throw MqtError("gen config: question duration range is inconsistent");
  if (question_max_s + 2.0 * kEdgeTicks / kTicksPerSecond > duration_min_s)
    throw MqtError("gen config: question duration " + std::to_string(question_max_s) +
                   " s does not fit into the minimum call duration " +
                   std::to_string(duration_min_s) + " s");
  if (question_occupancy < 0 || question_occupancy > 0.4)
    throw MqtError("gen config: question occupancy must be in [0, 0.4]");
  if (corruption < 0 || corruption > 1) throw MqtError("gen config: corruption must be in [0, 1]");
  if (sigma < 0) throw MqtError("gen config: sigma must be >= 0");
}

int SyntheticCall::question_count() const {
  int n = 0;
  for (const ScriptEvent& e : script) n += e.cls > 0;
  return n;
}

// ---------------------------------------------------------------------------
// Script generation
// ---------------------------------------------------------------------------

namespace {

struct TickEvent {
  int32_t cls = 0;
  int start = 0, stop = 0;  // closed-open in ticks while placing
  std::string text;
};

std::vector<TickEvent> make_script(const GenConfig& cfg, int call_ticks, Rng& rng) {
  const auto& phrases = phrase_bank(cfg.bank);
  std::vector<TickEvent> planted;

  const double mean_q_s = 0.5 * (cfg.question_min_s + cfg.question_max_s);
  const double duration_s = static_cast<double>(call_ticks) / kTicksPerSecond;
  uint64_t n_q = rng.poisson(cfg.question_occupancy * duration_s / mean_q_s);
  const uint64_t cap = static_cast<uint64_t>(0.4 * duration_s / cfg.question_min_s);
  n_q = std::min(n_q, cap);

  const int q_min_t = to_tick(static_cast<float>(cfg.question_min_s));
  const int q_max_t = to_tick(static_cast<float>(cfg.question_max_s));
  for (uint64_t q = 0; q < n_q; ++q) {
    const int cls = weighted_choice(cfg.class_weights, rng) + 1;
    const auto& options = phrases[static_cast<size_t>(cls - 1)];
    const std::string& text = options[rng.randint(options.size())];
    int dur = q_min_t + static_cast<int>(rng.randint(static_cast<uint64_t>(q_max_t - q_min_t + 1)));
    dur = std::max(dur, phrase_ticks(text));
    if (dur + 2 * kEdgeTicks > call_ticks)
      throw MqtError("gen_call: question of " + std::to_string(tick_seconds(dur)) +
                     " s does not fit into a " + std::to_string(duration_s) + " s call");
    // rejection-sample a non-overlapping slot; crowded calls just drop one
    for (int attempt = 0; attempt < 64; ++attempt) {
      const int start = kEdgeTicks +
                        static_cast<int>(rng.randint(
                            static_cast<uint64_t>(call_ticks - dur - 2 * kEdgeTicks + 1)));
      bool clear = true;
      for (const TickEvent& e : planted)
        clear &= start >= e.stop + kMinGapTicks || start + dur + kMinGapTicks <= e.start;
      if (!clear) continue;
      planted.push_back({static_cast<int32_t>(cls), start, start + dur, text});
      break;
    }
  }
  std::sort(planted.begin(), planted.end(),
            [](const TickEvent& a, const TickEvent& b) { return a.start < b.start; });

  // fill the gaps with filler utterances separated by silence
  std::vector<TickEvent> script;
  int cursor = 0;
  auto fill_gap = [&](int from, int to) {
    int at = from;
    while (at < to) {
      at += 20 + static_cast<int>(rng.randint(100));  // 0.4 - 2.4 s silence
      const std::string& text = kFillerPhrases[rng.randint(kFillerPhrases.size())];
      const int need = phrase_ticks(text);
      int dur = std::max(need, 40 + static_cast<int>(rng.randint(50)));
      if (at + dur > to) break;
      script.push_back({0, at, at + dur, text});
      at += dur;
    }
  };
  for (const TickEvent& q : planted) {
    fill_gap(cursor, q.start - kMinGapTicks);
    script.push_back(q);
    cursor = q.stop + kMinGapTicks;
  }
  fill_gap(cursor, call_ticks - kEdgeTicks);
  std::sort(script.begin(), script.end(),
            [](const TickEvent& a, const TickEvent& b) { return a.start < b.start; });
  return script;
}

// Label for each 80 ms model step: the planted event covering the step's
// center time; exact boundary hits go to the event that starts earlier.
LabelSeq make_labels(const std::vector<TickEvent>& script, int t_m) {
  LabelSeq y(static_cast<size_t>(t_m), 0);
  for (int i = 0; i < t_m; ++i) {
    const int center = 4 * i + 2;  // (i + 0.5) * 0.08 s on the 20 ms grid
    for (const TickEvent& e : script) {
      if (e.cls == 0) continue;
      if (e.start <= center && center <= e.stop) {
        y[static_cast<size_t>(i)] = e.cls;
        break;
      }
      if (e.start > center) break;
    }
  }
  return y;
}

void peaked_row(float* row, int sym, float peak) {
  const float rest = (1.0f - peak) / 28.0f;
  for (int i = 0; i < 29; ++i) row[i] = rest;
  row[sym] = peak;
}

struct CharSlot {
  int sym = kCharBlank;  // kCharBlank means the slot emits only blanks
  int word = -1;         // index into the event's word list, -1 for spaces
};

}  // namespace

Tensor simulate_asr(const std::vector<ScriptEvent>& script, int t_s, double corruption, Rng& rng,
                    std::vector<WordSpan>& words_out) {
  Tensor x({t_s, kTextDim});
  for (int t = 0; t < t_s; ++t)
    peaked_row(x.row(t), kCharBlank, static_cast<float>(rng.uniform(0.80, 0.95)));
  words_out.clear();

  for (const ScriptEvent& ev : script) {
    if (ev.text.empty()) continue;
    const int fs = std::max(0, to_tick(ev.start_s));
    const int fe = std::min(t_s, to_tick(ev.stop_s));
    if (fe <= fs) continue;

    // corrupt the characters first; a trailing space ends the utterance
    const std::string text = ev.text + " ";
    std::vector<CharSlot> slots;
    std::vector<std::string> words(1);
    int word = 0;
    for (char c : text) {
      const int sym = char_index(c);
      if (sym < 0) throw MqtError("simulate_asr: character outside the alphabet in script text");
      if (sym == kCharSpace) {
        slots.push_back({kCharSpace, -1});
        words.emplace_back();
        ++word;
        continue;
      }
      if (rng.uniform() < corruption) {
        const double kind = rng.uniform();
        if (kind < 0.5) {  // substitute with a different letter
          int other = static_cast<int>(rng.randint(25));
          if (other >= sym) ++other;
          slots.push_back({other % 26, word});
          words[static_cast<size_t>(word)] += index_char(other % 26);
        } else if (kind < 0.75) {
          continue;  // delete: the slot vanishes and later characters shift
        } else {
          slots.push_back({kCharBlank, word});  // blank-out: timing kept
        }
      } else {
        slots.push_back({sym, word});
        words[static_cast<size_t>(word)] += c;
      }
    }
    if (slots.empty()) continue;

    const double slot_len = static_cast<double>(fe - fs) / static_cast<double>(slots.size());
    std::vector<int> word_first(words.size(), -1), word_last(words.size(), -1);
    for (size_t i = 0; i < slots.size(); ++i) {
      const int f0 = fs + static_cast<int>(std::floor(static_cast<double>(i) * slot_len));
      int f1 = fs + static_cast<int>(std::floor(static_cast<double>(i + 1) * slot_len));
      f1 = std::max(f1, f0 + 1);
      if (slots[i].sym != kCharBlank) {
        const int char_frames = std::max(1, (f1 - f0) / 2);  // rest of the slot stays blank
        for (int t = f0; t < std::min(f0 + char_frames, t_s); ++t)
          peaked_row(x.row(t), slots[i].sym, static_cast<float>(rng.uniform(0.75, 0.92)));
      }
      if (slots[i].word >= 0) {
        if (word_first[static_cast<size_t>(slots[i].word)] < 0)
          word_first[static_cast<size_t>(slots[i].word)] = f0;
        word_last[static_cast<size_t>(slots[i].word)] = f1;
      }
    }
    for (size_t wi = 0; wi < words.size(); ++wi) {
      if (words[wi].empty() || word_first[wi] < 0) continue;
      words_out.push_back({words[wi], static_cast<float>(word_first[wi]) / kTicksPerSecond,
                           static_cast<float>(word_last[wi]) / kTicksPerSecond});
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Audio rendering
// ---------------------------------------------------------------------------

namespace {

// channel layout: 0..25 spectral patterns, 26..29 intonation ramp,
// 30 speech activity, 31..39 uninformative background
Tensor render_audio(const std::vector<TickEvent>& script, int t_a, double sigma, ScriptBank bank,
                    Rng& rng) {
  Tensor x({t_a, kAudioDim});
  const std::vector<float> speech = audio_class_template(0, bank);
  for (const TickEvent& ev : script) {
    if (ev.text.empty()) continue;
    const int fs = std::max(0, 2 * ev.start);  // ticks are 20 ms, frames 10 ms
    const int fe = std::min(t_a, 2 * ev.stop);
    const std::vector<float> tmpl = ev.cls > 0 ? audio_class_template(ev.cls, bank) : speech;
    // symptom mentions sound like ordinary speech: weak pattern, no ramp
    const float gain = ev.cls > 0 ? (bank == ScriptBank::kSymptoms ? 0.3f : 1.0f) : 0.6f;
    const bool ramp = ev.cls > 0 && bank == ScriptBank::kQuestions;
    for (int t = fs; t < fe; ++t) {
      float* r = x.row(t);
      for (int c = 0; c < 26; ++c) r[c] += gain * tmpl[static_cast<size_t>(c)];
      if (ramp) {
        const float rise = static_cast<float>(t - fs + 1) / static_cast<float>(fe - fs);
        for (int c = 26; c < 30; ++c) r[c] += rise;
      }
      r[30] += 1.0f;
    }
  }
  for (int t = 0; t < t_a; ++t) {
    float* r = x.row(t);
    for (int c = 0; c < 31; ++c) r[c] += static_cast<float>(sigma * rng.normal());
    for (int c = 31; c < kAudioDim; ++c) r[c] = static_cast<float>(0.3 * rng.normal());
  }
  return x;
}

std::vector<ScriptEvent> to_seconds(const std::vector<TickEvent>& ticks) {
  std::vector<ScriptEvent> out;
  out.reserve(ticks.size());
  for (const TickEvent& e : ticks)
    out.push_back({e.cls, tick_seconds(e.start), tick_seconds(e.stop), e.text});
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Calls and datasets
// ---------------------------------------------------------------------------

SyntheticCall gen_call(const GenConfig& cfg, Rng& rng) {
  cfg.validate();
  const double dur =
      std::clamp(cfg.duration_mean_s + cfg.duration_std_s * rng.normal(), cfg.duration_min_s,
                 cfg.duration_max_s);
  const int call_ticks = static_cast<int>(std::lround(dur * kTicksPerSecond));
  const int t_a = ((2 * call_ticks + 7) / 8) * 8;  // pad with silence so 8 | T_a
  const int t_s = t_a / 2;
  const int t_m = t_a / 8;

  const std::vector<TickEvent> ticks = make_script(cfg, call_ticks, rng);

  SyntheticCall call;
  call.script = to_seconds(ticks);
  call.labels = make_labels(ticks, t_m);
  call.x_s = simulate_asr(call.script, t_s, cfg.corruption, rng, call.words);
  call.x_a = render_audio(ticks, t_a, cfg.sigma, cfg.bank, rng);
  call.corruption = static_cast<float>(cfg.corruption);
  call.sigma = static_cast<float>(cfg.sigma);
  call.duration_s = tick_seconds(call_ticks);
  return call;
}

std::vector<SyntheticCall> gen_dataset(const GenConfig& cfg, int threads) {
  cfg.validate();
  std::vector<SyntheticCall> calls(static_cast<size_t>(cfg.n_calls));
  const Rng base(cfg.seed);
  parallel_for(cfg.n_calls, threads, [&](int i) {
    Rng rng = base.fork(static_cast<uint64_t>(i));
    calls[static_cast<size_t>(i)] = gen_call(cfg, rng);
  });
  return calls;
}

std::vector<SyntheticCall> symptom_variant(GenConfig cfg, int threads) {
  cfg.bank = ScriptBank::kSymptoms;
  return gen_dataset(cfg, threads);
}

std::string decode_argmax_text(const Tensor& x_s) {
  std::string out;
  int prev = kCharBlank;
  for (int t = 0; t < x_s.rows(); ++t) {
    const int a = argmax_row(x_s, t);
    if (a != prev && a != kCharBlank) out += index_char(a);
    prev = a;
  }
  return out;
}

double measure_cer(const SyntheticCall& call) {
  std::string truth;
  for (const ScriptEvent& e : call.script)
    if (!e.text.empty()) truth += e.text + " ";
  if (truth.empty()) return 0.0;
  const std::string got = decode_argmax_text(call.x_s);

  const size_t n = truth.size(), m = got.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (truth[i - 1] != got[j - 1])});
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

namespace {

constexpr char kCallMagic[4] = {'M', 'Q', 'T', 'D'};
constexpr uint32_t kCallVersion = 1;

std::string join_lines(const std::vector<std::string>& parts) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += '\n';
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split_lines(const std::string& blob) {
  std::vector<std::string> out;
  if (blob.empty()) return out;
  size_t at = 0;
  while (true) {
    const size_t nl = blob.find('\n', at);
    if (nl == std::string::npos) {
      out.push_back(blob.substr(at));
      return out;
    }
    out.push_back(blob.substr(at, nl - at));
    at = nl + 1;
  }
}

std::string call_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "call_%05d.mqtd", index);
  return buf;
}

void write_call(const SyntheticCall& call, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw MqtError("cannot create " + path);
  write_bytes(os, kCallMagic, 4);
  write_u32(os, kCallVersion);
  write_u32(os, 11);
  write_tensor_record(os, "x_a", call.x_a);
  write_tensor_record(os, "x_s", call.x_s);
  write_ivec_record(os, "labels", call.labels);

  std::vector<int32_t> cls;
  Tensor ev_start({static_cast<int>(call.script.size())});
  Tensor ev_stop({static_cast<int>(call.script.size())});
  std::vector<std::string> ev_text;
  for (size_t i = 0; i < call.script.size(); ++i) {
    cls.push_back(call.script[i].cls);
    ev_start.at(static_cast<int>(i)) = call.script[i].start_s;
    ev_stop.at(static_cast<int>(i)) = call.script[i].stop_s;
    ev_text.push_back(call.script[i].text);
  }
  write_ivec_record(os, "script.cls", cls);
  write_tensor_record(os, "script.start", ev_start);
  write_tensor_record(os, "script.stop", ev_stop);
  write_blob_record(os, "script.text", join_lines(ev_text));

  Tensor w_start({static_cast<int>(call.words.size())});
  Tensor w_stop({static_cast<int>(call.words.size())});
  std::vector<std::string> w_text;
  for (size_t i = 0; i < call.words.size(); ++i) {
    w_start.at(static_cast<int>(i)) = call.words[i].start_s;
    w_stop.at(static_cast<int>(i)) = call.words[i].stop_s;
    w_text.push_back(call.words[i].word);
  }
  write_tensor_record(os, "words.start", w_start);
  write_tensor_record(os, "words.stop", w_stop);
  write_blob_record(os, "words.text", join_lines(w_text));

  Tensor meta({3});
  meta.at(0) = call.corruption;
  meta.at(1) = call.sigma;
  meta.at(2) = call.duration_s;
  write_tensor_record(os, "meta", meta);
  if (!os) throw MqtError("failed while writing " + path);
}

SyntheticCall read_call(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MqtError("cannot open " + path);
  char magic[4];
  read_bytes(is, magic, 4, "call magic");
  if (std::memcmp(magic, kCallMagic, 4) != 0)
    throw MqtError(path + " is not a dataset call file (bad magic)");
  const uint32_t version = read_u32(is, "call version");
  if (version != kCallVersion)
    throw MqtError(path + ": unsupported call file version " + std::to_string(version));
  const uint32_t n_rec = read_u32(is, "record count");

  SyntheticCall call;
  std::vector<int32_t> ev_cls;
  Tensor ev_start, ev_stop, w_start, w_stop;
  std::vector<std::string> ev_text, w_text;
  for (uint32_t i = 0; i < n_rec; ++i) {
    TensorRecord rec = read_tensor_record(is);
    if (rec.name == "x_a") call.x_a = std::move(rec.f32);
    else if (rec.name == "x_s") call.x_s = std::move(rec.f32);
    else if (rec.name == "labels") call.labels = std::move(rec.i32);
    else if (rec.name == "script.cls") ev_cls = std::move(rec.i32);
    else if (rec.name == "script.start") ev_start = std::move(rec.f32);
    else if (rec.name == "script.stop") ev_stop = std::move(rec.f32);
    else if (rec.name == "script.text") ev_text = split_lines(rec.u8);
    else if (rec.name == "words.start") w_start = std::move(rec.f32);
    else if (rec.name == "words.stop") w_stop = std::move(rec.f32);
    else if (rec.name == "words.text") w_text = split_lines(rec.u8);
    else if (rec.name == "meta") {
      if (rec.f32.numel() != 3) throw MqtError(path + ": malformed meta record");
      call.corruption = rec.f32.at(0);
      call.sigma = rec.f32.at(1);
      call.duration_s = rec.f32.at(2);
    } else {
      throw MqtError(path + ": unknown record '" + rec.name + "'");
    }
  }
  if (call.x_a.empty() || call.x_s.empty() || call.labels.empty())
    throw MqtError(path + ": missing required records");
  if (ev_cls.size() != ev_text.size() ||
      static_cast<int64_t>(ev_cls.size()) != ev_start.numel())
    throw MqtError(path + ": script records disagree");
  if (w_text.size() != static_cast<size_t>(w_start.numel()))
    throw MqtError(path + ": word records disagree");
  for (size_t i = 0; i < ev_cls.size(); ++i)
    call.script.push_back({ev_cls[i], ev_start.at(static_cast<int>(i)),
                           ev_stop.at(static_cast<int>(i)), ev_text[i]});
  for (size_t i = 0; i < w_text.size(); ++i)
    call.words.push_back(
        {w_text[i], w_start.at(static_cast<int>(i)), w_stop.at(static_cast<int>(i))});
  return call;
}

}  // namespace

void write_dataset(const std::vector<SyntheticCall>& calls, const std::string& dir, int n_folds) {
  if (n_folds < 1) throw MqtError("write_dataset: need at least one fold");
  fs::create_directories(dir);

  // stratify folds by question count: sort, then deal round-robin
  std::vector<size_t> order(calls.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return calls[a].question_count() < calls[b].question_count();
  });
  std::vector<int> fold(calls.size());
  for (size_t r = 0; r < order.size(); ++r) fold[order[r]] = static_cast<int>(r % static_cast<size_t>(n_folds));

  std::ofstream mf(dir + "/manifest.txt");
  if (!mf) throw MqtError("cannot create " + dir + "/manifest.txt");
  mf << "calls " << calls.size() << " folds " << n_folds << "\n";
  for (size_t i = 0; i < calls.size(); ++i) {
    const std::string name = call_filename(static_cast<int>(i));
    write_call(calls[i], dir + "/" + name);
    mf << name << " t_a " << calls[i].t_a() << " questions " << calls[i].question_count()
       << " fold " << fold[i] << "\n";
  }
  if (!mf) throw MqtError("failed while writing manifest");
}

StoredDataset read_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.txt");
  if (!mf) throw MqtError("no manifest.txt in " + dir);
  std::string word;
  size_t n_calls = 0;
  int n_folds = 0;
  mf >> word >> n_calls;
  if (word != "calls") throw MqtError("malformed manifest header in " + dir);
  mf >> word >> n_folds;
  if (word != "folds") throw MqtError("malformed manifest header in " + dir);

  StoredDataset ds;
  for (size_t i = 0; i < n_calls; ++i) {
    std::string name;
    int t_a = 0, questions = 0, fold = 0;
    mf >> name >> word >> t_a >> word >> questions >> word >> fold;
    if (!mf) throw MqtError("manifest truncated in " + dir);
    SyntheticCall call = read_call(dir + "/" + name);
    if (call.t_a() != t_a)
      throw MqtError(name + ": manifest says t_a " + std::to_string(t_a) + " but file holds " +
                     std::to_string(call.t_a()));
    if (call.question_count() != questions)
      throw MqtError(name + ": manifest/file disagree on question count");
    ds.calls.push_back(std::move(call));
    ds.folds.push_back(fold);
  }
  return ds;
}

std::string describe_call(const SyntheticCall& call) {
  std::ostringstream os;
  os << "call: " << call.duration_s << " s, t_a " << call.t_a() << ", "
     << call.question_count() << " planted segments, corruption " << call.corruption
     << ", sigma " << call.sigma << "\n";
  for (const ScriptEvent& e : call.script) {
    os << "  [" << e.start_s << " - " << e.stop_s << "] ";
    if (e.cls > 0) os << "class " << e.cls << ": ";
    os << e.text << "\n";
  }
  os << "decoded: " << decode_argmax_text(call.x_s) << "\n";
  os << "labels:";
  int32_t prev = -1;
  for (size_t i = 0; i < call.labels.size(); ++i) {
    if (call.labels[i] != prev) {
      os << " " << call.labels[i] << "@" << static_cast<double>(i) * kSecondsPerStep;
      prev = call.labels[i];
    }
  }
  os << "\n";
  return os.str();
}

}  // namespace mqt
