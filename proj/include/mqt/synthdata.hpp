#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mqt/rng.hpp"
#include "mqt/tensor.hpp"

namespace mqt {

// Which latent vocabulary the generator plants. Questions carry a rising
// intonation ramp and a strong class-specific audio pattern; symptoms are
// plain keyword utterances whose audio signal is deliberately weak, so the
// class evidence lives mostly in the text stream.
enum class ScriptBank { kQuestions, kSymptoms };

struct GenConfig {
  int n_calls = 100;
  double duration_mean_s = 166.0;
  double duration_std_s = 65.0;
  double duration_min_s = 20.0;
  double duration_max_s = 480.0;
  int num_classes = 6;  // five positive classes + None
  // relative prevalence of the positive classes
  std::vector<double> class_weights = {26.3, 21.6, 21.3, 11.6, 19.2};
  double question_min_s = 0.8;
  double question_max_s = 2.2;
  double question_occupancy = 0.02;  // expected fraction of audio inside questions
  double sigma = 0.5;                // audio noise level
  double corruption = 0.3;           // per-character text corruption rate
  uint64_t seed = 1;
  ScriptBank bank = ScriptBank::kQuestions;

  void validate() const;
};

// One latent event: a planted positive segment (cls 1..K-1, with text), a
// filler utterance (cls 0, with text) or silence (cls 0, empty text).
// Times sit on a 20 ms grid; coverage is closed on both ends and boundary
// ties go to the event that starts earlier.
struct ScriptEvent {
  int32_t cls = 0;
  float start_s = 0, stop_s = 0;
  std::string text;
};

// One emitted word of the simulated transcript, post-corruption.
struct WordSpan {
  std::string word;
  float start_s = 0, stop_s = 0;
};

struct SyntheticCall {
  Tensor x_a;                       // [T_a, 40] audio features at 100 fps
  Tensor x_s;                       // [T_a/2, 29] character softmax at 50 fps
  LabelSeq labels;                  // [T_a/8] class per model step
  std::vector<WordSpan> words;      // transcript words with timestamps
  std::vector<ScriptEvent> script;  // ground-truth event list
  float corruption = 0, sigma = 0;
  float duration_s = 0;             // scripted length; audio is padded to 8 | T_a

  int t_a() const { return x_a.rows(); }
  int question_count() const;
};

// 29-symbol alphabet: a..z, apostrophe, space, blank.
inline constexpr int kCharApostrophe = 26;
inline constexpr int kCharSpace = 27;
inline constexpr int kCharBlank = 28;
int char_index(char c);    // -1 for characters outside the alphabet
char index_char(int idx);  // blank renders as '_'

// Phrases a positive class can utter, and the per-class audio pattern on
// channels 0..25 (deterministic constants, independent of any config seed).
const std::vector<std::vector<std::string>>& phrase_bank(ScriptBank bank);
const std::vector<std::string>& filler_bank();  // class-neutral utterances
const std::vector<std::string>& class_names(ScriptBank bank);
std::vector<float> audio_class_template(int cls, ScriptBank bank);

// Generate one call from an already-forked per-call stream.
SyntheticCall gen_call(const GenConfig& cfg, Rng& rng);

// Generate cfg.n_calls calls; call i uses Rng(cfg.seed).fork(i), so serial
// and parallel generation agree bit for bit.
std::vector<SyntheticCall> gen_dataset(const GenConfig& cfg, int threads = 0);

// Same generator with the symptom vocabulary: no intonation ramp and a weak
// audio pattern on the positive segments.
std::vector<SyntheticCall> symptom_variant(GenConfig cfg, int threads = 0);

// Render the script's text as a character softmax at 50 fps. Each character
// with probability c is substituted, deleted, or blanked out; frames between
// characters and outside speech are blank-dominated. Returns the [t_s, 29]
// tensor and fills the surviving word spans.
Tensor simulate_asr(const std::vector<ScriptEvent>& script, int t_s, double corruption, Rng& rng,
                    std::vector<WordSpan>& words_out);

// Collapse an argmax decoding: repeated symbols merge, blanks separate.
std::string decode_argmax_text(const Tensor& x_s);

// Character error rate of the argmax decoding against the scripted text.
double measure_cer(const SyntheticCall& call);

// On-disk dataset: one file per call plus a plain-text manifest with 5-fold
// assignments stratified by question count (fold sizes differ by at most 1).
struct StoredDataset {
  std::vector<SyntheticCall> calls;
  std::vector<int> folds;  // fold id per call
};

void write_dataset(const std::vector<SyntheticCall>& calls, const std::string& dir,
                   int n_folds = 5);
StoredDataset read_dataset(const std::string& dir);

// Human-readable rendering of one call (script, labels, decoded text).
std::string describe_call(const SyntheticCall& call);

}  // namespace mqt
