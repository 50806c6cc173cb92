#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mqt/model.hpp"
#include "mqt/synthdata.hpp"
#include "mqt/tensor.hpp"

namespace mqt {

// Bag-of-words text classifier: chi-squared-selected TF-IDF n-gram features
// feeding the same dense trunk the main model uses, evaluated over the
// transcript in a sliding window with a stride of one word.

struct BowFeature {
  std::string gram;
  int group = 0;  // 0: word uni/bigram, 1: character 3/4/5-gram
  double chi2 = 0;
  double idf = 0;
};

struct BowVocab {
  std::vector<BowFeature> features;  // word group first, each sorted by (-chi2, gram)
  // lookup key is the group digit + gram: the same string can be a word and a
  // character gram, and the two are distinct features
  std::unordered_map<std::string, int> index;

  int dim() const { return static_cast<int>(features.size()); }
  void rebuild_index();
};

// Select the top `per_group` features of each group by the chi-squared score
// between binary feature presence and the document label, ties broken
// lexicographically. IDF comes from the same documents and nothing else.
BowVocab build_vocab(const std::vector<std::string>& texts, const LabelSeq& labels,
                     int per_group = 500);

// L2-normalized TF-IDF vector of one document; [n, dim] for a batch.
Tensor featurize(const std::string& text, const BowVocab& vocab);
Tensor featurize_batch(const std::vector<std::string>& texts, const BowVocab& vocab);

// Plain-text serialization: one feature per line (group, chi2, idf, gram).
void save_vocab(const BowVocab& vocab, const std::string& path);
BowVocab load_vocab(const std::string& path);

struct BowTrainConfig {
  int epochs = 40;
  int batch_size = 32;
  double lr = 1e-3;
  double dropout = 0.3;
  double l2 = 0.05;
  int hidden = 256;
  int layers = 3;
  int num_classes = 6;
  // faster-tracking running stats than the main model: baseline training
  // runs are far shorter, and at 0.99 the frozen stats lag the weights
  double bn_momentum = 0.9;
  uint64_t seed = 1;

  void validate() const;
};

struct BowClassifier {
  std::vector<DenseLayer> trunk;
  Tensor head_w, head_b;
  int in_dim = 0;
  int k = 0;

  Tensor predict_proba(const Tensor& x) const;  // [n, in_dim] -> [n, k]
  LabelSeq predict(const Tensor& x) const;
};

// Mini-batch Adam on TF-IDF rows; single-threaded and deterministic in the
// seed. Throws if the loss leaves the finite range. epoch_ce (optional)
// receives the mean training cross-entropy per epoch.
BowClassifier fnn_train(const Tensor& x, const LabelSeq& y, const BowTrainConfig& cfg,
                        std::vector<double>* epoch_ce = nullptr);

// One classification window: consecutive transcript words joined by spaces.
struct WindowExample {
  std::string text;
  int32_t label = 0;
};

// Training windows slide one word at a time and are cut at label-change
// boundaries, so every window's covered steps share one label (the target).
// A word belongs to the step holding its center time.
std::vector<WindowExample> training_windows(const std::vector<WordSpan>& words,
                                            const LabelSeq& labels, double window_s);

// Classify every window (stride one word, span window_s) and map the verdicts
// back to the steps each window covers by majority vote; ties and uncovered
// steps give None. Output always has exactly t_m entries.
LabelSeq sliding_eval(const BowClassifier& clf, const BowVocab& vocab,
                      const std::vector<WordSpan>& words, double window_s, int t_m);

}  // namespace mqt
