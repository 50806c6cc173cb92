#include "mqt/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "mqt/adam.hpp"
#include "mqt/common.hpp"
#include "mqt/ops.hpp"

namespace mqt {

namespace {

constexpr float kEps = 1e-5f;  // batchnorm epsilon, same as the main model

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

// candidate grams of one document, as presence sets per group
void word_grams(const std::string& text, const std::function<void(const std::string&)>& emit) {
  const std::vector<std::string> toks = split_words(text);
  for (const std::string& t : toks) emit(t);
  for (size_t i = 0; i + 1 < toks.size(); ++i) emit(toks[i] + ' ' + toks[i + 1]);
}

void char_grams(const std::string& text, const std::function<void(const std::string&)>& emit) {
  for (int n : {3, 4, 5})
    for (size_t i = 0; i + static_cast<size_t>(n) <= text.size(); ++i)
      emit(text.substr(i, static_cast<size_t>(n)));
}

void each_gram(const std::string& text, int group,
               const std::function<void(const std::string&)>& emit) {
  if (group == 0)
    word_grams(text, emit);
  else
    char_grams(text, emit);
}

// chi-squared between binary presence and the document label
double chi2_presence(const std::vector<int>& present_per_class,
                     const std::vector<int>& docs_per_class, int df, int n) {
  double stat = 0;
  const int absent_total = n - df;
  for (size_t c = 0; c < docs_per_class.size(); ++c) {
    const double nc = docs_per_class[c];
    const double e1 = static_cast<double>(df) * nc / n;
    const double e0 = static_cast<double>(absent_total) * nc / n;
    const double o1 = present_per_class[c];
    const double o0 = nc - o1;
    if (e1 > 0) stat += (o1 - e1) * (o1 - e1) / e1;
    if (e0 > 0) stat += (o0 - e0) * (o0 - e0) / e0;
  }
  return stat;
}

}  // namespace

void BowVocab::rebuild_index() {
  index.clear();
  for (size_t i = 0; i < features.size(); ++i)
    index[static_cast<char>('0' + features[i].group) + features[i].gram] = static_cast<int>(i);
}

BowVocab build_vocab(const std::vector<std::string>& texts, const LabelSeq& labels,
                     int per_group) {
  if (texts.size() != labels.size())
    throw MqtError("build_vocab: " + std::to_string(texts.size()) + " texts but " +
                   std::to_string(labels.size()) + " labels");
  if (texts.empty()) throw MqtError("build_vocab: empty corpus");
  if (per_group < 1) throw MqtError("build_vocab: per_group must be >= 1");

  // compact the label set; chi-squared needs at least two classes
  std::map<int32_t, int> class_of;
  for (int32_t y : labels)
    if (!class_of.count(y)) {
      const int next = static_cast<int>(class_of.size());
      class_of[y] = next;
    }
  if (class_of.size() < 2)
    throw MqtError("build_vocab: corpus has a single class; chi-squared is undefined");
  const int n = static_cast<int>(texts.size());
  std::vector<int> docs_per_class(class_of.size(), 0);
  for (int32_t y : labels) ++docs_per_class[static_cast<size_t>(class_of[y])];

  BowVocab vocab;
  for (int group = 0; group < 2; ++group) {
    // document frequency and per-class presence of every candidate
    std::map<std::string, std::vector<int>> present;  // ordered: ties resolve lexicographically
    for (size_t d = 0; d < texts.size(); ++d) {
      std::set<std::string> seen;
      each_gram(texts[d], group, [&](const std::string& g) { seen.insert(g); });
      const int cls = class_of[labels[d]];
      for (const std::string& g : seen) {
        auto it = present.find(g);
        if (it == present.end())
          it = present.emplace(g, std::vector<int>(class_of.size(), 0)).first;
        ++it->second[static_cast<size_t>(cls)];
      }
    }

    std::vector<BowFeature> scored;
    for (const auto& [gram, per_class] : present) {
      int df = 0;
      for (int c : per_class) df += c;
      BowFeature f;
      f.gram = gram;
      f.group = group;
      f.chi2 = chi2_presence(per_class, docs_per_class, df, n);
      f.idf = std::log((1.0 + n) / (1.0 + df)) + 1.0;
      scored.push_back(std::move(f));
    }
    std::stable_sort(scored.begin(), scored.end(), [](const BowFeature& a, const BowFeature& b) {
      if (a.chi2 != b.chi2) return a.chi2 > b.chi2;
      return a.gram < b.gram;
    });
    const size_t keep = std::min(scored.size(), static_cast<size_t>(per_group));
    vocab.features.insert(vocab.features.end(), scored.begin(),
                          scored.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  vocab.rebuild_index();
  return vocab;
}

Tensor featurize(const std::string& text, const BowVocab& vocab) {
  Tensor v({vocab.dim()});
  for (int group = 0; group < 2; ++group)
    each_gram(text, group, [&](const std::string& g) {
      const auto it = vocab.index.find(static_cast<char>('0' + group) + g);
      if (it != vocab.index.end()) v.at(it->second) += 1.0f;
    });
  double norm = 0;
  for (int i = 0; i < vocab.dim(); ++i) {
    v.at(i) *= static_cast<float>(vocab.features[static_cast<size_t>(i)].idf);
    norm += static_cast<double>(v.at(i)) * v.at(i);
  }
  if (norm > 0) {
    const float inv = static_cast<float>(1.0 / std::sqrt(norm));
    for (float& x : v.data) x *= inv;
  }
  return v;
}

Tensor featurize_batch(const std::vector<std::string>& texts, const BowVocab& vocab) {
  Tensor m({static_cast<int>(texts.size()), vocab.dim()});
  for (size_t i = 0; i < texts.size(); ++i) {
    const Tensor v = featurize(texts[i], vocab);
    std::copy(v.data.begin(), v.data.end(), m.row(static_cast<int>(i)));
  }
  return m;
}

void save_vocab(const BowVocab& vocab, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw MqtError("cannot create " + path);
  os << "bow_vocab 1 " << vocab.dim() << "\n";
  os.precision(17);
  for (const BowFeature& f : vocab.features)
    os << f.group << '\t' << f.chi2 << '\t' << f.idf << '\t' << f.gram << "\n";
  if (!os) throw MqtError("failed while writing " + path);
}

BowVocab load_vocab(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MqtError("cannot open " + path);
  std::string magic;
  int version = 0, count = 0;
  is >> magic >> version >> count;
  if (magic != "bow_vocab") throw MqtError(path + " is not a vocabulary file");
  if (version != 1) throw MqtError(path + ": unsupported vocabulary version");
  is.ignore();  // trailing newline of the header

  BowVocab vocab;
  std::string line;
  for (int i = 0; i < count; ++i) {
    if (!std::getline(is, line))
      throw MqtError(path + ": vocabulary truncated at line " + std::to_string(i + 2));
    BowFeature f;
    std::istringstream ls(line);
    char tab = 0;
    if (!(ls >> f.group >> f.chi2 >> f.idf) || !ls.get(tab) || tab != '\t')
      throw MqtError(path + ": malformed feature at line " + std::to_string(i + 2));
    std::getline(ls, f.gram);
    if (f.gram.empty()) throw MqtError(path + ": empty gram at line " + std::to_string(i + 2));
    vocab.features.push_back(std::move(f));
  }
  vocab.rebuild_index();
  return vocab;
}

// ---------------------------------------------------------------------------
// FNN over TF-IDF rows: the main model's trunk recipe on non-sequential input
// ---------------------------------------------------------------------------

void BowTrainConfig::validate() const {
  if (epochs < 1) throw MqtError("bow train: epochs must be >= 1");
  if (batch_size < 1) throw MqtError("bow train: batch_size must be >= 1");
  if (!(lr > 0)) throw MqtError("bow train: lr must be positive");
  if (dropout < 0 || dropout >= 1) throw MqtError("bow train: dropout must be in [0, 1)");
  if (l2 < 0) throw MqtError("bow train: l2 must be >= 0");
  if (hidden < 1 || layers < 1) throw MqtError("bow train: trunk shape is degenerate");
  if (num_classes < 2) throw MqtError("bow train: need at least two classes");
}

Tensor BowClassifier::predict_proba(const Tensor& x) const {
  require_shape(x, {-1, in_dim}, "bow features");
  Tensor h = x;
  for (const DenseLayer& layer : trunk)
    h = relu(batchnorm_infer(dense(h, layer.w, layer.b), layer.bn, kEps));
  return softmax_rows(dense(h, head_w, head_b));
}

LabelSeq BowClassifier::predict(const Tensor& x) const {
  const Tensor probs = predict_proba(x);
  LabelSeq y(static_cast<size_t>(probs.rows()));
  for (int t = 0; t < probs.rows(); ++t) y[static_cast<size_t>(t)] = argmax_row(probs, t);
  return y;
}

BowClassifier fnn_train(const Tensor& x, const LabelSeq& y, const BowTrainConfig& cfg,
                        std::vector<double>* epoch_ce) {
  cfg.validate();
  const int n = x.rows();
  if (n < 1) throw MqtError("bow train: empty feature matrix");
  if (static_cast<size_t>(n) != y.size())
    throw MqtError("bow train: " + std::to_string(n) + " rows but " + std::to_string(y.size()) +
                   " labels");
  for (int32_t v : y)
    if (v < 0 || v >= cfg.num_classes)
      throw MqtError("bow train: label " + std::to_string(v) + " out of range");

  BowClassifier clf;
  clf.in_dim = x.cols();
  clf.k = cfg.num_classes;
  const Rng base(cfg.seed);
  auto init_weight = [&](Tensor& w, const std::string& name, int fan_in) {
    Rng r = base.fork(fnv1a64_str(name));
    const double lim = std::sqrt(6.0 / fan_in);
    for (float& v : w.data) v = static_cast<float>(r.uniform(-lim, lim));
  };
  int in_dim = clf.in_dim;
  for (int i = 0; i < cfg.layers; ++i) {
    DenseLayer layer;
    layer.w = Tensor({in_dim, cfg.hidden});
    init_weight(layer.w, "bow.dense" + std::to_string(i) + ".w", in_dim);
    layer.b = Tensor({cfg.hidden});
    layer.bn = BnParam::init(cfg.hidden);
    clf.trunk.push_back(std::move(layer));
    in_dim = cfg.hidden;
  }
  clf.head_w = Tensor({in_dim, cfg.num_classes});
  init_weight(clf.head_w, "bow.head.w", in_dim);
  clf.head_b = Tensor({cfg.num_classes});

  std::vector<Tensor*> params;
  for (DenseLayer& l : clf.trunk) {
    params.push_back(&l.w);
    params.push_back(&l.b);
    params.push_back(&l.bn.gamma);
    params.push_back(&l.bn.beta);
  }
  params.push_back(&clf.head_w);
  params.push_back(&clf.head_b);

  AdamState adam;
  {
    std::vector<const Tensor*> cp(params.begin(), params.end());
    adam.init(cp);
  }
  AdamConfig acfg;
  acfg.lr = cfg.lr;

  const float momentum = static_cast<float>(cfg.bn_momentum);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng = base.fork(1000 + 2 * static_cast<uint64_t>(epoch));
    Rng drop_rng = base.fork(1001 + 2 * static_cast<uint64_t>(epoch));
    const auto order = order_rng.permutation(n);
    double ce_sum = 0;

    for (int start = 0; start < n; start += cfg.batch_size) {
      const int m = std::min(cfg.batch_size, n - start);
      Tensor xb({m, clf.in_dim});
      std::vector<int32_t> yb(static_cast<size_t>(m));
      for (int i = 0; i < m; ++i) {
        const int src = order[static_cast<size_t>(start + i)];
        std::copy(x.row(src), x.row(src) + clf.in_dim, xb.row(i));
        yb[static_cast<size_t>(i)] = y[static_cast<size_t>(src)];
      }

      // forward with batch statistics
      struct LayerTape {
        Tensor x_in, z, bn_out, act, mask;
        BnCacheT<float> bn;
      };
      std::vector<LayerTape> tape(clf.trunk.size());
      Tensor h = xb;
      for (size_t li = 0; li < clf.trunk.size(); ++li) {
        DenseLayer& layer = clf.trunk[li];
        LayerTape& t = tape[li];
        t.x_in = h;
        t.z = dense(h, layer.w, layer.b);
        t.bn_out = batchnorm_train(t.z, layer.bn, momentum, kEps, t.bn);
        t.act = relu(t.bn_out);
        t.mask = dropout_mask<float>(t.act.shape, static_cast<float>(cfg.dropout), drop_rng);
        h = dropout_apply(t.act, t.mask);
      }
      const Tensor logits = dense(h, clf.head_w, clf.head_b);
      Tensor probs;
      const double ce = softmax_xent(logits, yb.data(), probs);
      if (!std::isfinite(ce))
        throw MqtError("bow training diverged: non-finite loss at epoch " +
                       std::to_string(epoch + 1) + ", batch starting at example " +
                       std::to_string(start));
      ce_sum += ce * m;

      // backward
      std::vector<Tensor> grads(params.size());
      for (size_t i = 0; i < params.size(); ++i) grads[i] = Tensor(params[i]->shape);
      size_t gi = clf.trunk.size() * 4;
      const Tensor dlogits = softmax_xent_backward(probs, yb.data(), 1.0f);
      Tensor d = dense_backward(h, clf.head_w, dlogits, grads[gi], grads[gi + 1]);
      for (size_t li = clf.trunk.size(); li-- > 0;) {
        DenseLayer& layer = clf.trunk[li];
        LayerTape& t = tape[li];
        gi = li * 4;
        d = dropout_apply(d, t.mask);
        d = relu_backward(d, t.act);
        d = batchnorm_backward(d, layer.bn, t.bn, grads[gi + 2], grads[gi + 3]);
        d = dense_backward(t.x_in, layer.w, d, grads[gi], grads[gi + 1]);
      }
      for (size_t i = 0; i < params.size(); ++i) {
        const float lam = static_cast<float>(cfg.l2);
        for (size_t v = 0; v < grads[i].data.size(); ++v)
          grads[i].data[v] += lam * params[i]->data[v];
      }

      // commit running statistics, then the optimizer step
      for (size_t li = 0; li < clf.trunk.size(); ++li) {
        clf.trunk[li].bn.running_mean = tape[li].bn.new_running_mean;
        clf.trunk[li].bn.running_var = tape[li].bn.new_running_var;
      }
      std::vector<const Tensor*> gp;
      for (const Tensor& g : grads) gp.push_back(&g);
      adam.step(acfg, params, gp);
    }
    if (epoch_ce) epoch_ce->push_back(ce_sum / n);
  }
  return clf;
}

// ---------------------------------------------------------------------------
// Sliding windows
// ---------------------------------------------------------------------------

namespace {

void check_window(double window_s) {
  if (!(window_s >= 3.0 && window_s <= 9.0))
    throw MqtError("window must be between 3 and 9 seconds, got " + std::to_string(window_s));
}

// step whose span holds the word's center time
int word_step(const WordSpan& w, int t_m) {
  const double center = 0.5 * (static_cast<double>(w.start_s) + w.stop_s);
  const int step = static_cast<int>(std::floor(center / kSecondsPerStep));
  return std::clamp(step, 0, t_m - 1);
}

std::string join_words(const std::vector<WordSpan>& words, size_t from, size_t to) {
  std::string out;
  for (size_t i = from; i <= to; ++i) {
    if (!out.empty()) out += ' ';
    out += words[i].word;
  }
  return out;
}

}  // namespace

std::vector<WindowExample> training_windows(const std::vector<WordSpan>& words,
                                            const LabelSeq& labels, double window_s) {
  check_window(window_s);
  const int t_m = static_cast<int>(labels.size());
  if (t_m == 0) throw MqtError("training_windows: empty label sequence");
  std::vector<WindowExample> out;
  for (size_t i = 0; i < words.size(); ++i) {
    const int32_t label = labels[static_cast<size_t>(word_step(words[i], t_m))];
    size_t j = i;
    while (j + 1 < words.size() &&
           static_cast<double>(words[j + 1].start_s) - words[i].start_s < window_s &&
           labels[static_cast<size_t>(word_step(words[j + 1], t_m))] == label)
      ++j;
    out.push_back({join_words(words, i, j), label});
  }
  return out;
}

LabelSeq sliding_eval(const BowClassifier& clf, const BowVocab& vocab,
                      const std::vector<WordSpan>& words, double window_s, int t_m) {
  check_window(window_s);
  if (t_m < 1) throw MqtError("sliding_eval: t_m must be >= 1");
  LabelSeq out(static_cast<size_t>(t_m), 0);
  if (words.empty()) return out;

  std::vector<std::string> texts;
  for (size_t i = 0; i < words.size(); ++i) {
    size_t j = i;
    while (j + 1 < words.size() &&
           static_cast<double>(words[j + 1].start_s) - words[i].start_s < window_s)
      ++j;
    texts.push_back(join_words(words, i, j));
  }
  const LabelSeq verdicts = clf.predict(featurize_batch(texts, vocab));

  // each window votes on the steps whose centers it spans
  Tensor votes({t_m, clf.k});
  for (size_t i = 0; i < words.size(); ++i) {
    const double lo = words[i].start_s;
    const double hi = lo + window_s;
    const int first = std::max(0, static_cast<int>(std::ceil(lo / kSecondsPerStep - 0.5)));
    for (int s = first; s < t_m; ++s) {
      const double center = (s + 0.5) * kSecondsPerStep;
      if (center >= hi) break;
      votes.at(s, verdicts[i]) += 1.0f;
    }
  }
  for (int s = 0; s < t_m; ++s) {
    int best = 0, runner = 0;
    for (int c = 1; c < clf.k; ++c)
      if (votes.at(s, c) > votes.at(s, best)) best = c;
    for (int c = 0; c < clf.k; ++c)
      if (c != best && votes.at(s, c) == votes.at(s, best)) runner = 1;
    out[static_cast<size_t>(s)] = (votes.at(s, best) > 0 && !runner) ? best : 0;
  }
  return out;
}

}  // namespace mqt
