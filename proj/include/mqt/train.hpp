#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mqt/adam.hpp"
#include "mqt/metrics.hpp"
#include "mqt/model.hpp"

namespace mqt {

struct TrainConfig {
  int batch_size = 6;  // use 1 for tensor fusion (memory)
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double l2 = 0.1;
  double multitask_beta = 0.5;
  double p_a = 0.1, p_s = 0.5;  // modality permutation probabilities
  bool permute_augment_on = false;
  int epochs = 30;
  uint64_t seed = 1;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const {
    if (batch_size < 1) throw MqtError("train config: batch_size must be >= 1");
    if (epochs < 0) throw MqtError("train config: epochs must be >= 0");
    if (lr <= 0) throw MqtError("train config: lr must be > 0");
    if (multitask_beta < 0 || multitask_beta > 1)
      throw MqtError("train config: multitask_beta must be in [0,1]");
    if (p_a < 0 || p_a > 1 || p_s < 0 || p_s > 1)
      throw MqtError("train config: permutation probabilities must be in [0,1]");
    if (l2 < 0) throw MqtError("train config: l2 must be >= 0");
  }
};

// Interpolated objective: beta=0 is the K-class loss alone, beta=1 the
// binary any-question loss alone.
inline double multitask_loss(double loss_k, double loss_bin, double beta) {
  if (beta < 0 || beta > 1) throw MqtError("multitask_loss: beta must be in [0,1]");
  return beta * loss_bin + (1.0 - beta) * loss_k;
}

// 1 wherever the gold label is any question class.
inline LabelSeq binary_labels(const LabelSeq& y) {
  LabelSeq b(y.size());
  for (size_t i = 0; i < y.size(); ++i) b[i] = y[i] != 0 ? 1 : 0;
  return b;
}

// lambda * 1/2 * sum of squares over learnable tensors (batch-norm scale and
// shift included, running stats not).
template <typename T>
double l2_term(const ModelParamsT<T>& params, double lambda) {
  double s = 0;
  params.for_each([&](const std::string&, const TensorT<T>& t, ParamKind k) {
    if (!is_learnable(k)) return;
    for (T v : t.data) s += static_cast<double>(v) * static_cast<double>(v);
  });
  return 0.5 * lambda * s;
}

template <typename T>
void add_l2_grads(const ModelParamsT<T>& params, double lambda, ModelParamsT<T>& grads) {
  auto p = params.learnable();
  auto g = grads.learnable();
  if (p.size() != g.size()) throw MqtError("l2: parameter/gradient structure mismatch");
  for (size_t i = 0; i < p.size(); ++i)
    for (size_t n = 0; n < p[i]->data.size(); ++n)
      g[i]->data[n] += static_cast<T>(lambda) * p[i]->data[n];
}

struct LossParts {
  double ce_k = 0, ce_bin = 0;
  double data = 0;  // multitask-weighted data term
};

// Forward, loss, and (optionally) backward for one example. No l2 here; the
// trainer adds it once per batch. In training mode dropout masks come from
// rng or are replayed from `frozen`.
template <typename T>
LossParts example_objective(const ModelParamsT<T>& params, const TensorT<T>& x_a,
                            const TensorT<T>& x_s, const LabelSeq& y, double beta_mt,
                            bool training, Rng* rng, ModelTraceT<T>* trace,
                            const ModelTraceT<T>* frozen, ModelParamsT<T>* grads) {
  ModelTraceT<T> local;
  ModelTraceT<T>& tr = trace ? *trace : local;
  model_forward(params, x_a, x_s, training, rng, &tr, frozen);
  if (static_cast<int>(y.size()) != tr.probs.rows())
    throw MqtError("loss: " + std::to_string(y.size()) + " labels vs " +
                   std::to_string(tr.probs.rows()) + " model steps");
  const bool mt = params.cfg.multitask;
  LossParts lp;
  TensorT<T> scratch;
  lp.ce_k = softmax_xent(tr.logits, y.data(), scratch);
  LabelSeq ybin;
  if (mt) {
    ybin = binary_labels(y);
    lp.ce_bin = softmax_xent(tr.bin_logits, ybin.data(), scratch);
    lp.data = multitask_loss(lp.ce_k, lp.ce_bin, beta_mt);
  } else {
    lp.data = lp.ce_k;
  }
  if (grads) {
    const T scale_k = static_cast<T>(mt ? 1.0 - beta_mt : 1.0);
    TensorT<T> dlogits = softmax_xent_backward(tr.probs, y.data(), scale_k);
    TensorT<T> dbin;
    if (mt) dbin = softmax_xent_backward(tr.bin_probs, ybin.data(), static_cast<T>(beta_mt));
    model_backward(params, tr, dlogits, mt ? &dbin : nullptr, *grads);
  }
  return lp;
}

// Plain evaluation-mode loss of one example (frozen batch-norm stats, no
// dropout).
template <typename T>
double example_loss(const ModelParamsT<T>& params, const TensorT<T>& x_a, const TensorT<T>& x_s,
                    const LabelSeq& y, double beta_mt = 0.5) {
  return example_objective<T>(params, x_a, x_s, y, beta_mt, false, nullptr, nullptr, nullptr,
                              nullptr)
      .data;
}

template <typename T>
LabelSeq predict_labels(const ModelParamsT<T>& params, const TensorT<T>& x_a,
                        const TensorT<T>& x_s) {
  const TensorT<T> probs = model_forward<T>(params, x_a, x_s, false, nullptr, nullptr);
  LabelSeq y(static_cast<size_t>(probs.rows()));
  for (int t = 0; t < probs.rows(); ++t) y[static_cast<size_t>(t)] = argmax_row(probs, t);
  return y;
}

// Batch means and biased variances of every batch-norm layer, in parameter
// order; the trainer folds them into the running stats example by example.
template <typename T>
struct BnSnapshot {
  std::vector<TensorT<T>> means, vars;
};

template <typename T>
BnSnapshot<T> collect_bn_stats(const ModelTraceT<T>& tr) {
  BnSnapshot<T> s;
  auto grab = [&](const std::vector<LayerTraceT<T>>& layers) {
    for (const auto& l : layers) {
      s.means.push_back(l.bn.mean);
      s.vars.push_back(l.bn.var);
    }
  };
  grab(tr.enc_a);
  grab(tr.enc_s);
  grab(tr.trunk);
  return s;
}

template <typename T>
void commit_bn_stats(ModelParamsT<T>& params, const BnSnapshot<T>& s, T momentum) {
  std::vector<BnParamT<T>*> layers;
  for (auto& l : params.enc_a) layers.push_back(&l.bn);
  for (auto& l : params.enc_s) layers.push_back(&l.bn);
  for (auto& l : params.trunk) layers.push_back(&l.bn);
  if (layers.size() != s.means.size()) throw MqtError("bn commit: layer count mismatch");
  for (size_t i = 0; i < layers.size(); ++i) {
    BnParamT<T>& bn = *layers[i];
    for (size_t c = 0; c < bn.running_mean.data.size(); ++c) {
      bn.running_mean.data[c] =
          momentum * bn.running_mean.data[c] + (T(1) - momentum) * s.means[i].data[c];
      bn.running_var.data[c] =
          momentum * bn.running_var.data[c] + (T(1) - momentum) * s.vars[i].data[c];
    }
  }
}

// Owning minibatch; augmentation may replace modality tensors.
struct Batch {
  std::vector<Tensor> x_a, x_s;
  std::vector<LabelSeq> y;
  size_t size() const { return y.size(); }
};

// With probability p_a the audio time axis of an example is shuffled by a
// random permutation (labels untouched); independently with p_s for text.
Batch permute_augment(Batch b, double p_a, double p_s, Rng& rng);

// Permutes the rows of one modality tensor.
Tensor permute_time(const Tensor& x, Rng& rng);

struct TrainExample {
  const Tensor* x_a = nullptr;
  const Tensor* x_s = nullptr;
  const LabelSeq* y = nullptr;
};

struct EpochLog {
  int epoch = 0;
  double train_ce = 0;    // mean per-example data loss over the epoch
  double l2 = 0;          // regularizer value at epoch end
  double val_ce = 0;
  double val_timestep_f1 = 0;
  double val_instance_f1 = 0;
};

struct FitResult {
  ModelParams params;  // best validation instance-F1 (final epoch if no val)
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val_f1 = -1;
};

std::vector<LabelSeq> predict_dataset(const ModelParams& params,
                                      const std::vector<TrainExample>& set, int threads = 0);

// Mini-batch Adam over whole calls. Per-example gradients are computed in
// parallel but summed in example order, so results are independent of the
// thread count; everything downstream of `seed` is deterministic.
FitResult fit(const ModelConfig& mcfg, const TrainConfig& tcfg,
              const std::vector<TrainExample>& train_set,
              const std::vector<TrainExample>& val_set,
              const std::function<void(const EpochLog&)>& on_epoch = nullptr);

}  // namespace mqt
