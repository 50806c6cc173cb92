#include "mqt/train.hpp"

#include <algorithm>
#include <cmath>

#include "mqt/parallel.hpp"

namespace mqt {

Tensor permute_time(const Tensor& x, Rng& rng) {
  const auto perm = rng.permutation(x.rows());
  Tensor out(x.shape);
  for (int i = 0; i < x.rows(); ++i) {
    const float* src = x.row(perm[static_cast<size_t>(i)]);
    std::copy(src, src + x.cols(), out.row(i));
  }
  return out;
}

Batch permute_augment(Batch b, double p_a, double p_s, Rng& rng) {
  for (size_t i = 0; i < b.size(); ++i) {
    if (rng.bernoulli(p_a) && b.x_a[i].rows() > 1) b.x_a[i] = permute_time(b.x_a[i], rng);
    if (rng.bernoulli(p_s) && b.x_s[i].rows() > 1) b.x_s[i] = permute_time(b.x_s[i], rng);
  }
  return b;
}

std::vector<LabelSeq> predict_dataset(const ModelParams& params,
                                      const std::vector<TrainExample>& set, int threads) {
  std::vector<LabelSeq> out(set.size());
  parallel_for(static_cast<int>(set.size()), threads, [&](int i) {
    out[static_cast<size_t>(i)] =
        predict_labels(params, *set[static_cast<size_t>(i)].x_a, *set[static_cast<size_t>(i)].x_s);
  });
  return out;
}

namespace {

// Distinct fork streams for the independent random decisions of a run.
constexpr uint64_t kStreamOrder = 0x0bde7a11u;
constexpr uint64_t kStreamAugment = 0x9a6c33e1u;
constexpr uint64_t kStreamDropout = 0x51f2b7c5u;

double mean_val_ce(const ModelParams& params, const std::vector<TrainExample>& set,
                   double beta_mt, int threads) {
  if (set.empty()) return 0.0;
  std::vector<double> losses(set.size());
  parallel_for(static_cast<int>(set.size()), threads, [&](int i) {
    const TrainExample& e = set[static_cast<size_t>(i)];
    losses[static_cast<size_t>(i)] = example_loss(params, *e.x_a, *e.x_s, *e.y, beta_mt);
  });
  double s = 0;
  for (double l : losses) s += l;
  return s / static_cast<double>(losses.size());
}

}  // namespace

FitResult fit(const ModelConfig& mcfg, const TrainConfig& tcfg,
              const std::vector<TrainExample>& train_set,
              const std::vector<TrainExample>& val_set,
              const std::function<void(const EpochLog&)>& on_epoch) {
  mcfg.validate();
  tcfg.validate();
  if (train_set.empty()) throw MqtError("fit: empty training set");

  ModelParams params = ModelParams::init(mcfg);
  AdamState adam;
  {
    std::vector<const Tensor*> ptrs;
    for (Tensor* t : params.learnable()) ptrs.push_back(t);
    adam.init(ptrs);
  }
  AdamConfig acfg;
  acfg.lr = tcfg.lr;
  acfg.beta1 = tcfg.beta1;
  acfg.beta2 = tcfg.beta2;
  acfg.eps = tcfg.adam_eps;

  const Rng root(tcfg.seed);
  const int n = static_cast<int>(train_set.size());
  const float momentum = mcfg.bn_momentum;

  FitResult res;
  ModelParams best = params;

  std::vector<LabelSeq> val_gold;
  for (const TrainExample& e : val_set) val_gold.push_back(*e.y);

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    Rng order_rng = root.fork(kStreamOrder + 2 * static_cast<uint64_t>(epoch));
    Rng aug_rng = root.fork(kStreamAugment + 2 * static_cast<uint64_t>(epoch));
    const auto order = order_rng.permutation(n);

    double epoch_ce_sum = 0;
    for (int start = 0; start < n; start += tcfg.batch_size) {
      const int m = std::min(tcfg.batch_size, n - start);
      Batch batch;
      for (int i = 0; i < m; ++i) {
        const TrainExample& e = train_set[static_cast<size_t>(order[static_cast<size_t>(start + i)])];
        batch.x_a.push_back(*e.x_a);
        batch.x_s.push_back(*e.x_s);
        batch.y.push_back(*e.y);
      }
      if (tcfg.permute_augment_on) batch = permute_augment(std::move(batch), tcfg.p_a, tcfg.p_s, aug_rng);

      // Per-example gradients in parallel; reduction below stays in example
      // order so any thread count gives identical results.
      std::vector<ModelParams> grads(static_cast<size_t>(m), params.zeros_clone());
      std::vector<BnSnapshot<float>> stats(static_cast<size_t>(m));
      std::vector<LossParts> parts(static_cast<size_t>(m));
      parallel_for(m, tcfg.threads, [&](int i) {
        Rng ex_rng = root.fork(kStreamDropout +
                               (static_cast<uint64_t>(epoch) << 32) +
                               static_cast<uint64_t>(start + i));
        ModelTraceT<float> trace;
        parts[static_cast<size_t>(i)] = example_objective<float>(
            params, batch.x_a[static_cast<size_t>(i)], batch.x_s[static_cast<size_t>(i)],
            batch.y[static_cast<size_t>(i)], tcfg.multitask_beta, true, &ex_rng, &trace, nullptr,
            &grads[static_cast<size_t>(i)]);
        stats[static_cast<size_t>(i)] = collect_bn_stats(trace);
      });

      ModelParams& total = grads[0];
      for (int i = 1; i < m; ++i) {
        auto dst = total.learnable();
        auto src = grads[static_cast<size_t>(i)].learnable();
        for (size_t t = 0; t < dst.size(); ++t)
          for (size_t v = 0; v < dst[t]->data.size(); ++v) dst[t]->data[v] += src[t]->data[v];
      }
      const float inv_m = 1.0f / static_cast<float>(m);
      for (Tensor* t : total.learnable())
        for (float& v : t->data) v *= inv_m;
      add_l2_grads(params, tcfg.l2, total);

      double batch_ce = 0;
      for (int i = 0; i < m; ++i) batch_ce += parts[static_cast<size_t>(i)].data;
      epoch_ce_sum += batch_ce;
      if (!std::isfinite(batch_ce))
        throw MqtError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                       ", batch starting at example " + std::to_string(start));

      for (int i = 0; i < m; ++i) commit_bn_stats(params, stats[static_cast<size_t>(i)], momentum);

      std::vector<Tensor*> pp = params.learnable();
      std::vector<const Tensor*> gg;
      for (Tensor* t : total.learnable()) gg.push_back(t);
      adam.step(acfg, pp, gg);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_ce = epoch_ce_sum / n;
    log.l2 = l2_term(params, tcfg.l2);
    if (!val_set.empty()) {
      log.val_ce = mean_val_ce(params, val_set, tcfg.multitask_beta, tcfg.threads);
      const auto preds = predict_dataset(params, val_set, tcfg.threads);
      log.val_timestep_f1 = timestep_prf(preds, val_gold, mcfg.num_classes).macro_f1;
      log.val_instance_f1 = instance_prf(preds, val_gold, mcfg.num_classes).macro_f1;
      if (log.val_instance_f1 > res.best_val_f1) {
        res.best_val_f1 = log.val_instance_f1;
        res.best_epoch = epoch;
        best = params;
      }
    }
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }

  res.params = val_set.empty() ? params : best;
  if (val_set.empty()) res.best_epoch = tcfg.epochs - 1;
  return res;
}

}  // namespace mqt
