#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mqt/gradcheck.hpp"
#include "mqt/train.hpp"

using namespace mqt;

namespace {

ModelConfig grad_config() {
  ModelConfig cfg;
  cfg.audio_channels = {3, 4, 4};
  cfg.text_channels = {4, 4};
  cfg.trunk_units = 6;
  cfg.trunk_layers = 2;
  cfg.init_seed = 5;
  return cfg;
}

TensorD random_tensor_d(std::vector<int> shape, Rng& rng, double lo = -1, double hi = 1) {
  TensorD t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

Tensor random_tensor_f(std::vector<int> shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Finite-difference check of the complete training objective (data term,
// multitask weighting, l2) in 64-bit with frozen dropout masks.
GradCheckReport full_model_gradcheck(ModelConfig cfg, double beta, double lambda, uint64_t seed,
                                     size_t stride = 1) {
  using PD = ModelParamsT<double>;
  PD params = PD::init(cfg);
  Rng rng(seed);
  TensorD x_a = random_tensor_d({48, kAudioDim}, rng);
  TensorD x_s = random_tensor_d({24, kTextDim}, rng);
  LabelSeq y(6);
  for (auto& v : y) v = static_cast<int32_t>(rng.randint(cfg.num_classes));

  // one stochastic forward to capture dropout masks, then everything replays
  ModelTraceT<double> frozen;
  Rng drop_rng = rng.fork(7);
  example_objective<double>(params, x_a, x_s, y, beta, true, &drop_rng, &frozen, nullptr, nullptr);

  PD grads = params.zeros_clone();
  example_objective<double>(params, x_a, x_s, y, beta, true, nullptr, nullptr, &frozen, &grads);
  add_l2_grads(params, lambda, grads);

  std::vector<double> theta, analytic;
  params.for_each([&](const std::string&, const TensorD& t, ParamKind k) {
    if (is_learnable(k)) theta.insert(theta.end(), t.data.begin(), t.data.end());
  });
  grads.for_each([&](const std::string&, const TensorD& t, ParamKind k) {
    if (is_learnable(k)) analytic.insert(analytic.end(), t.data.begin(), t.data.end());
  });
  REQUIRE(theta.size() == analytic.size());

  auto loss = [&](const std::vector<double>& th) {
    PD p2 = params;
    size_t off = 0;
    p2.for_each([&](const std::string&, TensorD& t, ParamKind k) {
      if (!is_learnable(k)) return;
      for (double& v : t.data) v = th[off++];
    });
    const LossParts lp =
        example_objective<double>(p2, x_a, x_s, y, beta, true, nullptr, nullptr, &frozen, nullptr);
    return lp.data + l2_term(p2, lambda);
  };
  return grad_check(loss, theta, analytic, 1e-4, 0, stride);
}

// Trivially separable data: one-hot class bias on a few channels, repeated at
// both modality rates.
void make_easy_call(int t_m, uint64_t seed, int k, Tensor& x_a, Tensor& x_s, LabelSeq& y) {
  Rng rng(seed);
  y.resize(static_cast<size_t>(t_m));
  for (int i = 0; i < t_m; ++i) y[static_cast<size_t>(i)] = static_cast<int32_t>(rng.randint(k));
  x_a = Tensor({t_m * 8, kAudioDim});
  x_s = Tensor({t_m * 4, kTextDim});
  for (int i = 0; i < t_m * 8; ++i) {
    const int32_t cls = y[static_cast<size_t>(i / 8)];
    for (int c = 0; c < kAudioDim; ++c)
      x_a.at(i, c) = static_cast<float>(0.1 * rng.normal() + (c == cls ? 3.0 : 0.0));
  }
  for (int i = 0; i < t_m * 4; ++i) {
    const int32_t cls = y[static_cast<size_t>(i / 4)];
    for (int c = 0; c < kTextDim; ++c)
      x_s.at(i, c) = static_cast<float>(0.1 * rng.normal() + (c == cls ? 3.0 : 0.0));
  }
}

}  // namespace

TEST_CASE("multitask loss interpolates linearly between the two tasks") {
  CHECK(multitask_loss(2.0, 4.0, 0.0) == 2.0);
  CHECK(multitask_loss(2.0, 4.0, 1.0) == 4.0);
  CHECK(multitask_loss(2.0, 4.0, 0.5) == 3.0);
  // linear in beta
  const double l0 = multitask_loss(1.7, 0.4, 0.0), l1 = multitask_loss(1.7, 0.4, 1.0);
  for (double b : {0.1, 0.25, 0.6, 0.9})
    CHECK(multitask_loss(1.7, 0.4, b) == doctest::Approx(l0 + b * (l1 - l0)).epsilon(1e-12));
  CHECK_THROWS_AS(multitask_loss(1, 1, 1.5), MqtError);
}

TEST_CASE("binary labels mark any question class") {
  const LabelSeq y{0, 1, 0, 5, 3, 0};
  CHECK(binary_labels(y) == LabelSeq{0, 1, 0, 1, 1, 0});
}

TEST_CASE("uniform model gives ln K loss for any labels") {
  ModelConfig cfg = grad_config();
  ModelParams p = ModelParams::init(cfg);
  // zero all weights: logits collapse to the zero-bias head output
  p.for_each([](const std::string&, Tensor& t, ParamKind k) {
    if (k == ParamKind::kWeight) t.fill(0.0f);
  });
  Rng rng(31);
  Tensor x_a = random_tensor_f({80, kAudioDim}, rng);
  Tensor x_s = random_tensor_f({40, kTextDim}, rng);
  LabelSeq y(10, 2);
  CHECK(example_loss(p, x_a, x_s, y) == doctest::Approx(std::log(6.0)).epsilon(1e-6));
}

TEST_CASE("l2 term is lambda/2 times the squared parameter norm") {
  ModelConfig cfg = grad_config();
  ModelParams p = ModelParams::init(cfg);
  p.for_each([](const std::string&, Tensor& t, ParamKind k) {
    if (is_learnable(k)) t.fill(2.0f);
  });
  const double n = static_cast<double>(p.learnable_count());
  CHECK(l2_term(p, 0.1) == doctest::Approx(0.1 * 0.5 * 4.0 * n).epsilon(1e-9));

  // gradient: lambda * theta
  ModelParams g = p.zeros_clone();
  add_l2_grads(p, 0.1, g);
  bool ok = true;
  g.for_each([&](const std::string&, const Tensor& t, ParamKind k) {
    if (!is_learnable(k)) return;
    for (float v : t.data) ok &= std::abs(v - 0.2f) < 1e-7f;
  });
  CHECK(ok);
}

TEST_CASE("full-model gradients match finite differences: concat") {
  auto rep = full_model_gradcheck(grad_config(), 0.0, 0.1, 41);
  CAPTURE(rep.worst_index);
  CAPTURE(rep.analytic_at_worst);
  CAPTURE(rep.numeric_at_worst);
  CHECK(rep.max_rel_err < 1e-3);
  CHECK(rep.max_rel_err < 1e-6);  // 64-bit should be far tighter
}

TEST_CASE("full-model gradients match finite differences: tensor fusion + multitask") {
  ModelConfig cfg = grad_config();
  cfg.fusion = FusionMode::kTensor;
  cfg.multitask = true;
  auto rep = full_model_gradcheck(cfg, 0.5, 0.1, 42);
  CAPTURE(rep.worst_index);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("full-model gradients match finite differences: unimodal text, beta=1") {
  ModelConfig cfg = grad_config();
  cfg.modality = Modality::kText;
  cfg.multitask = true;
  auto rep = full_model_gradcheck(cfg, 1.0, 0.05, 43);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("permute_augment leaves labels and frame multisets alone") {
  Rng data_rng(50);
  Batch b;
  b.x_a.push_back(random_tensor_f({16, 3}, data_rng));
  b.x_s.push_back(random_tensor_f({8, 2}, data_rng));
  b.y.push_back({1, 2});

  Rng off_rng(51);
  Batch same = permute_augment(b, 0.0, 0.0, off_rng);
  CHECK(same.x_a[0].data == b.x_a[0].data);
  CHECK(same.x_s[0].data == b.x_s[0].data);

  Rng on_rng(52);
  Batch perm = permute_augment(b, 1.0, 1.0, on_rng);
  CHECK(perm.y[0] == b.y[0]);
  CHECK(perm.x_a[0].data != b.x_a[0].data);
  auto sorted_rows = [](const Tensor& t) {
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < t.rows(); ++i)
      rows.emplace_back(t.row(i), t.row(i) + t.cols());
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  CHECK(sorted_rows(perm.x_a[0]) == sorted_rows(b.x_a[0]));
  CHECK(sorted_rows(perm.x_s[0]) == sorted_rows(b.x_s[0]));
}

TEST_CASE("permute_augment empirical rates land within 2 points") {
  Rng rng(53);
  Tensor xa({8, 1}, {0, 1, 2, 3, 4, 5, 6, 7});
  Tensor xs({8, 1}, {0, 1, 2, 3, 4, 5, 6, 7});
  int hits_a = 0, hits_s = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    Batch b;
    b.x_a.push_back(xa);
    b.x_s.push_back(xs);
    b.y.push_back({0});
    b = permute_augment(std::move(b), 0.1, 0.5, rng);
    if (b.x_a[0].data != xa.data) ++hits_a;
    if (b.x_s[0].data != xs.data) ++hits_s;
  }
  // tiny undercount allowed: a drawn permutation can be the identity
  CHECK(std::abs(hits_a / static_cast<double>(trials) - 0.1) < 0.02);
  CHECK(std::abs(hits_s / static_cast<double>(trials) - 0.5) < 0.02);
}

TEST_CASE("smoke fit: loss decreases strictly over the first 10 steps") {
  ModelConfig mcfg = grad_config();
  mcfg.dropout_conv = 0.0f;
  mcfg.dropout_trunk = 0.0f;
  std::vector<Tensor> xa(2), xs(2);
  std::vector<LabelSeq> y(2);
  make_easy_call(12, 60, 6, xa[0], xs[0], y[0]);
  make_easy_call(12, 61, 6, xa[1], xs[1], y[1]);
  std::vector<TrainExample> train{{&xa[0], &xs[0], &y[0]}, {&xa[1], &xs[1], &y[1]}};

  TrainConfig tcfg;
  tcfg.batch_size = 2;  // one step per epoch, so epoch losses are step losses
  tcfg.lr = 1e-3;
  tcfg.l2 = 0.0;
  tcfg.epochs = 10;
  tcfg.seed = 7;
  tcfg.threads = 1;
  FitResult res = fit(mcfg, tcfg, train, {});
  REQUIRE(res.log.size() == 10);
  for (size_t i = 1; i < res.log.size(); ++i)
    CHECK(res.log[i].train_ce < res.log[i - 1].train_ce);
}

TEST_CASE("batch loss equals the mean of example losses") {
  ModelConfig mcfg = grad_config();
  mcfg.dropout_conv = 0.0f;  // deterministic training-mode forward
  mcfg.dropout_trunk = 0.0f;
  std::vector<Tensor> xa(3), xs(3);
  std::vector<LabelSeq> y(3);
  for (int i = 0; i < 3; ++i) make_easy_call(10 + i, 70 + static_cast<uint64_t>(i), 6, xa[i], xs[i], y[i]);

  ModelParams p = ModelParams::init(mcfg);
  double mean = 0;
  for (int i = 0; i < 3; ++i)
    mean += example_objective<float>(p, xa[static_cast<size_t>(i)], xs[static_cast<size_t>(i)],
                                     y[static_cast<size_t>(i)], 0.5, true, nullptr, nullptr,
                                     nullptr, nullptr)
                .data;
  mean /= 3.0;

  std::vector<TrainExample> train{{&xa[0], &xs[0], &y[0]}, {&xa[1], &xs[1], &y[1]}, {&xa[2], &xs[2], &y[2]}};
  TrainConfig tcfg;
  tcfg.batch_size = 3;
  tcfg.epochs = 1;
  tcfg.seed = 7;
  FitResult res = fit(mcfg, tcfg, train, {});
  CHECK(res.log[0].train_ce == doctest::Approx(mean).epsilon(1e-6));
}

TEST_CASE("fit is deterministic and thread-count independent") {
  ModelConfig mcfg = grad_config();
  std::vector<Tensor> xa(4), xs(4);
  std::vector<LabelSeq> y(4);
  std::vector<TrainExample> train;
  for (int i = 0; i < 4; ++i) {
    make_easy_call(8, 80 + static_cast<uint64_t>(i), 6, xa[static_cast<size_t>(i)],
                   xs[static_cast<size_t>(i)], y[static_cast<size_t>(i)]);
    train.push_back({&xa[static_cast<size_t>(i)], &xs[static_cast<size_t>(i)],
                     &y[static_cast<size_t>(i)]});
  }
  TrainConfig tcfg;
  tcfg.batch_size = 2;
  tcfg.epochs = 2;
  tcfg.seed = 11;
  tcfg.permute_augment_on = true;

  tcfg.threads = 1;
  FitResult r1 = fit(mcfg, tcfg, train, {train[0], train[1]});
  tcfg.threads = 2;
  FitResult r2 = fit(mcfg, tcfg, train, {train[0], train[1]});
  FitResult r3 = fit(mcfg, tcfg, train, {train[0], train[1]});

  bool identical = true;
  std::vector<const Tensor*> t1, t2, t3;
  r1.params.for_each([&](const std::string&, const Tensor& t, ParamKind) { t1.push_back(&t); });
  r2.params.for_each([&](const std::string&, const Tensor& t, ParamKind) { t2.push_back(&t); });
  r3.params.for_each([&](const std::string&, const Tensor& t, ParamKind) { t3.push_back(&t); });
  for (size_t i = 0; i < t1.size(); ++i) {
    identical &= t1[i]->data == t2[i]->data;
    identical &= t1[i]->data == t3[i]->data;
  }
  CHECK(identical);
  CHECK(r1.log.back().val_instance_f1 == r2.log.back().val_instance_f1);
}

TEST_CASE("divergence aborts with a diagnostic") {
  // an absurd learning rate overflows the weights to inf after one step,
  // making the next batch loss non-finite
  ModelConfig mcfg = grad_config();
  std::vector<Tensor> xa(1), xs(1);
  std::vector<LabelSeq> y(1);
  make_easy_call(10, 95, 6, xa[0], xs[0], y[0]);
  std::vector<TrainExample> train{{&xa[0], &xs[0], &y[0]}};
  TrainConfig tcfg;
  tcfg.epochs = 5;
  tcfg.lr = 1e200;
  try {
    fit(mcfg, tcfg, train, {});
    FAIL("expected divergence error");
  } catch (const MqtError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("diverged") != std::string::npos);
    CHECK(msg.find("epoch") != std::string::npos);
  }
}

TEST_CASE("training updates batch-norm running stats") {
  ModelConfig mcfg = grad_config();
  std::vector<Tensor> xa(1), xs(1);
  std::vector<LabelSeq> y(1);
  make_easy_call(10, 90, 6, xa[0], xs[0], y[0]);
  std::vector<TrainExample> train{{&xa[0], &xs[0], &y[0]}};
  TrainConfig tcfg;
  tcfg.epochs = 1;
  FitResult res = fit(mcfg, tcfg, train, {});
  bool any_moved = false;
  for (float v : res.params.enc_a[0].bn.running_mean.data) any_moved |= v != 0.0f;
  CHECK(any_moved);
}
