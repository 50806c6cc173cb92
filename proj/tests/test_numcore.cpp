#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mqt/adam.hpp"
#include "mqt/gradcheck.hpp"
#include "mqt/ops.hpp"
#include "mqt/rng.hpp"
#include "oracles.hpp"

using namespace mqt;

namespace {

TensorD random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

std::vector<std::vector<double>> to_rows(const TensorD& t) {
  std::vector<std::vector<double>> out(static_cast<size_t>(t.rows()));
  for (int i = 0; i < t.rows(); ++i)
    out[static_cast<size_t>(i)].assign(t.row(i), t.row(i) + t.cols());
  return out;
}

std::vector<std::vector<std::vector<double>>> to_cube(const TensorD& t) {
  std::vector<std::vector<std::vector<double>>> out;
  for (int a = 0; a < t.dim(0); ++a) {
    out.emplace_back();
    for (int b = 0; b < t.dim(1); ++b) {
      out.back().emplace_back();
      for (int c = 0; c < t.dim(2); ++c) out.back().back().push_back(t.at(a, b, c));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("conv1d matches the windowed-sum example") {
  // T=8, k=3, s=2, all-ones kernel, x = 1..8: steps cover {1,2,3},{3,4,5},
  // {5,6,7},{7,8,pad}.
  TensorD x({8, 1}, {1, 2, 3, 4, 5, 6, 7, 8});
  TensorD w({3, 1, 1}, {1, 1, 1});
  TensorD b({1});
  ConvSpec spec{3, 2, 1, 1};
  TensorD y = conv1d(x, w, b, spec);
  REQUIRE(y.rows() == 4);
  CHECK(y.at(0, 0) == doctest::Approx(6));
  CHECK(y.at(1, 0) == doctest::Approx(12));
  CHECK(y.at(2, 0) == doctest::Approx(18));
  CHECK(y.at(3, 0) == doctest::Approx(15));
}

TEST_CASE("conv1d identity kernel is the identity") {
  Rng rng(11);
  TensorD x = random_tensor({9, 3}, rng);
  TensorD w({1, 3, 3});
  for (int i = 0; i < 3; ++i) w.at(0, i, i) = 1.0;
  TensorD y = conv1d(x, w, TensorD({3}), ConvSpec{1, 1, 3, 3});
  REQUIRE(y.shape == x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("conv1d on zero input is zero") {
  Rng rng(12);
  TensorD w = random_tensor({5, 2, 4}, rng);
  TensorD y = conv1d(TensorD({10, 2}), w, TensorD({4}), ConvSpec{5, 2, 2, 4});
  for (double v : y.data) CHECK(v == 0.0);
}

TEST_CASE("conv1d output length is floor(T/s) for all T, s, k") {
  Rng rng(13);
  for (int s : {1, 2, 4}) {
    for (int k : {1, 2, 3, 7, 10, 21, 40}) {
      for (int t = 1; t <= 50; ++t) {
        TensorD x = random_tensor({t, 2}, rng);
        TensorD w = random_tensor({k, 2, 3}, rng);
        TensorD y = conv1d(x, w, TensorD({3}), ConvSpec{k, s, 2, 3});
        CHECK(y.rows() == t / s);
      }
    }
  }
}

TEST_CASE("conv1d agrees with the naive oracle") {
  Rng rng(14);
  for (int rep = 0; rep < 20; ++rep) {
    const int t = 1 + static_cast<int>(rng.randint(40));
    const int k = 1 + static_cast<int>(rng.randint(12));
    const int s = 1 + static_cast<int>(rng.randint(3));
    TensorD x = random_tensor({t, 3}, rng);
    TensorD w = random_tensor({k, 3, 4}, rng);
    TensorD b = random_tensor({4}, rng);
    TensorD y = conv1d(x, w, b, ConvSpec{k, s, 3, 4});
    auto ref = oracle::conv1d(to_rows(x), to_cube(w), b.data, s);
    REQUIRE(y.rows() == static_cast<int>(ref.size()));
    for (int i = 0; i < y.rows(); ++i)
      for (int j = 0; j < 4; ++j)
        CHECK(y.at(i, j) ==
              doctest::Approx(ref[static_cast<size_t>(i)][static_cast<size_t>(j)]).epsilon(1e-12));

    // f32 path within 1e-5 of the 64-bit oracle
    Tensor yf = conv1d(x.cast<float>(), w.cast<float>(), b.cast<float>(), ConvSpec{k, s, 3, 4});
    for (int i = 0; i < yf.rows(); ++i)
      for (int j = 0; j < 4; ++j)
        CHECK(std::abs(yf.at(i, j) - ref[static_cast<size_t>(i)][static_cast<size_t>(j)]) < 1e-5);
  }
}

TEST_CASE("conv1d rejects mismatched shapes") {
  TensorD x({8, 2});
  TensorD w({3, 3, 4});  // in_ch disagrees with x
  CHECK_THROWS_AS(conv1d(x, w, TensorD({4}), ConvSpec{3, 2, 3, 4}), MqtError);
  CHECK_THROWS_AS(conv1d(x, w, TensorD({4}), ConvSpec{3, 2, 2, 4}), MqtError);
  CHECK_THROWS_AS(conv1d(TensorD({0, 2}), TensorD({1, 2, 2}), TensorD({2}), ConvSpec{1, 1, 2, 2}),
                  MqtError);
}

TEST_CASE("dense identity and hand example") {
  TensorD x({1, 2}, {1, 2});
  TensorD w({2, 2}, {1, 0, 0, 1});
  TensorD b({2}, {1, 1});
  TensorD y = dense(x, w, b);
  CHECK(y.at(0, 0) == doctest::Approx(2));
  CHECK(y.at(0, 1) == doctest::Approx(3));

  Rng rng(15);
  TensorD x2 = random_tensor({5, 4}, rng);
  TensorD eye({4, 4});
  for (int i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  TensorD y2 = dense(x2, eye, TensorD({4}));
  for (size_t i = 0; i < x2.data.size(); ++i) CHECK(y2.data[i] == doctest::Approx(x2.data[i]));
}

TEST_CASE("dense agrees with the triple-loop oracle") {
  Rng rng(16);
  TensorD x = random_tensor({7, 5}, rng);
  TensorD w = random_tensor({5, 3}, rng);
  TensorD b = random_tensor({3}, rng);
  TensorD y = dense(x, w, b);
  auto ref = oracle::dense(to_rows(x), to_rows(w), b.data);
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(y.at(i, j) ==
            doctest::Approx(ref[static_cast<size_t>(i)][static_cast<size_t>(j)]).epsilon(1e-12));
}

TEST_CASE("batchnorm inference with unit running stats is identity") {
  Rng rng(17);
  TensorD x = random_tensor({12, 3}, rng);
  auto bn = BnParamT<double>::init(3);
  TensorD y = batchnorm_infer(x, bn, 1e-5);
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(std::abs(y.data[i] - x.data[i]) < 1e-4);  // 1/sqrt(1+eps) skew only
}

TEST_CASE("batchnorm training normalizes and constant input collapses to beta") {
  Rng rng(18);
  TensorD x = random_tensor({200, 2}, rng, -3.0, 5.0);
  auto bn = BnParamT<double>::init(2);
  bn.beta.at(0) = 0.7;
  bn.beta.at(1) = -0.3;
  BnCacheT<double> cache;
  TensorD y = batchnorm_train(x, bn, 0.99, 1e-5, cache);
  for (int c = 0; c < 2; ++c) {
    double mean = 0;
    for (int t = 0; t < y.rows(); ++t) mean += y.at(t, c);
    mean /= y.rows();
    double var = 0;
    for (int t = 0; t < y.rows(); ++t) var += (y.at(t, c) - mean) * (y.at(t, c) - mean);
    var /= y.rows();
    CHECK(std::abs(mean - bn.beta.at(c)) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }

  TensorD xc({50, 1});
  xc.fill(4.2);
  auto bn2 = BnParamT<double>::init(1);
  bn2.beta.at(0) = 1.5;
  BnCacheT<double> cache2;
  TensorD yc = batchnorm_train(xc, bn2, 0.99, 1e-5, cache2);
  for (double v : yc.data) CHECK(v == doctest::Approx(1.5));
}

TEST_CASE("batchnorm momentum update matches the scalar recurrence") {
  TensorD x({4, 1}, {1, 2, 3, 6});  // mean 3, biased var 3.5
  auto bn = BnParamT<double>::init(1);
  bn.running_mean.at(0) = 10.0;
  bn.running_var.at(0) = 2.0;
  BnCacheT<double> cache;
  batchnorm_train(x, bn, 0.99, 1e-5, cache);
  CHECK(cache.mean.at(0) == doctest::Approx(3.0));
  CHECK(cache.new_running_mean.at(0) == doctest::Approx(0.99 * 10.0 + 0.01 * 3.0));
  CHECK(cache.new_running_var.at(0) == doctest::Approx(0.99 * 2.0 + 0.01 * 3.5));
}

TEST_CASE("dropout identity cases and mean preservation") {
  Rng rng(19);
  TensorD x = random_tensor({100, 10}, rng, 0.5, 1.5);
  TensorD y0 = dropout(x, 0.0, true, rng);
  CHECK(y0.data == x.data);
  TensorD y1 = dropout(x, 0.4, false, rng);
  CHECK(y1.data == x.data);

  TensorD big({100000, 1});
  big.fill(1.0);
  TensorD yd = dropout(big, 0.5, true, rng);
  double mean = 0;
  int kept = 0;
  for (double v : yd.data) {
    mean += v;
    CHECK((v == 0.0 || v == doctest::Approx(2.0)));
    if (v != 0.0) ++kept;
  }
  mean /= static_cast<double>(yd.data.size());
  CHECK(std::abs(mean - 1.0) < 0.05);
  CHECK(kept > 0);
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), MqtError);
}

TEST_CASE("softmax_xent uniform logits give ln K and uniform rows") {
  TensorD logits({4, 6});
  logits.fill(0.25);
  std::vector<int32_t> labels{0, 3, 5, 2};
  TensorD probs;
  const double loss = softmax_xent(logits, labels.data(), probs);
  CHECK(loss == doctest::Approx(std::log(6.0)).epsilon(1e-9));
  for (int t = 0; t < 4; ++t) {
    double row = 0;
    for (int c = 0; c < 6; ++c) {
      CHECK(probs.at(t, c) == doctest::Approx(1.0 / 6).epsilon(1e-9));
      row += probs.at(t, c);
    }
    CHECK(std::abs(row - 1.0) < 1e-6);
  }
}

TEST_CASE("softmax_xent saturating logit drives loss to zero") {
  TensorD logits({1, 3});
  logits.at(0, 1) = 30.0;
  std::vector<int32_t> labels{1};
  TensorD probs;
  CHECK(softmax_xent(logits, labels.data(), probs) < 1e-9);
}

TEST_CASE("softmax_xent matches the 64-bit oracle and rejects K<2") {
  Rng rng(20);
  TensorD logits = random_tensor({3, 4}, rng, -2.0, 2.0);
  std::vector<int32_t> labels{2, 0, 3};
  TensorD probs;
  const double loss = softmax_xent(logits, labels.data(), probs);
  std::vector<std::vector<double>> ref_probs;
  const double ref = oracle::softmax_xent(to_rows(logits), {2, 0, 3}, &ref_probs);
  CHECK(loss == doctest::Approx(ref).epsilon(1e-9));
  CHECK(loss >= 0.0);
  for (int t = 0; t < 3; ++t)
    for (int c = 0; c < 4; ++c)
      CHECK(probs.at(t, c) ==
            doctest::Approx(ref_probs[static_cast<size_t>(t)][static_cast<size_t>(c)])
                .epsilon(1e-9));

  TensorD one({2, 1});
  std::vector<int32_t> l2{0, 0};
  TensorD p2;
  CHECK_THROWS_AS(softmax_xent(one, l2.data(), p2), MqtError);
  std::vector<int32_t> bad{7, 0, 1};
  CHECK_THROWS_AS(softmax_xent(logits, bad.data(), p2), MqtError);

  // one-hot wrapper agrees with the label form
  TensorD onehot({3, 4});
  onehot.at(0, 2) = 1;
  onehot.at(1, 0) = 1;
  onehot.at(2, 3) = 1;
  auto [loss_oh, probs_oh] = softmax_xent_onehot(logits, onehot);
  CHECK(loss_oh == doctest::Approx(loss).epsilon(1e-12));
}

TEST_CASE("adam first step magnitude and zero-gradient no-op") {
  AdamStateT<double> st;
  TensorD theta({1}, {0.5});
  TensorD grad({1}, {0.3});
  st.init({&theta});
  AdamConfig cfg;
  st.step(cfg, {&theta}, {&grad});
  CHECK(std::abs(0.5 - theta.at(0)) == doctest::Approx(1e-4).epsilon(1e-3));

  AdamStateT<double> st2;
  TensorD theta2({3}, {1, 2, 3});
  TensorD zero({3});
  st2.init({&theta2});
  st2.step(cfg, {&theta2}, {&zero});
  CHECK(theta2.data == std::vector<double>{1, 2, 3});
}

TEST_CASE("adam matches the hand-rolled oracle over two steps") {
  AdamStateT<double> st;
  TensorD theta({2}, {1.0, -2.0});
  TensorD grad({2}, {0.1, -0.4});
  st.init({&theta});
  AdamConfig cfg;
  st.step(cfg, {&theta}, {&grad});
  st.step(cfg, {&theta}, {&grad});

  oracle::Adam ref;
  std::vector<double> th{1.0, -2.0}, g{0.1, -0.4};
  ref.step(th, g);
  ref.step(th, g);
  CHECK(std::abs(theta.at(0) - th[0]) < 1e-9);
  CHECK(std::abs(theta.at(1) - th[1]) < 1e-9);
}

namespace {

// Scalar objective sum(y^2)/2 over an op output, with its analytic gradient,
// packaged for grad_check.
struct DenseProbe {
  TensorD x, w, b;
  double loss(const std::vector<double>& theta) const {
    TensorD w2 = w, b2 = b;
    std::copy(theta.begin(), theta.begin() + w.numel(), w2.data.begin());
    std::copy(theta.begin() + w.numel(), theta.end(), b2.data.begin());
    TensorD y = dense(x, w2, b2);
    double s = 0;
    for (double v : y.data) s += 0.5 * v * v;
    return s;
  }
};

}  // namespace

TEST_CASE("grad_check: dense layer under 1e-6") {
  Rng rng(21);
  DenseProbe probe{random_tensor({4, 3}, rng), random_tensor({3, 2}, rng),
                   random_tensor({2}, rng)};
  TensorD y = dense(probe.x, probe.w, probe.b);
  TensorD dw = zeros_like(probe.w), db = zeros_like(probe.b);
  dense_backward(probe.x, probe.w, y, dw, db);  // dL/dy = y for L = sum y^2/2

  std::vector<double> theta(probe.w.data.begin(), probe.w.data.end());
  theta.insert(theta.end(), probe.b.data.begin(), probe.b.data.end());
  std::vector<double> analytic(dw.data.begin(), dw.data.end());
  analytic.insert(analytic.end(), db.data.begin(), db.data.end());

  auto rep = grad_check([&](const std::vector<double>& t) { return probe.loss(t); }, theta,
                        analytic);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("grad_check: conv1d k=3 s=2 under 1e-6, including input gradient") {
  Rng rng(22);
  ConvSpec spec{3, 2, 2, 3};
  TensorD x = random_tensor({9, 2}, rng);
  TensorD w = random_tensor({3, 2, 3}, rng);
  TensorD b = random_tensor({3}, rng);

  TensorD y = conv1d(x, w, b, spec);
  TensorD dw = zeros_like(w), db = zeros_like(b);
  TensorD dx = conv1d_backward(x, w, spec, y, dw, db);

  std::vector<double> theta, analytic;
  auto push = [&](const TensorD& t, const TensorD& g) {
    theta.insert(theta.end(), t.data.begin(), t.data.end());
    analytic.insert(analytic.end(), g.data.begin(), g.data.end());
  };
  push(w, dw);
  push(b, db);
  push(x, dx);

  auto loss = [&](const std::vector<double>& t) {
    TensorD w2 = w, b2 = b, x2 = x;
    size_t off = 0;
    for (double& v : w2.data) v = t[off++];
    for (double& v : b2.data) v = t[off++];
    for (double& v : x2.data) v = t[off++];
    TensorD y2 = conv1d(x2, w2, b2, spec);
    double s = 0;
    for (double v : y2.data) s += 0.5 * v * v;
    return s;
  };
  auto rep = grad_check(loss, theta, analytic);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("grad_check: batchnorm training mode under 1e-6") {
  Rng rng(23);
  TensorD x = random_tensor({6, 2}, rng);
  auto bn = BnParamT<double>::init(2);
  bn.gamma.at(0) = 1.3;
  bn.gamma.at(1) = 0.8;
  bn.beta.at(0) = -0.2;

  auto forward_loss = [&](const TensorD& x2, const BnParamT<double>& bn2) {
    BnCacheT<double> cache;
    TensorD y = batchnorm_train(x2, bn2, 0.99, 1e-5, cache);
    double s = 0;
    for (double v : y.data) s += 0.5 * v * v;
    return s;
  };

  BnCacheT<double> cache;
  TensorD y = batchnorm_train(x, bn, 0.99, 1e-5, cache);
  TensorD dgamma = zeros_like(bn.gamma), dbeta = zeros_like(bn.beta);
  TensorD dx = batchnorm_backward(y, bn, cache, dgamma, dbeta);

  std::vector<double> theta, analytic;
  auto append = [&](const TensorD& t, const TensorD& g) {
    theta.insert(theta.end(), t.data.begin(), t.data.end());
    analytic.insert(analytic.end(), g.data.begin(), g.data.end());
  };
  append(x, dx);
  append(bn.gamma, dgamma);
  append(bn.beta, dbeta);

  auto loss = [&](const std::vector<double>& t) {
    TensorD x2 = x;
    BnParamT<double> bn2 = bn;
    size_t off = 0;
    for (double& v : x2.data) v = t[off++];
    for (double& v : bn2.gamma.data) v = t[off++];
    for (double& v : bn2.beta.data) v = t[off++];
    return forward_loss(x2, bn2);
  };
  auto rep = grad_check(loss, theta, analytic);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("grad_check: softmax cross-entropy under 1e-6") {
  Rng rng(24);
  TensorD logits = random_tensor({5, 4}, rng, -1.5, 1.5);
  std::vector<int32_t> labels{1, 3, 0, 2, 2};
  TensorD probs;
  softmax_xent(logits, labels.data(), probs);
  TensorD dl = softmax_xent_backward(probs, labels.data(), 1.0);

  std::vector<double> theta(logits.data.begin(), logits.data.end());
  std::vector<double> analytic(dl.data.begin(), dl.data.end());
  auto loss = [&](const std::vector<double>& t) {
    TensorD l2 = logits;
    std::copy(t.begin(), t.end(), l2.data.begin());
    TensorD p;
    return softmax_xent(l2, labels.data(), p);
  };
  auto rep = grad_check(loss, theta, analytic);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("relu and its gradient") {
  TensorD x({1, 4}, {-1.0, 0.0, 0.5, 2.0});
  TensorD y = relu(x);
  CHECK(y.data == std::vector<double>{0, 0, 0.5, 2.0});
  TensorD dy({1, 4}, {1, 1, 1, 1});
  TensorD dx = relu_backward(dy, y);
  CHECK(dx.data == std::vector<double>{0, 0, 1, 1});
}

TEST_CASE("rng streams are deterministic and forks are independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng base(7);
  Rng f1 = base.fork(1), f2 = base.fork(2), f1b = base.fork(1);
  CHECK(f1.next_u64() == f1b.next_u64());
  CHECK(f1.next_u64() != f2.next_u64());

  Rng p(3);
  auto perm = p.permutation(100);
  std::vector<bool> seen(100, false);
  for (int v : perm) {
    CHECK(!seen[static_cast<size_t>(v)]);
    seen[static_cast<size_t>(v)] = true;
  }
}

TEST_CASE("tensor shape validation") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), MqtError);
  Tensor t({2, 3});
  CHECK_THROWS_AS(require_shape(t, {3, 2}, "probe"), MqtError);
  CHECK_NOTHROW(require_shape(t, {-1, 3}, "probe"));
  t.at(1, 2) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(require_finite(t, "probe"), MqtError);
}
