#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <utility>

#include "mqt/rng.hpp"
#include "mqt/tensor.hpp"

namespace mqt {

// Strided 1D convolution with "same padding": output step t (1-based) covers
// input steps s*t - r_l .. s*t + r_r, zero-padded outside the input, so the
// output length is floor(T/s) for every T.
struct ConvSpec {
  int kernel = 1;
  int stride = 1;
  int in_ch = 1;
  int out_ch = 1;

  int left_half() const { return (kernel - 1) / 2; }
  int right_half() const { return kernel / 2; }
  int out_len(int t_in) const { return t_in / stride; }

  void validate() const {
    if (kernel < 1 || stride < 1 || in_ch < 1 || out_ch < 1)
      throw MqtError("conv spec: kernel, stride and channel counts must be >= 1");
  }
};

namespace detail {

template <typename T>
void check_conv_shapes(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                       const ConvSpec& spec) {
  spec.validate();
  require_shape(x, {-1, spec.in_ch}, "conv1d input");
  require_shape(w, {spec.kernel, spec.in_ch, spec.out_ch}, "conv1d weight");
  require_shape(b, {spec.out_ch}, "conv1d bias");
  if (x.rows() < 1) throw MqtError("conv1d: input length must be >= 1");
}

}  // namespace detail

// One output row of a strided same-padding conv. rows[tap] is the input row
// for that tap or nullptr where the window falls into zero padding. Shared by
// the offline and streaming paths so they accumulate in the same order.
template <typename T>
inline void conv_window_row(const T* const* rows, const TensorT<T>& w, const TensorT<T>& b,
                            T* out_row) {
  const int k = w.dim(0), ci_n = w.dim(1), co_n = w.dim(2);
  for (int co = 0; co < co_n; ++co) out_row[co] = b.at(co);
  for (int tap = 0; tap < k; ++tap) {
    const T* xr = rows[tap];
    if (!xr) continue;
    const T* wr = &w.data[static_cast<size_t>(tap) * ci_n * co_n];
    for (int ci = 0; ci < ci_n; ++ci) {
      const T xv = xr[ci];
      const T* wc = wr + static_cast<size_t>(ci) * co_n;
      if (xv == T(0)) continue;
      for (int co = 0; co < co_n; ++co) out_row[co] += xv * wc[co];
    }
  }
}

template <typename T>
TensorT<T> conv1d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  const ConvSpec& spec) {
  detail::check_conv_shapes(x, w, b, spec);
  const int t_in = x.rows();
  const int t_out = spec.out_len(t_in);
  const int k = spec.kernel, s = spec.stride, ci_n = spec.in_ch, co_n = spec.out_ch;
  const int r_l = spec.left_half();
  TensorT<T> y({t_out, co_n});

  // Blocked over output steps so each weight row is streamed once per block.
  constexpr int kBlock = 16;
  const T* bp = b.data.data();
  for (int j0 = 0; j0 < t_out; j0 += kBlock) {
    const int jn = std::min(kBlock, t_out - j0);
    T* yb = y.row(j0);
    for (int j = 0; j < jn; ++j) {
      T* yr = yb + static_cast<size_t>(j) * co_n;
      for (int co = 0; co < co_n; ++co) yr[co] = bp[co];
    }
    for (int tap = 0; tap < k; ++tap) {
      const T* wr = &w.data[static_cast<size_t>(tap) * ci_n * co_n];
      for (int ci = 0; ci < ci_n; ++ci) {
        const T* wc = wr + static_cast<size_t>(ci) * co_n;
        for (int j = 0; j < jn; ++j) {
          const int i = s * (j0 + j + 1) - 1 - r_l + tap;
          if (i < 0 || i >= t_in) continue;
          const T xv = x.at(i, ci);
          if (xv == T(0)) continue;
          T* yr = yb + static_cast<size_t>(j) * co_n;
          for (int co = 0; co < co_n; ++co) yr[co] += xv * wc[co];
        }
      }
    }
  }
  return y;
}

// Gradients of conv1d. Accumulates into dw/db (callers zero them first) and
// returns dL/dx.
template <typename T>
TensorT<T> conv1d_backward(const TensorT<T>& x, const TensorT<T>& w, const ConvSpec& spec,
                           const TensorT<T>& dy, TensorT<T>& dw, TensorT<T>& db) {
  const int t_in = x.rows();
  const int t_out = spec.out_len(t_in);
  require_shape(dy, {t_out, spec.out_ch}, "conv1d_backward dy");
  require_shape(dw, {spec.kernel, spec.in_ch, spec.out_ch}, "conv1d_backward dw");
  require_shape(db, {spec.out_ch}, "conv1d_backward db");
  const int k = spec.kernel, s = spec.stride, ci_n = spec.in_ch, co_n = spec.out_ch;
  const int r_l = spec.left_half();
  TensorT<T> dx({t_in, ci_n});

  for (int j = 0; j < t_out; ++j) {
    const T* dyr = dy.row(j);
    for (int co = 0; co < co_n; ++co) db.at(co) += dyr[co];
  }

  constexpr int kBlock = 16;
  for (int j0 = 0; j0 < t_out; j0 += kBlock) {
    const int jn = std::min(kBlock, t_out - j0);
    for (int tap = 0; tap < k; ++tap) {
      T* dwr = &dw.data[static_cast<size_t>(tap) * ci_n * co_n];
      const T* wr = &w.data[static_cast<size_t>(tap) * ci_n * co_n];
      for (int ci = 0; ci < ci_n; ++ci) {
        T* dwc = dwr + static_cast<size_t>(ci) * co_n;
        const T* wc = wr + static_cast<size_t>(ci) * co_n;
        for (int j = 0; j < jn; ++j) {
          const int i = s * (j0 + j + 1) - 1 - r_l + tap;
          if (i < 0 || i >= t_in) continue;
          const T* dyr = dy.row(j0 + j);
          const T xv = x.at(i, ci);
          if (xv != T(0)) {
            for (int co = 0; co < co_n; ++co) dwc[co] += xv * dyr[co];
          }
          T acc = T(0);
          for (int co = 0; co < co_n; ++co) acc += dyr[co] * wc[co];
          dx.at(i, ci) += acc;
        }
      }
    }
  }
  return dx;
}

// One timestep of dense(): same accumulation order as the blocked batch
// version, so streaming and offline results agree bit for bit.
template <typename T>
inline void dense_row(const T* x, const TensorT<T>& w, const TensorT<T>& b, T* out) {
  const int ci_n = w.dim(0), co_n = w.dim(1);
  const T* bp = b.data.data();
  for (int co = 0; co < co_n; ++co) out[co] = bp[co];
  for (int ci = 0; ci < ci_n; ++ci) {
    const T xv = x[ci];
    if (xv == T(0)) continue;
    const T* wc = &w.data[static_cast<size_t>(ci) * co_n];
    for (int co = 0; co < co_n; ++co) out[co] += xv * wc[co];
  }
}

// Per-timestep affine map: y = x * w + b with x [T, C_in], w [C_in, C_out].
template <typename T>
TensorT<T> dense(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  require_shape(w, {x.cols(), -1}, "dense weight");
  require_shape(b, {w.dim(1)}, "dense bias");
  const int t_n = x.rows(), ci_n = w.dim(0), co_n = w.dim(1);
  TensorT<T> y({t_n, co_n});
  constexpr int kBlock = 16;
  const T* bp = b.data.data();
  for (int t0 = 0; t0 < t_n; t0 += kBlock) {
    const int tn = std::min(kBlock, t_n - t0);
    for (int t = 0; t < tn; ++t) {
      T* yr = y.row(t0 + t);
      for (int co = 0; co < co_n; ++co) yr[co] = bp[co];
    }
    for (int ci = 0; ci < ci_n; ++ci) {
      const T* wc = &w.data[static_cast<size_t>(ci) * co_n];
      for (int t = 0; t < tn; ++t) {
        const T xv = x.at(t0 + t, ci);
        if (xv == T(0)) continue;
        T* yr = y.row(t0 + t);
        for (int co = 0; co < co_n; ++co) yr[co] += xv * wc[co];
      }
    }
  }
  return y;
}

template <typename T>
TensorT<T> dense_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                          TensorT<T>& dw, TensorT<T>& db) {
  const int t_n = x.rows(), ci_n = w.dim(0), co_n = w.dim(1);
  require_shape(dy, {t_n, co_n}, "dense_backward dy");
  TensorT<T> dx({t_n, ci_n});
  for (int t = 0; t < t_n; ++t) {
    const T* dyr = dy.row(t);
    for (int co = 0; co < co_n; ++co) db.at(co) += dyr[co];
  }
  constexpr int kBlock = 16;
  for (int t0 = 0; t0 < t_n; t0 += kBlock) {
    const int tn = std::min(kBlock, t_n - t0);
    for (int ci = 0; ci < ci_n; ++ci) {
      T* dwc = &dw.data[static_cast<size_t>(ci) * co_n];
      const T* wc = &w.data[static_cast<size_t>(ci) * co_n];
      for (int t = 0; t < tn; ++t) {
        const T* dyr = dy.row(t0 + t);
        const T xv = x.at(t0 + t, ci);
        if (xv != T(0)) {
          for (int co = 0; co < co_n; ++co) dwc[co] += xv * dyr[co];
        }
        T acc = T(0);
        for (int co = 0; co < co_n; ++co) acc += dyr[co] * wc[co];
        dx.at(t0 + t, ci) = acc;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization over the row axis (timesteps within one example).
// ---------------------------------------------------------------------------

template <typename T>
struct BnParamT {
  TensorT<T> gamma, beta, running_mean, running_var;

  static BnParamT init(int channels) {
    BnParamT p;
    p.gamma = TensorT<T>({channels});
    p.gamma.fill(T(1));
    p.beta = TensorT<T>({channels});
    p.running_mean = TensorT<T>({channels});
    p.running_var = TensorT<T>({channels});
    p.running_var.fill(T(1));
    return p;
  }
};

using BnParam = BnParamT<float>;

template <typename T>
struct BnCacheT {
  TensorT<T> mean, var, inv_std, xhat;           // var is biased (divided by N)
  TensorT<T> new_running_mean, new_running_var;  // committed by the trainer
};

template <typename T>
TensorT<T> batchnorm_train(const TensorT<T>& x, const BnParamT<T>& bn, T momentum, T eps,
                           BnCacheT<T>& cache) {
  const int n = x.rows(), c_n = x.cols();
  require_shape(bn.gamma, {c_n}, "batchnorm gamma");
  if (n < 1) throw MqtError("batchnorm: empty input");
  cache.mean = TensorT<T>({c_n});
  cache.inv_std = TensorT<T>({c_n});
  cache.xhat = TensorT<T>({n, c_n});
  TensorT<T> y({n, c_n});

  std::vector<double> sum(static_cast<size_t>(c_n), 0.0), sq(static_cast<size_t>(c_n), 0.0);
  for (int t = 0; t < n; ++t) {
    const T* xr = x.row(t);
    for (int c = 0; c < c_n; ++c) sum[static_cast<size_t>(c)] += xr[c];
  }
  for (int c = 0; c < c_n; ++c) cache.mean.at(c) = static_cast<T>(sum[static_cast<size_t>(c)] / n);
  for (int t = 0; t < n; ++t) {
    const T* xr = x.row(t);
    for (int c = 0; c < c_n; ++c) {
      const double d = static_cast<double>(xr[c]) - static_cast<double>(cache.mean.at(c));
      sq[static_cast<size_t>(c)] += d * d;
    }
  }
  cache.var = TensorT<T>({c_n});
  cache.new_running_mean = TensorT<T>({c_n});
  cache.new_running_var = TensorT<T>({c_n});
  for (int c = 0; c < c_n; ++c) {
    const T var = static_cast<T>(sq[static_cast<size_t>(c)] / n);  // biased
    cache.var.at(c) = var;
    cache.inv_std.at(c) = T(1) / std::sqrt(var + eps);
    cache.new_running_mean.at(c) =
        momentum * bn.running_mean.at(c) + (T(1) - momentum) * cache.mean.at(c);
    cache.new_running_var.at(c) = momentum * bn.running_var.at(c) + (T(1) - momentum) * var;
  }
  for (int t = 0; t < n; ++t) {
    const T* xr = x.row(t);
    T* hr = cache.xhat.row(t);
    T* yr = y.row(t);
    for (int c = 0; c < c_n; ++c) {
      hr[c] = (xr[c] - cache.mean.at(c)) * cache.inv_std.at(c);
      yr[c] = bn.gamma.at(c) * hr[c] + bn.beta.at(c);
    }
  }
  return y;
}

// Folded inference affine: y = x * scale + shift with frozen running stats.
// The streaming runtime uses the same fold, so offline and streamed inference
// agree bit for bit.
template <typename T>
void bn_fold(const BnParamT<T>& bn, T eps, std::vector<T>& scale, std::vector<T>& shift) {
  const int c_n = bn.gamma.dim(0);
  scale.resize(static_cast<size_t>(c_n));
  shift.resize(static_cast<size_t>(c_n));
  for (int c = 0; c < c_n; ++c) {
    const T s = bn.gamma.at(c) / std::sqrt(bn.running_var.at(c) + eps);
    scale[static_cast<size_t>(c)] = s;
    shift[static_cast<size_t>(c)] = bn.beta.at(c) - bn.running_mean.at(c) * s;
  }
}

template <typename T>
TensorT<T> batchnorm_infer(const TensorT<T>& x, const BnParamT<T>& bn, T eps) {
  const int n = x.rows(), c_n = x.cols();
  require_shape(bn.gamma, {c_n}, "batchnorm gamma");
  std::vector<T> scale, shift;
  bn_fold(bn, eps, scale, shift);
  TensorT<T> y({n, c_n});
  for (int t = 0; t < n; ++t) {
    const T* xr = x.row(t);
    T* yr = y.row(t);
    for (int c = 0; c < c_n; ++c) yr[c] = xr[c] * scale[static_cast<size_t>(c)] + shift[static_cast<size_t>(c)];
  }
  return y;
}

template <typename T>
TensorT<T> batchnorm(const TensorT<T>& x, const BnParamT<T>& bn, bool training, T momentum, T eps,
                     BnCacheT<T>* cache) {
  if (training) {
    BnCacheT<T> local;
    return batchnorm_train(x, bn, momentum, eps, cache ? *cache : local);
  }
  return batchnorm_infer(x, bn, eps);
}

template <typename T>
TensorT<T> batchnorm_backward(const TensorT<T>& dy, const BnParamT<T>& bn, const BnCacheT<T>& cache,
                              TensorT<T>& dgamma, TensorT<T>& dbeta) {
  const int n = dy.rows(), c_n = dy.cols();
  std::vector<double> sum_dy(static_cast<size_t>(c_n), 0.0), sum_dyh(static_cast<size_t>(c_n), 0.0);
  for (int t = 0; t < n; ++t) {
    const T* dr = dy.row(t);
    const T* hr = cache.xhat.row(t);
    for (int c = 0; c < c_n; ++c) {
      sum_dy[static_cast<size_t>(c)] += dr[c];
      sum_dyh[static_cast<size_t>(c)] += static_cast<double>(dr[c]) * hr[c];
    }
  }
  for (int c = 0; c < c_n; ++c) {
    dbeta.at(c) += static_cast<T>(sum_dy[static_cast<size_t>(c)]);
    dgamma.at(c) += static_cast<T>(sum_dyh[static_cast<size_t>(c)]);
  }
  TensorT<T> dx({n, c_n});
  for (int t = 0; t < n; ++t) {
    const T* dr = dy.row(t);
    const T* hr = cache.xhat.row(t);
    T* xr = dx.row(t);
    for (int c = 0; c < c_n; ++c) {
      const double term = n * static_cast<double>(dr[c]) - sum_dy[static_cast<size_t>(c)] -
                          static_cast<double>(hr[c]) * sum_dyh[static_cast<size_t>(c)];
      xr[c] = static_cast<T>(static_cast<double>(bn.gamma.at(c)) * cache.inv_std.at(c) / n * term);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> y = x;
  for (T& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& dy, const TensorT<T>& y) {
  TensorT<T> dx = dy;
  for (size_t i = 0; i < dx.data.size(); ++i)
    if (y.data[i] <= T(0)) dx.data[i] = T(0);
  return dx;
}

// Inverted dropout. Mask entries are 0 (dropped) or 1/(1-rate) so inference
// needs no rescaling. rate must be in [0, 1).
template <typename T>
TensorT<T> dropout_mask(const std::vector<int>& shape, T rate, Rng& rng) {
  if (!(rate >= T(0) && rate < T(1))) throw MqtError("dropout: rate must be in [0,1)");
  TensorT<T> mask(shape);
  const T keep_scale = T(1) / (T(1) - rate);
  for (T& v : mask.data) v = rng.uniform() < static_cast<double>(rate) ? T(0) : keep_scale;
  return mask;
}

template <typename T>
TensorT<T> dropout_apply(const TensorT<T>& x, const TensorT<T>& mask) {
  if (x.shape != mask.shape) throw MqtError("dropout: mask shape mismatch");
  TensorT<T> y = x;
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] *= mask.data[i];
  return y;
}

template <typename T>
TensorT<T> dropout(const TensorT<T>& x, T rate, bool training, Rng& rng) {
  if (!training || rate == T(0)) return x;
  return dropout_apply(x, dropout_mask<T>(x.shape, rate, rng));
}

// ---------------------------------------------------------------------------
// Softmax + time-averaged categorical cross-entropy.
// ---------------------------------------------------------------------------

// One row of softmax_rows(), shared so chunked inference matches offline.
template <typename T>
inline void softmax_row(const T* lr, int k, T* pr) {
  T mx = lr[0];
  for (int c = 1; c < k; ++c) mx = std::max(mx, lr[c]);
  double z = 0.0;
  for (int c = 0; c < k; ++c) {
    const double e = std::exp(static_cast<double>(lr[c] - mx));
    pr[c] = static_cast<T>(e);
    z += e;
  }
  const double inv = 1.0 / z;
  for (int c = 0; c < k; ++c) pr[c] = static_cast<T>(static_cast<double>(pr[c]) * inv);
}

template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& logits) {
  const int t_n = logits.rows(), k = logits.cols();
  if (k < 2) throw MqtError("softmax: needs at least 2 classes");
  TensorT<T> p({t_n, k});
  for (int t = 0; t < t_n; ++t) softmax_row(logits.row(t), k, p.row(t));
  return p;
}

// Loss is the time average of per-step cross-entropy; probs_out gets the row
// softmax. Targets given as class indices.
template <typename T>
double softmax_xent(const TensorT<T>& logits, const int32_t* labels, TensorT<T>& probs_out) {
  const int t_n = logits.rows(), k = logits.cols();
  if (k < 2) throw MqtError("softmax_xent: needs at least 2 classes");
  probs_out = TensorT<T>({t_n, k});
  double loss = 0.0;
  for (int t = 0; t < t_n; ++t) {
    const T* lr = logits.row(t);
    T* pr = probs_out.row(t);
    const int32_t y = labels[t];
    if (y < 0 || y >= k) {
      std::ostringstream os;
      os << "softmax_xent: label " << y << " out of range [0," << k << ") at step " << t;
      throw MqtError(os.str());
    }
    T mx = lr[0];
    for (int c = 1; c < k; ++c) mx = std::max(mx, lr[c]);
    double z = 0.0;
    for (int c = 0; c < k; ++c) {
      const double e = std::exp(static_cast<double>(lr[c] - mx));
      pr[c] = static_cast<T>(e);
      z += e;
    }
    loss += std::log(z) - static_cast<double>(lr[y] - mx);
    const double inv = 1.0 / z;
    for (int c = 0; c < k; ++c) pr[c] = static_cast<T>(static_cast<double>(pr[c]) * inv);
  }
  return loss / t_n;
}

// Spec-shaped variant with a one-hot target matrix.
template <typename T>
std::pair<double, TensorT<T>> softmax_xent_onehot(const TensorT<T>& logits,
                                                  const TensorT<T>& onehot) {
  require_shape(onehot, {logits.rows(), logits.cols()}, "softmax_xent target");
  std::vector<int32_t> labels(static_cast<size_t>(logits.rows()));
  for (int t = 0; t < logits.rows(); ++t) {
    int best = 0;
    for (int c = 1; c < logits.cols(); ++c)
      if (onehot.at(t, c) > onehot.at(t, best)) best = c;
    labels[static_cast<size_t>(t)] = best;
  }
  TensorT<T> probs;
  const double loss = softmax_xent(logits, labels.data(), probs);
  return {loss, std::move(probs)};
}

// d loss / d logits = scale * (probs - onehot) / T.
template <typename T>
TensorT<T> softmax_xent_backward(const TensorT<T>& probs, const int32_t* labels, T scale) {
  const int t_n = probs.rows(), k = probs.cols();
  TensorT<T> dl({t_n, k});
  const T f = scale / static_cast<T>(t_n);
  for (int t = 0; t < t_n; ++t) {
    const T* pr = probs.row(t);
    T* dr = dl.row(t);
    for (int c = 0; c < k; ++c) dr[c] = f * pr[c];
    dr[labels[t]] -= f;
  }
  return dl;
}

template <typename T>
int argmax_row(const TensorT<T>& m, int row) {
  int best = 0;
  for (int c = 1; c < m.cols(); ++c)
    if (m.at(row, c) > m.at(row, best)) best = c;  // ties -> lowest class id
  return best;
}

}  // namespace mqt
