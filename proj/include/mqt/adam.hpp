#pragma once

#include <cmath>
#include <vector>

#include "mqt/tensor.hpp"

namespace mqt {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias-corrected moment estimates. Moment buffers are keyed by the
// order parameters are registered, which the caller must keep stable.
template <typename T>
class AdamStateT {
 public:
  void init(const std::vector<const TensorT<T>*>& params) {
    m_.clear();
    v_.clear();
    for (const TensorT<T>* p : params) {
      m_.emplace_back(p->shape);
      v_.emplace_back(p->shape);
    }
    t_ = 0;
  }

  int64_t steps() const { return t_; }
  size_t slots() const { return m_.size(); }
  TensorT<T>& moment1(size_t i) { return m_[i]; }
  TensorT<T>& moment2(size_t i) { return v_[i]; }
  void set_steps(int64_t t) { t_ = t; }

  void step(const AdamConfig& cfg, const std::vector<TensorT<T>*>& params,
            const std::vector<const TensorT<T>*>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw MqtError("adam: parameter list does not match optimizer state");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      TensorT<T>& p = *params[i];
      const TensorT<T>& g = *grads[i];
      if (p.shape != g.shape || p.shape != m_[i].shape)
        throw MqtError("adam: gradient shape mismatch for slot " + std::to_string(i));
      T* pm = m_[i].data.data();
      T* pv = v_[i].data.data();
      T* pp = p.data.data();
      const T* pg = g.data.data();
      for (size_t n = 0; n < p.data.size(); ++n) {
        pm[n] = static_cast<T>(cfg.beta1) * pm[n] + static_cast<T>(1.0 - cfg.beta1) * pg[n];
        pv[n] = static_cast<T>(cfg.beta2) * pv[n] + static_cast<T>(1.0 - cfg.beta2) * pg[n] * pg[n];
        const double mhat = pm[n] / bc1;
        const double vhat = pv[n] / bc2;
        pp[n] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
      }
    }
  }

 private:
  std::vector<TensorT<T>> m_, v_;
  int64_t t_ = 0;
};

using AdamState = AdamStateT<float>;

}  // namespace mqt
