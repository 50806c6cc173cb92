#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mqt/common.hpp"

namespace mqt {

// Dense row-major tensor. float for training/inference, double for gradient
// checking. Rank is dynamic but everything in the model is rank 1..3.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), T(0));
  }
  TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw MqtError("tensor: data size does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw MqtError("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool empty() const { return data.empty(); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return rank() < 2 ? 1 : shape[1]; }

  T& at(int i) { return data[static_cast<size_t>(i)]; }
  T at(int i) const { return data[static_cast<size_t>(i)]; }
  T& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  T at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  T& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  T at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  T* row(int i) { return data.data() + static_cast<size_t>(i) * cols(); }
  const T* row(int i) const { return data.data() + static_cast<size_t>(i) * cols(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
TensorT<T> zeros_like(const TensorT<T>& t) {
  return TensorT<T>(t.shape);
}

template <typename T>
void require_shape(const TensorT<T>& t, std::initializer_list<int> want, const char* what) {
  bool ok = t.rank() == static_cast<int>(want.size());
  int i = 0;
  for (int d : want) {
    if (!ok) break;
    if (d >= 0 && t.dim(i) != d) ok = false;
    ++i;
  }
  if (!ok) {
    std::ostringstream os;
    os << what << ": got shape " << t.shape_str() << ", want [";
    i = 0;
    for (int d : want) {
      os << (i++ ? "," : "");
      if (d < 0)
        os << '*';
      else
        os << d;
    }
    os << ']';
    throw MqtError(os.str());
  }
}

template <typename T>
void require_finite(const TensorT<T>& t, const char* what) {
  if (!t.all_finite()) throw MqtError(std::string(what) + ": non-finite values");
}

}  // namespace mqt
