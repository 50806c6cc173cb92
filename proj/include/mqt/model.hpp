#pragma once

#include <array>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mqt/common.hpp"
#include "mqt/ops.hpp"
#include "mqt/rng.hpp"

namespace mqt {

enum class Modality { kAudio = 0, kText = 1, kBoth = 2 };
enum class FusionMode { kConcat = 0, kTensor = 1 };

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::kAudio: return "audio";
    case Modality::kText: return "text";
    default: return "both";
  }
}
inline const char* to_string(FusionMode f) {
  return f == FusionMode::kConcat ? "concat" : "tensor";
}
inline Modality modality_from_string(const std::string& s) {
  if (s == "audio") return Modality::kAudio;
  if (s == "text") return Modality::kText;
  if (s == "both") return Modality::kBoth;
  throw MqtError("unknown modality '" + s + "' (expected audio|text|both)");
}
inline FusionMode fusion_from_string(const std::string& s) {
  if (s == "concat") return FusionMode::kConcat;
  if (s == "tensor") return FusionMode::kTensor;
  throw MqtError("unknown fusion '" + s + "' (expected concat|tensor)");
}

// Network topology. Kernels and strides of both encoders are fixed; channel
// widths and the trunk are configurable so gradient checks can run on a small
// variant with identical structure.
struct ModelConfig {
  Modality modality = Modality::kBoth;
  FusionMode fusion = FusionMode::kConcat;
  int num_classes = 6;
  bool multitask = false;
  std::vector<int> audio_channels{64, 128, 128};
  std::vector<int> text_channels{128, 128};
  int trunk_units = 256;
  int trunk_layers = 3;
  float dropout_conv = 0.2f;
  float dropout_trunk = 0.4f;
  float bn_momentum = 0.99f;
  float bn_eps = 1e-5f;
  float l2 = 0.1f;
  uint64_t init_seed = 1;

  static constexpr std::array<int, 3> kAudioKernels{10, 20, 40};
  static constexpr std::array<int, 2> kTextKernels{20, 40};
  static constexpr int kAudioStride = 8;  // overall downsampling, audio frames per step
  static constexpr int kTextStride = 4;

  bool use_audio() const { return modality != Modality::kText; }
  bool use_text() const { return modality != Modality::kAudio; }

  std::vector<ConvSpec> audio_specs() const {
    std::vector<ConvSpec> specs;
    int in_ch = kAudioDim;
    for (size_t i = 0; i < kAudioKernels.size(); ++i) {
      specs.push_back({kAudioKernels[i], 2, in_ch, audio_channels[i]});
      in_ch = audio_channels[i];
    }
    return specs;
  }
  std::vector<ConvSpec> text_specs() const {
    std::vector<ConvSpec> specs;
    int in_ch = kTextDim;
    for (size_t i = 0; i < kTextKernels.size(); ++i) {
      specs.push_back({kTextKernels[i], 2, in_ch, text_channels[i]});
      in_ch = text_channels[i];
    }
    return specs;
  }

  int audio_out_ch() const { return audio_channels.back(); }
  int text_out_ch() const { return text_channels.back(); }

  int fused_dim() const {
    switch (modality) {
      case Modality::kAudio: return audio_out_ch();
      case Modality::kText: return text_out_ch();
      default:
        return fusion == FusionMode::kConcat ? audio_out_ch() + text_out_ch()
                                             : (audio_out_ch() + 1) * (text_out_ch() + 1);
    }
  }

  void validate() const {
    if (num_classes < 2) throw MqtError("model config: num_classes must be >= 2");
    if (audio_channels.size() != kAudioKernels.size())
      throw MqtError("model config: audio encoder needs exactly 3 channel widths");
    if (text_channels.size() != kTextKernels.size())
      throw MqtError("model config: text encoder needs exactly 2 channel widths");
    for (int c : audio_channels)
      if (c < 1) throw MqtError("model config: audio channel width must be >= 1");
    for (int c : text_channels)
      if (c < 1) throw MqtError("model config: text channel width must be >= 1");
    if (trunk_units < 1 || trunk_layers < 1)
      throw MqtError("model config: trunk must have >= 1 layer of >= 1 units");
    if (!(dropout_conv >= 0.f && dropout_conv < 1.f) ||
        !(dropout_trunk >= 0.f && dropout_trunk < 1.f))
      throw MqtError("model config: dropout rates must be in [0,1)");
  }
};

enum class ParamKind { kWeight, kBias, kBnScale, kBnShift, kBnRunningMean, kBnRunningVar };

inline bool is_learnable(ParamKind k) {
  return k != ParamKind::kBnRunningMean && k != ParamKind::kBnRunningVar;
}

template <typename T>
struct ConvLayerT {
  TensorT<T> w, b;
  BnParamT<T> bn;
};

template <typename T>
struct DenseLayerT {
  TensorT<T> w, b;
  BnParamT<T> bn;
};

// All learnable tensors, named. Weight init is fan-in-scaled uniform seeded
// per tensor name, so e.g. an audio-only variant starts from exactly the same
// audio-encoder weights as the bimodal model with the same seed.
template <typename T>
struct ModelParamsT {
  ModelConfig cfg;
  std::vector<ConvLayerT<T>> enc_a, enc_s;
  std::vector<DenseLayerT<T>> trunk;
  TensorT<T> head_w, head_b;
  TensorT<T> bin_w, bin_b;

  static ModelParamsT init(const ModelConfig& cfg) {
    cfg.validate();
    ModelParamsT p;
    p.cfg = cfg;
    const Rng base(cfg.init_seed);
    auto init_weight = [&](TensorT<T>& w, const std::string& name, int fan_in) {
      Rng r = base.fork(fnv1a64_str(name));
      const double lim = std::sqrt(6.0 / fan_in);
      for (T& v : w.data) v = static_cast<T>(r.uniform(-lim, lim));
    };
    if (cfg.use_audio()) {
      int li = 0;
      for (const ConvSpec& s : cfg.audio_specs()) {
        ConvLayerT<T> layer;
        layer.w = TensorT<T>({s.kernel, s.in_ch, s.out_ch});
        init_weight(layer.w, "enc_a.conv" + std::to_string(li) + ".w", s.kernel * s.in_ch);
        layer.b = TensorT<T>({s.out_ch});
        layer.bn = BnParamT<T>::init(s.out_ch);
        p.enc_a.push_back(std::move(layer));
        ++li;
      }
    }
    if (cfg.use_text()) {
      int li = 0;
      for (const ConvSpec& s : cfg.text_specs()) {
        ConvLayerT<T> layer;
        layer.w = TensorT<T>({s.kernel, s.in_ch, s.out_ch});
        init_weight(layer.w, "enc_s.conv" + std::to_string(li) + ".w", s.kernel * s.in_ch);
        layer.b = TensorT<T>({s.out_ch});
        layer.bn = BnParamT<T>::init(s.out_ch);
        p.enc_s.push_back(std::move(layer));
        ++li;
      }
    }
    int in_dim = cfg.fused_dim();
    for (int i = 0; i < cfg.trunk_layers; ++i) {
      DenseLayerT<T> layer;
      layer.w = TensorT<T>({in_dim, cfg.trunk_units});
      init_weight(layer.w, "trunk.dense" + std::to_string(i) + ".w", in_dim);
      layer.b = TensorT<T>({cfg.trunk_units});
      layer.bn = BnParamT<T>::init(cfg.trunk_units);
      p.trunk.push_back(std::move(layer));
      in_dim = cfg.trunk_units;
    }
    p.head_w = TensorT<T>({in_dim, cfg.num_classes});
    init_weight(p.head_w, "head.w", in_dim);
    p.head_b = TensorT<T>({cfg.num_classes});
    if (cfg.multitask) {
      p.bin_w = TensorT<T>({in_dim, 2});
      init_weight(p.bin_w, "bin.w", in_dim);
      p.bin_b = TensorT<T>({2});
    }
    return p;
  }

  // Visits every tensor in a fixed order with (name, tensor, kind).
  template <typename F>
  void for_each(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  std::vector<TensorT<T>*> learnable() {
    std::vector<TensorT<T>*> out;
    for_each([&](const std::string&, TensorT<T>& t, ParamKind k) {
      if (is_learnable(k)) out.push_back(&t);
    });
    return out;
  }
  std::vector<const TensorT<T>*> learnable() const {
    std::vector<const TensorT<T>*> out;
    for_each([&](const std::string&, const TensorT<T>& t, ParamKind k) {
      if (is_learnable(k)) out.push_back(&t);
    });
    return out;
  }

  int64_t learnable_count() const {
    int64_t n = 0;
    for_each([&](const std::string&, const TensorT<T>& t, ParamKind k) {
      if (is_learnable(k)) n += t.numel();
    });
    return n;
  }

  // Same shapes, all zeros; used as a gradient holder.
  ModelParamsT zeros_clone() const {
    ModelParamsT g = *this;
    g.for_each([](const std::string&, TensorT<T>& t, ParamKind) { t.fill(T(0)); });
    return g;
  }

  template <typename U>
  ModelParamsT<U> cast() const {
    ModelParamsT<U> out;
    out.cfg = cfg;
    auto cast_bn = [](const BnParamT<T>& bn) {
      BnParamT<U> o;
      o.gamma = bn.gamma.template cast<U>();
      o.beta = bn.beta.template cast<U>();
      o.running_mean = bn.running_mean.template cast<U>();
      o.running_var = bn.running_var.template cast<U>();
      return o;
    };
    for (const auto& l : enc_a)
      out.enc_a.push_back({l.w.template cast<U>(), l.b.template cast<U>(), cast_bn(l.bn)});
    for (const auto& l : enc_s)
      out.enc_s.push_back({l.w.template cast<U>(), l.b.template cast<U>(), cast_bn(l.bn)});
    for (const auto& l : trunk)
      out.trunk.push_back({l.w.template cast<U>(), l.b.template cast<U>(), cast_bn(l.bn)});
    out.head_w = head_w.template cast<U>();
    out.head_b = head_b.template cast<U>();
    out.bin_w = bin_w.template cast<U>();
    out.bin_b = bin_b.template cast<U>();
    return out;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    auto bn_fields = [&](const std::string& prefix, auto& bn) {
      f(prefix + ".gamma", bn.gamma, ParamKind::kBnScale);
      f(prefix + ".beta", bn.beta, ParamKind::kBnShift);
      f(prefix + ".rmean", bn.running_mean, ParamKind::kBnRunningMean);
      f(prefix + ".rvar", bn.running_var, ParamKind::kBnRunningVar);
    };
    for (size_t i = 0; i < self.enc_a.size(); ++i) {
      const std::string base = "enc_a.conv" + std::to_string(i);
      f(base + ".w", self.enc_a[i].w, ParamKind::kWeight);
      f(base + ".b", self.enc_a[i].b, ParamKind::kBias);
      bn_fields("enc_a.bn" + std::to_string(i), self.enc_a[i].bn);
    }
    for (size_t i = 0; i < self.enc_s.size(); ++i) {
      const std::string base = "enc_s.conv" + std::to_string(i);
      f(base + ".w", self.enc_s[i].w, ParamKind::kWeight);
      f(base + ".b", self.enc_s[i].b, ParamKind::kBias);
      bn_fields("enc_s.bn" + std::to_string(i), self.enc_s[i].bn);
    }
    for (size_t i = 0; i < self.trunk.size(); ++i) {
      const std::string base = "trunk.dense" + std::to_string(i);
      f(base + ".w", self.trunk[i].w, ParamKind::kWeight);
      f(base + ".b", self.trunk[i].b, ParamKind::kBias);
      bn_fields("trunk.bn" + std::to_string(i), self.trunk[i].bn);
    }
    f("head.w", self.head_w, ParamKind::kWeight);
    f("head.b", self.head_b, ParamKind::kBias);
    if (self.bin_w.numel() > 0) {
      f("bin.w", self.bin_w, ParamKind::kWeight);
      f("bin.b", self.bin_b, ParamKind::kBias);
    }
  }
};

using ModelParams = ModelParamsT<float>;
using DenseLayer = DenseLayerT<float>;

template <typename T>
struct LayerTraceT {
  BnCacheT<T> bn;
  TensorT<T> act;   // post-ReLU
  TensorT<T> mask;  // dropout mask; empty when dropout inactive
  TensorT<T> out;   // layer output fed downstream
};

template <typename T>
struct ModelTraceT {
  TensorT<T> x_a, x_s;
  std::vector<LayerTraceT<T>> enc_a, enc_s, trunk;
  TensorT<T> z_a, z_s, fused, z_y;
  TensorT<T> logits, probs, bin_logits, bin_probs;
};

using ModelTrace = ModelTraceT<float>;

// Fuse one timestep of the two encoder outputs into o.
// Concat: [a; s]. Tensor: flattened outer product of [1; a] and [1; s], so
// the concat features appear verbatim at fixed positions.
template <typename T>
inline void fuse_row(const T* a, int a_n, const T* s, int s_n, FusionMode mode, T* o) {
  if (mode == FusionMode::kConcat) {
    for (int i = 0; i < a_n; ++i) o[i] = a[i];
    for (int j = 0; j < s_n; ++j) o[a_n + j] = s[j];
    return;
  }
  for (int i = 0; i <= a_n; ++i) {
    const T av = i == 0 ? T(1) : a[i - 1];
    T* or_ = o + static_cast<size_t>(i) * (s_n + 1);
    or_[0] = av;
    for (int j = 1; j <= s_n; ++j) or_[j] = av * s[j - 1];
  }
}

// Per-timestep fusion over whole sequences.
template <typename T>
TensorT<T> fuse_rows(const TensorT<T>& z_a, const TensorT<T>& z_s, FusionMode mode) {
  if (z_a.rows() != z_s.rows()) {
    std::ostringstream os;
    os << "fuse: encoder lengths disagree (audio " << z_a.rows() << " vs text " << z_s.rows()
       << ")";
    throw MqtError(os.str());
  }
  const int t_n = z_a.rows(), a_n = z_a.cols(), s_n = z_s.cols();
  const int out_n = mode == FusionMode::kConcat ? a_n + s_n : (a_n + 1) * (s_n + 1);
  TensorT<T> out({t_n, out_n});
  for (int t = 0; t < t_n; ++t) fuse_row(z_a.row(t), a_n, z_s.row(t), s_n, mode, out.row(t));
  return out;
}

template <typename T>
void unfuse_rows(const TensorT<T>& d_fused, const TensorT<T>& z_a, const TensorT<T>& z_s,
                 FusionMode mode, TensorT<T>& d_za, TensorT<T>& d_zs) {
  const int t_n = z_a.rows(), a_n = z_a.cols(), s_n = z_s.cols();
  d_za = TensorT<T>({t_n, a_n});
  d_zs = TensorT<T>({t_n, s_n});
  if (mode == FusionMode::kConcat) {
    for (int t = 0; t < t_n; ++t) {
      const T* d = d_fused.row(t);
      T* da = d_za.row(t);
      T* ds = d_zs.row(t);
      for (int i = 0; i < a_n; ++i) da[i] = d[i];
      for (int j = 0; j < s_n; ++j) ds[j] = d[a_n + j];
    }
    return;
  }
  for (int t = 0; t < t_n; ++t) {
    const T* d = d_fused.row(t);
    const T* a = z_a.row(t);
    const T* s = z_s.row(t);
    T* da = d_za.row(t);
    T* ds = d_zs.row(t);
    for (int i = 1; i <= a_n; ++i) {
      const T* dr = d + static_cast<size_t>(i) * (s_n + 1);
      T acc = dr[0];  // j = 0 pairs a_i with the constant 1
      for (int j = 1; j <= s_n; ++j) acc += dr[j] * s[j - 1];
      da[i - 1] = acc;
    }
    for (int j = 1; j <= s_n; ++j) {
      T acc = d[j];  // i = 0 row
      for (int i = 1; i <= a_n; ++i) acc += d[static_cast<size_t>(i) * (s_n + 1) + j] * a[i - 1];
      ds[j - 1] = acc;
    }
  }
}

namespace detail {

template <typename T>
TensorT<T> take_mask(bool training, T rate, const std::vector<int>& shape, Rng* rng,
                     const LayerTraceT<T>* frozen, LayerTraceT<T>& tr) {
  if (!training || rate == T(0)) return {};
  if (frozen) {
    tr.mask = frozen->mask;
    return tr.mask;
  }
  if (!rng) throw MqtError("forward: training mode needs an rng for dropout");
  tr.mask = dropout_mask<T>(shape, rate, *rng);
  return tr.mask;
}

// conv/dense -> batchnorm -> ReLU -> dropout
template <typename T, typename LinearFn>
TensorT<T> layer_block(LinearFn&& linear, const TensorT<T>& x, const BnParamT<T>& bn,
                       bool training, T momentum, T eps, T rate, Rng* rng,
                       const LayerTraceT<T>* frozen, LayerTraceT<T>& tr) {
  TensorT<T> pre = linear(x);
  TensorT<T> normed = training ? batchnorm_train(pre, bn, momentum, eps, tr.bn)
                               : batchnorm_infer(pre, bn, eps);
  tr.act = relu(normed);
  TensorT<T> mask = take_mask<T>(training, rate, tr.act.shape, rng, frozen, tr);
  tr.out = mask.empty() ? tr.act : dropout_apply(tr.act, mask);
  return tr.out;
}

}  // namespace detail

// Full forward pass. Returns class probabilities [T_m, K]; the trace captures
// everything backward needs. In training mode dropout masks come from rng, or
// are replayed from `frozen` (for finite-difference checks, which must see a
// fixed function).
template <typename T>
TensorT<T> model_forward(const ModelParamsT<T>& params, const TensorT<T>& x_a,
                         const TensorT<T>& x_s, bool training, Rng* rng,
                         std::type_identity_t<ModelTraceT<T>>* trace,
                         const std::type_identity_t<ModelTraceT<T>>* frozen = nullptr) {
  const ModelConfig& cfg = params.cfg;
  ModelTraceT<T> local;
  ModelTraceT<T>& tr = trace ? *trace : local;
  tr = ModelTraceT<T>{};
  const T momentum = static_cast<T>(cfg.bn_momentum);
  const T eps = static_cast<T>(cfg.bn_eps);

  if (cfg.use_audio()) {
    require_shape(x_a, {-1, kAudioDim}, "forward audio input");
    if (x_a.rows() < ModelConfig::kAudioStride)
      throw MqtError("forward: audio input needs at least 8 frames, got " +
                     std::to_string(x_a.rows()));
  }
  if (cfg.use_text()) {
    require_shape(x_s, {-1, kTextDim}, "forward text input");
    if (x_s.rows() < ModelConfig::kTextStride)
      throw MqtError("forward: text input needs at least 4 frames, got " +
                     std::to_string(x_s.rows()));
  }
  if (cfg.modality == Modality::kBoth && x_a.rows() != 2 * x_s.rows()) {
    std::ostringstream os;
    os << "forward: audio length " << x_a.rows() << " must be exactly twice text length "
       << x_s.rows();
    throw MqtError(os.str());
  }

  auto run_stack = [&](const std::vector<ConvSpec>& specs, const std::vector<ConvLayerT<T>>& L,
                       const TensorT<T>& x, std::vector<LayerTraceT<T>>& traces,
                       const std::vector<LayerTraceT<T>>* frozen_traces) -> TensorT<T> {
    traces.resize(L.size());
    TensorT<T> cur = x;
    for (size_t i = 0; i < L.size(); ++i) {
      const ConvSpec& spec = specs[i];
      cur = detail::layer_block<T>(
          [&](const TensorT<T>& in) { return conv1d(in, L[i].w, L[i].b, spec); }, cur, L[i].bn,
          training, momentum, eps, static_cast<T>(cfg.dropout_conv), rng,
          frozen_traces ? &(*frozen_traces)[i] : nullptr, traces[i]);
    }
    return cur;
  };

  if (cfg.use_audio()) {
    tr.x_a = x_a;
    tr.z_a = run_stack(cfg.audio_specs(), params.enc_a, x_a, tr.enc_a,
                       frozen ? &frozen->enc_a : nullptr);
  }
  if (cfg.use_text()) {
    tr.x_s = x_s;
    tr.z_s = run_stack(cfg.text_specs(), params.enc_s, x_s, tr.enc_s,
                       frozen ? &frozen->enc_s : nullptr);
  }

  switch (cfg.modality) {
    case Modality::kAudio: tr.fused = tr.z_a; break;
    case Modality::kText: tr.fused = tr.z_s; break;
    default: tr.fused = fuse_rows(tr.z_a, tr.z_s, cfg.fusion); break;
  }

  TensorT<T> cur = tr.fused;
  tr.trunk.resize(params.trunk.size());
  for (size_t i = 0; i < params.trunk.size(); ++i) {
    cur = detail::layer_block<T>(
        [&](const TensorT<T>& in) { return dense(in, params.trunk[i].w, params.trunk[i].b); },
        cur, params.trunk[i].bn, training, momentum, eps, static_cast<T>(cfg.dropout_trunk), rng,
        frozen ? &frozen->trunk[i] : nullptr, tr.trunk[i]);
  }
  tr.z_y = cur;

  tr.logits = dense(tr.z_y, params.head_w, params.head_b);
  tr.probs = softmax_rows(tr.logits);
  if (cfg.multitask) {
    tr.bin_logits = dense(tr.z_y, params.bin_w, params.bin_b);
    tr.bin_probs = softmax_rows(tr.bin_logits);
  }
  return tr.probs;
}

// Inference-mode encoder outputs (z_a / z_s), mainly for analysis and tests.
template <typename T>
TensorT<T> encode_audio(const ModelParamsT<T>& params, const TensorT<T>& x_a) {
  if (!params.cfg.use_audio()) throw MqtError("encode_audio: model has no audio encoder");
  std::vector<LayerTraceT<T>> traces(params.enc_a.size());
  TensorT<T> cur = x_a;
  const auto specs = params.cfg.audio_specs();
  for (size_t i = 0; i < params.enc_a.size(); ++i)
    cur = detail::layer_block<T>(
        [&](const TensorT<T>& in) {
          return conv1d(in, params.enc_a[i].w, params.enc_a[i].b, specs[i]);
        },
        cur, params.enc_a[i].bn, false, static_cast<T>(params.cfg.bn_momentum),
        static_cast<T>(params.cfg.bn_eps), T(0), nullptr, nullptr, traces[i]);
  return cur;
}

template <typename T>
TensorT<T> encode_text(const ModelParamsT<T>& params, const TensorT<T>& x_s) {
  if (!params.cfg.use_text()) throw MqtError("encode_text: model has no text encoder");
  std::vector<LayerTraceT<T>> traces(params.enc_s.size());
  TensorT<T> cur = x_s;
  const auto specs = params.cfg.text_specs();
  for (size_t i = 0; i < params.enc_s.size(); ++i)
    cur = detail::layer_block<T>(
        [&](const TensorT<T>& in) {
          return conv1d(in, params.enc_s[i].w, params.enc_s[i].b, specs[i]);
        },
        cur, params.enc_s[i].bn, false, static_cast<T>(params.cfg.bn_momentum),
        static_cast<T>(params.cfg.bn_eps), T(0), nullptr, nullptr, traces[i]);
  return cur;
}

namespace detail {

template <typename T>
void add_inplace(TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape != b.shape) throw MqtError("add: shape mismatch");
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace detail

// Backpropagation from head gradients to parameter gradients. dlogits (and
// dbin_logits when multitask) already include any loss scaling. Gradients
// accumulate into `grads`, so batches just reuse one holder.
template <typename T>
void model_backward(const ModelParamsT<T>& params, const ModelTraceT<T>& tr,
                    const TensorT<T>& dlogits, const TensorT<T>* dbin_logits,
                    ModelParamsT<T>& grads) {
  const ModelConfig& cfg = params.cfg;
  TensorT<T> d_zy = dense_backward(tr.z_y, params.head_w, dlogits, grads.head_w, grads.head_b);
  if (dbin_logits) {
    TensorT<T> d2 = dense_backward(tr.z_y, params.bin_w, *dbin_logits, grads.bin_w, grads.bin_b);
    detail::add_inplace(d_zy, d2);
  }

  TensorT<T> d = std::move(d_zy);
  for (int i = static_cast<int>(params.trunk.size()) - 1; i >= 0; --i) {
    const auto& layer = params.trunk[static_cast<size_t>(i)];
    auto& glayer = grads.trunk[static_cast<size_t>(i)];
    const auto& ltr = tr.trunk[static_cast<size_t>(i)];
    if (!ltr.mask.empty()) d = dropout_apply(d, ltr.mask);
    d = relu_backward(d, ltr.act);
    d = batchnorm_backward(d, layer.bn, ltr.bn, glayer.bn.gamma, glayer.bn.beta);
    const TensorT<T>& x_in = i == 0 ? tr.fused : tr.trunk[static_cast<size_t>(i) - 1].out;
    d = dense_backward(x_in, layer.w, d, glayer.w, glayer.b);
  }

  TensorT<T> d_za, d_zs;
  switch (cfg.modality) {
    case Modality::kAudio: d_za = std::move(d); break;
    case Modality::kText: d_zs = std::move(d); break;
    default: unfuse_rows(d, tr.z_a, tr.z_s, cfg.fusion, d_za, d_zs); break;
  }

  auto back_stack = [&](const std::vector<ConvSpec>& specs, const std::vector<ConvLayerT<T>>& L,
                        std::vector<ConvLayerT<T>>& G, const std::vector<LayerTraceT<T>>& traces,
                        const TensorT<T>& x0, TensorT<T> dz) {
    for (int i = static_cast<int>(L.size()) - 1; i >= 0; --i) {
      const auto& ltr = traces[static_cast<size_t>(i)];
      if (!ltr.mask.empty()) dz = dropout_apply(dz, ltr.mask);
      dz = relu_backward(dz, ltr.act);
      dz = batchnorm_backward(dz, L[static_cast<size_t>(i)].bn, ltr.bn,
                              G[static_cast<size_t>(i)].bn.gamma, G[static_cast<size_t>(i)].bn.beta);
      const TensorT<T>& x_in = i == 0 ? x0 : traces[static_cast<size_t>(i) - 1].out;
      dz = conv1d_backward(x_in, L[static_cast<size_t>(i)].w, specs[static_cast<size_t>(i)], dz,
                           G[static_cast<size_t>(i)].w, G[static_cast<size_t>(i)].b);
    }
  };
  if (cfg.use_audio()) back_stack(cfg.audio_specs(), params.enc_a, grads.enc_a, tr.enc_a, tr.x_a, std::move(d_za));
  if (cfg.use_text()) back_stack(cfg.text_specs(), params.enc_s, grads.enc_s, tr.enc_s, tr.x_s, std::move(d_zs));
}

// Checkpoint container: magic "MQTM", version, config block, named tensor
// records. Round trips are bit-exact.
void save_checkpoint(const ModelParamsT<float>& params, const std::string& path);
ModelParamsT<float> load_checkpoint(const std::string& path, int expected_classes = -1);

}  // namespace mqt
