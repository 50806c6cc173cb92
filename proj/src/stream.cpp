#include "mqt/stream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <sstream>

#include "mqt/parallel.hpp"
#include "mqt/rng.hpp"

namespace mqt {

// ---------------------------------------------------------------------------
// ConvStream
// ---------------------------------------------------------------------------

void ConvStream::init(const ConvSpec& spec, const Tensor& w, const Tensor& b, const BnParam& bn,
                      float eps) {
  spec.validate();
  spec_ = spec;
  w_ = &w;
  b_ = &b;
  bn_fold(bn, eps, scale_, shift_);
  // zero-filled ring doubles as the left padding: absolute frames <= 0 map to
  // slots that are never overwritten before their last use
  ring_.assign(static_cast<size_t>(spec.kernel) * spec.in_ch, 0.0f);
  win_.assign(static_cast<size_t>(spec.kernel), nullptr);
  n_true_ = 0;
  newest_ = 0;
  next_step_ = 1;
}

float* ConvStream::ring_row(int64_t abs_index) {
  const int64_t k = spec_.kernel;
  const int64_t slot = ((abs_index % k) + k) % k;
  return ring_.data() + static_cast<size_t>(slot) * spec_.in_ch;
}

void ConvStream::emit_ready(std::vector<float>& out) {
  const int64_t s = spec_.stride, r_r = spec_.right_half(), r_l = spec_.left_half();
  while (s * next_step_ + r_r <= newest_ && s * next_step_ <= n_true_) {
    const int64_t base = s * next_step_ - r_l;
    for (int tap = 0; tap < spec_.kernel; ++tap) win_[static_cast<size_t>(tap)] = ring_row(base + tap);
    const size_t at = out.size();
    out.resize(at + static_cast<size_t>(spec_.out_ch));
    float* o = out.data() + at;
    conv_window_row<float>(win_.data(), *w_, *b_, o);
    for (int c = 0; c < spec_.out_ch; ++c) {
      const float v = o[c] * scale_[static_cast<size_t>(c)] + shift_[static_cast<size_t>(c)];
      o[c] = v > 0.0f ? v : 0.0f;
    }
    ++next_step_;
  }
}

void ConvStream::push_frame(const float* frame, std::vector<float>& out) {
  ++newest_;
  ++n_true_;
  std::memcpy(ring_row(newest_), frame, sizeof(float) * static_cast<size_t>(spec_.in_ch));
  emit_ready(out);
}

void ConvStream::flush(std::vector<float>& out) {
  for (int i = 0; i < spec_.right_half(); ++i) {
    ++newest_;
    std::memset(ring_row(newest_), 0, sizeof(float) * static_cast<size_t>(spec_.in_ch));
    emit_ready(out);
  }
}

size_t ConvStream::state_bytes() const {
  return (ring_.capacity() + scale_.capacity() + shift_.capacity()) * sizeof(float) +
         win_.capacity() * sizeof(const float*);
}

// ---------------------------------------------------------------------------
// EncoderStream
// ---------------------------------------------------------------------------

void EncoderStream::init(const std::vector<ConvSpec>& specs,
                         const std::vector<ConvLayerT<float>>& layers, float eps) {
  if (specs.size() != layers.size()) throw MqtError("encoder stream: spec/layer count mismatch");
  specs_ = specs;
  layers_.assign(specs.size(), ConvStream());
  scratch_.assign(specs.size(), {});
  for (size_t i = 0; i < specs.size(); ++i)
    layers_[i].init(specs[i], layers[i].w, layers[i].b, layers[i].bn, eps);
}

void EncoderStream::cascade(size_t layer, const float* row, std::vector<float>& out) {
  if (layer == layers_.size()) {
    out.insert(out.end(), row, row + out_dim());
    return;
  }
  std::vector<float>& emitted = scratch_[layer];
  emitted.clear();
  layers_[layer].push_frame(row, emitted);
  const int dim = specs_[layer].out_ch;
  for (size_t off = 0; off < emitted.size(); off += static_cast<size_t>(dim))
    cascade(layer + 1, emitted.data() + off, out);
}

void EncoderStream::push(const float* frames, int n, int frame_dim, std::vector<float>& out) {
  if (layers_.empty()) throw MqtError("encoder stream: not initialized");
  if (frame_dim != specs_[0].in_ch) throw MqtError("encoder stream: frame width mismatch");
  for (int i = 0; i < n; ++i)
    cascade(0, frames + static_cast<size_t>(i) * frame_dim, out);
}

void EncoderStream::flush(std::vector<float>& out) {
  std::vector<float> burst;
  for (size_t l = 0; l < layers_.size(); ++l) {
    burst.clear();
    layers_[l].flush(burst);
    const int dim = specs_[l].out_ch;
    for (size_t off = 0; off < burst.size(); off += static_cast<size_t>(dim))
      cascade(l + 1, burst.data() + off, out);
  }
}

size_t EncoderStream::state_bytes() const {
  size_t n = 0;
  for (const ConvStream& c : layers_) n += c.state_bytes();
  for (const auto& s : scratch_) n += s.capacity() * sizeof(float);
  return n;
}

// ---------------------------------------------------------------------------
// StreamSession
// ---------------------------------------------------------------------------

StreamSession::StreamSession(const ModelParams& params) : p_(&params) {
  const ModelConfig& cfg = params.cfg;
  cfg.validate();
  const float eps = cfg.bn_eps;
  if (cfg.use_audio()) enc_a_.init(cfg.audio_specs(), params.enc_a, eps);
  if (cfg.use_text()) enc_s_.init(cfg.text_specs(), params.enc_s, eps);
  trunk_scale_.resize(params.trunk.size());
  trunk_shift_.resize(params.trunk.size());
  for (size_t i = 0; i < params.trunk.size(); ++i)
    bn_fold(params.trunk[i].bn, eps, trunk_scale_[i], trunk_shift_[i]);
  fused_.resize(static_cast<size_t>(cfg.fused_dim()));
  act_a_.resize(static_cast<size_t>(cfg.trunk_units));
  act_b_.resize(static_cast<size_t>(cfg.trunk_units));
  logits_.resize(static_cast<size_t>(cfg.num_classes));
}

void StreamSession::check_chunk(const Tensor& a_chunk, const Tensor& s_chunk) const {
  if (finalized_) throw MqtError("push_chunk: session already finalized");
  if (a_chunk.shape.size() != 2 || a_chunk.dim(1) != kAudioDim)
    throw MqtError("push_chunk: audio chunk must be [t_a, 40]");
  if (s_chunk.shape.size() != 2 || s_chunk.dim(1) != kTextDim)
    throw MqtError("push_chunk: text chunk must be [t_a/2, 29]");
  const int t_a = a_chunk.rows();
  if (t_a % 2 != 0)
    throw MqtError("push_chunk: audio chunk length must be even, got " + std::to_string(t_a));
  if (s_chunk.rows() != t_a / 2)
    throw MqtError("push_chunk: text chunk must hold exactly t_a/2 frames (audio " +
                   std::to_string(t_a) + ", text " + std::to_string(s_chunk.rows()) + ")");
}

StreamOut StreamSession::push_chunk(const Tensor& a_chunk, const Tensor& s_chunk) {
  check_chunk(a_chunk, s_chunk);
  const int t_a = a_chunk.rows();
  if (p_->cfg.use_audio() && t_a > 0)
    enc_a_.push(a_chunk.data.data(), t_a, kAudioDim, qa_);
  if (p_->cfg.use_text() && t_a > 0)
    enc_s_.push(s_chunk.data.data(), t_a / 2, kTextDim, qs_);
  frames_a_ += t_a;
  frames_s_ += t_a / 2;
  return drain();
}

StreamOut StreamSession::finalize() {
  if (finalized_) return StreamOut{};
  if (p_->cfg.use_audio()) enc_a_.flush(qa_);
  if (p_->cfg.use_text()) enc_s_.flush(qs_);
  StreamOut out = drain();
  finalized_ = true;
  return out;
}

StreamOut StreamSession::drain() {
  const ModelConfig& cfg = p_->cfg;
  const int a_dim = cfg.use_audio() ? enc_a_.out_dim() : 0;
  const int s_dim = cfg.use_text() ? enc_s_.out_dim() : 0;
  const size_t a_rows = a_dim ? qa_.size() / static_cast<size_t>(a_dim) : 0;
  const size_t s_rows = s_dim ? qs_.size() / static_cast<size_t>(s_dim) : 0;
  peak_queue_ = std::max({peak_queue_, a_rows, s_rows});

  size_t ready = 0;
  switch (cfg.modality) {
    case Modality::kAudio: ready = a_rows - qa_pop_; break;
    case Modality::kText: ready = s_rows - qs_pop_; break;
    default: ready = std::min(a_rows - qa_pop_, s_rows - qs_pop_); break;
  }

  StreamOut out;
  out.probs = Tensor({static_cast<int>(ready), cfg.num_classes});
  out.labels.resize(ready);
  for (size_t i = 0; i < ready; ++i) {
    const float* ar = a_dim ? qa_.data() + (qa_pop_ + i) * static_cast<size_t>(a_dim) : nullptr;
    const float* sr = s_dim ? qs_.data() + (qs_pop_ + i) * static_cast<size_t>(s_dim) : nullptr;
    const float* cur = nullptr;
    switch (cfg.modality) {
      case Modality::kAudio: cur = ar; break;
      case Modality::kText: cur = sr; break;
      default:
        fuse_row(ar, a_dim, sr, s_dim, cfg.fusion, fused_.data());
        cur = fused_.data();
        break;
    }
    for (size_t l = 0; l < p_->trunk.size(); ++l) {
      float* nxt = (l % 2 == 0 ? act_a_ : act_b_).data();
      dense_row(cur, p_->trunk[l].w, p_->trunk[l].b, nxt);
      const std::vector<float>& sc = trunk_scale_[l];
      const std::vector<float>& sh = trunk_shift_[l];
      for (int c = 0; c < cfg.trunk_units; ++c) {
        const float v = nxt[c] * sc[static_cast<size_t>(c)] + sh[static_cast<size_t>(c)];
        nxt[c] = v > 0.0f ? v : 0.0f;
      }
      cur = nxt;
    }
    dense_row(cur, p_->head_w, p_->head_b, logits_.data());
    softmax_row(logits_.data(), cfg.num_classes, out.probs.row(static_cast<int>(i)));
    out.labels[i] = static_cast<int32_t>(argmax_row(out.probs, static_cast<int>(i)));
  }

  qa_pop_ += a_dim ? ready : 0;
  qs_pop_ += s_dim ? ready : 0;
  // keep the queues bounded by the cross-modality emission lag
  auto compact = [](std::vector<float>& q, size_t& pop, int dim) {
    if (pop == 0 || dim == 0) return;
    const size_t off = pop * static_cast<size_t>(dim);
    q.erase(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(off));
    pop = 0;
  };
  compact(qa_, qa_pop_, a_dim);
  compact(qs_, qs_pop_, s_dim);
  emitted_ += static_cast<int64_t>(ready);
  return out;
}

size_t StreamSession::state_bytes() const {
  size_t n = enc_a_.state_bytes() + enc_s_.state_bytes();
  n += (qa_.capacity() + qs_.capacity()) * sizeof(float);
  n += (fused_.capacity() + act_a_.capacity() + act_b_.capacity() + logits_.capacity()) *
       sizeof(float);
  for (size_t i = 0; i < trunk_scale_.size(); ++i)
    n += (trunk_scale_[i].capacity() + trunk_shift_[i].capacity()) * sizeof(float);
  return n;
}

// ---------------------------------------------------------------------------
// StreamBatcher
// ---------------------------------------------------------------------------

StreamBatcher::StreamBatcher(const ModelParams& params, int n_streams, int threads)
    : threads_(threads) {
  if (n_streams < 1) throw MqtError("batcher: need at least one stream");
  sessions_.reserve(static_cast<size_t>(n_streams));
  for (int i = 0; i < n_streams; ++i) sessions_.emplace_back(params);
}

std::vector<StreamOut> StreamBatcher::push_tick(const std::vector<const Tensor*>& a_chunks,
                                                const std::vector<const Tensor*>& s_chunks) {
  const size_t n = sessions_.size();
  if (a_chunks.size() != n || s_chunks.size() != n)
    throw MqtError("batcher: one chunk slot per stream required");
  // validate on the caller thread so workers cannot throw
  for (size_t i = 0; i < n; ++i) {
    if ((a_chunks[i] == nullptr) != (s_chunks[i] == nullptr))
      throw MqtError("batcher: audio and text chunks must be given together");
    if (a_chunks[i]) sessions_[i].check_chunk(*a_chunks[i], *s_chunks[i]);
  }
  std::vector<StreamOut> outs(n);
  parallel_for(static_cast<int>(n), threads_, [&](int i) {
    const size_t s = static_cast<size_t>(i);
    if (a_chunks[s]) outs[s] = sessions_[s].push_chunk(*a_chunks[s], *s_chunks[s]);
  });
  return outs;
}

std::vector<StreamOut> StreamBatcher::finalize_all() {
  std::vector<StreamOut> outs(sessions_.size());
  parallel_for(static_cast<int>(sessions_.size()), threads_,
               [&](int i) { outs[static_cast<size_t>(i)] = sessions_[static_cast<size_t>(i)].finalize(); });
  return outs;
}

// ---------------------------------------------------------------------------
// Benchmarks
// ---------------------------------------------------------------------------

namespace {

Tensor random_frames(int rows, int cols, Rng& rng) {
  Tensor t({rows, cols});
  for (float& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t rank = static_cast<size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::min(v.size() - 1, rank > 0 ? rank - 1 : 0)];
}

}  // namespace

RtfReport bench_rtf(const ModelParams& params, double call_duration_s, double chunk_s,
                    int n_streams, int threads, uint64_t seed) {
  if (call_duration_s <= 0 || chunk_s <= 0) throw MqtError("bench: durations must be positive");
  if (n_streams < 1) throw MqtError("bench: need at least one stream");
  int t_a = static_cast<int>(std::lround(call_duration_s * kAudioFps));
  t_a -= t_a % 2;
  int chunk_a = static_cast<int>(std::lround(chunk_s * kAudioFps));
  chunk_a = std::max(2, chunk_a - chunk_a % 2);

  // pre-cut per-stream chunk tensors; generation stays off the clock
  Rng rng(seed);
  std::vector<std::vector<Tensor>> a_cuts(static_cast<size_t>(n_streams));
  std::vector<std::vector<Tensor>> s_cuts(static_cast<size_t>(n_streams));
  for (int s = 0; s < n_streams; ++s) {
    Rng srng = rng.fork(static_cast<uint64_t>(s));
    for (int at = 0; at < t_a; at += chunk_a) {
      const int n = std::min(chunk_a, t_a - at);
      a_cuts[static_cast<size_t>(s)].push_back(random_frames(n, kAudioDim, srng));
      s_cuts[static_cast<size_t>(s)].push_back(random_frames(n / 2, kTextDim, srng));
    }
  }
  const size_t n_ticks = a_cuts[0].size();

  StreamBatcher batcher(params, n_streams, threads);
  std::vector<double> tick_ms;
  tick_ms.reserve(n_ticks);
  const auto t0 = std::chrono::steady_clock::now();
  for (size_t tick = 0; tick < n_ticks; ++tick) {
    std::vector<const Tensor*> ap(static_cast<size_t>(n_streams));
    std::vector<const Tensor*> sp(static_cast<size_t>(n_streams));
    for (int s = 0; s < n_streams; ++s) {
      ap[static_cast<size_t>(s)] = &a_cuts[static_cast<size_t>(s)][tick];
      sp[static_cast<size_t>(s)] = &s_cuts[static_cast<size_t>(s)][tick];
    }
    const auto c0 = std::chrono::steady_clock::now();
    batcher.push_tick(ap, sp);
    const auto c1 = std::chrono::steady_clock::now();
    tick_ms.push_back(std::chrono::duration<double, std::milli>(c1 - c0).count());
  }
  batcher.finalize_all();
  const auto t1 = std::chrono::steady_clock::now();

  RtfReport r;
  r.audio_seconds = static_cast<double>(t_a) / kAudioFps * n_streams;
  r.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  r.rtf = r.audio_seconds / std::max(r.wall_seconds, 1e-12);
  r.latency_p50_ms = percentile(tick_ms, 0.50);
  r.latency_p90_ms = percentile(tick_ms, 0.90);
  r.latency_p99_ms = percentile(tick_ms, 0.99);
  r.latency_max_ms = tick_ms.empty() ? 0.0 : *std::max_element(tick_ms.begin(), tick_ms.end());
  r.chunk_seconds = static_cast<double>(chunk_a) / kAudioFps;
  r.n_streams = n_streams;
  r.threads = effective_threads(threads);
  return r;
}

RtfReport bench_offline(const ModelParams& params, double call_duration_s, uint64_t seed) {
  if (call_duration_s <= 0) throw MqtError("bench: durations must be positive");
  int t_a = static_cast<int>(std::lround(call_duration_s * kAudioFps));
  t_a -= t_a % 2;
  Rng rng(seed);
  const Tensor x_a = random_frames(t_a, kAudioDim, rng);
  const Tensor x_s = random_frames(t_a / 2, kTextDim, rng);

  const auto t0 = std::chrono::steady_clock::now();
  ModelTrace tr;
  model_forward<float>(params, x_a, x_s, false, nullptr, &tr);
  const auto t1 = std::chrono::steady_clock::now();

  RtfReport r;
  r.audio_seconds = static_cast<double>(t_a) / kAudioFps;
  r.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  r.rtf = r.audio_seconds / std::max(r.wall_seconds, 1e-12);
  const double ms = r.wall_seconds * 1e3;
  r.latency_p50_ms = r.latency_p90_ms = r.latency_p99_ms = r.latency_max_ms = ms;
  r.chunk_seconds = r.audio_seconds;
  r.n_streams = 1;
  r.threads = 1;
  return r;
}

std::string RtfReport::to_line() const {
  std::ostringstream os;
  os << "rtf=" << rtf << " audio_s=" << audio_seconds << " wall_s=" << wall_seconds
     << " chunk_s=" << chunk_seconds << " n_streams=" << n_streams << " threads=" << threads
     << " p50_ms=" << latency_p50_ms << " p90_ms=" << latency_p90_ms
     << " p99_ms=" << latency_p99_ms << " max_ms=" << latency_max_ms;
  return os.str();
}

std::string RtfReport::to_table() const {
  std::ostringstream os;
  os << "  audio processed : " << audio_seconds << " s (" << n_streams << " stream"
     << (n_streams == 1 ? "" : "s") << ", " << chunk_seconds << " s chunks)\n"
     << "  wall time       : " << wall_seconds << " s\n"
     << "  real-time factor: " << rtf << "\n"
     << "  chunk latency   : p50 " << latency_p50_ms << " ms, p90 " << latency_p90_ms
     << " ms, p99 " << latency_p99_ms << " ms, max " << latency_max_ms << " ms\n"
     << "  threads         : " << threads << "\n";
  return os.str();
}

}  // namespace mqt
