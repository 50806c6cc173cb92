#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mqt/model.hpp"

namespace mqt {

// Model steps completed by one push: a class distribution per step plus its
// argmax label. Chunked inference runs the model in inference mode (frozen
// batch-norm stats, no dropout) and reproduces the offline forward bit for
// bit; the auxiliary binary head of multitask models is not evaluated.
struct StreamOut {
  Tensor probs;     // [n_new, num_classes]
  LabelSeq labels;  // argmax per row

  int rows() const { return probs.data.empty() ? 0 : probs.rows(); }
};

// One conv layer fed frame by frame. A ring buffer holds the last `kernel`
// input frames with the left zero padding pre-primed, and each output step is
// emitted (conv + folded batch norm + relu) the moment the last frame of its
// centered window arrives. flush() feeds the right zero padding, after which
// exactly floor(true_frames / stride) steps have been emitted.
class ConvStream {
 public:
  void init(const ConvSpec& spec, const Tensor& w, const Tensor& b, const BnParam& bn, float eps);
  // feed one input frame of spec.in_ch values; finished rows (spec.out_ch
  // wide each) are appended to out
  void push_frame(const float* frame, std::vector<float>& out);
  // feed the right zero padding and emit every remaining step
  void flush(std::vector<float>& out);
  int64_t emitted() const { return next_step_ - 1; }
  size_t state_bytes() const;

 private:
  float* ring_row(int64_t abs_index);
  void emit_ready(std::vector<float>& out);

  ConvSpec spec_;
  const Tensor* w_ = nullptr;
  const Tensor* b_ = nullptr;
  std::vector<float> scale_, shift_;     // folded batch norm
  std::vector<float> ring_;              // kernel rows, slot = abs index mod kernel
  std::vector<const float*> win_;        // scratch window pointers
  int64_t n_true_ = 0;                   // real frames pushed so far
  int64_t newest_ = 0;                   // newest absolute frame (1-based; pads <= 0)
  int64_t next_step_ = 1;                // next output step (1-based)
};

// A stack of ConvStreams; rows emitted by one layer feed the next.
class EncoderStream {
 public:
  void init(const std::vector<ConvSpec>& specs, const std::vector<ConvLayerT<float>>& layers,
            float eps);
  // feed n frames of frame_dim values each; last-layer rows go to out
  void push(const float* frames, int n, int frame_dim, std::vector<float>& out);
  void flush(std::vector<float>& out);
  int out_dim() const { return specs_.empty() ? 0 : specs_.back().out_ch; }
  size_t state_bytes() const;

 private:
  void cascade(size_t layer, const float* row, std::vector<float>& out);

  std::vector<ConvSpec> specs_;
  std::vector<ConvStream> layers_;
  std::vector<std::vector<float>> scratch_;  // per-layer emission staging
};

// Incremental inference over one call. Buffers are sized by the receptive
// field, independent of call length; outputs match the offline forward on the
// frames seen so far, step for step.
class StreamSession {
 public:
  explicit StreamSession(const ModelParams& params);

  // audio chunk [t_a, 40] with t_a even, text chunk [t_a/2, 29]; chunks
  // arrive in call order. Returns the model steps this chunk completes.
  StreamOut push_chunk(const Tensor& a_chunk, const Tensor& s_chunk);
  // validation only (throws exactly when push_chunk would); lets a batcher
  // reject bad input before handing work to threads
  void check_chunk(const Tensor& a_chunk, const Tensor& s_chunk) const;
  // feeds the terminal zero padding and returns the remaining steps, bringing
  // the total to floor(total_audio_frames / 8). Calling again emits nothing.
  StreamOut finalize();

  bool finalized() const { return finalized_; }
  int64_t steps_emitted() const { return emitted_; }
  int64_t audio_frames_seen() const { return frames_a_; }
  size_t state_bytes() const;
  size_t peak_queue_rows() const { return peak_queue_; }

 private:
  StreamOut drain();

  const ModelParams* p_;
  EncoderStream enc_a_, enc_s_;
  std::vector<float> qa_, qs_;       // encoder rows awaiting their partner
  size_t qa_pop_ = 0, qs_pop_ = 0;   // consumed row counts
  std::vector<std::vector<float>> trunk_scale_, trunk_shift_;
  std::vector<float> fused_, act_a_, act_b_, logits_;  // per-step scratch
  int64_t frames_a_ = 0, frames_s_ = 0;
  int64_t emitted_ = 0;
  size_t peak_queue_ = 0;
  bool finalized_ = false;
};

// Runs n_streams sessions against the same immutable params, one chunk per
// stream per tick. Sessions are independent, so per-call outputs are
// identical to running each session unbatched, bit for bit.
class StreamBatcher {
 public:
  StreamBatcher(const ModelParams& params, int n_streams, int threads = 0);

  // a_chunks[i]/s_chunks[i] go to stream i; nullptr skips that stream
  std::vector<StreamOut> push_tick(const std::vector<const Tensor*>& a_chunks,
                                   const std::vector<const Tensor*>& s_chunks);
  std::vector<StreamOut> finalize_all();

  StreamSession& session(int i) { return sessions_.at(static_cast<size_t>(i)); }
  int size() const { return static_cast<int>(sessions_.size()); }

 private:
  std::vector<StreamSession> sessions_;
  int threads_;
};

struct RtfReport {
  double audio_seconds = 0;  // total audio processed across all streams
  double wall_seconds = 0;
  double rtf = 0;            // audio_seconds / wall_seconds
  double latency_p50_ms = 0;
  double latency_p90_ms = 0;
  double latency_p99_ms = 0;
  double latency_max_ms = 0;
  double chunk_seconds = 0;
  int n_streams = 1;
  int threads = 1;

  std::string to_line() const;   // one machine-readable key=value line
  std::string to_table() const;  // human-readable block
};

// Streams synthetic input through n_streams sessions in chunk_s chunks and
// measures aggregate throughput; per-chunk latency is the wall time of one
// tick across all streams. Input generation is excluded from the clock, all
// buffer movement is included.
RtfReport bench_rtf(const ModelParams& params, double call_duration_s = 166.0,
                    double chunk_s = 1.0, int n_streams = 1, int threads = 0, uint64_t seed = 1);

// Single full-call offline forward on the same synthetic input.
RtfReport bench_offline(const ModelParams& params, double call_duration_s = 166.0,
                        uint64_t seed = 1);

}  // namespace mqt
