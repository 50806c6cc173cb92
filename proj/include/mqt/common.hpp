#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mqt {

// Fixed stream geometry: audio features at 100 frames/s, character softmax at
// 50 frames/s, model output at 12.5 steps/s. T_a = 2*T_s = 8*T_m.
inline constexpr int kAudioFps = 100;
inline constexpr int kTextFps = 50;
inline constexpr int kAudioDim = 40;
inline constexpr int kTextDim = 29;
inline constexpr int kLabelStride = 8;            // audio frames per output step
inline constexpr double kSecondsPerStep = 0.08;   // 10 ms frames * stride 8

using LabelSeq = std::vector<int32_t>;

struct MqtError : std::runtime_error {
  explicit MqtError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mqt
