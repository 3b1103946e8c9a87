#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace p2mark {

struct MelConfig {
    int64_t sample_rate = 16000;
    int64_t n_fft = 1024;
    int64_t hop = 256;
    int64_t window = 1024;
    int64_t n_mels = 80;
    double fmin = 0.0;
    double fmax = 8000.0;

    // Throws ConfigurationError when the invariants hop <= window <= n_fft, n_mels >= 1,
    // fmax <= sample_rate / 2 do not hold.
    void validate() const;

    bool operator==(const MelConfig&) const = default;
};

inline constexpr double kLogFloor = 1e-5;

// Slaney-style mel filterbank, shape (n_mels, n_fft / 2 + 1).
torch::Tensor mel_filterbank(const MelConfig& cfg);

// Log-mel front-end shared by the reconstruction loss and the watermark decoder.
//
// Waves are reflect-padded by (n_fft - hop) / 2 on each side and framed without centering,
// so a wave of n samples yields floor((n + n_fft - hop - n_fft) / hop) + 1 frames, which is
// n / hop when hop divides n. Values are natural-log mel magnitudes floored at kLogFloor.
// The computation is differentiable and follows the dtype of the input.
class MelFrontEnd {
public:
    explicit MelFrontEnd(MelConfig cfg);

    const MelConfig& config() const noexcept { return cfg_; }

    // wave: (N) or (B, N). Returns (n_mels, frames) or (B, n_mels, frames).
    torch::Tensor operator()(const torch::Tensor& wave) const;

    int64_t frames_for(int64_t samples) const;
    int64_t padding() const noexcept { return (cfg_.n_fft - cfg_.hop) / 2; }

private:
    MelConfig cfg_;
    torch::Tensor basis_;
    torch::Tensor window_;
};

// Free-function form of MelFrontEnd for one-off use.
torch::Tensor mel_spectrogram(const torch::Tensor& wave, const MelConfig& cfg);

}  // namespace p2mark
