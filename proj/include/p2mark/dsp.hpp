#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace p2mark::dsp {

// b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
struct Biquad {
    std::array<double, 3> b{1.0, 0.0, 0.0};
    std::array<double, 2> a{0.0, 0.0};
};

enum class BandType { kLowpass, kHighpass, kBandpass };

// Digital Butterworth filter (bilinear transform with pre-warping) as second-order sections.
// Bandpass designs have order 2 * `order`. Cutoffs are in Hz and must lie in (0, sample_rate / 2).
std::vector<Biquad> butterworth(int order, BandType type, double sample_rate, double low_hz, double high_hz = 0.0);

// Causal single-pass filtering with zero initial state; output length equals input length.
std::vector<float> sosfilt(const std::vector<Biquad>& sections, std::span<const float> x);

// Magnitude response |H(e^{j 2 pi f / fs})|.
double magnitude_response(const std::vector<Biquad>& sections, double sample_rate, double hz);

// Band-limited (Kaiser-windowed sinc) resampling. Output has round(n * to / from) samples.
std::vector<float> resample(std::span<const float> x, int64_t from_rate, int64_t to_rate);

}  // namespace p2mark::dsp
