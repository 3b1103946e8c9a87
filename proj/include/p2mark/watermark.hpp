#pragma once

#include "p2mark/mel.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace p2mark {

// Fixed-length binary payload, bits indexed 0..l-1.
class Watermark {
public:
    Watermark() = default;
    explicit Watermark(std::vector<uint8_t> bits);

    // Parses an ASCII bit string such as "1011". Throws DomainError on other characters.
    static Watermark parse(std::string_view text);
    static Watermark zeros(size_t length);

    size_t size() const noexcept { return bits_.size(); }
    const std::vector<uint8_t>& bits() const noexcept { return bits_; }
    uint8_t operator[](size_t i) const { return bits_.at(i); }

    Watermark complement() const;
    std::string to_string() const;
    // (l) float tensor of 0/1 values.
    torch::Tensor to_tensor() const;

    bool operator==(const Watermark&) const = default;

private:
    std::vector<uint8_t> bits_;
};

// Each bit is the top bit of one draw from a 64-bit Mersenne twister seeded with `seed`.
Watermark random_watermark(int64_t length, uint64_t seed);

// Stateful source for per-batch watermark sampling; same seed gives the same sequence.
class WatermarkSampler {
public:
    WatermarkSampler(int64_t length, uint64_t seed);
    Watermark next();
    // (batch, l) float tensor, one fresh watermark per row.
    torch::Tensor next_batch(int64_t batch);

private:
    int64_t length_;
    std::mt19937_64 engine_;
};

// (1/l) * #{i : a_i == b_i}. Throws PayloadShapeError on length mismatch.
double bit_accuracy(const Watermark& a, const Watermark& b);

// Learnable per-bit embedding table of shape (l, r) with weight normalization over rows.
// The direction table is orthogonally initialized and the row gains start at the row norms.
class WatermarkEncoderImpl : public torch::nn::Module {
public:
    WatermarkEncoderImpl(int64_t bits, int64_t rank);

    int64_t bits() const noexcept { return bits_; }
    int64_t rank() const noexcept { return rank_; }

    // Effective embedding rows emb_i, shape (l, r).
    torch::Tensor embedding_table() const;

    // bits: (l) or (batch, l) with 0/1 entries. Returns s = 1 + (1/sqrt(l)) * sum_{i: w_i = 1} emb_i,
    // shaped (r) or (batch, r).
    torch::Tensor forward(const torch::Tensor& bits) const;

    torch::Tensor direction;  // v, (l, r)
    torch::Tensor gain;       // g, (l)

private:
    int64_t bits_;
    int64_t rank_;
};
TORCH_MODULE(WatermarkEncoder);

// Scaling vector for a single watermark.
torch::Tensor encode_watermark(const Watermark& w, const WatermarkEncoderImpl& enc);

struct WatermarkDecoderOptions {
    int64_t bits = 8;
    int64_t n_mels = 80;
    int64_t blocks = 4;
    int64_t channels = 32;
    // Shortest accepted spectrogram; shorter inputs are rejected.
    int64_t min_frames = 4;
};

class ResidualBlock2dImpl : public torch::nn::Module {
public:
    ResidualBlock2dImpl(int64_t channels, int64_t stride);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
};
TORCH_MODULE(ResidualBlock2d);

// Residual 2-D CNN over (mel-bin x frame) followed by global pooling and a linear head.
// The per-item mean of the log-mel input is removed first, so a constant gain on the
// waveform (a constant offset in log-mel) does not change the logits.
class WatermarkDecoderImpl : public torch::nn::Module {
public:
    explicit WatermarkDecoderImpl(WatermarkDecoderOptions opts);

    const WatermarkDecoderOptions& options() const noexcept { return opts_; }

    // logmel: (n_mels, frames) or (batch, n_mels, frames). Returns logits (l) or (batch, l).
    torch::Tensor forward(const torch::Tensor& logmel);

private:
    WatermarkDecoderOptions opts_;
    torch::nn::Conv2d stem{nullptr};
    torch::nn::Sequential body{nullptr};
    torch::nn::Linear head{nullptr};
};
TORCH_MODULE(WatermarkDecoder);

struct DecodedWatermark {
    std::vector<double> probabilities;
    Watermark bits;
};

// bits[i] = 1 iff sigmoid(logit_i) >= 0.5, so a zero logit decodes to 1.
DecodedWatermark decisions_from_logits(const torch::Tensor& logits);

DecodedWatermark decode_watermark(const torch::Tensor& logmel, WatermarkDecoderImpl& dec);

}  // namespace p2mark
