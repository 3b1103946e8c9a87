#include "p2mark/watermark.hpp"

#include "p2mark/errors.hpp"

#include <cmath>

namespace p2mark {

Watermark::Watermark(std::vector<uint8_t> bits) : bits_(std::move(bits)) {
    if (bits_.empty()) throw DomainError("watermark: length must be >= 1");
    for (auto b : bits_)
        if (b > 1) throw DomainError("watermark: bits must be 0 or 1");
}

Watermark Watermark::parse(std::string_view text) {
    std::vector<uint8_t> bits;
    bits.reserve(text.size());
    for (char c : text) {
        if (c != '0' && c != '1')
            throw DomainError("watermark: '" + std::string(text) + "' is not a bit string of 0/1 characters");
        bits.push_back(static_cast<uint8_t>(c - '0'));
    }
    return Watermark(std::move(bits));
}

Watermark Watermark::zeros(size_t length) { return Watermark(std::vector<uint8_t>(length, 0)); }

Watermark Watermark::complement() const {
    auto out = bits_;
    for (auto& b : out) b ^= 1U;
    return Watermark(std::move(out));
}

std::string Watermark::to_string() const {
    std::string s;
    s.reserve(bits_.size());
    for (auto b : bits_) s.push_back(static_cast<char>('0' + b));
    return s;
}

torch::Tensor Watermark::to_tensor() const {
    auto t = torch::empty({static_cast<int64_t>(bits_.size())}, torch::kFloat32);
    auto acc = t.accessor<float, 1>();
    for (size_t i = 0; i < bits_.size(); ++i) acc[static_cast<int64_t>(i)] = static_cast<float>(bits_[i]);
    return t;
}

Watermark random_watermark(int64_t length, uint64_t seed) {
    return WatermarkSampler(length, seed).next();
}

WatermarkSampler::WatermarkSampler(int64_t length, uint64_t seed) : length_(length), engine_(seed) {
    if (length < 1) throw DomainError("watermark: length must be >= 1, got " + std::to_string(length));
}

Watermark WatermarkSampler::next() {
    std::vector<uint8_t> bits(static_cast<size_t>(length_));
    for (auto& b : bits) b = static_cast<uint8_t>(engine_() >> 63);
    return Watermark(std::move(bits));
}

torch::Tensor WatermarkSampler::next_batch(int64_t batch) {
    auto out = torch::empty({batch, length_}, torch::kFloat32);
    auto acc = out.accessor<float, 2>();
    for (int64_t i = 0; i < batch; ++i)
        for (int64_t j = 0; j < length_; ++j) acc[i][j] = static_cast<float>(engine_() >> 63);
    return out;
}

double bit_accuracy(const Watermark& a, const Watermark& b) {
    if (a.size() != b.size())
        throw PayloadShapeError("bit_accuracy: lengths differ (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
    size_t same = 0;
    for (size_t i = 0; i < a.size(); ++i) same += a[i] == b[i] ? 1 : 0;
    return static_cast<double>(same) / static_cast<double>(a.size());
}

WatermarkEncoderImpl::WatermarkEncoderImpl(int64_t bits, int64_t rank) : bits_(bits), rank_(rank) {
    if (bits < 1 || rank < 1) throw ConfigurationError("watermark encoder: bits and rank must be positive");
    auto v = torch::empty({bits, rank});
    torch::nn::init::orthogonal_(v);
    direction = register_parameter("direction", v);
    gain = register_parameter("gain", v.norm(2, {1}).detach().clone());
}

torch::Tensor WatermarkEncoderImpl::embedding_table() const {
    return gain.unsqueeze(1) * direction / direction.norm(2, {1}, /*keepdim=*/true);
}

torch::Tensor WatermarkEncoderImpl::forward(const torch::Tensor& bits) const {
    if (bits.size(-1) != bits_)
        throw PayloadShapeError("watermark encoder: expected " + std::to_string(bits_) + " bits, got " +
                                std::to_string(bits.size(-1)));
    auto table = embedding_table();
    auto sum = torch::matmul(bits.to(table.scalar_type()), table);
    return 1.0 + sum / std::sqrt(static_cast<double>(bits_));
}

torch::Tensor encode_watermark(const Watermark& w, const WatermarkEncoderImpl& enc) {
    if (static_cast<int64_t>(w.size()) != enc.bits())
        throw PayloadShapeError("encode_watermark: watermark has " + std::to_string(w.size()) +
                                " bits but the encoder expects " + std::to_string(enc.bits()));
    return enc.forward(w.to_tensor());
}

ResidualBlock2dImpl::ResidualBlock2dImpl(int64_t channels, int64_t stride) {
    using torch::nn::Conv2dOptions;
    conv1 = register_module("conv1", torch::nn::Conv2d(Conv2dOptions(channels, channels, 3).stride(stride).padding(1)));
    conv2 = register_module("conv2", torch::nn::Conv2d(Conv2dOptions(channels, channels, 3).padding(1)));
    if (stride != 1)
        skip = register_module("skip", torch::nn::Conv2d(Conv2dOptions(channels, channels, 1).stride(stride)));
}

torch::Tensor ResidualBlock2dImpl::forward(const torch::Tensor& x) {
    auto h = conv2(torch::relu(conv1(torch::relu(x))));
    return h + (skip ? skip(x) : x);
}

WatermarkDecoderImpl::WatermarkDecoderImpl(WatermarkDecoderOptions opts) : opts_(opts) {
    if (opts_.bits < 1 || opts_.n_mels < 1 || opts_.blocks < 0 || opts_.channels < 1 || opts_.min_frames < 1)
        throw ConfigurationError("watermark decoder: invalid options");
    stem = register_module(
        "stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, opts_.channels, 3).stride(2).padding(1)));
    body = register_module("body", torch::nn::Sequential());
    for (int64_t i = 0; i < opts_.blocks; ++i)
        body->push_back(ResidualBlock2d(opts_.channels, i == opts_.blocks / 2 ? 2 : 1));
    head = register_module("head", torch::nn::Linear(opts_.channels, opts_.bits));
}

torch::Tensor WatermarkDecoderImpl::forward(const torch::Tensor& logmel) {
    const bool batched = logmel.dim() == 3;
    if (logmel.dim() != 2 && !batched)
        throw FeatureShapeError("watermark decoder: expected (n_mels, frames) or (batch, n_mels, frames)");
    if (logmel.size(-2) != opts_.n_mels)
        throw FeatureShapeError("watermark decoder: expected " + std::to_string(opts_.n_mels) + " mel bins, got " +
                                std::to_string(logmel.size(-2)));
    if (logmel.size(-1) < opts_.min_frames)
        throw InputLengthError("watermark decoder: need at least " + std::to_string(opts_.min_frames) +
                               " frames, got " + std::to_string(logmel.size(-1)));
    auto x = batched ? logmel : logmel.unsqueeze(0);
    x = x - x.mean({1, 2}, /*keepdim=*/true);
    auto h = body->forward(stem(x.unsqueeze(1)));
    auto pooled = torch::relu(h).mean({2, 3});
    auto logits = head(pooled);
    return batched ? logits : logits.squeeze(0);
}

DecodedWatermark decisions_from_logits(const torch::Tensor& logits) {
    auto flat = logits.detach().to(torch::kFloat64).reshape({-1});
    auto probs = torch::sigmoid(flat);
    DecodedWatermark out;
    out.probabilities.resize(static_cast<size_t>(flat.numel()));
    std::vector<uint8_t> bits(out.probabilities.size());
    auto acc = probs.accessor<double, 1>();
    for (int64_t i = 0; i < flat.numel(); ++i) {
        out.probabilities[static_cast<size_t>(i)] = acc[i];
        bits[static_cast<size_t>(i)] = acc[i] >= 0.5 ? 1 : 0;
    }
    out.bits = Watermark(std::move(bits));
    return out;
}

DecodedWatermark decode_watermark(const torch::Tensor& logmel, WatermarkDecoderImpl& dec) {
    torch::NoGradGuard no_grad;
    return decisions_from_logits(dec.forward(logmel));
}

}  // namespace p2mark
