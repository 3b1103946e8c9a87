#include "p2mark/mel.hpp"

#include "p2mark/errors.hpp"

#include <cmath>
#include <string>

namespace p2mark {

namespace {

// Slaney mel scale: linear below 1 kHz, logarithmic above.
constexpr double kMinLogHz = 1000.0;
constexpr double kLinearStep = 200.0 / 3.0;
constexpr double kMinLogMel = kMinLogHz / kLinearStep;
const double kLogStep = std::log(6.4) / 27.0;

double hz_to_mel(double hz) {
    if (hz < kMinLogHz) return hz / kLinearStep;
    return kMinLogMel + std::log(hz / kMinLogHz) / kLogStep;
}

double mel_to_hz(double mel) {
    if (mel < kMinLogMel) return mel * kLinearStep;
    return kMinLogHz * std::exp(kLogStep * (mel - kMinLogMel));
}

}  // namespace

void MelConfig::validate() const {
    if (sample_rate <= 0) throw ConfigurationError("mel: sample_rate must be positive");
    if (hop <= 0 || hop > window || window > n_fft)
        throw ConfigurationError("mel: require 0 < hop <= window <= n_fft");
    if (n_mels < 1) throw ConfigurationError("mel: n_mels must be >= 1");
    if (fmin < 0.0 || fmax <= fmin || fmax > sample_rate / 2.0)
        throw ConfigurationError("mel: require 0 <= fmin < fmax <= sample_rate / 2");
}

torch::Tensor mel_filterbank(const MelConfig& cfg) {
    cfg.validate();
    const int64_t bins = cfg.n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(cfg.fmin);
    const double mel_hi = hz_to_mel(cfg.fmax);

    std::vector<double> edges(static_cast<size_t>(cfg.n_mels + 2));
    for (size_t i = 0; i < edges.size(); ++i) {
        const double m = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1);
        edges[i] = mel_to_hz(m);
    }

    auto fb = torch::zeros({cfg.n_mels, bins}, torch::kFloat64);
    auto acc = fb.accessor<double, 2>();
    for (int64_t m = 0; m < cfg.n_mels; ++m) {
        const double lo = edges[static_cast<size_t>(m)];
        const double center = edges[static_cast<size_t>(m + 1)];
        const double hi = edges[static_cast<size_t>(m + 2)];
        const double norm = 2.0 / (hi - lo);
        for (int64_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.n_fft);
            const double rise = (f - lo) / (center - lo);
            const double fall = (hi - f) / (hi - center);
            const double w = std::max(0.0, std::min(rise, fall));
            acc[m][k] = w * norm;
        }
    }
    return fb.to(torch::kFloat32);
}

MelFrontEnd::MelFrontEnd(MelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    basis_ = mel_filterbank(cfg_);
    window_ = torch::hann_window(cfg_.window, torch::TensorOptions().dtype(torch::kFloat32));
}

int64_t MelFrontEnd::frames_for(int64_t samples) const {
    return (samples + 2 * padding() - cfg_.n_fft) / cfg_.hop + 1;
}

torch::Tensor MelFrontEnd::operator()(const torch::Tensor& wave) const {
    const bool batched = wave.dim() == 2;
    if (wave.dim() != 1 && !batched)
        throw FeatureShapeError("mel: expected a 1-D wave or a (batch, samples) tensor");
    const int64_t n = wave.size(-1);
    if (n < cfg_.n_fft)
        throw InputLengthError("mel: wave of " + std::to_string(n) + " samples is shorter than n_fft " +
                               std::to_string(cfg_.n_fft));

    auto x = batched ? wave : wave.unsqueeze(0);
    const auto dtype = x.scalar_type();
    x = torch::reflection_pad1d(x.unsqueeze(1), {padding(), padding()}).squeeze(1);

    auto spec = torch::stft(x, cfg_.n_fft, cfg_.hop, cfg_.window, window_.to(dtype),
                            /*normalized=*/false, /*onesided=*/true, /*return_complex=*/true);
    // sqrt(|X|^2 + eps) keeps the gradient finite on silent frames.
    auto mag = torch::sqrt(torch::real(spec).square() + torch::imag(spec).square() + 1e-9);
    auto mel = torch::matmul(basis_.to(dtype), mag);
    auto out = torch::log(torch::clamp_min(mel, kLogFloor));
    return batched ? out : out.squeeze(0);
}

torch::Tensor mel_spectrogram(const torch::Tensor& wave, const MelConfig& cfg) {
    return MelFrontEnd(cfg)(wave);
}

}  // namespace p2mark
