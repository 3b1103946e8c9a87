#pragma once

#include "p2mark/attacks.hpp"
#include "p2mark/checkpoint.hpp"
#include "p2mark/dataset.hpp"
#include "p2mark/mel.hpp"
#include "p2mark/watermark.hpp"

#include <torch/torch.h>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace p2mark {

// Mean |logmel(a) - logmel(b)| after trimming both waves to the shorter length.
double mel_distance(const torch::Tensor& a, const torch::Tensor& b, const MelFrontEnd& mel);
double mel_distance(const torch::Tensor& a, const torch::Tensor& b, const MelConfig& cfg);

struct StftResolution {
    int64_t n_fft;
    int64_t hop;
    int64_t window;
};

// Windows 512, 1024 and 2048 with hop = window / 4.
std::vector<StftResolution> default_resolutions();

struct SpectralTerms {
    double spectral_convergence = 0.0;  // ||A - B||_F / (0.5 (||A||_F + ||B||_F)), 0 when both vanish
    double log_magnitude = 0.0;         // mean |ln max(A, 1e-5) - ln max(B, 1e-5)|
};

// Magnitude-spectrogram terms at one resolution (Hann window, reflect-centered frames).
// Throws ConfigurationError when the window exceeds the trimmed signal length.
SpectralTerms spectral_terms(const torch::Tensor& a, const torch::Tensor& b, const StftResolution& res);

// Mean over resolutions of spectral convergence + log-magnitude L1.
double stft_distance(const torch::Tensor& a, const torch::Tensor& b,
                     const std::vector<StftResolution>& resolutions = default_resolutions());

// Optional external quality metric (reference, degraded, sample rate). Returning nullopt or
// leaving the hook empty yields a null field in the report.
using QualityHook = std::function<std::optional<double>(const std::vector<float>&, const std::vector<float>&, int64_t)>;

struct EvalOptions {
    std::vector<AttackKind> attacks;  // the "None" row is always present
    uint64_t seed = 0;
    CodecTool codec;
    QualityHook pesq;
    QualityHook stoi;
    // Overrides the watermark read from the instance manifest (used to score a wrong claim).
    std::optional<Watermark> expected;
};

struct ItemResult {
    int64_t index = 0;
    double accuracy = 0.0;
    double mel_distance = 0.0;
    double stft_distance = 0.0;
    std::string decoded;
    std::optional<double> pesq;
    std::optional<double> stoi;
};

struct AttackResult {
    std::string name;
    std::string params;
    double accuracy = 0.0;  // mean over items; 0 when skipped
    bool skipped = false;
    std::string note;
};

struct EvalReport {
    std::string watermark;
    std::string config_hash;
    std::string instance_hash;
    std::string reference_hash;  // pretrained model used as the quality reference
    std::string quality_reference = "pretrained-output";
    std::vector<ItemResult> items;
    double accuracy = 0.0;
    double mel_distance = 0.0;
    double stft_distance = 0.0;
    std::optional<double> pesq;
    std::optional<double> stoi;
    std::vector<AttackResult> attacks;

    std::string items_csv() const;
    std::string attacks_csv() const;
    std::string summary() const;
    // "eval_<first 12 hex of sha256(watermark)>_<first 12 of config hash>".
    std::string file_stem() const;
};

// Regenerates every clip through the instance, optionally attacks it, extracts bits with the
// decoder and scores them against the instance watermark. Quality metrics compare the
// instance output with the pretrained output for the same features. Throws PayloadShapeError
// when the decoder and the instance disagree on the payload length.
EvalReport evaluate_instance(const Checkpoint& instance, const Checkpoint& pretrained, WatermarkDecoderImpl& decoder,
                             const std::vector<Clip>& eval_set, const EvalOptions& options = {});

// Writes <dir>/<stem>.items.csv, <stem>.attacks.csv and <stem>.txt. Returns the stem path.
fs::path write_report(const fs::path& dir, const EvalReport& report, bool overwrite = false);

}  // namespace p2mark
