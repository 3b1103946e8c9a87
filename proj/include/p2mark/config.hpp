#pragma once

#include "p2mark/adapter.hpp"
#include "p2mark/io.hpp"
#include "p2mark/mel.hpp"
#include "p2mark/models.hpp"
#include "p2mark/objectives.hpp"
#include "p2mark/watermark.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>

namespace p2mark {

enum class Mode { kVocoder, kCodec };

std::string_view mode_name(Mode mode);

struct OptimizerConfig {
    double lr_generator = 2e-4;
    double lr_discriminator = 2e-4;
    double lr_watermark = 2e-4;
    double beta1 = 0.8;
    double beta2 = 0.99;
};

struct DataConfig {
    int64_t synthetic_clips = 200;
    double clip_seconds = 1.0;
    uint64_t synthetic_seed = 1234;
    std::string wav_dir;  // optional real-audio directory, used instead of the synthetic corpus
};

// Everything that determines a run. Serialized as nested JSON; the SHA-256 of the canonical
// dump is stamped into every checkpoint manifest.
struct TrainingConfig {
    Mode mode = Mode::kVocoder;
    uint64_t seed = 0;
    int64_t bits = 8;
    int64_t rank = 16;
    int64_t batch_size = 16;
    int64_t segment_length = 8192;
    int64_t pretrain_iterations = 2000;
    int64_t max_iterations = 2000;
    bool wgopo_enabled = true;
    int64_t log_every = 50;

    OptimizerConfig optimizer;
    LossWeights loss;
    MelConfig mel;
    GeneratorOptions generator;
    CodecOptions codec;
    DiscriminatorOptions discriminator;
    WatermarkDecoderOptions decoder;
    AdapterSelector adapter;
    DataConfig data;
    std::string codec_binary;  // external encoder for the mp3/aac attacks

    // Recomputes the shapes that follow from other fields (generator input width, codec
    // downsampling, decoder payload and mel width). Call after editing a config in code.
    void derive();

    // Throws ConfigurationError on any violated invariant.
    void validate() const;

    // Generator input width for the configured mode.
    int64_t generator_input_channels() const;

    nlohmann::json to_json() const;
    // Unknown keys are rejected. Missing keys keep their defaults.
    static TrainingConfig from_json(const nlohmann::json& j);
    static TrainingConfig load(const fs::path& path);

    std::string canonical() const;
    std::string hash() const;
};

}  // namespace p2mark
