#pragma once

#include "p2mark/checkpoint.hpp"
#include "p2mark/config.hpp"
#include "p2mark/dataset.hpp"
#include "p2mark/models.hpp"
#include "p2mark/watermark.hpp"
#include "p2mark/wgopo.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace p2mark {

// Frozen acoustic front-end: log-mel for the vocoder, encoder + RVQ for the codec.
class FeatureExtractor {
public:
    FeatureExtractor(const TrainingConfig& cfg, std::shared_ptr<const MelFrontEnd> mel);

    Mode mode() const noexcept { return mode_; }
    CodecEncoder& encoder() { return encoder_; }
    ResidualVectorQuantizer& quantizer() { return quantizer_; }

    // (batch, samples) -> (batch, channels, frames), without gradient.
    torch::Tensor operator()(const torch::Tensor& wave);

    NamedTensorList state() const;
    void load(const Checkpoint& ckpt);
    void freeze();

private:
    Mode mode_;
    std::shared_ptr<const MelFrontEnd> mel_;
    CodecEncoder encoder_{nullptr};
    ResidualVectorQuantizer quantizer_{nullptr};
};

// Everything trained or used by one run. The single MelFrontEnd instance is shared by the
// losses, the feature extractor and the watermark decoder input.
struct System {
    TrainingConfig config;
    std::shared_ptr<const MelFrontEnd> mel;
    FeatureExtractor features;
    Generator generator{nullptr};
    DiscriminatorSet discriminators{nullptr};
    WatermarkEncoder wm_encoder{nullptr};
    WatermarkDecoder wm_decoder{nullptr};
    std::vector<std::string> adapted_layers;

    explicit System(const TrainingConfig& cfg);

    // Scaling vectors for (batch, l) bits.
    torch::Tensor scaling(const torch::Tensor& bits);
    // Watermark logits for generated waves (batch, samples).
    torch::Tensor extract_logits(const torch::Tensor& wave);

    NamedTensorList adapter_state() const;
};

struct LogRow {
    int64_t iteration = 0;
    double loss_d = 0.0;
    double loss_wm = 0.0;
    double loss_g = 0.0;
    double adversarial = 0.0;
    double feature_matching = 0.0;
    double mel = 0.0;
    double batch_accuracy = 0.0;
    int64_t projections_fired = 0;  // cumulative
};

// Per-run metrics. Rows are appended every log_every iterations and at the first and last one.
struct TrainingLog {
    std::vector<LogRow> rows;
    std::function<void(const LogRow&)> on_row;

    std::string to_csv() const;
};

// Pretrains the base decoder (and the codec front-end in codec mode) without watermark terms.
// Throws IngestionError on an empty dataset and DivergenceError on a non-finite loss.
Checkpoint pretrain_base(const TrainingConfig& cfg, const std::vector<Clip>& clips, TrainingLog* log = nullptr);

// Fine-tunes the watermark adapter, encoder, decoder and discriminators on top of `pretrained`:
// per batch a discriminator step, a watermark step that also captures the adapter gradient,
// and a generator step whose adapter gradient is projected against it.
Checkpoint train_p2mark(const TrainingConfig& cfg, const std::vector<Clip>& clips, const Checkpoint& pretrained,
                        TrainingLog* log = nullptr);

// Folds the adapter, conditioned on w, into the pretrained weights. No training involved.
Checkpoint mint_instance(const Checkpoint& adapter, const Checkpoint& pretrained, const Watermark& w);

TrainingConfig config_of(const Checkpoint& ckpt);

// sha256 over the non-adapter "generator." entries (name and bytes, in order). Adapter
// checkpoints record it at the end of fine-tuning as "frozen_digest".
std::string frozen_weights_digest(const NamedTensorList& generator_state);

// Rebuilds the adapted system (pretrained base + adapters + watermark modules).
std::unique_ptr<System> load_adapted_system(const Checkpoint& adapter, const Checkpoint& pretrained);

// Plain generator holding the pretrained or minted weights, plus the matching front-end.
struct PlainModel {
    TrainingConfig config;
    std::shared_ptr<const MelFrontEnd> mel;
    std::unique_ptr<FeatureExtractor> features;
    Generator generator{nullptr};

    // Wave -> features -> generated wave, for a (batch, samples) input.
    torch::Tensor resynthesize(const torch::Tensor& wave);
};

PlainModel load_plain_model(const Checkpoint& ckpt);

// Watermark decoder from an adapter checkpoint.
WatermarkDecoder load_decoder(const Checkpoint& adapter);

// Clips for training: the configured WAV directory, or the synthetic corpus.
std::vector<Clip> training_clips(const TrainingConfig& cfg);
// Held-out synthetic clips drawn from a seed disjoint from the training corpus.
std::vector<Clip> heldout_clips(const TrainingConfig& cfg, int64_t count);

}  // namespace p2mark
