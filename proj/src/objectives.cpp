#include "p2mark/objectives.hpp"

#include "p2mark/errors.hpp"

#include <cmath>

namespace p2mark {

void LossWeights::validate() const {
    if (!std::isfinite(lambda_fm) || !std::isfinite(lambda_mel) || lambda_fm < 0.0 || lambda_mel < 0.0)
        throw ConfigurationError("loss weights must be finite and non-negative");
}

torch::Tensor watermark_loss(const torch::Tensor& probs, const torch::Tensor& bits) {
    if (!probs.sizes().equals(bits.sizes()))
        throw PayloadShapeError("watermark_loss: probabilities and bits have different shapes");
    auto p = probs.clamp(kProbabilityClamp, 1.0 - kProbabilityClamp);
    auto w = bits.to(p.scalar_type());
    auto per_bit = -(w * torch::log(p) + (1.0 - w) * torch::log(1.0 - p));
    auto per_item = per_bit.sum(-1);
    return probs.dim() == 1 ? per_item : per_item.mean();
}

AdversarialLosses adversarial_losses(const std::vector<torch::Tensor>& scores_real,
                                     const std::vector<torch::Tensor>& scores_fake) {
    if (scores_real.empty() || scores_real.size() != scores_fake.size())
        throw StructuralError("adversarial_losses: need matching, non-empty score sets");
    AdversarialLosses out;
    for (size_t k = 0; k < scores_real.size(); ++k) {
        auto d = (scores_real[k] - 1.0).square().mean() + scores_fake[k].square().mean();
        auto g = (scores_fake[k] - 1.0).square().mean();
        out.discriminator = out.discriminator.defined() ? out.discriminator + d : d;
        out.generator = out.generator.defined() ? out.generator + g : g;
    }
    return out;
}

torch::Tensor feature_matching_loss(const std::vector<std::vector<torch::Tensor>>& features_real,
                                    const std::vector<std::vector<torch::Tensor>>& features_fake) {
    if (features_real.size() != features_fake.size())
        throw StructuralError("feature_matching_loss: sub-discriminator counts differ");
    torch::Tensor total;
    for (size_t k = 0; k < features_real.size(); ++k) {
        if (features_real[k].size() != features_fake[k].size())
            throw StructuralError("feature_matching_loss: layer counts differ");
        for (size_t j = 0; j < features_real[k].size(); ++j) {
            const auto& r = features_real[k][j];
            const auto& f = features_fake[k][j];
            if (!r.sizes().equals(f.sizes())) throw StructuralError("feature_matching_loss: feature shapes differ");
            auto term = (r - f).abs().mean();
            total = total.defined() ? total + term : term;
        }
    }
    if (!total.defined()) throw StructuralError("feature_matching_loss: no features");
    return total;
}

torch::Tensor mel_loss(const torch::Tensor& wave_real, const torch::Tensor& wave_fake, const MelFrontEnd& mel) {
    if (!wave_real.sizes().equals(wave_fake.sizes()))
        throw StructuralError("mel_loss: waves differ in shape after alignment");
    return (mel(wave_real) - mel(wave_fake)).abs().mean();
}

torch::Tensor generator_loss(const GeneratorLossParts& parts, const LossWeights& weights) {
    return parts.adversarial + weights.lambda_fm * parts.feature_matching + weights.lambda_mel * parts.mel;
}

double generator_loss(double adversarial, double feature_matching, double mel, const LossWeights& weights) {
    return adversarial + weights.lambda_fm * feature_matching + weights.lambda_mel * mel;
}

}  // namespace p2mark
