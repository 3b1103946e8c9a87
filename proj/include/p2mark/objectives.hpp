#pragma once

#include "p2mark/mel.hpp"
#include "p2mark/models.hpp"

#include <torch/torch.h>

#include <vector>

namespace p2mark {

struct LossWeights {
    double lambda_fm = 2.0;
    double lambda_mel = 45.0;

    void validate() const;
};

inline constexpr double kProbabilityClamp = 1e-7;

// Binary cross-entropy summed over the l bits, probabilities clamped to [eps, 1 - eps].
// probs/bits: (l) or (batch, l); a batch is averaged over items, so the value keeps the
// per-item scale of l * ln 2 at chance.
torch::Tensor watermark_loss(const torch::Tensor& probs, const torch::Tensor& bits);

struct AdversarialLosses {
    torch::Tensor discriminator;  // L_D
    torch::Tensor generator;      // adversarial part of L_G
};

// Least-squares GAN: L_D = sum_k mean((real_k - 1)^2) + mean(fake_k^2),
// L_adv = sum_k mean((fake_k - 1)^2).
AdversarialLosses adversarial_losses(const std::vector<torch::Tensor>& scores_real,
                                     const std::vector<torch::Tensor>& scores_fake);

// Sum over sub-discriminators and layers of mean |real - fake|.
torch::Tensor feature_matching_loss(const std::vector<std::vector<torch::Tensor>>& features_real,
                                    const std::vector<std::vector<torch::Tensor>>& features_fake);

// Mean |logmel(real) - logmel(fake)|; lengths must match.
torch::Tensor mel_loss(const torch::Tensor& wave_real, const torch::Tensor& wave_fake, const MelFrontEnd& mel);

struct GeneratorLossParts {
    torch::Tensor adversarial;
    torch::Tensor feature_matching;
    torch::Tensor mel;
};

// L_adv + lambda_fm * L_fm + lambda_mel * L_mel.
torch::Tensor generator_loss(const GeneratorLossParts& parts, const LossWeights& weights);
double generator_loss(double adversarial, double feature_matching, double mel, const LossWeights& weights);

}  // namespace p2mark
