#pragma once

#include "p2mark/adapter.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace p2mark {

struct GeneratorOptions {
    int64_t in_channels = 80;
    int64_t channels = 128;
    std::vector<int64_t> upsample_factors{8, 8, 4};
    int64_t resblock_kernel = 3;
    std::vector<int64_t> resblock_dilations{1, 3};

    int64_t upsample_total() const;
};

// Fully convolutional waveform decoder: conv_pre, one transposed-conv upsampler plus a
// residual stack per stage, conv_post and tanh. Output length is exactly frames * U.
// Every convolution is a WmConv1d so adapters can be injected in place.
class GeneratorImpl : public torch::nn::Module, public AdaptableNetwork {
public:
    explicit GeneratorImpl(GeneratorOptions opts);

    const GeneratorOptions& options() const noexcept { return opts_; }

    // features: (batch, in_channels, frames) -> (batch, frames * U).
    // s: undefined (no adapters), (r) or (batch, r).
    torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& s = {});

    std::vector<std::pair<std::string, WmConv1d>> conv_layers() const override;

private:
    GeneratorOptions opts_;
    WmConv1d conv_pre{nullptr};
    std::vector<WmConv1d> ups_;
    std::vector<std::vector<WmConv1d>> res_;
    WmConv1d conv_post{nullptr};
    std::vector<std::pair<std::string, WmConv1d>> layers_;
};
TORCH_MODULE(Generator);

// Max |adapted(x; s) - merged(x)| over all probes and samples. Throws StructuralError when the
// two generators differ in layer names or base kernel shapes.
double verify_merge_equivalence(GeneratorImpl& adapted, const torch::Tensor& s, GeneratorImpl& merged,
                                const std::vector<torch::Tensor>& probes);

// Copy of `adapted` with every adapter folded into its base kernel for scaling vector s.
void merge_into(GeneratorImpl& adapted, const torch::Tensor& s, GeneratorImpl& target);

struct CodecOptions {
    int64_t latent_dim = 64;
    int64_t codebooks = 4;
    int64_t codebook_size = 64;
    int64_t encoder_channels = 16;
    // Encoder downsampling mirrors the decoder's upsampling in reverse order.
    std::vector<int64_t> downsample_factors{4, 8, 8};
};

// Strided conv downsampler mapping (batch, samples) to (batch, latent_dim, samples / hop).
class CodecEncoderImpl : public torch::nn::Module {
public:
    explicit CodecEncoderImpl(CodecOptions opts);
    torch::Tensor forward(const torch::Tensor& wave);

private:
    CodecOptions opts_;
    torch::nn::Conv1d conv_pre{nullptr};
    torch::nn::ModuleList downs{nullptr};
    torch::nn::Conv1d conv_post{nullptr};
};
TORCH_MODULE(CodecEncoder);

struct RvqResult {
    torch::Tensor tokens;     // (batch, N_q, frames), int64
    torch::Tensor quantized;  // (batch, D, frames), differentiable w.r.t. the codebooks
    std::vector<double> residual_norms;  // Frobenius norm of the residual after each stage
};

// Residual vector quantizer with N_q codebooks of V entries of dimension D. Entry 0 of every
// codebook is the zero vector and stays zero, so each stage can never increase the residual.
class ResidualVectorQuantizerImpl : public torch::nn::Module {
public:
    ResidualVectorQuantizerImpl(int64_t stages, int64_t entries, int64_t dim);

    int64_t stages() const { return codebooks.size(0); }
    int64_t entries() const { return codebooks.size(1); }
    int64_t dim() const { return codebooks.size(2); }

    // z: (batch, D, frames). Stage q picks the entry of codebook q nearest (squared Euclidean)
    // to the stage-q residual; ties go to the lowest index.
    RvqResult quantize(const torch::Tensor& z, int64_t stages_used = -1) const;

    // Re-zeroes entry 0 of every codebook.
    void enforce_zero_entry();

    torch::Tensor codebooks;  // (N_q, V, D)
};
TORCH_MODULE(ResidualVectorQuantizer);

RvqResult rvq_quantize(const torch::Tensor& z, const ResidualVectorQuantizerImpl& rvq);

struct DiscriminatorOptions {
    std::vector<int64_t> periods{2, 3, 5, 7, 11};
    int64_t scales = 3;
    int64_t channels = 16;
};

struct SubDiscriminatorOutput {
    torch::Tensor score;
    std::vector<torch::Tensor> features;
};

class PeriodDiscriminatorImpl : public torch::nn::Module {
public:
    PeriodDiscriminatorImpl(int64_t period, int64_t channels);
    int64_t period() const noexcept { return period_; }
    // (batch, samples) -> score map and per-layer activations.
    SubDiscriminatorOutput forward(const torch::Tensor& wave);

private:
    int64_t period_;
    torch::nn::ModuleList convs{nullptr};
    torch::nn::Conv2d post{nullptr};
};
TORCH_MODULE(PeriodDiscriminator);

// (batch, samples) -> (batch, 1, ceil(samples / period), period), zero-padded at the end.
torch::Tensor fold_by_period(const torch::Tensor& wave, int64_t period);

class ScaleDiscriminatorImpl : public torch::nn::Module {
public:
    explicit ScaleDiscriminatorImpl(int64_t channels);
    SubDiscriminatorOutput forward(const torch::Tensor& wave);

private:
    torch::nn::ModuleList convs{nullptr};
    torch::nn::Conv1d post{nullptr};
};
TORCH_MODULE(ScaleDiscriminator);

struct DiscriminationResult {
    torch::Tensor score_real;
    torch::Tensor score_fake;
    std::vector<torch::Tensor> features_real;
    std::vector<torch::Tensor> features_fake;
};

// Multi-period discriminators over `periods` followed by multi-scale discriminators on the
// raw wave and successive 2x average-pooled copies.
class DiscriminatorSetImpl : public torch::nn::Module {
public:
    explicit DiscriminatorSetImpl(DiscriminatorOptions opts);

    size_t size() const { return periods_.size() + scales_.size(); }

    std::vector<SubDiscriminatorOutput> forward(const torch::Tensor& wave);

    // Aligns fake to real (trim or zero-pad), then scores both.
    std::vector<DiscriminationResult> discriminate(const torch::Tensor& real, const torch::Tensor& fake);

private:
    DiscriminatorOptions opts_;
    std::vector<PeriodDiscriminator> periods_;
    std::vector<ScaleDiscriminator> scales_;
};
TORCH_MODULE(DiscriminatorSet);

// Trim or zero-pad `wave` along the last axis to `length` samples.
torch::Tensor align_length(const torch::Tensor& wave, int64_t length);

}  // namespace p2mark
