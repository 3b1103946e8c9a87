#include "p2mark/models.hpp"

#include "p2mark/errors.hpp"

#include <cmath>
#include <limits>

namespace p2mark {

namespace {

constexpr double kLeak = 0.1;

torch::Tensor leaky(const torch::Tensor& x) { return torch::leaky_relu(x, kLeak); }

}  // namespace

int64_t GeneratorOptions::upsample_total() const {
    int64_t u = 1;
    for (auto f : upsample_factors) u *= f;
    return u;
}

GeneratorImpl::GeneratorImpl(GeneratorOptions opts) : opts_(std::move(opts)) {
    if (opts_.in_channels < 1 || opts_.channels < 2 || opts_.upsample_factors.empty())
        throw ConfigurationError("generator: invalid options");
    if (opts_.resblock_kernel % 2 == 0) throw ConfigurationError("generator: resblock kernel must be odd");

    conv_pre = register_module("conv_pre", WmConv1d(opts_.in_channels, opts_.channels, 7, ConvGeometry{.padding = 3}));
    layers_.emplace_back("conv_pre", conv_pre);

    int64_t ch = opts_.channels;
    for (size_t i = 0; i < opts_.upsample_factors.size(); ++i) {
        const int64_t u = opts_.upsample_factors[i];
        if (u < 2) throw ConfigurationError("generator: upsample factors must be >= 2");
        const int64_t out = std::max<int64_t>(1, ch / 2);
        ConvGeometry g{.stride = u, .padding = (u + 1) / 2, .output_padding = u % 2, .transposed = true};
        const auto up_name = "ups_" + std::to_string(i);
        ups_.push_back(register_module(up_name, WmConv1d(ch, out, 2 * u, g)));
        layers_.emplace_back(up_name, ups_.back());

        std::vector<WmConv1d> stage;
        for (size_t j = 0; j < opts_.resblock_dilations.size(); ++j) {
            const int64_t d = opts_.resblock_dilations[j];
            ConvGeometry rg{.padding = d * (opts_.resblock_kernel - 1) / 2, .dilation = d};
            const auto name = "res_" + std::to_string(i) + "_" + std::to_string(j);
            stage.push_back(register_module(name, WmConv1d(out, out, opts_.resblock_kernel, rg)));
            layers_.emplace_back(name, stage.back());
        }
        res_.push_back(std::move(stage));
        ch = out;
    }
    conv_post = register_module("conv_post", WmConv1d(ch, 1, 7, ConvGeometry{.padding = 3}));
    layers_.emplace_back("conv_post", conv_post);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& features, const torch::Tensor& s) {
    if (features.dim() != 3 || features.size(1) != opts_.in_channels)
        throw FeatureShapeError("generator: expected (batch, " + std::to_string(opts_.in_channels) +
                                ", frames) input, got " + std::to_string(features.dim()) + "-D tensor with " +
                                std::to_string(features.dim() >= 2 ? features.size(1) : 0) + " channels");
    auto x = conv_pre->forward(features, s);
    for (size_t i = 0; i < ups_.size(); ++i) {
        x = ups_[i]->forward(leaky(x), s);
        for (auto& conv : res_[i]) x = x + conv->forward(leaky(x), s);
    }
    x = conv_post->forward(leaky(x), s);
    return torch::tanh(x).squeeze(1);
}

std::vector<std::pair<std::string, WmConv1d>> GeneratorImpl::conv_layers() const { return layers_; }

namespace {

void check_same_architecture(const GeneratorImpl& a, const GeneratorImpl& b) {
    auto la = a.conv_layers();
    auto lb = b.conv_layers();
    if (la.size() != lb.size()) throw StructuralError("generators have different layer counts");
    for (size_t i = 0; i < la.size(); ++i) {
        if (la[i].first != lb[i].first || !la[i].second->weight.sizes().equals(lb[i].second->weight.sizes()))
            throw StructuralError("generators differ at layer '" + la[i].first + "'");
    }
}

}  // namespace

void merge_into(GeneratorImpl& adapted, const torch::Tensor& s, GeneratorImpl& target) {
    check_same_architecture(adapted, target);
    torch::NoGradGuard no_grad;
    auto src = adapted.conv_layers();
    auto dst = target.conv_layers();
    for (size_t i = 0; i < src.size(); ++i) {
        if (dst[i].second->has_adapter())
            throw StructuralError("merge target layer '" + dst[i].first + "' must not carry an adapter");
        dst[i].second->weight.copy_(src[i].second->merged_weight(s));
        dst[i].second->bias.copy_(src[i].second->bias);
    }
}

double verify_merge_equivalence(GeneratorImpl& adapted, const torch::Tensor& s, GeneratorImpl& merged,
                                const std::vector<torch::Tensor>& probes) {
    check_same_architecture(adapted, merged);
    torch::NoGradGuard no_grad;
    double worst = 0.0;
    for (const auto& probe : probes) {
        auto a = adapted.forward(probe, s);
        auto m = merged.forward(probe);
        worst = std::max(worst, (a - m).abs().max().item<double>());
    }
    return worst;
}

CodecEncoderImpl::CodecEncoderImpl(CodecOptions opts) : opts_(std::move(opts)) {
    using torch::nn::Conv1dOptions;
    int64_t ch = opts_.encoder_channels;
    conv_pre = register_module("conv_pre", torch::nn::Conv1d(Conv1dOptions(1, ch, 7).padding(3)));
    downs = register_module("downs", torch::nn::ModuleList());
    for (auto f : opts_.downsample_factors) {
        if (f < 2) throw ConfigurationError("codec: downsample factors must be >= 2");
        downs->push_back(torch::nn::Conv1d(Conv1dOptions(ch, ch * 2, 2 * f).stride(f).padding(f / 2)));
        ch *= 2;
    }
    conv_post = register_module("conv_post", torch::nn::Conv1d(Conv1dOptions(ch, opts_.latent_dim, 3).padding(1)));
}

torch::Tensor CodecEncoderImpl::forward(const torch::Tensor& wave) {
    auto x = conv_pre(wave.unsqueeze(1));
    for (const auto& m : *downs) x = m->as<torch::nn::Conv1d>()->forward(leaky(x));
    return conv_post(leaky(x));
}

ResidualVectorQuantizerImpl::ResidualVectorQuantizerImpl(int64_t stages, int64_t entries, int64_t dim) {
    if (stages < 1 || entries < 2 || dim < 1) throw ConfigurationError("rvq: invalid shape");
    auto cb = torch::randn({stages, entries, dim});
    // Later stages see smaller residuals.
    for (int64_t q = 0; q < stages; ++q) cb[q].mul_(std::pow(0.5, static_cast<double>(q)));
    cb.select(1, 0).zero_();
    codebooks = register_parameter("codebooks", cb);
}

void ResidualVectorQuantizerImpl::enforce_zero_entry() {
    torch::NoGradGuard no_grad;
    codebooks.select(1, 0).zero_();
}

RvqResult ResidualVectorQuantizerImpl::quantize(const torch::Tensor& z, int64_t stages_used) const {
    if (z.dim() != 3 || z.size(1) != dim())
        throw ConfigurationError("rvq: latent dimension " + std::to_string(z.dim() == 3 ? z.size(1) : -1) +
                                 " does not match codebook dimension " + std::to_string(dim()));
    const int64_t n_q = stages_used < 0 ? stages() : std::min(stages_used, stages());
    const int64_t batch = z.size(0);
    const int64_t frames = z.size(2);

    auto flat = z.detach().transpose(1, 2).reshape({-1, dim()});  // (B*T, D)
    auto residual = flat.clone();
    auto quantized = torch::zeros_like(z.transpose(1, 2).reshape({-1, dim()}));
    RvqResult out;
    out.tokens = torch::empty({batch, n_q, frames}, torch::kInt64);
    for (int64_t q = 0; q < n_q; ++q) {
        auto cb = codebooks[q];
        auto dist = (residual.unsqueeze(1) - cb.detach().unsqueeze(0)).square().sum(-1);  // (B*T, V)
        auto idx = dist.argmin(1);
        auto picked = cb.index_select(0, idx);  // keeps the codebook gradient
        quantized = quantized + picked;
        residual = residual - picked.detach();
        out.tokens.select(1, q).copy_(idx.view({batch, frames}));
        out.residual_norms.push_back(residual.norm().item<double>());
    }
    out.quantized = quantized.view({batch, frames, dim()}).transpose(1, 2);
    return out;
}

RvqResult rvq_quantize(const torch::Tensor& z, const ResidualVectorQuantizerImpl& rvq) { return rvq.quantize(z); }

torch::Tensor fold_by_period(const torch::Tensor& wave, int64_t period) {
    const int64_t n = wave.size(-1);
    const int64_t rows = (n + period - 1) / period;
    auto x = wave.dim() == 1 ? wave.unsqueeze(0) : wave;
    if (rows * period != n) x = torch::constant_pad_nd(x, {0, rows * period - n}, 0.0);
    return x.view({x.size(0), 1, rows, period});
}

PeriodDiscriminatorImpl::PeriodDiscriminatorImpl(int64_t period, int64_t channels) : period_(period) {
    using torch::nn::Conv2dOptions;
    convs = register_module("convs", torch::nn::ModuleList());
    const std::vector<int64_t> widths{channels, channels * 2, channels * 4, channels * 4};
    int64_t in = 1;
    for (size_t i = 0; i < widths.size(); ++i) {
        const int64_t stride = i + 1 < widths.size() ? 3 : 1;
        convs->push_back(torch::nn::Conv2d(
            Conv2dOptions(in, widths[i], {5, 1}).stride({stride, 1}).padding({2, 0})));
        in = widths[i];
    }
    post = register_module("post", torch::nn::Conv2d(Conv2dOptions(in, 1, {3, 1}).padding({1, 0})));
}

SubDiscriminatorOutput PeriodDiscriminatorImpl::forward(const torch::Tensor& wave) {
    SubDiscriminatorOutput out;
    auto x = fold_by_period(wave, period_);
    for (const auto& m : *convs) {
        x = leaky(m->as<torch::nn::Conv2d>()->forward(x));
        out.features.push_back(x);
    }
    x = post(x);
    out.features.push_back(x);
    out.score = x.flatten(1);
    return out;
}

ScaleDiscriminatorImpl::ScaleDiscriminatorImpl(int64_t channels) {
    using torch::nn::Conv1dOptions;
    convs = register_module("convs", torch::nn::ModuleList());
    convs->push_back(torch::nn::Conv1d(Conv1dOptions(1, channels, 15).padding(7)));
    convs->push_back(torch::nn::Conv1d(Conv1dOptions(channels, channels * 2, 41).stride(4).padding(20).groups(4)));
    convs->push_back(
        torch::nn::Conv1d(Conv1dOptions(channels * 2, channels * 4, 41).stride(4).padding(20).groups(8)));
    convs->push_back(torch::nn::Conv1d(Conv1dOptions(channels * 4, channels * 4, 5).padding(2)));
    post = register_module("post", torch::nn::Conv1d(Conv1dOptions(channels * 4, 1, 3).padding(1)));
}

SubDiscriminatorOutput ScaleDiscriminatorImpl::forward(const torch::Tensor& wave) {
    SubDiscriminatorOutput out;
    auto x = wave.dim() == 1 ? wave.view({1, 1, -1}) : wave.unsqueeze(1);
    for (const auto& m : *convs) {
        x = leaky(m->as<torch::nn::Conv1d>()->forward(x));
        out.features.push_back(x);
    }
    x = post(x);
    out.features.push_back(x);
    out.score = x.flatten(1);
    return out;
}

DiscriminatorSetImpl::DiscriminatorSetImpl(DiscriminatorOptions opts) : opts_(std::move(opts)) {
    if (opts_.channels < 8 || opts_.channels % 8 != 0)
        throw ConfigurationError("discriminator: channels must be a positive multiple of 8");
    for (auto p : opts_.periods) {
        if (p < 1) throw ConfigurationError("discriminator: periods must be positive");
        periods_.push_back(register_module("mpd_" + std::to_string(p), PeriodDiscriminator(p, opts_.channels)));
    }
    for (int64_t i = 0; i < opts_.scales; ++i)
        scales_.push_back(register_module("msd_" + std::to_string(i), ScaleDiscriminator(opts_.channels)));
    if (size() == 0) throw ConfigurationError("discriminator: need at least one sub-discriminator");
}

std::vector<SubDiscriminatorOutput> DiscriminatorSetImpl::forward(const torch::Tensor& wave) {
    std::vector<SubDiscriminatorOutput> out;
    out.reserve(size());
    for (auto& d : periods_) out.push_back(d->forward(wave));
    auto x = wave;
    for (size_t i = 0; i < scales_.size(); ++i) {
        if (i > 0) x = torch::avg_pool1d(x.unsqueeze(1), 4, 2, 2).squeeze(1);
        out.push_back(scales_[i]->forward(x));
    }
    return out;
}

std::vector<DiscriminationResult> DiscriminatorSetImpl::discriminate(const torch::Tensor& real,
                                                                     const torch::Tensor& fake) {
    auto aligned = align_length(fake, real.size(-1));
    if (!aligned.sizes().equals(real.sizes())) throw StructuralError("discriminate: real/fake shapes differ");
    auto r = forward(real);
    auto f = forward(aligned);
    std::vector<DiscriminationResult> out(r.size());
    for (size_t i = 0; i < r.size(); ++i) {
        out[i].score_real = r[i].score;
        out[i].score_fake = f[i].score;
        out[i].features_real = std::move(r[i].features);
        out[i].features_fake = std::move(f[i].features);
    }
    return out;
}

torch::Tensor align_length(const torch::Tensor& wave, int64_t length) {
    const int64_t n = wave.size(-1);
    if (n == length) return wave;
    if (n > length) return wave.narrow(-1, 0, length);
    return torch::constant_pad_nd(wave, {0, length - n}, 0.0);
}

}  // namespace p2mark
