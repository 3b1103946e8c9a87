#pragma once

#include "p2mark/adapter.hpp"
#include "p2mark/mel.hpp"
#include "p2mark/objectives.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace p2mark::testing {

// Two adapted convolutions in double precision: (8 mels, T) -> T * 16 samples.
struct ToyGenerator {
    WmConv1d first{nullptr};
    WmConv1d second{nullptr};
    MelConfig mel_cfg;

    explicit ToyGenerator(uint64_t seed) {
        torch::manual_seed(seed);
        mel_cfg.n_fft = 64;
        mel_cfg.window = 64;
        mel_cfg.hop = 16;
        mel_cfg.n_mels = 8;
        first = WmConv1d(8, 12, 3, ConvGeometry{.padding = 1});
        second = WmConv1d(12, 1, 32, ConvGeometry{.stride = 16, .padding = 8, .transposed = true});
        first->attach_adapter(4);
        second->attach_adapter(4);
        for (auto* layer : {&first, &second}) {
            (*layer)->to(torch::kFloat64);
            torch::NoGradGuard ng;
            (*layer)->adapter_up.copy_(torch::randn((*layer)->adapter_up.sizes(), torch::kFloat64) * 0.3);
            (*layer)->weight.set_requires_grad(true);
            (*layer)->bias.set_requires_grad(true);
        }
    }

    torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& s) {
        auto h = torch::leaky_relu(first->forward(z, s), 0.1);
        return torch::tanh(second->forward(h, s)).squeeze(1);
    }

    std::vector<torch::Tensor> parameters() {
        return {first->weight, first->bias, first->adapter_down, first->adapter_up,
                second->weight, second->bias, second->adapter_down, second->adapter_up};
    }

    torch::Tensor loss(const torch::Tensor& z, const torch::Tensor& s, const torch::Tensor& target) {
        MelFrontEnd mel(mel_cfg);
        auto y = forward(z, s);
        auto l_mel = mel_loss(target, y, mel);
        auto adv = (y.mean() - 1.0).square();
        return generator_loss({adv, torch::zeros({}, torch::kFloat64), l_mel}, LossWeights{});
    }
};

struct FiniteDifferenceResult {
    double worst_relative_error = 0.0;
    int checked = 0;
};

// Central differences on `count` randomly chosen scalar parameters.
inline FiniteDifferenceResult finite_difference_check(uint64_t seed, int count) {
    ToyGenerator g(seed);
    auto z = torch::randn({2, 8, 6}, torch::kFloat64);
    auto s = torch::rand({2, 4}, torch::kFloat64) + 0.5;
    auto target = torch::randn({2, 96}, torch::kFloat64) * 0.3;

    auto params = g.parameters();
    for (auto& p : params)
        if (p.grad().defined()) p.mutable_grad().zero_();
    g.loss(z, s, target).backward();

    std::mt19937_64 rng(seed);
    FiniteDifferenceResult out;
    const double h = 1e-6;
    for (int k = 0; k < count; ++k) {
        auto& p = params[rng() % params.size()];
        const int64_t idx = static_cast<int64_t>(rng() % static_cast<uint64_t>(p.numel()));
        auto flat = p.detach().view({-1});
        const double analytic = p.grad().view({-1})[idx].item<double>();
        const double orig = flat[idx].item<double>();
        double plus, minus;
        {
            torch::NoGradGuard ng;
            flat[idx] = orig + h;
            plus = g.loss(z, s, target).item<double>();
            flat[idx] = orig - h;
            minus = g.loss(z, s, target).item<double>();
            flat[idx] = orig;
        }
        const double numeric = (plus - minus) / (2.0 * h);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        out.worst_relative_error = std::max(out.worst_relative_error, std::abs(analytic - numeric) / denom);
        ++out.checked;
    }
    return out;
}

}  // namespace p2mark::testing
