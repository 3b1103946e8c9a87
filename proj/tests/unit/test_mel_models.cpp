#include "doctest_torch.hpp"

#include "p2mark/errors.hpp"
#include "p2mark/mel.hpp"
#include "p2mark/models.hpp"

#include <cmath>
#include <numbers>

using namespace p2mark;

TEST_CASE("mel front-end: silence sits on the log floor") {
    MelFrontEnd mel(MelConfig{});
    auto m = mel(torch::zeros({4096}));
    CHECK(m.size(0) == 80);
    CHECK(m.size(1) == 16);
    CHECK(torch::allclose(m, torch::full_like(m, std::log(kLogFloor)), 0.0, 1e-6));
}

TEST_CASE("mel front-end: frame count is samples / hop") {
    MelFrontEnd mel(MelConfig{});
    CHECK(mel.frames_for(8192) == 32);
    CHECK(mel(torch::zeros({2, 8192})).sizes() == torch::IntArrayRef({2, 80, 32}));
    CHECK_THROWS_AS(mel(torch::zeros({512})), InputLengthError);
}

TEST_CASE("mel front-end: halving the wave shifts the log-mel by log 0.5") {
    torch::manual_seed(2);
    MelFrontEnd mel(MelConfig{});
    auto wave = torch::randn({8192}, torch::kFloat64) * 0.5;
    auto a = mel(wave);
    auto b = mel(wave * 0.5);
    auto above = (b > std::log(kLogFloor) + 1.0);
    CHECK(above.all().item<bool>());
    CHECK(torch::allclose(b - a, torch::full_like(a, std::log(0.5)), 0.0, 1e-6));
}

TEST_CASE("mel front-end: a sine at a band centre peaks in that band") {
    MelConfig cfg;
    MelFrontEnd mel(cfg);
    const auto fb = mel_filterbank(cfg);
    for (int64_t band : {20, 40, 60}) {
        const auto peak_bin = fb[band].argmax().item<int64_t>();
        const double hz = static_cast<double>(peak_bin) * cfg.sample_rate / cfg.n_fft;
        auto t = torch::arange(8192, torch::kFloat64) / static_cast<double>(cfg.sample_rate);
        auto wave = torch::sin(2.0 * std::numbers::pi * hz * t) * 0.5;
        auto m = mel(wave);
        auto best = m.argmax(0);
        for (int64_t f = 4; f < m.size(1) - 4; ++f) CHECK(best[f].item<int64_t>() == band);
    }
}

TEST_CASE("mel config validation") {
    MelConfig bad;
    bad.hop = 2048;
    CHECK_THROWS_AS(bad.validate(), ConfigurationError);
    MelConfig nyq;
    nyq.fmax = 9000.0;
    CHECK_THROWS_AS(nyq.validate(), ConfigurationError);
}

namespace {

GeneratorOptions gen_opts() {
    GeneratorOptions o;
    o.in_channels = 10;
    o.channels = 16;
    o.upsample_factors = {4, 4, 2};
    return o;
}

}  // namespace

TEST_CASE("generator output length is frames times the upsampling factor") {
    torch::manual_seed(1);
    Generator g(gen_opts());
    torch::NoGradGuard ng;
    for (int64_t frames : {1, 3, 8}) CHECK(g->forward(torch::randn({2, 10, frames})).sizes() == torch::IntArrayRef({2, frames * 32}));
    CHECK_THROWS_AS(g->forward(torch::randn({2, 9, 4})), FeatureShapeError);
}

TEST_CASE("generator batch independence and seeded determinism") {
    torch::manual_seed(5);
    Generator a(gen_opts());
    torch::manual_seed(5);
    Generator b(gen_opts());
    torch::NoGradGuard ng;
    auto z = torch::randn({3, 10, 6});
    auto ya = a->forward(z);
    CHECK(torch::equal(ya, b->forward(z)));
    for (int64_t i = 0; i < 3; ++i) CHECK(torch::allclose(a->forward(z.narrow(0, i, 1))[0], ya[i], 0.0, 1e-6));
    CHECK(ya.abs().max().item<double>() <= 1.0);
}

TEST_CASE("rvq: exact codebook hit quantizes without error") {
    torch::manual_seed(3);
    ResidualVectorQuantizer rvq(3, 8, 4);
    auto z = rvq->codebooks[0][5].detach().view({1, 4, 1}).clone();
    auto res = rvq->quantize(z);
    CHECK(res.tokens[0][0][0].item<int64_t>() == 5);
    CHECK(res.tokens[0][1][0].item<int64_t>() == 0);
    CHECK(res.tokens[0][2][0].item<int64_t>() == 0);
    CHECK(res.residual_norms[0] == 0.0);
    CHECK(torch::equal(res.quantized.detach(), z));
}

TEST_CASE("rvq: a single stage is nearest-neighbour quantization") {
    torch::manual_seed(4);
    ResidualVectorQuantizer rvq(1, 16, 3);
    auto z = torch::randn({2, 3, 7});
    auto res = rvq->quantize(z);
    auto book = rvq->codebooks[0].detach();
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t t = 0; t < 7; ++t) {
            int64_t best = 0;
            double best_d = 1e300;
            for (int64_t k = 0; k < 16; ++k) {
                double d = 0.0;
                for (int64_t c = 0; c < 3; ++c) {
                    const double diff = z[b][c][t].item<double>() - book[k][c].item<double>();
                    d += diff * diff;
                }
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            CHECK(res.tokens[b][0][t].item<int64_t>() == best);
        }
}

TEST_CASE("rvq: residual norms never increase") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        torch::manual_seed(seed);
        ResidualVectorQuantizer rvq(4, 8, 5);
        {
            torch::NoGradGuard ng;
            rvq->codebooks.copy_(torch::randn(rvq->codebooks.sizes()));
        }
        rvq->enforce_zero_entry();
        auto z = torch::randn({3, 5, 9});
        const auto res = rvq->quantize(z);
        double prev = z.norm().item<double>();
        for (double n : res.residual_norms) {
            CHECK(n <= prev + 1e-6);
            prev = n;
        }
    }
}

TEST_CASE("period folding pads to ceil(n/p) rows") {
    auto x = torch::arange(1, 8, torch::kFloat32).unsqueeze(0);
    auto f = fold_by_period(x, 3);
    CHECK(f.sizes() == torch::IntArrayRef({1, 1, 3, 3}));
    CHECK(f[0][0][2][0].item<float>() == 7.0F);
    CHECK(f[0][0][2][1].item<float>() == 0.0F);
    CHECK(f[0][0][2][2].item<float>() == 0.0F);
}

TEST_CASE("discriminator set structure and purity") {
    torch::manual_seed(6);
    DiscriminatorOptions o;
    o.channels = 8;
    DiscriminatorSet d(o);
    CHECK(d->size() == o.periods.size() + static_cast<size_t>(o.scales));
    auto x = torch::randn({2, 1000});
    torch::NoGradGuard ng;
    auto res = d->discriminate(x, x.clone());
    CHECK(res.size() == d->size());
    for (const auto& r : res) {
        CHECK(torch::equal(r.score_real, r.score_fake));
        for (size_t k = 0; k < r.features_real.size(); ++k) CHECK(torch::equal(r.features_real[k], r.features_fake[k]));
    }
}

TEST_CASE("codec encoder downsamples by the hop") {
    torch::manual_seed(7);
    CodecOptions o;
    o.encoder_channels = 4;
    CodecEncoder enc(o);
    torch::NoGradGuard ng;
    CHECK(enc->forward(torch::randn({2, 2048})).sizes() == torch::IntArrayRef({2, 64, 8}));
}
