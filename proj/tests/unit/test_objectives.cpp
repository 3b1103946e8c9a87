#include "doctest_torch.hpp"

#include "p2mark/errors.hpp"
#include "p2mark/objectives.hpp"

#include "../support/toy.hpp"

#include <cmath>

using namespace p2mark;

TEST_CASE("watermark BCE values") {
    const double eps = kProbabilityClamp;
    auto bits = torch::tensor({1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0}, torch::kFloat64);
    auto confident = bits * (1.0 - eps) + (1.0 - bits) * eps;
    CHECK(watermark_loss(confident, bits).item<double>() <= 8 * 1.2e-7);
    CHECK(watermark_loss(torch::full({8}, 0.5, torch::kFloat64), bits).item<double>() ==
          doctest::Approx(8.0 * std::log(2.0)).epsilon(1e-9));
    auto two = watermark_loss(torch::tensor({0.8, 0.4}, torch::kFloat64), torch::tensor({1.0, 0.0}, torch::kFloat64));
    CHECK(two.item<double>() == doctest::Approx(-(std::log(0.8) + std::log(0.6))).epsilon(1e-12));
    CHECK(two.item<double>() == doctest::Approx(0.7340).epsilon(1e-4));
    // Hard zeros and ones are clamped instead of producing infinities.
    auto wrong = watermark_loss(torch::tensor({0.0, 1.0}, torch::kFloat64), torch::tensor({1.0, 0.0}, torch::kFloat64));
    CHECK(std::isfinite(wrong.item<double>()));
}

TEST_CASE("watermark BCE averages a batch over items") {
    auto probs = torch::full({4, 8}, 0.5, torch::kFloat64);
    auto bits = torch::randint(0, 2, {4, 8}).to(torch::kFloat64);
    CHECK(watermark_loss(probs, bits).item<double>() == doctest::Approx(8.0 * std::log(2.0)).epsilon(1e-9));
    CHECK_THROWS_AS(watermark_loss(torch::full({4, 8}, 0.5), torch::zeros({4, 7})), PayloadShapeError);
}

TEST_CASE("least-squares GAN optima and hand value") {
    std::vector<torch::Tensor> ones{torch::ones({3, 5}), torch::ones({2, 7})};
    std::vector<torch::Tensor> zeros{torch::zeros({3, 5}), torch::zeros({2, 7})};
    CHECK(adversarial_losses(ones, zeros).discriminator.item<double>() == 0.0);
    CHECK(adversarial_losses(zeros, ones).generator.item<double>() == 0.0);
    auto half = adversarial_losses({torch::tensor(0.5)}, {torch::tensor(0.5)});
    CHECK(half.discriminator.item<double>() == 0.5);
    CHECK(half.generator.item<double>() == 0.25);
}

TEST_CASE("feature matching values") {
    torch::manual_seed(1);
    std::vector<std::vector<torch::Tensor>> real{{torch::randn({2, 3}), torch::randn({4})}};
    CHECK(feature_matching_loss(real, real).item<double>() == 0.0);
    std::vector<std::vector<torch::Tensor>> shifted{{real[0][0] + 0.25, real[0][1] - 0.25}};
    CHECK(feature_matching_loss(real, shifted).item<double>() == doctest::Approx(0.5).epsilon(1e-6));
    std::vector<std::vector<torch::Tensor>> a{{torch::zeros({4})}, {torch::zeros({2})}};
    std::vector<std::vector<torch::Tensor>> b{{torch::full({4}, 0.1)}, {torch::tensor({0.3, -0.3})}};
    CHECK(feature_matching_loss(a, b).item<double>() == doctest::Approx(0.4).epsilon(1e-6));
}

TEST_CASE("mel reconstruction loss values") {
    torch::manual_seed(2);
    MelFrontEnd mel(MelConfig{});
    auto wave = torch::randn({2, 4096}, torch::kFloat64) * 0.4;
    CHECK(mel_loss(wave, wave, mel).item<double>() == 0.0);
    CHECK(mel_loss(wave, wave * 0.5, mel).item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-9));

    torch::manual_seed(3);
    auto noise = torch::randn({4096}) * 0.1;
    const double oracle = (mel(noise) - std::log(kLogFloor)).abs().mean().item<double>();
    CHECK(mel_loss(noise, torch::zeros({4096}), mel).item<double>() == doctest::Approx(oracle).epsilon(1e-9));
    CHECK_THROWS(mel_loss(wave, wave.narrow(-1, 0, 2048), mel));
}

TEST_CASE("weighted generator objective") {
    const LossWeights w{2.0, 45.0};
    CHECK(std::abs(generator_loss(1.0, 0.5, 0.1, w) - 6.5) < 1e-9);
    CHECK(generator_loss(0.0, 0.0, 0.0, w) == 0.0);
    CHECK(generator_loss(0.7, 3.0, 2.0, LossWeights{0.0, 0.0}) == 0.7);
    auto t = generator_loss({torch::tensor(1.0, torch::kFloat64), torch::tensor(0.5, torch::kFloat64),
                             torch::tensor(0.1, torch::kFloat64)},
                            w);
    CHECK(std::abs(t.item<double>() - 6.5) < 1e-9);
    CHECK_THROWS_AS((LossWeights{-1.0, 45.0}.validate()), ConfigurationError);
}

TEST_CASE("analytic gradients agree with finite differences") {
    const auto r = testing::finite_difference_check(7, 20);
    CHECK(r.checked == 20);
    CHECK(r.worst_relative_error < 1e-3);
}
