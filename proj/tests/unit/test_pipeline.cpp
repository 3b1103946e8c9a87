#include "doctest_torch.hpp"

#include "p2mark/errors.hpp"
#include "p2mark/evaluation.hpp"
#include "p2mark/pipeline.hpp"

#include <torch/torch.h>

using namespace p2mark;

namespace {

TrainingConfig tiny(Mode mode = Mode::kVocoder) {
    TrainingConfig c;
    c.mode = mode;
    c.seed = 3;
    c.rank = 4;
    c.batch_size = 2;
    c.segment_length = 512;
    c.pretrain_iterations = 2;
    c.max_iterations = 3;
    c.mel.n_fft = 256;
    c.mel.window = 256;
    c.mel.hop = 64;
    c.mel.n_mels = 20;
    c.generator.channels = 16;
    c.generator.upsample_factors = {8, 8};
    c.codec.latent_dim = 16;
    c.codec.codebooks = 2;
    c.codec.codebook_size = 16;
    c.codec.encoder_channels = 8;
    c.discriminator.periods = {2};
    c.discriminator.scales = 1;
    c.discriminator.channels = 8;
    c.decoder.channels = 8;
    c.decoder.blocks = 1;
    c.data.synthetic_clips = 4;
    c.data.clip_seconds = 0.15;
    c.derive();
    c.validate();
    return c;
}

struct Fixture {
    TrainingConfig cfg = tiny();
    std::vector<Clip> clips = training_clips(cfg);
    Checkpoint base = pretrain_base(cfg, clips);
    Checkpoint adapter = train_p2mark(cfg, clips, base);
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

double max_diff(const Checkpoint& a, const Checkpoint& b, const std::string& prefix) {
    double worst = 0.0;
    for (const auto& [name, t] : a.tensors)
        if (name.starts_with(prefix)) worst = std::max(worst, (t - b.tensor(name)).abs().max().item<double>());
    return worst;
}

}  // namespace

TEST_SUITE("pipeline") {
    TEST_CASE("pretraining records its configuration") {
        auto& f = fixture();
        CHECK(f.base.kind() == CheckpointKind::kPretrained);
        CHECK(f.base.manifest.require("config_hash") == f.cfg.hash());
        CHECK(config_of(f.base).canonical() == f.cfg.canonical());
        CHECK_THROWS_AS(pretrain_base(f.cfg, {}), IngestionError);
    }

    TEST_CASE("training is reproducible under a fixed seed") {
        auto& f = fixture();
        const auto again = train_p2mark(f.cfg, f.clips, f.base);
        CHECK(again.content_hash() == f.adapter.content_hash());
        auto other = f.cfg;
        other.seed = 4;
        CHECK(train_p2mark(other, f.clips, f.base).content_hash() != f.adapter.content_hash());
    }

    TEST_CASE("adapter metadata and frozen base") {
        auto& f = fixture();
        const auto& m = f.adapter.manifest;
        CHECK(m.require("pretrained_hash") == f.base.content_hash());
        CHECK(m.require("bits") == "8");
        CHECK(m.require("wgopo") == "on");
        CHECK(std::stoll(m.require("projections_fired")) <= f.cfg.max_iterations);
        CHECK(m.require("frozen_digest") == frozen_weights_digest(f.base.tensors));
        CHECK_FALSE(m.require("adapted_layers").empty());
        CHECK_FALSE(f.adapter.has("generator.conv_pre.weight"));
    }

    TEST_CASE("disabled projection never fires") {
        auto& f = fixture();
        auto off = f.cfg;
        off.wgopo_enabled = false;
        const auto a = train_p2mark(off, f.clips, f.base);
        CHECK(a.manifest.require("projections_fired") == "0");
        CHECK(a.manifest.require("wgopo") == "off");
    }

    TEST_CASE("zero fine-tune iterations mint the pretrained weights") {
        auto& f = fixture();
        auto zero = f.cfg;
        zero.max_iterations = 0;
        const auto a = train_p2mark(zero, f.clips, f.base);
        const auto inst = mint_instance(a, f.base, random_watermark(8, 1));
        for (const auto& [name, t] : f.base.tensors)
            if (name.starts_with("generator.")) CHECK(tensor_bytes(inst.tensor(name)) == tensor_bytes(t));
    }

    TEST_CASE("minting is deterministic and watermark specific") {
        auto& f = fixture();
        const auto w1 = Watermark::parse("10110010");
        const auto w2 = w1.complement();
        const auto a = mint_instance(f.adapter, f.base, w1);
        const auto b = mint_instance(f.adapter, f.base, w1);
        const auto c = mint_instance(f.adapter, f.base, w2);
        CHECK(a.kind() == CheckpointKind::kInstance);
        CHECK(a.content_hash() == b.content_hash());
        CHECK(a.content_hash() != c.content_hash());
        CHECK(a.manifest.require("watermark") == "10110010");
        CHECK(a.manifest.require("adapter_hash") == f.adapter.content_hash());
        CHECK(max_diff(a, c, "generator.") > 0.0);
        CHECK_THROWS_AS(mint_instance(f.adapter, f.base, Watermark::parse("101")), PayloadShapeError);
    }

    TEST_CASE("minted instance matches the adapter-conditioned generator") {
        auto& f = fixture();
        const auto w = random_watermark(8, 9);
        const auto inst = mint_instance(f.adapter, f.base, w);
        auto sys = load_adapted_system(f.adapter, f.base);
        auto plain = load_plain_model(inst);
        torch::NoGradGuard ng;
        const auto s = encode_watermark(w, *sys->wm_encoder);
        torch::manual_seed(2);
        auto z = torch::randn({1, f.cfg.generator_input_channels(), 12});
        const auto diff = (sys->generator->forward(z, s) - plain.generator->forward(z)).abs().max().item<double>();
        CHECK(diff < 1e-5);
    }

    TEST_CASE("adapters only load onto their own base") {
        auto& f = fixture();
        auto other = f.cfg;
        other.seed = 11;
        const auto base2 = pretrain_base(other, f.clips);
        CHECK_THROWS_AS(load_adapted_system(f.adapter, base2), StructuralError);
        CHECK_THROWS_AS(load_plain_model(f.adapter), StructuralError);
        CHECK_THROWS_AS(train_p2mark(f.cfg, f.clips, f.adapter), StructuralError);
    }

    TEST_CASE("evaluation rows and the complement claim") {
        auto& f = fixture();
        const auto w = Watermark::parse("11001010");
        const auto inst = mint_instance(f.adapter, f.base, w);
        auto dec = load_decoder(f.adapter);
        const auto eval = heldout_clips(f.cfg, 2);
        EvalOptions opts;
        opts.attacks = {AttackKind::kBoost, AttackKind::kCrop, AttackKind::kMp3};
        opts.codec = CodecTool{""};
        const auto r = evaluate_instance(inst, f.base, *dec, eval, opts);
        REQUIRE(r.attacks.size() == 4);
        CHECK(r.attacks[0].name == "none");
        CHECK(r.attacks[0].accuracy == r.accuracy);
        CHECK(r.attacks[3].skipped);
        CHECK(r.items.size() == 2);
        CHECK(r.watermark == "11001010");
        CHECK(r.reference_hash == f.base.content_hash());
        CHECK_FALSE(r.pesq);

        EvalOptions flipped;
        flipped.expected = w.complement();
        const auto rc = evaluate_instance(inst, f.base, *dec, eval, flipped);
        CHECK(rc.accuracy == doctest::Approx(1.0 - r.accuracy).epsilon(1e-12));
        CHECK(rc.mel_distance == r.mel_distance);

        EvalOptions wrong;
        wrong.expected = Watermark::parse("1010");
        CHECK_THROWS_AS(evaluate_instance(inst, f.base, *dec, eval, wrong), PayloadShapeError);
        CHECK_THROWS_AS(evaluate_instance(f.base, f.base, *dec, eval), StructuralError);
    }

    TEST_CASE("report files and overwrite refusal") {
        auto& f = fixture();
        const auto inst = mint_instance(f.adapter, f.base, Watermark::parse("00000001"));
        auto dec = load_decoder(f.adapter);
        const auto r = evaluate_instance(inst, f.base, *dec, heldout_clips(f.cfg, 1));
        const auto dir = fs::temp_directory_path() / "p2mark_unit_report";
        fs::remove_all(dir);
        const auto stem = write_report(dir, r);
        CHECK(stem.filename().string() == r.file_stem());
        CHECK(fs::exists(stem.string() + ".items.csv"));
        CHECK(fs::exists(stem.string() + ".attacks.csv"));
        CHECK(read_file(stem.string() + ".attacks.csv").starts_with("attack,params,acc,skipped\nnone,"));
        CHECK_THROWS_AS(write_report(dir, r), Error);
        CHECK_NOTHROW(write_report(dir, r, true));
        fs::remove_all(dir);
    }

    TEST_CASE("training log rows") {
        auto& f = fixture();
        auto c = f.cfg;
        c.max_iterations = 5;
        c.log_every = 2;
        TrainingLog log;
        int seen = 0;
        log.on_row = [&](const LogRow&) { ++seen; };
        train_p2mark(c, f.clips, f.base, &log);
        REQUIRE(log.rows.size() == 4);
        CHECK(seen == 4);
        CHECK(log.rows.front().iteration == 1);
        CHECK(log.rows.back().iteration == 5);
        CHECK(log.to_csv().starts_with("iteration,"));
    }

    TEST_CASE("mel loss falls during a short pretraining") {
        auto c = tiny();
        c.pretrain_iterations = 30;
        c.log_every = 1;
        const auto clips = training_clips(c);
        TrainingLog log;
        pretrain_base(c, clips, &log);
        double first = 0.0, last = 0.0;
        for (int i = 0; i < 5; ++i) {
            first += log.rows[static_cast<size_t>(i)].mel;
            last += log.rows[log.rows.size() - 1 - static_cast<size_t>(i)].mel;
        }
        CHECK(last < first);
    }

    TEST_CASE("codec mode pretrains, fine-tunes and mints") {
        auto c = tiny(Mode::kCodec);
        const auto clips = training_clips(c);
        const auto base = pretrain_base(c, clips);
        CHECK(base.has("quantizer.codebooks"));
        const auto a = train_p2mark(c, clips, base);
        const auto inst = mint_instance(a, base, random_watermark(8, 2));
        CHECK(max_diff(inst, base, "quantizer.") == 0.0);
        auto m = load_plain_model(inst);
        const auto y = m.resynthesize(torch::from_blob(const_cast<float*>(clips[0].data()), {512}).clone());
        CHECK(y.size(0) == 512);
        CHECK(torch::isfinite(y).all().item<bool>());
    }
}
