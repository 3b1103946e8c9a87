#include "p2mark/pipeline.hpp"

#include "p2mark/errors.hpp"
#include "p2mark/objectives.hpp"

#include <cmath>
#include <sstream>

namespace p2mark {

namespace {

constexpr uint64_t kSegmentStream = 0x5eedULL;
constexpr uint64_t kWatermarkStream = 0xb175ULL;
constexpr uint64_t kHeldoutOffset = 0x9e3779b97f4a7c15ULL;
constexpr double kCommitment = 0.25;

std::vector<torch::Tensor> tensors_of(const NamedTensors& named) {
    std::vector<torch::Tensor> out;
    out.reserve(named.size());
    for (const auto& [n, t] : named) out.push_back(t);
    return out;
}

torch::optim::Adam make_adam(const std::vector<torch::Tensor>& params, double lr, const OptimizerConfig& o) {
    return torch::optim::Adam(params, torch::optim::AdamOptions(lr).betas({o.beta1, o.beta2}));
}

void check_finite(const torch::Tensor& loss, const char* what, int64_t iteration) {
    const double v = loss.item<double>();
    if (!std::isfinite(v))
        throw DivergenceError(std::string(what) + " became non-finite at iteration " + std::to_string(iteration),
                              iteration);
}

void append(NamedTensorList& dst, NamedTensorList src) {
    for (auto& e : src) dst.push_back(std::move(e));
}

std::vector<std::vector<torch::Tensor>> real_features(const std::vector<DiscriminationResult>& res) {
    std::vector<std::vector<torch::Tensor>> out;
    for (const auto& r : res) {
        std::vector<torch::Tensor> layer;
        for (const auto& f : r.features_real) layer.push_back(f.detach());
        out.push_back(std::move(layer));
    }
    return out;
}

std::vector<std::vector<torch::Tensor>> fake_features(const std::vector<DiscriminationResult>& res) {
    std::vector<std::vector<torch::Tensor>> out;
    for (const auto& r : res) out.push_back(r.features_fake);
    return out;
}

struct Scores {
    std::vector<torch::Tensor> real, fake;
};

Scores scores_of(const std::vector<DiscriminationResult>& res) {
    Scores s;
    for (const auto& r : res) {
        s.real.push_back(r.score_real);
        s.fake.push_back(r.score_fake);
    }
    return s;
}

struct GeneratorTerms {
    torch::Tensor total, adversarial, feature_matching, mel;
};

GeneratorTerms generator_terms(DiscriminatorSetImpl& disc, const MelFrontEnd& mel, const LossWeights& weights,
                               const torch::Tensor& real, const torch::Tensor& fake) {
    auto res = disc.discriminate(real, fake);
    auto sc = scores_of(res);
    GeneratorTerms t;
    t.adversarial = adversarial_losses(sc.real, sc.fake).generator;
    t.feature_matching = feature_matching_loss(real_features(res), fake_features(res));
    t.mel = mel_loss(real, align_length(fake, real.size(-1)), mel);
    t.total = generator_loss({t.adversarial, t.feature_matching, t.mel}, weights);
    return t;
}

torch::Tensor discriminator_step(DiscriminatorSetImpl& disc, torch::optim::Adam& opt, const torch::Tensor& real,
                                 const torch::Tensor& fake, int64_t iteration) {
    opt.zero_grad();
    auto sc = scores_of(disc.discriminate(real, fake.detach()));
    auto loss = adversarial_losses(sc.real, sc.fake).discriminator;
    check_finite(loss, "discriminator loss", iteration);
    loss.backward();
    opt.step();
    return loss.detach();
}

bool should_log(int64_t it, int64_t total, int64_t every) {
    return it == 1 || it == total || (every > 0 && it % every == 0);
}

void emit(TrainingLog* log, LogRow row) {
    if (!log) return;
    if (log->on_row) log->on_row(row);
    log->rows.push_back(row);
}

std::map<std::string, std::string> base_metadata(const TrainingConfig& cfg) {
    return {{"mode", std::string(mode_name(cfg.mode))}, {"config_hash", cfg.hash()}};
}

void load_base(System& sys, const Checkpoint& pretrained) {
    load_module_state(*sys.generator, pretrained, "generator.");
    sys.features.load(pretrained);
    sys.features.freeze();
}

// Shapes that must agree between the pretrained model and the run built on top of it.
void check_compatible(const TrainingConfig& cfg, const TrainingConfig& base) {
    const auto a = cfg.to_json();
    const auto b = base.to_json();
    for (const char* key : {"mel", "generator", "codec"})
        if (a.at(key) != b.at(key))
            throw StructuralError(std::string("pretrained checkpoint has a different '") + key + "' section");
    if (cfg.mode != base.mode) throw StructuralError("pretrained checkpoint was trained in another mode");
}

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}

void require_kind(const Checkpoint& ck, CheckpointKind kind) {
    if (ck.kind() != kind)
        throw StructuralError("expected a " + std::string(checkpoint_kind_name(kind)) + " checkpoint, got " +
                              std::string(checkpoint_kind_name(ck.kind())));
}

}  // namespace

FeatureExtractor::FeatureExtractor(const TrainingConfig& cfg, std::shared_ptr<const MelFrontEnd> mel)
    : mode_(cfg.mode), mel_(std::move(mel)) {
    if (mode_ == Mode::kCodec) {
        encoder_ = CodecEncoder(cfg.codec);
        quantizer_ = ResidualVectorQuantizer(cfg.codec.codebooks, cfg.codec.codebook_size, cfg.codec.latent_dim);
    }
}

torch::Tensor FeatureExtractor::operator()(const torch::Tensor& wave) {
    torch::NoGradGuard no_grad;
    if (mode_ == Mode::kVocoder) return (*mel_)(wave);
    return quantizer_->quantize(encoder_->forward(wave)).quantized;
}

NamedTensorList FeatureExtractor::state() const {
    NamedTensorList out;
    if (mode_ == Mode::kCodec) {
        append(out, module_state(*encoder_, "codec_encoder."));
        append(out, module_state(*quantizer_, "quantizer."));
    }
    return out;
}

void FeatureExtractor::load(const Checkpoint& ckpt) {
    if (mode_ != Mode::kCodec) return;
    load_module_state(*encoder_, ckpt, "codec_encoder.");
    load_module_state(*quantizer_, ckpt, "quantizer.");
}

void FeatureExtractor::freeze() {
    if (mode_ != Mode::kCodec) return;
    for (auto& p : encoder_->parameters()) p.set_requires_grad(false);
    for (auto& p : quantizer_->parameters()) p.set_requires_grad(false);
}

System::System(const TrainingConfig& cfg)
    : config(cfg),
      mel(std::make_shared<const MelFrontEnd>(cfg.mel)),
      features((torch::manual_seed(cfg.seed), cfg), mel) {
    config.validate();
    generator = Generator(cfg.generator);
    discriminators = DiscriminatorSet(cfg.discriminator);
    wm_encoder = WatermarkEncoder(cfg.bits, cfg.rank);
    wm_decoder = WatermarkDecoder(cfg.decoder);
}

torch::Tensor System::scaling(const torch::Tensor& bits) { return wm_encoder->forward(bits); }

torch::Tensor System::extract_logits(const torch::Tensor& wave) { return wm_decoder->forward((*mel)(wave)); }

NamedTensorList System::adapter_state() const {
    NamedTensorList out;
    for (const auto& [n, t] : adapter_parameters(*generator)) out.emplace_back("generator." + n, t.detach().clone());
    return out;
}

std::string TrainingLog::to_csv() const {
    std::ostringstream os;
    os << "iteration,loss_d,loss_wm,loss_g,adversarial,feature_matching,mel,batch_accuracy,projections_fired\n";
    for (const auto& r : rows)
        os << r.iteration << ',' << r.loss_d << ',' << r.loss_wm << ',' << r.loss_g << ',' << r.adversarial << ','
           << r.feature_matching << ',' << r.mel << ',' << r.batch_accuracy << ',' << r.projections_fired << '\n';
    return os.str();
}

Checkpoint pretrain_base(const TrainingConfig& cfg, const std::vector<Clip>& clips, TrainingLog* log) {
    if (clips.empty()) throw IngestionError("dataset is empty");
    torch::set_num_threads(1);
    System sys(cfg);
    const bool codec = cfg.mode == Mode::kCodec;

    std::vector<torch::Tensor> g_params = sys.generator->parameters();
    if (codec) {
        for (auto& p : sys.features.encoder()->parameters()) g_params.push_back(p);
        for (auto& p : sys.features.quantizer()->parameters()) g_params.push_back(p);
    }
    auto opt_g = make_adam(g_params, cfg.optimizer.lr_generator, cfg.optimizer);
    auto opt_d = make_adam(sys.discriminators->parameters(), cfg.optimizer.lr_discriminator, cfg.optimizer);
    SegmentSampler sampler(clips, cfg.segment_length, cfg.seed ^ kSegmentStream);

    for (int64_t it = 1; it <= cfg.pretrain_iterations; ++it) {
        auto x = sampler.next_batch(cfg.batch_size);
        torch::Tensor z, vq_loss;
        if (codec) {
            auto latent = sys.features.encoder()->forward(x);
            auto q = sys.features.quantizer()->quantize(latent).quantized;
            vq_loss = (q - latent.detach()).pow(2).mean() + kCommitment * (latent - q.detach()).pow(2).mean();
            z = latent + (q - latent).detach();
        } else {
            z = sys.features(x);
        }
        auto y = sys.generator->forward(z);
        auto loss_d = discriminator_step(*sys.discriminators, opt_d, x, y, it);

        opt_g.zero_grad();
        auto terms = generator_terms(*sys.discriminators, *sys.mel, cfg.loss, x, y);
        auto total = codec ? terms.total + vq_loss : terms.total;
        check_finite(total, "generator loss", it);
        total.backward();
        opt_g.step();
        if (codec) sys.features.quantizer()->enforce_zero_entry();

        if (should_log(it, cfg.pretrain_iterations, cfg.log_every)) {
            LogRow row;
            row.iteration = it;
            row.loss_d = loss_d.item<double>();
            row.loss_g = terms.total.item<double>();
            row.adversarial = terms.adversarial.item<double>();
            row.feature_matching = terms.feature_matching.item<double>();
            row.mel = terms.mel.item<double>();
            emit(log, row);
        }
    }

    auto meta = base_metadata(cfg);
    meta["iteration"] = std::to_string(cfg.pretrain_iterations);
    NamedTensorList tensors = module_state(*sys.generator, "generator.");
    append(tensors, sys.features.state());
    append(tensors, module_state(*sys.discriminators, "discriminator."));
    return make_checkpoint(CheckpointKind::kPretrained, std::move(meta), tensors, cfg.canonical());
}

Checkpoint train_p2mark(const TrainingConfig& cfg, const std::vector<Clip>& clips, const Checkpoint& pretrained,
                        TrainingLog* log) {
    if (clips.empty()) throw IngestionError("dataset is empty");
    require_kind(pretrained, CheckpointKind::kPretrained);
    check_compatible(cfg, config_of(pretrained));
    torch::set_num_threads(1);

    System sys(cfg);
    load_base(sys, pretrained);
    load_module_state(*sys.discriminators, pretrained, "discriminator.");
    sys.adapted_layers = inject_adapters(*sys.generator, *sys.generator, cfg.rank, cfg.adapter);

    const NamedTensors adapters = adapter_parameters(*sys.generator);
    std::vector<torch::Tensor> wm_params = tensors_of(adapters);
    for (auto& p : sys.wm_encoder->parameters()) wm_params.push_back(p);
    for (auto& p : sys.wm_decoder->parameters()) wm_params.push_back(p);

    auto opt_wm = make_adam(wm_params, cfg.optimizer.lr_watermark, cfg.optimizer);
    auto opt_g = make_adam(tensors_of(adapters), cfg.optimizer.lr_generator, cfg.optimizer);
    auto opt_d = make_adam(sys.discriminators->parameters(), cfg.optimizer.lr_discriminator, cfg.optimizer);

    SegmentSampler sampler(clips, cfg.segment_length, cfg.seed ^ kSegmentStream);
    WatermarkSampler wm_sampler(cfg.bits, cfg.seed ^ kWatermarkStream);
    GradientProjector projector(cfg.wgopo_enabled);

    for (int64_t it = 1; it <= cfg.max_iterations; ++it) {
        auto x = sampler.next_batch(cfg.batch_size);
        auto z = sys.features(x);
        auto w = wm_sampler.next_batch(cfg.batch_size);

        // Discriminators.
        torch::Tensor y;
        {
            torch::NoGradGuard no_grad;
            y = sys.generator->forward(z, sys.scaling(w));
        }
        auto loss_d = discriminator_step(*sys.discriminators, opt_d, x, y, it);

        // Watermark step: adapters, encoder and decoder; the adapter gradient is kept.
        opt_wm.zero_grad();
        auto y_wm = sys.generator->forward(z, sys.scaling(w));
        auto probs = torch::sigmoid(sys.extract_logits(y_wm));
        auto loss_wm = watermark_loss(probs, w);
        check_finite(loss_wm, "watermark loss", it);
        loss_wm.backward();
        projector.capture(adapters);
        opt_wm.step();

        // Generator step on the updated adapters, projected against the watermark gradient.
        opt_g.zero_grad();
        torch::Tensor s;
        {
            torch::NoGradGuard no_grad;
            s = sys.scaling(w);
        }
        auto y_g = sys.generator->forward(z, s);
        auto terms = generator_terms(*sys.discriminators, *sys.mel, cfg.loss, x, y_g);
        check_finite(terms.total, "generator loss", it);
        terms.total.backward();
        projector.apply(adapters);
        opt_g.step();

        if (should_log(it, cfg.max_iterations, cfg.log_every)) {
            LogRow row;
            row.iteration = it;
            row.loss_d = loss_d.item<double>();
            row.loss_wm = loss_wm.item<double>();
            row.loss_g = terms.total.item<double>();
            row.adversarial = terms.adversarial.item<double>();
            row.feature_matching = terms.feature_matching.item<double>();
            row.mel = terms.mel.item<double>();
            row.batch_accuracy = ((probs.detach() >= 0.5).to(torch::kFloat32) == w).to(torch::kFloat64).mean().item<double>();
            row.projections_fired = projector.fired_count();
            emit(log, row);
        }
    }

    auto meta = base_metadata(cfg);
    meta["iteration"] = std::to_string(cfg.max_iterations);
    meta["pretrained_hash"] = pretrained.content_hash();
    meta["bits"] = std::to_string(cfg.bits);
    meta["rank"] = std::to_string(cfg.rank);
    meta["adapted_layers"] = join(sys.adapted_layers);
    meta["projections_fired"] = std::to_string(projector.fired_count());
    meta["wgopo"] = cfg.wgopo_enabled ? "on" : "off";
    meta["frozen_digest"] = frozen_weights_digest(module_state(*sys.generator, "generator."));
    NamedTensorList tensors = sys.adapter_state();
    append(tensors, module_state(*sys.wm_encoder, "wm_encoder."));
    append(tensors, module_state(*sys.wm_decoder, "wm_decoder."));
    append(tensors, module_state(*sys.discriminators, "discriminator."));
    return make_checkpoint(CheckpointKind::kAdapter, std::move(meta), tensors, cfg.canonical());
}

std::string frozen_weights_digest(const NamedTensorList& generator_state) {
    std::string bytes;
    for (const auto& [name, t] : generator_state) {
        if (!name.starts_with("generator.") || name.find("adapter_") != std::string::npos) continue;
        bytes += name;
        bytes += tensor_bytes(t);
    }
    return sha256_hex(bytes);
}

TrainingConfig config_of(const Checkpoint& ckpt) {
    try {
        return TrainingConfig::from_json(nlohmann::json::parse(ckpt.config_json));
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError(std::string("checkpoint config: ") + e.what());
    }
}

std::unique_ptr<System> load_adapted_system(const Checkpoint& adapter, const Checkpoint& pretrained) {
    require_kind(adapter, CheckpointKind::kAdapter);
    require_kind(pretrained, CheckpointKind::kPretrained);
    if (adapter.manifest.require("pretrained_hash") != pretrained.content_hash())
        throw StructuralError("adapter checkpoint was trained on a different pretrained model");
    const auto cfg = config_of(adapter);
    auto sys = std::make_unique<System>(cfg);
    load_base(*sys, pretrained);
    sys->adapted_layers = inject_adapters(*sys->generator, *sys->generator, cfg.rank, cfg.adapter);
    {
        torch::NoGradGuard no_grad;
        for (auto& [name, t] : adapter_parameters(*sys->generator)) {
            const auto& src = adapter.tensor("generator." + name);
            if (!src.sizes().equals(t.sizes())) throw StructuralError("adapter shape mismatch for '" + name + "'");
            t.copy_(src);
        }
    }
    load_module_state(*sys->wm_encoder, adapter, "wm_encoder.");
    load_module_state(*sys->wm_decoder, adapter, "wm_decoder.");
    load_module_state(*sys->discriminators, adapter, "discriminator.");
    sys->generator->eval();
    sys->wm_decoder->eval();
    return sys;
}

Checkpoint mint_instance(const Checkpoint& adapter, const Checkpoint& pretrained, const Watermark& w) {
    const auto cfg = config_of(adapter);
    if (static_cast<int64_t>(w.size()) != cfg.bits)
        throw PayloadShapeError("watermark has " + std::to_string(w.size()) + " bits, the adapter expects " +
                                std::to_string(cfg.bits));
    auto sys = load_adapted_system(adapter, pretrained);
    const auto s = encode_watermark(w, *sys->wm_encoder);
    Generator merged(cfg.generator);
    merge_into(*sys->generator, s, *merged);

    auto meta = base_metadata(cfg);
    meta["watermark"] = w.to_string();
    meta["adapter_hash"] = adapter.content_hash();
    meta["pretrained_hash"] = pretrained.content_hash();
    NamedTensorList tensors = module_state(*merged, "generator.");
    append(tensors, sys->features.state());
    return make_checkpoint(CheckpointKind::kInstance, std::move(meta), tensors, cfg.canonical());
}

torch::Tensor PlainModel::resynthesize(const torch::Tensor& wave) {
    torch::NoGradGuard no_grad;
    auto x = wave.dim() == 1 ? wave.unsqueeze(0) : wave;
    auto y = generator->forward((*features)(x));
    return wave.dim() == 1 ? y.squeeze(0) : y;
}

PlainModel load_plain_model(const Checkpoint& ckpt) {
    if (ckpt.kind() == CheckpointKind::kAdapter)
        throw StructuralError("an adapter checkpoint needs its pretrained model; mint an instance first");
    PlainModel m;
    m.config = config_of(ckpt);
    m.mel = std::make_shared<const MelFrontEnd>(m.config.mel);
    m.features = std::make_unique<FeatureExtractor>(m.config, m.mel);
    m.features->load(ckpt);
    m.features->freeze();
    m.generator = Generator(m.config.generator);
    load_module_state(*m.generator, ckpt, "generator.");
    m.generator->eval();
    return m;
}

WatermarkDecoder load_decoder(const Checkpoint& adapter) {
    require_kind(adapter, CheckpointKind::kAdapter);
    const auto cfg = config_of(adapter);
    WatermarkDecoder dec(cfg.decoder);
    load_module_state(*dec, adapter, "wm_decoder.");
    dec->eval();
    return dec;
}

std::vector<Clip> training_clips(const TrainingConfig& cfg) {
    if (!cfg.data.wav_dir.empty()) return load_clips(wav_files_in(cfg.data.wav_dir), cfg.mel.sample_rate);
    return synthetic_corpus(cfg.data.synthetic_clips, cfg.data.clip_seconds, cfg.mel.sample_rate,
                            cfg.data.synthetic_seed);
}

std::vector<Clip> heldout_clips(const TrainingConfig& cfg, int64_t count) {
    return synthetic_corpus(count, cfg.data.clip_seconds, cfg.mel.sample_rate,
                            cfg.data.synthetic_seed ^ kHeldoutOffset);
}

}  // namespace p2mark
