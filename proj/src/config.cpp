#include "p2mark/config.hpp"

#include "p2mark/errors.hpp"

#include <algorithm>
#include <set>

namespace p2mark {

using nlohmann::json;

namespace {

// Reads an object section, rejecting keys outside `allowed`.
const json& section(const json& root, const std::string& key, const std::set<std::string>& allowed) {
    static const json kEmpty = json::object();
    if (!root.contains(key)) return kEmpty;
    const json& s = root.at(key);
    if (!s.is_object()) throw ConfigurationError("config: '" + key + "' must be an object");
    for (const auto& [k, v] : s.items())
        if (!allowed.contains(k)) throw ConfigurationError("config: unknown key '" + key + "." + k + "'");
    return s;
}

template <typename T>
void read(const json& s, const std::string& key, T& out) {
    if (!s.contains(key)) return;
    try {
        out = s.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigurationError("config: bad value for '" + key + "': " + e.what());
    }
}

}  // namespace

std::string_view mode_name(Mode mode) { return mode == Mode::kVocoder ? "vocoder" : "codec"; }

int64_t TrainingConfig::generator_input_channels() const {
    return mode == Mode::kVocoder ? mel.n_mels : codec.latent_dim;
}

void TrainingConfig::derive() {
    generator.in_channels = generator_input_channels();
    codec.downsample_factors.assign(generator.upsample_factors.rbegin(), generator.upsample_factors.rend());
    decoder.bits = bits;
    decoder.n_mels = mel.n_mels;
}

void TrainingConfig::validate() const {
    mel.validate();
    loss.validate();
    if (bits < 1 || bits > 32) throw ConfigurationError("config: watermark bits must be in [1, 32]");
    if (rank < 1) throw ConfigurationError("config: adapter rank must be positive");
    if (batch_size < 1 || segment_length < 1 || pretrain_iterations < 0 || max_iterations < 0 || log_every < 1)
        throw ConfigurationError("config: counts must be positive");
    const int64_t hop = generator.upsample_total();
    if (hop != mel.hop)
        throw ConfigurationError("config: generator upsampling " + std::to_string(hop) + " must equal the mel hop " +
                                 std::to_string(mel.hop));
    if (segment_length % hop != 0 || segment_length < mel.n_fft)
        throw ConfigurationError("config: segment_length must be a multiple of the hop and at least n_fft");
    if (generator.channels < 2 || generator.upsample_factors.empty())
        throw ConfigurationError("config: generator needs channels >= 2 and at least one upsample stage");
    if (mode == Mode::kCodec && (codec.latent_dim < 1 || codec.codebooks < 1 || codec.codebook_size < 2))
        throw ConfigurationError("config: invalid codec shape");
    if (decoder.blocks < 0 || decoder.channels < 1) throw ConfigurationError("config: invalid decoder shape");
    if (discriminator.channels < 8 || discriminator.channels % 8 != 0)
        throw ConfigurationError("config: discriminator channels must be a positive multiple of 8");
    for (double lr : {optimizer.lr_generator, optimizer.lr_discriminator, optimizer.lr_watermark})
        if (!(lr > 0.0)) throw ConfigurationError("config: learning rates must be positive");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
        throw ConfigurationError("config: Adam betas must lie in [0, 1)");
    if (data.synthetic_clips < 1 || !(data.clip_seconds > 0.0))
        throw ConfigurationError("config: synthetic corpus needs clips >= 1 and a positive duration");
}

json TrainingConfig::to_json() const {
    json j;
    j["mode"] = std::string(mode_name(mode));
    j["seed"] = seed;
    j["watermark"] = {{"bits", bits}, {"rank", rank}};
    j["training"] = {{"batch_size", batch_size},
                     {"segment_length", segment_length},
                     {"pretrain_iterations", pretrain_iterations},
                     {"max_iterations", max_iterations},
                     {"wgopo", wgopo_enabled},
                     {"log_every", log_every}};
    j["optimizer"] = {{"lr_generator", optimizer.lr_generator},
                      {"lr_discriminator", optimizer.lr_discriminator},
                      {"lr_watermark", optimizer.lr_watermark},
                      {"beta1", optimizer.beta1},
                      {"beta2", optimizer.beta2}};
    j["loss"] = {{"lambda_fm", loss.lambda_fm}, {"lambda_mel", loss.lambda_mel}};
    j["mel"] = {{"sample_rate", mel.sample_rate}, {"n_fft", mel.n_fft}, {"hop", mel.hop}, {"window", mel.window},
                {"n_mels", mel.n_mels},           {"fmin", mel.fmin},   {"fmax", mel.fmax}};
    j["generator"] = {{"channels", generator.channels},
                      {"upsample_factors", generator.upsample_factors},
                      {"resblock_kernel", generator.resblock_kernel},
                      {"resblock_dilations", generator.resblock_dilations}};
    j["codec"] = {{"latent_dim", codec.latent_dim},
                  {"codebooks", codec.codebooks},
                  {"codebook_size", codec.codebook_size},
                  {"encoder_channels", codec.encoder_channels}};
    j["discriminator"] = {{"periods", discriminator.periods},
                          {"scales", discriminator.scales},
                          {"channels", discriminator.channels}};
    j["decoder"] = {{"blocks", decoder.blocks}, {"channels", decoder.channels}, {"min_frames", decoder.min_frames}};
    j["adapter"] = {{"selector", adapter.pattern}, {"include_transposed", adapter.include_transposed}};
    j["data"] = {{"synthetic_clips", data.synthetic_clips},
                 {"clip_seconds", data.clip_seconds},
                 {"synthetic_seed", data.synthetic_seed},
                 {"wav_dir", data.wav_dir}};
    j["attacks"] = {{"codec_binary", codec_binary}};
    return j;
}

TrainingConfig TrainingConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigurationError("config: top level must be an object");
    static const std::set<std::string> kTop{"mode",  "seed",      "watermark", "training",      "optimizer",
                                            "loss",  "mel",       "generator", "codec",         "discriminator",
                                            "decoder", "adapter", "data",      "attacks"};
    for (const auto& [k, v] : j.items())
        if (!kTop.contains(k)) throw ConfigurationError("config: unknown key '" + k + "'");

    TrainingConfig c;
    if (j.contains("mode")) {
        const auto m = j.at("mode").get<std::string>();
        if (m == "vocoder")
            c.mode = Mode::kVocoder;
        else if (m == "codec")
            c.mode = Mode::kCodec;
        else
            throw ConfigurationError("config: mode must be 'vocoder' or 'codec'");
    }
    read(j, "seed", c.seed);

    const auto& wm = section(j, "watermark", {"bits", "rank"});
    read(wm, "bits", c.bits);
    read(wm, "rank", c.rank);

    const auto& tr = section(j, "training", {"batch_size", "segment_length", "pretrain_iterations", "max_iterations",
                                             "wgopo", "log_every"});
    read(tr, "batch_size", c.batch_size);
    read(tr, "segment_length", c.segment_length);
    read(tr, "pretrain_iterations", c.pretrain_iterations);
    read(tr, "max_iterations", c.max_iterations);
    read(tr, "wgopo", c.wgopo_enabled);
    read(tr, "log_every", c.log_every);

    const auto& op = section(j, "optimizer", {"lr_generator", "lr_discriminator", "lr_watermark", "beta1", "beta2"});
    read(op, "lr_generator", c.optimizer.lr_generator);
    read(op, "lr_discriminator", c.optimizer.lr_discriminator);
    read(op, "lr_watermark", c.optimizer.lr_watermark);
    read(op, "beta1", c.optimizer.beta1);
    read(op, "beta2", c.optimizer.beta2);

    const auto& lo = section(j, "loss", {"lambda_fm", "lambda_mel"});
    read(lo, "lambda_fm", c.loss.lambda_fm);
    read(lo, "lambda_mel", c.loss.lambda_mel);

    const auto& me = section(j, "mel", {"sample_rate", "n_fft", "hop", "window", "n_mels", "fmin", "fmax"});
    read(me, "sample_rate", c.mel.sample_rate);
    read(me, "n_fft", c.mel.n_fft);
    read(me, "hop", c.mel.hop);
    read(me, "window", c.mel.window);
    read(me, "n_mels", c.mel.n_mels);
    read(me, "fmin", c.mel.fmin);
    read(me, "fmax", c.mel.fmax);

    const auto& ge = section(j, "generator", {"channels", "upsample_factors", "resblock_kernel", "resblock_dilations"});
    read(ge, "channels", c.generator.channels);
    read(ge, "upsample_factors", c.generator.upsample_factors);
    read(ge, "resblock_kernel", c.generator.resblock_kernel);
    read(ge, "resblock_dilations", c.generator.resblock_dilations);

    const auto& co = section(j, "codec", {"latent_dim", "codebooks", "codebook_size", "encoder_channels"});
    read(co, "latent_dim", c.codec.latent_dim);
    read(co, "codebooks", c.codec.codebooks);
    read(co, "codebook_size", c.codec.codebook_size);
    read(co, "encoder_channels", c.codec.encoder_channels);

    const auto& di = section(j, "discriminator", {"periods", "scales", "channels"});
    read(di, "periods", c.discriminator.periods);
    read(di, "scales", c.discriminator.scales);
    read(di, "channels", c.discriminator.channels);

    const auto& de = section(j, "decoder", {"blocks", "channels", "min_frames"});
    read(de, "blocks", c.decoder.blocks);
    read(de, "channels", c.decoder.channels);
    read(de, "min_frames", c.decoder.min_frames);

    const auto& ad = section(j, "adapter", {"selector", "include_transposed"});
    read(ad, "selector", c.adapter.pattern);
    read(ad, "include_transposed", c.adapter.include_transposed);

    const auto& da = section(j, "data", {"synthetic_clips", "clip_seconds", "synthetic_seed", "wav_dir"});
    read(da, "synthetic_clips", c.data.synthetic_clips);
    read(da, "clip_seconds", c.data.clip_seconds);
    read(da, "synthetic_seed", c.data.synthetic_seed);
    read(da, "wav_dir", c.data.wav_dir);

    const auto& at = section(j, "attacks", {"codec_binary"});
    read(at, "codec_binary", c.codec_binary);

    c.derive();
    c.validate();
    return c;
}

TrainingConfig TrainingConfig::load(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigurationError("config: cannot parse '" + path.string() + "': " + e.what());
    }
    return from_json(j);
}

std::string TrainingConfig::canonical() const { return to_json().dump(); }

std::string TrainingConfig::hash() const { return sha256_hex(canonical()); }

}  // namespace p2mark
