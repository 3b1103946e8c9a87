#include "p2mark/attacks.hpp"

#include "p2mark/dsp.hpp"
#include "p2mark/errors.hpp"
#include "p2mark/io.hpp"

#include <torch/torch.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <random>
#include <sstream>
#include <unistd.h>

namespace p2mark {

namespace {

struct NamedKind {
    AttackKind kind;
    std::string_view name;
};

constexpr NamedKind kNames[] = {
    {AttackKind::kNone, "none"},         {AttackKind::kPinkNoise, "pink_noise"},
    {AttackKind::kWhiteNoise, "white_noise"}, {AttackKind::kLowpass, "lowpass"},
    {AttackKind::kBandpass, "bandpass"}, {AttackKind::kHighpass, "highpass"},
    {AttackKind::kBoost, "boost"},       {AttackKind::kDuck, "duck"},
    {AttackKind::kMp3, "mp3"},           {AttackKind::kAac, "aac"},
    {AttackKind::kResample, "resample"}, {AttackKind::kEcho, "echo"},
    {AttackKind::kCrop, "crop"},
};

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'')
            out += "'\\''";
        else
            out.push_back(c);
    }
    return out + "'";
}

std::vector<float> scale(std::span<const float> x, double gain) {
    std::vector<float> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = static_cast<float>(static_cast<double>(x[i]) * gain);
    return y;
}

std::vector<float> add(std::span<const float> x, const std::vector<float>& noise) {
    std::vector<float> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] + noise[i];
    return y;
}

AttackOutcome codec_round_trip(std::span<const float> wave, int64_t sr, const AttackSpec& spec,
                               const CodecTool& codec) {
    const bool mp3 = spec.kind == AttackKind::kMp3;
    if (!codec.available())
        return {std::vector<float>(wave.begin(), wave.end()), true, "no external encoder (set P2MARK_CODEC_BIN)"};

    static std::atomic<uint64_t> counter{0};
    const auto dir = fs::temp_directory_path() /
                     ("p2mark_codec_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(dir);
    const auto in = dir / "in.wav";
    const auto enc = dir / (mp3 ? "enc.mp3" : "enc.m4a");
    const auto out = dir / "out.wav";
    write_wav(in, wave, sr, WavFormat::kFloat32);

    const std::string bin = shell_quote(codec.binary);
    const std::string rate = std::to_string(spec.bitrate_kbps) + "k";
    const std::string encode = bin + " -nostdin -y -loglevel error -i " + shell_quote(in.string()) + " -c:a " +
                               (mp3 ? "libmp3lame" : "aac") + " -b:a " + rate + " " + shell_quote(enc.string());
    const std::string decode = bin + " -nostdin -y -loglevel error -i " + shell_quote(enc.string()) +
                               " -ac 1 -ar " + std::to_string(sr) + " -c:a pcm_f32le " + shell_quote(out.string());
    const bool ok = std::system(encode.c_str()) == 0 && std::system(decode.c_str()) == 0;

    AttackOutcome result;
    if (!ok) {
        result = {std::vector<float>(wave.begin(), wave.end()), true, "external encoder failed"};
    } else {
        auto decoded = read_wav(out).samples;
        decoded.resize(wave.size(), 0.0F);  // drop encoder padding / pad short decodes
        result.wave = std::move(decoded);
    }
    std::error_code ec;
    fs::remove_all(dir, ec);
    return result;
}

}  // namespace

std::string_view attack_name(AttackKind kind) {
    for (const auto& n : kNames)
        if (n.kind == kind) return n.name;
    return "unknown";
}

AttackKind parse_attack(std::string_view name) {
    for (const auto& n : kNames)
        if (n.name == name) return n.kind;
    throw DomainError("unknown attack kind '" + std::string(name) + "'");
}

const std::vector<AttackKind>& all_attacks() {
    static const std::vector<AttackKind> kinds{
        AttackKind::kPinkNoise, AttackKind::kWhiteNoise, AttackKind::kLowpass, AttackKind::kBandpass,
        AttackKind::kHighpass,  AttackKind::kBoost,      AttackKind::kDuck,    AttackKind::kMp3,
        AttackKind::kAac,       AttackKind::kResample,   AttackKind::kEcho,    AttackKind::kCrop,
    };
    return kinds;
}

AttackSpec AttackSpec::defaults(AttackKind kind, uint64_t seed) {
    AttackSpec s;
    s.kind = kind;
    s.seed = seed;
    switch (kind) {
        case AttackKind::kPinkNoise: s.noise_std = 0.1; break;
        case AttackKind::kWhiteNoise: s.noise_std = 0.05; break;
        case AttackKind::kLowpass: s.low_hz = 500.0; break;
        case AttackKind::kBandpass: s.low_hz = 500.0; s.high_hz = 1500.0; break;
        case AttackKind::kHighpass: s.low_hz = 1500.0; break;
        case AttackKind::kBoost: s.gain = 10.0; break;
        case AttackKind::kDuck: s.gain = 0.1; break;
        default: break;
    }
    return s;
}

void AttackSpec::validate(int64_t sample_rate) const {
    if (sample_rate <= 0) throw DomainError("attack: sample rate must be positive");
    const double nyquist = static_cast<double>(sample_rate) / 2.0;
    switch (kind) {
        case AttackKind::kPinkNoise:
        case AttackKind::kWhiteNoise:
            if (!(noise_std >= 0.0)) throw DomainError("attack: noise std must be >= 0");
            break;
        case AttackKind::kLowpass:
        case AttackKind::kHighpass:
            if (!(low_hz > 0.0 && low_hz < nyquist)) throw DomainError("attack: cutoff must lie in (0, sr/2)");
            if (filter_order < 1) throw DomainError("attack: filter order must be >= 1");
            break;
        case AttackKind::kBandpass:
            if (!(low_hz > 0.0 && high_hz < nyquist && low_hz < high_hz))
                throw DomainError("attack: band edges must satisfy 0 < low < high < sr/2");
            if (filter_order < 1) throw DomainError("attack: filter order must be >= 1");
            break;
        case AttackKind::kBoost:
        case AttackKind::kDuck:
            if (!(gain > 0.0)) throw DomainError("attack: volume factor must be > 0");
            break;
        case AttackKind::kMp3:
        case AttackKind::kAac:
            if (bitrate_kbps <= 0) throw DomainError("attack: bitrate must be positive");
            break;
        case AttackKind::kResample:
            if (intermediate_rate <= 0) throw DomainError("attack: intermediate rate must be positive");
            break;
        case AttackKind::kEcho:
            if (!(delay_seconds >= 0.0)) throw DomainError("attack: echo delay must be >= 0");
            if (!std::isfinite(decay)) throw DomainError("attack: echo decay must be finite");
            break;
        default: break;
    }
}

std::string AttackSpec::describe() const {
    std::ostringstream os;
    switch (kind) {
        case AttackKind::kPinkNoise:
        case AttackKind::kWhiteNoise: os << "std=" << noise_std << ";seed=" << seed; break;
        case AttackKind::kLowpass:
        case AttackKind::kHighpass: os << "cutoff_hz=" << low_hz << ";order=" << filter_order; break;
        case AttackKind::kBandpass: os << "low_hz=" << low_hz << ";high_hz=" << high_hz << ";order=" << filter_order; break;
        case AttackKind::kBoost:
        case AttackKind::kDuck: os << "factor=" << gain; break;
        case AttackKind::kMp3:
        case AttackKind::kAac: os << "bitrate_kbps=" << bitrate_kbps; break;
        case AttackKind::kResample: os << "via_hz=" << intermediate_rate; break;
        case AttackKind::kEcho: os << "delay_s=" << delay_seconds << ";decay=" << decay; break;
        case AttackKind::kCrop: os << "keep=first_half"; break;
        case AttackKind::kNone: break;
    }
    return os.str();
}

CodecTool CodecTool::discover(const std::string& configured) {
    if (const char* env = std::getenv("P2MARK_CODEC_BIN"); env != nullptr && *env != '\0') return {env};
    return {configured};
}

bool CodecTool::available() const {
    if (binary.empty()) return false;
    std::error_code ec;
    return fs::exists(binary, ec) || binary.find('/') == std::string::npos;
}

std::vector<float> white_noise(size_t n, double std_dev, uint64_t seed) {
    std::mt19937_64 engine(seed);
    std::normal_distribution<double> normal(0.0, std_dev);
    std::vector<float> out(n);
    for (auto& v : out) v = static_cast<float>(normal(engine));
    return out;
}

std::vector<float> pink_noise(size_t n, double std_dev, uint64_t seed) {
    if (n == 0) return {};
    auto white = white_noise(n, 1.0, seed);
    auto x = torch::from_blob(white.data(), {static_cast<int64_t>(n)}, torch::kFloat32).to(torch::kFloat64);
    auto spec = torch::fft::rfft(x);
    auto freqs = torch::arange(spec.size(0), torch::kFloat64);
    // Amplitude ~ 1/sqrt(f) gives power ~ 1/f; the DC bin is removed.
    auto shaping = torch::where(freqs > 0, torch::rsqrt(freqs.clamp_min(1.0)), torch::zeros_like(freqs));
    auto shaped = torch::fft::irfft(spec * shaping, static_cast<int64_t>(n));
    shaped = shaped - shaped.mean();
    const double sd = shaped.std(/*unbiased=*/false).item<double>();
    if (sd > 0.0) shaped = shaped * (std_dev / sd);
    auto f = shaped.to(torch::kFloat32).contiguous();
    return {f.data_ptr<float>(), f.data_ptr<float>() + n};
}

AttackOutcome apply_attack(std::span<const float> wave, int64_t sample_rate, const AttackSpec& spec,
                           const CodecTool& codec) {
    if (wave.empty()) throw DomainError("attack: empty input");
    spec.validate(sample_rate);
    const double sr = static_cast<double>(sample_rate);
    AttackOutcome out;
    switch (spec.kind) {
        case AttackKind::kNone: out.wave.assign(wave.begin(), wave.end()); break;
        case AttackKind::kPinkNoise: out.wave = add(wave, pink_noise(wave.size(), spec.noise_std, spec.seed)); break;
        case AttackKind::kWhiteNoise: out.wave = add(wave, white_noise(wave.size(), spec.noise_std, spec.seed)); break;
        case AttackKind::kLowpass:
            out.wave = dsp::sosfilt(dsp::butterworth(spec.filter_order, dsp::BandType::kLowpass, sr, spec.low_hz), wave);
            break;
        case AttackKind::kHighpass:
            out.wave = dsp::sosfilt(dsp::butterworth(spec.filter_order, dsp::BandType::kHighpass, sr, spec.low_hz), wave);
            break;
        case AttackKind::kBandpass:
            out.wave = dsp::sosfilt(
                dsp::butterworth(spec.filter_order, dsp::BandType::kBandpass, sr, spec.low_hz, spec.high_hz), wave);
            break;
        case AttackKind::kBoost:
        case AttackKind::kDuck: out.wave = scale(wave, spec.gain); break;
        case AttackKind::kMp3:
        case AttackKind::kAac: return codec_round_trip(wave, sample_rate, spec, codec);
        case AttackKind::kResample: {
            auto up = dsp::resample(wave, sample_rate, spec.intermediate_rate);
            out.wave = dsp::resample(up, spec.intermediate_rate, sample_rate);
            break;
        }
        case AttackKind::kEcho: {
            const auto delay = static_cast<size_t>(std::llround(spec.delay_seconds * sr));
            out.wave.assign(wave.begin(), wave.end());
            for (size_t t = delay; t < wave.size(); ++t)
                out.wave[t] = static_cast<float>(wave[t] + spec.decay * wave[t - delay]);
            break;
        }
        case AttackKind::kCrop: out.wave.assign(wave.begin(), wave.begin() + static_cast<std::ptrdiff_t>((wave.size() + 1) / 2)); break;
    }
    return out;
}

std::vector<BatteryRow> attack_battery(std::span<const float> wave, int64_t sample_rate, uint64_t seed,
                                       const CodecTool& codec) {
    std::vector<BatteryRow> rows;
    rows.push_back({"none", "", apply_attack(wave, sample_rate, AttackSpec::defaults(AttackKind::kNone), codec)});
    for (auto kind : all_attacks()) {
        const auto spec = AttackSpec::defaults(kind, seed);
        rows.push_back({std::string(attack_name(kind)), spec.describe(), apply_attack(wave, sample_rate, spec, codec)});
    }
    return rows;
}

}  // namespace p2mark
