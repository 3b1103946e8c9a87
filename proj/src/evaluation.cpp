#include "p2mark/evaluation.hpp"

#include "p2mark/errors.hpp"
#include "p2mark/io.hpp"
#include "p2mark/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace p2mark {

namespace {

std::pair<torch::Tensor, torch::Tensor> trimmed(const torch::Tensor& a, const torch::Tensor& b) {
    const auto n = std::min(a.size(-1), b.size(-1));
    return {a.narrow(-1, 0, n).to(torch::kFloat32), b.narrow(-1, 0, n).to(torch::kFloat32)};
}

torch::Tensor magnitude(const torch::Tensor& x, const StftResolution& res) {
    auto spec = torch::stft(x, res.n_fft, res.hop, res.window, torch::hann_window(res.window), /*center=*/true,
                            "reflect", /*normalized=*/false, /*onesided=*/true, /*return_complex=*/true);
    return spec.abs();
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::optional<double> mean_of(const std::vector<ItemResult>& items, std::optional<double> ItemResult::*field) {
    double sum = 0.0;
    for (const auto& it : items) {
        if (!(it.*field)) return std::nullopt;
        sum += *(it.*field);
    }
    if (items.empty()) return std::nullopt;
    return sum / static_cast<double>(items.size());
}

std::vector<float> to_vector(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat32).contiguous();
    return {c.data_ptr<float>(), c.data_ptr<float>() + c.numel()};
}

}  // namespace

double mel_distance(const torch::Tensor& a, const torch::Tensor& b, const MelFrontEnd& mel) {
    torch::NoGradGuard no_grad;
    auto [x, y] = trimmed(a, b);
    return (mel(x) - mel(y)).abs().mean().item<double>();
}

double mel_distance(const torch::Tensor& a, const torch::Tensor& b, const MelConfig& cfg) {
    return mel_distance(a, b, MelFrontEnd(cfg));
}

std::vector<StftResolution> default_resolutions() { return {{512, 128, 512}, {1024, 256, 1024}, {2048, 512, 2048}}; }

SpectralTerms spectral_terms(const torch::Tensor& a, const torch::Tensor& b, const StftResolution& res) {
    torch::NoGradGuard no_grad;
    auto [x, y] = trimmed(a, b);
    if (res.window > x.size(-1) || res.window > res.n_fft || res.hop < 1)
        throw ConfigurationError("stft resolution " + std::to_string(res.window) + " does not fit a signal of " +
                                 std::to_string(x.size(-1)) + " samples");
    const auto ma = magnitude(x, res).to(torch::kFloat64);
    const auto mb = magnitude(y, res).to(torch::kFloat64);
    SpectralTerms t;
    const double denom = 0.5 * (ma.norm().item<double>() + mb.norm().item<double>());
    t.spectral_convergence = denom > 0.0 ? (ma - mb).norm().item<double>() / denom : 0.0;
    t.log_magnitude =
        (torch::log(ma.clamp_min(kLogFloor)) - torch::log(mb.clamp_min(kLogFloor))).abs().mean().item<double>();
    return t;
}

double stft_distance(const torch::Tensor& a, const torch::Tensor& b, const std::vector<StftResolution>& resolutions) {
    if (resolutions.empty()) throw ConfigurationError("stft distance needs at least one resolution");
    double sum = 0.0;
    for (const auto& r : resolutions) {
        const auto t = spectral_terms(a, b, r);
        sum += t.spectral_convergence + t.log_magnitude;
    }
    return sum / static_cast<double>(resolutions.size());
}

std::string EvalReport::items_csv() const {
    std::ostringstream os;
    os << "item,acc,mel_distance,stft_distance,decoded,pesq,stoi\n";
    for (const auto& it : items)
        os << it.index << ',' << fmt(it.accuracy) << ',' << fmt(it.mel_distance) << ',' << fmt(it.stft_distance) << ','
           << it.decoded << ',' << fmt(it.pesq) << ',' << fmt(it.stoi) << '\n';
    return os.str();
}

std::string EvalReport::attacks_csv() const {
    std::ostringstream os;
    os << "attack,params,acc,skipped\n";
    for (const auto& a : attacks)
        os << a.name << ',' << a.params << ',' << (a.skipped ? std::string() : fmt(a.accuracy)) << ','
           << (a.skipped ? 1 : 0) << '\n';
    return os.str();
}

std::string EvalReport::summary() const {
    std::ostringstream os;
    os << "watermark        " << watermark << '\n'
       << "config hash      " << config_hash << '\n'
       << "instance hash    " << instance_hash << '\n'
       << "quality vs       " << quality_reference << " (" << reference_hash << ")\n"
       << "items            " << items.size() << '\n'
       << "ACC              " << fmt(accuracy) << '\n'
       << "mel distance     " << fmt(mel_distance) << '\n'
       << "stft distance    " << fmt(stft_distance) << '\n'
       << "PESQ             " << (pesq ? fmt(*pesq) : "null") << '\n'
       << "STOI             " << (stoi ? fmt(*stoi) : "null") << '\n'
       << '\n'
       << std::left << std::setw(12) << "attack" << std::setw(10) << "ACC" << "params\n";
    for (const auto& a : attacks)
        os << std::setw(12) << a.name << std::setw(10) << (a.skipped ? "skipped" : fmt(a.accuracy)) << a.params
           << (a.note.empty() ? "" : "  # " + a.note) << '\n';
    return os.str();
}

std::string EvalReport::file_stem() const {
    return "eval_" + sha256_hex(watermark).substr(0, 12) + "_" + config_hash.substr(0, 12);
}

EvalReport evaluate_instance(const Checkpoint& instance, const Checkpoint& pretrained, WatermarkDecoderImpl& decoder,
                             const std::vector<Clip>& eval_set, const EvalOptions& options) {
    if (instance.kind() != CheckpointKind::kInstance) throw StructuralError("evaluate: expected an instance checkpoint");
    if (eval_set.empty()) throw IngestionError("evaluate: empty evaluation set");
    const Watermark claimed = options.expected ? *options.expected : Watermark::parse(instance.manifest.require("watermark"));
    if (static_cast<int64_t>(claimed.size()) != decoder.options().bits)
        throw PayloadShapeError("evaluate: watermark has " + std::to_string(claimed.size()) +
                                " bits, the decoder produces " + std::to_string(decoder.options().bits));

    torch::NoGradGuard no_grad;
    auto model = load_plain_model(instance);
    auto reference = load_plain_model(pretrained);
    const int64_t sr = model.config.mel.sample_rate;
    const MelFrontEnd& mel = *model.mel;

    EvalReport report;
    report.watermark = instance.manifest.require("watermark");
    report.config_hash = model.config.hash();
    report.instance_hash = instance.content_hash();
    report.reference_hash = pretrained.content_hash();

    std::vector<AttackSpec> specs{AttackSpec::defaults(AttackKind::kNone)};
    for (auto k : options.attacks)
        if (k != AttackKind::kNone) specs.push_back(AttackSpec::defaults(k, options.seed));
    std::vector<double> attack_sum(specs.size(), 0.0);
    std::vector<bool> attack_skipped(specs.size(), false);
    std::vector<std::string> attack_note(specs.size());

    auto score = [&](const std::vector<float>& wave) {
        auto t = torch::from_blob(const_cast<float*>(wave.data()), {static_cast<int64_t>(wave.size())}, torch::kFloat32);
        return bit_accuracy(decode_watermark(mel(t), decoder).bits, claimed);
    };

    for (size_t i = 0; i < eval_set.size(); ++i) {
        const auto& clip = eval_set[i];
        auto x = torch::from_blob(const_cast<float*>(clip.data()), {1, static_cast<int64_t>(clip.size())},
                                  torch::kFloat32)
                     .clone();
        const auto y = model.resynthesize(x).squeeze(0);
        const auto y_ref = reference.resynthesize(x).squeeze(0);
        const auto wave = to_vector(y);

        ItemResult item;
        item.index = static_cast<int64_t>(i);
        const auto decoded = decode_watermark(mel(y), decoder);
        item.decoded = decoded.bits.to_string();
        item.accuracy = bit_accuracy(decoded.bits, claimed);
        item.mel_distance = mel_distance(y, y_ref, mel);
        item.stft_distance = stft_distance(y, y_ref);
        if (options.pesq) item.pesq = options.pesq(to_vector(y_ref), wave, sr);
        if (options.stoi) item.stoi = options.stoi(to_vector(y_ref), wave, sr);

        attack_sum[0] += item.accuracy;
        for (size_t a = 1; a < specs.size(); ++a) {
            auto spec = specs[a];
            spec.seed = options.seed + i;
            const auto outcome = apply_attack(wave, sr, spec, options.codec);
            if (outcome.skipped) {
                attack_skipped[a] = true;
                attack_note[a] = outcome.note;
                continue;
            }
            attack_sum[a] += score(outcome.wave);
        }
        report.items.push_back(std::move(item));
    }

    const double n = static_cast<double>(report.items.size());
    for (const auto& it : report.items) {
        report.mel_distance += it.mel_distance;
        report.stft_distance += it.stft_distance;
    }
    report.accuracy = attack_sum[0] / n;
    report.mel_distance /= n;
    report.stft_distance /= n;
    report.pesq = mean_of(report.items, &ItemResult::pesq);
    report.stoi = mean_of(report.items, &ItemResult::stoi);

    for (size_t a = 0; a < specs.size(); ++a) {
        AttackResult r;
        r.name = std::string(attack_name(specs[a].kind));
        r.params = a == 0 ? std::string() : specs[a].describe();
        r.skipped = attack_skipped[a];
        r.note = attack_note[a];
        r.accuracy = r.skipped ? 0.0 : attack_sum[a] / n;
        report.attacks.push_back(std::move(r));
    }
    return report;
}

fs::path write_report(const fs::path& dir, const EvalReport& report, bool overwrite) {
    fs::create_directories(dir);
    const auto stem = dir / report.file_stem();
    const std::vector<std::pair<std::string, std::string>> files{
        {".items.csv", report.items_csv()}, {".attacks.csv", report.attacks_csv()}, {".txt", report.summary()}};
    for (const auto& [ext, body] : files) {
        auto p = stem;
        p += ext;
        if (fs::exists(p) && !overwrite)
            throw Error("refusing to overwrite existing '" + p.string() + "' (use --force)");
    }
    for (const auto& [ext, body] : files) {
        auto p = stem;
        p += ext;
        atomic_write_file(p, body);
    }
    return stem;
}

}  // namespace p2mark
