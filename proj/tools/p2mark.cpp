#include "p2mark/attacks.hpp"
#include "p2mark/config.hpp"
#include "p2mark/errors.hpp"
#include "p2mark/evaluation.hpp"
#include "p2mark/io.hpp"
#include "p2mark/pipeline.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace {

using namespace p2mark;

struct Common {
    std::string config;
    uint64_t seed = 0;
    bool seed_set = false;
    bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON configuration file");
    cmd->add_option("--seed", c.seed, "Seed for every random draw")->each([&c](const std::string&) { c.seed_set = true; });
}

TrainingConfig load_config(const Common& c) {
    TrainingConfig cfg = c.config.empty() ? TrainingConfig{} : TrainingConfig::load(c.config);
    if (c.seed_set) cfg.seed = c.seed;
    cfg.derive();
    cfg.validate();
    return cfg;
}

void print_row(const LogRow& r) {
    std::cout << "iter " << r.iteration << "  L_D " << r.loss_d << "  L_WM " << r.loss_wm << "  L_G " << r.loss_g
              << "  mel " << r.mel << "  acc " << r.batch_accuracy << "  projections " << r.projections_fired << '\n'
              << std::flush;
}

void write_log(const std::string& path, const TrainingLog& log, bool force) {
    if (path.empty()) return;
    if (fs::exists(path) && !force) throw Error("refusing to overwrite existing '" + path + "' (use --force)");
    atomic_write_file(path, log.to_csv());
}

torch::Tensor mono_tensor(const WavData& wav, const std::string& path) {
    if (wav.channels != 1) throw IngestionError("'" + path + "' has " + std::to_string(wav.channels) + " channels, expected mono");
    return torch::tensor(wav.samples, torch::kFloat32);
}

double merge_gap(const Checkpoint& adapter, const Checkpoint& base, const Checkpoint& instance, int64_t probes,
                 uint64_t seed) {
    auto sys = load_adapted_system(adapter, base);
    auto plain = load_plain_model(instance);
    const auto w = Watermark::parse(instance.manifest.require("watermark"));
    const auto s = encode_watermark(w, *sys->wm_encoder);
    torch::manual_seed(seed);
    std::vector<torch::Tensor> inputs;
    for (int64_t i = 0; i < probes; ++i)
        inputs.push_back(torch::randn({1, sys->config.generator_input_channels(), 16}));
    return verify_merge_equivalence(*sys->generator, s, *plain.generator, inputs);
}

Watermark parse_bits(const std::string& text) {
    try {
        return Watermark::parse(text);
    } catch (const DomainError& e) {
        throw Error(std::string("malformed bit string: ") + e.what(), ExitCode::kUsage);
    }
}

std::string fixed4(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Parameter-level audio watermarking: pretrain, train, mint, extract, attack, evaluate.", "p2mark"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    // pretrain
    Common pre;
    std::string pre_out, pre_log;
    int64_t pre_iters = -1;
    auto* cmd_pre = app.add_subcommand("pretrain", "Train the unwatermarked base model");
    add_common(cmd_pre, pre);
    cmd_pre->add_option("--out", pre_out, "Checkpoint directory to write")->required();
    cmd_pre->add_option("--iterations", pre_iters, "Override training.pretrain_iterations");
    cmd_pre->add_option("--log", pre_log, "Write the metrics log as CSV");
    cmd_pre->add_flag("--force", pre.force, "Overwrite existing outputs");

    // train
    Common tr;
    std::string tr_base, tr_out, tr_log, tr_wgopo;
    int64_t tr_iters = -1;
    auto* cmd_tr = app.add_subcommand("train", "Fine-tune the watermark adapter on a pretrained model");
    add_common(cmd_tr, tr);
    cmd_tr->add_option("--base", tr_base, "Pretrained checkpoint directory")->required();
    cmd_tr->add_option("--out", tr_out, "Adapter checkpoint directory to write")->required();
    cmd_tr->add_option("--iterations", tr_iters, "Override training.max_iterations");
    cmd_tr->add_option("--wgopo", tr_wgopo, "Gradient projection on|off")->check(CLI::IsMember({"on", "off"}));
    cmd_tr->add_option("--log", tr_log, "Write the metrics log as CSV");
    cmd_tr->add_flag("--force", tr.force, "Overwrite existing outputs");

    // mint
    Common mi;
    std::string mi_adapter, mi_base, mi_bits, mi_out;
    auto* cmd_mi = app.add_subcommand("mint", "Merge the adapter for one watermark into a plain model instance");
    add_common(cmd_mi, mi);
    cmd_mi->add_option("--adapter", mi_adapter, "Adapter checkpoint directory")->required();
    cmd_mi->add_option("--base", mi_base, "Pretrained checkpoint directory")->required();
    cmd_mi->add_option("--watermark", mi_bits, "Bit string such as 10110010")->required();
    cmd_mi->add_option("--out", mi_out, "Instance checkpoint directory to write")->required();
    cmd_mi->add_flag("--force", mi.force, "Overwrite existing outputs");

    // extract
    Common ex;
    std::string ex_audio, ex_decoder, ex_expected;
    auto* cmd_ex = app.add_subcommand("extract", "Recover the watermark bits from audio");
    add_common(cmd_ex, ex);
    cmd_ex->add_option("--instance-audio", ex_audio, "Mono WAV produced by a minted instance")->required();
    cmd_ex->add_option("--decoder", ex_decoder, "Adapter checkpoint holding the watermark decoder")->required();
    cmd_ex->add_option("--expected", ex_expected, "Bit string to score the recovered bits against");

    // attack
    Common at;
    std::string at_kind, at_in, at_out;
    auto* cmd_at = app.add_subcommand("attack", "Apply one attack to a WAV file");
    add_common(cmd_at, at);
    cmd_at->add_option("--kind", at_kind, "Attack name")
        ->required()
        ->check(CLI::IsMember({"none", "pink_noise", "white_noise", "lowpass", "bandpass", "highpass", "boost", "duck",
                               "mp3", "aac", "resample", "echo", "crop"}));
    cmd_at->add_option("--in", at_in, "Input mono WAV")->required();
    cmd_at->add_option("--out", at_out, "Output WAV")->required();
    cmd_at->add_flag("--force", at.force, "Overwrite existing outputs");

    // evaluate
    Common ev;
    std::string ev_instance, ev_base, ev_decoder, ev_out, ev_audio;
    std::vector<std::string> ev_attacks;
    int64_t ev_items = 16;
    auto* cmd_ev = app.add_subcommand("evaluate", "Score an instance on held-out clips, optionally under attacks");
    add_common(cmd_ev, ev);
    cmd_ev->add_option("--instance", ev_instance, "Instance checkpoint directory")->required();
    cmd_ev->add_option("--base", ev_base, "Pretrained checkpoint directory (quality reference)")->required();
    cmd_ev->add_option("--decoder", ev_decoder, "Adapter checkpoint holding the watermark decoder")->required();
    cmd_ev->add_option("--attacks", ev_attacks, "Attack names, or 'all' for the full battery")->delimiter(',');
    cmd_ev->add_option("--items", ev_items, "Number of held-out clips")->check(CLI::PositiveNumber);
    cmd_ev->add_option("--out", ev_out, "Report directory")->required();
    cmd_ev->add_option("--write-audio", ev_audio, "Also write the first generated clip to this WAV");
    cmd_ev->add_flag("--force", ev.force, "Overwrite existing outputs");

    // verify-merge
    Common vm;
    std::string vm_adapter, vm_base, vm_bits;
    int64_t vm_probes = 16;
    auto* cmd_vm = app.add_subcommand("verify-merge", "Compare adapter-conditioned and merged forward passes");
    add_common(cmd_vm, vm);
    cmd_vm->add_option("--adapter", vm_adapter, "Adapter checkpoint directory")->required();
    cmd_vm->add_option("--base", vm_base, "Pretrained checkpoint directory")->required();
    cmd_vm->add_option("--watermark", vm_bits, "Bit string such as 10110010")->required();
    cmd_vm->add_option("--probes", vm_probes, "Number of random feature probes")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(ExitCode::kUsage);
    }

    try {
        torch::set_num_threads(1);
        if (*cmd_pre) {
            auto cfg = load_config(pre);
            if (pre_iters >= 0) cfg.pretrain_iterations = pre_iters;
            if (fs::exists(pre_out) && !pre.force)
                throw Error("refusing to overwrite existing '" + pre_out + "' (use --force)");
            const auto clips = training_clips(cfg);
            TrainingLog log;
            log.on_row = print_row;
            const auto ck = pretrain_base(cfg, clips, &log);
            write_checkpoint(pre_out, ck, pre.force);
            write_log(pre_log, log, pre.force);
            std::cout << "pretrained " << pre_out << " sha256 " << ck.content_hash() << '\n';
        } else if (*cmd_tr) {
            auto cfg = load_config(tr);
            if (tr_iters >= 0) cfg.max_iterations = tr_iters;
            if (!tr_wgopo.empty()) cfg.wgopo_enabled = tr_wgopo == "on";
            if (fs::exists(tr_out) && !tr.force)
                throw Error("refusing to overwrite existing '" + tr_out + "' (use --force)");
            const auto base = read_checkpoint(tr_base);
            const auto clips = training_clips(cfg);
            TrainingLog log;
            log.on_row = print_row;
            const auto ck = train_p2mark(cfg, clips, base, &log);
            write_checkpoint(tr_out, ck, tr.force);
            write_log(tr_log, log, tr.force);
            std::cout << "adapter " << tr_out << " sha256 " << ck.content_hash() << "  projections fired "
                      << ck.manifest.require("projections_fired") << '\n';
        } else if (*cmd_mi) {
            load_config(mi);
            const auto w = parse_bits(mi_bits);
            if (fs::exists(mi_out) && !mi.force)
                throw Error("refusing to overwrite existing '" + mi_out + "' (use --force)");
            const auto adapter = read_checkpoint(mi_adapter);
            const auto base = read_checkpoint(mi_base);
            const auto inst = mint_instance(adapter, base, w);
            const double gap = merge_gap(adapter, base, inst, 16, mi.seed);
            write_checkpoint(mi_out, inst, mi.force);
            std::cout << "watermark " << w.to_string() << '\n'
                      << "instance sha256 " << inst.content_hash() << '\n'
                      << "max merge diff " << std::scientific << gap << " over 16 probes\n";
        } else if (*cmd_ex) {
            load_config(ex);
            const auto adapter = read_checkpoint(ex_decoder);
            auto dec = load_decoder(adapter);
            const auto cfg = config_of(adapter);
            std::optional<Watermark> expected;
            if (!ex_expected.empty()) {
                expected = parse_bits(ex_expected);
                if (static_cast<int64_t>(expected->size()) != cfg.bits)
                    throw PayloadShapeError("--expected has " + std::to_string(expected->size()) +
                                            " bits, the decoder produces " + std::to_string(cfg.bits));
            }
            const auto wav = read_wav(ex_audio);
            auto x = mono_tensor(wav, ex_audio);
            if (wav.sample_rate != cfg.mel.sample_rate)
                throw IngestionError("'" + ex_audio + "' is " + std::to_string(wav.sample_rate) + " Hz, expected " +
                                     std::to_string(cfg.mel.sample_rate));
            const auto decoded = decode_watermark(mel_spectrogram(x, cfg.mel), *dec);
            std::cout << "bits " << decoded.bits.to_string() << "\nprobabilities";
            for (double p : decoded.probabilities) std::cout << ' ' << fixed4(p);
            std::cout << '\n';
            if (expected) std::cout << "ACC " << bit_accuracy(decoded.bits, *expected) << '\n';
        } else if (*cmd_at) {
            const auto cfg = load_config(at);
            if (fs::exists(at_out) && !at.force)
                throw Error("refusing to overwrite existing '" + at_out + "' (use --force)");
            const auto wav = read_wav(at_in);
            if (wav.channels != 1) throw IngestionError("'" + at_in + "' is not mono");
            const auto spec = AttackSpec::defaults(parse_attack(at_kind), cfg.seed);
            const auto out = apply_attack(wav.samples, wav.sample_rate, spec, CodecTool::discover(cfg.codec_binary));
            if (out.skipped) throw Error("attack '" + at_kind + "' skipped: " + out.note);
            write_wav(at_out, out.wave, wav.sample_rate);
            std::cout << at_kind << ' ' << spec.describe() << "  " << wav.samples.size() << " -> " << out.wave.size()
                      << " samples\n";
        } else if (*cmd_ev) {
            load_config(ev);
            const auto inst = read_checkpoint(ev_instance);
            const auto base = read_checkpoint(ev_base);
            const auto adapter = read_checkpoint(ev_decoder);
            auto dec = load_decoder(adapter);
            const auto cfg = config_of(inst);
            EvalOptions opts;
            opts.seed = ev.seed;
            opts.codec = CodecTool::discover(cfg.codec_binary);
            for (const auto& a : ev_attacks) {
                if (a == "all") {
                    opts.attacks = all_attacks();
                    break;
                }
                opts.attacks.push_back(parse_attack(a));
            }
            const auto clips = heldout_clips(cfg, ev_items);
            const auto report = evaluate_instance(inst, base, *dec, clips, opts);
            const auto stem = write_report(ev_out, report, ev.force);
            if (!ev_audio.empty()) {
                if (fs::exists(ev_audio) && !ev.force)
                    throw Error("refusing to overwrite existing '" + ev_audio + "' (use --force)");
                auto model = load_plain_model(inst);
                auto x = torch::tensor(clips.front(), torch::kFloat32);
                auto y = model.resynthesize(x).contiguous();
                write_wav(ev_audio, {y.data_ptr<float>(), static_cast<size_t>(y.numel())}, cfg.mel.sample_rate);
            }
            std::cout << report.summary() << "report " << stem.string() << ".*\n";
        } else if (*cmd_vm) {
            load_config(vm);
            const auto w = parse_bits(vm_bits);
            const auto adapter = read_checkpoint(vm_adapter);
            const auto base = read_checkpoint(vm_base);
            const auto inst = mint_instance(adapter, base, w);
            const double gap = merge_gap(adapter, base, inst, vm_probes, vm.seed);
            std::cout << "max merge diff " << std::scientific << gap << " over " << vm_probes << " probes\n";
            if (!(gap < 1e-5)) throw StructuralError("merged instance deviates from the adapted model");
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.exit_code());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::kIngestion);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
