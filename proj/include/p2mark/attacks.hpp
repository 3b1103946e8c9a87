#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace p2mark {

enum class AttackKind {
    kNone,
    kPinkNoise,
    kWhiteNoise,
    kLowpass,
    kBandpass,
    kHighpass,
    kBoost,
    kDuck,
    kMp3,
    kAac,
    kResample,
    kEcho,
    kCrop,
};

std::string_view attack_name(AttackKind kind);
// Accepts the names produced by attack_name ("pink_noise", "crop", ...). Throws DomainError.
AttackKind parse_attack(std::string_view name);

// Every non-identity kind in report order.
const std::vector<AttackKind>& all_attacks();

// Parameters default to the standard robustness settings; only the fields relevant to
// `kind` are read.
struct AttackSpec {
    AttackKind kind = AttackKind::kNone;
    double noise_std = 0.0;
    double low_hz = 0.0;
    double high_hz = 0.0;
    double gain = 1.0;
    int64_t bitrate_kbps = 128;
    int64_t intermediate_rate = 44100;
    double delay_seconds = 0.5;
    double decay = 0.5;
    int filter_order = 5;
    uint64_t seed = 0;

    static AttackSpec defaults(AttackKind kind, uint64_t seed = 0);

    // Throws DomainError on out-of-range parameters for this kind at the given sample rate.
    void validate(int64_t sample_rate) const;

    // Compact "key=value;..." description of the parameters used by this kind.
    std::string describe() const;
};

struct AttackOutcome {
    std::vector<float> wave;
    bool skipped = false;
    std::string note;
};

// External encoder (ffmpeg-compatible command line) for the mp3/aac kinds. Empty -> skipped.
struct CodecTool {
    std::string binary;

    // P2MARK_CODEC_BIN from the environment, else `configured`.
    static CodecTool discover(const std::string& configured = {});
    bool available() const;
};

AttackOutcome apply_attack(std::span<const float> wave, int64_t sample_rate, const AttackSpec& spec,
                           const CodecTool& codec = CodecTool::discover());

struct BatteryRow {
    std::string name;
    std::string params;
    AttackOutcome outcome;
};

// Applies "None" followed by every kind in all_attacks(), each to the clean input.
std::vector<BatteryRow> attack_battery(std::span<const float> wave, int64_t sample_rate, uint64_t seed = 0,
                                       const CodecTool& codec = CodecTool::discover());

// Noise generators exposed for spectral checks.
std::vector<float> white_noise(size_t n, double std_dev, uint64_t seed);
std::vector<float> pink_noise(size_t n, double std_dev, uint64_t seed);

}  // namespace p2mark
