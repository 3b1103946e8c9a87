#include "p2mark/dataset.hpp"

#include "p2mark/dsp.hpp"
#include "p2mark/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace p2mark {

namespace {

void peak_normalize(Clip& clip) {
    float peak = 0.0F;
    for (float v : clip) peak = std::max(peak, std::abs(v));
    if (peak <= 0.0F) return;
    const float g = 0.95F / peak;
    for (float& v : clip) v *= g;
}

}  // namespace

std::vector<Clip> synthetic_corpus(int64_t clips, double seconds, int64_t sample_rate, uint64_t seed) {
    if (clips < 1 || !(seconds > 0.0) || sample_rate <= 0) throw DomainError("synthetic corpus: invalid shape");
    std::mt19937_64 engine(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto n = static_cast<size_t>(std::llround(seconds * static_cast<double>(sample_rate)));
    const double sr = static_cast<double>(sample_rate);
    const double band_limit = std::min(6000.0, 0.45 * sr);

    std::vector<Clip> out;
    out.reserve(static_cast<size_t>(clips));
    for (int64_t c = 0; c < clips; ++c) {
        std::vector<double> x(n, 0.0);
        const int tones = 1 + static_cast<int>(uni(engine) * 3.0);
        for (int t = 0; t < tones; ++t) {
            const double f0 = 90.0 + uni(engine) * 310.0;
            const double vib_rate = 3.0 + uni(engine) * 4.0;
            const double vib_depth = 0.01 * uni(engine);
            const double rolloff = 0.5 + uni(engine) * 1.5;
            const double amp = 0.3 + 0.7 * uni(engine);
            const double phase0 = 2.0 * std::numbers::pi * uni(engine);
            std::vector<double> weights;
            for (int h = 1; h * f0 * 1.02 < band_limit; ++h) weights.push_back(1.0 / std::pow(h, rolloff));
            double phase = phase0;
            for (size_t i = 0; i < n; ++i) {
                const double f = f0 * (1.0 + vib_depth * std::sin(2.0 * std::numbers::pi * vib_rate * i / sr));
                phase += 2.0 * std::numbers::pi * f / sr;
                // sin((h + 1) p) = 2 cos(p) sin(h p) - sin((h - 1) p)
                const double two_cos = 2.0 * std::cos(phase);
                double prev = 0.0, cur = std::sin(phase), v = 0.0;
                for (double w : weights) {
                    v += w * cur;
                    const double next = two_cos * cur - prev;
                    prev = cur;
                    cur = next;
                }
                x[i] += amp * v;
            }
        }
        // Low-passed noise with a random one-pole coefficient.
        const double pole = 0.3 + 0.65 * uni(engine);
        const double noise_gain = 0.05 + 0.25 * uni(engine);
        double state = 0.0;
        for (size_t i = 0; i < n; ++i) {
            state = pole * state + (1.0 - pole) * normal(engine);
            x[i] += noise_gain * state * 4.0;
        }
        // Slow envelope between 0.2 and 1.
        const double env_rate = 0.5 + 2.5 * uni(engine);
        const double env_phase = 2.0 * std::numbers::pi * uni(engine);
        Clip clip(n);
        for (size_t i = 0; i < n; ++i) {
            const double env = 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * env_rate * i / sr + env_phase);
            clip[i] = static_cast<float>(x[i] * env);
        }
        peak_normalize(clip);
        out.push_back(std::move(clip));
    }
    return out;
}

std::vector<fs::path> wav_files_in(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IngestionError("'" + dir.string() + "' is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<Clip> load_clips(const std::vector<fs::path>& paths, int64_t sample_rate) {
    if (paths.empty()) throw IngestionError("no audio files given");
    std::vector<Clip> clips;
    std::vector<std::string> offenders;
    for (const auto& p : paths) {
        try {
            auto wav = read_wav(p);
            if (wav.channels != 1) {
                offenders.push_back(p.string() + " (" + std::to_string(wav.channels) + " channels, expected mono)");
                continue;
            }
            if (wav.samples.empty()) {
                offenders.push_back(p.string() + " (no samples)");
                continue;
            }
            Clip clip = wav.sample_rate == sample_rate ? std::move(wav.samples)
                                                       : dsp::resample(wav.samples, wav.sample_rate, sample_rate);
            peak_normalize(clip);
            clips.push_back(std::move(clip));
        } catch (const Error& e) {
            offenders.push_back(p.string() + " (" + e.what() + ")");
        }
    }
    if (!offenders.empty()) {
        std::string msg = "cannot ingest " + std::to_string(offenders.size()) + " file(s):";
        for (const auto& o : offenders) msg += "\n  " + o;
        throw IngestionError(msg);
    }
    return clips;
}

Clip fit_segment(const Clip& clip, int64_t length, int64_t offset) {
    const auto n = static_cast<int64_t>(clip.size());
    if (n == 0) throw IngestionError("empty clip");
    Clip out(static_cast<size_t>(length));
    if (n >= length) {
        std::copy_n(clip.begin() + offset, length, out.begin());
        return out;
    }
    // Reflection without repeating the edge sample: period 2(n-1).
    const int64_t period = std::max<int64_t>(1, 2 * (n - 1));
    for (int64_t i = 0; i < length; ++i) {
        int64_t k = i % period;
        if (k >= n) k = period - k;
        out[static_cast<size_t>(i)] = clip[static_cast<size_t>(k)];
    }
    return out;
}

SegmentSampler::SegmentSampler(const std::vector<Clip>& clips, int64_t segment_length, uint64_t seed)
    : clips_(&clips), length_(segment_length), engine_(seed) {
    if (clips.empty()) throw IngestionError("dataset is empty");
    if (segment_length < 1) throw DomainError("segment length must be positive");
}

Clip SegmentSampler::next() {
    const auto& clips = *clips_;
    const auto idx = static_cast<size_t>(engine_() % clips.size());
    const auto n = static_cast<int64_t>(clips[idx].size());
    const int64_t span = n - length_;
    const int64_t offset = span > 0 ? static_cast<int64_t>(engine_() % static_cast<uint64_t>(span + 1)) : 0;
    return fit_segment(clips[idx], length_, offset);
}

torch::Tensor SegmentSampler::next_batch(int64_t batch) {
    auto out = torch::empty({batch, length_}, torch::kFloat32);
    for (int64_t b = 0; b < batch; ++b) {
        auto seg = next();
        std::copy(seg.begin(), seg.end(), out[b].data_ptr<float>());
    }
    return out;
}

std::vector<Clip> ingest_audio(const std::vector<fs::path>& paths, int64_t segment_length, int64_t sample_rate,
                               uint64_t seed) {
    auto clips = load_clips(paths, sample_rate);
    std::mt19937_64 engine(seed);
    std::vector<Clip> out;
    out.reserve(clips.size());
    for (const auto& c : clips) {
        const int64_t span = static_cast<int64_t>(c.size()) - segment_length;
        const int64_t offset = span > 0 ? static_cast<int64_t>(engine() % static_cast<uint64_t>(span + 1)) : 0;
        out.push_back(fit_segment(c, segment_length, offset));
    }
    return out;
}

}  // namespace p2mark
