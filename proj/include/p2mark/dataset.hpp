#pragma once

#include "p2mark/io.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <vector>

namespace p2mark {

using Clip = std::vector<float>;

// Deterministic desk-scale corpus: each clip mixes one to three harmonic tones (random
// fundamentals, vibrato and decaying partials below 6 kHz) with low-passed noise under a slow
// amplitude envelope, then is peak-normalized to 0.95.
std::vector<Clip> synthetic_corpus(int64_t clips, double seconds, int64_t sample_rate, uint64_t seed);

// Loads mono 16-bit PCM or float WAV files, resampling to `sample_rate` when needed and
// peak-normalizing each clip to 0.95. Unreadable or multi-channel files are collected and
// reported together in one IngestionError.
std::vector<Clip> load_clips(const std::vector<fs::path>& paths, int64_t sample_rate);

// All *.wav files in a directory, sorted by name.
std::vector<fs::path> wav_files_in(const fs::path& dir);

// Exactly `length` samples from `clip`: a crop at `offset` for longer clips, whole-clip
// reflection padding for shorter ones.
Clip fit_segment(const Clip& clip, int64_t length, int64_t offset);

// Seeded random crops: the same (clips, length, seed) yields the same segment sequence.
class SegmentSampler {
public:
    SegmentSampler(const std::vector<Clip>& clips, int64_t segment_length, uint64_t seed);

    // (batch, segment_length) float tensor.
    torch::Tensor next_batch(int64_t batch);
    Clip next();

private:
    const std::vector<Clip>* clips_;
    int64_t length_;
    std::mt19937_64 engine_;
};

// One random segment per file, in path order.
std::vector<Clip> ingest_audio(const std::vector<fs::path>& paths, int64_t segment_length, int64_t sample_rate,
                               uint64_t seed);

}  // namespace p2mark
