#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace p2mark {

namespace fs = std::filesystem;

struct WavData {
    int64_t sample_rate = 0;
    int64_t channels = 0;
    std::vector<float> samples;  // interleaved
};

enum class WavFormat { kPcm16, kFloat32 };

// Reads 16-bit PCM or 32-bit float WAV. Throws IngestionError on anything else.
WavData read_wav(const fs::path& path);

void write_wav(const fs::path& path, std::span<const float> mono, int64_t sample_rate,
               WavFormat format = WavFormat::kFloat32);

// Writes to a sibling temporary file, then renames it over `path`.
void atomic_write_file(const fs::path& path, std::string_view bytes);

std::string read_file(const fs::path& path);

std::string sha256_hex(std::string_view bytes);

}  // namespace p2mark
