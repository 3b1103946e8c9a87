#include "p2mark/io.hpp"

#include "p2mark/errors.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace p2mark {

namespace {

static_assert(std::endian::native == std::endian::little, "WAV and checkpoint I/O assume a little-endian host");

template <typename T>
T read_le(const std::string& buf, size_t offset) {
    if (offset + sizeof(T) > buf.size()) throw IngestionError("wav: truncated header");
    T v;
    std::memcpy(&v, buf.data() + offset, sizeof(T));
    return v;
}

template <typename T>
void put_le(std::string& buf, T v) {
    char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    buf.append(tmp, sizeof(T));
}

}  // namespace

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open '" + path.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), {});
}

WavData read_wav(const fs::path& path) {
    const std::string buf = read_file(path);
    const auto fail = [&](const std::string& why) { return IngestionError("wav '" + path.string() + "': " + why); };
    if (buf.size() < 12 || buf.compare(0, 4, "RIFF") != 0 || buf.compare(8, 4, "WAVE") != 0)
        throw fail("not a RIFF/WAVE file");

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    size_t data_offset = 0, data_size = 0;
    size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const std::string id = buf.substr(pos, 4);
        const auto size = read_le<uint32_t>(buf, pos + 4);
        const size_t body = pos + 8;
        if (id == "fmt ") {
            format = read_le<uint16_t>(buf, body);
            channels = read_le<uint16_t>(buf, body + 2);
            rate = read_le<uint32_t>(buf, body + 4);
            bits = read_le<uint16_t>(buf, body + 14);
            if (format == 0xFFFE && size >= 26) format = read_le<uint16_t>(buf, body + 24);
        } else if (id == "data") {
            data_offset = body;
            data_size = std::min<size_t>(size, buf.size() - body);
            break;
        }
        pos = body + size + (size & 1U);
    }
    if (data_offset == 0) throw fail("missing data chunk");
    if (channels == 0 || rate == 0) throw fail("missing or invalid fmt chunk");

    WavData out;
    out.sample_rate = rate;
    out.channels = channels;
    if (format == 1 && bits == 16) {
        const size_t n = data_size / 2;
        out.samples.resize(n);
        for (size_t i = 0; i < n; ++i)
            out.samples[i] = static_cast<float>(read_le<int16_t>(buf, data_offset + 2 * i)) / 32768.0F;
    } else if (format == 3 && bits == 32) {
        const size_t n = data_size / 4;
        out.samples.resize(n);
        std::memcpy(out.samples.data(), buf.data() + data_offset, n * 4);
    } else {
        throw fail("unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
                   " bits); expected 16-bit PCM or 32-bit float");
    }
    return out;
}

void write_wav(const fs::path& path, std::span<const float> mono, int64_t sample_rate, WavFormat format) {
    const bool pcm = format == WavFormat::kPcm16;
    const uint16_t bits = pcm ? 16 : 32;
    const uint32_t data_bytes = static_cast<uint32_t>(mono.size() * (bits / 8));
    std::string buf;
    buf.reserve(44 + data_bytes);
    buf += "RIFF";
    put_le<uint32_t>(buf, 36 + data_bytes);
    buf += "WAVEfmt ";
    put_le<uint32_t>(buf, 16);
    put_le<uint16_t>(buf, pcm ? 1 : 3);
    put_le<uint16_t>(buf, 1);
    put_le<uint32_t>(buf, static_cast<uint32_t>(sample_rate));
    put_le<uint32_t>(buf, static_cast<uint32_t>(sample_rate) * (bits / 8));
    put_le<uint16_t>(buf, bits / 8);
    put_le<uint16_t>(buf, bits);
    buf += "data";
    put_le<uint32_t>(buf, data_bytes);
    for (float v : mono) {
        if (pcm) {
            const float c = std::clamp(v, -1.0F, 1.0F);
            put_le<int16_t>(buf, static_cast<int16_t>(std::lround(c * 32767.0F)));
        } else {
            put_le<float>(buf, v);
        }
    }
    atomic_write_file(path, buf);
}

void atomic_write_file(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[md[i] >> 4]);
        out.push_back(kHex[md[i] & 0xF]);
    }
    return out;
}

}  // namespace p2mark
