#include "foolhd/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace foolhd {

int16_t quantize_sample(double x) {
    const double scaled = x * 32768.0;
    const double rounded = scaled >= 0.0 ? std::floor(scaled + 0.5) : std::ceil(scaled - 0.5);
    return static_cast<int16_t>(std::clamp(rounded, -32768.0, 32767.0));
}

double dequantize_sample(int16_t q) { return static_cast<double>(q) / 32768.0; }

double roundtrip_sample(double x) { return dequantize_sample(quantize_sample(x)); }

namespace {

uint32_t rd_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t rd_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
void wr_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(x & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 24) & 0xff);
}
void wr_u16(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(x & 0xff);
    v.push_back((x >> 8) & 0xff);
}

}  // namespace

AudioClip read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open WAV file: " + path);
    std::vector<uint8_t> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (data.size() < 44 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
        std::memcmp(data.data() + 8, "WAVE", 4) != 0) {
        throw std::runtime_error("malformed WAV header: " + path);
    }
    // walk chunks
    size_t pos = 12;
    int channels = 0, bits = 0, rate = 0, format = 0;
    const uint8_t* pcm = nullptr;
    uint32_t pcm_len = 0;
    while (pos + 8 <= data.size()) {
        const uint32_t sz = rd_u32(data.data() + pos + 4);
        if (std::memcmp(data.data() + pos, "fmt ", 4) == 0) {
            if (pos + 8 + 16 > data.size()) throw std::runtime_error("truncated fmt chunk: " + path);
            const uint8_t* p = data.data() + pos + 8;
            format = rd_u16(p);
            channels = rd_u16(p + 2);
            rate = static_cast<int>(rd_u32(p + 4));
            bits = rd_u16(p + 14);
        } else if (std::memcmp(data.data() + pos, "data", 4) == 0) {
            pcm = data.data() + pos + 8;
            pcm_len = sz;
        }
        pos += 8 + sz + (sz & 1);
    }
    if (!pcm) throw std::runtime_error("WAV file has no data chunk: " + path);
    if (format != 1) throw std::runtime_error("unsupported WAV encoding (need PCM): " + path);
    if (bits != 16) throw std::runtime_error("unsupported WAV bit depth (need 16): " + path);
    if (channels != 1) throw std::runtime_error("unsupported channel count (need mono): " + path);
    if (pcm + pcm_len > data.data() + data.size()) throw std::runtime_error("truncated WAV data: " + path);

    AudioClip clip;
    clip.sample_rate = rate;
    const uint32_t n = pcm_len / 2;
    clip.samples.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
        const int16_t q = static_cast<int16_t>(pcm[2 * i] | (pcm[2 * i + 1] << 8));
        clip.samples[i] = dequantize_sample(q);
    }
    return clip;
}

WavWriteStats write_wav(const std::string& path, const AudioClip& clip) {
    WavWriteStats stats;
    const uint32_t n = static_cast<uint32_t>(clip.samples.size());
    std::vector<uint8_t> out;
    out.reserve(44 + 2 * n);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    wr_u32(out, 36 + 2 * n);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    wr_u32(out, 16);
    wr_u16(out, 1);  // PCM
    wr_u16(out, 1);  // mono
    wr_u32(out, static_cast<uint32_t>(clip.sample_rate));
    wr_u32(out, static_cast<uint32_t>(clip.sample_rate) * 2);  // byte rate
    wr_u16(out, 2);   // block align
    wr_u16(out, 16);  // bits
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    wr_u32(out, 2 * n);
    for (double x : clip.samples) {
        if (x < -1.0 || x > 1.0) {
            ++stats.clamped;
            x = std::clamp(x, -1.0, 1.0);
        }
        const int16_t q = quantize_sample(x);
        out.push_back(static_cast<uint8_t>(q & 0xff));
        out.push_back(static_cast<uint8_t>((q >> 8) & 0xff));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open WAV file for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), out.size());
    if (!f) throw std::runtime_error("WAV write failed: " + path);
    return stats;
}

}  // namespace foolhd
