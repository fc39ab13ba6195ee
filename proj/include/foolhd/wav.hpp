#pragma once

#include "foolhd/dsp.hpp"

#include <cstdint>
#include <string>

namespace foolhd {

// Symmetric PCM16 mapping: /32768 on read, round-half-away on write.
int16_t quantize_sample(double x);
double dequantize_sample(int16_t q);

// Quantize-and-back, as a written-then-read sample would appear.
double roundtrip_sample(double x);

struct WavWriteStats {
    int64_t clamped = 0;  // samples outside [-1,1] clamped before quantization
};

AudioClip read_wav(const std::string& path);
WavWriteStats write_wav(const std::string& path, const AudioClip& clip);

}  // namespace foolhd
