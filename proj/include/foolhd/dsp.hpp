#pragma once

#include "foolhd/tensor.hpp"

#include <utility>
#include <vector>

namespace foolhd {

/// Mono waveform, samples nominally in [-1, 1].
struct AudioClip {
    std::vector<double> samples;
    int sample_rate = 8000;

    int64_t length() const { return static_cast<int64_t>(samples.size()); }
};

/// Real-valued lapped-transform spectrogram: frames x bins, 50% overlap,
/// sine window. bins == frame_len/2.
struct MdctSpectrogram {
    std::vector<double> coeffs;  // frames * bins, row-major
    int frames = 0;
    int bins = 0;
    int frame_len = 0;
    int64_t source_len = 0;  // original sample count, for inversion
    // pre-normalization statistics, filled by normalize_spectrogram
    double origin_mean = 0.0;
    double origin_std = 1.0;
    bool has_stats = false;

    double& at(int f, int b) { return coeffs[static_cast<int64_t>(f) * bins + b]; }
    double at(int f, int b) const { return coeffs[static_cast<int64_t>(f) * bins + b]; }
};

struct MfccConfig {
    int sample_rate = 8000;
    int win_len = 200;  // 25 ms at 8 kHz
    int hop = 80;       // 10 ms
    int n_fft = 256;
    int n_mels = 30;
    int n_ceps = 29;
    bool include_log_energy = false;
    double log_floor = 1e-8;
    int cmn_window = 0;  // frames; 0 = off
    bool vad = false;
    double vad_threshold_offset = 0.0;
    double f_min = 20.0;
    double f_max = 4000.0;

    void validate() const;

    // 29 cepstra, no energy, no CMN, no VAD: the perceptual-loss front end.
    static MfccConfig perceptual();
    // 29 cepstra + log-energy, sliding CMN over 300 frames, energy VAD:
    // the classifier front end.
    static MfccConfig classifier_frontend();
};

struct FeatureMatrix {
    std::vector<double> values;  // T * F, row-major
    int T = 0;
    int F = 0;

    double at(int t, int f) const { return values[static_cast<int64_t>(t) * F + f]; }
};

struct VadMask {
    std::vector<bool> keep;  // per frame
    bool all_silent = false;

    std::vector<int> kept_rows() const;
};

// ---- MDCT ------------------------------------------------------------------

MdctSpectrogram mdct(const AudioClip& clip, int frame_len);
AudioClip imdct(const MdctSpectrogram& spec);

// Differentiable synthesis: frames x bins tensor -> waveform tensor of
// source_len samples. Adjoint of the analysis used by mdct().
TensorPtr imdct_op(Tape& tape, const TensorPtr& spec, int frame_len, int64_t source_len);

// ---- framing / MFCC --------------------------------------------------------

// T = 1 + floor((D - win_len)/hop) frames, no padding.
int frame_count(int64_t n_samples, int win_len, int hop);
std::vector<double> frame_signal(const AudioClip& clip, int win_len, int hop);  // T x win_len
TensorPtr frame_op(Tape& tape, const TensorPtr& waveform, int win_len, int hop);

// Real DFT as two fixed matrices C,S of shape (n_fft/2+1) x n_fft with
// power[k] = (C f)^2[k] + (S f)^2[k].
std::pair<std::vector<double>, std::vector<double>> dft_power_matrices(int n_fft);

// Triangular mel filters, n_mels x (n_fft/2+1), centers uniform in mel.
std::vector<double> mel_filterbank(int n_mels, int n_fft, int sample_rate, double f_min, double f_max);

// Center frequencies (Hz) of the filters, for tests.
std::vector<double> mel_center_frequencies(int n_mels, int sample_rate, double f_min, double f_max);

std::vector<double> hamming_window(int n);
std::vector<double> dct2_matrix(int n_out, int n_in);  // orthonormal DCT-II, n_out x n_in

VadMask energy_vad_mask(const AudioClip& clip, const MfccConfig& cfg);

// Full differentiable MFCC path. If `frozen_vad` is non-null it is used for
// frame selection instead of computing a mask (cfg.vad is then ignored).
TensorPtr mfcc_op(Tape& tape, const TensorPtr& waveform, const MfccConfig& cfg,
                  const VadMask* frozen_vad = nullptr);

FeatureMatrix mfcc(const AudioClip& clip, const MfccConfig& cfg);

FeatureMatrix sliding_cmn(const FeatureMatrix& features, int window_frames);
TensorPtr sliding_cmn_op(Tape& tape, const TensorPtr& features, int window_frames);

}  // namespace foolhd
