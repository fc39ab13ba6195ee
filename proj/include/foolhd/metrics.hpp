#pragma once

#include "foolhd/dsp.hpp"

#include <vector>

namespace foolhd {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

// |{pred_adv != label}| / total
double success_rate_untargeted(const std::vector<int>& adv_predictions, const std::vector<int>& labels);

// |{pred_adv == target}| / total
double success_rate_targeted(const std::vector<int>& adv_predictions, const std::vector<int>& targets);

// Frame-wise clamped SNR in dB, averaged over frames. Clamp bounds follow
// common segmental-SNR practice.
constexpr double kSegSnrFloorDb = -10.0;
constexpr double kSegSnrCeilDb = 35.0;
double segmental_snr(const std::vector<double>& x, const std::vector<double>& x_adv, int frame_len,
                     int hop);

// RMS over frames/bins of 10*(log10 Px - log10 Padv), power floored at 1e-12.
double log_spectral_distance(const std::vector<double>& x, const std::vector<double>& x_adv,
                             int n_fft, int hop);

// Perceptual loss normalized by frame count, in [0, 2].
double mfcc_cosine_distance(const AudioClip& x, const AudioClip& x_adv);

struct MetricAggregate {
    double mean = 0.0;
    double stddev = 0.0;
    double median = 0.0;
};

MetricAggregate aggregate_metric(std::vector<double> values);

}  // namespace foolhd
