#include "foolhd/metrics.hpp"

#include "foolhd/losses.hpp"

#include <algorithm>
#include <cmath>

namespace foolhd {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.empty() || predictions.size() != labels.size()) {
        throw ContractViolation("accuracy: empty or mismatched inputs");
    }
    int correct = 0;
    for (size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == labels[i];
    return static_cast<double>(correct) / predictions.size();
}

double success_rate_untargeted(const std::vector<int>& adv_predictions, const std::vector<int>& labels) {
    if (adv_predictions.empty() || adv_predictions.size() != labels.size()) {
        throw ContractViolation("success_rate_untargeted: empty or mismatched inputs");
    }
    int fooled = 0;
    for (size_t i = 0; i < adv_predictions.size(); ++i) fooled += adv_predictions[i] != labels[i];
    return static_cast<double>(fooled) / adv_predictions.size();
}

double success_rate_targeted(const std::vector<int>& adv_predictions, const std::vector<int>& targets) {
    if (adv_predictions.empty() || adv_predictions.size() != targets.size()) {
        throw ContractViolation("success_rate_targeted: empty or missing targets");
    }
    int hit = 0;
    for (size_t i = 0; i < adv_predictions.size(); ++i) hit += adv_predictions[i] == targets[i];
    return static_cast<double>(hit) / adv_predictions.size();
}

double segmental_snr(const std::vector<double>& x, const std::vector<double>& x_adv, int frame_len,
                     int hop) {
    if (x.size() != x_adv.size()) throw ContractViolation("segmental_snr length mismatch");
    if (static_cast<int64_t>(x.size()) < frame_len) throw ContractViolation("segmental_snr: no full frame");
    const int T = 1 + static_cast<int>((x.size() - frame_len) / hop);
    double acc = 0.0;
    for (int t = 0; t < T; ++t) {
        double ps = 0.0, pn = 0.0;
        for (int i = 0; i < frame_len; ++i) {
            const double s = x[static_cast<int64_t>(t) * hop + i];
            const double d = s - x_adv[static_cast<int64_t>(t) * hop + i];
            ps += s * s;
            pn += d * d;
        }
        const double db = 10.0 * std::log10(ps / std::max(pn, 1e-12));
        acc += std::clamp(db, kSegSnrFloorDb, kSegSnrCeilDb);
    }
    return acc / T;
}

double log_spectral_distance(const std::vector<double>& x, const std::vector<double>& x_adv,
                             int n_fft, int hop) {
    if (x.size() != x_adv.size()) throw ContractViolation("log_spectral_distance length mismatch");
    AudioClip a{x, 8000}, b{x_adv, 8000};
    const int T = frame_count(x.size(), n_fft, hop);
    auto fa = frame_signal(a, n_fft, hop);
    auto fb = frame_signal(b, n_fft, hop);
    auto [C, S] = dft_power_matrices(n_fft);
    const int nb = n_fft / 2 + 1;
    double acc = 0.0;
    int64_t count = 0;
    for (int t = 0; t < T; ++t) {
        for (int k = 0; k < nb; ++k) {
            double re_a = 0, im_a = 0, re_b = 0, im_b = 0;
            for (int n = 0; n < n_fft; ++n) {
                const double c = C[static_cast<int64_t>(k) * n_fft + n];
                const double s = S[static_cast<int64_t>(k) * n_fft + n];
                re_a += c * fa[static_cast<int64_t>(t) * n_fft + n];
                im_a += s * fa[static_cast<int64_t>(t) * n_fft + n];
                re_b += c * fb[static_cast<int64_t>(t) * n_fft + n];
                im_b += s * fb[static_cast<int64_t>(t) * n_fft + n];
            }
            const double pa = std::max(re_a * re_a + im_a * im_a, 1e-12);
            const double pb = std::max(re_b * re_b + im_b * im_b, 1e-12);
            const double d = 10.0 * (std::log10(pa) - std::log10(pb));
            acc += d * d;
            ++count;
        }
    }
    return std::sqrt(acc / count);
}

double mfcc_cosine_distance(const AudioClip& x, const AudioClip& x_adv) {
    const MfccConfig cfg = MfccConfig::perceptual();
    FeatureMatrix fx = mfcc(x, cfg);
    FeatureMatrix fa = mfcc(x_adv, cfg);
    const double lp = perceptual_loss(fx.values, fa.values, fx.T, fx.F);
    return lp / fx.T;
}

MetricAggregate aggregate_metric(std::vector<double> values) {
    MetricAggregate agg;
    if (values.empty()) return agg;
    double sum = 0;
    for (double v : values) sum += v;
    agg.mean = sum / values.size();
    double var = 0;
    for (double v : values) var += (v - agg.mean) * (v - agg.mean);
    agg.stddev = std::sqrt(var / values.size());
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    agg.median = (n % 2 == 1) ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    return agg;
}

}  // namespace foolhd
