#include "foolhd/dsp.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <map>
#include <mutex>

namespace foolhd {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {

constexpr double kPi = 3.14159265358979323846;

// N x 2N analysis matrix: row k is the sine-windowed MDCT basis function.
const RowMat& mdct_matrix(int frame_len) {
    static std::map<int, RowMat> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(frame_len);
    if (it != cache.end()) return it->second;
    const int N = frame_len / 2;
    RowMat M(N, frame_len);
    for (int k = 0; k < N; ++k) {
        for (int n = 0; n < frame_len; ++n) {
            const double w = std::sin(kPi / frame_len * (n + 0.5));
            M(k, n) = w * std::cos(kPi / N * (n + 0.5 + N / 2.0) * (k + 0.5));
        }
    }
    return cache.emplace(frame_len, std::move(M)).first->second;
}

int mdct_frames(int64_t n_samples, int N) {
    return static_cast<int>((n_samples + N - 1) / N) + 1;
}

}  // namespace

void MfccConfig::validate() const {
    if (n_ceps > n_mels) throw ContractViolation("MfccConfig: n_ceps must be <= n_mels");
    if (n_fft < win_len) throw ContractViolation("MfccConfig: n_fft must be >= window length");
    if (!(log_floor > 0.0)) throw ContractViolation("MfccConfig: log_floor must be positive");
    if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) {
        throw ContractViolation("MfccConfig: invalid mel band edges");
    }
}

MfccConfig MfccConfig::perceptual() {
    MfccConfig c;
    c.n_ceps = 29;
    c.n_mels = 30;
    c.include_log_energy = false;
    c.cmn_window = 0;
    c.vad = false;
    return c;
}

MfccConfig MfccConfig::classifier_frontend() {
    MfccConfig c;
    c.n_ceps = 29;
    c.n_mels = 30;
    c.include_log_energy = true;
    c.cmn_window = 300;
    c.vad = true;
    return c;
}

std::vector<int> VadMask::kept_rows() const {
    std::vector<int> rows;
    for (size_t i = 0; i < keep.size(); ++i)
        if (keep[i]) rows.push_back(static_cast<int>(i));
    return rows;
}

// ---- MDCT ------------------------------------------------------------------

MdctSpectrogram mdct(const AudioClip& clip, int frame_len) {
    if (frame_len <= 0 || frame_len % 2 != 0) {
        throw ContractViolation("mdct frame_len must be positive and even");
    }
    if (clip.samples.empty()) throw ContractViolation("mdct on empty clip");
    const int N = frame_len / 2;
    const int64_t D = clip.length();
    const int F = mdct_frames(D, N);
    // pad N zeros front; zero-extend tail so every frame fits
    std::vector<double> buf(static_cast<size_t>(F + 1) * N, 0.0);
    std::memcpy(buf.data() + N, clip.samples.data(), sizeof(double) * D);

    const RowMat& M = mdct_matrix(frame_len);
    MdctSpectrogram spec;
    spec.frames = F;
    spec.bins = N;
    spec.frame_len = frame_len;
    spec.source_len = D;
    spec.coeffs.resize(static_cast<size_t>(F) * N);
    RowMat frames(F, frame_len);
    for (int f = 0; f < F; ++f)
        for (int n = 0; n < frame_len; ++n) frames(f, n) = buf[static_cast<int64_t>(f) * N + n];
    MapMat S(spec.coeffs.data(), F, N);
    S.noalias() = frames * M.transpose();
    return spec;
}

AudioClip imdct(const MdctSpectrogram& spec) {
    const int N = spec.bins, F = spec.frames, frame_len = spec.frame_len;
    if (N != frame_len / 2) throw ContractViolation("imdct: bins != frame_len/2");
    const RowMat& M = mdct_matrix(frame_len);
    CMapMat S(spec.coeffs.data(), F, N);
    RowMat Y = (2.0 / N) * (S * M);  // F x 2N windowed frame contributions
    std::vector<double> buf(static_cast<size_t>(F + 1) * N, 0.0);
    for (int f = 0; f < F; ++f)
        for (int n = 0; n < frame_len; ++n) buf[static_cast<int64_t>(f) * N + n] += Y(f, n);
    AudioClip out;
    out.sample_rate = 8000;
    out.samples.assign(buf.begin() + N, buf.begin() + N + spec.source_len);
    return out;
}

TensorPtr imdct_op(Tape& tape, const TensorPtr& spec, int frame_len, int64_t source_len) {
    if (spec->ndim() != 2) throw ContractViolation("imdct_op expects frames x bins tensor");
    const int F = spec->shape[0], N = spec->shape[1];
    if (N != frame_len / 2) throw ContractViolation("imdct_op: bins != frame_len/2");
    const RowMat& M = mdct_matrix(frame_len);
    CMapMat S(spec->values.data(), F, N);
    RowMat Y = (2.0 / N) * (S * M);
    std::vector<double> buf(static_cast<size_t>(F + 1) * N, 0.0);
    for (int f = 0; f < F; ++f)
        for (int n = 0; n < frame_len; ++n) buf[static_cast<int64_t>(f) * N + n] += Y(f, n);
    std::vector<double> v(buf.begin() + N, buf.begin() + N + source_len);
    auto out = make_tensor({static_cast<int>(source_len)}, std::move(v), spec->requires_grad);
    if (!out->requires_grad) return out;
    tape.record(out, {spec}, [spec, out, F, N, frame_len, source_len, &M]() {
        spec->ensure_grad();
        std::vector<double> gbuf(static_cast<size_t>(F + 1) * N, 0.0);
        std::memcpy(gbuf.data() + N, out->grad.data(), sizeof(double) * source_len);
        RowMat Gf(F, frame_len);
        for (int f = 0; f < F; ++f)
            for (int n = 0; n < frame_len; ++n) Gf(f, n) = gbuf[static_cast<int64_t>(f) * N + n];
        MapMat dS(spec->grad.data(), F, N);
        dS.noalias() += (2.0 / N) * (Gf * M.transpose());
    });
    return out;
}

// ---- framing ---------------------------------------------------------------

int frame_count(int64_t n_samples, int win_len, int hop) {
    if (n_samples < win_len) {
        throw ContractViolation("clip shorter than one analysis window (" +
                                std::to_string(n_samples) + " < " + std::to_string(win_len) + ")");
    }
    return static_cast<int>(1 + (n_samples - win_len) / hop);
}

std::vector<double> frame_signal(const AudioClip& clip, int win_len, int hop) {
    const int T = frame_count(clip.length(), win_len, hop);
    std::vector<double> frames(static_cast<size_t>(T) * win_len);
    for (int t = 0; t < T; ++t)
        std::memcpy(frames.data() + static_cast<int64_t>(t) * win_len,
                    clip.samples.data() + static_cast<int64_t>(t) * hop, sizeof(double) * win_len);
    return frames;
}

TensorPtr frame_op(Tape& tape, const TensorPtr& waveform, int win_len, int hop) {
    if (waveform->ndim() != 1) throw ContractViolation("frame_op expects a 1-D waveform");
    const int T = frame_count(waveform->numel(), win_len, hop);
    std::vector<double> v(static_cast<size_t>(T) * win_len);
    for (int t = 0; t < T; ++t)
        std::memcpy(v.data() + static_cast<int64_t>(t) * win_len,
                    waveform->values.data() + static_cast<int64_t>(t) * hop, sizeof(double) * win_len);
    auto out = make_tensor({T, win_len}, std::move(v), waveform->requires_grad);
    if (!out->requires_grad) return out;
    tape.record(out, {waveform}, [waveform, out, T, win_len, hop]() {
        waveform->ensure_grad();
        for (int t = 0; t < T; ++t)
            for (int i = 0; i < win_len; ++i)
                waveform->grad[static_cast<int64_t>(t) * hop + i] +=
                    out->grad[static_cast<int64_t>(t) * win_len + i];
    });
    return out;
}

// ---- fixed transform matrices ----------------------------------------------

std::pair<std::vector<double>, std::vector<double>> dft_power_matrices(int n_fft) {
    if (n_fft < 2) throw ContractViolation("dft_power_matrices: n_fft must be >= 2");
    const int nb = n_fft / 2 + 1;
    std::vector<double> C(static_cast<size_t>(nb) * n_fft), S(C.size());
    for (int k = 0; k < nb; ++k) {
        for (int n = 0; n < n_fft; ++n) {
            const double a = 2.0 * kPi * k * n / n_fft;
            C[static_cast<int64_t>(k) * n_fft + n] = std::cos(a);
            S[static_cast<int64_t>(k) * n_fft + n] = -std::sin(a);
        }
    }
    return {std::move(C), std::move(S)};
}

static double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
static double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(int n_mels, int /*sample_rate*/, double f_min, double f_max) {
    const double m_lo = hz_to_mel(f_min), m_hi = hz_to_mel(f_max);
    std::vector<double> centers(n_mels);
    for (int i = 0; i < n_mels; ++i)
        centers[i] = mel_to_hz(m_lo + (m_hi - m_lo) * (i + 1) / (n_mels + 1));
    return centers;
}

std::vector<double> mel_filterbank(int n_mels, int n_fft, int sample_rate, double f_min, double f_max) {
    if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) {
        throw ContractViolation("mel_filterbank: invalid band edges");
    }
    const int nb = n_fft / 2 + 1;
    const double m_lo = hz_to_mel(f_min), m_hi = hz_to_mel(f_max);
    std::vector<double> edges(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * i / (n_mels + 1));
    std::vector<double> fb(static_cast<size_t>(n_mels) * nb, 0.0);
    for (int i = 0; i < n_mels; ++i) {
        const double lo = edges[i], c = edges[i + 1], hi = edges[i + 2];
        for (int k = 0; k < nb; ++k) {
            const double f = static_cast<double>(k) * sample_rate / n_fft;
            double w = 0.0;
            if (f > lo && f < c) w = (f - lo) / (c - lo);
            else if (f == c) w = 1.0;
            else if (f > c && f < hi) w = (hi - f) / (hi - c);
            fb[static_cast<int64_t>(i) * nb + k] = w;
        }
    }
    return fb;
}

std::vector<double> hamming_window(int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * i / (n - 1));
    return w;
}

std::vector<double> dct2_matrix(int n_out, int n_in) {
    std::vector<double> D(static_cast<size_t>(n_out) * n_in);
    for (int k = 0; k < n_out; ++k) {
        const double s = (k == 0) ? std::sqrt(1.0 / n_in) : std::sqrt(2.0 / n_in);
        for (int n = 0; n < n_in; ++n)
            D[static_cast<int64_t>(k) * n_in + n] = s * std::cos(kPi * k * (n + 0.5) / n_in);
    }
    return D;
}

// ---- VAD -------------------------------------------------------------------

VadMask energy_vad_mask(const AudioClip& clip, const MfccConfig& cfg) {
    const int T = frame_count(clip.length(), cfg.win_len, cfg.hop);
    std::vector<double> frames = frame_signal(clip, cfg.win_len, cfg.hop);
    std::vector<double> log_e(T);
    double mean = 0.0;
    for (int t = 0; t < T; ++t) {
        double e = 0.0;
        for (int i = 0; i < cfg.win_len; ++i) {
            const double x = frames[static_cast<int64_t>(t) * cfg.win_len + i];
            e += x * x;
        }
        log_e[t] = std::log(std::max(e, cfg.log_floor));
        mean += log_e[t];
    }
    mean /= T;
    VadMask mask;
    mask.keep.resize(T);
    int kept = 0;
    for (int t = 0; t < T; ++t) {
        // a frame at the energy floor is silent regardless of the relative
        // rule (the mean of identical values can round a hair below them)
        const bool floored = log_e[t] <= std::log(cfg.log_floor);
        mask.keep[t] = !floored && log_e[t] > mean + cfg.vad_threshold_offset;
        kept += mask.keep[t];
    }
    mask.all_silent = (kept == 0);
    return mask;
}

// ---- MFCC ------------------------------------------------------------------

namespace {

struct MfccConstants {
    TensorPtr window;    // 1 x win_len
    TensorPtr dft_cos;   // win_len x nb (transposed, zero-pad folded in)
    TensorPtr dft_sin;
    TensorPtr mel_t;     // nb x n_mels
    TensorPtr dct_t;     // n_mels x n_ceps
};

const MfccConstants& mfcc_constants(const MfccConfig& cfg) {
    using Key = std::tuple<int, int, int, int, int, double, double>;
    static std::map<Key, MfccConstants> cache;
    static std::mutex mu;
    Key key{cfg.win_len, cfg.n_fft, cfg.n_mels, cfg.n_ceps, cfg.sample_rate, cfg.f_min, cfg.f_max};
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    MfccConstants c;
    c.window = make_constant({1, cfg.win_len}, hamming_window(cfg.win_len));
    const int nb = cfg.n_fft / 2 + 1;
    auto [C, S] = dft_power_matrices(cfg.n_fft);
    std::vector<double> Ct(static_cast<size_t>(cfg.win_len) * nb), St(Ct.size());
    for (int n = 0; n < cfg.win_len; ++n) {
        for (int k = 0; k < nb; ++k) {
            Ct[static_cast<int64_t>(n) * nb + k] = C[static_cast<int64_t>(k) * cfg.n_fft + n];
            St[static_cast<int64_t>(n) * nb + k] = S[static_cast<int64_t>(k) * cfg.n_fft + n];
        }
    }
    c.dft_cos = make_constant({cfg.win_len, nb}, std::move(Ct));
    c.dft_sin = make_constant({cfg.win_len, nb}, std::move(St));
    auto mel = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.f_min, cfg.f_max);
    std::vector<double> mel_t(static_cast<size_t>(nb) * cfg.n_mels);
    for (int i = 0; i < cfg.n_mels; ++i)
        for (int k = 0; k < nb; ++k)
            mel_t[static_cast<int64_t>(k) * cfg.n_mels + i] = mel[static_cast<int64_t>(i) * nb + k];
    c.mel_t = make_constant({nb, cfg.n_mels}, std::move(mel_t));
    auto dct = dct2_matrix(cfg.n_ceps, cfg.n_mels);
    std::vector<double> dct_t(static_cast<size_t>(cfg.n_mels) * cfg.n_ceps);
    for (int k = 0; k < cfg.n_ceps; ++k)
        for (int n = 0; n < cfg.n_mels; ++n)
            dct_t[static_cast<int64_t>(n) * cfg.n_ceps + k] = dct[static_cast<int64_t>(k) * cfg.n_mels + n];
    c.dct_t = make_constant({cfg.n_mels, cfg.n_ceps}, std::move(dct_t));
    return cache.emplace(key, std::move(c)).first->second;
}

}  // namespace

TensorPtr mfcc_op(Tape& tape, const TensorPtr& waveform, const MfccConfig& cfg,
                  const VadMask* frozen_vad) {
    cfg.validate();
    const MfccConstants& k = mfcc_constants(cfg);
    auto frames = frame_op(tape, waveform, cfg.win_len, cfg.hop);  // T x win
    auto windowed = ops::mul(tape, frames, k.window);
    auto re = ops::matmul(tape, windowed, k.dft_cos);
    auto im = ops::matmul(tape, windowed, k.dft_sin);
    auto power = ops::add(tape, ops::square(tape, re), ops::square(tape, im));
    auto mel_e = ops::matmul(tape, power, k.mel_t);
    auto log_mel = ops::log(tape, ops::clamp_min(tape, mel_e, cfg.log_floor));
    auto ceps = ops::matmul(tape, log_mel, k.dct_t);  // T x n_ceps
    TensorPtr feats = ceps;
    if (cfg.include_log_energy) {
        auto energy = ops::reduce_sum(tape, ops::square(tape, frames), 1);  // [T]
        auto log_e = ops::log(tape, ops::clamp_min(tape, energy, cfg.log_floor));
        auto col = ops::reshape(tape, log_e, {frames->shape[0], 1});
        feats = ops::concat(tape, ceps, col, 1);
    }
    if (cfg.cmn_window > 0) feats = sliding_cmn_op(tape, feats, cfg.cmn_window);
    if (frozen_vad) {
        if (!frozen_vad->all_silent) feats = ops::gather_rows(tape, feats, frozen_vad->kept_rows());
    } else if (cfg.vad) {
        AudioClip tmp{waveform->values, cfg.sample_rate};
        VadMask mask = energy_vad_mask(tmp, cfg);
        if (!mask.all_silent) feats = ops::gather_rows(tape, feats, mask.kept_rows());
    }
    return feats;
}

FeatureMatrix mfcc(const AudioClip& clip, const MfccConfig& cfg) {
    Tape tape;
    auto wav = make_constant({static_cast<int>(clip.length())}, clip.samples);
    auto feats = mfcc_op(tape, wav, cfg);
    FeatureMatrix fm;
    fm.T = feats->shape[0];
    fm.F = feats->shape[1];
    fm.values = feats->values;
    return fm;
}

// ---- sliding CMN -----------------------------------------------------------

namespace {

// Window of `w` frames around t, shifted (not shrunk) at the edges.
inline void cmn_window_bounds(int t, int T, int w, int& lo, int& hi) {
    lo = t - w / 2;
    if (lo < 0) lo = 0;
    if (lo > T - w) lo = std::max(0, T - w);
    hi = std::min(T, lo + w);
}

}  // namespace

FeatureMatrix sliding_cmn(const FeatureMatrix& features, int window_frames) {
    Tape tape;
    auto x = make_constant({features.T, features.F}, features.values);
    auto y = sliding_cmn_op(tape, x, window_frames);
    return FeatureMatrix{y->values, features.T, features.F};
}

TensorPtr sliding_cmn_op(Tape& tape, const TensorPtr& features, int window_frames) {
    if (window_frames < 1) throw ContractViolation("sliding_cmn window must be >= 1");
    if (features->ndim() != 2) throw ContractViolation("sliding_cmn expects T x F features");
    const int T = features->shape[0], F = features->shape[1];
    // prefix sums per column
    std::vector<double> prefix(static_cast<size_t>(T + 1) * F, 0.0);
    for (int t = 0; t < T; ++t)
        for (int f = 0; f < F; ++f)
            prefix[static_cast<int64_t>(t + 1) * F + f] =
                prefix[static_cast<int64_t>(t) * F + f] + features->values[static_cast<int64_t>(t) * F + f];
    std::vector<double> v(features->values.size());
    for (int t = 0; t < T; ++t) {
        int lo, hi;
        cmn_window_bounds(t, T, window_frames, lo, hi);
        const double inv = 1.0 / (hi - lo);
        for (int f = 0; f < F; ++f) {
            const double m = (prefix[static_cast<int64_t>(hi) * F + f] -
                              prefix[static_cast<int64_t>(lo) * F + f]) * inv;
            v[static_cast<int64_t>(t) * F + f] = features->values[static_cast<int64_t>(t) * F + f] - m;
        }
    }
    auto out = make_tensor(features->shape, std::move(v), features->requires_grad);
    if (!out->requires_grad) return out;
    tape.record(out, {features}, [features, out, T, F, window_frames]() {
        features->ensure_grad();
        for (int t = 0; t < T; ++t) {
            int lo, hi;
            cmn_window_bounds(t, T, window_frames, lo, hi);
            const double inv = 1.0 / (hi - lo);
            for (int f = 0; f < F; ++f) {
                const double g = out->grad[static_cast<int64_t>(t) * F + f];
                features->grad[static_cast<int64_t>(t) * F + f] += g;
                for (int u = lo; u < hi; ++u)
                    features->grad[static_cast<int64_t>(u) * F + f] -= g * inv;
            }
        }
    });
    return out;
}

}  // namespace foolhd
