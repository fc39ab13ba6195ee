#include "foolhd/harness.hpp"
#include "foolhd/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace foolhd {

int CorpusManifest::n_speakers() const {
    int n = 0;
    for (const auto& e : entries) n = std::max(n, e.speaker + 1);
    return n;
}

std::vector<int> CorpusManifest::indices_for_split(const std::string& split) const {
    std::vector<int> idx;
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].split == split) idx.push_back(static_cast<int>(i));
    return idx;
}

std::string CorpusManifest::clip_path(int index) const {
    return (fs::path(root) / entries[index].path).string();
}

namespace {

constexpr int kClipSamples = 32000;  // 4 s at 8 kHz
constexpr int kRate = 8000;

struct SpeakerVoice {
    double f0;
    double formants[3];
    double radii[3];
};

// Fixed per-speaker voice: pitch and three resonator center frequencies drawn
// from disjoint per-speaker ranges so speakers are separable by construction.
SpeakerVoice speaker_voice(int s) {
    SpeakerVoice v;
    v.f0 = 85.0 + 14.0 * s;
    v.formants[0] = 280.0 + 55.0 * s;
    v.formants[1] = 1050.0 + 95.0 * s;
    v.formants[2] = 2300.0 + 125.0 * s;
    v.radii[0] = 0.965;
    v.radii[1] = 0.955;
    v.radii[2] = 0.945;
    return v;
}

// Two-pole resonator applied in place.
void resonate(std::vector<double>& x, double freq_hz, double r) {
    const double theta = 2.0 * M_PI * freq_hz / kRate;
    const double a1 = 2.0 * r * std::cos(theta);
    const double a2 = -r * r;
    const double gain = (1.0 - r);  // keeps the peak response bounded
    double y1 = 0.0, y2 = 0.0;
    for (double& xi : x) {
        const double y = gain * xi + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        xi = y;
    }
}

// Phrase-like on/off amplitude envelope: voiced bursts with raised-cosine
// edges separated by short gaps.
std::vector<double> phrase_envelope(std::mt19937_64& rng) {
    std::vector<double> env(kClipSamples, 0.0);
    std::uniform_real_distribution<double> seg_len(0.25, 0.50);
    std::uniform_real_distribution<double> gap_len(0.06, 0.15);
    std::uniform_real_distribution<double> level(0.6, 1.0);
    const int ramp = kRate / 50;  // 20 ms
    int pos = static_cast<int>(gap_len(rng) * kRate);
    while (pos < kClipSamples) {
        const int len = static_cast<int>(seg_len(rng) * kRate);
        const double a = level(rng);
        for (int i = 0; i < len && pos + i < kClipSamples; ++i) {
            double w = 1.0;
            if (i < ramp) w = 0.5 - 0.5 * std::cos(M_PI * i / ramp);
            else if (i > len - ramp) w = 0.5 - 0.5 * std::cos(M_PI * (len - i) / ramp);
            env[pos + i] = a * w;
        }
        pos += len + static_cast<int>(gap_len(rng) * kRate);
    }
    return env;
}

AudioClip synthesize_clip(const SpeakerVoice& v, std::mt19937_64& rng, double peak_level) {
    std::vector<double> x(kClipSamples, 0.0);
    // glottal-like pulse train with mild period jitter
    std::uniform_real_distribution<double> jitter(-0.02, 0.02);
    double t = 0.0;
    while (t < kClipSamples) {
        const int n = static_cast<int>(t);
        if (n < kClipSamples) x[n] = 1.0;
        t += kRate / v.f0 * (1.0 + jitter(rng));
    }
    // low-level aspiration noise
    std::normal_distribution<double> noise(0.0, 0.02);
    for (double& xi : x) xi += noise(rng);
    // formant structure: three parallel resonator branches
    std::vector<double> out(kClipSamples, 0.0);
    for (int b = 0; b < 3; ++b) {
        std::vector<double> branch = x;
        resonate(branch, v.formants[b], v.radii[b]);
        const double w = b == 0 ? 1.0 : (b == 1 ? 0.7 : 0.45);
        for (int i = 0; i < kClipSamples; ++i) out[i] += w * branch[i];
    }
    const auto env = phrase_envelope(rng);
    double peak = 1e-12;
    for (int i = 0; i < kClipSamples; ++i) {
        out[i] *= env[i];
        peak = std::max(peak, std::abs(out[i]));
    }
    const double scale = peak_level / peak;
    for (double& o : out) o *= scale;
    return AudioClip{std::move(out), kRate};
}

// Per-clip recording level. Most clips are quiet, a fixed minority loud, in
// both splits. The spread is deliberate: a fixed-epsilon sign attack injects
// the same absolute noise at every level — relatively heavy on quiet clips,
// light on loud ones — whereas level-adaptive attacks and the classifier
// front end (log-mel + cepstral mean normalization) track the signal. Quiet
// clips still sit ~250x above the PCM16 quantization floor.
constexpr double kQuietPeak = 0.008;
constexpr double kLoudPeak = 0.35;

double clip_peak_level(int clip_index) {
    const int slot = clip_index % 10;
    return (slot == 3 || slot == 4) ? kLoudPeak : kQuietPeak;
}

}  // namespace

CorpusManifest synthesize_toy_corpus(const std::string& out_dir, int n_speakers,
                                     int train_per_speaker, int test_per_speaker, uint64_t seed) {
    if (n_speakers < 2) throw ContractViolation("synthesize_toy_corpus requires >= 2 speakers");
    if (train_per_speaker < 1 || test_per_speaker < 1)
        throw ContractViolation("synthesize_toy_corpus requires >= 1 clip per split");
    fs::create_directories(out_dir);

    CorpusManifest manifest;
    manifest.root = out_dir;
    for (int s = 0; s < n_speakers; ++s) {
        const SpeakerVoice voice = speaker_voice(s);
        const int total = train_per_speaker + test_per_speaker;
        for (int c = 0; c < total; ++c) {
            // independent per-clip stream: reruns and partial regeneration match
            std::mt19937_64 rng(seed * 1000003ull + static_cast<uint64_t>(s) * 4096ull + c);
            AudioClip clip = synthesize_clip(voice, rng, clip_peak_level(c));
            char name[64];
            std::snprintf(name, sizeof(name), "spk%02d_clip%03d.wav", s, c);
            write_wav((fs::path(out_dir) / name).string(), clip);
            ManifestEntry e;
            e.path = name;
            e.speaker = s;
            e.split = c < train_per_speaker ? "train" : "test";
            e.duration_s = static_cast<double>(kClipSamples) / kRate;
            e.sample_rate = kRate;
            manifest.entries.push_back(e);
        }
    }
    save_manifest(manifest);
    return manifest;
}

void save_manifest(const CorpusManifest& manifest) {
    std::ofstream f(fs::path(manifest.root) / "manifest.tsv");
    if (!f) throw std::runtime_error("cannot write manifest in " + manifest.root);
    f << "path\tspeaker\tsplit\tduration_s\tsample_rate\n";
    for (const auto& e : manifest.entries) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", e.duration_s);
        f << e.path << '\t' << e.speaker << '\t' << e.split << '\t' << buf << '\t'
          << e.sample_rate << '\n';
    }
}

CorpusManifest load_manifest(const std::string& dir) {
    const auto path = fs::path(dir) / "manifest.tsv";
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path.string());
    CorpusManifest manifest;
    manifest.root = dir;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        ManifestEntry e;
        std::string speaker, dur, rate;
        if (!std::getline(ss, e.path, '\t') || !std::getline(ss, speaker, '\t') ||
            !std::getline(ss, e.split, '\t') || !std::getline(ss, dur, '\t') ||
            !std::getline(ss, rate, '\t')) {
            throw std::runtime_error("malformed manifest row: " + line);
        }
        e.speaker = std::stoi(speaker);
        e.duration_s = std::stod(dur);
        e.sample_rate = std::stoi(rate);
        if (!fs::exists(fs::path(dir) / e.path))
            throw std::runtime_error("manifest references missing file: " + e.path);
        manifest.entries.push_back(e);
    }
    if (manifest.entries.empty()) throw std::runtime_error("empty manifest: " + path.string());
    return manifest;
}

namespace {

// Level-normalized log-mel summary of a clip, used only by the separability
// oracle: per-frame log-mel vectors, silent frames dropped (below the clip's
// mean frame energy), each kept frame normalized by its own bin mean so the
// summary reflects spectral shape, not recording level.
std::vector<double> mean_log_mel(const AudioClip& clip) {
    const int n_fft = 256, hop = 128, n_mels = 30, nb = n_fft / 2 + 1;
    const auto frames = frame_signal(clip, n_fft, hop);
    const int T = frame_count(clip.length(), n_fft, hop);
    auto [C, S] = dft_power_matrices(n_fft);
    const auto mel = mel_filterbank(n_mels, n_fft, clip.sample_rate, 20.0, 4000.0);
    std::vector<double> logmel(static_cast<size_t>(T) * n_mels);
    std::vector<double> energy(T);
    std::vector<double> power(nb);
    for (int t = 0; t < T; ++t) {
        for (int k = 0; k < nb; ++k) {
            double re = 0, im = 0;
            for (int n = 0; n < n_fft; ++n) {
                re += C[static_cast<int64_t>(k) * n_fft + n] * frames[static_cast<int64_t>(t) * n_fft + n];
                im += S[static_cast<int64_t>(k) * n_fft + n] * frames[static_cast<int64_t>(t) * n_fft + n];
            }
            power[k] = re * re + im * im;
        }
        double frame_mean = 0.0;
        for (int m = 0; m < n_mels; ++m) {
            double acc = 0;
            for (int k = 0; k < nb; ++k) acc += mel[static_cast<int64_t>(m) * nb + k] * power[k];
            const double lm = std::log(std::max(acc, 1e-10));
            logmel[static_cast<size_t>(t) * n_mels + m] = lm;
            frame_mean += lm;
        }
        energy[t] = frame_mean / n_mels;
    }
    double mean_energy = 0.0;
    for (double e : energy) mean_energy += e;
    mean_energy /= T;
    std::vector<double> avg(n_mels, 0.0);
    int kept = 0;
    for (int t = 0; t < T; ++t) {
        if (energy[t] <= mean_energy) continue;
        for (int m = 0; m < n_mels; ++m)
            avg[m] += logmel[static_cast<size_t>(t) * n_mels + m] - energy[t];
        ++kept;
    }
    if (kept == 0) {  // degenerate (near-constant) clip: fall back to all frames
        for (int t = 0; t < T; ++t)
            for (int m = 0; m < n_mels; ++m)
                avg[m] += logmel[static_cast<size_t>(t) * n_mels + m] - energy[t];
        kept = T;
    }
    for (double& a : avg) a /= kept;
    return avg;
}

}  // namespace

double nearest_centroid_accuracy(const CorpusManifest& manifest) {
    const int n_spk = manifest.n_speakers();
    const int n_mels = 30;
    std::vector<std::vector<double>> centroids(n_spk, std::vector<double>(n_mels, 0.0));
    std::vector<int> counts(n_spk, 0);
    for (int i : manifest.indices_for_split("train")) {
        const auto feat = mean_log_mel(read_wav(manifest.clip_path(i)));
        const int s = manifest.entries[i].speaker;
        for (int m = 0; m < n_mels; ++m) centroids[s][m] += feat[m];
        ++counts[s];
    }
    for (int s = 0; s < n_spk; ++s) {
        if (counts[s] == 0) throw ContractViolation("speaker with no train clips");
        for (double& c : centroids[s]) c /= counts[s];
    }
    int correct = 0, total = 0;
    for (int i : manifest.indices_for_split("test")) {
        const auto feat = mean_log_mel(read_wav(manifest.clip_path(i)));
        int best = -1;
        double best_d = 0;
        for (int s = 0; s < n_spk; ++s) {
            double d = 0;
            for (int m = 0; m < n_mels; ++m) {
                const double diff = feat[m] - centroids[s][m];
                d += diff * diff;
            }
            if (best < 0 || d < best_d) {
                best = s;
                best_d = d;
            }
        }
        correct += best == manifest.entries[i].speaker;
        ++total;
    }
    if (total == 0) throw ContractViolation("no test clips");
    return static_cast<double>(correct) / total;
}

}  // namespace foolhd
