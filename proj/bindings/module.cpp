// Python bindings for the core operations: transforms, features, attacks,
// training, metrics and the toy corpus synthesizer.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "foolhd/harness.hpp"
#include "foolhd/losses.hpp"
#include "foolhd/wav.hpp"

#include <algorithm>

namespace py = pybind11;
using namespace foolhd;

namespace {

std::vector<double> to_vec(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 1) throw py::value_error("expected a 1-D array of samples");
    return std::vector<double>(a.data(), a.data() + a.size());
}

py::array_t<double> to_array(const std::vector<double>& v) {
    py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::array_t<double> to_array2d(const std::vector<double>& v, int rows, int cols) {
    py::array_t<double> out({rows, cols});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

MfccConfig config_for(const std::string& kind) {
    if (kind == "perceptual") return MfccConfig::perceptual();
    if (kind == "classifier") return MfccConfig::classifier_frontend();
    throw py::value_error("mfcc kind must be 'perceptual' or 'classifier'");
}

AudioClip clip_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& samples,
                    int sample_rate) {
    return AudioClip{to_vec(samples), sample_rate};
}

py::dict result_dict(const AttackResult& r) {
    py::dict d;
    d["adversarial"] = to_array(r.adversarial);
    d["label"] = r.label;
    d["prediction"] = r.prediction;
    d["success"] = r.success;
    d["iterations"] = r.iterations;
    d["L_P"] = r.final_perceptual;
    d["L_A"] = r.final_adversarial;
    if (r.target) d["target"] = *r.target;
    else d["target"] = py::none();
    py::list trace;
    for (const auto& t : r.trace) {
        py::dict e;
        e["total"] = t.total;
        e["perceptual"] = t.perceptual;
        e["adversarial"] = t.adversarial;
        trace.append(e);
    }
    d["trace"] = trace;
    d["pool_size"] = r.pool.entries.size();
    d["pool_best_iteration"] = r.pool.best_iteration;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Adversarial audio toolkit: MDCT-domain perceptual attacks on a "
              "speaker classifier, plus the transforms and metrics behind them";

    // ---- transforms --------------------------------------------------------
    m.def(
        "mdct",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> samples, int frame_len) {
            auto spec = mdct(AudioClip{to_vec(samples), 8000}, frame_len);
            return to_array2d(spec.coeffs, spec.frames, spec.bins);
        },
        py::arg("samples"), py::arg("frame_len") = 512,
        "Lapped-transform spectrogram (frames x bins, 50% overlap, sine window)");

    m.def(
        "imdct",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> coeffs, int frame_len,
           int64_t source_len) {
            if (coeffs.ndim() != 2) throw py::value_error("coeffs must be 2-D (frames x bins)");
            MdctSpectrogram spec;
            spec.frames = static_cast<int>(coeffs.shape(0));
            spec.bins = static_cast<int>(coeffs.shape(1));
            spec.frame_len = frame_len;
            spec.source_len = source_len;
            spec.coeffs.assign(coeffs.data(), coeffs.data() + coeffs.size());
            return to_array(imdct(spec).samples);
        },
        py::arg("coeffs"), py::arg("frame_len") = 512, py::arg("source_len"),
        "Inverse of mdct(); reconstructs source_len samples");

    m.def(
        "mfcc",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> samples,
           const std::string& kind) {
            auto f = mfcc(AudioClip{to_vec(samples), 8000}, config_for(kind));
            return to_array2d(f.values, f.T, f.F);
        },
        py::arg("samples"), py::arg("kind") = "perceptual",
        "MFCC feature matrix (T x F); kind is 'perceptual' or 'classifier'");

    // ---- losses ------------------------------------------------------------
    m.def(
        "perceptual_loss",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> f,
           py::array_t<double, py::array::c_style | py::array::forcecast> g) {
            if (f.ndim() != 2 || g.ndim() != 2) throw py::value_error("expected 2-D features");
            std::vector<double> fv(f.data(), f.data() + f.size());
            std::vector<double> gv(g.data(), g.data() + g.size());
            return perceptual_loss(fv, gv, static_cast<int>(f.shape(0)),
                                   static_cast<int>(f.shape(1)));
        },
        py::arg("f"), py::arg("g"), "Sum over frames of 1 - cos(f_t, g_t)");

    // ---- corpus / training -------------------------------------------------
    m.def(
        "synth_corpus",
        [](const std::string& out_dir, int n_speakers, int train_per, int test_per, uint64_t seed) {
            auto man = synthesize_toy_corpus(out_dir, n_speakers, train_per, test_per, seed);
            py::dict d;
            d["n_clips"] = man.entries.size();
            d["n_speakers"] = man.n_speakers();
            d["hash"] = corpus_content_hash(man);
            return d;
        },
        py::arg("out_dir"), py::arg("n_speakers") = 10, py::arg("train_per_speaker") = 20,
        py::arg("test_per_speaker") = 10, py::arg("seed"),
        "Deterministic synthetic speaker corpus (4 s, 8 kHz, PCM16 WAV + manifest.tsv)");

    m.def(
        "train",
        [](const std::string& data_dir, const std::string& checkpoint, uint64_t seed, int epochs) {
            auto rec = train_from_manifest(load_manifest(data_dir), checkpoint, seed, epochs);
            py::dict d;
            d["final_accuracy"] = rec.final_accuracy;
            d["epoch_loss"] = rec.epoch_loss;
            d["epoch_accuracy"] = rec.epoch_accuracy;
            return d;
        },
        py::arg("data_dir"), py::arg("checkpoint"), py::arg("seed"), py::arg("epochs") = 30,
        "Train the speaker classifier on a corpus's train split and save a checkpoint");

    m.def(
        "predict",
        [](const std::string& checkpoint,
           py::array_t<double, py::array::c_style | py::array::forcecast> samples) {
            auto model = load_checkpoint(checkpoint);
            return evaluate_prediction(model, clip_from(samples, 8000));
        },
        py::arg("checkpoint"), py::arg("samples"),
        "Predicted speaker id (PCM16 round trip + fresh VAD, as in scoring)");

    // ---- attacks -----------------------------------------------------------
    m.def(
        "attack",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> samples, int label,
           const std::string& checkpoint, const std::string& kind, uint64_t seed,
           std::optional<int> iterations, std::optional<int> target) {
            auto model = load_checkpoint(checkpoint);
            AudioClip x = clip_from(samples, 8000);
            AttackConfig cfg = attack_config_for_kind(kind);
            if (iterations) cfg.max_iterations = *iterations;
            if (target) cfg.target = *target;
            if (kind == "fgsm") return result_dict(fgsm_attack(x, label, model, cfg.epsilon));
            if (kind == "bim")
                return result_dict(bim_attack(x, label, model, cfg.epsilon, cfg.bim_iterations));
            std::mt19937_64 rng(seed);
            return result_dict(foolhd_attack(x, label, model, cfg, rng));
        },
        py::arg("samples"), py::arg("label"), py::arg("checkpoint"), py::arg("kind") = "foolhd",
        py::arg("seed") = 0, py::arg("iterations") = py::none(), py::arg("target") = py::none(),
        "Run one attack (foolhd|foolhd-t|foolhd-mse|foolhd-noskip|fgsm|bim) on a clip");

    // ---- metrics -----------------------------------------------------------
    m.def(
        "segmental_snr",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> x,
           py::array_t<double, py::array::c_style | py::array::forcecast> y) {
            return segmental_snr(to_vec(x), to_vec(y), kMetricFrameLen, kMetricHop);
        },
        py::arg("clean"), py::arg("adv"), "Frame-averaged SNR in dB, clamped to [-10, 35] per frame");

    m.def(
        "log_spectral_distance",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> x,
           py::array_t<double, py::array::c_style | py::array::forcecast> y) {
            return log_spectral_distance(to_vec(x), to_vec(y), kMetricFrameLen, kMetricHop);
        },
        py::arg("clean"), py::arg("adv"), "RMS distance between log power spectra, in dB");

    m.def(
        "mfcc_cosine_distance",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> x,
           py::array_t<double, py::array::c_style | py::array::forcecast> y) {
            return mfcc_cosine_distance(clip_from(x, 8000), clip_from(y, 8000));
        },
        py::arg("clean"), py::arg("adv"), "Mean per-frame cosine distance between MFCC matrices");

    // ---- wav io ------------------------------------------------------------
    m.def(
        "read_wav", [](const std::string& path) { return to_array(read_wav(path).samples); },
        py::arg("path"), "Read a mono 8 kHz PCM16 WAV as float samples in [-1, 1]");

    m.def(
        "write_wav",
        [](const std::string& path,
           py::array_t<double, py::array::c_style | py::array::forcecast> samples) {
            return write_wav(path, clip_from(samples, 8000)).clamped;
        },
        py::arg("path"), py::arg("samples"),
        "Write samples as mono 8 kHz PCM16; returns the number of clamped samples");
}
