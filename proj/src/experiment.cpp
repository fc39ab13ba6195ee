#include "foolhd/harness.hpp"
#include "foolhd/wav.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <mutex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace foolhd {

uint64_t fnv1a64(const uint8_t* data, size_t n, uint64_t h) {
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ull;
    }
    return h;
}

namespace {

uint64_t hash_file(const std::string& path, uint64_t h) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot hash missing file: " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(reinterpret_cast<const uint8_t*>(buf.data()), buf.size(), h);
}

std::string hex64(uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

// 4 s / 8 kHz / mono contract: longer clips are center-cropped, shorter rejected.
AudioClip prepare_clip(AudioClip clip, const std::string& what) {
    constexpr int64_t kLen = 32000;
    if (clip.sample_rate != 8000)
        throw std::runtime_error(what + ": expected 8 kHz, got " +
                                 std::to_string(clip.sample_rate));
    if (clip.length() < kLen) throw std::runtime_error(what + ": shorter than 4 s");
    if (clip.length() > kLen) {
        const int64_t off = (clip.length() - kLen) / 2;
        clip.samples = std::vector<double>(clip.samples.begin() + off,
                                           clip.samples.begin() + off + kLen);
    }
    return clip;
}

std::string clip_id_of(const ManifestEntry& e) { return fs::path(e.path).stem().string(); }

struct RunError : std::runtime_error {
    std::string stage;
    RunError(std::string st, const std::string& msg)
        : std::runtime_error("[" + st + "] " + msg), stage(std::move(st)) {}
};

}  // namespace

std::string corpus_content_hash(const CorpusManifest& manifest) {
    uint64_t h = hash_file((fs::path(manifest.root) / "manifest.tsv").string(),
                           14695981039346656037ull);
    for (size_t i = 0; i < manifest.entries.size(); ++i)
        h = hash_file(manifest.clip_path(static_cast<int>(i)), h);
    return hex64(h);
}

TrainingRecord train_from_manifest(const CorpusManifest& manifest, const std::string& checkpoint,
                                   uint64_t seed, int epochs) {
    const MfccConfig frontend = MfccConfig::classifier_frontend();
    std::vector<FeatureMatrix> feats;
    std::vector<int> labels;
    for (int i : manifest.indices_for_split("train")) {
        AudioClip clip = prepare_clip(read_wav(manifest.clip_path(i)), manifest.entries[i].path);
        feats.push_back(mfcc(clip, frontend));
        labels.push_back(manifest.entries[i].speaker);
    }
    if (feats.empty()) throw std::runtime_error("train split is empty");
    std::mt19937_64 rng(seed);
    XVectorModel model = XVectorModel::make(feats[0].F, manifest.n_speakers(), rng);
    TrainHyperparams hp;
    hp.epochs = epochs;
    TrainingRecord record = train_classifier(model, feats, labels, hp, rng);
    if (!checkpoint.empty()) {
        std::ostringstream echo;
        echo << "seed = " << seed << "\ntrain_epochs = " << epochs
             << "\nn_speakers = " << manifest.n_speakers() << "\n";
        save_checkpoint(checkpoint, model, echo.str());
    }
    return record;
}

void write_report_csv(const std::string& path, const std::vector<PerClipRecord>& clips) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write csv: " + path);
    f << "clip_id,speaker,prediction_clean,prediction_adv,target,success,L_P,L_A,"
         "iterations,segSNR_dB,LSD_dB,mfcc_cos_dist\n";
    for (const auto& r : clips) {
        f << r.clip_id << ',' << r.speaker << ',' << r.prediction_clean << ','
          << r.prediction_adv << ',' << (r.target ? std::to_string(*r.target) : std::string())
          << ',' << (r.success ? 1 : 0) << ',' << fmt_double(r.l_p) << ',' << fmt_double(r.l_a)
          << ',' << r.iterations << ',' << fmt_double(r.seg_snr_db) << ','
          << fmt_double(r.lsd_db) << ',' << fmt_double(r.mfcc_cos_dist) << '\n';
    }
}

std::vector<PerClipRecord> read_report_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open csv: " + path);
    std::vector<PerClipRecord> rows;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::istringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
        if (ss.eof() && !line.empty() && line.back() == ',') cols.push_back("");
        if (cols.size() != 12) throw std::runtime_error("malformed csv row: " + line);
        PerClipRecord r;
        r.clip_id = cols[0];
        r.speaker = std::stoi(cols[1]);
        r.prediction_clean = std::stoi(cols[2]);
        r.prediction_adv = std::stoi(cols[3]);
        if (!cols[4].empty()) r.target = std::stoi(cols[4]);
        r.success = cols[5] == "1";
        r.l_p = std::stod(cols[6]);
        r.l_a = std::stod(cols[7]);
        r.iterations = std::stoi(cols[8]);
        r.seg_snr_db = std::stod(cols[9]);
        r.lsd_db = std::stod(cols[10]);
        r.mfcc_cos_dist = std::stod(cols[11]);
        rows.push_back(r);
    }
    return rows;
}

ExperimentReport aggregate_from_records(std::vector<PerClipRecord> clips,
                                        const std::vector<int>& labels) {
    if (clips.empty() || clips.size() != labels.size())
        throw ContractViolation("aggregate_from_records: empty or mismatched inputs");
    ExperimentReport rep;
    std::vector<int> clean, adv;
    std::vector<double> snr, lsd, cos;
    bool targeted = false;
    int correct_clean = 0, correct_success = 0;
    for (size_t i = 0; i < clips.size(); ++i) {
        const auto& r = clips[i];
        clean.push_back(r.prediction_clean);
        adv.push_back(r.prediction_adv);
        snr.push_back(r.seg_snr_db);
        lsd.push_back(r.lsd_db);
        cos.push_back(r.mfcc_cos_dist);
        targeted = targeted || r.target.has_value();
        if (r.prediction_clean == labels[i]) {
            ++correct_clean;
            correct_success += r.success;
        }
    }
    rep.acc_clean = accuracy(clean, labels);
    rep.acc_adv = accuracy(adv, labels);
    rep.success_untargeted = success_rate_untargeted(adv, labels);
    if (targeted) {
        std::vector<int> targets;
        for (const auto& r : clips) {
            if (!r.target) throw ContractViolation("mixed targeted/untargeted rows");
            targets.push_back(*r.target);
        }
        rep.success_targeted = success_rate_targeted(adv, targets);
    }
    rep.success_correct_only =
        correct_clean > 0 ? static_cast<double>(correct_success) / correct_clean : 0.0;
    rep.seg_snr = aggregate_metric(snr);
    rep.lsd = aggregate_metric(lsd);
    rep.mfcc_cos = aggregate_metric(cos);
    rep.clips = std::move(clips);
    return rep;
}

void write_report_json(const std::string& path, const ExperimentReport& report,
                       const ExperimentConfig* cfg) {
    ordered_json j;
    j["schema_version"] = kConfigSchemaVersion;
    ordered_json cfg_echo;
    if (cfg) {
        std::istringstream ss(cfg->echo());
        std::string line;
        while (std::getline(ss, line)) {
            const auto eq = line.find(" = ");
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq);
            // path-valued keys vary across reruns of the same experiment; they
            // stay in run.log so report.json is byte-reproducible per seed
            if (key == "dataset_dir" || key == "output_dir" || key == "checkpoint") continue;
            cfg_echo[key] = line.substr(eq + 3);
        }
    }
    j["config"] = cfg ? cfg_echo : ordered_json(nullptr);
    j["corpus_hash"] = report.corpus_hash;
    j["n_clips"] = report.clips.size();
    j["acc_clean"] = report.acc_clean;
    j["acc_adv"] = report.acc_adv;
    j["success_untargeted"] = report.success_untargeted;
    if (report.success_targeted) j["success_targeted"] = *report.success_targeted;
    else j["success_targeted"] = nullptr;
    j["success_correct_only"] = report.success_correct_only;
    auto agg = [](const MetricAggregate& a) {
        return ordered_json{{"mean", a.mean}, {"stddev", a.stddev}, {"median", a.median}};
    };
    j["segSNR_dB"] = agg(report.seg_snr);
    j["LSD_dB"] = agg(report.lsd);
    j["mfcc_cos_dist"] = agg(report.mfcc_cos);
    // reserved for externally computed perceptual scores
    j["pesq"] = nullptr;
    j["jnd"] = nullptr;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write json: " + path);
    f << j.dump(2) << '\n';
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    fs::create_directories(cfg.output_dir);
    const std::string log_path = (fs::path(cfg.output_dir) / "run.log").string();

    auto fail = [&](const std::string& stage, const std::string& msg) -> RunError {
        std::ofstream log(log_path);
        log << "status = incomplete\nstage = " << stage << "\nerror = " << msg << "\n\n"
            << cfg.echo();
        return RunError(stage, msg);
    };

    CorpusManifest manifest;
    try {
        manifest = load_manifest(cfg.dataset_dir);
    } catch (const std::exception& e) {
        throw fail("load-corpus", e.what());
    }

    ExperimentReport report;
    try {
        report.corpus_hash = corpus_content_hash(manifest);
    } catch (const std::exception& e) {
        throw fail("hash-corpus", e.what());
    }

    XVectorModel model;
    try {
        if (!cfg.checkpoint.empty() && fs::exists(cfg.checkpoint)) {
            model = load_checkpoint(cfg.checkpoint);
        } else if (cfg.train_if_needed) {
            if (cfg.checkpoint.empty()) throw std::runtime_error("checkpoint path is required");
            train_from_manifest(manifest, cfg.checkpoint, *cfg.seed, cfg.train_epochs);
            model = load_checkpoint(cfg.checkpoint);
        } else {
            throw std::runtime_error("checkpoint missing and train_if_needed = false");
        }
    } catch (const RunError&) {
        throw;
    } catch (const std::exception& e) {
        throw fail("train", e.what());
    }

    std::vector<int> test_idx = manifest.indices_for_split("test");
    if (cfg.clip_limit > 0 && static_cast<int>(test_idx.size()) > cfg.clip_limit) {
        // evenly spaced across the split, so a limited run still covers all
        // speakers and recording levels instead of one manifest prefix
        std::vector<int> sampled(cfg.clip_limit);
        for (int i = 0; i < cfg.clip_limit; ++i)
            sampled[i] = test_idx[static_cast<size_t>(i) * test_idx.size() / cfg.clip_limit];
        test_idx = std::move(sampled);
    }
    if (test_idx.empty()) throw fail("attack", "no test clips");

    const fs::path adv_dir = fs::path(cfg.output_dir) / "adv";
    fs::create_directories(adv_dir);

    std::vector<PerClipRecord> records(test_idx.size());
    std::vector<int> labels(test_idx.size());
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::mutex err_mutex;
    std::string err_msg;

    auto worker = [&]() {
        for (;;) {
            const size_t j = next.fetch_add(1);
            if (j >= test_idx.size() || failed.load()) break;
            try {
                const int mi = test_idx[j];
                const ManifestEntry& entry = manifest.entries[mi];
                AudioClip x = prepare_clip(read_wav(manifest.clip_path(mi)), entry.path);
                const int y = entry.speaker;
                // per-clip RNG stream: independent of worker count and order
                std::mt19937_64 rng(*cfg.seed * 0x9e3779b97f4a7c15ull +
                                    static_cast<uint64_t>(mi) + 1);
                AttackResult res;
                if (cfg.attack_kind == "fgsm") {
                    res = fgsm_attack(x, y, model, cfg.attack.epsilon);
                } else if (cfg.attack_kind == "bim") {
                    res = bim_attack(x, y, model, cfg.attack.epsilon, cfg.attack.bim_iterations);
                } else {
                    res = foolhd_attack(x, y, model, cfg.attack, rng);
                }
                AudioClip adv{res.adversarial, x.sample_rate};
                write_wav((adv_dir / entry.path).string(), adv);
                // metrics computed on the PCM16-quantized clip, i.e. what was written
                for (double& v : adv.samples) v = roundtrip_sample(std::clamp(v, -1.0, 1.0));
                PerClipRecord r;
                r.clip_id = clip_id_of(entry);
                r.speaker = y;
                r.prediction_clean = evaluate_prediction(model, x);
                r.prediction_adv = res.prediction;
                r.target = res.target;
                r.success = res.success;
                r.l_p = res.final_perceptual;
                r.l_a = res.final_adversarial;
                r.iterations = res.iterations;
                r.seg_snr_db = segmental_snr(x.samples, adv.samples, kMetricFrameLen, kMetricHop);
                r.lsd_db = log_spectral_distance(x.samples, adv.samples, kMetricFrameLen, kMetricHop);
                r.mfcc_cos_dist = mfcc_cosine_distance(x, adv);
                records[j] = std::move(r);
                labels[j] = y;
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mutex);
                err_msg = e.what();
                failed.store(true);
            }
        }
    };

    const int n_workers = std::min<int>(cfg.workers, static_cast<int>(test_idx.size()));
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failed.load()) throw fail("attack", err_msg);

    try {
        report = aggregate_from_records(std::move(records), labels);
        report.corpus_hash = corpus_content_hash(manifest);
        write_report_csv((fs::path(cfg.output_dir) / "report.csv").string(), report.clips);
        write_report_json((fs::path(cfg.output_dir) / "report.json").string(), report, &cfg);
    } catch (const std::exception& e) {
        throw fail("report", e.what());
    }

    report.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    {
        // wall clock lives only here so report.csv/json stay byte-reproducible
        std::ofstream log(log_path);
        log << "status = complete\n"
            << "corpus_hash = " << report.corpus_hash << "\n"
            << "wall_clock_s = " << fmt_double(report.wall_clock_s) << "\n\n"
            << cfg.echo();
    }
    return report;
}

}  // namespace foolhd
