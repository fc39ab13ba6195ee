#pragma once

#include "foolhd/attacks.hpp"
#include "foolhd/metrics.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace foolhd {

// ---- corpus ----------------------------------------------------------------

struct ManifestEntry {
    std::string path;  // relative to the manifest's directory
    int speaker = 0;
    std::string split;  // "train" | "test"
    double duration_s = 0.0;
    int sample_rate = 8000;
};

struct CorpusManifest {
    std::string root;  // directory holding manifest.tsv and the clips
    std::vector<ManifestEntry> entries;

    int n_speakers() const;
    std::vector<int> indices_for_split(const std::string& split) const;
    std::string clip_path(int index) const;
};

/// Deterministic synthetic speaker corpus: each speaker has fixed pitch and
/// three fixed formant resonators; clips vary by phrase-like amplitude
/// modulation and excitation jitter. 4 s mono 8 kHz PCM16 WAVs + manifest.tsv.
CorpusManifest synthesize_toy_corpus(const std::string& out_dir, int n_speakers,
                                     int train_per_speaker, int test_per_speaker, uint64_t seed);

CorpusManifest load_manifest(const std::string& dir);
void save_manifest(const CorpusManifest& manifest);

/// Separability oracle: nearest-centroid on per-clip average mel spectra,
/// centroids from the train split, scored on the test split.
double nearest_centroid_accuracy(const CorpusManifest& manifest);

// ---- configuration ---------------------------------------------------------

constexpr int kConfigSchemaVersion = 1;

struct ExperimentConfig {
    std::string dataset_dir;
    std::string output_dir;
    std::string checkpoint;
    std::string attack_kind = "foolhd";  // foolhd|foolhd-t|foolhd-mse|foolhd-noskip|fgsm|bim
    AttackConfig attack = AttackConfig::foolhd();
    std::optional<uint64_t> seed;  // mandatory before run; no wall-clock default
    int workers = 1;
    int clip_limit = 0;  // 0 = all test clips; else an evenly spaced subset
    bool train_if_needed = true;
    int train_epochs = 30;

    void validate() const;
    /// Deterministic key=value echo (sorted keys), written to the run-log.
    std::string echo() const;
};

/// key=value file with '#' comments; requires schema_version. Unknown keys and
/// malformed lines are errors. Returns the parsed key map for later override
/// tracking.
std::map<std::string, std::string> parse_config_file(const std::string& path);

/// Builds a config from a parsed key map; keys not present keep defaults.
ExperimentConfig config_from_keys(const std::map<std::string, std::string>& keys);

/// Seed precedence: CLI flag > FOOLHD_SEED env var > config file.
void apply_seed_sources(ExperimentConfig& cfg, std::optional<uint64_t> cli_seed);

AttackConfig attack_config_for_kind(const std::string& kind);

// ---- experiment ------------------------------------------------------------

struct PerClipRecord {
    std::string clip_id;
    int speaker = 0;
    int prediction_clean = -1;
    int prediction_adv = -1;
    std::optional<int> target;
    bool success = false;
    double l_p = 0.0;
    double l_a = 0.0;
    int iterations = 0;
    double seg_snr_db = 0.0;
    double lsd_db = 0.0;
    double mfcc_cos_dist = 0.0;
};

struct ExperimentReport {
    std::vector<PerClipRecord> clips;
    double acc_clean = 0.0;
    double acc_adv = 0.0;
    double success_untargeted = 0.0;
    std::optional<double> success_targeted;
    double success_correct_only = 0.0;  // restricted to originally-correct clips
    MetricAggregate seg_snr, lsd, mfcc_cos;
    std::string corpus_hash;
    double wall_clock_s = 0.0;
};

/// Full orchestration: (train if needed) -> parallel per-clip attacks ->
/// metrics -> adversarial WAVs + report.csv + report.json + run.log under
/// cfg.output_dir.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

/// Trains a classifier on the manifest's train split and saves a checkpoint.
TrainingRecord train_from_manifest(const CorpusManifest& manifest, const std::string& checkpoint,
                                   uint64_t seed, int epochs);

// report.csv (de)serialization, used by the `report` subcommand.
void write_report_csv(const std::string& path, const std::vector<PerClipRecord>& clips);
std::vector<PerClipRecord> read_report_csv(const std::string& path);
// cfg may be null (aggregation from a bare CSV); "config" is then JSON null.
void write_report_json(const std::string& path, const ExperimentReport& report,
                       const ExperimentConfig* cfg);

/// Aggregates recomputed from per-clip rows (targeted iff any row has a target).
ExperimentReport aggregate_from_records(std::vector<PerClipRecord> clips,
                                        const std::vector<int>& labels);

// FNV-1a 64-bit content hashing for run-log provenance.
uint64_t fnv1a64(const uint8_t* data, size_t n, uint64_t h = 14695981039346656037ull);
std::string corpus_content_hash(const CorpusManifest& manifest);

// Metric framing used for report columns (documented constants).
constexpr int kMetricFrameLen = 256;
constexpr int kMetricHop = 128;

}  // namespace foolhd
