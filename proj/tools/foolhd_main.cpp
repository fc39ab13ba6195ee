#include "foolhd/harness.hpp"
#include "foolhd/wav.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace foolhd;

namespace {

int fail(const std::string& stage, const std::string& msg) {
    nlohmann::ordered_json j{{"error", msg}, {"stage", stage}};
    std::cerr << j.dump() << "\n";
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"foolhd: adversarial audio attack toolkit"};
    app.require_subcommand(1);

    // ---- synth -------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "generate the synthetic toy corpus");
    std::string synth_out;
    int n_speakers = 10, train_clips = 20, test_clips = 10;
    std::optional<uint64_t> synth_seed;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--speakers", n_speakers, "number of speakers");
    synth->add_option("--train-clips", train_clips, "train clips per speaker");
    synth->add_option("--test-clips", test_clips, "test clips per speaker");
    synth->add_option("--seed", synth_seed, "master seed")->required();

    // ---- train -------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train the speaker classifier");
    std::string train_data, train_ckpt;
    int train_epochs = 30;
    std::optional<uint64_t> train_seed;
    train->add_option("--data", train_data, "corpus directory")->required();
    train->add_option("--checkpoint", train_ckpt, "checkpoint output path")->required();
    train->add_option("--epochs", train_epochs, "training epochs");
    train->add_option("--seed", train_seed, "master seed (flag > FOOLHD_SEED > config)");

    // ---- attack ------------------------------------------------------------
    auto* attack = app.add_subcommand("attack", "run an attack over the test split");
    std::string attack_kind, attack_mode, attack_config_path;
    std::string atk_data, atk_ckpt, atk_out;
    std::optional<uint64_t> atk_seed;
    std::optional<int> atk_m, atk_workers, atk_clip_limit, atk_bim_iters, atk_target;
    std::optional<double> atk_eps, atk_lr;
    attack->add_option("kind", attack_kind,
                       "foolhd|foolhd-t|foolhd-mse|foolhd-noskip|fgsm|bim");
    attack->add_option("--mode", attack_mode, "untargeted|targeted (shorthand for kind)");
    attack->add_option("--config", attack_config_path, "key=value config file");
    attack->add_option("--data", atk_data, "corpus directory");
    attack->add_option("--checkpoint", atk_ckpt, "classifier checkpoint");
    attack->add_option("--out", atk_out, "output directory");
    attack->add_option("--seed", atk_seed, "master seed (flag > FOOLHD_SEED > config)");
    attack->add_option("--m", atk_m, "optimization iterations M");
    attack->add_option("--epsilon", atk_eps, "FGSM/BIM epsilon");
    attack->add_option("--lr", atk_lr, "optimizer learning rate");
    attack->add_option("--bim-iterations", atk_bim_iters, "BIM step count");
    attack->add_option("--workers", atk_workers, "parallel attack workers");
    attack->add_option("--clip-limit", atk_clip_limit,
                       "attack an evenly spaced subset of N test clips (0 = all)");
    attack->add_option("--target", atk_target, "fixed target class (targeted mode)");

    // ---- eval --------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "score stored adversarial WAVs");
    std::string eval_data, eval_ckpt, eval_adv, eval_out;
    eval->add_option("--data", eval_data, "corpus directory")->required();
    eval->add_option("--checkpoint", eval_ckpt, "classifier checkpoint")->required();
    eval->add_option("--adv", eval_adv, "directory of adversarial WAVs")->required();
    eval->add_option("--out", eval_out, "output csv path")->required();

    // ---- report ------------------------------------------------------------
    auto* report = app.add_subcommand("report", "aggregate a per-clip csv into json");
    std::string rep_csv, rep_json, rep_data;
    report->add_option("--csv", rep_csv, "per-clip report.csv")->required();
    report->add_option("--data", rep_data, "corpus directory (for labels)")->required();
    report->add_option("--json", rep_json, "aggregate json output path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            auto manifest =
                synthesize_toy_corpus(synth_out, n_speakers, train_clips, test_clips, *synth_seed);
            std::cout << "corpus: " << manifest.entries.size() << " clips, hash "
                      << corpus_content_hash(manifest) << "\n";
            return 0;
        }
        if (*train) {
            if (!train_seed) {
                ExperimentConfig tmp;
                apply_seed_sources(tmp, std::nullopt);
                if (!tmp.seed) return fail("train", "--seed (or FOOLHD_SEED) is required");
                train_seed = tmp.seed;
            }
            auto manifest = load_manifest(train_data);
            auto record = train_from_manifest(manifest, train_ckpt, *train_seed, train_epochs);
            std::cout << "final train accuracy: " << record.final_accuracy << "\n";
            return 0;
        }
        if (*attack) {
            ExperimentConfig cfg;
            if (!attack_config_path.empty())
                cfg = config_from_keys(parse_config_file(attack_config_path));
            if (!attack_kind.empty()) cfg.attack_kind = attack_kind;
            else if (attack_mode == "untargeted") cfg.attack_kind = "foolhd";
            else if (attack_mode == "targeted") cfg.attack_kind = "foolhd-t";
            else if (!attack_mode.empty())
                return fail("config", "unknown --mode: " + attack_mode);
            // re-derive attack defaults for the chosen kind, then apply file + flags
            {
                AttackConfig base = attack_config_for_kind(cfg.attack_kind);
                std::optional<int> file_target = cfg.attack.target;
                base.epsilon = cfg.attack.epsilon;
                base.bim_iterations = cfg.attack.bim_iterations;
                base.lr = cfg.attack.lr;
                base.weight_decay = cfg.attack.weight_decay;
                base.dropout = cfg.attack.dropout;
                base.target = file_target;
                cfg.attack = base;
            }
            if (!atk_data.empty()) cfg.dataset_dir = atk_data;
            if (!atk_ckpt.empty()) cfg.checkpoint = atk_ckpt;
            if (!atk_out.empty()) cfg.output_dir = atk_out;
            if (atk_m) cfg.attack.max_iterations = *atk_m;
            if (atk_eps) cfg.attack.epsilon = *atk_eps;
            if (atk_lr) cfg.attack.lr = *atk_lr;
            if (atk_bim_iters) cfg.attack.bim_iterations = *atk_bim_iters;
            if (atk_workers) cfg.workers = *atk_workers;
            if (atk_clip_limit) cfg.clip_limit = *atk_clip_limit;
            if (atk_target) cfg.attack.target = *atk_target;
            apply_seed_sources(cfg, atk_seed);
            auto rep = run_experiment(cfg);
            std::cout << "acc_clean=" << rep.acc_clean << " acc_adv=" << rep.acc_adv
                      << " S=" << rep.success_untargeted;
            if (rep.success_targeted) std::cout << " S_t=" << *rep.success_targeted;
            std::cout << " wall_clock_s=" << rep.wall_clock_s << "\n";
            return 0;
        }
        if (*eval) {
            auto manifest = load_manifest(eval_data);
            auto model = load_checkpoint(eval_ckpt);
            std::vector<PerClipRecord> rows;
            std::vector<int> labels;
            for (int i : manifest.indices_for_split("test")) {
                const auto& e = manifest.entries[i];
                const auto adv_path = fs::path(eval_adv) / e.path;
                if (!fs::exists(adv_path)) continue;
                AudioClip x = read_wav(manifest.clip_path(i));
                AudioClip adv = read_wav(adv_path.string());
                PerClipRecord r;
                r.clip_id = fs::path(e.path).stem().string();
                r.speaker = e.speaker;
                r.prediction_clean = evaluate_prediction(model, x);
                r.prediction_adv = evaluate_prediction(model, adv);
                r.success = r.prediction_adv != e.speaker;
                r.seg_snr_db = segmental_snr(x.samples, adv.samples, kMetricFrameLen, kMetricHop);
                r.lsd_db =
                    log_spectral_distance(x.samples, adv.samples, kMetricFrameLen, kMetricHop);
                r.mfcc_cos_dist = mfcc_cosine_distance(x, adv);
                rows.push_back(std::move(r));
                labels.push_back(e.speaker);
            }
            if (rows.empty()) return fail("eval", "no adversarial clips found in " + eval_adv);
            write_report_csv(eval_out, rows);
            auto rep = aggregate_from_records(rows, labels);
            std::cout << "acc_clean=" << rep.acc_clean << " acc_adv=" << rep.acc_adv
                      << " S=" << rep.success_untargeted << "\n";
            return 0;
        }
        if (*report) {
            auto rows = read_report_csv(rep_csv);
            auto manifest = load_manifest(rep_data);
            std::vector<int> labels;
            for (const auto& r : rows) labels.push_back(r.speaker);
            auto rep = aggregate_from_records(rows, labels);
            rep.corpus_hash = corpus_content_hash(manifest);
            // no config is available when aggregating a bare csv
            write_report_json(rep_json, rep, nullptr);
            std::cout << "wrote " << rep_json << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        return fail(app.get_subcommands().empty() ? "cli"
                                                  : app.get_subcommands().front()->get_name(),
                    e.what());
    }
    return 0;
}
