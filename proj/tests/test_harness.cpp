#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "foolhd/harness.hpp"
#include "foolhd/wav.hpp"
#include "test_util.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace foolhd;
using namespace foolhd::testutil;

namespace {

fs::path tmpdir(const std::string& name) {
    auto p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("wav round trip: quantization bound, silence, clamp counting") {
    std::mt19937_64 rng(60);
    const auto dir = tmpdir("foolhd_wav_test");
    AudioClip clip{random_vec(5000, rng), 8000};
    write_wav((dir / "a.wav").string(), clip);
    auto back = read_wav((dir / "a.wav").string());
    REQUIRE(back.samples.size() == clip.samples.size());
    CHECK(back.sample_rate == 8000);
    for (size_t i = 0; i < clip.samples.size(); ++i)
        CHECK(std::abs(back.samples[i] - clip.samples[i]) <= 1.0 / 32768.0);

    AudioClip silence{std::vector<double>(100, 0.0), 8000};
    write_wav((dir / "s.wav").string(), silence);
    for (double v : read_wav((dir / "s.wav").string()).samples) CHECK(v == 0.0);

    AudioClip hot{std::vector<double>{0.5, 1.5, -2.0, 0.1}, 8000};
    auto stats = write_wav((dir / "h.wav").string(), hot);
    CHECK(stats.clamped == 2);
    auto h = read_wav((dir / "h.wav").string());
    CHECK(h.samples[1] == doctest::Approx(32767.0 / 32768.0));
    CHECK(h.samples[2] == -1.0);
    fs::remove_all(dir);
}

TEST_CASE("wav header: canonical 44-byte layout byte-verified") {
    const auto dir = tmpdir("foolhd_wav_hdr");
    AudioClip clip{std::vector<double>{0.0, 0.5}, 8000};
    write_wav((dir / "h.wav").string(), clip);
    std::ifstream f(dir / "h.wav", std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() == 44 + 4);
    // hand-assembled fixture: RIFF size 40, PCM mono 8 kHz 16-bit, data size 4
    const unsigned char expect[44] = {
        'R', 'I', 'F', 'F', 40, 0, 0, 0, 'W', 'A', 'V', 'E', 'f', 'm', 't', ' ',
        16, 0, 0, 0, 1, 0, 1, 0, 0x40, 0x1f, 0, 0, 0x80, 0x3e, 0, 0,
        2, 0, 16, 0, 'd', 'a', 't', 'a', 4, 0, 0, 0};
    for (int i = 0; i < 44; ++i) CHECK(bytes[i] == expect[i]);
    // samples: 0 -> 0x0000, 0.5 -> 16384 = 0x4000 little-endian
    CHECK(bytes[44] == 0);
    CHECK(bytes[45] == 0);
    CHECK(bytes[46] == 0x00);
    CHECK(bytes[47] == 0x40);
    fs::remove_all(dir);
}

TEST_CASE("wav reader rejects malformed input") {
    const auto dir = tmpdir("foolhd_wav_bad");
    {
        std::ofstream f(dir / "bad.wav", std::ios::binary);
        f << "not a riff file at all, padded to be long enough for the header";
    }
    CHECK_THROWS(read_wav((dir / "bad.wav").string()));
    CHECK_THROWS(read_wav((dir / "missing.wav").string()));
    fs::remove_all(dir);
}

TEST_CASE("toy corpus: determinism, counts, manifest consistency") {
    const auto d1 = tmpdir("foolhd_corp1"), d2 = tmpdir("foolhd_corp2");
    auto m1 = synthesize_toy_corpus(d1.string(), 3, 3, 2, 11);
    auto m2 = synthesize_toy_corpus(d2.string(), 3, 3, 2, 11);
    CHECK(m1.entries.size() == 15);
    CHECK(corpus_content_hash(m1) == corpus_content_hash(m2));
    CHECK(m1.n_speakers() == 3);
    CHECK(m1.indices_for_split("train").size() == 9);
    CHECK(m1.indices_for_split("test").size() == 6);

    auto loaded = load_manifest(d1.string());
    REQUIRE(loaded.entries.size() == m1.entries.size());
    for (size_t i = 0; i < loaded.entries.size(); ++i) {
        const auto& e = loaded.entries[i];
        CHECK(e.path == m1.entries[i].path);
        auto clip = read_wav(loaded.clip_path(static_cast<int>(i)));
        CHECK(clip.sample_rate == e.sample_rate);
        CHECK(static_cast<double>(clip.samples.size()) / clip.sample_rate ==
              doctest::Approx(e.duration_s));
        CHECK(clip.samples.size() == 32000);
        for (double v : clip.samples) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    }
    CHECK_THROWS_AS(synthesize_toy_corpus((d1 / "x").string(), 1, 3, 2, 1), ContractViolation);
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("config parsing: schema, unknown keys, types, precedence") {
    const auto dir = tmpdir("foolhd_cfg");
    const auto path = (dir / "run.cfg").string();
    {
        std::ofstream f(path);
        f << "# comment\nschema_version = 1\nattack = foolhd-t\nseed = 5\n"
             "workers = 2\niterations = 50\nlr = 0.002\n";
    }
    auto cfg = config_from_keys(parse_config_file(path));
    CHECK(cfg.attack_kind == "foolhd-t");
    CHECK(cfg.attack.mode == AttackMode::Targeted);
    CHECK(cfg.attack.max_iterations == 50);
    CHECK(cfg.attack.lr == 0.002);
    CHECK(cfg.workers == 2);
    REQUIRE(cfg.seed.has_value());
    CHECK(*cfg.seed == 5);

    // targeted default M = 1000 when not overridden
    {
        std::ofstream f(path);
        f << "schema_version = 1\nattack = foolhd-t\n";
    }
    CHECK(config_from_keys(parse_config_file(path)).attack.max_iterations == 1000);
    {
        std::ofstream f(path);
        f << "schema_version = 1\nattack = foolhd\n";
    }
    CHECK(config_from_keys(parse_config_file(path)).attack.max_iterations == 500);

    // schema violations
    {
        std::ofstream f(path);
        f << "attack = foolhd\n";
    }
    CHECK_THROWS(parse_config_file(path));  // missing schema_version
    {
        std::ofstream f(path);
        f << "schema_version = 1\nbogus_key = 3\n";
    }
    CHECK_THROWS(parse_config_file(path));
    {
        std::ofstream f(path);
        f << "schema_version = 1\nworkers = abc\n";
    }
    CHECK_THROWS(config_from_keys(parse_config_file(path)));

    // precedence: CLI > env > file
    ExperimentConfig pc;
    pc.seed = 1;  // "file"
    setenv("FOOLHD_SEED", "22", 1);
    apply_seed_sources(pc, std::nullopt);
    CHECK(*pc.seed == 22);
    apply_seed_sources(pc, 333);
    CHECK(*pc.seed == 333);
    unsetenv("FOOLHD_SEED");
    ExperimentConfig pc2;
    pc2.seed = 4;
    apply_seed_sources(pc2, std::nullopt);
    CHECK(*pc2.seed == 4);

    // seed is mandatory
    ExperimentConfig no_seed;
    no_seed.dataset_dir = "x";
    no_seed.output_dir = "y";
    CHECK_THROWS(no_seed.validate());
    fs::remove_all(dir);
}

TEST_CASE("report csv round trip and aggregate consistency") {
    const auto dir = tmpdir("foolhd_csv");
    std::vector<PerClipRecord> rows(3);
    rows[0] = {"clip0", 0, 0, 2, std::nullopt, true, 1.5, -0.25, 10, 20.5, 1.25, 0.03};
    rows[1] = {"clip1", 1, 1, 1, std::nullopt, false, 2.5, 0.75, 10, 30.0, 0.5, 0.01};
    rows[2] = {"clip2", 2, 0, 1, std::nullopt, true, 0.5, -1.0, 10, 10.0, 2.0, 0.07};
    const auto csv = (dir / "report.csv").string();
    write_report_csv(csv, rows);
    auto back = read_report_csv(csv);
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(back[i].clip_id == rows[i].clip_id);
        CHECK(back[i].speaker == rows[i].speaker);
        CHECK(back[i].prediction_adv == rows[i].prediction_adv);
        CHECK(back[i].success == rows[i].success);
        CHECK(back[i].l_p == rows[i].l_p);
        CHECK(back[i].seg_snr_db == rows[i].seg_snr_db);
    }
    auto rep = aggregate_from_records(back, {0, 1, 2});
    CHECK(rep.acc_clean == doctest::Approx(2.0 / 3.0));
    CHECK(rep.acc_adv == doctest::Approx(1.0 / 3.0));
    CHECK(rep.success_untargeted == doctest::Approx(2.0 / 3.0));
    CHECK_FALSE(rep.success_targeted.has_value());
    // success restricted to originally-correct clips: clip0 fooled, clip1 not
    CHECK(rep.success_correct_only == doctest::Approx(0.5));
    CHECK(rep.seg_snr.mean == doctest::Approx((20.5 + 30.0 + 10.0) / 3.0));
    fs::remove_all(dir);
}

TEST_CASE("fnv1a content hash is stable and input-sensitive") {
    const std::string a = "hello", b = "hellp";
    const auto ha = fnv1a64(reinterpret_cast<const uint8_t*>(a.data()), a.size());
    const auto hb = fnv1a64(reinterpret_cast<const uint8_t*>(b.data()), b.size());
    CHECK(ha != hb);
    CHECK(ha == fnv1a64(reinterpret_cast<const uint8_t*>(a.data()), a.size()));
}

TEST_CASE("run_experiment end to end: fgsm on a tiny corpus, reproducible and consistent") {
    const auto data = tmpdir("foolhd_exp_data");
    synthesize_toy_corpus(data.string(), 3, 4, 2, 77);

    auto run = [&](const std::string& out, int workers) {
        ExperimentConfig cfg;
        cfg.dataset_dir = data.string();
        cfg.output_dir = out;
        cfg.checkpoint = (fs::path(out) / "model.ckpt").string();
        cfg.attack_kind = "fgsm";
        cfg.seed = 123;
        cfg.workers = workers;
        cfg.train_epochs = 8;
        return run_experiment(cfg);
    };
    const auto o1 = tmpdir("foolhd_exp_o1"), o2 = tmpdir("foolhd_exp_o2"),
               o3 = tmpdir("foolhd_exp_o3");
    auto r1 = run(o1.string(), 1);
    auto r2 = run(o2.string(), 1);
    auto r3 = run(o3.string(), 4);

    auto slurp = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    // same seed -> byte-identical reports, bit-identical WAVs
    CHECK(slurp(o1 / "report.csv") == slurp(o2 / "report.csv"));
    CHECK(slurp(o1 / "report.json") == slurp(o2 / "report.json"));
    for (const auto& e : fs::directory_iterator(o1 / "adv"))
        CHECK(slurp(e.path()) == slurp(o2 / "adv" / e.path().filename()));
    // worker count does not change per-clip rows
    CHECK(slurp(o1 / "report.csv") == slurp(o3 / "report.csv"));

    // aggregate S in JSON equals recomputation from the CSV rows
    auto rows = read_report_csv((o1 / "report.csv").string());
    std::vector<int> labels;
    for (const auto& r : rows) labels.push_back(r.speaker);
    auto re = aggregate_from_records(rows, labels);
    CHECK(re.success_untargeted == doctest::Approx(r1.success_untargeted));
    CHECK(re.acc_clean == doctest::Approx(r1.acc_clean));

    // run log marks completion and echoes the config
    auto log = slurp(o1 / "run.log");
    CHECK(log.find("status = complete") != std::string::npos);
    CHECK(log.find("attack = fgsm") != std::string::npos);
    CHECK(log.find("seed = 123") != std::string::npos);

    // incomplete runs are flagged
    ExperimentConfig bad;
    bad.dataset_dir = (data / "nonexistent").string();
    bad.output_dir = (o1 / "bad").string();
    bad.checkpoint = "nope";
    bad.seed = 1;
    CHECK_THROWS(run_experiment(bad));
    CHECK(slurp(o1 / "bad" / "run.log").find("status = incomplete") != std::string::npos);

    for (const auto& p : {data, o1, o2, o3}) fs::remove_all(p);
}
