#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "foolhd/attacks.hpp"
#include "foolhd/wav.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace foolhd;
using namespace foolhd::testutil;

namespace {

// Small trained-ish model + clip, shared by the attack tests. The model is
// random (untrained); attack mechanics do not depend on its quality.
struct Fixture {
    XVectorModel model;
    AudioClip clip;
    int label;

    Fixture() {
        std::mt19937_64 rng(50);
        model = XVectorModel::make(30, 4, rng, 16, 8, 24, 16, 0.0);
        clip.sample_rate = 8000;
        clip.samples.resize(4000);
        for (int i = 0; i < 4000; ++i) {
            clip.samples[i] = 0.25 * std::sin(2.0 * M_PI * 350.0 * i / 8000.0) +
                              0.1 * std::sin(2.0 * M_PI * 1200.0 * i / 8000.0);
        }
        label = evaluate_prediction(model, clip);
    }
};

}  // namespace

TEST_CASE("choose_random_target: exclusion, forced choice, uniformity") {
    std::mt19937_64 rng(51);
    for (int i = 0; i < 100; ++i) CHECK(choose_random_target(0, 2, rng) == 1);
    for (int i = 0; i < 10000; ++i) CHECK(choose_random_target(3, 10, rng) != 3);
    std::vector<int> counts(10, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) ++counts[choose_random_target(4, 10, rng)];
    CHECK(counts[4] == 0);
    for (int c = 0; c < 10; ++c) {
        if (c == 4) continue;
        const double freq = static_cast<double>(counts[c]) / draws;
        CHECK(std::abs(freq - 1.0 / 9.0) <= 0.01);
    }
    CHECK_THROWS_AS(choose_random_target(0, 1, rng), ContractViolation);
}

TEST_CASE("attack config factories and validation") {
    CHECK(AttackConfig::foolhd().max_iterations == 500);
    CHECK(AttackConfig::foolhd().mode == AttackMode::Untargeted);
    CHECK(AttackConfig::foolhd_targeted().max_iterations == 1000);
    CHECK(AttackConfig::foolhd_targeted().mode == AttackMode::Targeted);
    CHECK(AttackConfig::foolhd_mse().loss_variant == LossVariant::Mse);
    CHECK(AttackConfig::foolhd_noskip().skip_enabled == false);
    AttackConfig bad = AttackConfig::foolhd();
    bad.max_iterations = 0;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
    CHECK(AttackConfig::foolhd().lr == 1e-3);
    CHECK(AttackConfig::foolhd().weight_decay == 1e-5);
    CHECK(AttackConfig::foolhd().dropout == 1e-3);
    CHECK(AttackConfig::foolhd().epsilon == 0.004);
    CHECK(AttackConfig::foolhd().bim_iterations == 10);
}

TEST_CASE("fgsm: epsilon 0 identity, l-inf bound, length preserved") {
    Fixture fx;
    auto r0 = fgsm_attack(fx.clip, fx.label, fx.model, 0.0);
    CHECK(r0.adversarial == fx.clip.samples);

    auto r = fgsm_attack(fx.clip, fx.label, fx.model, 0.004);
    REQUIRE(r.adversarial.size() == fx.clip.samples.size());
    int moved = 0;
    for (size_t i = 0; i < r.adversarial.size(); ++i) {
        const double d = std::abs(r.adversarial[i] - fx.clip.samples[i]);
        CHECK(d <= 0.004 + 1e-15);
        if (d > 0) ++moved;
    }
    CHECK(moved > 0);  // gradient is not identically zero
    CHECK(r.iterations == 1);
    CHECK(r.label == fx.label);
    // success flag consistent with the reported prediction
    CHECK(r.success == (r.prediction != fx.label));
}

TEST_CASE("bim: single iteration equals fgsm exactly; ball projection invariant") {
    Fixture fx;
    auto f = fgsm_attack(fx.clip, fx.label, fx.model, 0.004);
    auto b1 = bim_attack(fx.clip, fx.label, fx.model, 0.004, 1);
    CHECK(b1.adversarial == f.adversarial);

    auto b = bim_attack(fx.clip, fx.label, fx.model, 0.004, 5);
    for (size_t i = 0; i < b.adversarial.size(); ++i) {
        CHECK(std::abs(b.adversarial[i] - fx.clip.samples[i]) <= 0.004 + 1e-15);
        CHECK(b.adversarial[i] >= -1.0);
        CHECK(b.adversarial[i] <= 1.0);
    }
    CHECK_THROWS_AS(bim_attack(fx.clip, fx.label, fx.model, 0.004, 0), ContractViolation);
}

TEST_CASE("foolhd attack: determinism, trace, pool optimality, goal-check soundness") {
    Fixture fx;
    AttackConfig cfg = AttackConfig::foolhd();
    cfg.max_iterations = 4;
    cfg.gca_width = 8;

    auto run = [&](uint64_t seed) {
        std::mt19937_64 rng(seed);
        return foolhd_attack(fx.clip, fx.label, fx.model, cfg, rng);
    };
    auto r1 = run(7), r2 = run(7);
    CHECK(r1.adversarial == r2.adversarial);
    REQUIRE(r1.trace.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(r1.trace[i].total == r2.trace[i].total);
        CHECK(r1.trace[i].total ==
              doctest::Approx(r1.trace[i].perceptual + r1.trace[i].adversarial).epsilon(1e-12));
    }
    CHECK(r1.adversarial.size() == fx.clip.samples.size());
    CHECK(r1.iterations == 4);

    // pool entries all satisfy the goal; returned loss is the pool minimum
    for (const auto& e : r1.pool.entries) CHECK(e.predicted != fx.label);
    if (!r1.pool.empty()) {
        for (const auto& e : r1.pool.entries)
            CHECK(r1.pool.best_loss <= e.imperceptibility_loss);
        // success flag re-verified through quantization + fresh VAD
        AudioClip q{r1.adversarial, 8000};
        CHECK(r1.prediction == evaluate_prediction(fx.model, q));
        CHECK(r1.success == (r1.prediction != fx.label));
    }
    for (double v : r1.adversarial) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("foolhd targeted mode draws a target and checks the right goal") {
    Fixture fx;
    AttackConfig cfg = AttackConfig::foolhd_targeted();
    cfg.max_iterations = 3;
    cfg.gca_width = 8;
    std::mt19937_64 rng(8);
    auto r = foolhd_attack(fx.clip, fx.label, fx.model, cfg, rng);
    REQUIRE(r.target.has_value());
    CHECK(*r.target != fx.label);
    for (const auto& e : r.pool.entries) CHECK(e.predicted == *r.target);
    CHECK(r.success == (r.prediction == *r.target));

    cfg.target = (fx.label + 1) % 4;
    std::mt19937_64 rng2(8);
    auto rf = foolhd_attack(fx.clip, fx.label, fx.model, cfg, rng2);
    CHECK(*rf.target == (fx.label + 1) % 4);
}

TEST_CASE("foolhd mse variant uses MSE as the pool-selection loss") {
    Fixture fx;
    AttackConfig cfg = AttackConfig::foolhd_mse();
    cfg.max_iterations = 3;
    cfg.gca_width = 8;
    std::mt19937_64 rng(9);
    auto r = foolhd_attack(fx.clip, fx.label, fx.model, cfg, rng);
    CHECK(r.trace.size() == 3);
    if (!r.pool.empty()) {
        // the recorded imperceptibility loss is an MSE: small nonnegative number
        for (const auto& e : r.pool.entries) CHECK(e.imperceptibility_loss >= 0.0);
    }
}

TEST_CASE("foolhd noskip variant runs with the narrower decoder") {
    Fixture fx;
    AttackConfig cfg = AttackConfig::foolhd_noskip();
    cfg.max_iterations = 2;
    cfg.gca_width = 8;
    std::mt19937_64 rng(10);
    auto r = foolhd_attack(fx.clip, fx.label, fx.model, cfg, rng);
    CHECK(r.adversarial.size() == fx.clip.samples.size());
    CHECK(r.trace.size() == 2);
}
