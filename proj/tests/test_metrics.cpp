#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "foolhd/losses.hpp"
#include "foolhd/metrics.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace foolhd;
using namespace foolhd::testutil;

TEST_CASE("accuracy and success rates") {
    CHECK(accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(accuracy({1, 2, 3}, {0, 0, 0}) == 0.0);
    CHECK(accuracy({1, 2, 3, 4}, {1, 2, 3, 0}) == 0.75);
    CHECK_THROWS_AS(accuracy({}, {}), ContractViolation);

    std::vector<int> labels(1000, 0), preds(1000, 1);
    CHECK(success_rate_untargeted(preds, labels) == 1.0);
    for (int i = 0; i < 4; ++i) preds[i] = 0;  // 996/1000 fooled
    CHECK(success_rate_untargeted(preds, labels) == doctest::Approx(0.996));
    // originally-misclassified clip still counts per the literal definition
    CHECK(success_rate_untargeted({2}, {0}) == 1.0);

    std::vector<int> targets(1000, 1);
    std::vector<int> hits(1000, 1);
    CHECK(success_rate_targeted(hits, targets) == 1.0);
    for (int i = 0; i < 8; ++i) hits[i] = 2;  // wrong class but not the target -> failure
    CHECK(success_rate_targeted(hits, targets) == doctest::Approx(0.992));
    CHECK(success_rate_targeted({2}, {1}) == 0.0);
    CHECK_THROWS_AS(success_rate_targeted({}, {}), ContractViolation);
}

TEST_CASE("targeted success implies untargeted success on the same rows") {
    std::mt19937_64 rng(40);
    std::uniform_int_distribution<int> cd(0, 9);
    std::vector<int> labels, targets, preds;
    for (int i = 0; i < 500; ++i) {
        const int y = cd(rng);
        int t = cd(rng);
        while (t == y) t = cd(rng);
        labels.push_back(y);
        targets.push_back(t);
        preds.push_back(cd(rng));
    }
    CHECK(success_rate_targeted(preds, targets) <= success_rate_untargeted(preds, labels));
}

TEST_CASE("segmental SNR anchor cases") {
    std::mt19937_64 rng(41);
    auto x = random_vec(1024, rng);
    CHECK(segmental_snr(x, x, 256, 128) == doctest::Approx(35.0));  // clamp ceiling

    // equal per-frame noise power -> 0 dB: adv = 0 makes the noise equal the signal
    std::vector<double> adv(x.size(), 0.0);
    CHECK(segmental_snr(x, adv, 256, 256) == doctest::Approx(0.0).epsilon(1e-12));

    // two frames with power ratios 100 and 1 -> (20 + 0)/2 = 10 dB
    std::vector<double> sig(8, 1.0), noisy(8);
    for (int i = 0; i < 4; ++i) noisy[i] = 1.0 - 0.1;  // frame 1: ratio 100
    for (int i = 4; i < 8; ++i) noisy[i] = 0.0;        // frame 2: ratio 1
    CHECK(segmental_snr(sig, noisy, 4, 4) == doctest::Approx(10.0).epsilon(1e-12));

    CHECK_THROWS_AS(segmental_snr(x, random_vec(10, rng), 256, 128), ContractViolation);
    CHECK_THROWS_AS(segmental_snr({1.0, 2.0}, {1.0, 2.0}, 256, 128), ContractViolation);
}

TEST_CASE("segmental SNR decreases with noise amplitude") {
    std::mt19937_64 rng(42);
    auto x = random_vec(2048, rng);
    auto noise = random_vec(2048, rng);
    double prev = 1e9;
    for (double amp : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
        std::vector<double> adv(x.size());
        for (size_t i = 0; i < x.size(); ++i) adv[i] = x[i] + amp * noise[i];
        const double snr = segmental_snr(x, adv, 256, 128);
        CHECK(snr <= prev);
        prev = snr;
    }
}

TEST_CASE("log-spectral distance: identity, gain, symmetry") {
    std::mt19937_64 rng(43);
    auto x = random_vec(2048, rng);
    CHECK(log_spectral_distance(x, x, 256, 128) == doctest::Approx(0.0).epsilon(1e-12));

    std::vector<double> x2(x.size());
    for (size_t i = 0; i < x.size(); ++i) x2[i] = 2.0 * x[i];
    // constant 10*log10(4) at every bin above floor
    CHECK(log_spectral_distance(x, x2, 256, 128) ==
          doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-6));

    auto y = random_vec(2048, rng);
    CHECK(log_spectral_distance(x, y, 256, 128) ==
          doctest::Approx(log_spectral_distance(y, x, 256, 128)).epsilon(1e-12));
    CHECK_THROWS_AS(log_spectral_distance(x, random_vec(100, rng), 256, 128), ContractViolation);
}

TEST_CASE("mfcc cosine distance: identity and definitional equality") {
    std::mt19937_64 rng(44);
    AudioClip x{random_vec(2000, rng, -0.4, 0.4), 8000};
    CHECK(mfcc_cosine_distance(x, x) == doctest::Approx(0.0).epsilon(1e-12));

    AudioClip y{random_vec(2000, rng, -0.4, 0.4), 8000};
    const double d = mfcc_cosine_distance(x, y);
    CHECK(d >= 0.0);
    CHECK(d <= 2.0);
    // equals perceptual_loss / T by construction
    const MfccConfig cfg = MfccConfig::perceptual();
    auto fx = mfcc(x, cfg), fy = mfcc(y, cfg);
    CHECK(d == doctest::Approx(perceptual_loss(fx.values, fy.values, fx.T, fx.F) / fx.T)
                   .epsilon(1e-12));
}

TEST_CASE("aggregate metric: mean/stddev/median") {
    auto a = aggregate_metric({1, 2, 3, 4});
    CHECK(a.mean == doctest::Approx(2.5));
    CHECK(a.median == doctest::Approx(2.5));
    CHECK(a.stddev == doctest::Approx(std::sqrt(1.25)).epsilon(1e-12));
    auto b = aggregate_metric({5, 1, 9});
    CHECK(b.median == 5.0);
}
