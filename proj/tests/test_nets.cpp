#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "foolhd/nets.hpp"
#include "test_util.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace foolhd;
using namespace foolhd::testutil;

TEST_CASE("gated conv: zero gate kernels give 0.5*conv_W, zero feature kernels give zeros") {
    std::mt19937_64 rng(21);
    auto layer = GatedConvLayer::make(1, 2, 0.0, rng);
    const int H = 6, W = 5;
    auto x = make_tensor({1, H, W}, random_vec(H * W, rng));

    // zero the gate half of the stacked kernels
    auto gated_zero = layer;
    gated_zero.kernels = make_tensor(layer.kernels->shape, layer.kernels->values, true);
    for (int64_t i = 2 * 9; i < gated_zero.kernels->numel(); ++i)
        gated_zero.kernels->values[i] = 0.0;
    Tape t;
    // pre-norm check: conv with feature kernels only, halved
    auto feat_only = make_tensor({2, 1, 3, 3},
                                 std::vector<double>(layer.kernels->values.begin(),
                                                     layer.kernels->values.begin() + 18));
    auto expect = ops::conv2d(t, x, feat_only);
    auto conv = ops::conv2d(t, x, gated_zero.kernels);
    auto feat = ops::slice(t, conv, 0, 0, 2);
    auto gate = ops::slice(t, conv, 0, 2, 2);
    auto gated = ops::mul(t, feat, ops::sigmoid(t, gate));
    for (int64_t i = 0; i < gated->numel(); ++i)
        CHECK(gated->values[i] == doctest::Approx(0.5 * expect->values[i]).epsilon(1e-12));

    // zero feature half -> pre-norm output all zeros
    auto feat_zero = layer;
    feat_zero.kernels = make_tensor(layer.kernels->shape, layer.kernels->values, true);
    for (int64_t i = 0; i < 18; ++i) feat_zero.kernels->values[i] = 0.0;
    auto conv2 = ops::conv2d(t, x, feat_zero.kernels);
    auto f2 = ops::slice(t, conv2, 0, 0, 2);
    auto g2 = ops::slice(t, conv2, 0, 2, 2);
    auto gated2 = ops::mul(t, f2, ops::sigmoid(t, g2));
    for (double v : gated2->values) CHECK(v == 0.0);
}

TEST_CASE("gated conv gradient vs finite differences") {
    std::mt19937_64 rng(22);
    auto layer = GatedConvLayer::make(2, 2, 0.0, rng);
    auto x = make_tensor({2, 4, 4}, random_vec(32, rng));
    std::mt19937_64 fwd_rng(0);
    auto err = fd_max_rel_err(
        [&](Tape& tp, const std::vector<TensorPtr>& L) {
            GatedConvLayer l = layer;
            l.kernels = L[1];
            l.bn_gamma = L[2];
            l.bn_beta = L[3];
            auto y = gated_conv_forward(tp, l, L[0], false, fwd_rng);
            return ops::reduce_sum(tp, ops::square(tp, y));
        },
        {x, layer.kernels, layer.bn_gamma, layer.bn_beta});
    CHECK(err <= 1e-4);
}

TEST_CASE("GCA structure: skip channels, shape preservation, zero projection") {
    std::mt19937_64 rng(23);
    auto with_skip = Gca::make(8, true, 0.0, rng);
    auto no_skip = Gca::make(8, false, 0.0, rng);
    CHECK(with_skip.decoder[0].c_in == 9);
    CHECK(no_skip.decoder[0].c_in == 8);

    const int frames = 6, bins = 10;
    auto s = make_tensor({frames, bins}, random_vec(frames * bins, rng));
    std::mt19937_64 fwd_rng(0);
    Tape t;
    auto out = gca_forward(t, with_skip, s, false, fwd_rng);
    CHECK(out->shape == Shape{frames, bins});

    // all-zero final projection -> normalized output identically zero
    auto zeroed = with_skip;
    zeroed.out_proj = make_tensor(with_skip.out_proj->shape,
                                  std::vector<double>(with_skip.out_proj->numel(), 0.0), true);
    Tape t2;
    auto out0 = gca_forward(t2, zeroed, s, false, fwd_rng);
    for (double v : out0->values) CHECK(v == 0.0);
}

TEST_CASE("spectrogram normalization and round trip") {
    std::mt19937_64 rng(24);
    // construct mean 3, std 2
    std::vector<double> vals = random_vec(200, rng);
    double m = 0, v = 0;
    for (double x : vals) m += x;
    m /= vals.size();
    for (double& x : vals) x -= m;
    for (double x : vals) v += x * x;
    const double sd = std::sqrt(v / vals.size());
    for (double& x : vals) x = 3.0 + 2.0 * x / sd;

    Tape t;
    auto s = make_constant({20, 10}, vals);
    auto [s_norm, stats] = normalize_spectrogram(t, s);
    CHECK(stats.mean == doctest::Approx(3.0).epsilon(1e-10));
    CHECK(stats.std == doctest::Approx(2.0).epsilon(1e-10));
    double nm = 0, nv = 0;
    for (double x : s_norm->values) nm += x;
    nm /= s_norm->numel();
    for (double x : s_norm->values) nv += (x - nm) * (x - nm);
    CHECK(std::abs(nm) <= 1e-10);
    CHECK(std::abs(std::sqrt(nv / s_norm->numel()) - 1.0) <= 1e-10);

    auto back = denormalize_spectrogram(t, s_norm, stats);
    for (size_t i = 0; i < vals.size(); ++i) CHECK(std::abs(back->values[i] - vals[i]) <= 1e-12);

    // denormalize guarantees the output statistics regardless of its input:
    // feed a tensor that is NOT standardized and check mean/std restore
    std::mt19937_64 rng2(26);
    auto raw = make_tensor({4, 5}, random_vec(20, rng2, -3.0, 7.0));
    auto restored = denormalize_spectrogram(t, raw, stats);
    double rm = 0;
    for (double v : restored->values) rm += v;
    rm /= restored->numel();
    double rv = 0;
    for (double v : restored->values) rv += (v - rm) * (v - rm);
    const double rstd = std::sqrt(rv / restored->numel());
    CHECK(std::abs(rm - stats.mean) <= 1e-10);
    CHECK(std::abs(rstd - stats.std) <= 1e-10);

    auto [cn, cstats] = normalize_spectrogram(t, make_constant({3, 3}, std::vector<double>(9, 4.0)));
    CHECK(cstats.floored);
}

TEST_CASE("attentive pooling: identical frames, uniform attention, finite differences") {
    std::mt19937_64 rng(25);
    const int C = 4, T = 6;
    auto pool = AttentivePooling::make(C, 3, rng);

    // identical frames: mu = the frame, sigma = floor
    std::vector<double> frame = random_vec(C, rng);
    std::vector<double> tiled(static_cast<size_t>(C) * T);
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t) tiled[static_cast<size_t>(c) * T + t] = frame[c];
    Tape tp;
    auto out = attentive_stat_pooling(tp, pool, make_tensor({C, T}, tiled));
    REQUIRE(out->shape == Shape{2 * C});
    for (int c = 0; c < C; ++c) {
        CHECK(out->values[c] == doctest::Approx(frame[c]).epsilon(1e-10));
        CHECK(out->values[C + c] == doctest::Approx(1e-4).epsilon(1e-6));  // sqrt(1e-8)
    }

    // zero scoring head -> plain mean/std pooling
    auto zero_pool = pool;
    zero_pool.v = make_tensor(pool.v->shape, std::vector<double>(pool.v->numel(), 0.0), true);
    auto x = make_tensor({C, T}, random_vec(C * T, rng));
    Tape tp2;
    auto stats = attentive_stat_pooling(tp2, zero_pool, x);
    for (int c = 0; c < C; ++c) {
        double mean = 0, var = 0;
        for (int t = 0; t < T; ++t) mean += x->values[c * T + t];
        mean /= T;
        for (int t = 0; t < T; ++t) {
            const double d = x->values[c * T + t] - mean;
            var += d * d;
        }
        var /= T;
        CHECK(stats->values[c] == doctest::Approx(mean).epsilon(1e-10));
        CHECK(stats->values[C + c] == doctest::Approx(std::sqrt(var + 0.0)).epsilon(1e-4));
    }

    CHECK_THROWS_AS(attentive_stat_pooling(tp2, pool, make_tensor({C, 1}, random_vec(C, rng))),
                    ContractViolation);

    auto err = fd_max_rel_err(
        [&](Tape& tpp, const std::vector<TensorPtr>& L) {
            AttentivePooling p = pool;
            p.w1 = L[1];
            p.b1 = L[2];
            p.v = L[3];
            return ops::reduce_sum(tpp, ops::square(tpp, attentive_stat_pooling(tpp, p, L[0])));
        },
        {x, pool.w1, pool.b1, pool.v});
    CHECK(err <= 1e-4);
}

TEST_CASE("xvector: shape, min frames, permutation symmetry, feature gradient") {
    std::mt19937_64 rng(26);
    const int F = 8, N = 5;
    auto model = XVectorModel::make(F, N, rng, 8, 4, 12, 10, 0.0);
    CHECK(model.min_frames() == 15);

    std::mt19937_64 fwd(0);
    Tape t;
    auto feats = make_tensor({20, F}, random_vec(20 * F, rng));
    auto logits = xvector_forward(t, model, feats, false, fwd);
    CHECK(logits->shape == Shape{N});

    CHECK_THROWS_AS(xvector_forward(t, model, make_tensor({10, F}, random_vec(10 * F, rng)),
                                    false, fwd),
                    ContractViolation);

    // permuting two rows of the logits layer permutes the two logits
    auto permuted = model;
    auto& fc_last = permuted.fc.back();
    auto w = make_tensor(fc_last.weight->shape, fc_last.weight->values, true);
    auto b = make_tensor(fc_last.bias->shape, fc_last.bias->values, true);
    const int in_dim = fc_last.weight->shape[1];
    for (int j = 0; j < in_dim; ++j) std::swap(w->values[1 * in_dim + j], w->values[3 * in_dim + j]);
    std::swap(b->values[1], b->values[3]);
    permuted.fc.back().weight = w;
    permuted.fc.back().bias = b;
    Tape t2;
    auto lp = xvector_forward(t2, permuted, feats, false, fwd);
    CHECK(lp->values[1] == doctest::Approx(logits->values[3]).epsilon(1e-12));
    CHECK(lp->values[3] == doctest::Approx(logits->values[1]).epsilon(1e-12));
    CHECK(lp->values[0] == doctest::Approx(logits->values[0]).epsilon(1e-12));

    auto small_feats = make_tensor({16, F}, random_vec(16 * F, rng));
    auto err = fd_max_rel_err(
        [&](Tape& tp, const std::vector<TensorPtr>& L) {
            std::mt19937_64 r(0);
            auto z = xvector_forward(tp, model, L[0], false, r);
            return ops::reduce_sum(tp, ops::square(tp, z));
        },
        {small_feats});
    CHECK(err <= 1e-4);
}

TEST_CASE("train_classifier: separable toy data, loss trend, determinism") {
    // two "speakers" with disjoint active feature bands
    auto build_data = [](std::mt19937_64& rng) {
        std::vector<FeatureMatrix> feats;
        std::vector<int> labels;
        std::uniform_real_distribution<double> d(0.5, 1.0);
        for (int clip = 0; clip < 6; ++clip)
            for (int spk = 0; spk < 2; ++spk) {
                FeatureMatrix f;
                f.T = 20;
                f.F = 6;
                f.values.assign(static_cast<size_t>(f.T) * f.F, 0.0);
                for (int t = 0; t < f.T; ++t)
                    for (int c = 0; c < 3; ++c)
                        f.values[static_cast<size_t>(t) * f.F + spk * 3 + c] = d(rng);
                feats.push_back(std::move(f));
                labels.push_back(spk);
            }
        return std::make_pair(feats, labels);
    };
    auto run = [&](uint64_t seed) {
        std::mt19937_64 rng(seed);
        auto [feats, labels] = build_data(rng);
        auto model = XVectorModel::make(6, 2, rng, 8, 4, 12, 10, 1e-3);
        TrainHyperparams hp;
        hp.epochs = 20;
        hp.batch_size = 4;
        auto rec = train_classifier(model, feats, labels, hp, rng);
        return std::make_pair(rec, model);
    };
    auto [rec, model] = run(99);
    CHECK(rec.final_accuracy == 1.0);
    REQUIRE(rec.epoch_loss.size() == 20);
    // smoothed monotone trend: last-quarter mean loss below first-quarter mean
    double head = 0, tail = 0;
    for (int i = 0; i < 5; ++i) head += rec.epoch_loss[i];
    for (int i = 15; i < 20; ++i) tail += rec.epoch_loss[i];
    CHECK(tail < head);

    auto [rec2, model2] = run(99);
    for (size_t i = 0; i < model.params().size(); ++i)
        CHECK(model.params()[i]->values == model2.params()[i]->values);

    // degenerate dataset rejected
    std::mt19937_64 rng(1);
    auto m = XVectorModel::make(6, 2, rng, 8, 4, 12, 10, 0.0);
    std::vector<FeatureMatrix> one_feat(1);
    one_feat[0].T = 20;
    one_feat[0].F = 6;
    one_feat[0].values.assign(120, 0.1);
    TrainHyperparams hp;
    CHECK_THROWS_AS(train_classifier(m, one_feat, {0}, hp, rng), ContractViolation);
}

TEST_CASE("checkpoint round trip preserves weights and config echo") {
    std::mt19937_64 rng(27);
    auto model = XVectorModel::make(30, 10, rng);
    const std::string path =
        (std::filesystem::temp_directory_path() / "foolhd_ckpt_test.bin").string();
    save_checkpoint(path, model, "seed = 1\n");
    std::string echo;
    auto loaded = load_checkpoint(path, &echo);
    CHECK(echo == "seed = 1\n");
    CHECK(loaded.n_classes == model.n_classes);
    CHECK(loaded.feat_dim == model.feat_dim);
    auto p1 = model.params(), p2 = loaded.params();
    REQUIRE(p1.size() == p2.size());
    for (size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i]->shape == p2[i]->shape);
        CHECK(p1[i]->values == p2[i]->values);
    }
    std::filesystem::remove(path);

    // corrupted magic is rejected
    {
        std::ofstream f(path, std::ios::binary);
        f << "XXXXgarbage";
    }
    CHECK_THROWS(load_checkpoint(path));
    std::filesystem::remove(path);
}
