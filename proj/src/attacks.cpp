#include "foolhd/attacks.hpp"

#include "foolhd/losses.hpp"
#include "foolhd/wav.hpp"

#include <algorithm>
#include <cmath>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace foolhd {

namespace {

// The per-iteration graphs allocate and free hundreds of MB; without these
// thresholds glibc returns the pages to the kernel each iteration and the
// run spends a third of its time in page faults.
void tune_allocator() {
#if defined(__GLIBC__)
    static const bool done = [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)done;
#endif
}

}  // namespace

void AttackConfig::validate() const {
    if (max_iterations < 1) throw ContractViolation("AttackConfig: M must be >= 1");
    if (!(lr > 0.0)) throw ContractViolation("AttackConfig: lr must be positive");
    if (!(epsilon > 0.0)) throw ContractViolation("AttackConfig: epsilon must be positive");
    if (bim_iterations < 1) throw ContractViolation("AttackConfig: bim_iterations must be >= 1");
}

AttackConfig AttackConfig::foolhd() {
    AttackConfig c;
    c.mode = AttackMode::Untargeted;
    c.max_iterations = 500;
    return c;
}

AttackConfig AttackConfig::foolhd_targeted() {
    AttackConfig c;
    c.mode = AttackMode::Targeted;
    c.max_iterations = 1000;
    return c;
}

AttackConfig AttackConfig::foolhd_mse() {
    AttackConfig c = foolhd();
    c.loss_variant = LossVariant::Mse;
    return c;
}

AttackConfig AttackConfig::foolhd_noskip() {
    AttackConfig c = foolhd();
    c.skip_enabled = false;
    return c;
}

int choose_random_target(int y, int n, std::mt19937_64& rng) {
    if (n < 2) throw ContractViolation("choose_random_target requires >= 2 classes");
    if (y < 0 || y >= n) throw ContractViolation("choose_random_target: label out of range");
    std::uniform_int_distribution<int> dist(0, n - 2);
    const int draw = dist(rng);
    return draw >= y ? draw + 1 : draw;
}

namespace {

AudioClip quantized_copy(const std::vector<double>& samples, int sample_rate) {
    AudioClip q;
    q.sample_rate = sample_rate;
    q.samples.resize(samples.size());
    for (size_t i = 0; i < samples.size(); ++i)
        q.samples[i] = roundtrip_sample(std::clamp(samples[i], -1.0, 1.0));
    return q;
}

FeatureMatrix classifier_features(const AudioClip& clip) {
    return mfcc(clip, MfccConfig::classifier_frontend());
}

bool goal_met(const AttackConfig& cfg, int pred, int y, int y_targ) {
    return cfg.mode == AttackMode::Untargeted ? pred != y : pred == y_targ;
}

// Final verification and metric fill-in shared by all attacks.
void finalize_result(AttackResult& r, const AudioClip& x, const XVectorModel& model,
                     const AttackConfig& cfg) {
    AudioClip q = quantized_copy(r.adversarial, x.sample_rate);
    auto logits = predict_logits(model, classifier_features(q));
    r.prediction = argmax(logits);
    r.success = goal_met(cfg, r.prediction, r.label, r.target.value_or(-1));
    const MfccConfig pcfg = MfccConfig::perceptual();
    FeatureMatrix fx = mfcc(x, pcfg);
    FeatureMatrix fa = mfcc(q, pcfg);
    r.final_perceptual = perceptual_loss(fx.values, fa.values, fx.T, fx.F);
    r.final_adversarial = cfg.mode == AttackMode::Untargeted
                              ? adversarial_loss_untargeted(logits, r.label)
                              : adversarial_loss_targeted(logits, *r.target);
}

}  // namespace

int evaluate_prediction(const XVectorModel& model, const AudioClip& clip) {
    AudioClip q = quantized_copy(clip.samples, clip.sample_rate);
    return predict_class(model, classifier_features(q));
}

AttackResult foolhd_attack(const AudioClip& x, int y, const XVectorModel& model,
                           const AttackConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    tune_allocator();
    const int64_t D = x.length();
    const MfccConfig frontend = MfccConfig::classifier_frontend();
    const MfccConfig pcfg = MfccConfig::perceptual();

    AttackResult result;
    result.label = y;
    if (cfg.mode == AttackMode::Targeted) {
        result.target = cfg.target ? *cfg.target : choose_random_target(y, model.n_classes, rng);
    }
    const int y_targ = result.target.value_or(-1);

    // VAD mask frozen on the original clip for the whole optimization.
    const VadMask frozen_vad = energy_vad_mask(x, frontend);

    MdctSpectrogram spec = mdct(x, cfg.mdct_frame_len);
    Tape const_tape;
    auto s_raw = make_constant({spec.frames, spec.bins}, spec.coeffs);
    auto [s_norm_c, stats] = normalize_spectrogram(const_tape, s_raw);
    auto s_norm = make_constant(s_norm_c->shape, s_norm_c->values);

    FeatureMatrix fx = mfcc(x, pcfg);
    auto fx_const = make_constant({fx.T, fx.F}, fx.values);
    auto x_const = make_constant({static_cast<int>(D)}, x.samples);

    Gca gca = Gca::make(cfg.gca_width, cfg.skip_enabled, cfg.dropout, rng);
    AdamOptimizer opt(gca.params(), cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);

    std::vector<double> last_eval_clip = x.samples;
    std::mt19937_64 eval_rng(0);  // dropout disabled in eval passes; stream unused

    for (int m = 1; m <= cfg.max_iterations; ++m) {
        // training pass: GCA dropout active
        {
            Tape tape;
            auto out_norm = gca_forward(tape, gca, s_norm, /*training=*/true, rng);
            auto s_adv = denormalize_spectrogram(tape, out_norm, stats);
            auto x_adv = imdct_op(tape, s_adv, cfg.mdct_frame_len, D);

            TensorPtr lp;
            if (cfg.loss_variant == LossVariant::Perceptual) {
                auto f_adv = mfcc_op(tape, x_adv, pcfg);
                lp = perceptual_loss_op(tape, fx_const, f_adv);
            } else {
                lp = mse_loss_op(tape, x_const, x_adv);
            }
            auto f_cls = mfcc_op(tape, x_adv, frontend, &frozen_vad);
            auto logits = xvector_forward(tape, model, f_cls, /*training=*/false, rng);
            auto la = cfg.mode == AttackMode::Untargeted
                          ? adversarial_loss_untargeted_op(tape, logits, y)
                          : adversarial_loss_targeted_op(tape, logits, y_targ);
            auto loss = total_loss_op(tape, lp, la);
            result.trace.push_back({loss->item(), lp->item(), la->item()});
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
        }
        // evaluation pass: dropout off. The candidate is judged exactly as it
        // would leave the toolkit — clamped, PCM16 round-tripped, fresh VAD —
        // so a goal-satisfying pool entry always re-verifies from the
        // serialized waveform.
        {
            Tape tape;
            auto out_norm = gca_forward(tape, gca, s_norm, /*training=*/false, eval_rng);
            auto s_adv = denormalize_spectrogram(tape, out_norm, stats);
            auto x_adv = imdct_op(tape, s_adv, cfg.mdct_frame_len, D);
            last_eval_clip = x_adv->values;
            AudioClip q = quantized_copy(x_adv->values, x.sample_rate);
            const int pred = predict_class(model, classifier_features(q));
            if (goal_met(cfg, pred, y, y_targ)) {
                double loss;
                if (cfg.loss_variant == LossVariant::Perceptual) {
                    FeatureMatrix fq = mfcc(q, pcfg);
                    loss = perceptual_loss(fx.values, fq.values, fx.T, fx.F);
                } else {
                    loss = mse_loss(x.samples, q.samples);
                }
                result.pool.entries.push_back({m, loss, pred});
                if (loss < result.pool.best_loss) {
                    result.pool.best_loss = loss;
                    result.pool.best_clip = x_adv->values;
                    result.pool.best_iteration = m;
                    result.pool.best_predicted = pred;
                }
            }
        }
    }

    result.iterations = cfg.max_iterations;
    result.adversarial = result.pool.empty() ? last_eval_clip : result.pool.best_clip;
    // serialization clamp happens here (and identically in write_wav)
    for (double& v : result.adversarial) v = std::clamp(v, -1.0, 1.0);
    finalize_result(result, x, model, cfg);
    return result;
}

namespace {

// Gradient of cross-entropy on the true class w.r.t. the waveform, through
// the frozen-VAD classifier front end.
std::vector<double> waveform_ce_gradient(const std::vector<double>& samples, int y,
                                         const XVectorModel& model, const VadMask& frozen_vad) {
    Tape tape;
    std::mt19937_64 rng(0);
    auto x_t = make_tensor({static_cast<int>(samples.size())}, samples, /*requires_grad=*/true);
    auto feats = mfcc_op(tape, x_t, MfccConfig::classifier_frontend(), &frozen_vad);
    auto logits = xvector_forward(tape, model, feats, /*training=*/false, rng);
    auto probs = ops::softmax(tape, logits);
    auto ce = ops::neg(tape, ops::log(tape, ops::slice(tape, probs, 0, y, 1)));
    tape.backward(ce);
    return x_t->grad;
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

AttackResult fgsm_attack(const AudioClip& x, int y, const XVectorModel& model, double epsilon) {
    tune_allocator();
    AttackResult result;
    result.label = y;
    const VadMask frozen_vad = energy_vad_mask(x, MfccConfig::classifier_frontend());
    auto grad = waveform_ce_gradient(x.samples, y, model, frozen_vad);
    result.adversarial.resize(x.samples.size());
    for (size_t i = 0; i < x.samples.size(); ++i)
        result.adversarial[i] = std::clamp(x.samples[i] + epsilon * sign(grad[i]), -1.0, 1.0);
    result.iterations = 1;
    AttackConfig cfg;
    cfg.mode = AttackMode::Untargeted;
    finalize_result(result, x, model, cfg);
    return result;
}

AttackResult bim_attack(const AudioClip& x, int y, const XVectorModel& model, double epsilon,
                        int iterations) {
    if (iterations < 1) throw ContractViolation("bim_attack requires iterations >= 1");
    tune_allocator();
    AttackResult result;
    result.label = y;
    const VadMask frozen_vad = energy_vad_mask(x, MfccConfig::classifier_frontend());
    const double alpha = iterations == 1 ? epsilon : 2.0 * epsilon / iterations;
    std::vector<double> adv = x.samples;
    for (int it = 0; it < iterations; ++it) {
        auto grad = waveform_ce_gradient(adv, y, model, frozen_vad);
        for (size_t i = 0; i < adv.size(); ++i) {
            double v = adv[i] + alpha * sign(grad[i]);
            v = std::clamp(v, x.samples[i] - epsilon, x.samples[i] + epsilon);
            adv[i] = std::clamp(v, -1.0, 1.0);
        }
    }
    result.adversarial = std::move(adv);
    result.iterations = iterations;
    AttackConfig cfg;
    cfg.mode = AttackMode::Untargeted;
    finalize_result(result, x, model, cfg);
    return result;
}

}  // namespace foolhd
