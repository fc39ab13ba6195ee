#include "foolhd/losses.hpp"

#include <algorithm>
#include <cmath>

namespace foolhd {

int argmax(const std::vector<double>& v) {
    if (v.empty()) throw ContractViolation("argmax of empty vector");
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

double cosine_similarity(const std::vector<double>& f, const std::vector<double>& g, double eps) {
    if (f.size() != g.size() || f.empty()) throw ContractViolation("cosine_similarity size mismatch");
    double dot = 0, nf = 0, ng = 0;
    for (size_t i = 0; i < f.size(); ++i) {
        dot += f[i] * g[i];
        nf += f[i] * f[i];
        ng += g[i] * g[i];
    }
    const double denom = std::max(std::sqrt(nf), eps) * std::max(std::sqrt(ng), eps);
    return std::clamp(dot / denom, -1.0, 1.0);
}

namespace {

// Per-row cosine similarities of two T x F tensors -> [T].
TensorPtr row_cosines(Tape& tape, const TensorPtr& f, const TensorPtr& g, double eps) {
    auto dot = ops::reduce_sum(tape, ops::mul(tape, f, g), 1);
    auto nf = ops::sqrt(tape, ops::clamp_min(tape, ops::reduce_sum(tape, ops::square(tape, f), 1), eps * eps));
    auto ng = ops::sqrt(tape, ops::clamp_min(tape, ops::reduce_sum(tape, ops::square(tape, g), 1), eps * eps));
    auto sim = ops::div(tape, dot, ops::mul(tape, nf, ng));
    // clamp to [-1,1]; gradient passes only strictly inside
    auto lo = ops::clamp_min(tape, sim, -1.0);
    return ops::neg(tape, ops::clamp_min(tape, ops::neg(tape, lo), -1.0));
}

}  // namespace

TensorPtr cosine_similarity_op(Tape& tape, const TensorPtr& f, const TensorPtr& g, double eps) {
    if (f->shape != g->shape) throw ContractViolation("cosine_similarity_op shape mismatch");
    auto frow = f->ndim() == 1 ? ops::reshape(tape, f, {1, static_cast<int>(f->numel())}) : f;
    auto grow = g->ndim() == 1 ? ops::reshape(tape, g, {1, static_cast<int>(g->numel())}) : g;
    return ops::reshape(tape, row_cosines(tape, frow, grow, eps), {1});
}

TensorPtr perceptual_loss_op(Tape& tape, const TensorPtr& f_mat, const TensorPtr& g_mat, double eps) {
    if (f_mat->ndim() != 2 || g_mat->ndim() != 2) {
        throw ContractViolation("perceptual_loss expects T x F feature matrices");
    }
    if (f_mat->shape != g_mat->shape) {
        throw ContractViolation("perceptual_loss frame-count/shape mismatch: " + shape_str(f_mat->shape) +
                                " vs " + shape_str(g_mat->shape));
    }
    const int T = f_mat->shape[0];
    auto sims = row_cosines(tape, f_mat, g_mat, eps);
    return ops::add_scalar(tape, ops::neg(tape, ops::reduce_sum(tape, sims)), static_cast<double>(T));
}

double perceptual_loss(const std::vector<double>& f_mat, const std::vector<double>& g_mat, int T,
                       int F, std::vector<double>* frame_cosines) {
    if (f_mat.size() != g_mat.size() || static_cast<int64_t>(f_mat.size()) != static_cast<int64_t>(T) * F) {
        throw ContractViolation("perceptual_loss size mismatch");
    }
    double loss = 0.0;
    if (frame_cosines) frame_cosines->clear();
    for (int t = 0; t < T; ++t) {
        std::vector<double> a(f_mat.begin() + static_cast<int64_t>(t) * F,
                              f_mat.begin() + static_cast<int64_t>(t + 1) * F);
        std::vector<double> b(g_mat.begin() + static_cast<int64_t>(t) * F,
                              g_mat.begin() + static_cast<int64_t>(t + 1) * F);
        const double s = cosine_similarity(a, b);
        if (frame_cosines) frame_cosines->push_back(s);
        loss += 1.0 - s;
    }
    return loss;
}

namespace {

TensorPtr runner_up(Tape& tape, const TensorPtr& logits, int excluded) {
    const int N = static_cast<int>(logits->numel());
    if (N < 2) throw ContractViolation("adversarial loss requires N >= 2 classes");
    if (excluded < 0 || excluded >= N) throw ContractViolation("class index out of range");
    std::vector<double> mask(N, 0.0);
    mask[excluded] = -1e30;
    auto masked = ops::add(tape, logits, make_constant({N}, std::move(mask)));
    return ops::reduce_max(tape, masked).value;
}

}  // namespace

TensorPtr adversarial_loss_untargeted_op(Tape& tape, const TensorPtr& logits, int y) {
    auto zy = ops::slice(tape, logits, 0, y, 1);
    return ops::sub(tape, zy, runner_up(tape, logits, y));
}

double adversarial_loss_untargeted(const std::vector<double>& logits, int y) {
    Tape tape;
    return adversarial_loss_untargeted_op(tape, make_constant({static_cast<int>(logits.size())}, logits), y)
        ->item();
}

TensorPtr adversarial_loss_targeted_op(Tape& tape, const TensorPtr& logits, int y_targ) {
    auto zt = ops::slice(tape, logits, 0, y_targ, 1);
    return ops::sub(tape, runner_up(tape, logits, y_targ), zt);
}

double adversarial_loss_targeted(const std::vector<double>& logits, int y_targ) {
    Tape tape;
    return adversarial_loss_targeted_op(tape, make_constant({static_cast<int>(logits.size())}, logits),
                                        y_targ)
        ->item();
}

TensorPtr total_loss_op(Tape& tape, const TensorPtr& perceptual, const TensorPtr& adversarial,
                        double adv_weight) {
    auto adv = adv_weight == 1.0 ? adversarial : ops::scale(tape, adversarial, adv_weight);
    return ops::add(tape, perceptual, adv);
}

TensorPtr mse_loss_op(Tape& tape, const TensorPtr& x, const TensorPtr& x_adv) {
    if (x->numel() != x_adv->numel()) throw ContractViolation("mse_loss length mismatch");
    return ops::reduce_mean(tape, ops::square(tape, ops::sub(tape, x, x_adv)));
}

double mse_loss(const std::vector<double>& x, const std::vector<double>& x_adv) {
    if (x.size() != x_adv.size()) throw ContractViolation("mse_loss length mismatch");
    double s = 0;
    for (size_t i = 0; i < x.size(); ++i) s += (x[i] - x_adv[i]) * (x[i] - x_adv[i]);
    return s / x.size();
}

}  // namespace foolhd
