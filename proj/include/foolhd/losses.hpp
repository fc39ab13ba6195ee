#pragma once

#include "foolhd/tensor.hpp"

#include <vector>

namespace foolhd {

struct LossBreakdown {
    double perceptual = 0.0;
    double adversarial = 0.0;
    double total = 0.0;
    std::vector<double> frame_cosines;
};

// Cosine similarity with eps-guarded denominators, clamped to [-1, 1].
double cosine_similarity(const std::vector<double>& f, const std::vector<double>& g,
                         double eps = 1e-12);

// Differentiable versions operate on T x F feature tensors / logit tensors.
TensorPtr cosine_similarity_op(Tape& tape, const TensorPtr& f, const TensorPtr& g,
                               double eps = 1e-12);

// sum_t (1 - S_cos(f_t, g_t)) over matching T x F feature matrices.
TensorPtr perceptual_loss_op(Tape& tape, const TensorPtr& f_mat, const TensorPtr& g_mat,
                             double eps = 1e-12);
double perceptual_loss(const std::vector<double>& f_mat, const std::vector<double>& g_mat,
                       int T, int F, std::vector<double>* frame_cosines = nullptr);

// z_y - max_{i != y} z_i ; negative iff misclassified.
TensorPtr adversarial_loss_untargeted_op(Tape& tape, const TensorPtr& logits, int y);
double adversarial_loss_untargeted(const std::vector<double>& logits, int y);

// max_{i != t} z_i - z_t ; negative iff prediction == target.
TensorPtr adversarial_loss_targeted_op(Tape& tape, const TensorPtr& logits, int y_targ);
double adversarial_loss_targeted(const std::vector<double>& logits, int y_targ);

// Plain sum of the two terms; adv_weight is an optional extension, 1 by default.
TensorPtr total_loss_op(Tape& tape, const TensorPtr& perceptual, const TensorPtr& adversarial,
                        double adv_weight = 1.0);

TensorPtr mse_loss_op(Tape& tape, const TensorPtr& x, const TensorPtr& x_adv);
double mse_loss(const std::vector<double>& x, const std::vector<double>& x_adv);

// Deterministic argmax with lowest-index tie break.
int argmax(const std::vector<double>& v);

}  // namespace foolhd
