#pragma once

#include "foolhd/dsp.hpp"
#include "foolhd/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace foolhd {

/// Mean/std of a spectrogram, saved so the GCA output can be re-normalized.
struct NormStats {
    double mean = 0.0;
    double std = 1.0;
    bool floored = false;  // true when the input was (near-)constant
};

/// One gated convolutional layer: feature and gate kernels are stored stacked
/// as a single (2*C_out) x C_in x 3 x 3 tensor so both run in one GEMM.
struct GatedConvLayer {
    TensorPtr kernels;  // [2*c_out, c_in, 3, 3]; first c_out rows = features W, rest = gate V
    TensorPtr bn_gamma;
    TensorPtr bn_beta;
    int c_in = 0;
    int c_out = 0;
    double dropout_rate = 0.0;

    static GatedConvLayer make(int c_in, int c_out, double dropout_rate, std::mt19937_64& rng);
    std::vector<TensorPtr> params() const { return {kernels, bn_gamma, bn_beta}; }
};

TensorPtr gated_conv_forward(Tape& tape, const GatedConvLayer& layer, const TensorPtr& x,
                             bool training, std::mt19937_64& rng);

/// Gated Convolutional Autoencoder: 3 gated encoder layers, 4 gated decoder
/// layers plus an ungated linear 3x3 projection back to one channel. The
/// encoder output is channel-concatenated with the input when skip is on.
struct Gca {
    std::vector<GatedConvLayer> encoder;
    std::vector<GatedConvLayer> decoder;
    TensorPtr out_proj;  // [1, width, 3, 3]
    bool skip_enabled = true;
    int width = 64;

    static Gca make(int width, bool skip_enabled, double dropout_rate, std::mt19937_64& rng);
    std::vector<TensorPtr> params() const;
    int64_t param_count() const;
};

// s must be the normalized spectrogram as a frames x bins tensor.
TensorPtr gca_forward(Tape& tape, const Gca& gca, const TensorPtr& s, bool training,
                      std::mt19937_64& rng);

std::pair<TensorPtr, NormStats> normalize_spectrogram(Tape& tape, const TensorPtr& s);
TensorPtr denormalize_spectrogram(Tape& tape, const TensorPtr& s_norm, const NormStats& stats);

NormStats spectrogram_stats(const MdctSpectrogram& spec);

/// Attention head for statistics pooling.
struct AttentivePooling {
    TensorPtr w1;  // [hidden, c]
    TensorPtr b1;  // [hidden, 1]
    TensorPtr v;   // [1, hidden]

    static AttentivePooling make(int c, int hidden, std::mt19937_64& rng);
    std::vector<TensorPtr> params() const { return {w1, b1, v}; }
};

// frames: C x T -> [2C] (attention-weighted mean and std).
TensorPtr attentive_stat_pooling(Tape& tape, const AttentivePooling& pool, const TensorPtr& frames);

struct TdnnLayer {
    TensorPtr kernels;  // [c_out, c_in, k]
    int dilation = 1;
    TensorPtr bn_gamma, bn_beta;

    static TdnnLayer make(int c_in, int c_out, int k, int dilation, std::mt19937_64& rng);
    std::vector<TensorPtr> params() const { return {kernels, bn_gamma, bn_beta}; }
};

struct FcLayer {
    TensorPtr weight;  // [out, in]
    TensorPtr bias;    // [out, 1]
    TensorPtr bn_gamma, bn_beta;  // empty for the final logits layer
    bool has_bn = true;

    static FcLayer make(int in, int out, bool with_bn, std::mt19937_64& rng);
    std::vector<TensorPtr> params() const;
};

/// x-vector style speaker classifier: 5 TDNN layers, attentive statistics
/// pooling, 3 fully connected layers (last one produces the logits).
struct XVectorModel {
    std::vector<TdnnLayer> tdnn;
    AttentivePooling pooling;
    std::vector<FcLayer> fc;
    int n_classes = 0;
    int feat_dim = 0;
    int tdnn_channels = 64;
    double dropout_rate = 1e-3;

    static XVectorModel make(int feat_dim, int n_classes, std::mt19937_64& rng,
                             int tdnn_channels = 64, int pool_hidden = 32,
                             int fc1 = 128, int fc2 = 64, double dropout_rate = 1e-3);
    std::vector<TensorPtr> params() const;
    int64_t param_count() const;

    // Minimum number of feature frames the TDNN stack needs.
    int min_frames() const;
};

// features: T x F tensor -> logits [N].
TensorPtr xvector_forward(Tape& tape, const XVectorModel& model, const TensorPtr& features,
                          bool training, std::mt19937_64& rng);

// Convenience non-differentiable prediction from a feature matrix.
int predict_class(const XVectorModel& model, const FeatureMatrix& features);
std::vector<double> predict_logits(const XVectorModel& model, const FeatureMatrix& features);

struct TrainingRecord {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_accuracy;
    double final_accuracy = 0.0;
};

struct TrainHyperparams {
    int epochs = 30;
    double lr = 1e-3;
    double weight_decay = 0.0;
    int batch_size = 8;
};

TrainingRecord train_classifier(XVectorModel& model, const std::vector<FeatureMatrix>& features,
                                const std::vector<int>& labels, const TrainHyperparams& hp,
                                std::mt19937_64& rng);

// Checkpoint container: magic + version + JSON header + raw doubles.
void save_checkpoint(const std::string& path, const XVectorModel& model,
                     const std::string& config_echo);
XVectorModel load_checkpoint(const std::string& path, std::string* config_echo = nullptr);

}  // namespace foolhd
