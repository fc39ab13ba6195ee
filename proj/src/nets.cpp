#include "foolhd/nets.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace foolhd {

namespace {

constexpr double kBnEps = 1e-8;
constexpr double kStdFloor = 1e-8;

TensorPtr he_init(Shape shape, int fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = dist(rng);
    return make_tensor(std::move(shape), std::move(v), true);
}

}  // namespace

// ---- gated conv layer ------------------------------------------------------

GatedConvLayer GatedConvLayer::make(int c_in, int c_out, double dropout_rate, std::mt19937_64& rng) {
    GatedConvLayer l;
    l.c_in = c_in;
    l.c_out = c_out;
    l.dropout_rate = dropout_rate;
    l.kernels = he_init({2 * c_out, c_in, 3, 3}, c_in * 9, rng);
    l.bn_gamma = full({c_out}, 1.0, true);
    l.bn_beta = full({c_out}, 0.0, true);
    return l;
}

TensorPtr gated_conv_forward(Tape& tape, const GatedConvLayer& layer, const TensorPtr& x,
                             bool training, std::mt19937_64& rng) {
    if (x->ndim() != 3 || x->shape[0] != layer.c_in) {
        throw ContractViolation("gated_conv_forward: expected " + std::to_string(layer.c_in) +
                                " input channels, got " + shape_str(x->shape));
    }
    auto both = ops::conv2d(tape, x, layer.kernels);  // [2*c_out, H, W]
    auto feat = ops::slice(tape, both, 0, 0, layer.c_out);
    auto gate = ops::slice(tape, both, 0, layer.c_out, layer.c_out);
    auto gated = ops::mul(tape, feat, ops::sigmoid(tape, gate));
    auto normed = ops::batch_norm(tape, gated, layer.bn_gamma, layer.bn_beta, kBnEps);
    return ops::dropout(tape, normed, layer.dropout_rate, training, rng);
}

// ---- GCA -------------------------------------------------------------------

Gca Gca::make(int width, bool skip_enabled, double dropout_rate, std::mt19937_64& rng) {
    Gca g;
    g.width = width;
    g.skip_enabled = skip_enabled;
    g.encoder.push_back(GatedConvLayer::make(1, width, dropout_rate, rng));
    g.encoder.push_back(GatedConvLayer::make(width, width, dropout_rate, rng));
    g.encoder.push_back(GatedConvLayer::make(width, width, dropout_rate, rng));
    const int dec_in = skip_enabled ? width + 1 : width;
    g.decoder.push_back(GatedConvLayer::make(dec_in, width, dropout_rate, rng));
    g.decoder.push_back(GatedConvLayer::make(width, width, dropout_rate, rng));
    g.decoder.push_back(GatedConvLayer::make(width, width, dropout_rate, rng));
    g.decoder.push_back(GatedConvLayer::make(width, width, dropout_rate, rng));
    g.out_proj = he_init({1, width, 3, 3}, width * 9, rng);
    return g;
}

std::vector<TensorPtr> Gca::params() const {
    std::vector<TensorPtr> ps;
    for (const auto& l : encoder)
        for (auto& p : l.params()) ps.push_back(p);
    for (const auto& l : decoder)
        for (auto& p : l.params()) ps.push_back(p);
    ps.push_back(out_proj);
    return ps;
}

int64_t Gca::param_count() const {
    int64_t n = 0;
    for (const auto& p : params()) n += p->numel();
    return n;
}

TensorPtr gca_forward(Tape& tape, const Gca& gca, const TensorPtr& s, bool training,
                      std::mt19937_64& rng) {
    if (s->ndim() != 2) throw ContractViolation("gca_forward expects frames x bins input");
    const int H = s->shape[0], W = s->shape[1];
    auto x = ops::reshape(tape, s, {1, H, W});
    TensorPtr h = x;
    for (const auto& l : gca.encoder) h = gated_conv_forward(tape, l, h, training, rng);
    TensorPtr joint = gca.skip_enabled ? ops::concat(tape, h, x, 0) : h;
    TensorPtr d = joint;
    for (const auto& l : gca.decoder) d = gated_conv_forward(tape, l, d, training, rng);
    auto projected = ops::conv2d(tape, d, gca.out_proj);  // [1, H, W]
    return ops::reshape(tape, projected, {H, W});
}

// ---- spectrogram normalization ---------------------------------------------

std::pair<TensorPtr, NormStats> normalize_spectrogram(Tape& tape, const TensorPtr& s) {
    if (s->numel() == 0) throw ContractViolation("normalize_spectrogram: empty input");
    NormStats st;
    const int64_t n = s->numel();
    double m = 0;
    for (double x : s->values) m += x;
    m /= n;
    double var = 0;
    for (double x : s->values) var += (x - m) * (x - m);
    var /= n;
    st.mean = m;
    st.std = std::sqrt(var);
    if (st.std < kStdFloor) {
        st.std = kStdFloor;
        st.floored = true;
    }
    auto centered = ops::add_scalar(tape, s, -st.mean);
    return {ops::scale(tape, centered, 1.0 / st.std), st};
}

TensorPtr denormalize_spectrogram(Tape& tape, const TensorPtr& s_norm, const NormStats& stats) {
    // Standardize by the tensor's own statistics first (differentiably), so
    // the result is guaranteed to carry the saved mean/std regardless of what
    // the network produced — this is what prevents amplitude mismatches
    // between original and output spectrograms.
    auto mean = ops::reduce_mean(tape, s_norm);
    auto centered = ops::sub(tape, s_norm, mean);
    auto var = ops::reduce_mean(tape, ops::square(tape, centered));
    auto std = ops::sqrt(tape, ops::clamp_min(tape, var, kStdFloor * kStdFloor));
    auto standardized = ops::div(tape, centered, std);
    return ops::add_scalar(tape, ops::scale(tape, standardized, stats.std), stats.mean);
}

NormStats spectrogram_stats(const MdctSpectrogram& spec) {
    Tape tape;
    auto s = make_constant({spec.frames, spec.bins}, spec.coeffs);
    return normalize_spectrogram(tape, s).second;
}

// ---- attentive pooling -----------------------------------------------------

AttentivePooling AttentivePooling::make(int c, int hidden, std::mt19937_64& rng) {
    AttentivePooling p;
    p.w1 = he_init({hidden, c}, c, rng);
    p.b1 = full({hidden, 1}, 0.0, true);
    p.v = he_init({1, hidden}, hidden, rng);
    return p;
}

TensorPtr attentive_stat_pooling(Tape& tape, const AttentivePooling& pool, const TensorPtr& frames) {
    if (frames->ndim() != 2) throw ContractViolation("attentive_stat_pooling expects C x T input");
    const int C = frames->shape[0], T = frames->shape[1];
    if (T < 2) throw ContractViolation("attentive_stat_pooling requires T >= 2 frames");
    auto hidden = ops::tanh(tape, ops::add(tape, ops::matmul(tape, pool.w1, frames), pool.b1));
    auto scores = ops::reshape(tape, ops::matmul(tape, pool.v, hidden), {T});
    auto alpha = ops::softmax(tape, scores);
    auto alpha_col = ops::reshape(tape, alpha, {T, 1});
    auto mean = ops::matmul(tape, frames, alpha_col);                          // [C,1]
    auto second = ops::matmul(tape, ops::square(tape, frames), alpha_col);     // [C,1]
    auto var = ops::sub(tape, second, ops::square(tape, mean));
    auto stddev = ops::sqrt(tape, ops::clamp_min(tape, var, kStdFloor));
    return ops::reshape(tape, ops::concat(tape, mean, stddev, 0), {2 * C});
}

// ---- x-vector model --------------------------------------------------------

TdnnLayer TdnnLayer::make(int c_in, int c_out, int k, int dilation, std::mt19937_64& rng) {
    TdnnLayer l;
    l.kernels = he_init({c_out, c_in, k}, c_in * k, rng);
    l.dilation = dilation;
    l.bn_gamma = full({c_out}, 1.0, true);
    l.bn_beta = full({c_out}, 0.0, true);
    return l;
}

FcLayer FcLayer::make(int in, int out, bool with_bn, std::mt19937_64& rng) {
    FcLayer l;
    l.weight = he_init({out, in}, in, rng);
    l.bias = full({out, 1}, 0.0, true);
    l.has_bn = with_bn;
    if (with_bn) {
        l.bn_gamma = full({out}, 1.0, true);
        l.bn_beta = full({out}, 0.0, true);
    }
    return l;
}

std::vector<TensorPtr> FcLayer::params() const {
    std::vector<TensorPtr> ps{weight, bias};
    if (has_bn) {
        ps.push_back(bn_gamma);
        ps.push_back(bn_beta);
    }
    return ps;
}

XVectorModel XVectorModel::make(int feat_dim, int n_classes, std::mt19937_64& rng,
                                int tdnn_channels, int pool_hidden, int fc1, int fc2,
                                double dropout_rate) {
    XVectorModel m;
    m.feat_dim = feat_dim;
    m.n_classes = n_classes;
    m.tdnn_channels = tdnn_channels;
    m.dropout_rate = dropout_rate;
    const int kk[5] = {5, 3, 3, 1, 1};
    const int dd[5] = {1, 2, 3, 1, 1};
    int c_in = feat_dim;
    for (int i = 0; i < 5; ++i) {
        m.tdnn.push_back(TdnnLayer::make(c_in, tdnn_channels, kk[i], dd[i], rng));
        c_in = tdnn_channels;
    }
    m.pooling = AttentivePooling::make(tdnn_channels, pool_hidden, rng);
    m.fc.push_back(FcLayer::make(2 * tdnn_channels, fc1, true, rng));
    m.fc.push_back(FcLayer::make(fc1, fc2, true, rng));
    m.fc.push_back(FcLayer::make(fc2, n_classes, false, rng));
    return m;
}

std::vector<TensorPtr> XVectorModel::params() const {
    std::vector<TensorPtr> ps;
    for (const auto& l : tdnn)
        for (auto& p : l.params()) ps.push_back(p);
    for (auto& p : pooling.params()) ps.push_back(p);
    for (const auto& l : fc)
        for (auto& p : l.params()) ps.push_back(p);
    return ps;
}

int64_t XVectorModel::param_count() const {
    int64_t n = 0;
    for (const auto& p : params()) n += p->numel();
    return n;
}

int XVectorModel::min_frames() const {
    int span = 0;
    const int kk[5] = {5, 3, 3, 1, 1};
    const int dd[5] = {1, 2, 3, 1, 1};
    for (int i = 0; i < 5; ++i) span += (kk[i] - 1) * dd[i];
    return span + 1;
}

TensorPtr xvector_forward(Tape& tape, const XVectorModel& model, const TensorPtr& features,
                          bool training, std::mt19937_64& rng) {
    if (features->ndim() != 2 || features->shape[1] != model.feat_dim) {
        throw ContractViolation("xvector_forward expects T x " + std::to_string(model.feat_dim) +
                                " features, got " + shape_str(features->shape));
    }
    if (features->shape[0] < model.min_frames()) {
        throw ContractViolation("xvector_forward needs at least " +
                                std::to_string(model.min_frames()) + " frames, got " +
                                std::to_string(features->shape[0]));
    }
    TensorPtr h = ops::transpose2d(tape, features);  // [F, T]
    for (const auto& l : model.tdnn) {
        h = ops::conv1d_dilated(tape, h, l.kernels, l.dilation);
        h = ops::batch_norm(tape, h, l.bn_gamma, l.bn_beta, kBnEps);
        h = ops::relu(tape, h);
        h = ops::dropout(tape, h, model.dropout_rate, training, rng);
    }
    TensorPtr pooled = attentive_stat_pooling(tape, model.pooling, h);  // [2C]
    TensorPtr col = ops::reshape(tape, pooled, {pooled->shape[0], 1});
    for (size_t i = 0; i < model.fc.size(); ++i) {
        const auto& l = model.fc[i];
        col = ops::add(tape, ops::matmul(tape, l.weight, col), l.bias);
        if (l.has_bn) {
            col = ops::batch_norm(tape, col, l.bn_gamma, l.bn_beta, kBnEps, /*whole_tensor=*/true);
            col = ops::relu(tape, col);
            col = ops::dropout(tape, col, model.dropout_rate, training, rng);
        }
    }
    return ops::reshape(tape, col, {model.n_classes});
}

std::vector<double> predict_logits(const XVectorModel& model, const FeatureMatrix& features) {
    Tape tape;
    std::mt19937_64 rng(0);  // unused in eval mode
    auto f = make_constant({features.T, features.F}, features.values);
    return xvector_forward(tape, model, f, /*training=*/false, rng)->values;
}

int predict_class(const XVectorModel& model, const FeatureMatrix& features) {
    auto logits = predict_logits(model, features);
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

// ---- training --------------------------------------------------------------

TrainingRecord train_classifier(XVectorModel& model, const std::vector<FeatureMatrix>& features,
                                const std::vector<int>& labels, const TrainHyperparams& hp,
                                std::mt19937_64& rng) {
    if (features.size() != labels.size()) throw ContractViolation("features/labels size mismatch");
    std::vector<int> classes(labels.begin(), labels.end());
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    if (classes.size() < 2) throw ContractViolation("train_classifier needs >= 2 classes");
    for (int c : classes) {
        if (std::count(labels.begin(), labels.end(), c) < 2) {
            throw ContractViolation("train_classifier needs >= 2 clips per class");
        }
    }

    auto params = model.params();
    AdamOptimizer opt(params, hp.lr, 0.9, 0.999, 1e-8, hp.weight_decay);
    TrainingRecord rec;
    std::vector<size_t> order(features.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        size_t pos = 0;
        while (pos < order.size()) {
            const size_t batch_end = std::min(order.size(), pos + hp.batch_size);
            const double inv_bs = 1.0 / static_cast<double>(batch_end - pos);
            opt.zero_grad();
            for (size_t bi = pos; bi < batch_end; ++bi) {
                const auto& fm = features[order[bi]];
                Tape tape;
                auto f = make_constant({fm.T, fm.F}, fm.values);
                auto logits = xvector_forward(tape, model, f, /*training=*/true, rng);
                auto probs = ops::softmax(tape, logits);
                auto py = ops::slice(tape, probs, 0, labels[order[bi]], 1);
                auto ce = ops::neg(tape, ops::log(tape, py));
                epoch_loss += ce->item();
                tape.backward(ops::scale(tape, ce, inv_bs));
            }
            opt.step();
            pos = batch_end;
        }
        rec.epoch_loss.push_back(epoch_loss / features.size());
        int correct = 0;
        for (size_t i = 0; i < features.size(); ++i)
            if (predict_class(model, features[i]) == labels[i]) ++correct;
        rec.epoch_accuracy.push_back(static_cast<double>(correct) / features.size());
    }
    rec.final_accuracy = rec.epoch_accuracy.empty() ? 0.0 : rec.epoch_accuracy.back();
    return rec;
}

// ---- checkpoint I/O --------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'F', 'H', 'C', 'K'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const XVectorModel& model,
                     const std::string& config_echo) {
    nlohmann::json hdr;
    hdr["config_echo"] = config_echo;
    hdr["feat_dim"] = model.feat_dim;
    hdr["n_classes"] = model.n_classes;
    hdr["tdnn_channels"] = model.tdnn_channels;
    hdr["pool_hidden"] = model.pooling.w1->shape[0];
    hdr["fc1"] = model.fc[0].weight->shape[0];
    hdr["fc2"] = model.fc[1].weight->shape[0];
    hdr["dropout_rate"] = model.dropout_rate;
    auto params = model.params();
    nlohmann::json tensors = nlohmann::json::array();
    int64_t offset = 0;
    for (const auto& p : params) {
        tensors.push_back({{"shape", p->shape}, {"offset", offset}, {"count", p->numel()}});
        offset += p->numel();
    }
    hdr["tensors"] = tensors;
    const std::string hs = hdr.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    f.write(kMagic, 4);
    uint32_t ver = kVersion;
    f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), hs.size());
    for (const auto& p : params)
        f.write(reinterpret_cast<const char*>(p->values.data()), p->numel() * sizeof(double));
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

XVectorModel load_checkpoint(const std::string& path, std::string* config_echo) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("bad checkpoint magic: " + path);
    uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (ver != kVersion) throw std::runtime_error("unsupported checkpoint version");
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    auto hdr = nlohmann::json::parse(hs);
    if (config_echo) *config_echo = hdr.value("config_echo", "");
    std::mt19937_64 rng(0);
    XVectorModel model = XVectorModel::make(hdr["feat_dim"], hdr["n_classes"], rng,
                                            hdr["tdnn_channels"], hdr["pool_hidden"], hdr["fc1"],
                                            hdr["fc2"], hdr["dropout_rate"]);
    auto params = model.params();
    const auto& tensors = hdr["tensors"];
    if (tensors.size() != params.size()) throw std::runtime_error("checkpoint tensor count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        Shape shape = tensors[i]["shape"].get<Shape>();
        if (shape != params[i]->shape) throw std::runtime_error("checkpoint tensor shape mismatch");
        f.read(reinterpret_cast<char*>(params[i]->values.data()), params[i]->numel() * sizeof(double));
    }
    if (!f) throw std::runtime_error("checkpoint truncated: " + path);
    return model;
}

}  // namespace foolhd
