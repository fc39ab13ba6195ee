#include "foolhd/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace foolhd {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> v, bool req)
    : shape(std::move(s)), values(std::move(v)), requires_grad(req) {
    for (int e : shape) {
        if (e <= 0) throw ContractViolation("tensor extent must be positive, got shape " + shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw ContractViolation("shape " + shape_str(shape) + " does not match value count " +
                                std::to_string(values.size()));
    }
}

double Tensor::item() const {
    if (!is_scalar()) throw ContractViolation("item() on non-scalar tensor " + shape_str(shape));
    return values[0];
}

void Tensor::ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

TensorPtr make_tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), std::move(values), requires_grad);
}

TensorPtr make_constant(Shape shape, std::vector<double> values) {
    return make_tensor(std::move(shape), std::move(values), false);
}

TensorPtr full(Shape shape, double value, bool requires_grad) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)), value);
    return make_tensor(std::move(shape), std::move(v), requires_grad);
}

TensorPtr scalar_tensor(double value, bool requires_grad) {
    return make_tensor({1}, {value}, requires_grad);
}

void Tape::record(TensorPtr out, std::vector<TensorPtr> inputs, std::function<void()> backward) {
    nodes_.push_back({std::move(out), std::move(inputs), std::move(backward)});
}

void Tape::backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) {
        throw ContractViolation("backward requires a scalar loss, got " + shape_str(loss->shape));
    }
    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->out->grad.empty()) continue;  // not reachable from loss
        it->backward();
        // An intermediate's buffers are dead once its node has propagated:
        // its consumers ran earlier in this reverse sweep and producers only
        // touch their own inputs/outputs. Freeing here caps peak memory on
        // deep graphs (leaves are never node outputs, so their grads survive).
        std::vector<double>().swap(it->out->grad);
        if (it->out != loss) std::vector<double>().swap(it->out->values);
    }
}

namespace ops {
namespace {

bool needs_grad(const TensorPtr& a) { return a && a->requires_grad; }

// ---- broadcasting ----------------------------------------------------------

struct Bcast {
    Shape out_shape;
    std::vector<int64_t> a_stride, b_stride;  // per out-dim, 0 where broadcast
};

Bcast broadcast_shapes(const Shape& a, const Shape& b) {
    const int nd = std::max(a.size(), b.size());
    Bcast r;
    r.out_shape.resize(nd);
    r.a_stride.resize(nd);
    r.b_stride.resize(nd);
    // right-aligned
    std::vector<int> ae(nd, 1), be(nd, 1);
    for (size_t i = 0; i < a.size(); ++i) ae[nd - a.size() + i] = a[i];
    for (size_t i = 0; i < b.size(); ++i) be[nd - b.size() + i] = b[i];
    for (int i = 0; i < nd; ++i) {
        if (ae[i] != be[i] && ae[i] != 1 && be[i] != 1) {
            throw ContractViolation("shapes not broadcast-compatible: " + shape_str(a) + " vs " + shape_str(b));
        }
        r.out_shape[i] = std::max(ae[i], be[i]);
    }
    int64_t as = 1, bs = 1;
    for (int i = nd - 1; i >= 0; --i) {
        r.a_stride[i] = (ae[i] == 1 && r.out_shape[i] != 1) ? 0 : as;
        r.b_stride[i] = (be[i] == 1 && r.out_shape[i] != 1) ? 0 : bs;
        as *= ae[i];
        bs *= be[i];
    }
    return r;
}

template <typename F>
void bcast_apply(const Bcast& bc, F&& f) {
    const int nd = bc.out_shape.size();
    std::vector<int64_t> idx(nd, 0);
    const int64_t n = shape_numel(bc.out_shape);
    int64_t ia = 0, ib = 0;
    for (int64_t lin = 0; lin < n; ++lin) {
        f(lin, ia, ib);
        for (int d = nd - 1; d >= 0; --d) {
            idx[d]++;
            ia += bc.a_stride[d];
            ib += bc.b_stride[d];
            if (idx[d] < bc.out_shape[d]) break;
            ia -= bc.a_stride[d] * bc.out_shape[d];
            ib -= bc.b_stride[d] * bc.out_shape[d];
            idx[d] = 0;
        }
    }
}

using BinFn = double (*)(double, double);
using BinGrad = void (*)(double a, double b, double g, double& da, double& db);

TensorPtr binary_op(Tape& tape, const TensorPtr& a, const TensorPtr& b, BinFn fwd, BinGrad bwd) {
    TensorPtr out;
    const bool same = a->shape == b->shape;
    if (same) {
        std::vector<double> v(a->values.size());
        const double* pa = a->values.data();
        const double* pb = b->values.data();
        for (size_t i = 0; i < v.size(); ++i) v[i] = fwd(pa[i], pb[i]);
        out = make_tensor(a->shape, std::move(v), needs_grad(a) || needs_grad(b));
    } else {
        Bcast bc = broadcast_shapes(a->shape, b->shape);
        std::vector<double> v(static_cast<size_t>(shape_numel(bc.out_shape)));
        bcast_apply(bc, [&](int64_t lin, int64_t ia, int64_t ib) {
            v[lin] = fwd(a->values[ia], b->values[ib]);
        });
        out = make_tensor(bc.out_shape, std::move(v), needs_grad(a) || needs_grad(b));
    }
    if (!out->requires_grad) return out;
    tape.record(out, {a, b}, [a, b, out, fwd, bwd, same]() {
        if (needs_grad(a)) a->ensure_grad();
        if (needs_grad(b)) b->ensure_grad();
        if (same) {
            for (size_t i = 0; i < out->grad.size(); ++i) {
                double da = 0, db = 0;
                bwd(a->values[i], b->values[i], out->grad[i], da, db);
                if (needs_grad(a)) a->grad[i] += da;
                if (needs_grad(b)) b->grad[i] += db;
            }
        } else {
            Bcast bc = broadcast_shapes(a->shape, b->shape);
            bcast_apply(bc, [&](int64_t lin, int64_t ia, int64_t ib) {
                double da = 0, db = 0;
                bwd(a->values[ia], b->values[ib], out->grad[lin], da, db);
                if (needs_grad(a)) a->grad[ia] += da;
                if (needs_grad(b)) b->grad[ib] += db;
            });
        }
    });
    return out;
}

using UnFn = double (*)(double);
// grad given (x, y, g)
using UnGrad = double (*)(double, double, double);

TensorPtr unary_op(Tape& tape, const TensorPtr& a, UnFn fwd, UnGrad bwd) {
    std::vector<double> v(a->values.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = fwd(a->values[i]);
    auto out = make_tensor(a->shape, std::move(v), needs_grad(a));
    if (!out->requires_grad) return out;
    tape.record(out, {a}, [a, out, bwd]() {
        a->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) {
            a->grad[i] += bwd(a->values[i], out->values[i], out->grad[i]);
        }
    });
    return out;
}

void check_positive(const TensorPtr& a, const char* op) {
    for (double x : a->values) {
        if (!(x > 0.0)) {
            throw DomainViolation(std::string(op) + " requires strictly positive inputs, got " +
                                  std::to_string(x));
        }
    }
}

}  // namespace

TensorPtr add(Tape& t, const TensorPtr& a, const TensorPtr& b) {
    return binary_op(t, a, b, [](double x, double y) { return x + y; },
                     [](double, double, double g, double& da, double& db) { da = g; db = g; });
}

TensorPtr sub(Tape& t, const TensorPtr& a, const TensorPtr& b) {
    return binary_op(t, a, b, [](double x, double y) { return x - y; },
                     [](double, double, double g, double& da, double& db) { da = g; db = -g; });
}

TensorPtr mul(Tape& t, const TensorPtr& a, const TensorPtr& b) {
    return binary_op(t, a, b, [](double x, double y) { return x * y; },
                     [](double x, double y, double g, double& da, double& db) { da = g * y; db = g * x; });
}

TensorPtr div(Tape& t, const TensorPtr& a, const TensorPtr& b) {
    for (double y : b->values) {
        if (y == 0.0) throw DomainViolation("division by zero");
    }
    return binary_op(t, a, b, [](double x, double y) { return x / y; },
                     [](double x, double y, double g, double& da, double& db) {
                         da = g / y;
                         db = -g * x / (y * y);
                     });
}

TensorPtr neg(Tape& t, const TensorPtr& a) {
    return unary_op(t, a, [](double x) { return -x; }, [](double, double, double g) { return -g; });
}

TensorPtr log(Tape& t, const TensorPtr& a) {
    check_positive(a, "log");
    return unary_op(t, a, [](double x) { return std::log(x); },
                    [](double x, double, double g) { return g / x; });
}

TensorPtr exp(Tape& t, const TensorPtr& a) {
    return unary_op(t, a, [](double x) { return std::exp(x); },
                    [](double, double y, double g) { return g * y; });
}

TensorPtr sigmoid(Tape& t, const TensorPtr& a) {
    return unary_op(t, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y, double g) { return g * y * (1.0 - y); });
}

TensorPtr tanh(Tape& t, const TensorPtr& a) {
    return unary_op(t, a, [](double x) { return std::tanh(x); },
                    [](double, double y, double g) { return g * (1.0 - y * y); });
}

TensorPtr relu(Tape& t, const TensorPtr& a) {
    return unary_op(t, a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

TensorPtr square(Tape& t, const TensorPtr& a) {
    return unary_op(t, a, [](double x) { return x * x; },
                    [](double x, double, double g) { return 2.0 * x * g; });
}

TensorPtr sqrt(Tape& t, const TensorPtr& a) {
    check_positive(a, "sqrt");
    return unary_op(t, a, [](double x) { return std::sqrt(x); },
                    [](double, double y, double g) { return 0.5 * g / y; });
}

TensorPtr elementwise(Tape& t, EwOp op, const TensorPtr& a, const TensorPtr& b) {
    const bool binary = op == EwOp::Add || op == EwOp::Sub || op == EwOp::Mul || op == EwOp::Div;
    if (binary && !b) throw ContractViolation("binary elementwise op requires two operands");
    if (!binary && b) throw ContractViolation("unary elementwise op takes one operand");
    switch (op) {
        case EwOp::Add: return add(t, a, b);
        case EwOp::Sub: return sub(t, a, b);
        case EwOp::Mul: return mul(t, a, b);
        case EwOp::Div: return div(t, a, b);
        case EwOp::Neg: return neg(t, a);
        case EwOp::Log: return log(t, a);
        case EwOp::Exp: return exp(t, a);
        case EwOp::Sigmoid: return sigmoid(t, a);
        case EwOp::Tanh: return tanh(t, a);
        case EwOp::Relu: return relu(t, a);
        case EwOp::Square: return square(t, a);
        case EwOp::Sqrt: return sqrt(t, a);
    }
    throw ContractViolation("unknown elementwise op");
}

TensorPtr scale(Tape& t, const TensorPtr& a, double c) {
    std::vector<double> v(a->values.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = c * a->values[i];
    auto out = make_tensor(a->shape, std::move(v), needs_grad(a));
    if (!out->requires_grad) return out;
    t.record(out, {a}, [a, out, c]() {
        a->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += c * out->grad[i];
    });
    return out;
}

TensorPtr add_scalar(Tape& t, const TensorPtr& a, double c) {
    std::vector<double> v(a->values.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a->values[i] + c;
    auto out = make_tensor(a->shape, std::move(v), needs_grad(a));
    if (!out->requires_grad) return out;
    t.record(out, {a}, [a, out]() {
        a->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
    });
    return out;
}

TensorPtr clamp_min(Tape& t, const TensorPtr& a, double c) {
    std::vector<double> v(a->values.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::max(a->values[i], c);
    auto out = make_tensor(a->shape, std::move(v), needs_grad(a));
    if (!out->requires_grad) return out;
    t.record(out, {a}, [a, out, c]() {
        a->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) {
            if (a->values[i] > c) a->grad[i] += out->grad[i];
        }
    });
    return out;
}

TensorPtr matmul(Tape& t, const TensorPtr& a, const TensorPtr& b) {
    if (a->ndim() != 2 || b->ndim() != 2) {
        throw ContractViolation("matmul requires 2-D tensors, got " + shape_str(a->shape) + " and " +
                                shape_str(b->shape));
    }
    const int m = a->shape[0], k = a->shape[1], k2 = b->shape[0], n = b->shape[1];
    if (k != k2) {
        throw ContractViolation("matmul inner dimensions disagree: " + shape_str(a->shape) + " x " +
                                shape_str(b->shape));
    }
    std::vector<double> v(static_cast<size_t>(m) * n);
    {
        CMapMat A(a->values.data(), m, k), B(b->values.data(), k, n);
        MapMat C(v.data(), m, n);
        C.noalias() = A * B;
    }
    auto out = make_tensor({m, n}, std::move(v), needs_grad(a) || needs_grad(b));
    if (!out->requires_grad) return out;
    t.record(out, {a, b}, [a, b, out, m, k, n]() {
        CMapMat G(out->grad.data(), m, n);
        if (needs_grad(a)) {
            a->ensure_grad();
            CMapMat B(b->values.data(), k, n);
            MapMat dA(a->grad.data(), m, k);
            dA.noalias() += G * B.transpose();
        }
        if (needs_grad(b)) {
            b->ensure_grad();
            CMapMat A(a->values.data(), m, k);
            MapMat dB(b->grad.data(), k, n);
            dB.noalias() += A.transpose() * G;
        }
    });
    return out;
}

// ---- conv2d (3x3 same, stride 1) -------------------------------------------

namespace {

// col is (C_in*9) x (H*W), row-major
void im2col3x3(const double* in, int C, int H, int W, double* col) {
    const int64_t HW = static_cast<int64_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        const double* plane = in + static_cast<int64_t>(c) * HW;
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                double* row = col + (static_cast<int64_t>(c) * 9 + (dy + 1) * 3 + (dx + 1)) * HW;
                for (int y = 0; y < H; ++y) {
                    double* dst = row + static_cast<int64_t>(y) * W;
                    const int sy = y + dy;
                    if (sy < 0 || sy >= H) {
                        std::memset(dst, 0, sizeof(double) * W);
                        continue;
                    }
                    const double* src = plane + static_cast<int64_t>(sy) * W;
                    int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                    if (x0 > 0) std::memset(dst, 0, sizeof(double) * x0);
                    if (x1 < W) std::memset(dst + x1, 0, sizeof(double) * (W - x1));
                    if (x1 > x0) std::memcpy(dst + x0, src + x0 + dx, sizeof(double) * (x1 - x0));
                }
            }
        }
    }
}

void col2im3x3_acc(const double* col, int C, int H, int W, double* in_grad) {
    const int64_t HW = static_cast<int64_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        double* plane = in_grad + static_cast<int64_t>(c) * HW;
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const double* row = col + (static_cast<int64_t>(c) * 9 + (dy + 1) * 3 + (dx + 1)) * HW;
                for (int y = 0; y < H; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= H) continue;
                    const double* src = row + static_cast<int64_t>(y) * W;
                    double* dst = plane + static_cast<int64_t>(sy) * W;
                    int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                    for (int x = x0; x < x1; ++x) dst[x + dx] += src[x];
                }
            }
        }
    }
}

std::vector<double>& conv_scratch() {
    static thread_local std::vector<double> buf;
    return buf;
}

}  // namespace

TensorPtr conv2d(Tape& t, const TensorPtr& input, const TensorPtr& kernels) {
    if (input->ndim() != 3) throw ContractViolation("conv2d input must be C_in x H x W, got " + shape_str(input->shape));
    if (kernels->ndim() != 4 || kernels->shape[2] != 3 || kernels->shape[3] != 3) {
        throw ContractViolation("conv2d kernels must be C_out x C_in x 3 x 3, got " + shape_str(kernels->shape));
    }
    const int Cin = input->shape[0], H = input->shape[1], W = input->shape[2];
    const int Cout = kernels->shape[0];
    if (kernels->shape[1] != Cin) {
        throw ContractViolation("conv2d channel mismatch: input C_in=" + std::to_string(Cin) +
                                ", kernels expect C_in=" + std::to_string(kernels->shape[1]));
    }
    const int64_t HW = static_cast<int64_t>(H) * W;
    const int K = Cin * 9;
    auto& col = conv_scratch();
    col.resize(static_cast<size_t>(K) * HW);
    im2col3x3(input->values.data(), Cin, H, W, col.data());

    std::vector<double> v(static_cast<size_t>(Cout) * HW);
    {
        CMapMat Wm(kernels->values.data(), Cout, K);
        CMapMat Cm(col.data(), K, HW);
        MapMat Om(v.data(), Cout, HW);
        Om.noalias() = Wm * Cm;
    }
    auto out = make_tensor({Cout, H, W}, std::move(v), needs_grad(input) || needs_grad(kernels));
    if (!out->requires_grad) return out;
    t.record(out, {input, kernels}, [input, kernels, out, Cin, H, W, Cout, K, HW]() {
        CMapMat G(out->grad.data(), Cout, HW);
        if (needs_grad(kernels)) {
            kernels->ensure_grad();
            auto& col = conv_scratch();
            col.resize(static_cast<size_t>(K) * HW);
            im2col3x3(input->values.data(), Cin, H, W, col.data());
            CMapMat Cm(col.data(), K, HW);
            MapMat dW(kernels->grad.data(), Cout, K);
            dW.noalias() += G * Cm.transpose();
        }
        if (needs_grad(input)) {
            input->ensure_grad();
            std::vector<double> dcol(static_cast<size_t>(K) * HW);
            CMapMat Wm(kernels->values.data(), Cout, K);
            MapMat Dc(dcol.data(), K, HW);
            Dc.noalias() = Wm.transpose() * G;
            col2im3x3_acc(dcol.data(), Cin, H, W, input->grad.data());
        }
    });
    return out;
}

TensorPtr conv1d_dilated(Tape& t, const TensorPtr& input, const TensorPtr& kernels, int dilation) {
    if (input->ndim() != 2) throw ContractViolation("conv1d input must be C_in x T, got " + shape_str(input->shape));
    if (kernels->ndim() != 3) throw ContractViolation("conv1d kernels must be C_out x C_in x k");
    if (dilation < 1) throw ContractViolation("dilation must be positive");
    const int Cin = input->shape[0], T = input->shape[1];
    const int Cout = kernels->shape[0], k = kernels->shape[2];
    if (kernels->shape[1] != Cin) throw ContractViolation("conv1d channel mismatch");
    const int span = (k - 1) * dilation + 1;
    if (T < span) {
        throw ContractViolation("conv1d input too short: T=" + std::to_string(T) +
                                ", requires at least " + std::to_string(span));
    }
    const int To = T - (k - 1) * dilation;
    std::vector<double> v(static_cast<size_t>(Cout) * To, 0.0);
    {
        CMapMat In(input->values.data(), Cin, T);
        MapMat Out(v.data(), Cout, To);
        for (int j = 0; j < k; ++j) {
            RowMat Wj(Cout, Cin);
            for (int co = 0; co < Cout; ++co)
                for (int ci = 0; ci < Cin; ++ci)
                    Wj(co, ci) = kernels->values[(static_cast<int64_t>(co) * Cin + ci) * k + j];
            Out.noalias() += Wj * In.block(0, j * dilation, Cin, To);
        }
    }
    auto out = make_tensor({Cout, To}, std::move(v), needs_grad(input) || needs_grad(kernels));
    if (!out->requires_grad) return out;
    t.record(out, {input, kernels}, [input, kernels, out, Cin, T, Cout, k, To, dilation]() {
        CMapMat G(out->grad.data(), Cout, To);
        CMapMat In(input->values.data(), Cin, T);
        if (needs_grad(kernels)) kernels->ensure_grad();
        if (needs_grad(input)) input->ensure_grad();
        for (int j = 0; j < k; ++j) {
            if (needs_grad(kernels)) {
                RowMat dWj = G * In.block(0, j * dilation, Cin, To).transpose();
                for (int co = 0; co < Cout; ++co)
                    for (int ci = 0; ci < Cin; ++ci)
                        kernels->grad[(static_cast<int64_t>(co) * Cin + ci) * k + j] += dWj(co, ci);
            }
            if (needs_grad(input)) {
                RowMat Wj(Cout, Cin);
                for (int co = 0; co < Cout; ++co)
                    for (int ci = 0; ci < Cin; ++ci)
                        Wj(co, ci) = kernels->values[(static_cast<int64_t>(co) * Cin + ci) * k + j];
                MapMat dIn(input->grad.data(), Cin, T);
                dIn.block(0, j * dilation, Cin, To).noalias() += Wj.transpose() * G;
            }
        }
    });
    return out;
}

TensorPtr softmax(Tape& t, const TensorPtr& z) {
    if (z->ndim() != 1) throw ContractViolation("softmax expects a 1-D tensor");
    const size_t n = z->values.size();
    double mx = *std::max_element(z->values.begin(), z->values.end());
    std::vector<double> v(n);
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        v[i] = std::exp(z->values[i] - mx);
        sum += v[i];
    }
    for (size_t i = 0; i < n; ++i) v[i] /= sum;
    auto out = make_tensor(z->shape, std::move(v), needs_grad(z));
    if (!out->requires_grad) return out;
    t.record(out, {z}, [z, out, n]() {
        z->ensure_grad();
        double dot = 0.0;
        for (size_t i = 0; i < n; ++i) dot += out->grad[i] * out->values[i];
        for (size_t i = 0; i < n; ++i) z->grad[i] += out->values[i] * (out->grad[i] - dot);
    });
    return out;
}

// ---- reductions ------------------------------------------------------------

namespace {

struct AxisSplit {
    int64_t outer, extent, inner;
    Shape out_shape;
};

AxisSplit split_axis(const Shape& shape, std::optional<int> axis) {
    AxisSplit s;
    if (!axis) {
        s.outer = 1;
        s.extent = shape_numel(shape);
        s.inner = 1;
        s.out_shape = {1};
        return s;
    }
    int ax = *axis;
    if (ax < 0 || ax >= static_cast<int>(shape.size())) {
        throw ContractViolation("axis " + std::to_string(ax) + " invalid for shape " + shape_str(shape));
    }
    s.outer = 1;
    s.inner = 1;
    for (int i = 0; i < ax; ++i) s.outer *= shape[i];
    s.extent = shape[ax];
    for (size_t i = ax + 1; i < shape.size(); ++i) s.inner *= shape[i];
    s.out_shape = shape;
    s.out_shape.erase(s.out_shape.begin() + ax);
    if (s.out_shape.empty()) s.out_shape = {1};
    return s;
}

}  // namespace

TensorPtr reduce_sum(Tape& t, const TensorPtr& a, std::optional<int> axis) {
    if (a->numel() == 0) throw ContractViolation("empty reduction");
    AxisSplit s = split_axis(a->shape, axis);
    std::vector<double> v(static_cast<size_t>(s.outer * s.inner), 0.0);
    for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t e = 0; e < s.extent; ++e)
            for (int64_t i = 0; i < s.inner; ++i)
                v[o * s.inner + i] += a->values[(o * s.extent + e) * s.inner + i];
    auto out = make_tensor(s.out_shape, std::move(v), needs_grad(a));
    if (!out->requires_grad) return out;
    t.record(out, {a}, [a, out, s]() {
        a->ensure_grad();
        for (int64_t o = 0; o < s.outer; ++o)
            for (int64_t e = 0; e < s.extent; ++e)
                for (int64_t i = 0; i < s.inner; ++i)
                    a->grad[(o * s.extent + e) * s.inner + i] += out->grad[o * s.inner + i];
    });
    return out;
}

TensorPtr reduce_mean(Tape& t, const TensorPtr& a, std::optional<int> axis) {
    AxisSplit s = split_axis(a->shape, axis);
    return scale(t, reduce_sum(t, a, axis), 1.0 / static_cast<double>(s.extent));
}

MaxResult reduce_max(Tape& t, const TensorPtr& a, std::optional<int> axis) {
    if (a->numel() == 0) throw ContractViolation("empty reduction");
    AxisSplit s = split_axis(a->shape, axis);
    std::vector<double> v(static_cast<size_t>(s.outer * s.inner));
    std::vector<int64_t> idx(v.size());
    for (int64_t o = 0; o < s.outer; ++o) {
        for (int64_t i = 0; i < s.inner; ++i) {
            double best = a->values[(o * s.extent) * s.inner + i];
            int64_t bi = 0;
            for (int64_t e = 1; e < s.extent; ++e) {
                double x = a->values[(o * s.extent + e) * s.inner + i];
                if (x > best) {  // ties keep lowest index
                    best = x;
                    bi = e;
                }
            }
            v[o * s.inner + i] = best;
            idx[o * s.inner + i] = bi;
        }
    }
    auto out = make_tensor(s.out_shape, std::move(v), needs_grad(a));
    if (out->requires_grad) {
        auto idx_copy = idx;
        t.record(out, {a}, [a, out, s, idx_copy]() {
            a->ensure_grad();
            for (int64_t o = 0; o < s.outer; ++o)
                for (int64_t i = 0; i < s.inner; ++i)
                    a->grad[(o * s.extent + idx_copy[o * s.inner + i]) * s.inner + i] +=
                        out->grad[o * s.inner + i];
        });
    }
    return {out, std::move(idx)};
}

TensorPtr reduce(Tape& t, ReduceOp op, const TensorPtr& a, std::optional<int> axis) {
    switch (op) {
        case ReduceOp::Sum: return reduce_sum(t, a, axis);
        case ReduceOp::Mean: return reduce_mean(t, a, axis);
        case ReduceOp::MaxWithIndex: return reduce_max(t, a, axis).value;
    }
    throw ContractViolation("unknown reduce op");
}

TensorPtr concat(Tape& t, const TensorPtr& a, const TensorPtr& b, int axis) {
    if (a->ndim() != b->ndim()) throw ContractViolation("concat rank mismatch");
    if (axis < 0 || axis >= a->ndim()) throw ContractViolation("concat axis invalid");
    for (int i = 0; i < a->ndim(); ++i) {
        if (i != axis && a->shape[i] != b->shape[i]) {
            throw ContractViolation("concat non-axis extents differ: " + shape_str(a->shape) + " vs " +
                                    shape_str(b->shape));
        }
    }
    Shape os = a->shape;
    os[axis] += b->shape[axis];
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= os[i];
    for (size_t i = axis + 1; i < os.size(); ++i) inner *= os[i];
    const int64_t ea = a->shape[axis], eb = b->shape[axis];
    std::vector<double> v(static_cast<size_t>(shape_numel(os)));
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(v.data() + (o * (ea + eb)) * inner, a->values.data() + o * ea * inner,
                    sizeof(double) * ea * inner);
        std::memcpy(v.data() + (o * (ea + eb) + ea) * inner, b->values.data() + o * eb * inner,
                    sizeof(double) * eb * inner);
    }
    auto out = make_tensor(os, std::move(v), needs_grad(a) || needs_grad(b));
    if (!out->requires_grad) return out;
    t.record(out, {a, b}, [a, b, out, outer, inner, ea, eb]() {
        if (needs_grad(a)) a->ensure_grad();
        if (needs_grad(b)) b->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
            if (needs_grad(a))
                for (int64_t j = 0; j < ea * inner; ++j)
                    a->grad[o * ea * inner + j] += out->grad[(o * (ea + eb)) * inner + j];
            if (needs_grad(b))
                for (int64_t j = 0; j < eb * inner; ++j)
                    b->grad[o * eb * inner + j] += out->grad[(o * (ea + eb) + ea) * inner + j];
        }
    });
    return out;
}

TensorPtr slice(Tape& t, const TensorPtr& a, int axis, int start, int len) {
    if (axis < 0 || axis >= a->ndim()) throw ContractViolation("slice axis invalid");
    if (start < 0 || len <= 0 || start + len > a->shape[axis]) throw ContractViolation("slice range invalid");
    Shape os = a->shape;
    os[axis] = len;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a->shape[i];
    for (size_t i = axis + 1; i < a->shape.size(); ++i) inner *= a->shape[i];
    const int64_t ea = a->shape[axis];
    std::vector<double> v(static_cast<size_t>(shape_numel(os)));
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(v.data() + o * len * inner, a->values.data() + (o * ea + start) * inner,
                    sizeof(double) * len * inner);
    auto out = make_tensor(os, std::move(v), needs_grad(a));
    if (!out->requires_grad) return out;
    t.record(out, {a}, [a, out, outer, inner, ea, start, len]() {
        a->ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < len * inner; ++j)
                a->grad[(o * ea + start) * inner + j] += out->grad[o * len * inner + j];
    });
    return out;
}

TensorPtr gather_rows(Tape& t, const TensorPtr& a, const std::vector<int>& rows) {
    if (a->ndim() != 2) throw ContractViolation("gather_rows expects a 2-D tensor");
    if (rows.empty()) throw ContractViolation("gather_rows requires at least one row");
    const int R = a->shape[0], C = a->shape[1];
    for (int r : rows)
        if (r < 0 || r >= R) throw ContractViolation("gather_rows index out of range");
    std::vector<double> v(rows.size() * static_cast<size_t>(C));
    for (size_t i = 0; i < rows.size(); ++i)
        std::memcpy(v.data() + i * C, a->values.data() + static_cast<int64_t>(rows[i]) * C,
                    sizeof(double) * C);
    auto out = make_tensor({static_cast<int>(rows.size()), C}, std::move(v), needs_grad(a));
    if (!out->requires_grad) return out;
    auto rows_copy = rows;
    t.record(out, {a}, [a, out, rows_copy, C]() {
        a->ensure_grad();
        for (size_t i = 0; i < rows_copy.size(); ++i)
            for (int c = 0; c < C; ++c)
                a->grad[static_cast<int64_t>(rows_copy[i]) * C + c] += out->grad[i * C + c];
    });
    return out;
}

TensorPtr transpose2d(Tape& t, const TensorPtr& a) {
    if (a->ndim() != 2) throw ContractViolation("transpose2d expects a 2-D tensor");
    const int R = a->shape[0], C = a->shape[1];
    std::vector<double> v(a->values.size());
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) v[static_cast<int64_t>(c) * R + r] = a->values[static_cast<int64_t>(r) * C + c];
    auto out = make_tensor({C, R}, std::move(v), needs_grad(a));
    if (!out->requires_grad) return out;
    t.record(out, {a}, [a, out, R, C]() {
        a->ensure_grad();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c)
                a->grad[static_cast<int64_t>(r) * C + c] += out->grad[static_cast<int64_t>(c) * R + r];
    });
    return out;
}

TensorPtr reshape(Tape& t, const TensorPtr& a, Shape new_shape) {
    if (shape_numel(new_shape) != a->numel()) throw ContractViolation("reshape element count mismatch");
    auto out = make_tensor(std::move(new_shape), a->values, needs_grad(a));
    if (!out->requires_grad) return out;
    t.record(out, {a}, [a, out]() {
        a->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
    });
    return out;
}

TensorPtr batch_norm(Tape& t, const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                     double eps, bool whole_tensor) {
    const int C = whole_tensor ? 1 : x->shape[0];
    const int64_t n = x->numel() / C;
    if (n < 2) throw ContractViolation("batch_norm needs >= 2 elements per channel");
    const int64_t affine_n = whole_tensor ? x->numel() : C;
    if (gamma->numel() != affine_n || beta->numel() != affine_n) {
        throw ContractViolation("batch_norm gamma/beta size mismatch");
    }
    std::vector<double> xhat(x->values.size()), mean(C), inv_std(C);
    for (int c = 0; c < C; ++c) {
        const double* px = x->values.data() + c * n;
        double m = 0;
        for (int64_t i = 0; i < n; ++i) m += px[i];
        m /= n;
        double var = 0;
        for (int64_t i = 0; i < n; ++i) var += (px[i] - m) * (px[i] - m);
        var /= n;
        mean[c] = m;
        inv_std[c] = 1.0 / std::sqrt(var + eps);
        double* ph = xhat.data() + c * n;
        for (int64_t i = 0; i < n; ++i) ph[i] = (px[i] - m) * inv_std[c];
    }
    std::vector<double> v(x->values.size());
    for (int c = 0; c < C; ++c) {
        for (int64_t i = 0; i < n; ++i) {
            const int64_t j = c * n + i;
            const int64_t ai = whole_tensor ? j : c;
            v[j] = gamma->values[ai] * xhat[j] + beta->values[ai];
        }
    }
    auto out = make_tensor(x->shape, std::move(v),
                           needs_grad(x) || needs_grad(gamma) || needs_grad(beta));
    if (!out->requires_grad) return out;
    auto xhat_s = std::make_shared<std::vector<double>>(std::move(xhat));
    auto inv_std_s = std::make_shared<std::vector<double>>(std::move(inv_std));
    t.record(out, {x, gamma, beta}, [x, gamma, beta, out, xhat_s, inv_std_s, C, n, whole_tensor]() {
        if (needs_grad(x)) x->ensure_grad();
        if (needs_grad(gamma)) gamma->ensure_grad();
        if (needs_grad(beta)) beta->ensure_grad();
        const auto& xhat = *xhat_s;
        for (int c = 0; c < C; ++c) {
            // dxhat_i = g_i * gamma_i ; dx = inv_std*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
            double sum_dh = 0, sum_dh_xh = 0;
            for (int64_t i = 0; i < n; ++i) {
                const int64_t j = c * n + i;
                const int64_t ai = whole_tensor ? j : c;
                const double g = out->grad[j];
                const double dh = g * gamma->values[ai];
                sum_dh += dh;
                sum_dh_xh += dh * xhat[j];
                if (needs_grad(gamma)) gamma->grad[ai] += g * xhat[j];
                if (needs_grad(beta)) beta->grad[ai] += g;
            }
            if (needs_grad(x)) {
                const double mdh = sum_dh / n, mdhxh = sum_dh_xh / n;
                for (int64_t i = 0; i < n; ++i) {
                    const int64_t j = c * n + i;
                    const int64_t ai = whole_tensor ? j : c;
                    const double dh = out->grad[j] * gamma->values[ai];
                    x->grad[j] += (*inv_std_s)[c] * (dh - mdh - xhat[j] * mdhxh);
                }
            }
        }
    });
    return out;
}

TensorPtr dropout(Tape& t, const TensorPtr& x, double rate, bool training, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ContractViolation("dropout rate must be in [0,1)");
    if (!training || rate == 0.0) return x;
    const double keep = 1.0 - rate;
    const double inv_keep = 1.0 / keep;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(x->values.size());
    auto mask = std::make_shared<std::vector<uint8_t>>(x->values.size());
    for (size_t i = 0; i < v.size(); ++i) {
        const bool kept = u(rng) >= rate;
        (*mask)[i] = kept;
        v[i] = kept ? x->values[i] * inv_keep : 0.0;
    }
    auto out = make_tensor(x->shape, std::move(v), needs_grad(x));
    if (!out->requires_grad) return out;
    t.record(out, {x}, [x, out, mask, inv_keep]() {
        x->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i)
            if ((*mask)[i]) x->grad[i] += out->grad[i] * inv_keep;
    });
    return out;
}

}  // namespace ops

AdamOptimizer::AdamOptimizer(std::vector<TensorPtr> params, double lr, double beta1, double beta2,
                             double eps, double weight_decay)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay) {
    for (const auto& p : params_) {
        m_.emplace_back(p->values.size(), 0.0);
        v_.emplace_back(p->values.size(), 0.0);
    }
}

void AdamOptimizer::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = *params_[pi];
        if (p.grad.empty()) {
            throw ContractViolation("adam_step: parameter has no gradient (run backward first)");
        }
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < p.values.size(); ++i) {
            // decoupled weight decay, then bias-corrected Adam update
            p.values[i] *= (1.0 - lr_ * weight_decay_);
            const double g = p.grad[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.values[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& p : params_) {
        p->ensure_grad();
        p->zero_grad();
    }
}

}  // namespace foolhd
