#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace foolhd {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Raised when an operation's preconditions are violated (shape mismatch,
// bad axis, non-scalar loss, ...).
struct ContractViolation : std::runtime_error {
    explicit ContractViolation(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised for numeric-domain violations (log of non-positive input, ...).
struct DomainViolation : std::runtime_error {
    explicit DomainViolation(const std::string& msg) : std::runtime_error(msg) {}
};

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense n-dimensional array of doubles, optionally carrying a gradient.
struct Tensor : std::enable_shared_from_this<Tensor> {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until backward touches this tensor

    Tensor(Shape s, std::vector<double> v, bool req);

    int64_t numel() const { return static_cast<int64_t>(values.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    bool is_scalar() const { return numel() == 1; }
    double item() const;

    void ensure_grad();
    void zero_grad();
};

TensorPtr make_tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
TensorPtr make_constant(Shape shape, std::vector<double> values);
TensorPtr full(Shape shape, double value, bool requires_grad = false);
TensorPtr scalar_tensor(double value, bool requires_grad = false);

/// Ordered record of executed differentiable operations. Inputs of every
/// node precede it, so reverse iteration is a valid backward schedule.
class Tape {
public:
    struct Node {
        TensorPtr out;
        std::vector<TensorPtr> inputs;
        std::function<void()> backward;
    };

    void record(TensorPtr out, std::vector<TensorPtr> inputs, std::function<void()> backward);

    // Populates grads of every requires_grad tensor reachable from `loss`.
    void backward(const TensorPtr& loss);

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

enum class EwOp { Add, Sub, Mul, Div, Neg, Log, Exp, Sigmoid, Tanh, Relu, Square, Sqrt };
enum class ReduceOp { Sum, Mean, MaxWithIndex };

namespace ops {

// Elementwise ops with numpy-style broadcasting for the binary ones.
TensorPtr elementwise(Tape& tape, EwOp op, const TensorPtr& a, const TensorPtr& b = nullptr);

TensorPtr add(Tape& t, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape& t, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& t, const TensorPtr& a, const TensorPtr& b);
TensorPtr div(Tape& t, const TensorPtr& a, const TensorPtr& b);
TensorPtr neg(Tape& t, const TensorPtr& a);
TensorPtr log(Tape& t, const TensorPtr& a);
TensorPtr exp(Tape& t, const TensorPtr& a);
TensorPtr sigmoid(Tape& t, const TensorPtr& a);
TensorPtr tanh(Tape& t, const TensorPtr& a);
TensorPtr relu(Tape& t, const TensorPtr& a);
TensorPtr square(Tape& t, const TensorPtr& a);
TensorPtr sqrt(Tape& t, const TensorPtr& a);

TensorPtr scale(Tape& t, const TensorPtr& a, double c);       // c * a
TensorPtr add_scalar(Tape& t, const TensorPtr& a, double c);  // a + c
// max(a, c) elementwise against a constant; gradient flows where a > c.
TensorPtr clamp_min(Tape& t, const TensorPtr& a, double c);

TensorPtr matmul(Tape& t, const TensorPtr& a, const TensorPtr& b);

// 3x3 "same" zero-padded stride-1 convolution on C_in x H x W input.
TensorPtr conv2d(Tape& t, const TensorPtr& input, const TensorPtr& kernels);

// Valid dilated temporal convolution: C_in x T -> C_out x (T - (k-1)*dilation).
TensorPtr conv1d_dilated(Tape& t, const TensorPtr& input, const TensorPtr& kernels, int dilation);

TensorPtr softmax(Tape& t, const TensorPtr& z);

struct MaxResult {
    TensorPtr value;
    std::vector<int64_t> indices;
};

TensorPtr reduce_sum(Tape& t, const TensorPtr& a, std::optional<int> axis = std::nullopt);
TensorPtr reduce_mean(Tape& t, const TensorPtr& a, std::optional<int> axis = std::nullopt);
MaxResult reduce_max(Tape& t, const TensorPtr& a, std::optional<int> axis = std::nullopt);
TensorPtr reduce(Tape& t, ReduceOp op, const TensorPtr& a, std::optional<int> axis = std::nullopt);

TensorPtr concat(Tape& t, const TensorPtr& a, const TensorPtr& b, int axis);
TensorPtr slice(Tape& t, const TensorPtr& a, int axis, int start, int len);
// Row selection on a 2-D tensor (e.g. VAD frame filtering); backward scatters.
TensorPtr gather_rows(Tape& t, const TensorPtr& a, const std::vector<int>& rows);
TensorPtr transpose2d(Tape& t, const TensorPtr& a);
TensorPtr reshape(Tape& t, const TensorPtr& a, Shape new_shape);

// Channel-wise batch norm: stats per index of axis 0 over the remaining axes.
// With whole_tensor=true a single mean/var over all elements is used instead
// (the single-vector FC case).
TensorPtr batch_norm(Tape& t, const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                     double eps, bool whole_tensor = false);

TensorPtr dropout(Tape& t, const TensorPtr& x, double rate, bool training, std::mt19937_64& rng);

}  // namespace ops

/// Adam with decoupled weight decay over a fixed parameter list.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<TensorPtr> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0);

    void step();
    void zero_grad();

    int64_t step_count() const { return t_; }
    const std::vector<TensorPtr>& params() const { return params_; }

private:
    std::vector<TensorPtr> params_;
    std::vector<std::vector<double>> m_, v_;
    int64_t t_ = 0;
    double lr_, beta1_, beta2_, eps_, weight_decay_;
};

}  // namespace foolhd
