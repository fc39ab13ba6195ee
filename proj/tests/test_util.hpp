#pragma once

#include "foolhd/tensor.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace foolhd::testutil {

inline std::vector<double> random_vec(int64_t n, std::mt19937_64& rng, double lo = -1.0,
                                      double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

/// Central finite-difference gradient check. `f` must build a scalar loss from
/// the given leaf tensors on the supplied tape. Returns the max relative error
/// between analytic and numeric gradients over every element of every leaf.
inline double fd_max_rel_err(
    const std::function<TensorPtr(Tape&, const std::vector<TensorPtr>&)>& f,
    std::vector<TensorPtr> leaves, double h = 1e-5) {
    // analytic
    for (auto& p : leaves) {
        p->requires_grad = true;
        p->zero_grad();
    }
    Tape tape;
    TensorPtr loss = f(tape, leaves);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& p : leaves) {
        p->ensure_grad();
        analytic.push_back(p->grad);
    }
    // numeric
    double max_err = 0.0;
    for (size_t pi = 0; pi < leaves.size(); ++pi) {
        auto& p = leaves[pi];
        for (int64_t i = 0; i < p->numel(); ++i) {
            const double orig = p->values[i];
            p->values[i] = orig + h;
            Tape tp;
            const double up = f(tp, leaves)->item();
            p->values[i] = orig - h;
            Tape tm;
            const double dn = f(tm, leaves)->item();
            p->values[i] = orig;
            const double num = (up - dn) / (2.0 * h);
            const double ana = analytic[pi][i];
            const double err = std::abs(ana - num) / std::max(std::abs(ana) + std::abs(num), 1e-4);
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace foolhd::testutil
