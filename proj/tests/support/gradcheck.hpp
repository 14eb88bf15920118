#pragma once

// Central finite-difference oracle for gradient checks. The derivative of a
// scalar loss w.r.t. every entry of every input is estimated as
// (f(x+h) - f(x-h)) / 2h and compared against the tape's backward pass.
// The error is measured relative to max(1, |analytic|, |numeric|) so that
// near-zero gradients are judged on an absolute scale where finite-difference
// noise dominates any relative measure.

#include <cmath>
#include <functional>
#include <vector>

#include "bcast/layers.hpp"
#include "bcast/tensor.hpp"

namespace testsupport {

// Builds a scalar loss from leaves that already live on the given tape.
using LossFn = std::function<bcast::Tensor(bcast::Tape&, const std::vector<bcast::Tensor>&)>;

struct GradCheck {
    double max_err = 0.0;
    std::size_t checked = 0;
};

inline double grad_err(double analytic, double numeric) {
    const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / scale;
}

inline double eval_loss(const LossFn& fn, const std::vector<bcast::Tensor>& inputs) {
    bcast::Tape tape;
    std::vector<bcast::Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const bcast::Tensor& in : inputs) leaves.push_back(tape.leaf(in));
    return fn(tape, leaves).item();
}

inline bcast::Tensor perturbed(const bcast::Tensor& t, std::size_t index, double delta) {
    std::vector<double> v = t.values();
    v[index] += delta;
    return bcast::Tensor(t.shape(), std::move(v));
}

inline GradCheck gradcheck(const LossFn& fn, const std::vector<bcast::Tensor>& inputs,
                           double step = 1e-5) {
    bcast::Tape tape;
    std::vector<bcast::Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const bcast::Tensor& in : inputs) leaves.push_back(tape.leaf(in));
    bcast::Tensor loss = fn(tape, leaves);
    tape.backward(loss);

    GradCheck result;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
        const bcast::Tensor analytic = leaves[p].grad();
        for (std::size_t i = 0; i < inputs[p].size(); ++i) {
            std::vector<bcast::Tensor> plus = inputs;
            std::vector<bcast::Tensor> minus = inputs;
            plus[p] = perturbed(inputs[p], i, step);
            minus[p] = perturbed(inputs[p], i, -step);
            const double numeric = (eval_loss(fn, plus) - eval_loss(fn, minus)) / (2.0 * step);
            result.max_err = std::max(result.max_err, grad_err(analytic[i], numeric));
            ++result.checked;
        }
    }
    return result;
}

inline bcast::Tensor rand_tensor(bcast::RngState& rng, bcast::Shape shape,
                                 double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(bcast::shape_size(shape));
    for (double& x : v) x = lo + (hi - lo) * rng.uniform();
    return bcast::Tensor(std::move(shape), std::move(v));
}

// Finite differences in parameter space for layer objects. Every evaluation
// rebuilds the random stream from the same seed, so dropout masks and
// sampling draws are identical across the plus/minus evaluations and the
// analytic pass; the derivative is taken at fixed noise.
using ModelLossFn = std::function<bcast::Tensor(bcast::ForwardPass&)>;

inline double eval_param_loss(const ModelLossFn& fn, bool training, bool sample,
                              std::uint64_t seed) {
    bcast::RngState rng(seed);
    bcast::Tape tape;
    bcast::ForwardPass fp(tape, training, sample, &rng);
    return fn(fp).item();
}

inline GradCheck param_gradcheck(const ModelLossFn& fn, const std::vector<bcast::Param*>& params,
                                 bool training = false, bool sample = false,
                                 std::uint64_t seed = 1234, double step = 1e-5) {
    bcast::RngState rng(seed);
    bcast::Tape tape;
    bcast::ForwardPass fp(tape, training, sample, &rng);
    bcast::Tensor loss = fn(fp);
    tape.backward(loss);

    GradCheck result;
    for (bcast::Param* p : params) {
        const bcast::Tensor analytic = fp.grad_of(*p);
        const bcast::Tensor saved = p->value;
        for (std::size_t i = 0; i < saved.size(); ++i) {
            p->value = perturbed(saved, i, step);
            const double up = eval_param_loss(fn, training, sample, seed);
            p->value = perturbed(saved, i, -step);
            const double down = eval_param_loss(fn, training, sample, seed);
            p->value = saved;
            const double numeric = (up - down) / (2.0 * step);
            result.max_err = std::max(result.max_err, grad_err(analytic[i], numeric));
            ++result.checked;
        }
    }
    return result;
}

} // namespace testsupport
