#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "bcast/errors.hpp"

namespace bcast {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

// Immutable value: shape plus row-major doubles. Copies are cheap (shared
// storage). A tensor produced by a tape op keeps a handle into that tape so
// gradients can be read back after backward(); plain tensors are constants.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_ ? data_->size() : 0; }
    std::size_t rows() const;
    std::size_t cols() const;

    const std::vector<double>& values() const;
    double operator[](std::size_t i) const { return values()[i]; }
    double at(std::size_t r, std::size_t c) const;
    double item() const;

    bool requires_grad() const { return requires_grad_; }
    bool on_tape() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    std::int64_t node_id() const { return node_; }
    std::shared_ptr<const std::vector<double>> storage() const { return data_; }

    // Gradient buffer filled by the owning tape's backward(); zero for
    // constants and for nodes the loss does not depend on. Shape matches.
    Tensor grad() const;

    // Same data viewed without any tape attachment.
    Tensor detached() const;

    // Value-level reshape (shares storage, drops tape attachment).
    Tensor reshaped(Shape shape) const;

private:
    friend class Tape;
    std::shared_ptr<const std::vector<double>> data_;
    Shape shape_;
    Tape* tape_ = nullptr;
    std::int64_t node_ = -1;
    bool requires_grad_ = false;
};

// Ordered record of the primitive ops of one forward pass. Creation order is
// topological by construction, so backward() is a single reverse sweep that
// visits each node once and sums gradients into fan-out parents. One tape per
// forward/backward pass; not copyable.
class Tape {
public:
    using PullFn = std::function<void(const std::vector<double>& upstream, Tape&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a differentiable leaf holding the given value.
    Tensor leaf(const Tensor& value);

    // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
    // The loss must be scalar. A loss that is not bound to this tape is a
    // constant: every gradient buffer is left zero.
    void backward(const Tensor& loss);

    Tensor grad_of(const Tensor& t) const;

    std::size_t node_count() const { return nodes_.size(); }

    // Low-level op registration, used by the op library below.
    Tensor record(Shape shape, std::vector<double> values,
                  std::vector<std::int64_t> parents, PullFn pull);

    // Gradient accumulator of a node, zero-initialised on first touch.
    std::vector<double>& grad_buf(std::int64_t node);

private:
    struct Node {
        Shape shape;
        std::shared_ptr<const std::vector<double>> value;
        std::vector<std::int64_t> parents;
        PullFn pull;
        std::vector<double> grad;
    };
    std::vector<Node> nodes_;
};

// Deterministic random stream. Same seed, same sequence. derive() spawns an
// independent stream from the base seed, insensitive to how much of this
// stream has already been consumed.
class RngState {
public:
    explicit RngState(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return engine_(); }
    double uniform();                 // [0, 1)
    double normal();                  // N(0, 1), Marsaglia polar
    RngState derive(std::uint64_t stream) const;

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[next_u64() % i]);
        }
    }

private:
    std::uint64_t seed_ = 0;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Standard-normal draws shaped as requested. Plain constant: never joins a
// tape, so reparameterised sampling differentiates through the arithmetic
// that consumes the draw, not through the draw itself.
Tensor gaussian_draw(RngState& rng, Shape shape);

// ---- primitive ops ---------------------------------------------------
// Each op computes its value immediately. If an operand belongs to a tape
// the result joins that tape with the matching gradient rule; mixing two
// different tapes is an error. All shapes are checked eagerly.

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// matrix [B x F] + row vector [F], broadcast over rows
Tensor add_rowvec(const Tensor& m, const Tensor& v);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);     // domain error on x <= 0
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);     // scalar
Tensor mean(const Tensor& x);    // scalar

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);
Tensor reshape(const Tensor& x, Shape shape);

// Scalar softplus and its inverse, shared by layers and tests.
double softplus_value(double x);
double softplus_inverse(double y);

} // namespace bcast
