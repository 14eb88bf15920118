#include "bcast/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace bcast {

namespace {

using DVec = std::vector<double>;
using DPtr = std::shared_ptr<const DVec>;
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
    Tape* tape = nullptr;
    for (const Tensor* t : ts) {
        if (!t->on_tape()) continue;
        if (tape && tape != t->tape()) {
            throw ContractError("operands belong to different tapes");
        }
        tape = t->tape();
    }
    return tape;
}

std::vector<std::int64_t> tape_parents(std::initializer_list<const Tensor*> ts) {
    std::vector<std::int64_t> out;
    for (const Tensor* t : ts) {
        if (t->on_tape()) out.push_back(t->node_id());
    }
    return out;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

void accumulate(DVec& acc, const DVec& g) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

// Elementwise binary op. dfda/dfdb map (a_i, b_i, g_i) to the gradient
// contribution for the respective operand.
template <class F, class Da, class Db>
Tensor ew_binary(const char* name, const Tensor& a, const Tensor& b, F f, Da dfda, Db dfdb) {
    check_same_shape(name, a, b);
    const DVec& av = a.values();
    const DVec& bv = b.values();
    DVec out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);

    Tape* tape = common_tape({&a, &b});
    if (!tape) return Tensor(a.shape(), std::move(out));

    const std::int64_t an = a.on_tape() ? a.node_id() : -1;
    const std::int64_t bn = b.on_tape() ? b.node_id() : -1;
    DPtr ad = a.storage();
    DPtr bd = b.storage();
    return tape->record(
        a.shape(), std::move(out), tape_parents({&a, &b}),
        [an, bn, ad, bd, dfda, dfdb](const DVec& g, Tape& t) {
            if (an >= 0) {
                DVec& ga = t.grad_buf(an);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += dfda((*ad)[i], (*bd)[i], g[i]);
                }
            }
            if (bn >= 0) {
                DVec& gb = t.grad_buf(bn);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gb[i] += dfdb((*ad)[i], (*bd)[i], g[i]);
                }
            }
        });
}

// Elementwise unary op. dfdx maps (x_i, y_i, g_i) to the input gradient.
template <class F, class D>
Tensor ew_unary(const Tensor& x, F f, D dfdx) {
    const DVec& xv = x.values();
    DVec out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);

    if (!x.on_tape()) return Tensor(x.shape(), std::move(out));

    Tape* tape = x.tape();
    const std::int64_t xn = x.node_id();
    DPtr xd = x.storage();
    DPtr yd = std::make_shared<const DVec>(out);
    return tape->record(
        x.shape(), std::move(out), {xn},
        [xn, xd, yd, dfdx](const DVec& g, Tape& t) {
            DVec& gx = t.grad_buf(xn);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += dfdx((*xd)[i], (*yd)[i], g[i]);
            }
        });
}

void require_matrix(const char* op, const Tensor& t) {
    if (t.shape().size() != 2) {
        throw ShapeError(std::string(op) + ": expected a 2-d tensor, got " + shape_str(t.shape()));
    }
}

} // namespace

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// ---- Tensor -----------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    if (shape_size(shape_) != values.size()) {
        throw ShapeError("tensor: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_str(shape_));
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> v(shape_size(shape), 0.0);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, double value) {
    std::vector<double> v(shape_size(shape), value);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double value) {
    return Tensor(Shape{1}, std::vector<double>{value});
}

std::size_t Tensor::rows() const {
    if (shape_.size() != 2) throw ShapeError("rows(): tensor is not 2-d: " + shape_str(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (shape_.size() != 2) throw ShapeError("cols(): tensor is not 2-d: " + shape_str(shape_));
    return shape_[1];
}

const std::vector<double>& Tensor::values() const {
    if (!data_) throw ContractError("tensor is empty");
    return *data_;
}

double Tensor::at(std::size_t r, std::size_t c) const {
    return values()[r * cols() + c];
}

double Tensor::item() const {
    if (size() != 1) {
        throw ContractError("item(): tensor has " + std::to_string(size()) + " elements");
    }
    return values()[0];
}

Tensor Tensor::grad() const {
    if (!tape_) return Tensor::zeros(shape_);
    return tape_->grad_of(*this);
}

Tensor Tensor::detached() const {
    Tensor t;
    t.data_ = data_;
    t.shape_ = shape_;
    return t;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
        throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    }
    Tensor t = detached();
    t.shape_ = std::move(shape);
    return t;
}

// ---- Tape ---------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value) {
    Node node;
    node.shape = value.shape();
    node.value = value.storage();
    nodes_.push_back(std::move(node));

    Tensor t;
    t.data_ = value.storage();
    t.shape_ = value.shape();
    t.tape_ = this;
    t.node_ = static_cast<std::int64_t>(nodes_.size()) - 1;
    t.requires_grad_ = true;
    return t;
}

Tensor Tape::record(Shape shape, std::vector<double> values,
                    std::vector<std::int64_t> parents, PullFn pull) {
    Node node;
    node.shape = shape;
    node.value = std::make_shared<const std::vector<double>>(std::move(values));
    node.parents = std::move(parents);
    node.pull = std::move(pull);
    nodes_.push_back(std::move(node));

    Tensor t;
    t.data_ = nodes_.back().value;
    t.shape_ = std::move(shape);
    t.tape_ = this;
    t.node_ = static_cast<std::int64_t>(nodes_.size()) - 1;
    t.requires_grad_ = true;
    return t;
}

std::vector<double>& Tape::grad_buf(std::int64_t node) {
    Node& n = nodes_.at(static_cast<std::size_t>(node));
    if (n.grad.empty()) n.grad.assign(shape_size(n.shape), 0.0);
    return n.grad;
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    for (Node& n : nodes_) n.grad.clear();
    if (loss.tape_ != this || loss.node_ < 0) {
        return; // constant loss: all gradients are zero
    }
    grad_buf(loss.node_)[0] = 1.0;
    for (std::int64_t i = loss.node_; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.grad.empty() || !n.pull) continue;
        n.pull(n.grad, *this);
    }
}

Tensor Tape::grad_of(const Tensor& t) const {
    if (t.tape_ != this || t.node_ < 0) {
        throw ContractError("grad_of: tensor is not bound to this tape");
    }
    const Node& n = nodes_[static_cast<std::size_t>(t.node_)];
    if (n.grad.empty()) return Tensor::zeros(n.shape);
    return Tensor(n.shape, n.grad);
}

// ---- RngState -------------------------------------------------------------

RngState::RngState(std::uint64_t seed) : seed_(seed), engine_(seed) {}

double RngState::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngState::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
}

RngState RngState::derive(std::uint64_t stream) const {
    std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= (z >> 31);
    return RngState(z);
}

Tensor gaussian_draw(RngState& rng, Shape shape) {
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         " * " + shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    DVec out(m * n);
    {
        ECMap A(a.values().data(), m, k);
        ECMap B(b.values().data(), k, n);
        EMap C(out.data(), m, n);
        C.noalias() = A * B;
    }

    Tape* tape = common_tape({&a, &b});
    if (!tape) return Tensor({m, n}, std::move(out));

    const std::int64_t an = a.on_tape() ? a.node_id() : -1;
    const std::int64_t bn = b.on_tape() ? b.node_id() : -1;
    DPtr ad = a.storage();
    DPtr bd = b.storage();
    return tape->record(
        {m, n}, std::move(out), tape_parents({&a, &b}),
        [an, bn, ad, bd, m, k, n](const DVec& g, Tape& t) {
            ECMap G(g.data(), m, n);
            if (an >= 0) {
                EMap GA(t.grad_buf(an).data(), m, k);
                ECMap B(bd->data(), k, n);
                GA.noalias() += G * B.transpose();
            }
            if (bn >= 0) {
                EMap GB(t.grad_buf(bn).data(), k, n);
                ECMap A(ad->data(), m, k);
                GB.noalias() += A.transpose() * G;
            }
        });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return ew_binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g) { return g; },
        [](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return ew_binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g) { return g; },
        [](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return ew_binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double g) { return g * y; },
        [](double x, double, double g) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return ew_binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double g) { return g / y; },
        [](double x, double y, double g) { return -g * x / (y * y); });
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    require_matrix("add_rowvec", m);
    if (v.shape().size() != 1 || v.size() != m.cols()) {
        throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) +
                         " does not match matrix " + shape_str(m.shape()));
    }
    const std::size_t rows = m.rows(), cols = m.cols();
    const DVec& mv = m.values();
    const DVec& vv = v.values();
    DVec out(mv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] = mv[r * cols + c] + vv[c];
        }
    }

    Tape* tape = common_tape({&m, &v});
    if (!tape) return Tensor(m.shape(), std::move(out));

    const std::int64_t mn = m.on_tape() ? m.node_id() : -1;
    const std::int64_t vn = v.on_tape() ? v.node_id() : -1;
    return tape->record(
        m.shape(), std::move(out), tape_parents({&m, &v}),
        [mn, vn, rows, cols](const DVec& g, Tape& t) {
            if (mn >= 0) accumulate(t.grad_buf(mn), g);
            if (vn >= 0) {
                DVec& gv = t.grad_buf(vn);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) gv[c] += g[r * cols + c];
                }
            }
        });
}

Tensor add_scalar(const Tensor& x, double c) {
    return ew_unary(
        x, [c](double v) { return v + c; },
        [](double, double, double g) { return g; });
}

Tensor mul_scalar(const Tensor& x, double c) {
    return ew_unary(
        x, [c](double v) { return v * c; },
        [c](double, double, double g) { return g * c; });
}

Tensor tanh(const Tensor& x) {
    return ew_unary(
        x, [](double v) { return std::tanh(v); },
        [](double, double y, double g) { return g * (1.0 - y * y); });
}

Tensor sigmoid(const Tensor& x) {
    return ew_unary(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y, double g) { return g * y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
    return ew_unary(
        x, [](double v) { return softplus_value(v); },
        [](double v, double, double g) { return g / (1.0 + std::exp(-v)); });
}

Tensor exp(const Tensor& x) {
    return ew_unary(
        x, [](double v) { return std::exp(v); },
        [](double, double y, double g) { return g * y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.values()) {
        if (v <= 0.0) throw DomainError("log: argument " + std::to_string(v) + " is not positive");
    }
    return ew_unary(
        x, [](double v) { return std::log(v); },
        [](double v, double, double g) { return g / v; });
}

Tensor square(const Tensor& x) {
    return ew_unary(
        x, [](double v) { return v * v; },
        [](double v, double, double g) { return 2.0 * g * v; });
}

Tensor relu(const Tensor& x) {
    return ew_unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double, double g) { return v > 0.0 ? g : 0.0; });
}

Tensor sum(const Tensor& x) {
    const DVec& xv = x.values();
    double s = std::accumulate(xv.begin(), xv.end(), 0.0);
    if (!x.on_tape()) return Tensor::scalar(s);

    Tape* tape = x.tape();
    const std::int64_t xn = x.node_id();
    const std::size_t n = x.size();
    return tape->record(
        {1}, {s}, {xn},
        [xn, n](const DVec& g, Tape& t) {
            DVec& gx = t.grad_buf(xn);
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
        });
}

Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw ContractError("mean: empty tensor");
    return mul_scalar(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no tensors given");
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const Tensor& p : parts) {
        require_matrix("concat_cols", p);
        if (p.rows() != rows) {
            throw ShapeError("concat_cols: row counts disagree, " + shape_str(parts.front().shape()) +
                             " vs " + shape_str(p.shape()));
        }
        cols += p.cols();
    }

    DVec out(rows * cols);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const DVec& pv = p.values();
        const std::size_t pc = p.cols();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(pv.begin() + r * pc, pv.begin() + (r + 1) * pc,
                      out.begin() + r * cols + off);
        }
        off += pc;
    }

    Tape* tape = nullptr;
    for (const Tensor& p : parts) {
        if (!p.on_tape()) continue;
        if (tape && tape != p.tape()) throw ContractError("operands belong to different tapes");
        tape = p.tape();
    }
    if (!tape) return Tensor({rows, cols}, std::move(out));

    struct Piece {
        std::int64_t node;
        std::size_t off;
        std::size_t cols;
    };
    std::vector<Piece> pieces;
    std::vector<std::int64_t> parents;
    off = 0;
    for (const Tensor& p : parts) {
        if (p.on_tape()) {
            pieces.push_back({p.node_id(), off, p.cols()});
            parents.push_back(p.node_id());
        }
        off += p.cols();
    }
    return tape->record(
        {rows, cols}, std::move(out), std::move(parents),
        [pieces, rows, cols](const DVec& g, Tape& t) {
            for (const Piece& p : pieces) {
                DVec& gp = t.grad_buf(p.node);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < p.cols; ++c) {
                        gp[r * p.cols + c] += g[r * cols + p.off + c];
                    }
                }
            }
        });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
    require_matrix("slice_cols", x);
    if (len == 0 || start + len > x.cols()) {
        throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of range for " + shape_str(x.shape()));
    }
    const std::size_t rows = x.rows(), cols = x.cols();
    const DVec& xv = x.values();
    DVec out(rows * len);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(xv.begin() + r * cols + start, xv.begin() + r * cols + start + len,
                  out.begin() + r * len);
    }

    if (!x.on_tape()) return Tensor({rows, len}, std::move(out));

    Tape* tape = x.tape();
    const std::int64_t xn = x.node_id();
    return tape->record(
        {rows, len}, std::move(out), {xn},
        [xn, rows, cols, start, len](const DVec& g, Tape& t) {
            DVec& gx = t.grad_buf(xn);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < len; ++c) {
                    gx[r * cols + start + c] += g[r * len + c];
                }
            }
        });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    if (!x.on_tape()) return x.reshaped(std::move(shape));

    Tape* tape = x.tape();
    const std::int64_t xn = x.node_id();
    return tape->record(
        std::move(shape), DVec(x.values()), {xn},
        [xn](const DVec& g, Tape& t) { accumulate(t.grad_buf(xn), g); });
}

double softplus_value(double x) {
    return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
}

double softplus_inverse(double y) {
    if (y <= 0.0) throw DomainError("softplus_inverse: argument must be positive");
    // log(e^y - 1), stable for small and large y
    if (y > 30.0) return y;
    return std::log(std::expm1(y));
}

} // namespace bcast
