#include "bcast/layers.hpp"

#include <Eigen/Core>

#include <cmath>

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

Tensor glorot_uniform(Shape shape, RngState& rng) {
    const std::size_t fan_in = shape.size() == 2 ? shape[0] : 1;
    const std::size_t fan_out = shape.size() == 2 ? shape[1] : shape[0];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = (2.0 * rng.uniform() - 1.0) * limit;
    return Tensor(std::move(shape), std::move(v));
}

Tensor recurrent_uniform(Shape shape, std::size_t hidden, RngState& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = (2.0 * rng.uniform() - 1.0) * limit;
    return Tensor(std::move(shape), std::move(v));
}

double sigmoid_value(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

std::size_t count_params(const std::vector<Param*>& params) {
    std::size_t n = 0;
    for (const Param* p : params) n += p->value.size();
    return n;
}

// ---- ForwardPass ----------------------------------------------------------

ForwardPass::ForwardPass(Tape& tape, bool training, bool sample_weights, RngState* rng)
    : tape_(tape), training_(training), sample_weights_(sample_weights), rng_(rng) {}

Tensor ForwardPass::operator()(Param& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    Tensor leaf = tape_.leaf(p.value);
    bound_.emplace(&p, leaf);
    return leaf;
}

RngState& ForwardPass::rng() {
    if (!rng_) throw ContractError("forward pass has no random stream");
    return *rng_;
}

Tensor ForwardPass::grad_of(const Param& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end()) return Tensor::zeros(p.value.shape());
    return tape_.grad_of(it->second);
}

// ---- Dense ------------------------------------------------------------------

Dense::Dense(std::string name, std::size_t in, std::size_t out, Activation act, RngState& rng)
    : in_(in), out_(out), act_(act) {
    if (in == 0 || out == 0) throw ContractError("dense layer: zero-sized dimension");
    w_ = {name + ".w", glorot_uniform({in, out}, rng)};
    b_ = {name + ".b", Tensor::zeros({out})};
}

Tensor Dense::forward(ForwardPass& fp, const Tensor& x) {
    Tensor y = add_rowvec(matmul(x, fp(w_)), fp(b_));
    return act_ == Activation::Tanh ? tanh(y) : y;
}

std::vector<Param*> Dense::parameters() { return {&w_, &b_}; }

// ---- fused LSTM step --------------------------------------------------------

Tensor lstm_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                 const Tensor& wx, const Tensor& wh, const Tensor& b) {
    const std::size_t batch = x.rows(), in = x.cols();
    const std::size_t hidden = h_prev.cols();
    const std::size_t gates_w = 4 * hidden;
    if (h_prev.rows() != batch || c_prev.rows() != batch || c_prev.cols() != hidden) {
        throw ShapeError("lstm_step: state shapes " + shape_str(h_prev.shape()) + " / " +
                         shape_str(c_prev.shape()) + " do not match input " +
                         shape_str(x.shape()));
    }
    if (wx.rows() != in || wx.cols() != gates_w || wh.rows() != hidden ||
        wh.cols() != gates_w || b.size() != gates_w || b.shape().size() != 1) {
        throw ShapeError("lstm_step: weight shapes " + shape_str(wx.shape()) + " / " +
                         shape_str(wh.shape()) + " / " + shape_str(b.shape()) +
                         " do not match hidden size " + std::to_string(hidden));
    }

    // pre-activations z = x wx + h wh + b, then the four gates
    DVec z(batch * gates_w);
    {
        ECMap xm(x.values().data(), batch, in);
        ECMap hm(h_prev.values().data(), batch, hidden);
        ECMap wxm(wx.values().data(), in, gates_w);
        ECMap whm(wh.values().data(), hidden, gates_w);
        EMap zm(z.data(), batch, gates_w);
        zm.noalias() = xm * wxm + hm * whm;
    }
    const DVec& bv = b.values();
    auto gates = std::make_shared<DVec>(batch * gates_w);
    auto tanh_c = std::make_shared<DVec>(batch * hidden);
    DVec out(batch * 2 * hidden);
    const DVec& cv = c_prev.values();
    for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t j = 0; j < hidden; ++j) {
            const std::size_t zi = r * gates_w + j;
            const double gi = sigmoid_value(z[zi] + bv[j]);
            const double gf = sigmoid_value(z[zi + hidden] + bv[j + hidden]);
            const double gg = std::tanh(z[zi + 2 * hidden] + bv[j + 2 * hidden]);
            const double go = sigmoid_value(z[zi + 3 * hidden] + bv[j + 3 * hidden]);
            const double c_new = gf * cv[r * hidden + j] + gi * gg;
            const double tc = std::tanh(c_new);
            (*gates)[zi] = gi;
            (*gates)[zi + hidden] = gf;
            (*gates)[zi + 2 * hidden] = gg;
            (*gates)[zi + 3 * hidden] = go;
            (*tanh_c)[r * hidden + j] = tc;
            out[r * 2 * hidden + j] = go * tc;
            out[r * 2 * hidden + hidden + j] = c_new;
        }
    }

    Tape* tape = common_tape({&x, &h_prev, &c_prev, &wx, &wh, &b});
    if (!tape) return Tensor({batch, 2 * hidden}, std::move(out));

    const std::int64_t xn = x.on_tape() ? x.node_id() : -1;
    const std::int64_t hn = h_prev.on_tape() ? h_prev.node_id() : -1;
    const std::int64_t cn = c_prev.on_tape() ? c_prev.node_id() : -1;
    const std::int64_t wxn = wx.on_tape() ? wx.node_id() : -1;
    const std::int64_t whn = wh.on_tape() ? wh.node_id() : -1;
    const std::int64_t bn = b.on_tape() ? b.node_id() : -1;
    DPtr xd = x.storage();
    DPtr hd = h_prev.storage();
    DPtr cd = c_prev.storage();
    DPtr wxd = wx.storage();
    DPtr whd = wh.storage();

    std::vector<std::int64_t> parents;
    for (std::int64_t id : {xn, hn, cn, wxn, whn, bn}) {
        if (id >= 0) parents.push_back(id);
    }

    return tape->record(
        {batch, 2 * hidden}, std::move(out), std::move(parents),
        [=](const DVec& g, Tape& t) {
            // dz holds the gradient at the gate pre-activations; everything
            // else falls out of it with the cached activations.
            DVec dz(batch * gates_w);
            DVec* gc_prev = (cn >= 0) ? &t.grad_buf(cn) : nullptr;
            for (std::size_t r = 0; r < batch; ++r) {
                for (std::size_t j = 0; j < hidden; ++j) {
                    const std::size_t zi = r * gates_w + j;
                    const std::size_t si = r * hidden + j;
                    const double gi = (*gates)[zi];
                    const double gf = (*gates)[zi + hidden];
                    const double gg = (*gates)[zi + 2 * hidden];
                    const double go = (*gates)[zi + 3 * hidden];
                    const double tc = (*tanh_c)[si];
                    const double gh = g[r * 2 * hidden + j];
                    const double gc = g[r * 2 * hidden + hidden + j] + gh * go * (1.0 - tc * tc);
                    dz[zi] = gc * gg * gi * (1.0 - gi);
                    dz[zi + hidden] = gc * (*cd)[si] * gf * (1.0 - gf);
                    dz[zi + 2 * hidden] = gc * gi * (1.0 - gg * gg);
                    dz[zi + 3 * hidden] = gh * tc * go * (1.0 - go);
                    if (gc_prev) (*gc_prev)[si] += gc * gf;
                }
            }
            ECMap dzm(dz.data(), batch, gates_w);
            if (xn >= 0) {
                EMap gx(t.grad_buf(xn).data(), batch, in);
                ECMap wxm(wxd->data(), in, gates_w);
                gx.noalias() += dzm * wxm.transpose();
            }
            if (hn >= 0) {
                EMap ghm(t.grad_buf(hn).data(), batch, hidden);
                ECMap whm(whd->data(), hidden, gates_w);
                ghm.noalias() += dzm * whm.transpose();
            }
            if (wxn >= 0) {
                EMap gwx(t.grad_buf(wxn).data(), in, gates_w);
                ECMap xm(xd->data(), batch, in);
                gwx.noalias() += xm.transpose() * dzm;
            }
            if (whn >= 0) {
                EMap gwh(t.grad_buf(whn).data(), hidden, gates_w);
                ECMap hm(hd->data(), batch, hidden);
                gwh.noalias() += hm.transpose() * dzm;
            }
            if (bn >= 0) {
                DVec& gb = t.grad_buf(bn);
                for (std::size_t r = 0; r < batch; ++r) {
                    for (std::size_t c = 0; c < gates_w; ++c) gb[c] += dz[r * gates_w + c];
                }
            }
        });
}

// ---- LstmCell -----------------------------------------------------------

LstmCell::LstmCell(std::string name, std::size_t input, std::size_t hidden, RngState& rng)
    : input_(input), hidden_(hidden) {
    if (input == 0 || hidden == 0) throw ContractError("lstm cell: zero-sized dimension");
    wx_ = {name + ".wx", recurrent_uniform({input, 4 * hidden}, hidden, rng)};
    wh_ = {name + ".wh", recurrent_uniform({hidden, 4 * hidden}, hidden, rng)};
    std::vector<double> bias(4 * hidden, 0.0);
    std::fill(bias.begin() + static_cast<std::ptrdiff_t>(hidden),
              bias.begin() + static_cast<std::ptrdiff_t>(2 * hidden), 1.0);
    b_ = {name + ".b", Tensor({4 * hidden}, std::move(bias))};
}

LstmCell::State LstmCell::step(ForwardPass& fp, const Tensor& x, const State& prev) {
    Tensor hc = lstm_step(x, prev.h, prev.c, fp(wx_), fp(wh_), fp(b_));
    return {slice_cols(hc, 0, hidden_), slice_cols(hc, hidden_, hidden_)};
}

LstmCell::State LstmCell::initial_state(std::size_t batch) const {
    return {Tensor::zeros({batch, hidden_}), Tensor::zeros({batch, hidden_})};
}

std::vector<Param*> LstmCell::parameters() { return {&wx_, &wh_, &b_}; }

// ---- RnnCell ------------------------------------------------------------

RnnCell::RnnCell(std::string name, std::size_t input, std::size_t hidden, RngState& rng)
    : input_(input), hidden_(hidden) {
    if (input == 0 || hidden == 0) throw ContractError("rnn cell: zero-sized dimension");
    wx_ = {name + ".wx", recurrent_uniform({input, hidden}, hidden, rng)};
    wh_ = {name + ".wh", recurrent_uniform({hidden, hidden}, hidden, rng)};
    b_ = {name + ".b", Tensor::zeros({hidden})};
}

Tensor RnnCell::step(ForwardPass& fp, const Tensor& x, const Tensor& h_prev) {
    return tanh(add_rowvec(add(matmul(x, fp(wx_)), matmul(h_prev, fp(wh_))), fp(b_)));
}

Tensor RnnCell::initial_state(std::size_t batch) const {
    return Tensor::zeros({batch, hidden_});
}

std::vector<Param*> RnnCell::parameters() { return {&wx_, &wh_, &b_}; }

// ---- RecurrentFeatures ----------------------------------------------------

RecurrentFeatures::RecurrentFeatures(std::string name, CoreKind kind, std::size_t hidden,
                                     RngState& rng)
    : kind_(kind), hidden_(hidden) {
    switch (kind) {
        case CoreKind::Rnn:
            rnn_.emplace_back(name + ".cell", 1, hidden, rng);
            break;
        case CoreKind::Lstm:
            lstm_.emplace_back(name + ".cell", 1, hidden, rng);
            break;
        case CoreKind::BiLstm:
            lstm_.emplace_back(name + ".fwd", 1, hidden, rng);
            lstm_.emplace_back(name + ".bwd", 1, hidden, rng);
            break;
    }
}

Tensor RecurrentFeatures::forward(ForwardPass& fp, const Tensor& x) {
    const std::size_t steps = x.cols();
    const std::size_t batch = x.rows();
    if (steps == 0) throw ShapeError("recurrent features: empty sequence");

    std::vector<Tensor> pieces;
    if (kind_ == CoreKind::Rnn) {
        Tensor h = rnn_[0].initial_state(batch);
        pieces.reserve(steps);
        for (std::size_t t = 0; t < steps; ++t) {
            h = rnn_[0].step(fp, slice_cols(x, t, 1), h);
            pieces.push_back(h);
        }
    } else if (kind_ == CoreKind::Lstm) {
        LstmCell::State s = lstm_[0].initial_state(batch);
        pieces.reserve(steps);
        for (std::size_t t = 0; t < steps; ++t) {
            s = lstm_[0].step(fp, slice_cols(x, t, 1), s);
            pieces.push_back(s.h);
        }
    } else {
        std::vector<Tensor> fwd(steps), bwd(steps);
        LstmCell::State s = lstm_[0].initial_state(batch);
        for (std::size_t t = 0; t < steps; ++t) {
            s = lstm_[0].step(fp, slice_cols(x, t, 1), s);
            fwd[t] = s.h;
        }
        s = lstm_[1].initial_state(batch);
        for (std::size_t t = steps; t-- > 0;) {
            s = lstm_[1].step(fp, slice_cols(x, t, 1), s);
            bwd[t] = s.h;
        }
        pieces.reserve(2 * steps);
        for (std::size_t t = 0; t < steps; ++t) {
            pieces.push_back(fwd[t]);
            pieces.push_back(bwd[t]);
        }
    }
    return concat_cols(pieces);
}

std::size_t RecurrentFeatures::out_width(std::size_t steps) const {
    return steps * hidden_ * (kind_ == CoreKind::BiLstm ? 2 : 1);
}

std::vector<Param*> RecurrentFeatures::parameters() {
    std::vector<Param*> out;
    for (LstmCell& c : lstm_) {
        for (Param* p : c.parameters()) out.push_back(p);
    }
    for (RnnCell& c : rnn_) {
        for (Param* p : c.parameters()) out.push_back(p);
    }
    return out;
}

// ---- Dropout --------------------------------------------------------------

Dropout::Dropout(double rate) : rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ContractError("dropout rate " + std::to_string(rate) + " outside [0, 1)");
    }
}

Tensor Dropout::forward(ForwardPass& fp, const Tensor& x) const {
    if (!fp.training() || rate_ == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate_);
    std::vector<double> mask(x.size());
    for (double& m : mask) m = fp.rng().uniform() < rate_ ? 0.0 : keep_scale;
    return mul(x, Tensor(x.shape(), std::move(mask)));
}

// ---- VariationalDense ------------------------------------------------------

VariationalDense::VariationalDense(std::string name, std::size_t in, std::size_t out,
                                   RngState& rng, bool trainable_prior)
    : in_(in), out_(out), trainable_prior_(trainable_prior) {
    if (in == 0 || out == 0) throw ContractError("variational dense: zero-sized dimension");
    const double rho0 = softplus_inverse(kInitSigma);
    std::vector<double> mu(in * out);
    for (double& v : mu) v = rng.normal() * kInitMuStd;
    w_mu_ = {name + ".w_mu", Tensor({in, out}, std::move(mu))};
    w_rho_ = {name + ".w_rho", Tensor::full({in, out}, rho0)};
    std::vector<double> bmu(out);
    for (double& v : bmu) v = rng.normal() * kInitMuStd;
    b_mu_ = {name + ".b_mu", Tensor({out}, std::move(bmu))};
    b_rho_ = {name + ".b_rho", Tensor::full({out}, rho0)};
    prior_mu_ = {name + ".prior_mu", Tensor::scalar(prior_.mu)};
    prior_rho_ = {name + ".prior_rho", Tensor::scalar(softplus_inverse(prior_.sigma))};
}

Tensor VariationalDense::forward(ForwardPass& fp, const Tensor& x) {
    Tensor w = fp(w_mu_);
    Tensor b = fp(b_mu_);
    if (fp.sample_weights()) {
        w = add(w, mul(softplus(fp(w_rho_)), gaussian_draw(fp.rng(), {in_, out_})));
        b = add(b, mul(softplus(fp(b_rho_)), gaussian_draw(fp.rng(), {out_})));
    }
    return add_rowvec(matmul(x, w), b);
}

Tensor VariationalDense::kl(ForwardPass& fp) {
    Tensor kw = kl_against_prior(fp, fp(w_mu_), softplus(fp(w_rho_)));
    Tensor kb = kl_against_prior(fp, fp(b_mu_), softplus(fp(b_rho_)));
    return add(kw, kb);
}

Tensor VariationalDense::kl_against_prior(ForwardPass& fp, const Tensor& mu_q,
                                          const Tensor& sigma_q) {
    if (!trainable_prior_) {
        return kl_gaussian(mu_q, sigma_q, prior_.mu, prior_.sigma);
    }
    // Scalar prior parameters stay on the tape, so the KL is assembled from
    // reductions: sum (mu_q - mu_p)^2 expands to
    // sum mu_q^2 - 2 mu_p sum mu_q + n mu_p^2.
    const double n = static_cast<double>(mu_q.size());
    Tensor mp = fp(prior_mu_);
    Tensor sp = softplus(fp(prior_rho_));
    Tensor quad = add(add(sum(square(mu_q)), mul(mul_scalar(mp, -2.0), sum(mu_q))),
                      mul_scalar(square(mp), n));
    Tensor numer = add(sum(square(sigma_q)), quad);
    Tensor ratio = div(numer, mul_scalar(square(sp), 2.0));
    Tensor logs = sub(mul_scalar(log(sp), n), sum(log(sigma_q)));
    return add_scalar(add(logs, ratio), -0.5 * n);
}

std::vector<Param*> VariationalDense::parameters() {
    std::vector<Param*> out = {&w_mu_, &w_rho_, &b_mu_, &b_rho_};
    if (trainable_prior_) {
        out.push_back(&prior_mu_);
        out.push_back(&prior_rho_);
    }
    return out;
}

// ---- Vae ------------------------------------------------------------------

namespace {

Tensor identity_matrix(std::size_t n) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return Tensor({n, n}, std::move(v));
}

} // namespace

Vae::Vae(std::size_t input, std::size_t latent, RngState& rng, std::size_t hidden,
         bool identity_skip)
    : enc_hidden_("vae.enc_hidden", input, hidden, Activation::Tanh, rng),
      enc_mu_("vae.enc_mu", hidden, latent, Activation::None, rng),
      enc_rho_("vae.enc_rho", hidden, latent, Activation::None, rng),
      dec_hidden_("vae.dec_hidden", latent, hidden, Activation::Tanh, rng),
      dec_out_("vae.dec_out", hidden, input, Activation::None, rng),
      identity_skip_(identity_skip),
      enc_skip_{"vae.enc_skip", identity_skip ? identity_matrix(input) : Tensor()},
      dec_skip_{"vae.dec_skip", identity_skip ? identity_matrix(input) : Tensor()} {
    if (identity_skip && latent != input) {
        throw ContractError("vae: identity skip requires latent == input, got " +
                            std::to_string(latent) + " and " + std::to_string(input));
    }
    // Start the posterior tight (sigma = 0.05, the same scale variational
    // layers use) so early reconstruction gradients see the signal rather
    // than softplus(0) = 0.69 worth of noise.
    Param* rho_bias = enc_rho_.parameters()[1];
    rho_bias->value = Tensor::full(rho_bias->value.shape(), softplus_inverse(0.05));
}

LatentPosterior Vae::encode(ForwardPass& fp, const Tensor& x) {
    Tensor h = enc_hidden_.forward(fp, x);
    Tensor mu = enc_mu_.forward(fp, h);
    if (identity_skip_) mu = add(mu, matmul(x, fp(enc_skip_)));
    return {mu, softplus(enc_rho_.forward(fp, h))};
}

Tensor Vae::reparameterize(ForwardPass& fp, const LatentPosterior& posterior) {
    if (!fp.sample_weights()) return posterior.mu;
    Tensor eps = gaussian_draw(fp.rng(), posterior.mu.shape());
    return add(posterior.mu, mul(posterior.sigma, eps));
}

Tensor Vae::decode(ForwardPass& fp, const Tensor& z) {
    Tensor pre = dec_out_.forward(fp, dec_hidden_.forward(fp, z));
    if (identity_skip_) pre = add(pre, matmul(z, fp(dec_skip_)));
    return tanh(pre);
}

Tensor Vae::loss(ForwardPass& fp, const Tensor& x) {
    LatentPosterior posterior = encode(fp, x);
    Tensor x_hat = decode(fp, reparameterize(fp, posterior));
    return vae_loss(x, x_hat, posterior.mu, posterior.sigma, prior_);
}

Tensor Vae::compress(ForwardPass& fp, const Tensor& x) {
    return encode(fp, x).mu;
}

std::vector<Param*> Vae::parameters() {
    std::vector<Param*> out;
    for (Dense* d : {&enc_hidden_, &enc_mu_, &enc_rho_, &dec_hidden_, &dec_out_}) {
        for (Param* p : d->parameters()) out.push_back(p);
    }
    if (identity_skip_) {
        out.push_back(&enc_skip_);
        out.push_back(&dec_skip_);
    }
    return out;
}

} // namespace bcast
