#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "bcast/losses.hpp"
#include "bcast/tensor.hpp"

namespace bcast {

// A named trainable value. Lives detached from any tape; a ForwardPass binds
// it as a tape leaf for one pass and the optimiser writes updated values back
// between passes.
struct Param {
    std::string name;
    Tensor value;
};

std::size_t count_params(const std::vector<Param*>& params);

// State of one forward pass: the tape, the mode flags and the random stream.
// `training` enables dropout, `sample_weights` enables posterior weight and
// latent sampling; validation and point prediction run with both off.
class ForwardPass {
public:
    ForwardPass(Tape& tape, bool training, bool sample_weights, RngState* rng = nullptr);

    // Tape leaf for the parameter; repeated use shares one node so fan-out
    // gradients accumulate correctly.
    Tensor operator()(Param& p);

    bool training() const { return training_; }
    bool sample_weights() const { return sample_weights_; }
    Tape& tape() { return tape_; }
    RngState& rng();

    // Gradient of the bound leaf after tape().backward(); zeros when the
    // parameter never entered the pass.
    Tensor grad_of(const Param& p) const;

private:
    Tape& tape_;
    bool training_;
    bool sample_weights_;
    RngState* rng_;
    std::unordered_map<const Param*, Tensor> bound_;
};

enum class Activation { None, Tanh };

// Fully connected layer, y = act(x W + b) with W stored [in x out].
class Dense {
public:
    Dense(std::string name, std::size_t in, std::size_t out, Activation act, RngState& rng);

    Tensor forward(ForwardPass& fp, const Tensor& x);
    std::vector<Param*> parameters();
    std::size_t in() const { return in_; }
    std::size_t out() const { return out_; }

private:
    std::size_t in_, out_;
    Activation act_;
    Param w_, b_;
};

// One fused LSTM step. Gate order across the 4H weight columns is
// input, forget, cell, output. Returns [B x 2H] holding the new hidden and
// cell states side by side; slice_cols splits them.
Tensor lstm_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                 const Tensor& wx, const Tensor& wh, const Tensor& b);

// LSTM cell parameters: wx [input x 4H], wh [H x 4H], bias [4H] with the
// forget-gate slice initialised to one.
class LstmCell {
public:
    LstmCell(std::string name, std::size_t input, std::size_t hidden, RngState& rng);

    struct State {
        Tensor h;
        Tensor c;
    };

    State step(ForwardPass& fp, const Tensor& x, const State& prev);
    State initial_state(std::size_t batch) const;
    std::vector<Param*> parameters();
    std::size_t hidden() const { return hidden_; }

private:
    std::size_t input_, hidden_;
    Param wx_, wh_, b_;
};

// Vanilla recurrent cell, h' = tanh(x Wx + h Wh + b).
class RnnCell {
public:
    RnnCell(std::string name, std::size_t input, std::size_t hidden, RngState& rng);

    Tensor step(ForwardPass& fp, const Tensor& x, const Tensor& h_prev);
    Tensor initial_state(std::size_t batch) const;
    std::vector<Param*> parameters();
    std::size_t hidden() const { return hidden_; }

private:
    std::size_t input_, hidden_;
    Param wx_, wh_, b_;
};

enum class CoreKind { Rnn, Lstm, BiLstm };

// Sequence feature extractor. Treats a [B x T] input as T steps of one value
// each, runs the recurrent core, and returns every step's hidden state
// side by side: [B x T*H], or [B x T*2H] bidirectional with the forward and
// backward states of each step adjacent. Keeping all steps visible to the
// head means the output width scales with the input length.
class RecurrentFeatures {
public:
    RecurrentFeatures(std::string name, CoreKind kind, std::size_t hidden, RngState& rng);

    Tensor forward(ForwardPass& fp, const Tensor& x);
    std::size_t out_width(std::size_t steps) const;
    std::vector<Param*> parameters();
    CoreKind kind() const { return kind_; }
    std::size_t hidden() const { return hidden_; }

private:
    CoreKind kind_;
    std::size_t hidden_;
    std::vector<LstmCell> lstm_;
    std::vector<RnnCell> rnn_;
};

// Inverted dropout: scales kept entries by 1/(1-rate) during training so the
// expected activation is unchanged, identity otherwise.
class Dropout {
public:
    explicit Dropout(double rate);

    Tensor forward(ForwardPass& fp, const Tensor& x) const;
    double rate() const { return rate_; }

private:
    double rate_;
};

// Fully connected layer with a factorised Gaussian posterior over every
// weight and bias. Sampling passes draw w = mu + softplus(rho) * eps per
// entry; deterministic passes use the posterior means. kl() measures the
// distance to the prior, which is fixed by default and a pair of trainable
// per-layer scalars when enabled.
class VariationalDense {
public:
    VariationalDense(std::string name, std::size_t in, std::size_t out, RngState& rng,
                     bool trainable_prior = false);

    Tensor forward(ForwardPass& fp, const Tensor& x);
    Tensor kl(ForwardPass& fp);
    std::vector<Param*> parameters();
    std::size_t in() const { return in_; }
    std::size_t out() const { return out_; }

    static constexpr double kInitMuStd = 0.1;
    static constexpr double kInitSigma = 0.05;

private:
    std::size_t in_, out_;
    bool trainable_prior_;
    GaussianPrior prior_;
    Param w_mu_, w_rho_, b_mu_, b_rho_;
    Param prior_mu_, prior_rho_;

    Tensor kl_against_prior(ForwardPass& fp, const Tensor& mu_q, const Tensor& sigma_q);
};

struct LatentPosterior {
    Tensor mu;
    Tensor sigma;
};

// Window autoencoder: tanh encoder to a Gaussian latent posterior, tanh
// decoder back to the window. compress() is the deterministic posterior-mean
// path used when the latent code feeds a downstream model.
class Vae {
public:
    // identity_skip adds square input-to-mean and latent-to-output skip
    // matrices initialised to the identity; it requires latent == input and
    // exists for autoencoder capacity checks.
    Vae(std::size_t input, std::size_t latent, RngState& rng, std::size_t hidden = 64,
        bool identity_skip = false);

    LatentPosterior encode(ForwardPass& fp, const Tensor& x);
    Tensor reparameterize(ForwardPass& fp, const LatentPosterior& posterior);
    Tensor decode(ForwardPass& fp, const Tensor& z);
    Tensor loss(ForwardPass& fp, const Tensor& x);
    Tensor compress(ForwardPass& fp, const Tensor& x);
    std::vector<Param*> parameters();
    std::size_t input() const { return enc_hidden_.in(); }
    std::size_t latent() const { return enc_mu_.out(); }
    std::size_t hidden() const { return enc_hidden_.out(); }
    bool identity_skip() const { return identity_skip_; }

private:
    Dense enc_hidden_, enc_mu_, enc_rho_, dec_hidden_, dec_out_;
    bool identity_skip_;
    Param enc_skip_, dec_skip_;
    GaussianPrior prior_;
};

} // namespace bcast
