#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bcast/layers.hpp"
#include "bcast/metrics.hpp"
#include "support/gradcheck.hpp"

using namespace bcast;
using testsupport::param_gradcheck;
using testsupport::rand_tensor;

namespace {

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain-loop reference for one LSTM step, kept independent of the fused op.
struct RefState {
    std::vector<double> h, c;
};

RefState ref_lstm_step(std::size_t batch, std::size_t in, std::size_t hidden,
                       const std::vector<double>& x, const std::vector<double>& h,
                       const std::vector<double>& c, const std::vector<double>& wx,
                       const std::vector<double>& wh, const std::vector<double>& b) {
    const std::size_t g4 = 4 * hidden;
    RefState out{std::vector<double>(batch * hidden), std::vector<double>(batch * hidden)};
    for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t j = 0; j < hidden; ++j) {
            double zi = b[j], zf = b[hidden + j], zg = b[2 * hidden + j], zo = b[3 * hidden + j];
            for (std::size_t k = 0; k < in; ++k) {
                const double xv = x[r * in + k];
                zi += xv * wx[k * g4 + j];
                zf += xv * wx[k * g4 + hidden + j];
                zg += xv * wx[k * g4 + 2 * hidden + j];
                zo += xv * wx[k * g4 + 3 * hidden + j];
            }
            for (std::size_t k = 0; k < hidden; ++k) {
                const double hv = h[r * hidden + k];
                zi += hv * wh[k * g4 + j];
                zf += hv * wh[k * g4 + hidden + j];
                zg += hv * wh[k * g4 + 2 * hidden + j];
                zo += hv * wh[k * g4 + 3 * hidden + j];
            }
            const double gi = sigmoid_ref(zi), gf = sigmoid_ref(zf);
            const double gg = std::tanh(zg), go = sigmoid_ref(zo);
            const double cn = gf * c[r * hidden + j] + gi * gg;
            out.c[r * hidden + j] = cn;
            out.h[r * hidden + j] = go * std::tanh(cn);
        }
    }
    return out;
}

} // namespace

TEST_CASE("parameter counting") {
    RngState rng(3);
    Dense dense("d", 3, 2, Activation::None, rng);
    CHECK(count_params(dense.parameters()) == 8);

    VariationalDense vd("v", 3, 2, rng);
    CHECK(count_params(vd.parameters()) == 16);
    VariationalDense vdp("vp", 3, 2, rng, true);
    CHECK(count_params(vdp.parameters()) == 18);

    LstmCell cell("c", 1, 48, rng);
    CHECK(count_params(cell.parameters()) == 9600);

    RecurrentFeatures bi("f", CoreKind::BiLstm, 48, rng);
    CHECK(count_params(bi.parameters()) == 19200);
    CHECK(bi.out_width(96) == 9216);
    RecurrentFeatures uni("g", CoreKind::Lstm, 48, rng);
    CHECK(count_params(uni.parameters()) == 9600);
    CHECK(uni.out_width(48) == 2304);

    Vae vae(96, 48, rng);
    CHECK(count_params(vae.parameters()) == 21824);
}

TEST_CASE("forward pass binds each parameter once") {
    RngState rng(5);
    Param p{"p", rand_tensor(rng, {2, 2})};
    Tape tape;
    ForwardPass fp(tape, false, false);
    Tensor a = fp(p);
    Tensor b = fp(p);
    CHECK(a.node_id() == b.node_id());
    CHECK(tape.node_count() == 1);

    Param unused{"u", Tensor::zeros({3})};
    Tensor loss = sum(square(a));
    tape.backward(loss);
    Tensor g = fp.grad_of(unused);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);

    CHECK_THROWS_AS(fp.rng(), ContractError);
}

TEST_CASE("dense layer computes act(x w + b)") {
    RngState rng(7);
    Dense dense("d", 2, 2, Activation::Tanh, rng);
    dense.parameters()[0]->value = Tensor({2, 2}, {1.0, -1.0, 0.5, 2.0});
    dense.parameters()[1]->value = Tensor({2}, {0.1, -0.2});

    Tape tape;
    ForwardPass fp(tape, false, false);
    Tensor y = dense.forward(fp, Tensor({1, 2}, {1.0, 2.0}));
    CHECK(y.at(0, 0) == doctest::Approx(std::tanh(1.0 + 1.0 + 0.1)));
    CHECK(y.at(0, 1) == doctest::Approx(std::tanh(-1.0 + 4.0 - 0.2)));
}

TEST_CASE("fused lstm step matches the loop reference") {
    RngState rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t batch = 1 + trial % 3, in = 1 + trial % 2, hidden = 2 + trial % 3;
        Tensor x = rand_tensor(rng, {batch, in});
        Tensor h = rand_tensor(rng, {batch, hidden});
        Tensor c = rand_tensor(rng, {batch, hidden});
        Tensor wx = rand_tensor(rng, {in, 4 * hidden});
        Tensor wh = rand_tensor(rng, {hidden, 4 * hidden});
        Tensor b = rand_tensor(rng, {4 * hidden});

        Tensor hc = lstm_step(x, h, c, wx, wh, b);
        RefState ref = ref_lstm_step(batch, in, hidden, x.values(), h.values(), c.values(),
                                     wx.values(), wh.values(), b.values());
        REQUIRE(hc.shape() == Shape{batch, 2 * hidden});
        for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t j = 0; j < hidden; ++j) {
                CHECK(hc.at(r, j) == doctest::Approx(ref.h[r * hidden + j]).epsilon(1e-12));
                CHECK(hc.at(r, hidden + j) ==
                      doctest::Approx(ref.c[r * hidden + j]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("fused lstm step edge behaviour") {
    const std::size_t hidden = 3;
    Tensor zero_w({1, 4 * hidden}, std::vector<double>(4 * hidden, 0.0));
    Tensor zero_wh({hidden, 4 * hidden}, std::vector<double>(hidden * 4 * hidden, 0.0));
    Tensor zero_b = Tensor::zeros({4 * hidden});
    Tensor x({2, 1}, {0.4, -0.7});
    Tensor h0 = Tensor::zeros({2, hidden});
    Tensor c0 = Tensor::zeros({2, hidden});

    // zero weights and state: candidate gate is tanh(0) = 0, so nothing flows
    Tensor hc = lstm_step(x, h0, c0, zero_w, zero_wh, zero_b);
    for (std::size_t i = 0; i < hc.size(); ++i) CHECK(hc[i] == 0.0);

    // saturated forget gate and closed input gate: the cell state passes
    // through unchanged, the hidden state reads it through a half-open output
    std::vector<double> bias(4 * hidden, 0.0);
    for (std::size_t j = 0; j < hidden; ++j) {
        bias[j] = -30.0;          // input gate closed
        bias[hidden + j] = 30.0;  // forget gate open
    }
    RngState rng(13);
    Tensor c_prev = rand_tensor(rng, {2, hidden});
    Tensor keep = lstm_step(x, h0, c_prev, zero_w, zero_wh, Tensor({4 * hidden}, bias));
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t j = 0; j < hidden; ++j) {
            CHECK(keep.at(r, hidden + j) == doctest::Approx(c_prev.at(r, j)).epsilon(1e-9));
            CHECK(keep.at(r, j) ==
                  doctest::Approx(0.5 * std::tanh(c_prev.at(r, j))).epsilon(1e-9));
        }
    }

    CHECK_THROWS_AS(lstm_step(x, h0, Tensor::zeros({2, 2}), zero_w, zero_wh, zero_b),
                    ShapeError);
    CHECK_THROWS_AS(lstm_step(x, h0, c0, Tensor::zeros({2, 12}), zero_wh, zero_b), ShapeError);
    CHECK_THROWS_AS(lstm_step(x, h0, c0, zero_w, zero_wh, Tensor::zeros({5})), ShapeError);
}

TEST_CASE("fused lstm step gradients match finite differences") {
    RngState rng(17);
    const std::size_t batch = 2, in = 2, hidden = 3;
    std::vector<Tensor> inputs = {
        rand_tensor(rng, {batch, in}),          rand_tensor(rng, {batch, hidden}),
        rand_tensor(rng, {batch, hidden}),      rand_tensor(rng, {in, 4 * hidden}),
        rand_tensor(rng, {hidden, 4 * hidden}), rand_tensor(rng, {4 * hidden})};
    auto fn = [](Tape&, const std::vector<Tensor>& t) {
        return sum(square(lstm_step(t[0], t[1], t[2], t[3], t[4], t[5])));
    };
    auto res = testsupport::gradcheck(fn, inputs);
    std::size_t entries = 0;
    for (const Tensor& t : inputs) entries += t.size();
    CHECK(res.checked == entries);
    CHECK(res.max_err < 1e-6);

    // chained steps push gradients through the recurrent state
    auto chained = [](Tape&, const std::vector<Tensor>& t) {
        Tensor hc = lstm_step(t[0], t[1], t[2], t[3], t[4], t[5]);
        const std::size_t hidden = t[1].cols();
        Tensor h = slice_cols(hc, 0, hidden);
        Tensor c = slice_cols(hc, hidden, hidden);
        Tensor hc2 = lstm_step(t[0], h, c, t[3], t[4], t[5]);
        return sum(square(hc2));
    };
    CHECK(testsupport::gradcheck(chained, inputs).max_err < 1e-6);
}

TEST_CASE("lstm cell wraps the fused step") {
    RngState rng(19);
    LstmCell cell("c", 1, 4, rng);
    // forget-gate bias starts at one, everything else at zero
    const Tensor& bias = cell.parameters()[2]->value;
    for (std::size_t j = 0; j < 16; ++j) {
        CHECK(bias[j] == (j >= 4 && j < 8 ? 1.0 : 0.0));
    }

    Tape tape;
    ForwardPass fp(tape, false, false);
    Tensor x = rand_tensor(rng, {3, 1});
    auto s0 = cell.initial_state(3);
    auto s1 = cell.step(fp, x, s0);
    CHECK(s1.h.shape() == Shape{3, 4});
    CHECK(s1.c.shape() == Shape{3, 4});

    RefState ref = ref_lstm_step(3, 1, 4, x.values(), s0.h.values(), s0.c.values(),
                                 cell.parameters()[0]->value.values(),
                                 cell.parameters()[1]->value.values(), bias.values());
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(s1.h.values()[i] == doctest::Approx(ref.h[i]).epsilon(1e-12));
        CHECK(s1.c.values()[i] == doctest::Approx(ref.c[i]).epsilon(1e-12));
    }
}

TEST_CASE("rnn cell step") {
    RngState rng(23);
    RnnCell cell("r", 1, 2, rng);
    cell.parameters()[0]->value = Tensor({1, 2}, {0.5, -0.25});
    cell.parameters()[1]->value = Tensor({2, 2}, {0.1, 0.2, 0.3, 0.4});
    cell.parameters()[2]->value = Tensor({2}, {0.05, -0.05});

    Tape tape;
    ForwardPass fp(tape, false, false);
    Tensor h = cell.step(fp, Tensor({1, 1}, {2.0}), Tensor({1, 2}, {0.5, -0.5}));
    CHECK(h.at(0, 0) == doctest::Approx(std::tanh(1.0 + 0.05 - 0.15 + 0.05)));
    CHECK(h.at(0, 1) == doctest::Approx(std::tanh(-0.5 + 0.1 - 0.2 - 0.05)));

    auto loss = [&](ForwardPass& pass) {
        Tensor state = cell.initial_state(2);
        Tensor x({2, 1}, {0.3, -0.8});
        state = cell.step(pass, x, state);
        state = cell.step(pass, x, state);
        return sum(square(state));
    };
    CHECK(param_gradcheck(loss, cell.parameters()).max_err < 1e-6);
}

TEST_CASE("recurrent feature blocks flatten every step") {
    RngState rng(29);
    const std::size_t batch = 2, steps = 3, hidden = 2;
    Tensor x = rand_tensor(rng, {batch, steps});

    SUBCASE("unidirectional lstm ordering") {
        RecurrentFeatures block("f", CoreKind::Lstm, hidden, rng);
        Tape tape;
        ForwardPass fp(tape, false, false);
        Tensor feats = block.forward(fp, x);
        REQUIRE(feats.shape() == Shape{batch, steps * hidden});

        const auto& wx = block.parameters()[0]->value.values();
        const auto& wh = block.parameters()[1]->value.values();
        const auto& b = block.parameters()[2]->value.values();
        std::vector<double> h(batch * hidden, 0.0), c(batch * hidden, 0.0);
        for (std::size_t t = 0; t < steps; ++t) {
            std::vector<double> xt(batch);
            for (std::size_t r = 0; r < batch; ++r) xt[r] = x.at(r, t);
            RefState s = ref_lstm_step(batch, 1, hidden, xt, h, c, wx, wh, b);
            h = s.h;
            c = s.c;
            for (std::size_t r = 0; r < batch; ++r) {
                for (std::size_t j = 0; j < hidden; ++j) {
                    CHECK(feats.at(r, t * hidden + j) ==
                          doctest::Approx(h[r * hidden + j]).epsilon(1e-12));
                }
            }
        }
    }

    SUBCASE("bidirectional interleaves forward and backward states") {
        RecurrentFeatures block("f", CoreKind::BiLstm, hidden, rng);
        Tape tape;
        ForwardPass fp(tape, false, false);
        Tensor feats = block.forward(fp, x);
        REQUIRE(feats.shape() == Shape{batch, 2 * steps * hidden});

        auto params = block.parameters();
        // the backward direction's first processed step is t = steps-1, so
        // that block of the output must equal one raw cell step
        std::vector<double> xt(batch);
        for (std::size_t r = 0; r < batch; ++r) xt[r] = x.at(r, steps - 1);
        std::vector<double> zeros(batch * hidden, 0.0);
        RefState first = ref_lstm_step(batch, 1, hidden, xt, zeros, zeros,
                                       params[3]->value.values(), params[4]->value.values(),
                                       params[5]->value.values());
        for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t j = 0; j < hidden; ++j) {
                CHECK(feats.at(r, (steps - 1) * 2 * hidden + hidden + j) ==
                      doctest::Approx(first.h[r * hidden + j]).epsilon(1e-12));
            }
        }
        // and the forward direction's first processed step is t = 0
        for (std::size_t r = 0; r < batch; ++r) xt[r] = x.at(r, 0);
        RefState f0 = ref_lstm_step(batch, 1, hidden, xt, zeros, zeros,
                                    params[0]->value.values(), params[1]->value.values(),
                                    params[2]->value.values());
        for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t j = 0; j < hidden; ++j) {
                CHECK(feats.at(r, j) == doctest::Approx(f0.h[r * hidden + j]).epsilon(1e-12));
            }
        }
    }

    SUBCASE("rnn block matches a plain loop") {
        RecurrentFeatures block("f", CoreKind::Rnn, hidden, rng);
        Tape tape;
        ForwardPass fp(tape, false, false);
        Tensor feats = block.forward(fp, x);
        REQUIRE(feats.shape() == Shape{batch, steps * hidden});

        const auto& wx = block.parameters()[0]->value.values();
        const auto& wh = block.parameters()[1]->value.values();
        const auto& b = block.parameters()[2]->value.values();
        std::vector<double> h(batch * hidden, 0.0);
        for (std::size_t t = 0; t < steps; ++t) {
            std::vector<double> next(batch * hidden);
            for (std::size_t r = 0; r < batch; ++r) {
                for (std::size_t j = 0; j < hidden; ++j) {
                    double z = b[j] + x.at(r, t) * wx[j];
                    for (std::size_t k = 0; k < hidden; ++k) {
                        z += h[r * hidden + k] * wh[k * hidden + j];
                    }
                    next[r * hidden + j] = std::tanh(z);
                }
            }
            h = next;
            for (std::size_t r = 0; r < batch; ++r) {
                for (std::size_t j = 0; j < hidden; ++j) {
                    CHECK(feats.at(r, t * hidden + j) ==
                          doctest::Approx(h[r * hidden + j]).epsilon(1e-12));
                }
            }
        }
    }

    SUBCASE("gradients through the bidirectional block") {
        RecurrentFeatures block("f", CoreKind::BiLstm, hidden, rng);
        auto loss = [&](ForwardPass& pass) { return sum(square(block.forward(pass, x))); };
        auto res = param_gradcheck(loss, block.parameters());
        CHECK(res.checked == count_params(block.parameters()));
        CHECK(res.max_err < 1e-6);
    }
}

TEST_CASE("dropout") {
    CHECK_THROWS_AS(Dropout(1.0), ContractError);
    CHECK_THROWS_AS(Dropout(-0.1), ContractError);

    RngState rng(31);
    Tensor x = rand_tensor(rng, {4, 5}, 0.5, 1.5);

    Dropout off(0.0);
    Tape t1;
    ForwardPass train_fp(t1, true, false, &rng);
    CHECK(off.forward(train_fp, x).values() == x.values());

    Dropout half(0.5);
    Tape t2;
    ForwardPass eval_fp(t2, false, false);
    CHECK(half.forward(eval_fp, x).values() == x.values());

    // training mode: entries are either zeroed or scaled by 1/(1-rate),
    // keeping the expectation unchanged
    Tensor ones = Tensor::full({100, 100}, 1.0);
    Tape t3;
    ForwardPass fp(t3, true, false, &rng);
    Tensor masked = half.forward(fp, ones);
    double total = 0.0;
    for (std::size_t i = 0; i < masked.size(); ++i) {
        const double v = masked[i];
        CHECK((v == 0.0 || v == doctest::Approx(2.0)));
        total += v;
    }
    CHECK(total / static_cast<double>(masked.size()) == doctest::Approx(1.0).epsilon(0.05));

    auto fn = [&half](Tape& tape, const std::vector<Tensor>& t) {
        RngState mask_rng(7);
        ForwardPass pass(tape, true, false, &mask_rng);
        return sum(square(half.forward(pass, t[0])));
    };
    CHECK(testsupport::gradcheck(fn, {x}).max_err < 1e-6);
}

TEST_CASE("variational dense deterministic and sampled paths") {
    RngState rng(37);
    VariationalDense vd("v", 2, 2, rng);
    vd.parameters()[0]->value = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
    vd.parameters()[2]->value = Tensor({2}, {0.5, -0.5});

    Tensor x({1, 2}, {2.0, 3.0});
    Tape t1;
    ForwardPass det(t1, false, false);
    Tensor y = vd.forward(det, x);
    CHECK(y.at(0, 0) == doctest::Approx(2.5));
    CHECK(y.at(0, 1) == doctest::Approx(2.5));

    // sampled outputs vary but stay centred on the deterministic output
    RngState sample_rng(41);
    double mean0 = 0.0;
    double var0 = 0.0;
    const int n = 400;
    for (int i = 0; i < n; ++i) {
        Tape t2;
        ForwardPass fp(t2, false, true, &sample_rng);
        const double v = vd.forward(fp, x).at(0, 0);
        mean0 += v;
        var0 += (v - 2.5) * (v - 2.5);
    }
    mean0 /= n;
    var0 /= n;
    CHECK(mean0 == doctest::Approx(2.5).epsilon(0.02));
    // entry variance: sigma^2 (x1^2 + x2^2 + 1) with sigma = 0.05
    CHECK(var0 == doctest::Approx(0.05 * 0.05 * 14.0).epsilon(0.35));
}

TEST_CASE("variational dense kl") {
    RngState rng(43);
    VariationalDense vd("v", 3, 2, rng);

    Tape tape;
    ForwardPass fp(tape, false, false);
    double manual = 0.0;
    for (Param* p : {vd.parameters()[0], vd.parameters()[2]}) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            manual += kl_gaussian_factor(p->value[i], VariationalDense::kInitSigma, 0.0, 1.0);
        }
    }
    CHECK(vd.kl(fp).item() == doctest::Approx(manual).epsilon(1e-9));

    // posterior equal to the prior: zero distance
    VariationalDense at_prior("p", 3, 2, rng);
    at_prior.parameters()[0]->value = Tensor::zeros({3, 2});
    at_prior.parameters()[1]->value = Tensor::full({3, 2}, softplus_inverse(1.0));
    at_prior.parameters()[2]->value = Tensor::zeros({2});
    at_prior.parameters()[3]->value = Tensor::full({2}, softplus_inverse(1.0));
    Tape t2;
    ForwardPass fp2(t2, false, false);
    CHECK(at_prior.kl(fp2).item() == doctest::Approx(0.0).epsilon(1e-12));

    auto kl_loss = [&vd](ForwardPass& pass) { return vd.kl(pass); };
    CHECK(param_gradcheck(kl_loss, vd.parameters()).max_err < 1e-6);
}

TEST_CASE("variational dense trainable prior") {
    RngState rng(47);
    VariationalDense fixed("f", 3, 2, rng);
    VariationalDense trainable("t", 3, 2, rng, true);
    for (int i = 0; i < 4; ++i) {
        trainable.parameters()[i]->value = fixed.parameters()[i]->value;
    }

    // prior scalars start at the fixed prior, so both layers agree exactly
    Tape t1, t2;
    ForwardPass fp1(t1, false, false), fp2(t2, false, false);
    CHECK(trainable.kl(fp1).item() == doctest::Approx(fixed.kl(fp2).item()).epsilon(1e-12));

    // and the gradient flows into the prior parameters as well
    auto kl_loss = [&trainable](ForwardPass& pass) { return trainable.kl(pass); };
    auto res = param_gradcheck(kl_loss, trainable.parameters());
    CHECK(res.checked == 18);
    CHECK(res.max_err < 1e-6);

    Tape t3;
    ForwardPass fp3(t3, false, false);
    Tensor kl = trainable.kl(fp3);
    t3.backward(kl);
    Tensor prior_grad = fp3.grad_of(*trainable.parameters()[5]);
    CHECK(prior_grad.size() == 1);
    CHECK(prior_grad[0] != 0.0);
}

TEST_CASE("variational dense sampling gradients") {
    RngState rng(53);
    VariationalDense vd("v", 3, 2, rng);
    Tensor x = rand_tensor(rng, {2, 3});
    auto loss = [&](ForwardPass& pass) { return sum(square(vd.forward(pass, x))); };
    auto res = param_gradcheck(loss, vd.parameters(), false, true, 99);
    CHECK(res.checked == 16);
    CHECK(res.max_err < 1e-6);
}

TEST_CASE("vae round trip") {
    RngState rng(59);
    Vae vae(6, 2, rng, 4);
    CHECK(count_params(vae.parameters()) == 90);
    CHECK(vae.input() == 6);
    CHECK(vae.latent() == 2);

    Tensor x = rand_tensor(rng, {3, 6}, -0.9, 0.9);
    Tape tape;
    ForwardPass fp(tape, false, false);
    LatentPosterior post = vae.encode(fp, x);
    REQUIRE(post.mu.shape() == Shape{3, 2});
    REQUIRE(post.sigma.shape() == Shape{3, 2});
    for (std::size_t i = 0; i < post.sigma.size(); ++i) CHECK(post.sigma[i] > 0.0);

    // deterministic path: z is exactly the posterior mean
    Tensor z = vae.reparameterize(fp, post);
    CHECK(z.values() == post.mu.values());
    CHECK(vae.compress(fp, x).values() == post.mu.values());

    Tensor x_hat = vae.decode(fp, z);
    REQUIRE(x_hat.shape() == x.shape());
    for (std::size_t i = 0; i < x_hat.size(); ++i) {
        CHECK(x_hat[i] > -1.0);
        CHECK(x_hat[i] < 1.0);
    }

    // the objective is the reconstruction error plus the scaled latent kl
    Tensor obj = vae.loss(fp, x);
    const double recon = reconstruction_error(x, x_hat);
    double kl = 0.0;
    for (std::size_t i = 0; i < post.mu.size(); ++i) {
        kl += kl_gaussian_factor(post.mu[i], post.sigma[i], 0.0, 1.0);
    }
    CHECK(obj.item() == doctest::Approx(recon + kl / 3.0).epsilon(1e-9));
    CHECK(obj.item() >= recon - 1e-12);
}

TEST_CASE("vae gradients through the sampled objective") {
    RngState rng(61);
    Vae vae(4, 2, rng, 3);
    Tensor x = rand_tensor(rng, {2, 4}, -0.8, 0.8);
    auto loss = [&](ForwardPass& pass) { return vae.loss(pass, x); };
    auto res = param_gradcheck(loss, vae.parameters(), true, true, 7);
    CHECK(res.checked == count_params(vae.parameters()));
    CHECK(res.max_err < 1e-5);
}
