#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bcast/losses.hpp"
#include "bcast/metrics.hpp"
#include "support/gradcheck.hpp"

using namespace bcast;
using testsupport::gradcheck;
using testsupport::rand_tensor;

namespace {

// Independent oracle: KL(q||p) = integral of q(x) * (log q(x) - log p(x))
// evaluated by the trapezoidal rule on a fixed grid spanning both densities.
double kl_numeric(double mu_q, double sq, double mu_p, double sp, double h = 1e-3) {
    const double lo = std::min(mu_q - 10.0 * sq, mu_p - 10.0 * sp);
    const double hi = std::max(mu_q + 10.0 * sq, mu_p + 10.0 * sp);
    auto log_pdf = [](double x, double mu, double s) {
        return -0.5 * std::log(2.0 * std::numbers::pi * s * s) -
               (x - mu) * (x - mu) / (2.0 * s * s);
    };
    auto integrand = [&](double x) {
        const double lq = log_pdf(x, mu_q, sq);
        return std::exp(lq) * (lq - log_pdf(x, mu_p, sp));
    };
    const std::size_t n = static_cast<std::size_t>(std::ceil((hi - lo) / h));
    double acc = 0.5 * (integrand(lo) + integrand(hi));
    for (std::size_t i = 1; i < n; ++i) acc += integrand(lo + static_cast<double>(i) * h);
    return acc * h;
}

} // namespace

TEST_CASE("closed-form gaussian KL matches pinned values") {
    CHECK(kl_gaussian_factor(1.0, 1.0, 0.0, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(kl_gaussian_factor(0.0, 0.5, 0.0, 1.0) ==
          doctest::Approx(0.3181471805599453).epsilon(1e-12));
    CHECK(kl_gaussian_factor(0.0, 1.0, 0.0, 1.0) == 0.0);
    CHECK_THROWS_AS(kl_gaussian_factor(0.0, 0.0, 0.0, 1.0), DomainError);
}

TEST_CASE("closed-form gaussian KL agrees with numerical integration") {
    CHECK(std::abs(kl_gaussian_factor(1.0, 1.0, 0.0, 1.0) - kl_numeric(1.0, 1.0, 0.0, 1.0)) < 1e-6);
    CHECK(std::abs(kl_gaussian_factor(0.0, 0.5, 0.0, 1.0) - kl_numeric(0.0, 0.5, 0.0, 1.0)) < 1e-6);

    RngState rng(5);
    for (int k = 0; k < 20; ++k) {
        const double mu_q = -3.0 + 6.0 * rng.uniform();
        const double mu_p = -3.0 + 6.0 * rng.uniform();
        const double sq = 0.1 + 2.9 * rng.uniform();
        const double sp = 0.1 + 2.9 * rng.uniform();
        CAPTURE(mu_q);
        CAPTURE(mu_p);
        CAPTURE(sq);
        CAPTURE(sp);
        CHECK(std::abs(kl_gaussian_factor(mu_q, sq, mu_p, sp) -
                       kl_numeric(mu_q, sq, mu_p, sp)) < 1e-6);
    }
}

TEST_CASE("tensor KL sums factors and is non-negative") {
    Tensor mu({3}, {1.0, 0.0, -1.0});
    Tensor sigma({3}, {1.0, 0.5, 2.0});
    double expected = kl_gaussian_factor(1, 1, 0, 1) + kl_gaussian_factor(0, 0.5, 0, 1) +
                      kl_gaussian_factor(-1, 2, 0, 1);
    CHECK(kl_gaussian(mu, sigma, 0.0, 1.0).item() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(kl_gaussian(mu, sigma, 0.0, 1.0).item() >= 0.0);

    RngState rng(31);
    for (int k = 0; k < 50; ++k) {
        Tensor m = rand_tensor(rng, {4}, -3.0, 3.0);
        Tensor s = rand_tensor(rng, {4}, 0.1, 3.0);
        CHECK(kl_gaussian(m, s, 0.0, 1.0).item() >= 0.0);
    }
    CHECK_THROWS_AS(kl_gaussian(mu, Tensor({3}, {1.0, -0.5, 1.0}), 0.0, 1.0), DomainError);
    CHECK_THROWS_AS(kl_gaussian(mu, Tensor::zeros({2}), 0.0, 1.0), ShapeError);
}

TEST_CASE("KL gradients match finite differences") {
    RngState rng(13);
    Tensor mu0 = rand_tensor(rng, {2, 3}, -1.5, 1.5);
    Tensor rho0 = rand_tensor(rng, {2, 3}, -2.0, 1.0);
    auto fn = [](Tape&, const std::vector<Tensor>& in) {
        return kl_gaussian(in[0], softplus(in[1]), 0.3, 1.7);
    };
    CHECK(gradcheck(fn, {mu0, rho0}).max_err < 1e-4);
}

TEST_CASE("gaussian NLL pinned values") {
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    Tensor mu = Tensor::scalar(2.0);
    Tensor sigma = Tensor::scalar(1.0);
    CHECK(gaussian_nll(mu, sigma, Tensor::scalar(2.0)).item() ==
          doctest::Approx(half_log_2pi).epsilon(1e-12));
    CHECK(gaussian_nll(mu, sigma, Tensor::scalar(3.0)).item() ==
          doctest::Approx(half_log_2pi + 0.5).epsilon(1e-12));
    CHECK_THROWS_AS(gaussian_nll(mu, Tensor::scalar(0.0), mu), DomainError);
    CHECK_THROWS_AS(gaussian_nll(mu, sigma, Tensor::zeros({2})), ShapeError);
}

TEST_CASE("gaussian NLL is minimised at the right parameters") {
    // residuals with sample std 0.7 around mean 1.2
    std::vector<double> ys = {1.2 - 0.7, 1.2 + 0.7, 1.2 - 0.7, 1.2 + 0.7};
    Tensor y({4}, std::vector<double>(ys));

    double best_mu = 0.0, best_mu_val = 1e99;
    for (double m = -1.0; m <= 3.0; m += 0.01) {
        const double v = gaussian_nll(Tensor::full({4}, m), Tensor::full({4}, 1.0), y).item();
        if (v < best_mu_val) {
            best_mu_val = v;
            best_mu = m;
        }
    }
    CHECK(best_mu == doctest::Approx(1.2).epsilon(0.02));

    double best_s = 0.0, best_s_val = 1e99;
    for (double s = 0.05; s <= 3.0; s += 0.005) {
        const double v = gaussian_nll(Tensor::full({4}, 1.2), Tensor::full({4}, s), y).item();
        if (v < best_s_val) {
            best_s_val = v;
            best_s = s;
        }
    }
    CHECK(best_s == doctest::Approx(0.7).epsilon(0.02));
}

TEST_CASE("gaussian NLL gradients match finite differences") {
    RngState rng(29);
    Tensor mu0 = rand_tensor(rng, {5, 1}, -1.0, 1.0);
    Tensor rho0 = rand_tensor(rng, {5, 1}, -1.5, 1.0);
    Tensor y = rand_tensor(rng, {5, 1}, -1.0, 1.0);
    auto fn = [y](Tape&, const std::vector<Tensor>& in) {
        return gaussian_nll(in[0], softplus(in[1]), y);
    };
    CHECK(gradcheck(fn, {mu0, rho0}).max_err < 1e-4);
}

TEST_CASE("elbo assembles objective and validates kl") {
    ElboReport r = elbo_loss(Tensor::scalar(1.25), Tensor::scalar(4.0), 0.125);
    CHECK(r.objective.item() == doctest::Approx(1.75).epsilon(1e-12));
    CHECK(r.nll == 1.25);
    CHECK(r.kl == 4.0);
    CHECK_THROWS_AS(elbo_loss(Tensor::scalar(1.0), Tensor::scalar(-0.1), 1.0), ContractError);
    CHECK_THROWS_AS(elbo_loss(Tensor::scalar(1.0), Tensor::scalar(1.0), -1.0), ContractError);
}

TEST_CASE("vae loss pinned values") {
    GaussianPrior prior;
    Tensor x({2}, {0.3, -0.4});

    // perfect reconstruction, posterior equal to prior
    CHECK(vae_loss(x, x, Tensor::scalar(0.0), Tensor::scalar(1.0), prior).item() ==
          doctest::Approx(0.0).epsilon(1e-12));

    // perfect reconstruction, unit mean shift: KL alone
    CHECK(vae_loss(x, x, Tensor::scalar(1.0), Tensor::scalar(1.0), prior).item() ==
          doctest::Approx(0.5).epsilon(1e-12));

    // reconstruction alone
    Tensor x0({2}, {0.0, 0.0});
    Tensor x1({2}, {1.0, 1.0});
    CHECK(vae_loss(x0, x1, Tensor::scalar(0.0), Tensor::scalar(1.0), prior).item() ==
          doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("vae loss averages KL over the batch") {
    GaussianPrior prior;
    Tensor x({3, 2}, {0, 0, 0, 0, 0, 0});
    Tensor mu({3, 1}, {1.0, 1.0, 1.0});
    Tensor sigma({3, 1}, {1.0, 1.0, 1.0});
    // three rows, each with KL 0.5, averaged: 0.5
    CHECK(vae_loss(x, x, mu, sigma, prior).item() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("vae loss gradients match finite differences") {
    RngState rng(41);
    Tensor x = rand_tensor(rng, {3, 4});
    Tensor xh = rand_tensor(rng, {3, 4});
    Tensor mu0 = rand_tensor(rng, {3, 2});
    Tensor rho0 = rand_tensor(rng, {3, 2}, -1.0, 1.0);
    GaussianPrior prior{0.0, 1.0};
    auto fn = [x, prior](Tape&, const std::vector<Tensor>& in) {
        return vae_loss(x, tanh(in[0]), in[1], softplus(in[2]), prior);
    };
    CHECK(gradcheck(fn, {xh, mu0, rho0}).max_err < 1e-4);
}

TEST_CASE("pinball training loss matches the metric definition") {
    std::vector<double> levels = {0.1, 0.5, 0.9};
    Tensor preds({2, 3}, {0.8, 1.0, 1.2, 0.5, 0.6, 0.9});
    Tensor y({2}, {1.0, 0.4});

    double expected = 0.0;
    for (std::size_t k = 0; k < levels.size(); ++k) {
        expected += pinball_loss(1.0, preds.at(0, k), levels[k]);
        expected += pinball_loss(0.4, preds.at(1, k), levels[k]);
    }
    expected /= 6.0;
    CHECK(pinball_training_loss(preds, y, levels).item() ==
          doctest::Approx(expected).epsilon(1e-12));

    CHECK_THROWS_AS(pinball_training_loss(preds, y, {0.1, 0.5}), ShapeError);
    CHECK_THROWS_AS(pinball_training_loss(preds, y, {0.1, 0.5, 1.5}), DomainError);
}

TEST_CASE("pinball training loss gradients match finite differences") {
    RngState rng(53);
    Tensor p0 = rand_tensor(rng, {4, 3});
    Tensor y = rand_tensor(rng, {4});
    auto fn = [y](Tape&, const std::vector<Tensor>& in) {
        return pinball_training_loss(in[0], y, {0.1, 0.5, 0.9});
    };
    CHECK(gradcheck(fn, {p0}).max_err < 1e-4);
}
