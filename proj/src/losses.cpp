#include "bcast/losses.hpp"

#include <cmath>
#include <numbers>

namespace bcast {

namespace {

void check_positive_sigma(const char* who, const Tensor& sigma) {
    for (double s : sigma.values()) {
        if (!(s > 0.0)) {
            throw DomainError(std::string(who) + ": sigma must be positive, got " + std::to_string(s));
        }
    }
}

} // namespace

double kl_gaussian_factor(double mu_q, double sigma_q, double mu_p, double sigma_p) {
    if (!(sigma_q > 0.0) || !(sigma_p > 0.0)) {
        throw DomainError("kl_gaussian_factor: sigma must be positive");
    }
    const double d = mu_q - mu_p;
    return std::log(sigma_p / sigma_q) +
           (sigma_q * sigma_q + d * d) / (2.0 * sigma_p * sigma_p) - 0.5;
}

Tensor kl_gaussian(const Tensor& mu_q, const Tensor& sigma_q, double mu_p, double sigma_p) {
    if (mu_q.shape() != sigma_q.shape()) {
        throw ShapeError("kl_gaussian: mu " + shape_str(mu_q.shape()) + " vs sigma " +
                         shape_str(sigma_q.shape()));
    }
    if (!(sigma_p > 0.0)) throw DomainError("kl_gaussian: prior sigma must be positive");
    check_positive_sigma("kl_gaussian", sigma_q);

    const double inv_two_var_p = 1.0 / (2.0 * sigma_p * sigma_p);
    Tensor quad = mul_scalar(add(square(sigma_q), square(add_scalar(mu_q, -mu_p))), inv_two_var_p);
    Tensor logs = add_scalar(mul_scalar(log(sigma_q), -1.0), std::log(sigma_p) - 0.5);
    return sum(add(logs, quad));
}

Tensor gaussian_nll(const Tensor& mu, const Tensor& sigma, const Tensor& y) {
    if (mu.shape() != sigma.shape() || mu.shape() != y.shape()) {
        throw ShapeError("gaussian_nll: mu " + shape_str(mu.shape()) + ", sigma " +
                         shape_str(sigma.shape()) + ", y " + shape_str(y.shape()) + " disagree");
    }
    check_positive_sigma("gaussian_nll", sigma);

    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    Tensor quad = div(square(sub(y, mu)), mul_scalar(square(sigma), 2.0));
    return mean(add(add_scalar(log(sigma), half_log_2pi), quad));
}

ElboReport elbo_loss(const Tensor& nll, const Tensor& kl, double kl_weight) {
    if (kl_weight < 0.0) throw ContractError("elbo_loss: kl_weight must be non-negative");
    ElboReport report;
    report.nll = nll.item();
    report.kl = kl.item();
    report.kl_weight = kl_weight;
    if (report.kl < 0.0) {
        throw ContractError("elbo_loss: kl is negative (" + std::to_string(report.kl) + ")");
    }
    report.objective = add(nll, mul_scalar(kl, kl_weight));
    return report;
}

Tensor vae_loss(const Tensor& x, const Tensor& x_hat, const Tensor& mu_q,
                const Tensor& sigma_q, const GaussianPrior& prior) {
    if (x.shape() != x_hat.shape()) {
        throw ShapeError("vae_loss: x " + shape_str(x.shape()) + " vs x_hat " +
                         shape_str(x_hat.shape()));
    }
    const std::size_t batch = mu_q.shape().size() == 2 ? mu_q.rows() : 1;
    Tensor recon = mean(square(sub(x, x_hat)));
    Tensor kl = kl_gaussian(mu_q, sigma_q, prior.mu, prior.sigma);
    return add(recon, mul_scalar(kl, 1.0 / static_cast<double>(batch)));
}

Tensor pinball_training_loss(const Tensor& preds, const Tensor& y,
                             const std::vector<double>& levels) {
    if (preds.shape().size() != 2 || preds.cols() != levels.size()) {
        throw ShapeError("pinball_training_loss: predictions " + shape_str(preds.shape()) +
                         " do not give one column per level (" + std::to_string(levels.size()) + ")");
    }
    if (y.size() != preds.rows()) {
        throw ShapeError("pinball_training_loss: " + std::to_string(y.size()) +
                         " targets for " + std::to_string(preds.rows()) + " rows");
    }
    for (double q : levels) {
        if (!(q > 0.0 && q < 1.0)) {
            throw DomainError("pinball_training_loss: level " + std::to_string(q) +
                              " outside (0, 1)");
        }
    }

    Tensor yc = reshape(y, {y.size(), 1});
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t k = 0; k < levels.size(); ++k) {
        const double q = levels[k];
        Tensor p = slice_cols(preds, k, 1);
        Tensor under = mul_scalar(relu(sub(yc, p)), q);
        Tensor over = mul_scalar(relu(sub(p, yc)), 1.0 - q);
        total = add(total, mean(add(under, over)));
    }
    return mul_scalar(total, 1.0 / static_cast<double>(levels.size()));
}

} // namespace bcast
