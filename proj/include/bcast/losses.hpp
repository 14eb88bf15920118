#pragma once

#include "bcast/tensor.hpp"

namespace bcast {

struct GaussianPrior {
    double mu = 0.0;
    double sigma = 1.0;
};

// KL( N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2) ) for one factor.
double kl_gaussian_factor(double mu_q, double sigma_q, double mu_p, double sigma_p);

// Closed-form KL between a factorised Gaussian posterior and an isotropic
// Gaussian prior, summed over all factors. Differentiable w.r.t. mu_q and
// sigma_q when they live on a tape. sigma entries must be positive.
Tensor kl_gaussian(const Tensor& mu_q, const Tensor& sigma_q, double mu_p, double sigma_p);

// Average negative log-likelihood of y under N(mu, sigma^2), elementwise
// over matching shapes. sigma entries must be positive.
Tensor gaussian_nll(const Tensor& mu, const Tensor& sigma, const Tensor& y);

// Training objective of a variational model: NLL plus down-weighted KL.
// kl_weight conventionally equals 1 / number_of_minibatches so the summed
// complexity cost over one epoch matches the full KL once.
struct ElboReport {
    Tensor objective;
    double nll = 0.0;
    double kl = 0.0;
    double kl_weight = 1.0;
};

ElboReport elbo_loss(const Tensor& nll, const Tensor& kl, double kl_weight);

// Autoencoder objective: reconstruction MSE over all entries plus the latent
// KL to the prior, summed over latent dimensions and averaged over the batch.
// mu_q / sigma_q are [B x d_z] (or 1-d for a single example).
Tensor vae_loss(const Tensor& x, const Tensor& x_hat, const Tensor& mu_q,
                const Tensor& sigma_q, const GaussianPrior& prior);

// Pinball objective for quantile-regression training. preds is [B x K], one
// column per level; y is [B x 1]. Averaged over batch and levels.
Tensor pinball_training_loss(const Tensor& preds, const Tensor& y,
                             const std::vector<double>& levels);

} // namespace bcast
