#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "bcast/data.hpp"
#include "bcast/layers.hpp"
#include "bcast/tensor.hpp"

namespace bcast {

// Training-loop settings. Defaults follow the reference configuration; the
// architecture fields (neurons, lags, latent_dims, dropout) ride along so a
// single object can describe one model end to end.
struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    double lr = 0.001;
    std::size_t patience = 20;
    double val_split = 0.2;
    std::size_t neurons = 48;
    std::size_t lags = 96;
    std::size_t latent_dims = 48;
    double dropout = 0.5;
    std::uint64_t seed = 42;
    bool stochastic_z = false;
};

// Bias-corrected Adam. One moment pair per parameter entry.
class Adam {
public:
    struct Config {
        double lr = 0.001;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam(std::vector<Param*> params, Config cfg);

    // Applies one update; grads must align with the parameter list.
    void step(const std::vector<Tensor>& grads);
    std::size_t steps() const { return t_; }

private:
    std::vector<Param*> params_;
    Config cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

// Scales the gradient set so its global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_norm(std::vector<Tensor>& grads, double max_norm);

// Anything fit() can train. training_loss builds the minibatch objective on
// the pass's tape with dropout and weight sampling active; validation_loss
// is the deterministic counterpart used for early stopping. kl_weight is
// 1 / number_of_minibatches; models without a complexity term ignore it.
class Trainable {
public:
    virtual ~Trainable() = default;
    virtual std::vector<Param*> parameters() = 0;
    virtual Tensor training_loss(ForwardPass& fp, const Tensor& x, const Tensor& y,
                                 double kl_weight) = 0;
    virtual double validation_loss(const Tensor& x, const Tensor& y, double kl_weight) = 0;
};

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;    // epoch with the lowest validation loss
    std::size_t stopped_epoch = 0; // last epoch that actually ran
    double best_val = 0.0;
};

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

// Row selection on plain tensors ([n] or [n x d]).
Tensor take_rows(const Tensor& t, const std::vector<std::size_t>& idx);
Tensor rows_range(const Tensor& t, std::size_t start, std::size_t count);

// Minibatch gradient descent with Adam, a chronological validation tail,
// early stopping on the validation loss and best-epoch restoration.
// Gradients are clipped to a global L2 norm of 5. Throws DivergenceError
// when a batch loss stops being finite (or its computation leaves a
// numerical domain, the usual way a diverging run actually fails).
TrainHistory fit(Trainable& model, const WindowedDataset& train, const TrainConfig& cfg,
                 RngState& rng);

// Trainable wrapper around the window autoencoder: sampled objective for
// training, deterministic posterior-mean reconstruction error for early
// stopping.
class VaeModel : public Trainable {
public:
    VaeModel(std::size_t input, std::size_t latent, RngState& rng, std::size_t hidden = 64,
             bool identity_skip = false);

    std::vector<Param*> parameters() override { return vae_.parameters(); }
    Tensor training_loss(ForwardPass& fp, const Tensor& x, const Tensor& y,
                         double kl_weight) override;
    double validation_loss(const Tensor& x, const Tensor& y, double kl_weight) override;
    Vae& vae() { return vae_; }

private:
    Vae vae_;
};

// Posterior-mean code of every window, computed in chunks.
Tensor encode_windows(Vae& vae, const Tensor& x, std::size_t chunk = 256);

// Two-stage schedule: train the autoencoder on the input windows, then train
// the forecaster on the (frozen) latent codes. The default maps each window
// to its posterior mean once; with cfg.stochastic_z the forecaster sees a
// fresh latent sample of each window per minibatch instead, and validation
// stays on the mean path.
std::pair<TrainHistory, TrainHistory> fit_vae_then_bayesian(VaeModel& vae_model,
                                                            Trainable& forecaster,
                                                            const WindowedDataset& train,
                                                            const TrainConfig& cfg,
                                                            RngState& rng);

struct GridResult {
    TrainConfig config;
    double val_loss = 0.0;
    std::size_t param_count = 0;
    bool diverged = false;
};

struct GridOutcome {
    TrainConfig best;
    std::vector<GridResult> table; // one row per candidate, enumeration order
};

using ModelFactory = std::function<std::unique_ptr<Trainable>(const TrainConfig&)>;

// Exhaustive sweep over the product of the value lists. Keys address
// TrainConfig fields: lr, epochs, batch_size, patience, neurons, lags,
// latent_dims, dropout. Candidates are scored by final validation loss;
// divergent runs rank last; ties prefer fewer parameters, then lower lr.
GridOutcome grid_search(const std::map<std::string, std::vector<double>>& space,
                        const WindowedDataset& train, const TrainConfig& base,
                        const ModelFactory& factory, RngState& rng);

} // namespace bcast
