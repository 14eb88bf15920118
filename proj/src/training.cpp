#include "bcast/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "bcast/metrics.hpp"

namespace bcast {

namespace {

constexpr double kGradClipNorm = 5.0;
constexpr double kInf = std::numeric_limits<double>::infinity();

void validate_config(const TrainConfig& cfg, std::size_t rows) {
    if (cfg.epochs == 0) throw ConfigError("epochs must be positive");
    if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
    if (cfg.lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (cfg.val_split <= 0.0 || cfg.val_split >= 1.0) {
        throw ConfigError("validation split " + std::to_string(cfg.val_split) +
                          " outside (0, 1)");
    }
    if (cfg.patience == 0 || cfg.patience > cfg.epochs) {
        throw ConfigError("patience " + std::to_string(cfg.patience) +
                          " outside [1, epochs=" + std::to_string(cfg.epochs) + "]");
    }
    if (rows < cfg.batch_size) {
        throw ContractError("dataset of " + std::to_string(rows) +
                            " windows is smaller than one batch of " +
                            std::to_string(cfg.batch_size));
    }
}

} // namespace

// ---- Adam -----------------------------------------------------------------

Adam::Adam(std::vector<Param*> params, Config cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i]->value.size(), 0.0);
        v_[i].assign(params_[i]->value.size(), 0.0);
    }
}

void Adam::step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size()) {
        throw ContractError("adam: " + std::to_string(grads.size()) + " gradients for " +
                            std::to_string(params_.size()) + " parameters");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_[i];
        const Tensor& g = grads[i];
        if (g.shape() != p.value.shape()) {
            throw ContractError("adam: gradient shape " + shape_str(g.shape()) +
                                " does not match parameter " + p.name);
        }
        std::vector<double> next = p.value.values();
        const std::vector<double>& gv = g.values();
        std::vector<double>& m = m_[i];
        std::vector<double>& v = v_[i];
        for (std::size_t j = 0; j < next.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gv[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gv[j] * gv[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            next[j] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
        p.value = Tensor(p.value.shape(), std::move(next));
    }
}

double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
    if (max_norm <= 0.0) throw ContractError("clip norm must be positive");
    double total = 0.0;
    for (const Tensor& g : grads) {
        for (std::size_t i = 0; i < g.size(); ++i) total += g[i] * g[i];
    }
    total = std::sqrt(total);
    if (total > max_norm) {
        const double scale = max_norm / total;
        for (Tensor& g : grads) g = mul_scalar(g, scale);
    }
    return total;
}

// ---- row helpers ------------------------------------------------------------

Tensor take_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
    const bool flat = t.shape().size() == 1;
    const std::size_t n = flat ? t.size() : t.rows();
    const std::size_t width = flat ? 1 : t.cols();
    std::vector<double> out;
    out.reserve(idx.size() * width);
    const std::vector<double>& v = t.values();
    for (std::size_t r : idx) {
        if (r >= n) throw ContractError("take_rows: row index out of range");
        out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(r * width),
                   v.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
    }
    if (flat) return Tensor({idx.size()}, std::move(out));
    return Tensor({idx.size(), width}, std::move(out));
}

Tensor rows_range(const Tensor& t, std::size_t start, std::size_t count) {
    const bool flat = t.shape().size() == 1;
    const std::size_t n = flat ? t.size() : t.rows();
    const std::size_t width = flat ? 1 : t.cols();
    if (start + count > n) throw ContractError("rows_range: range exceeds tensor rows");
    const std::vector<double>& v = t.values();
    std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(start * width),
                            v.begin() + static_cast<std::ptrdiff_t>((start + count) * width));
    if (flat) return Tensor({count}, std::move(out));
    return Tensor({count, width}, std::move(out));
}

// ---- fit --------------------------------------------------------------------

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << "epoch,train_loss,val_loss,seconds\n";
    char line[128];
    for (const EpochRecord& e : history.epochs) {
        std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.3f\n", e.epoch, e.train_loss,
                      e.val_loss, e.seconds);
        out << line;
    }
    if (!out) throw DataError("failed while writing " + path.string());
}

TrainHistory fit(Trainable& model, const WindowedDataset& train, const TrainConfig& cfg,
                 RngState& rng) {
    const std::size_t n = train.size();
    validate_config(cfg, n);
    const std::size_t val_n =
        std::max<std::size_t>(1, static_cast<std::size_t>(cfg.val_split * static_cast<double>(n)));
    if (val_n >= n) throw ContractError("validation split leaves no training rows");
    const std::size_t train_n = n - val_n;

    const Tensor x_tr = rows_range(train.X, 0, train_n);
    const Tensor y_tr = rows_range(train.y, 0, train_n);
    const Tensor x_val = rows_range(train.X, train_n, val_n);
    const Tensor y_val = rows_range(train.y, train_n, val_n);

    const std::size_t num_batches = (train_n + cfg.batch_size - 1) / cfg.batch_size;
    const double kl_weight = 1.0 / static_cast<double>(num_batches);

    std::vector<Param*> params = model.parameters();
    Adam adam(params, {.lr = cfg.lr});

    std::vector<std::size_t> order(train_n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainHistory history;
    history.best_val = kInf;
    std::vector<Tensor> best;
    best.reserve(params.size());
    for (Param* p : params) best.push_back(p->value);
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        rng.shuffle(order);
        double loss_sum = 0.0;

        for (std::size_t b = 0; b < num_batches; ++b) {
            const std::size_t lo = b * cfg.batch_size;
            const std::size_t hi = std::min(lo + cfg.batch_size, train_n);
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                               order.begin() + static_cast<std::ptrdiff_t>(hi));
            Tensor xb = take_rows(x_tr, idx);
            Tensor yb = take_rows(y_tr, idx);

            Tape tape;
            ForwardPass fp(tape, true, true, &rng);
            double batch_loss = 0.0;
            try {
                Tensor loss = model.training_loss(fp, xb, yb, kl_weight);
                batch_loss = loss.item();
                if (!std::isfinite(batch_loss)) {
                    throw DivergenceError("batch loss is not finite at epoch " +
                                          std::to_string(epoch));
                }
                tape.backward(loss);
            } catch (const DomainError& e) {
                throw DivergenceError("loss left its domain at epoch " + std::to_string(epoch) +
                                      ": " + e.what());
            }

            std::vector<Tensor> grads;
            grads.reserve(params.size());
            for (Param* p : params) grads.push_back(fp.grad_of(*p));
            clip_global_norm(grads, kGradClipNorm);
            adam.step(grads);
            loss_sum += batch_loss * static_cast<double>(hi - lo);
        }

        double val = 0.0;
        try {
            val = model.validation_loss(x_val, y_val, kl_weight);
        } catch (const DomainError& e) {
            throw DivergenceError("validation loss left its domain at epoch " +
                                  std::to_string(epoch) + ": " + e.what());
        }
        if (!std::isfinite(val)) {
            throw DivergenceError("validation loss is not finite at epoch " +
                                  std::to_string(epoch));
        }

        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        history.epochs.push_back(
            {epoch, loss_sum / static_cast<double>(train_n), val, seconds});
        history.stopped_epoch = epoch;

        if (val < history.best_val) {
            history.best_val = val;
            history.best_epoch = epoch;
            since_best = 0;
            for (std::size_t i = 0; i < params.size(); ++i) best[i] = params[i]->value;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }

    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
    return history;
}

// ---- two-stage schedule -------------------------------------------------

VaeModel::VaeModel(std::size_t input, std::size_t latent, RngState& rng, std::size_t hidden,
                   bool identity_skip)
    : vae_(input, latent, rng, hidden, identity_skip) {}

Tensor VaeModel::training_loss(ForwardPass& fp, const Tensor& x, const Tensor& y,
                               double kl_weight) {
    (void)y;
    (void)kl_weight;
    return vae_.loss(fp, x);
}

double VaeModel::validation_loss(const Tensor& x, const Tensor& y, double kl_weight) {
    (void)y;
    (void)kl_weight;
    Tape tape;
    ForwardPass fp(tape, false, false);
    Tensor x_hat = vae_.decode(fp, vae_.compress(fp, x));
    return reconstruction_error(x, x_hat);
}

Tensor encode_windows(Vae& vae, const Tensor& x, std::size_t chunk) {
    if (chunk == 0) throw ContractError("encode_windows: chunk must be positive");
    const std::size_t n = x.rows();
    std::vector<double> out;
    out.reserve(n * vae.latent());
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t count = std::min(chunk, n - start);
        Tape tape;
        ForwardPass fp(tape, false, false);
        Tensor z = vae.compress(fp, rows_range(x, start, count));
        out.insert(out.end(), z.values().begin(), z.values().end());
    }
    return Tensor({n, vae.latent()}, std::move(out));
}

namespace {

// Stage-2 adapter for stochastic latent codes: each minibatch re-encodes its
// windows and draws one z per window; validation stays on the mean path.
// Only the forecaster's parameters are exposed, so the encoder stays frozen.
class StochasticZ : public Trainable {
public:
    StochasticZ(Vae& vae, Trainable& forecaster) : vae_(vae), forecaster_(forecaster) {}

    std::vector<Param*> parameters() override { return forecaster_.parameters(); }

    Tensor training_loss(ForwardPass& fp, const Tensor& x, const Tensor& y,
                         double kl_weight) override {
        Tensor z = vae_.reparameterize(fp, vae_.encode(fp, x));
        return forecaster_.training_loss(fp, z, y, kl_weight);
    }

    double validation_loss(const Tensor& x, const Tensor& y, double kl_weight) override {
        return forecaster_.validation_loss(encode_windows(vae_, x), y, kl_weight);
    }

private:
    Vae& vae_;
    Trainable& forecaster_;
};

} // namespace

std::pair<TrainHistory, TrainHistory> fit_vae_then_bayesian(VaeModel& vae_model,
                                                            Trainable& forecaster,
                                                            const WindowedDataset& train,
                                                            const TrainConfig& cfg,
                                                            RngState& rng) {
    TrainHistory stage1 = fit(vae_model, train, cfg, rng);

    if (cfg.stochastic_z) {
        StochasticZ wrapped(vae_model.vae(), forecaster);
        TrainHistory stage2 = fit(wrapped, train, cfg, rng);
        return {stage1, stage2};
    }

    WindowedDataset coded;
    coded.X = encode_windows(vae_model.vae(), train.X);
    coded.y = train.y;
    coded.target_slot = train.target_slot;
    coded.scaler = train.scaler;
    coded.lags = vae_model.vae().latent();
    TrainHistory stage2 = fit(forecaster, coded, cfg, rng);
    return {stage1, stage2};
}

// ---- grid search --------------------------------------------------------

namespace {

void apply_grid_value(TrainConfig& cfg, const std::string& key, double v) {
    const auto as_count = [&](const char* what) {
        if (v <= 0.0 || v != std::floor(v)) {
            throw ConfigError(std::string(what) + " grid value " + std::to_string(v) +
                              " is not a positive integer");
        }
        return static_cast<std::size_t>(v);
    };
    if (key == "lr") {
        cfg.lr = v;
    } else if (key == "epochs") {
        cfg.epochs = as_count("epochs");
    } else if (key == "batch_size") {
        cfg.batch_size = as_count("batch_size");
    } else if (key == "patience") {
        cfg.patience = as_count("patience");
    } else if (key == "neurons") {
        cfg.neurons = as_count("neurons");
    } else if (key == "lags") {
        cfg.lags = as_count("lags");
    } else if (key == "latent_dims") {
        cfg.latent_dims = as_count("latent_dims");
    } else if (key == "dropout") {
        cfg.dropout = v;
    } else {
        throw ConfigError("unknown grid key '" + key + "'");
    }
}

} // namespace

GridOutcome grid_search(const std::map<std::string, std::vector<double>>& space,
                        const WindowedDataset& train, const TrainConfig& base,
                        const ModelFactory& factory, RngState& rng) {
    if (space.empty()) throw ContractError("grid search: empty space");
    std::vector<std::string> keys;
    std::size_t total = 1;
    for (const auto& [key, values] : space) {
        if (values.empty()) {
            throw ContractError("grid search: no values for key '" + key + "'");
        }
        keys.push_back(key);
        total *= values.size();
    }

    // first key varies slowest, mixed-radix over the value lists
    std::vector<std::size_t> stride(keys.size(), 1);
    for (std::size_t k = keys.size(); k-- > 1;) {
        stride[k - 1] = stride[k] * space.at(keys[k]).size();
    }

    std::vector<GridResult> table;
    table.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        TrainConfig cfg = base;
        for (std::size_t k = 0; k < keys.size(); ++k) {
            const std::vector<double>& values = space.at(keys[k]);
            apply_grid_value(cfg, keys[k], values[(i / stride[k]) % values.size()]);
        }
        std::unique_ptr<Trainable> model = factory(cfg);
        GridResult row{cfg, kInf, count_params(model->parameters()), false};
        RngState candidate_rng = rng.derive(i);
        try {
            row.val_loss = fit(*model, train, cfg, candidate_rng).best_val;
        } catch (const DivergenceError&) {
            row.diverged = true;
        }
        table.push_back(std::move(row));
    }

    const auto better = [](const GridResult& a, const GridResult& b) {
        if (a.diverged != b.diverged) return !a.diverged;
        if (a.val_loss != b.val_loss) return a.val_loss < b.val_loss;
        if (a.param_count != b.param_count) return a.param_count < b.param_count;
        return a.config.lr < b.config.lr;
    };
    const GridResult& best = *std::min_element(table.begin(), table.end(), better);
    return {best.config, std::move(table)};
}

} // namespace bcast
