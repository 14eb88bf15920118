#include "bcast/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "bcast/losses.hpp"

namespace bcast {

namespace {

struct ZooEntry {
    ModelId id;
    const char* code;
    const char* label;
    FeatureKind kind;
    bool use_vae;
};

constexpr ZooEntry kZoo[] = {
    {ModelId::M1, "m1", "vae-bayesian-bilstm", FeatureKind::BiLstm, true},
    {ModelId::M2, "m2", "bayesian-bilstm", FeatureKind::BiLstm, false},
    {ModelId::M3, "m3", "vae-bayesian-lstm", FeatureKind::Lstm, true},
    {ModelId::M4, "m4", "bayesian-lstm", FeatureKind::Lstm, false},
    {ModelId::M5, "m5", "vae-bayesian-rnn", FeatureKind::Rnn, true},
    {ModelId::M6, "m6", "bayesian-rnn", FeatureKind::Rnn, false},
    {ModelId::M7, "m7", "bayesian-ann", FeatureKind::Dense, false},
    {ModelId::M8, "m8", "quantile-regression", FeatureKind::QuantileRegression, false},
};

const ZooEntry& zoo_entry(ModelId id) {
    for (const ZooEntry& e : kZoo) {
        if (e.id == id) return e;
    }
    throw ContractError("unknown model id");
}

// Linear-interpolation sample quantile (R type 7).
double quantile_type7(const std::vector<double>& sorted, double q) {
    const std::size_t n = sorted.size();
    if (n == 0) throw ContractError("quantile of an empty sample");
    const double h = static_cast<double>(n - 1) * q;
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= n) return sorted.back();
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

void check_levels(const std::vector<double>& levels) {
    if (levels.empty()) throw ContractError("forecast needs at least one coverage level");
    for (double c : levels) {
        if (!(c > 0.0 && c < 1.0)) {
            throw ContractError("coverage level " + std::to_string(c) +
                                " is outside (0, 1)");
        }
    }
}

std::string sanitize_csv_field(std::string s) {
    for (char& ch : s) {
        if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
    }
    return s;
}

} // namespace

ModelConfig model_config(ModelId id) {
    const ZooEntry& e = zoo_entry(id);
    ModelConfig cfg;
    cfg.id = e.id;
    cfg.kind = e.kind;
    cfg.use_vae = e.use_vae;
    return cfg;
}

ModelId parse_model_id(const std::string& code) {
    std::string lower = code;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (const ZooEntry& e : kZoo) {
        if (lower == e.code) return e.id;
    }
    throw ConfigError("unknown model '" + code + "', expected m1..m8");
}

std::string model_code(ModelId id) { return zoo_entry(id).code; }

std::string model_label(ModelId id) { return zoo_entry(id).label; }

BayesianForecaster::BayesianForecaster(FeatureKind kind, std::size_t input_steps,
                                       std::size_t neurons, double dropout_rate,
                                       RngState& rng)
    : kind_(kind),
      input_steps_(input_steps),
      dropout_(dropout_rate),
      head_("fc.head",
            [&] {
                if (input_steps == 0 || neurons == 0) {
                    throw ContractError("forecaster needs positive input width and neurons");
                }
                switch (kind) {
                case FeatureKind::BiLstm:
                    return input_steps * 2 * neurons;
                case FeatureKind::Lstm:
                case FeatureKind::Rnn:
                    return input_steps * neurons;
                case FeatureKind::Dense:
                    return neurons;
                default:
                    throw ContractError("quantile regression is not a Bayesian forecaster");
                }
            }(),
            2, rng) {
    switch (kind_) {
    case FeatureKind::BiLstm:
        core_ = std::make_unique<RecurrentFeatures>("fc.core", CoreKind::BiLstm, neurons, rng);
        break;
    case FeatureKind::Lstm:
        core_ = std::make_unique<RecurrentFeatures>("fc.core", CoreKind::Lstm, neurons, rng);
        break;
    case FeatureKind::Rnn:
        core_ = std::make_unique<RecurrentFeatures>("fc.core", CoreKind::Rnn, neurons, rng);
        break;
    case FeatureKind::Dense:
        dense_core_ = std::make_unique<Dense>("fc.dense", input_steps, neurons,
                                              Activation::Tanh, rng);
        break;
    default:
        break; // unreachable, the head initialiser already threw
    }
}

std::vector<Param*> BayesianForecaster::parameters() {
    std::vector<Param*> out =
        core_ ? core_->parameters() : dense_core_->parameters();
    for (Param* p : head_.parameters()) out.push_back(p);
    return out;
}

BayesianForecaster::Prediction BayesianForecaster::predict(ForwardPass& fp, const Tensor& x) {
    if (x.cols() != input_steps_) {
        throw ShapeError("forecaster expects " + std::to_string(input_steps_) +
                         " columns, got " + std::to_string(x.cols()));
    }
    Tensor feats = core_ ? core_->forward(fp, x) : dense_core_->forward(fp, x);
    Tensor out = head_.forward(fp, dropout_.forward(fp, feats));
    const std::size_t batch = x.rows();
    Tensor mu = reshape(slice_cols(out, 0, 1), {batch});
    Tensor sigma = softplus(reshape(slice_cols(out, 1, 1), {batch}));
    return {mu, sigma, head_.kl(fp)};
}

Tensor BayesianForecaster::training_loss(ForwardPass& fp, const Tensor& x, const Tensor& y,
                                         double kl_weight) {
    Prediction p = predict(fp, x);
    Tensor nll = gaussian_nll(p.mu, p.sigma, y);
    return elbo_loss(nll, p.kl, kl_weight).objective;
}

double BayesianForecaster::validation_loss(const Tensor& x, const Tensor& y,
                                           double kl_weight) {
    Tape tape;
    ForwardPass fp(tape, false, false);
    return training_loss(fp, x, y, kl_weight).item();
}

ForecastModel::ScaledForecast BayesianForecaster::forecast_scaled(
    const Tensor& x, std::size_t mc_samples, RngState& rng,
    const std::vector<double>& levels) {
    if (mc_samples < 2) {
        throw ContractError("bayesian forecast needs mc_samples >= 2, got " +
                            std::to_string(mc_samples));
    }
    check_levels(levels);
    const std::size_t n = x.rows();
    const std::size_t kChunk = 256;

    std::vector<double> mu_sum(n, 0.0), mu_sumsq(n, 0.0), var_sum(n, 0.0);
    std::vector<std::vector<double>> draws(n, std::vector<double>(mc_samples));

    for (std::size_t start = 0, c = 0; start < n; start += kChunk, ++c) {
        const std::size_t len = std::min(kChunk, n - start);
        Tensor xc = rows_range(x, start, len);

        // Deterministic features once per chunk; the per-sample passes only
        // rerun the sampled head.
        Tensor feats;
        {
            Tape feat_tape;
            ForwardPass feat_fp(feat_tape, false, false);
            feats = (core_ ? core_->forward(feat_fp, xc) : dense_core_->forward(feat_fp, xc))
                        .detached();
        }

        for (std::size_t s = 0; s < mc_samples; ++s) {
            // Stream s reproduces the same weight draw in every chunk; the
            // predictive noise comes from streams disjoint from all of them.
            RngState weight_rng = rng.derive(s);
            Tape tape;
            ForwardPass fp(tape, false, true, &weight_rng);
            Tensor out = head_.forward(fp, feats);
            RngState noise_rng = rng.derive(mc_samples * (c + 1) + s);
            for (std::size_t i = 0; i < len; ++i) {
                const double m = out.at(i, 0);
                const double sd = softplus_value(out.at(i, 1));
                mu_sum[start + i] += m;
                mu_sumsq[start + i] += m * m;
                var_sum[start + i] += sd * sd;
                draws[start + i][s] = m + sd * noise_rng.normal();
            }
        }
    }

    ScaledForecast sf;
    sf.mean.resize(n);
    sf.std.resize(n);
    const double S = static_cast<double>(mc_samples);
    for (std::size_t i = 0; i < n; ++i) {
        const double mean = mu_sum[i] / S;
        const double epistemic = mu_sumsq[i] / S - mean * mean;
        const double aleatoric = var_sum[i] / S;
        sf.mean[i] = mean;
        sf.std[i] = std::sqrt(std::max(0.0, epistemic + aleatoric));
        std::sort(draws[i].begin(), draws[i].end());
    }

    for (double level : levels) {
        IntervalForecast pi;
        pi.level = level;
        pi.lower.resize(n);
        pi.upper.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            pi.lower[i] = quantile_type7(draws[i], (1.0 - level) / 2.0);
            pi.upper[i] = quantile_type7(draws[i], (1.0 + level) / 2.0);
        }
        sf.intervals.emplace(level, std::move(pi));
    }

    std::vector<double> decile_levels;
    std::vector<std::vector<double>> decile_values;
    for (int d = 1; d <= 9; ++d) {
        const double q = d / 10.0;
        std::vector<double> series(n);
        for (std::size_t i = 0; i < n; ++i) series[i] = quantile_type7(draws[i], q);
        decile_levels.push_back(q);
        decile_values.push_back(std::move(series));
    }
    sf.quantiles = QuantileForecast(std::move(decile_levels), std::move(decile_values));
    return sf;
}

const std::vector<double>& QuantileRegressor::level_grid() {
    static const std::vector<double> grid = {0.05, 0.1, 0.2,  0.25, 0.3, 0.4, 0.5,
                                             0.6,  0.7, 0.75, 0.8,  0.9, 0.95};
    return grid;
}

QuantileRegressor::QuantileRegressor(std::size_t lags, RngState&)
    : lags_(lags),
      w_{"qr.w", Tensor::zeros({lags, level_grid().size()})},
      b_{"qr.b", Tensor::zeros({level_grid().size()})} {
    if (lags == 0) throw ContractError("quantile regression needs at least one lag");
}

std::vector<Param*> QuantileRegressor::parameters() { return {&w_, &b_}; }

Tensor QuantileRegressor::training_loss(ForwardPass& fp, const Tensor& x, const Tensor& y,
                                        double /*kl_weight*/) {
    Tensor preds = add_rowvec(matmul(x, fp(w_)), fp(b_));
    return pinball_training_loss(preds, y.reshaped({y.size(), 1}), level_grid());
}

double QuantileRegressor::validation_loss(const Tensor& x, const Tensor& y,
                                          double kl_weight) {
    Tape tape;
    ForwardPass fp(tape, false, false);
    return training_loss(fp, x, y, kl_weight).item();
}

ForecastModel::ScaledForecast QuantileRegressor::forecast_scaled(
    const Tensor& x, std::size_t /*mc_samples*/, RngState& /*rng*/,
    const std::vector<double>& levels) {
    check_levels(levels);
    Tensor preds;
    {
        Tape tape;
        ForwardPass fp(tape, false, false);
        preds = add_rowvec(matmul(x, fp(w_)), fp(b_)).detached();
    }
    const std::size_t n = x.rows();
    const std::vector<double>& grid = level_grid();
    std::vector<std::vector<double>> per_level(grid.size(), std::vector<double>(n));
    for (std::size_t k = 0; k < grid.size(); ++k) {
        for (std::size_t i = 0; i < n; ++i) per_level[k][i] = preds.at(i, k);
    }
    QuantileForecast qf(grid, std::move(per_level));

    ScaledForecast sf;
    sf.mean = qf.at_level(0.5);
    const std::vector<double>& q25 = qf.at_level(0.25);
    const std::vector<double>& q75 = qf.at_level(0.75);
    sf.std.resize(n);
    // Gaussian-equivalent spread: the interquartile range spans 1.349 sigma.
    for (std::size_t i = 0; i < n; ++i) sf.std[i] = (q75[i] - q25[i]) / 1.349;

    for (double level : levels) {
        IntervalForecast pi;
        pi.level = level;
        pi.lower = qf.at_level((1.0 - level) / 2.0);
        pi.upper = qf.at_level((1.0 + level) / 2.0);
        sf.intervals.emplace(level, std::move(pi));
    }

    std::vector<double> decile_levels;
    std::vector<std::vector<double>> decile_values;
    for (int d = 1; d <= 9; ++d) {
        decile_levels.push_back(d / 10.0);
        decile_values.push_back(qf.at_level(d / 10.0));
    }
    sf.quantiles = QuantileForecast(std::move(decile_levels), std::move(decile_values));
    return sf;
}

std::size_t BuiltModel::weight_count() const {
    return count_params(forecaster->parameters());
}

BuiltModel build_model(const ModelConfig& cfg, RngState& rng) {
    const ZooEntry& e = zoo_entry(cfg.id);
    if (cfg.kind != e.kind || cfg.use_vae != e.use_vae) {
        throw ContractError("model config for " + std::string(e.code) +
                            " does not match its zoo architecture");
    }
    if (cfg.neurons == 0 || cfg.lags == 0 || cfg.latent == 0) {
        throw ContractError("model sizes must be positive");
    }

    BuiltModel built;
    built.config = cfg;
    if (cfg.use_vae) {
        built.vae = std::make_unique<VaeModel>(cfg.lags, cfg.latent, rng);
    }
    const std::size_t steps = cfg.use_vae ? cfg.latent : cfg.lags;
    if (cfg.kind == FeatureKind::QuantileRegression) {
        built.forecaster = std::make_unique<QuantileRegressor>(cfg.lags, rng);
    } else {
        built.forecaster = std::make_unique<BayesianForecaster>(cfg.kind, steps,
                                                                cfg.neurons, 0.5, rng);
    }
    return built;
}

std::pair<TrainHistory, TrainHistory> train_model(BuiltModel& model,
                                                  const WindowedDataset& train,
                                                  const TrainConfig& cfg, RngState& rng) {
    if (model.vae) {
        return fit_vae_then_bayesian(*model.vae, *model.forecaster, train, cfg, rng);
    }
    TrainHistory h = fit(*model.forecaster, train, cfg, rng);
    return {TrainHistory{}, std::move(h)};
}

ForecastResult forecast_with_pis(BuiltModel& model, const Tensor& x,
                                 const ScalerParams& scaler, std::size_t mc_samples,
                                 RngState& rng, const std::vector<double>& levels) {
    Tensor input = x;
    if (model.vae) input = encode_windows(model.vae->vae(), x);
    ForecastModel::ScaledForecast sf =
        model.forecaster->forecast_scaled(input, mc_samples, rng, levels);

    const std::size_t n = sf.mean.size();
    const double half_range = (scaler.max - scaler.min) / 2.0;

    ForecastResult result;
    result.mc_samples = mc_samples;
    result.mean = invert_series(scaler, sf.mean);
    result.std.resize(n);
    for (std::size_t i = 0; i < n; ++i) result.std[i] = sf.std[i] * half_range;

    for (auto& [level, pi] : sf.intervals) {
        IntervalForecast out;
        out.level = level;
        out.lower = invert_series(scaler, pi.lower);
        out.upper = invert_series(scaler, pi.upper);
        for (std::size_t i = 0; i < n; ++i) {
            out.lower[i] = std::min(out.lower[i], result.mean[i]);
            out.upper[i] = std::max(out.upper[i], result.mean[i]);
        }
        result.intervals.emplace(level, std::move(out));
    }

    std::vector<std::vector<double>> inv_values;
    for (std::size_t k = 0; k < sf.quantiles.levels().size(); ++k) {
        inv_values.push_back(invert_series(scaler, sf.quantiles.series(k)));
    }
    result.quantiles = QuantileForecast(sf.quantiles.levels(), std::move(inv_values));
    return result;
}

std::vector<double> persistence_baseline(const Tensor& x) {
    if (x.cols() == 0) throw ContractError("persistence needs at least one lag");
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = x.at(i, x.cols() - 1);
    return out;
}

Subset parse_subset(const std::string& name) {
    if (name == "full") return Subset::Full;
    if (name == "six-months") return Subset::SixMonths;
    if (name == "intraday") return Subset::Intraday;
    throw ConfigError("unknown subset '" + name +
                      "', expected full, six-months or intraday");
}

std::string subset_name(Subset subset) {
    switch (subset) {
    case Subset::Full: return "full";
    case Subset::SixMonths: return "six-months";
    default: return "intraday";
    }
}

WindowedDataset apply_subset(const WindowedDataset& ds, Subset subset) {
    if (subset == Subset::Full) return ds;
    std::vector<std::size_t> rows;
    if (subset == Subset::SixMonths) {
        rows.resize(ds.size() / 2);
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    } else {
        // targets between 07:30 and 16:30, the nine peak daytime hours
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (ds.target_slot[i] >= 15 && ds.target_slot[i] < 33) rows.push_back(i);
        }
    }
    if (rows.empty()) throw DataError("subset selects no windows");
    return select_rows(ds, rows);
}

std::vector<ScoreRow> ComparisonReport::score_rows() const {
    std::vector<ScoreRow> out;
    for (const ComparisonRow& row : rows) {
        if (row.failed) continue;
        out.push_back({row.model, dataset, "rmse", row.rmse});
        out.push_back({row.model, dataset, "mae", row.mae});
        out.push_back({row.model, dataset, "r_score", row.r});
        out.push_back({row.model, dataset, "pinball_avg", row.pinball});
        out.push_back({row.model, dataset, "winkler", row.winkler});
        out.push_back({row.model, dataset, "brier", row.brier});
    }
    return out;
}

ComparisonReport run_comparison(const std::vector<ModelConfig>& models,
                                const SplitDataset& split, const TrainConfig& cfg,
                                std::size_t mc_samples, const std::string& dataset_name) {
    if (models.empty()) throw ContractError("comparison needs at least one model");
    ComparisonReport report;
    report.dataset = dataset_name;

    const std::vector<double> y_true = invert_series(split.test.scaler,
                                                     split.test.y.values());
    RngState base(cfg.seed);

    for (const ModelConfig& mc : models) {
        ComparisonRow row;
        row.model = model_code(mc.id);
        const auto zoo_index = static_cast<std::uint64_t>(mc.id);
        try {
            RngState init_rng = base.derive(zoo_index + 1);
            RngState train_rng = base.derive(zoo_index + 101);
            RngState forecast_rng = base.derive(zoo_index + 201);

            BuiltModel model = build_model(mc, init_rng);
            row.weights = model.weight_count();

            const auto t0 = std::chrono::steady_clock::now();
            train_model(model, split.train, cfg, train_rng);
            const auto t1 = std::chrono::steady_clock::now();
            row.train_seconds = std::chrono::duration<double>(t1 - t0).count();

            ForecastResult fc = forecast_with_pis(model, split.test.X, split.test.scaler,
                                                  mc_samples, forecast_rng);
            row.rmse = rmse(fc.mean, y_true);
            row.mae = mae(fc.mean, y_true);
            row.r = r_score(fc.mean, y_true);
            row.pinball = pinball_average(fc.quantiles, y_true);
            row.winkler = winkler_average(fc.intervals.at(0.9), y_true);
            row.brier = brier_score(fc.mean, y_true);
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

void write_comparison_csv(const std::filesystem::path& path,
                          const ComparisonReport& report) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "model,dataset,rmse,mae,r_score,pinball_avg,winkler,brier,"
           "train_seconds,weights,status\n";
    char buf[160];
    for (const ComparisonRow& row : report.rows) {
        if (row.failed) {
            out << row.model << ',' << report.dataset << ",,,,,,,,,failed: "
                << sanitize_csv_field(row.error) << '\n';
            continue;
        }
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.3f,%zu,ok",
                      row.rmse, row.mae, row.r, row.pinball, row.winkler, row.brier,
                      row.train_seconds, row.weights);
        out << row.model << ',' << report.dataset << ',' << buf << '\n';
    }
}

void emit_plot_data(const ForecastResult& result, const std::vector<double>& y_true,
                    const std::filesystem::path& path) {
    if (!result.intervals.count(0.5) || !result.intervals.count(0.9)) {
        throw ContractError("plot data needs the 0.5 and 0.9 intervals");
    }
    const std::size_t n = result.mean.size();
    if (y_true.size() != n) {
        throw ContractError("plot data series lengths differ: " + std::to_string(n) +
                            " forecasts, " + std::to_string(y_true.size()) + " actuals");
    }
    const IntervalForecast& pi50 = result.intervals.at(0.5);
    const IntervalForecast& pi90 = result.intervals.at(0.9);

    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "t,y_true,mean,lb50,ub50,lb90,ub90\n";
    char buf[200];
    for (std::size_t t = 0; t < n; ++t) {
        const double cols[6] = {y_true[t],     result.mean[t], pi50.lower[t],
                                pi50.upper[t], pi90.lower[t],  pi90.upper[t]};
        for (double v : cols) {
            if (!std::isfinite(v)) {
                throw DataError("plot data has a non-finite value at step " +
                                std::to_string(t));
            }
        }
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", t, cols[0],
                      cols[1], cols[2], cols[3], cols[4], cols[5]);
        out << buf << '\n';
    }
}

} // namespace bcast
