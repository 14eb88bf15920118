#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bcast/data.hpp"
#include "bcast/layers.hpp"
#include "bcast/metrics.hpp"
#include "bcast/training.hpp"

namespace bcast {

// The model zoo. m1/m3/m5 compress input windows through the autoencoder
// before the recurrent stage; m2/m4/m6 consume raw lag windows; m7 is a
// dense Bayesian network; m8 is linear quantile regression.
enum class ModelId { M1, M2, M3, M4, M5, M6, M7, M8 };

enum class FeatureKind { BiLstm, Lstm, Rnn, Dense, QuantileRegression };

struct ModelConfig {
    ModelId id = ModelId::M1;
    FeatureKind kind = FeatureKind::BiLstm;
    bool use_vae = true;
    std::size_t neurons = 48;
    std::size_t lags = 96;
    std::size_t latent = 48;
};

// Zoo entry for an id with the default sizes.
ModelConfig model_config(ModelId id);

ModelId parse_model_id(const std::string& code);  // "m1".."m8"
std::string model_code(ModelId id);               // "m1"
std::string model_label(ModelId id);              // "vae-bayesian-bilstm"

// Probabilistic forecast on the original kWh scale.
struct ForecastResult {
    std::vector<double> mean;
    std::vector<double> std;
    std::map<double, IntervalForecast> intervals;  // coverage level -> interval
    QuantileForecast quantiles;                    // decile grid
    std::size_t mc_samples = 0;
};

inline const std::vector<double> kDefaultLevels = {0.5, 0.9};

// A trainable model that can also produce a probabilistic forecast in the
// scaled (-1,1) space. input_width is the expected window width.
class ForecastModel : public Trainable {
public:
    struct ScaledForecast {
        std::vector<double> mean;
        std::vector<double> std;
        std::map<double, IntervalForecast> intervals;
        QuantileForecast quantiles;
    };

    virtual ScaledForecast forecast_scaled(const Tensor& x, std::size_t mc_samples,
                                           RngState& rng,
                                           const std::vector<double>& levels) = 0;
    virtual std::size_t input_width() const = 0;
};

// Recurrent or dense feature block with a variational Gaussian head emitting
// a predictive mean and standard deviation per window. Trains on the
// negative log-likelihood plus the weighted posterior KL.
class BayesianForecaster : public ForecastModel {
public:
    BayesianForecaster(FeatureKind kind, std::size_t input_steps, std::size_t neurons,
                       double dropout_rate, RngState& rng);

    std::vector<Param*> parameters() override;
    Tensor training_loss(ForwardPass& fp, const Tensor& x, const Tensor& y,
                         double kl_weight) override;
    double validation_loss(const Tensor& x, const Tensor& y, double kl_weight) override;
    ScaledForecast forecast_scaled(const Tensor& x, std::size_t mc_samples, RngState& rng,
                                   const std::vector<double>& levels) override;
    std::size_t input_width() const override { return input_steps_; }

    struct Prediction {
        Tensor mu;
        Tensor sigma;
        Tensor kl;
    };
    Prediction predict(ForwardPass& fp, const Tensor& x);

private:
    FeatureKind kind_;
    std::size_t input_steps_;
    std::unique_ptr<RecurrentFeatures> core_;
    std::unique_ptr<Dense> dense_core_;
    Dropout dropout_;
    VariationalDense head_;
};

// Linear quantile regression trained with pinball loss on a fixed level grid
// covering the deciles plus the interval endpoints needed for 50% and 90%
// bands. The point forecast is the median.
class QuantileRegressor : public ForecastModel {
public:
    QuantileRegressor(std::size_t lags, RngState& rng);

    std::vector<Param*> parameters() override;
    Tensor training_loss(ForwardPass& fp, const Tensor& x, const Tensor& y,
                         double kl_weight) override;
    double validation_loss(const Tensor& x, const Tensor& y, double kl_weight) override;
    ScaledForecast forecast_scaled(const Tensor& x, std::size_t mc_samples, RngState& rng,
                                   const std::vector<double>& levels) override;
    std::size_t input_width() const override { return lags_; }

    static const std::vector<double>& level_grid();

private:
    std::size_t lags_;
    Param w_, b_;
};

// A zoo model ready to train and forecast: the optional window autoencoder
// plus the forecaster it feeds. weight_count covers the forecaster only (the
// autoencoder is a preprocessing stage, not part of the deployed predictor).
struct BuiltModel {
    ModelConfig config;
    std::unique_ptr<VaeModel> vae;
    std::unique_ptr<ForecastModel> forecaster;

    std::size_t weight_count() const;
};

BuiltModel build_model(const ModelConfig& cfg, RngState& rng);

// Trains a built model on the training windows: two-stage for autoencoder
// variants, single-stage otherwise. Returns the forecaster history (and the
// autoencoder history first when present).
std::pair<TrainHistory, TrainHistory> train_model(BuiltModel& model,
                                                  const WindowedDataset& train,
                                                  const TrainConfig& cfg, RngState& rng);

// Monte-Carlo forecast over raw windows, inverse-scaled to kWh. Draws
// mc_samples weight settings, one predictive draw each, and reports the
// averaged mean, total-variance std, central intervals at the requested
// coverage levels, and decile quantiles. Bayesian models require
// mc_samples >= 2.
ForecastResult forecast_with_pis(BuiltModel& model, const Tensor& x,
                                 const ScalerParams& scaler, std::size_t mc_samples,
                                 RngState& rng,
                                 const std::vector<double>& levels = kDefaultLevels);

// Forecast equal to the last observed lag of each window.
std::vector<double> persistence_baseline(const Tensor& x);

enum class Subset { Full, SixMonths, Intraday };

Subset parse_subset(const std::string& name);  // "full", "six-months", "intraday"
std::string subset_name(Subset subset);

// full: unchanged; six-months: chronological first half of the windows;
// intraday: windows whose target falls in the 07:30-16:30 daytime slots.
WindowedDataset apply_subset(const WindowedDataset& ds, Subset subset);

struct ComparisonRow {
    std::string model;
    bool failed = false;
    std::string error;
    double rmse = 0.0;
    double mae = 0.0;
    double r = 0.0;
    double pinball = 0.0;
    double winkler = 0.0;
    double brier = 0.0;
    double train_seconds = 0.0;
    std::size_t weights = 0;
};

struct ComparisonReport {
    std::string dataset;
    std::vector<ComparisonRow> rows;

    std::vector<ScoreRow> score_rows() const;  // deterministic metrics only
};

// Trains and evaluates each model on the common split. Every model gets an
// independent seed derived from cfg.seed and its zoo id, so adding or
// removing models never changes another row. A model failure marks its row
// and the run continues.
ComparisonReport run_comparison(const std::vector<ModelConfig>& models,
                                const SplitDataset& split, const TrainConfig& cfg,
                                std::size_t mc_samples, const std::string& dataset_name);

void write_comparison_csv(const std::filesystem::path& path, const ComparisonReport& report);

// Plot-ready CSV: t, y_true, mean, lb50, ub50, lb90, ub90. Requires the 0.5
// and 0.9 intervals and finite values throughout.
void emit_plot_data(const ForecastResult& result, const std::vector<double>& y_true,
                    const std::filesystem::path& path);

} // namespace bcast
