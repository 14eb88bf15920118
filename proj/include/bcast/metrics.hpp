#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bcast/errors.hpp"
#include "bcast/tensor.hpp"

namespace bcast {

// Central prediction interval at a given coverage level (e.g. 0.9 covers the
// 5th..95th percentile band).
struct IntervalForecast {
    double level = 0.0;
    std::vector<double> lower;
    std::vector<double> upper;
};

// Per-step forecasts of several quantile levels. Construction sorts the
// levels and repairs quantile crossing by sorting the values at each step,
// so values are non-decreasing across levels everywhere.
class QuantileForecast {
public:
    QuantileForecast() = default;
    QuantileForecast(std::vector<double> levels,
                     std::vector<std::vector<double>> values_per_level);

    const std::vector<double>& levels() const { return levels_; }
    const std::vector<double>& series(std::size_t level_index) const;
    std::size_t steps() const { return levels_.empty() ? 0 : values_[0].size(); }

    // Series for an exact level; NotFoundError when absent.
    const std::vector<double>& at_level(double level) const;

private:
    std::vector<double> levels_;
    std::vector<std::vector<double>> values_; // values_[k][t], aligned with levels_
};

double rmse(const std::vector<double>& pred, const std::vector<double>& truth);
double mae(const std::vector<double>& pred, const std::vector<double>& truth);

// Coefficient of fit: 1 - SSE / SST. Constant truth has no SST and is a
// domain error.
double r_score(const std::vector<double>& pred, const std::vector<double>& truth);

// Mean squared difference between forecast and observation series.
double brier_score(const std::vector<double>& forecast, const std::vector<double>& truth);

// Single-pair pinball loss at quantile level q in (0, 1).
double pinball_loss(double y, double y_hat, double q);

// Pinball loss averaged over all steps and all levels of the forecast.
double pinball_average(const QuantileForecast& qf, const std::vector<double>& truth);

// Interval score for one step: width, plus a miss penalty scaled by 2/gamma
// where gamma = 1 - coverage level.
double winkler_score(double lb, double ub, double y, double gamma);

// Winkler score averaged over a series.
double winkler_average(const IntervalForecast& pi, const std::vector<double>& truth);

// Mean squared reconstruction error over all tensor entries.
double reconstruction_error(const Tensor& x, const Tensor& x_hat);

// One row of the long-format score table.
struct ScoreRow {
    std::string model;
    std::string dataset;
    std::string metric;
    double value = 0.0;
};

// Writes "model,dataset,metric,value" rows with fixed 6-decimal values.
void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoreRow>& rows);

} // namespace bcast
