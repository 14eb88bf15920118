#include "bcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace bcast {

namespace {

void check_pair(const char* who, const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty()) throw ContractError(std::string(who) + ": empty series");
    if (a.size() != b.size()) {
        throw ShapeError(std::string(who) + ": series lengths differ, " +
                         std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
}

} // namespace

QuantileForecast::QuantileForecast(std::vector<double> levels,
                                   std::vector<std::vector<double>> values_per_level) {
    if (levels.empty() || levels.size() != values_per_level.size()) {
        throw ContractError("quantile forecast: need one series per level");
    }
    for (double q : levels) {
        if (!(q > 0.0 && q < 1.0)) {
            throw DomainError("quantile forecast: level " + std::to_string(q) + " outside (0, 1)");
        }
    }
    const std::size_t n = values_per_level.front().size();
    for (const auto& s : values_per_level) {
        if (s.size() != n) throw ShapeError("quantile forecast: level series lengths differ");
    }

    std::vector<std::size_t> order(levels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return levels[a] < levels[b]; });
    for (std::size_t k = 0; k < order.size(); ++k) {
        levels_.push_back(levels[order[k]]);
        values_.push_back(std::move(values_per_level[order[k]]));
    }

    // quantile-crossing repair: sort the level values at each step
    std::vector<double> column(levels_.size());
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t k = 0; k < levels_.size(); ++k) column[k] = values_[k][t];
        std::sort(column.begin(), column.end());
        for (std::size_t k = 0; k < levels_.size(); ++k) values_[k][t] = column[k];
    }
}

const std::vector<double>& QuantileForecast::series(std::size_t level_index) const {
    if (level_index >= values_.size()) {
        throw ContractError("quantile forecast: level index out of range");
    }
    return values_[level_index];
}

const std::vector<double>& QuantileForecast::at_level(double level) const {
    for (std::size_t k = 0; k < levels_.size(); ++k) {
        if (std::abs(levels_[k] - level) < 1e-12) return values_[k];
    }
    throw NotFoundError("quantile forecast: level " + std::to_string(level) + " not present");
}

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
    check_pair("rmse", pred, truth);
    double sse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        sse += d * d;
    }
    return std::sqrt(sse / static_cast<double>(pred.size()));
}

double mae(const std::vector<double>& pred, const std::vector<double>& truth) {
    check_pair("mae", pred, truth);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
    return s / static_cast<double>(pred.size());
}

double r_score(const std::vector<double>& pred, const std::vector<double>& truth) {
    check_pair("r_score", pred, truth);
    const double mean_y =
        std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
    double sse = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        sse += (pred[i] - truth[i]) * (pred[i] - truth[i]);
        sst += (truth[i] - mean_y) * (truth[i] - mean_y);
    }
    if (sst == 0.0) throw DomainError("r_score: truth series is constant");
    return 1.0 - sse / sst;
}

double brier_score(const std::vector<double>& forecast, const std::vector<double>& truth) {
    check_pair("brier_score", forecast, truth);
    double s = 0.0;
    for (std::size_t i = 0; i < forecast.size(); ++i) {
        const double d = forecast[i] - truth[i];
        s += d * d;
    }
    return s / static_cast<double>(forecast.size());
}

double pinball_loss(double y, double y_hat, double q) {
    if (!(q > 0.0 && q < 1.0)) {
        throw DomainError("pinball_loss: level " + std::to_string(q) + " outside (0, 1)");
    }
    return y >= y_hat ? q * (y - y_hat) : (1.0 - q) * (y_hat - y);
}

double pinball_average(const QuantileForecast& qf, const std::vector<double>& truth) {
    if (qf.steps() != truth.size()) {
        throw ShapeError("pinball_average: forecast has " + std::to_string(qf.steps()) +
                         " steps, truth " + std::to_string(truth.size()));
    }
    if (truth.empty()) throw ContractError("pinball_average: empty series");
    double s = 0.0;
    for (std::size_t k = 0; k < qf.levels().size(); ++k) {
        const double q = qf.levels()[k];
        const std::vector<double>& series = qf.series(k);
        for (std::size_t t = 0; t < truth.size(); ++t) {
            s += pinball_loss(truth[t], series[t], q);
        }
    }
    return s / static_cast<double>(qf.levels().size() * truth.size());
}

double winkler_score(double lb, double ub, double y, double gamma) {
    if (lb > ub) throw ContractError("winkler_score: lower bound exceeds upper bound");
    if (!(gamma > 0.0 && gamma < 1.0)) {
        throw DomainError("winkler_score: gamma " + std::to_string(gamma) + " outside (0, 1)");
    }
    const double width = ub - lb;
    if (y < lb) return width + 2.0 * (lb - y) / gamma;
    if (y > ub) return width + 2.0 * (y - ub) / gamma;
    return width;
}

double winkler_average(const IntervalForecast& pi, const std::vector<double>& truth) {
    if (pi.lower.size() != pi.upper.size() || pi.lower.size() != truth.size()) {
        throw ShapeError("winkler_average: interval and truth lengths differ");
    }
    if (truth.empty()) throw ContractError("winkler_average: empty series");
    const double gamma = 1.0 - pi.level;
    double s = 0.0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
        s += winkler_score(pi.lower[t], pi.upper[t], truth[t], gamma);
    }
    return s / static_cast<double>(truth.size());
}

double reconstruction_error(const Tensor& x, const Tensor& x_hat) {
    if (x.shape() != x_hat.shape()) {
        throw ShapeError("reconstruction_error: " + shape_str(x.shape()) + " vs " +
                         shape_str(x_hat.shape()));
    }
    if (x.size() == 0) throw ContractError("reconstruction_error: empty tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - x_hat[i];
        s += d * d;
    }
    return s / static_cast<double>(x.size());
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoreRow>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << "model,dataset,metric,value\n";
    char buf[64];
    for (const ScoreRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6f", r.value);
        out << r.model << ',' << r.dataset << ',' << r.metric << ',' << buf << '\n';
    }
    if (!out) throw DataError("failed while writing " + path.string());
}

} // namespace bcast
