#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bcast/tensor.hpp"

namespace bcast {

// One half-hourly observation. Timestamps are UTC epoch seconds marking the
// start of the half-hour period.
struct SeriesRecord {
    std::int64_t timestamp = 0;
    double kwh = 0.0;
};

// Accepts "YYYY-MM-DD HH:MM", "YYYY-MM-DDTHH:MM", optionally with ":SS".
std::int64_t parse_timestamp(const std::string& text);
std::string format_timestamp(std::int64_t t);

// Half-hour-of-day index, 0 (00:00) .. 47 (23:30).
int slot_of_day(std::int64_t t);

// Long format: header "timestamp,kwh", one record per line. Rejects missing
// or malformed fields (with line numbers), negative generation, duplicate or
// non-ascending timestamps, and gaps within a day.
std::vector<SeriesRecord> load_long_csv(const std::filesystem::path& path);
void write_long_csv(const std::filesystem::path& path, const std::vector<SeriesRecord>& records);

// Ausgrid-style wide export: one row per customer/day/channel with 48
// half-hour columns after the date column. Extracts one customer's channel
// (gross generation "GG" by default) as a long half-hourly series.
// Missing night-time cells become zero; single missing daytime cells are
// interpolated from their neighbours; days with longer daytime gaps are
// dropped whole.
struct AusgridOptions {
    std::string customer;
    std::string channel = "GG";
};

std::vector<SeriesRecord> ausgrid_wide_to_long(const std::filesystem::path& path,
                                               const AusgridOptions& options);

// Min-max scaling onto (-1, 1): x -> 2 (x - min) / (max - min) - 1.
// Fitted on training data only; inputs outside [min, max] map outside the
// interval, which is fine for held-out data.
struct ScalerParams {
    double min = 0.0;
    double max = 1.0;
};

ScalerParams fit_scaler(const std::vector<double>& values);
double scale_value(const ScalerParams& p, double x);
double invert_value(const ScalerParams& p, double x);
std::vector<double> scale_series(const ScalerParams& p, const std::vector<double>& xs);
std::vector<double> invert_series(const ScalerParams& p, const std::vector<double>& xs);

// Supervised windows over a scaled series: row i holds values [i, i+lags) and
// the target is value i+lags. target_slot tracks the half-hour-of-day of each
// target for subset selection and plotting.
struct WindowedDataset {
    Tensor X;                       // [n x lags]
    Tensor y;                       // [n]
    std::vector<int> target_slot;   // n entries
    ScalerParams scaler;
    std::size_t lags = 0;

    std::size_t size() const { return target_slot.size(); }
};

// slots gives the half-hour index of each series value; when omitted the
// series is assumed to start at midnight.
WindowedDataset make_windows(const std::vector<double>& scaled, std::size_t lags);
WindowedDataset make_windows(const std::vector<double>& scaled, std::size_t lags,
                             const std::vector<int>& slots);

struct SplitDataset {
    WindowedDataset train;
    WindowedDataset test;
};

// Chronological split: the first floor(ratio * n) windows train, the rest
// test. Both halves must be non-empty.
SplitDataset chrono_split(const WindowedDataset& ds, double ratio);

// Full preparation path: fit the scaler on the values visible to the
// training windows, scale, window, split.
SplitDataset prepare_dataset(const std::vector<SeriesRecord>& records, std::size_t lags,
                             double ratio);

// Row subset of a windowed dataset (keeps scaler and lags).
WindowedDataset select_rows(const WindowedDataset& ds, const std::vector<std::size_t>& rows);

} // namespace bcast
