#include "bcast/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace bcast {

namespace {

constexpr std::int64_t kHalfHour = 1800;

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(trim(cur));
    return fields;
}

std::optional<double> parse_double(const std::string& s) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || ptr != e) return std::nullopt;
    return v;
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// "H:MM" interval labels of the wide format, returning minutes after 00:00
// of the period end. "0:30" -> 30, "23:30" -> 1410, "0:00" -> 1440.
std::optional<int> parse_interval_label(const std::string& s) {
    int h = 0, m = 0;
    char colon = 0;
    std::istringstream is(s);
    if (!(is >> h >> colon >> m) || colon != ':' || !is.eof()) return std::nullopt;
    if (h < 0 || h > 23 || (m != 0 && m != 30)) return std::nullopt;
    int minutes = h * 60 + m;
    if (minutes == 0) minutes = 24 * 60; // trailing midnight marks the last period
    return minutes;
}

// "d/m/yyyy" or "yyyy-mm-dd" day stamps
std::optional<std::int64_t> parse_day(const std::string& s) {
    int d = 0, m = 0, y = 0;
    if (std::sscanf(s.c_str(), "%d/%d/%d", &d, &m, &y) == 3 ||
        std::sscanf(s.c_str(), "%d-%d-%d", &y, &m, &d) == 3) {
        if (y < 100) y += 2000;
        if (m < 1 || m > 12 || d < 1 || d > 31) return std::nullopt;
        std::tm tm{};
        tm.tm_year = y - 1900;
        tm.tm_mon = m - 1;
        tm.tm_mday = d;
        return static_cast<std::int64_t>(timegm(&tm));
    }
    return std::nullopt;
}

bool is_daytime_slot(int slot) {
    return slot >= 12 && slot < 38; // 06:00 .. 19:00
}

} // namespace

std::int64_t parse_timestamp(const std::string& text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    char sep = 0;
    int n = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &s);
    if (n < 6 || (sep != ' ' && sep != 'T')) {
        throw DataError("cannot parse timestamp '" + text + "'");
    }
    std::tm tm{};
    tm.tm_year = y - 1900;
    tm.tm_mon = mo - 1;
    tm.tm_mday = d;
    tm.tm_hour = h;
    tm.tm_min = mi;
    tm.tm_sec = n == 7 ? s : 0;
    const std::time_t t = timegm(&tm);
    if (t == static_cast<std::time_t>(-1)) {
        throw DataError("timestamp '" + text + "' is out of range");
    }
    return static_cast<std::int64_t>(t);
}

std::string format_timestamp(std::int64_t t) {
    std::time_t tt = static_cast<std::time_t>(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M", &tm);
    return buf;
}

int slot_of_day(std::int64_t t) {
    std::int64_t sec = t % 86400;
    if (sec < 0) sec += 86400;
    return static_cast<int>(sec / kHalfHour);
}

std::vector<SeriesRecord> load_long_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
    {
        auto header = split_csv_line(line);
        if (header.size() != 2 || lower(header[0]) != "timestamp" || lower(header[1]) != "kwh") {
            throw DataError(path.string() + ":1: expected header 'timestamp,kwh'");
        }
    }

    std::vector<SeriesRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string at = path.string() + ":" + std::to_string(line_no) + ": ";
        auto fields = split_csv_line(line);
        if (fields.size() != 2) {
            throw DataError(at + "expected 2 fields, got " + std::to_string(fields.size()));
        }
        SeriesRecord r;
        r.timestamp = [&] {
            try {
                return parse_timestamp(fields[0]);
            } catch (const DataError& e) {
                throw DataError(at + e.what());
            }
        }();
        auto v = parse_double(fields[1]);
        if (!v) throw DataError(at + "cannot parse kwh value '" + fields[1] + "'");
        if (*v < 0.0) throw DataError(at + "negative generation " + fields[1]);
        r.kwh = *v;

        if (!records.empty()) {
            const SeriesRecord& prev = records.back();
            if (r.timestamp == prev.timestamp) {
                throw DataError(at + "duplicate timestamp " + format_timestamp(r.timestamp));
            }
            if (r.timestamp < prev.timestamp) {
                throw DataError(at + "timestamps are not ascending at " +
                                format_timestamp(r.timestamp));
            }
            const bool same_day = r.timestamp / 86400 == prev.timestamp / 86400;
            if (same_day && r.timestamp - prev.timestamp != kHalfHour) {
                throw DataError(at + "gap within day before " + format_timestamp(r.timestamp));
            }
        }
        records.push_back(r);
    }
    if (records.empty()) throw DataError(path.string() + ": no data rows");
    return records;
}

void write_long_csv(const std::filesystem::path& path, const std::vector<SeriesRecord>& records) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << "timestamp,kwh\n";
    char buf[32];
    for (const SeriesRecord& r : records) {
        std::snprintf(buf, sizeof buf, "%.6f", r.kwh);
        out << format_timestamp(r.timestamp) << ',' << buf << '\n';
    }
    if (!out) throw DataError("failed while writing " + path.string());
}

std::vector<SeriesRecord> ausgrid_wide_to_long(const std::filesystem::path& path,
                                               const AusgridOptions& options) {
    if (options.customer.empty()) throw ContractError("ausgrid conversion: customer id required");

    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());

    std::string line;
    std::size_t line_no = 0;

    // The first line sometimes carries an export banner; the header is the
    // first line that contains a Customer column.
    std::size_t customer_col = 0, category_col = 0, date_col = 0;
    std::vector<std::size_t> interval_cols;
    bool header_found = false;
    while (std::getline(in, line)) {
        ++line_no;
        auto fields = split_csv_line(line);
        std::optional<std::size_t> cust, cat, date;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            const std::string f = lower(fields[i]);
            if (f == "customer") cust = i;
            if (f == "consumption category") cat = i;
            if (f == "date") date = i;
        }
        if (cust && cat && date) {
            customer_col = *cust;
            category_col = *cat;
            date_col = *date;
            int expected = 30;
            for (std::size_t i = *date + 1; i < fields.size(); ++i) {
                auto minutes = parse_interval_label(fields[i]);
                if (!minutes) break;
                if (*minutes != expected) {
                    throw DataError(path.string() + ":" + std::to_string(line_no) +
                                    ": interval columns out of order at '" + fields[i] + "'");
                }
                interval_cols.push_back(i);
                expected += 30;
            }
            header_found = true;
            break;
        }
    }
    if (!header_found) {
        throw DataError(path.string() + ": no header row with Customer/Consumption Category/date");
    }
    if (interval_cols.size() != 48) {
        throw DataError(path.string() + ": expected 48 half-hour columns, found " +
                        std::to_string(interval_cols.size()));
    }

    bool customer_seen = false;
    std::map<std::int64_t, std::vector<std::optional<double>>> days;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string at = path.string() + ":" + std::to_string(line_no) + ": ";
        auto fields = split_csv_line(line);
        if (fields.size() <= interval_cols.back()) {
            throw DataError(at + "row has " + std::to_string(fields.size()) +
                            " fields, expected at least " + std::to_string(interval_cols.back() + 1));
        }
        if (fields[customer_col] != options.customer) continue;
        customer_seen = true;
        if (fields[category_col] != options.channel) continue;

        auto day = parse_day(fields[date_col]);
        if (!day) throw DataError(at + "cannot parse date '" + fields[date_col] + "'");
        if (days.count(*day)) {
            throw DataError(at + "duplicate day " + fields[date_col] + " for customer " +
                            options.customer);
        }

        std::vector<std::optional<double>> cells(48);
        for (std::size_t j = 0; j < 48; ++j) {
            const std::string& cell = fields[interval_cols[j]];
            if (cell.empty()) continue;
            auto v = parse_double(cell);
            if (!v) throw DataError(at + "cannot parse reading '" + cell + "'");
            if (*v < 0.0) throw DataError(at + "negative generation " + cell);
            cells[j] = *v;
        }
        days.emplace(*day, std::move(cells));
    }

    if (!customer_seen) {
        throw NotFoundError("customer '" + options.customer + "' not present in " + path.string());
    }
    if (days.empty()) {
        throw NotFoundError("customer '" + options.customer + "' has no '" + options.channel +
                            "' rows in " + path.string());
    }

    std::vector<SeriesRecord> records;
    for (auto& [day, cells] : days) {
        // fill gaps: zero at night, interpolate isolated daytime holes,
        // otherwise drop the day
        bool drop = false;
        for (int s = 0; s < 48 && !drop; ++s) {
            if (cells[s]) continue;
            if (!is_daytime_slot(s)) {
                cells[s] = 0.0;
            } else if (s > 0 && s < 47 && cells[s - 1] && cells[s + 1]) {
                cells[s] = 0.5 * (*cells[s - 1] + *cells[s + 1]);
            } else {
                drop = true;
            }
        }
        if (drop) continue;
        for (int s = 0; s < 48; ++s) {
            records.push_back({day + s * kHalfHour, *cells[s]});
        }
    }
    if (records.empty()) {
        throw DataError("customer '" + options.customer + "': every day was dropped for gaps");
    }
    return records;
}

ScalerParams fit_scaler(const std::vector<double>& values) {
    if (values.empty()) throw ContractError("fit_scaler: empty input");
    auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (*lo == *hi) throw DataError("fit_scaler: series is constant, nothing to scale");
    return {*lo, *hi};
}

double scale_value(const ScalerParams& p, double x) {
    return 2.0 * (x - p.min) / (p.max - p.min) - 1.0;
}

double invert_value(const ScalerParams& p, double x) {
    return (x + 1.0) * 0.5 * (p.max - p.min) + p.min;
}

std::vector<double> scale_series(const ScalerParams& p, const std::vector<double>& xs) {
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = scale_value(p, xs[i]);
    return out;
}

std::vector<double> invert_series(const ScalerParams& p, const std::vector<double>& xs) {
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = invert_value(p, xs[i]);
    return out;
}

WindowedDataset make_windows(const std::vector<double>& scaled, std::size_t lags) {
    std::vector<int> slots(scaled.size());
    for (std::size_t i = 0; i < scaled.size(); ++i) slots[i] = static_cast<int>(i % 48);
    return make_windows(scaled, lags, slots);
}

WindowedDataset make_windows(const std::vector<double>& scaled, std::size_t lags,
                             const std::vector<int>& slots) {
    if (lags == 0) throw ContractError("make_windows: lags must be positive");
    if (scaled.size() < lags + 1) {
        throw DataError("make_windows: series of " + std::to_string(scaled.size()) +
                        " values is shorter than lags+1 = " + std::to_string(lags + 1));
    }
    if (slots.size() != scaled.size()) {
        throw ShapeError("make_windows: slot labels do not match series length");
    }
    const std::size_t n = scaled.size() - lags;
    std::vector<double> xv(n * lags);
    std::vector<double> yv(n);
    WindowedDataset ds;
    ds.target_slot.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(scaled.begin() + i, scaled.begin() + i + lags, xv.begin() + i * lags);
        yv[i] = scaled[i + lags];
        ds.target_slot[i] = slots[i + lags];
    }
    ds.X = Tensor({n, lags}, std::move(xv));
    ds.y = Tensor({n}, std::move(yv));
    ds.lags = lags;
    return ds;
}

WindowedDataset select_rows(const WindowedDataset& ds, const std::vector<std::size_t>& rows) {
    if (rows.empty()) throw ContractError("select_rows: empty selection");
    const std::size_t lags = ds.lags;
    std::vector<double> xv(rows.size() * lags);
    std::vector<double> yv(rows.size());
    WindowedDataset out;
    out.target_slot.resize(rows.size());
    const auto& X = ds.X.values();
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::size_t r = rows[k];
        if (r >= ds.size()) throw ContractError("select_rows: row index out of range");
        std::copy(X.begin() + r * lags, X.begin() + (r + 1) * lags, xv.begin() + k * lags);
        yv[k] = ds.y[r];
        out.target_slot[k] = ds.target_slot[r];
    }
    out.X = Tensor({rows.size(), lags}, std::move(xv));
    out.y = Tensor({rows.size()}, std::move(yv));
    out.scaler = ds.scaler;
    out.lags = lags;
    return out;
}

SplitDataset chrono_split(const WindowedDataset& ds, double ratio) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw ContractError("chrono_split: ratio " + std::to_string(ratio) + " outside (0, 1)");
    }
    const std::size_t n = ds.size();
    const std::size_t train_n = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
    if (train_n == 0 || train_n == n) {
        throw ContractError("chrono_split: split of " + std::to_string(n) +
                            " windows leaves an empty side");
    }
    std::vector<std::size_t> head(train_n), tail(n - train_n);
    for (std::size_t i = 0; i < train_n; ++i) head[i] = i;
    for (std::size_t i = train_n; i < n; ++i) tail[i - train_n] = i;
    return {select_rows(ds, head), select_rows(ds, tail)};
}

SplitDataset prepare_dataset(const std::vector<SeriesRecord>& records, std::size_t lags,
                             double ratio) {
    if (records.size() < lags + 2) {
        throw DataError("prepare_dataset: " + std::to_string(records.size()) +
                        " records cannot fill windows of " + std::to_string(lags) + " lags");
    }
    std::vector<double> values(records.size());
    std::vector<int> slots(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        values[i] = records[i].kwh;
        slots[i] = slot_of_day(records[i].timestamp);
    }

    // fit the scaler only on values the training windows can see
    const std::size_t n_windows = records.size() - lags;
    const std::size_t train_w =
        static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n_windows)));
    const std::size_t visible = std::min(values.size(), train_w + lags);
    ScalerParams scaler = fit_scaler({values.begin(), values.begin() + visible});

    WindowedDataset all = make_windows(scale_series(scaler, values), lags, slots);
    all.scaler = scaler;
    SplitDataset split = chrono_split(all, ratio);
    split.train.scaler = scaler;
    split.test.scaler = scaler;
    return split;
}

} // namespace bcast
