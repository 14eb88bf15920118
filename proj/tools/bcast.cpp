#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "bcast/pipeline.hpp"
#include "bcast/serialize.hpp"

using namespace bcast;
using nlohmann::json;

namespace {

struct Options {
    std::string data;
    std::string config_path;
    std::string out = ".";
    std::string model = "m1";
    std::string models = "m1,m2,m3,m4,m5,m6,m7,m8";
    std::string model_file;
    std::string subset = "full";
    std::string grid;
    std::string customer;
    std::string channel = "GG";
    double ratio = 0.8;
    std::size_t lags = 96;
    std::size_t latent = 48;
    std::size_t neurons = 48;
    std::size_t epochs = 100;
    std::size_t batch = 128;
    std::size_t patience = 20;
    std::size_t mc_samples = 100;
    double lr = 0.001;
    double val_split = 0.2;
    double dropout = 0.5;
    std::uint64_t seed = 42;
    bool stochastic_z = false;
};

// Shared flags; each subcommand picks the ones it understands. Values from
// --config apply only where the flag was not given on the command line.
struct FlagSet {
    CLI::App* cmd = nullptr;
    Options* opt = nullptr;

    void data(bool required = true) {
        auto* o = cmd->add_option("--data", opt->data, "input series CSV (timestamp,kwh)");
        if (required) o->required();
    }
    void model_file() {
        cmd->add_option("--model-file", opt->model_file, "serialized model (.bcast)")
            ->required();
    }
    void architecture(bool with_model = true) {
        if (with_model) cmd->add_option("--model", opt->model, "zoo model id (m1..m8)");
        cmd->add_option("--lags", opt->lags, "input window length");
        cmd->add_option("--latent", opt->latent, "autoencoder bottleneck width");
        cmd->add_option("--neurons", opt->neurons, "recurrent units per direction");
    }
    void training() {
        cmd->add_option("--ratio", opt->ratio, "chronological train fraction");
        cmd->add_option("--epochs", opt->epochs, "maximum training epochs");
        cmd->add_option("--batch", opt->batch, "minibatch size");
        cmd->add_option("--lr", opt->lr, "Adam learning rate");
        cmd->add_option("--patience", opt->patience, "early-stopping patience");
        cmd->add_option("--val-split", opt->val_split, "validation tail fraction");
        cmd->add_option("--dropout", opt->dropout, "dropout rate on features");
        cmd->add_flag("--stochastic-z", opt->stochastic_z,
                      "resample latent codes per minibatch in stage two");
    }
    void sampling() {
        cmd->add_option("--mc-samples", opt->mc_samples, "Monte Carlo weight draws");
    }
    void seed() { cmd->add_option("--seed", opt->seed, "random seed"); }
    void subset() {
        cmd->add_option("--subset", opt->subset, "full, six-months, or intraday");
    }
    void out() { cmd->add_option("--out", opt->out, "output directory"); }
    void config() {
        cmd->add_option("--config", opt->config_path,
                        "JSON config; command-line flags win");
    }
};

void apply_config_file(CLI::App& cmd, Options& opt) {
    if (opt.config_path.empty()) return;
    std::ifstream in(opt.config_path);
    if (!in) throw NotFoundError("no such config file: " + opt.config_path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("bad config JSON " + opt.config_path + ": " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config root must be a JSON object");

    auto overridden = [&](const std::string& flag) {
        const CLI::Option* o = cmd.get_option_no_throw(flag);
        return o != nullptr && o->count() > 0;
    };
    try {
        for (const auto& [key, value] : doc.items()) {
            if (key == "model") {
                if (!overridden("--model")) opt.model = value.get<std::string>();
            } else if (key == "subset") {
                if (!overridden("--subset")) opt.subset = value.get<std::string>();
            } else if (key == "ratio") {
                if (!overridden("--ratio")) opt.ratio = value.get<double>();
            } else if (key == "lags") {
                if (!overridden("--lags")) opt.lags = value.get<std::size_t>();
            } else if (key == "latent") {
                if (!overridden("--latent")) opt.latent = value.get<std::size_t>();
            } else if (key == "neurons") {
                if (!overridden("--neurons")) opt.neurons = value.get<std::size_t>();
            } else if (key == "epochs") {
                if (!overridden("--epochs")) opt.epochs = value.get<std::size_t>();
            } else if (key == "batch") {
                if (!overridden("--batch")) opt.batch = value.get<std::size_t>();
            } else if (key == "patience") {
                if (!overridden("--patience")) opt.patience = value.get<std::size_t>();
            } else if (key == "mc_samples") {
                if (!overridden("--mc-samples")) opt.mc_samples = value.get<std::size_t>();
            } else if (key == "lr") {
                if (!overridden("--lr")) opt.lr = value.get<double>();
            } else if (key == "val_split") {
                if (!overridden("--val-split")) opt.val_split = value.get<double>();
            } else if (key == "dropout") {
                if (!overridden("--dropout")) opt.dropout = value.get<double>();
            } else if (key == "seed") {
                if (!overridden("--seed")) opt.seed = value.get<std::uint64_t>();
            } else if (key == "stochastic_z") {
                if (!overridden("--stochastic-z")) opt.stochastic_z = value.get<bool>();
            } else {
                throw ConfigError("unknown config key: " + key);
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError("bad config value in " + opt.config_path + ": " + e.what());
    }
}

TrainConfig train_config(CLI::App& cmd, const Options& opt) {
    TrainConfig tc;
    tc.epochs = opt.epochs;
    tc.batch_size = opt.batch;
    tc.lr = opt.lr;
    tc.val_split = opt.val_split;
    tc.neurons = opt.neurons;
    tc.lags = opt.lags;
    tc.latent_dims = opt.latent;
    tc.dropout = opt.dropout;
    tc.seed = opt.seed;
    tc.stochastic_z = opt.stochastic_z;
    tc.patience = opt.patience;
    const CLI::Option* p = cmd.get_option_no_throw("--patience");
    if ((p == nullptr || p->count() == 0) && tc.patience > tc.epochs) {
        tc.patience = tc.epochs; // keep the default usable for short runs
    }
    return tc;
}

ModelConfig model_cfg(const Options& opt) {
    ModelConfig cfg = model_config(parse_model_id(opt.model));
    cfg.lags = opt.lags;
    cfg.latent = opt.latent;
    cfg.neurons = opt.neurons;
    return cfg;
}

std::filesystem::path out_dir(const Options& opt) {
    std::filesystem::path dir(opt.out);
    std::filesystem::create_directories(dir);
    return dir;
}

SplitDataset load_split(const Options& opt) {
    std::vector<SeriesRecord> records = load_long_csv(opt.data);
    SplitDataset split = prepare_dataset(records, opt.lags, opt.ratio);
    Subset subset = parse_subset(opt.subset);
    split.train = apply_subset(split.train, subset);
    split.test = apply_subset(split.test, subset);
    return split;
}

WindowedDataset windows_for_model(const LoadedModel& loaded, const Options& opt) {
    std::vector<SeriesRecord> records = load_long_csv(opt.data);
    std::vector<double> values(records.size());
    std::vector<int> slots(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        values[i] = records[i].kwh;
        slots[i] = slot_of_day(records[i].timestamp);
    }
    WindowedDataset ds = make_windows(scale_series(loaded.scaler, values),
                                      loaded.model.config.lags, slots);
    ds.scaler = loaded.scaler;
    return ds;
}

int cmd_train(CLI::App& cmd, Options& opt) {
    apply_config_file(cmd, opt);
    SplitDataset split = load_split(opt);
    TrainConfig tc = train_config(cmd, opt);

    RngState root(opt.seed);
    RngState init_rng = root.derive(1);
    RngState fit_rng = root.derive(2);

    BuiltModel model = build_model(model_cfg(opt), init_rng);
    auto [stage1, stage2] = train_model(model, split.train, tc, fit_rng);

    const auto dir = out_dir(opt);
    save_model(model, split.train.scaler, dir / "model.bcast");
    write_history_csv(dir / "history.csv", stage2);
    if (model.vae) write_history_csv(dir / "history_vae.csv", stage1);

    std::printf("trained %s on %zu windows: stopped at epoch %zu, best epoch %zu, "
                "best val %.6f\n",
                opt.model.c_str(), split.train.size(), stage2.stopped_epoch,
                stage2.best_epoch, stage2.best_val);
    std::printf("model: %s\n", (dir / "model.bcast").string().c_str());
    return 0;
}

int cmd_forecast(CLI::App& cmd, Options& opt) {
    apply_config_file(cmd, opt);
    LoadedModel loaded = load_model(opt.model_file);
    WindowedDataset ds = windows_for_model(loaded, opt);

    RngState rng = RngState(opt.seed).derive(3);
    ForecastResult fc =
        forecast_with_pis(loaded.model, ds.X, loaded.scaler, opt.mc_samples, rng);
    std::vector<double> y = invert_series(loaded.scaler, ds.y.values());

    const auto dir = out_dir(opt);
    emit_plot_data(fc, y, dir / "plot.csv");
    std::printf("forecast %zu steps with %zu samples -> %s\n", fc.mean.size(),
                fc.mc_samples, (dir / "plot.csv").string().c_str());
    return 0;
}

int cmd_evaluate(CLI::App& cmd, Options& opt) {
    apply_config_file(cmd, opt);
    LoadedModel loaded = load_model(opt.model_file);
    WindowedDataset ds = windows_for_model(loaded, opt);
    ds = apply_subset(ds, parse_subset(opt.subset));

    RngState rng = RngState(opt.seed).derive(3);
    ForecastResult fc =
        forecast_with_pis(loaded.model, ds.X, loaded.scaler, opt.mc_samples, rng);
    std::vector<double> y = invert_series(loaded.scaler, ds.y.values());

    const std::string code = model_code(loaded.model.config.id);
    const std::string dataset = subset_name(parse_subset(opt.subset));
    std::vector<ScoreRow> rows = {
        {code, dataset, "rmse", rmse(fc.mean, y)},
        {code, dataset, "mae", mae(fc.mean, y)},
        {code, dataset, "r_score", r_score(fc.mean, y)},
        {code, dataset, "pinball_avg", pinball_average(fc.quantiles, y)},
        {code, dataset, "winkler", winkler_average(fc.intervals.at(0.9), y)},
        {code, dataset, "brier", brier_score(fc.mean, y)},
    };
    const auto dir = out_dir(opt);
    write_scores_csv(dir / "scores.csv", rows);
    for (const ScoreRow& row : rows) {
        std::printf("%-12s %.6f\n", row.metric.c_str(), row.value);
    }
    return 0;
}

int cmd_compare(CLI::App& cmd, Options& opt) {
    apply_config_file(cmd, opt);
    SplitDataset split = load_split(opt);
    TrainConfig tc = train_config(cmd, opt);

    std::vector<ModelConfig> configs;
    std::stringstream list(opt.models);
    std::string item;
    while (std::getline(list, item, ',')) {
        if (item.empty()) continue;
        ModelConfig cfg = model_config(parse_model_id(item));
        cfg.lags = opt.lags;
        cfg.latent = opt.latent;
        cfg.neurons = opt.neurons;
        configs.push_back(cfg);
    }
    if (configs.empty()) throw ConfigError("--models selected no models");

    ComparisonReport report =
        run_comparison(configs, split, tc, opt.mc_samples, subset_name(parse_subset(opt.subset)));

    const auto dir = out_dir(opt);
    write_comparison_csv(dir / "comparison.csv", report);
    write_scores_csv(dir / "scores.csv", report.score_rows());
    for (const ComparisonRow& row : report.rows) {
        if (row.failed) {
            std::printf("%-3s failed: %s\n", row.model.c_str(), row.error.c_str());
        } else {
            std::printf("%-3s rmse=%.6f mae=%.6f r=%.4f pinball=%.6f winkler=%.6f "
                        "weights=%zu (%.1fs)\n",
                        row.model.c_str(), row.rmse, row.mae, row.r, row.pinball,
                        row.winkler, row.weights, row.train_seconds);
        }
    }
    return 0;
}

std::map<std::string, std::vector<double>> parse_grid(const std::string& text) {
    std::map<std::string, std::vector<double>> space;
    std::stringstream dims(text);
    std::string dim;
    while (std::getline(dims, dim, ';')) {
        if (dim.empty()) continue;
        const auto eq = dim.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("grid dimension needs key=v1,v2,...: " + dim);
        }
        const std::string key = dim.substr(0, eq);
        std::vector<double> values;
        std::stringstream vals(dim.substr(eq + 1));
        std::string val;
        while (std::getline(vals, val, ',')) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(val, &used));
                if (used != val.size()) throw std::invalid_argument(val);
            } catch (const std::exception&) {
                throw ConfigError("bad grid value for " + key + ": " + val);
            }
        }
        if (values.empty()) throw ConfigError("grid dimension is empty: " + key);
        space[key] = values;
    }
    if (space.empty()) throw ConfigError("--grid selected no dimensions");
    return space;
}

int cmd_gridsearch(CLI::App& cmd, Options& opt) {
    apply_config_file(cmd, opt);
    ModelConfig cfg = model_cfg(opt);
    if (cfg.use_vae) {
        throw ConfigError("gridsearch sweeps direct-window models; pick one of "
                          "m2, m4, m6, m7, m8");
    }

    std::vector<SeriesRecord> records = load_long_csv(opt.data);
    SplitDataset split = prepare_dataset(records, opt.lags, opt.ratio);
    TrainConfig base = train_config(cmd, opt);

    RngState init_root(opt.seed);
    ModelFactory factory = [&](const TrainConfig& c) -> std::unique_ptr<Trainable> {
        RngState rng = init_root.derive(1);
        if (cfg.kind == FeatureKind::QuantileRegression) {
            return std::make_unique<QuantileRegressor>(c.lags, rng);
        }
        return std::make_unique<BayesianForecaster>(cfg.kind, c.lags, c.neurons, c.dropout,
                                                    rng);
    };

    RngState fit_rng = RngState(opt.seed).derive(2);
    GridOutcome outcome =
        grid_search(parse_grid(opt.grid), split.train, base, factory, fit_rng);

    const auto dir = out_dir(opt);
    std::ofstream out(dir / "grid.csv", std::ios::trunc);
    out << "lr,epochs,batch,patience,neurons,lags,dropout,val_loss,params,status\n";
    for (const GridResult& row : outcome.table) {
        out << row.config.lr << ',' << row.config.epochs << ',' << row.config.batch_size
            << ',' << row.config.patience << ',' << row.config.neurons << ','
            << row.config.lags << ',' << row.config.dropout << ',';
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", row.val_loss);
        out << (row.diverged ? "" : buf) << ',' << row.param_count << ','
            << (row.diverged ? "diverged" : "ok") << '\n';
    }
    std::printf("swept %zu candidates -> %s\n", outcome.table.size(),
                (dir / "grid.csv").string().c_str());
    const GridResult* winner = nullptr;
    for (const GridResult& row : outcome.table) {
        if (row.diverged) continue;
        if (winner == nullptr || row.val_loss < winner->val_loss) winner = &row;
    }
    if (winner != nullptr) {
        std::printf("best: lr=%g neurons=%zu batch=%zu val_loss=%.6f\n",
                    winner->config.lr, winner->config.neurons, winner->config.batch_size,
                    winner->val_loss);
    } else {
        std::printf("all candidates diverged\n");
    }
    return 0;
}

int cmd_convert(Options& opt) {
    AusgridOptions aopt;
    aopt.customer = opt.customer;
    aopt.channel = opt.channel;
    std::vector<SeriesRecord> records = ausgrid_wide_to_long(opt.data, aopt);
    const auto dir = out_dir(opt);
    write_long_csv(dir / "series.csv", records);
    std::printf("extracted %zu half-hours for customer %s channel %s -> %s\n",
                records.size(), opt.customer.c_str(), opt.channel.c_str(),
                (dir / "series.csv").string().c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Probabilistic solar-generation forecasting toolkit"};
    app.require_subcommand(1);
    Options opt;

    CLI::App* train = app.add_subcommand("train", "train one zoo model and save it");
    {
        FlagSet f{train, &opt};
        f.data();
        f.architecture();
        f.training();
        f.seed();
        f.out();
        f.config();
    }

    CLI::App* forecast =
        app.add_subcommand("forecast", "probabilistic forecast with a saved model");
    {
        FlagSet f{forecast, &opt};
        f.data();
        f.model_file();
        f.sampling();
        f.seed();
        f.out();
        f.config();
    }

    CLI::App* evaluate =
        app.add_subcommand("evaluate", "score a saved model on a series");
    {
        FlagSet f{evaluate, &opt};
        f.data();
        f.model_file();
        f.sampling();
        f.seed();
        f.subset();
        f.out();
        f.config();
    }

    CLI::App* compare =
        app.add_subcommand("compare", "train and score several models on one split");
    {
        FlagSet f{compare, &opt};
        f.data();
        f.architecture(false);
        f.training();
        f.sampling();
        f.seed();
        f.subset();
        f.out();
        f.config();
        compare->add_option("--models", opt.models, "comma-separated zoo ids");
    }

    CLI::App* gridsearch =
        app.add_subcommand("gridsearch", "exhaustive hyperparameter sweep");
    {
        FlagSet f{gridsearch, &opt};
        f.data();
        f.architecture();
        f.training();
        f.seed();
        f.out();
        f.config();
        gridsearch->add_option("--grid", opt.grid, "key=v1,v2;key=v1 over TrainConfig fields")
            ->required();
    }

    CLI::App* convert = app.add_subcommand(
        "convert-ausgrid", "extract one customer channel from the wide export");
    {
        FlagSet f{convert, &opt};
        f.data();
        f.out();
        convert->add_option("--customer", opt.customer, "customer id")->required();
        convert->add_option("--channel", opt.channel, "GG (generation) or GC");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 3;
    }

    try {
        if (train->parsed()) return cmd_train(*train, opt);
        if (forecast->parsed()) return cmd_forecast(*forecast, opt);
        if (evaluate->parsed()) return cmd_evaluate(*evaluate, opt);
        if (compare->parsed()) return cmd_compare(*compare, opt);
        if (gridsearch->parsed()) return cmd_gridsearch(*gridsearch, opt);
        if (convert->parsed()) return cmd_convert(opt);
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NotFoundError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
