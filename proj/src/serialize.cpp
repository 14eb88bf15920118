#include "bcast/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace bcast {

namespace {

constexpr char kMagic[6] = {'B', 'C', 'A', 'S', 'T', '1'};

std::uint64_t to_little_endian(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
    return r;
}

void put_u64(std::ostream& out, std::uint64_t v) {
    v = to_little_endian(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_f64(std::ostream& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, sizeof(v));
    put_u64(out, v);
}

std::uint64_t get_u64(std::istream& in, const std::filesystem::path& path) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw DataError("truncated array file: " + path.string());
    return to_little_endian(v);
}

double get_f64(std::istream& in, const std::filesystem::path& path) {
    std::uint64_t v = get_u64(in, path);
    double d;
    std::memcpy(&d, &v, sizeof(d));
    return d;
}

nlohmann::json model_descriptor(BuiltModel& model, const ScalerParams& scaler) {
    const ModelConfig& cfg = model.config;
    return nlohmann::json{
        {"format", 1},
        {"model",
         {{"id", model_code(cfg.id)},
          {"label", model_label(cfg.id)},
          {"neurons", cfg.neurons},
          {"lags", cfg.lags},
          {"latent", cfg.latent}}},
        {"scaler", {{"min", scaler.min}, {"max", scaler.max}}},
    };
}

std::filesystem::path json_sidecar(std::filesystem::path path) {
    path.replace_extension(".json");
    return path;
}

std::vector<NamedArray> collect_params(BuiltModel& model) {
    std::vector<Param*> params;
    if (model.vae) {
        auto vp = model.vae->parameters();
        params.insert(params.end(), vp.begin(), vp.end());
    }
    auto fp = model.forecaster->parameters();
    params.insert(params.end(), fp.begin(), fp.end());

    std::vector<NamedArray> arrays;
    arrays.reserve(params.size());
    for (const Param* p : params) {
        arrays.push_back({p->name, p->value.shape(), p->value.values()});
    }
    return arrays;
}

} // namespace

void write_arrays(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put_u64(out, arrays.size());
    for (const NamedArray& a : arrays) {
        std::size_t count = 1;
        for (std::size_t d : a.shape) count *= d;
        if (count != a.values.size()) {
            throw ContractError("array " + a.name + ": shape/value size mismatch");
        }
        put_u64(out, a.name.size());
        out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
        put_u64(out, a.shape.size());
        for (std::size_t d : a.shape) put_u64(out, d);
        for (double v : a.values) put_f64(out, v);
    }
    if (!out) throw DataError("write failed: " + path.string());
}

std::vector<NamedArray> read_arrays(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("no such file: " + path.string());
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("not a BCAST1 array file: " + path.string());
    }
    const std::uint64_t count = get_u64(in, path);
    std::vector<NamedArray> arrays;
    arrays.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedArray a;
        const std::uint64_t name_len = get_u64(in, path);
        a.name.resize(name_len);
        in.read(a.name.data(), static_cast<std::streamsize>(name_len));
        if (!in) throw DataError("truncated array file: " + path.string());
        const std::uint64_t rank = get_u64(in, path);
        std::size_t total = 1;
        for (std::uint64_t d = 0; d < rank; ++d) {
            a.shape.push_back(static_cast<std::size_t>(get_u64(in, path)));
            total *= a.shape.back();
        }
        a.values.resize(total);
        for (double& v : a.values) v = get_f64(in, path);
        arrays.push_back(std::move(a));
    }
    return arrays;
}

void save_model(BuiltModel& model, const ScalerParams& scaler,
                const std::filesystem::path& path) {
    write_arrays(path, collect_params(model));
    std::ofstream out(json_sidecar(path), std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + json_sidecar(path).string());
    out << model_descriptor(model, scaler).dump(2) << "\n";
}

LoadedModel load_model(const std::filesystem::path& path) {
    std::ifstream jin(json_sidecar(path));
    if (!jin) throw NotFoundError("no such file: " + json_sidecar(path).string());
    nlohmann::json doc;
    try {
        jin >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad model descriptor " + json_sidecar(path).string() + ": " +
                        e.what());
    }

    ModelConfig cfg;
    ScalerParams scaler;
    try {
        if (doc.at("format").get<int>() != 1) {
            throw DataError("unsupported model format in " + json_sidecar(path).string());
        }
        cfg = model_config(parse_model_id(doc.at("model").at("id").get<std::string>()));
        cfg.neurons = doc.at("model").at("neurons").get<std::size_t>();
        cfg.lags = doc.at("model").at("lags").get<std::size_t>();
        cfg.latent = doc.at("model").at("latent").get<std::size_t>();
        scaler.min = doc.at("scaler").at("min").get<double>();
        scaler.max = doc.at("scaler").at("max").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad model descriptor " + json_sidecar(path).string() + ": " +
                        e.what());
    }

    RngState rng(0);
    LoadedModel loaded{build_model(cfg, rng), scaler};

    std::map<std::string, Param*> by_name;
    if (loaded.model.vae) {
        for (Param* p : loaded.model.vae->parameters()) by_name[p->name] = p;
    }
    for (Param* p : loaded.model.forecaster->parameters()) by_name[p->name] = p;

    std::vector<NamedArray> arrays = read_arrays(path);
    if (arrays.size() != by_name.size()) {
        throw DataError("parameter count mismatch in " + path.string() + ": file has " +
                        std::to_string(arrays.size()) + ", architecture needs " +
                        std::to_string(by_name.size()));
    }
    for (NamedArray& a : arrays) {
        auto it = by_name.find(a.name);
        if (it == by_name.end()) {
            throw DataError("unknown parameter " + a.name + " in " + path.string());
        }
        if (it->second->value.shape() != a.shape) {
            throw DataError("parameter " + a.name + " has wrong shape in " + path.string());
        }
        it->second->value = Tensor(a.shape, std::move(a.values));
    }
    return loaded;
}

} // namespace bcast
