#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bcast/data.hpp"
#include "bcast/pipeline.hpp"

namespace bcast {

// Named tensor payload for the versioned binary container. The format is
// magic "BCAST1", a 64-bit array count, then per array: name length + bytes,
// rank, dims, and values, all integers and doubles little-endian 64-bit.
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

void write_arrays(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_arrays(const std::filesystem::path& path);

// Saves a trained model as <path> (binary parameters) plus a JSON descriptor
// alongside it at <path with .json extension>: model architecture and the
// scaler needed to map forecasts back to kWh.
void save_model(BuiltModel& model, const ScalerParams& scaler,
                const std::filesystem::path& path);

struct LoadedModel {
    BuiltModel model;
    ScalerParams scaler;
};

// Rebuilds the architecture from the JSON descriptor and restores every
// parameter tensor by name. Missing, extra, or reshaped parameters are data
// errors; a missing file is a not-found error.
LoadedModel load_model(const std::filesystem::path& path);

} // namespace bcast
