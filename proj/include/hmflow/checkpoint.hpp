#pragma once

#include <string>

#include <json.hpp>

#include "hmflow/nn.hpp"

namespace hmflow {

// Checkpoint container: "HMFC" magic, a format version, a JSON header
// (arbitrary config document plus a tensor index with shapes and offsets),
// then the raw parameter data as little-endian float64 in index order.
// Loading restores bit-identical values.

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const nlohmann::json& config);

/// Reads a checkpoint. An empty store gets the declarations from the header;
/// a pre-declared store must match names and shapes exactly (ShapeError
/// otherwise). Returns the embedded config document.
nlohmann::json load_checkpoint(const std::string& path, ParamStore& store);

}  // namespace hmflow
