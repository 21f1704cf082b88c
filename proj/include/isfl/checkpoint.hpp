#pragma once

#include <string>
#include <vector>

#include "isfl/model.hpp"

namespace isfl {

// Checkpoint file layout: an 8-byte little-endian manifest length, the JSON
// manifest (format version, model config, parameter names/shapes), then the
// raw little-endian float64 payloads concatenated in manifest order.

void save_checkpoint(const Model& model, const std::string& path);

// Rebuilds the model from the embedded config and fills every parameter.
// A name or shape disagreement between manifest and model is an error that
// names the offending parameter and both shapes.
Model load_checkpoint(const std::string& path);

std::vector<std::string> checkpoint_parameter_names(const std::string& path);

} // namespace isfl
