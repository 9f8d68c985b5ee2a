#pragma once

#include <filesystem>

#include "tracktention/layer.hpp"

namespace tracktention {

// A bundle is a directory holding one TEN1 file per tensor plus manifest.json:
//   {"format": "tracktention-params/1",
//    "hyperparameters": {"sigma", "heads", "rope_base", "rope_on_values", ...},
//    "tensors": [{"name", "shape", "file"}, ...]}

void save_layer_bundle(const std::filesystem::path& dir, const TracktentionLayer<float>& layer);

/// Reads and validates a bundle; shapes must match the manifest and each other.
TracktentionLayer<float> load_layer_bundle(const std::filesystem::path& dir);

}  // namespace tracktention
