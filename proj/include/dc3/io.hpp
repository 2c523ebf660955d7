#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dc3/error.hpp"

namespace dc3 {

// Named dense matrices serialized as a text header (name + shape per tensor)
// followed by a little-endian float64 payload in header order. Used for
// checkpoints, datasets and family files.
using NamedMatrices = std::vector<std::pair<std::string, Eigen::MatrixXd>>;

void save_matrices(const std::string& path, const NamedMatrices& tensors);
NamedMatrices load_matrices(const std::string& path);

// Flat key=value manifest ('#' comments allowed). Keys keep insertion order
// on save so outputs are byte-stable.
using Manifest = std::vector<std::pair<std::string, std::string>>;

void save_manifest(const std::string& path, const Manifest& kv);
Manifest load_manifest(const std::string& path);
std::string manifest_get(const Manifest& kv, const std::string& key);
std::string manifest_get_or(const Manifest& kv, const std::string& key,
                            const std::string& fallback);

// Locale-independent full-precision float formatting for CSV output.
std::string format_double(double v);

}  // namespace dc3
