#pragma once

#include "difftse/autodiff.hpp"

#include <filesystem>

namespace difftse::nn {

// Parameter file layout:
//
//   difftse-params 1
//   count <n>
//   <name> <rows> <cols> <byte offset>     (one line per parameter)
//   payload <bytes>
//   <payload: column-major little-endian float64 values, offsets relative to payload start>
//
// Names must not contain whitespace.

void save_params(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_params(const std::filesystem::path& path);
/// Loads into an existing set, requiring identical names and shapes in the same order.
void load_params_into(ParamSet& params, const std::filesystem::path& path);

}  // namespace difftse::nn
