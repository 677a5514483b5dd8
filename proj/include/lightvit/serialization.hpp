#pragma once

#include <array>
#include <string>

#include "lightvit/model.hpp"

namespace lightvit {

inline constexpr uint16_t kWeightFileVersion = 1;

// Weight file: "LVWT" magic, u16 version, length-prefixed canonical config
// text, then name-sorted entries of (name, dtype, rank, extents, raw
// little-endian payload). Identical model state writes identical bytes.
template <typename T>
void save_model(const Model<T>& model, const std::string& path);

// Rebuilds the model from `expected` and restores every weight bitwise.
// The embedded config digest must match the expected config's digest.
template <typename T>
Model<T> load_model(const std::string& path, const ModelConfig& expected,
                    GradTape<T>* tape = nullptr);

// Reads only the embedded configuration.
ModelConfig peek_config(const std::string& path);

// Single-tensor file with the same framing and one unnamed entry.
template <typename T>
void dump_tensor(const Tensor<T>& t, const std::string& path);

template <typename T>
Tensor<T> read_tensor(const std::string& path);

// Binary P6 PPM (8-bit) -> [3, H, W]; pixels scaled to [0,1] and normalized
// channel-wise as (v - mean) / stddev.
template <typename T>
Tensor<T> load_ppm(const std::string& path, const std::array<double, 3>& mean,
                   const std::array<double, 3>& stddev);

}  // namespace lightvit
