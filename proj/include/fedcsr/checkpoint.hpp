#pragma once

// Flat named-tensor archive.
//
// Layout (little-endian):
//   8 bytes   magic "FCSRTENS"
//   u32       format version (1)
//   u64       manifest length in bytes
//   manifest  UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "rows", "cols", "offset"}]}
//   payload   row-major float64 values; `offset` counts doubles from payload start

#include <filesystem>

#include <json.hpp>

#include "fedcsr/tensor.hpp"

namespace fedcsr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_tensors(const NamedTensors& tensors, const std::filesystem::path& file,
                  const nlohmann::json& meta = nlohmann::json::object());

NamedTensors load_tensors(const std::filesystem::path& file, nlohmann::json* meta = nullptr);

}  // namespace fedcsr
