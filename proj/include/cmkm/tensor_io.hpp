#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>

#include "cmkm/tensor.hpp"

// Named-tensor container ("CMKT" archive), the on-disk format for per-sample
// modality tensors and model checkpoints. Layout, all integers little-endian:
//
//   magic   4 bytes  "CMKT"
//   version u32      1
//   count   u32      number of entries
//   entry * count:
//     name_len u32, name bytes (UTF-8, no terminator)
//     dtype    u32   1 = float32, 2 = float64, 3 = uint8 (opaque bytes, e.g. JSON)
//     rank     u32
//     dims     u64 * rank
//     payload  row-major, prod(dims) elements of dtype
namespace cmkm::io {

enum class DType : std::uint32_t { f32 = 1, f64 = 2, u8 = 3 };

using Entry = std::variant<Tensor<float>, Tensor<double>, std::string>;
using Archive = std::map<std::string, Entry>;

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

/// Fetches a float tensor entry, converting from float64 if needed.
Tensor<float> get_f32(const Archive& archive, const std::string& name,
                      const std::filesystem::path& origin = {});
const std::string& get_bytes(const Archive& archive, const std::string& name,
                             const std::filesystem::path& origin = {});

}  // namespace cmkm::io
