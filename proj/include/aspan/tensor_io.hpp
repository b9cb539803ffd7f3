#pragma once

// Binary tensor file:
//   "ASPT" | u8 version (1) | u8 dtype (0 = f64, 1 = f32) | u8 rank |
//   rank x u32 extents | row-major payload
// All multi-byte fields little-endian regardless of host order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aspan/tensor.hpp"

namespace aspan {

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype = DType::f64);
// Throws FormatError on bad magic, version, dtype or truncated payload.
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::f64);
Tensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace aspan
