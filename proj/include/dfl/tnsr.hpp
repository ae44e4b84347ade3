#pragma once

// TNSR binary tensor container:
//   "TNSR" | u32 version (=1) | u8 dtype (0=f64, 1=f32, 2=u8) | u32 ndim |
//   ndim x u32 extents | row-major little-endian payload
// u8 payloads hold raw integer values 0..255; encoding a u8 tensor rejects
// values that are not exactly representable.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dfl/tensor.hpp"

namespace dfl::tnsr {

enum class DType : std::uint8_t { F64 = 0, F32 = 1, U8 = 2 };

inline constexpr std::uint32_t kVersion = 1;

std::vector<std::uint8_t> encode(const Tensor& t, DType dtype = DType::F64);

// `origin` names the blob in error messages.
Tensor decode(const std::uint8_t* bytes, std::size_t len, const std::string& origin, std::size_t* consumed = nullptr);

void write_file(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::F64);
Tensor read_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace dfl::tnsr
