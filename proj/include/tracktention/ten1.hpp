#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tracktention/tensor.hpp"

namespace tracktention {

// TEN1 binary tensor format:
//   "TEN1" | u8 dtype (0 = f32, 1 = f64) | u8 rank | rank x u64 LE extents |
//   row-major little-endian scalars.

enum class Ten1Dtype : std::uint8_t { f32 = 0, f64 = 1 };

inline constexpr std::size_t kTen1MaxRank = 8;

template <typename T>
std::vector<std::byte> encode_ten1(const Tensor<T>& tensor);

/// Decodes into T, converting from the stored dtype. Throws ParseError with the
/// offending byte offset; never returns a partially filled tensor.
template <typename T>
Tensor<T> decode_ten1(std::span<const std::byte> bytes);

Ten1Dtype ten1_dtype(std::span<const std::byte> bytes);

template <typename T>
void write_ten1(const std::filesystem::path& path, const Tensor<T>& tensor);

template <typename T>
Tensor<T> read_ten1(const std::filesystem::path& path);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);

}  // namespace tracktention
