#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "gramflow/tensor.hpp"

namespace gramflow {

/// LGFT tensor file: magic "LGFT", version u32, dtype u8, ndim u8,
/// little-endian u64 extents, then the row-major payload.
/// dtype 0 = fp32, 1 = fp64, 2 = u8 (validity masks).
enum class LgftDtype : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };

constexpr std::uint32_t kLgftVersion = 1;

void lgft_write(const std::filesystem::path& path, const Tensor& t,
                LgftDtype dtype = LgftDtype::f64);
Tensor lgft_read(const std::filesystem::path& path);

void lgft_write_u8(const std::filesystem::path& path, const Shape& dims,
                   const std::vector<std::uint8_t>& data);
std::pair<Shape, std::vector<std::uint8_t>> lgft_read_u8(const std::filesystem::path& path);

}  // namespace gramflow
