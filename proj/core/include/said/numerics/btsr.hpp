#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "said/numerics/tensor.hpp"

namespace said::btsr {

// Layout: "BTSR" | u32 version (=1) | u32 rank | u64 dims[rank] | f32 payload,
// all little-endian.
inline constexpr std::uint32_t kVersion = 1;

void write(std::ostream& out, const Tensor& t);
Tensor read(std::istream& in);

void save(const std::filesystem::path& path, const Tensor& t);
Tensor load(const std::filesystem::path& path);

}  // namespace said::btsr
