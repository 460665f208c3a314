#pragma once

// Little-endian binary helpers and the SBT1 tensor format:
//   "SBT1" | u32 rank | rank × u32 extent | numel × f64 payload

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "sinbasis/tensor.hpp"

namespace sinbasis {

namespace binio {
void write_u32(std::ostream& os, std::uint32_t v);
void write_i32(std::ostream& os, std::int32_t v);
void write_f64(std::ostream& os, double v);
std::uint32_t read_u32(std::istream& is);
std::int32_t read_i32(std::istream& is);
double read_f64(std::istream& is);
/// Reads 4 bytes and throws std::runtime_error unless they equal `magic`.
void expect_magic(std::istream& is, const char (&magic)[5]);
}  // namespace binio

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace sinbasis
