#include "sinbasis/serialize.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace sinbasis {

namespace binio {

namespace {

template <typename U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes;
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!is) throw std::runtime_error("binary read: unexpected end of stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void write_i32(std::ostream& os, std::int32_t v) { put_le(os, static_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }
std::uint32_t read_u32(std::istream& is) { return get_le<std::uint32_t>(is); }
std::int32_t read_i32(std::istream& is) { return static_cast<std::int32_t>(get_le<std::uint32_t>(is)); }
double read_f64(std::istream& is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }

void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4] = {};
  is.read(got, 4);
  if (!is || std::string(got, 4) != std::string(magic, 4)) {
    throw std::runtime_error(std::string("bad magic, expected ") + magic);
  }
}

}  // namespace binio

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("SBT1", 4);
  binio::write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) binio::write_u32(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) binio::write_f64(os, v);
}

Tensor read_tensor(std::istream& is) {
  binio::expect_magic(is, "SBT1");
  const std::uint32_t rank = binio::read_u32(is);
  if (rank > 16) throw std::runtime_error("SBT1: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = binio::read_u32(is);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = binio::read_f64(is);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return read_tensor(is);
}

}  // namespace sinbasis
