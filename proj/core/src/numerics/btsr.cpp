#include "said/numerics/btsr.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "said/error.hpp"

namespace said::btsr {

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U u = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) throw FormatError("BTSR: truncated file");
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(u);
}

}  // namespace

void write(std::ostream& out, const Tensor& t) {
  out.write("BTSR", 4);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  for (double v : t.data()) put_le<float>(out, static_cast<float>(v));
}

Tensor read(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "BTSR", 4) != 0) throw FormatError("BTSR: bad magic");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) throw FormatError("BTSR: unsupported version " + std::to_string(version));
  const auto rank = get_le<std::uint32_t>(in);
  if (rank > 8) throw FormatError("BTSR: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
  Tensor t(shape);
  for (double& v : t.data()) v = static_cast<double>(get_le<float>(in));
  return t;
}

void save(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write(out, t);
  if (!out) throw FormatError("failed writing " + path.string());
}

Tensor load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read(in);
}

}  // namespace said::btsr
