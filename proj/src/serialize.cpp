#include "mdr/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "mdr/error.hpp"

namespace mdr {

namespace {

constexpr std::array<char, 4> kMagic{'M', 'D', 'R', 'T'};
constexpr std::uint8_t kMaxRank = 8;

template <class U>
void put_le(std::ostream& os, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw FormatError(std::string("tensor binary truncated while reading ") + what);
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t, DType dtype) {
  if (t.rank() > kMaxRank) throw ShapeError("tensor rank too large to serialize");
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(os, kTensorFormatVersion);
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint64_t>(os, d);
  for (double v : t.data()) {
    if (dtype == DType::f64) {
      put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    } else {
      put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  if (!os) throw FormatError("failed to write tensor binary");
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size())) throw FormatError("tensor binary truncated in magic");
  if (magic != kMagic) throw FormatError("bad tensor magic, expected \"MDRT\"");
  const auto version = get_le<std::uint32_t>(is, "version");
  if (version != kTensorFormatVersion) {
    throw FormatError("unsupported tensor format version " + std::to_string(version));
  }
  const auto dtype = get_le<std::uint8_t>(is, "dtype");
  if (dtype > 1) throw FormatError("unknown tensor dtype code " + std::to_string(dtype));
  const auto rank = get_le<std::uint8_t>(is, "rank");
  if (rank > kMaxRank) throw FormatError("tensor rank " + std::to_string(rank) + " too large");
  Shape shape(rank);
  for (auto& d : shape) {
    d = get_le<std::uint64_t>(is, "dims");
    if (d == 0 || d > (std::uint64_t{1} << 40)) throw FormatError("invalid tensor dimension");
  }
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) {
    if (dtype == 0) {
      v = std::bit_cast<double>(get_le<std::uint64_t>(is, "data"));
    } else {
      v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(is, "data")));
    }
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(os, t, dtype);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace mdr
