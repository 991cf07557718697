#include "avseg/tensor_file.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "avseg/errors.hpp"

namespace avseg {
namespace {

constexpr std::array<char, 4> kMagic{'A', 'V', 'T', 'K'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("tensor file truncated in header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor) {
  if (tensor.rank() == 0 || tensor.rank() > 255) {
    throw DimensionError("tensor file rank must be in [1, 255], got " +
                         std::to_string(tensor.rank()));
  }
  out.write(kMagic.data(), kMagic.size());
  out.put(static_cast<char>(kTensorFileVersion));
  out.put(static_cast<char>(tensor.rank()));
  for (auto d : tensor.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw DimensionError("dimension too large for tensor file: " + shape_str(tensor.shape()));
    }
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (float v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw IoError("failed writing tensor payload");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw IoError("not a tensor file (bad magic)");
  }
  const int version = in.get();
  const int rank = in.get();
  if (!in) throw IoError("tensor file truncated in header");
  if (version != kTensorFileVersion) {
    throw IoError("unsupported tensor file version " + std::to_string(version));
  }
  if (rank == 0) throw IoError("tensor file declares rank 0");
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) {
    d = get_u32(in);
    if (d == 0) throw IoError("tensor file declares a zero dimension");
  }
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  std::vector<float> data(n);
  for (auto& v : data) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("tensor file truncated in payload");
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                               (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) |
                               (static_cast<std::uint32_t>(b[3]) << 24);
    v = std::bit_cast<float>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_tensor(out, tensor);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  try {
    return read_tensor(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace avseg
