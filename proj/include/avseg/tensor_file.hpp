#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "avseg/tensor.hpp"

namespace avseg {

/// Binary tensor container:
///
///   offset 0  "AVTK"            magic
///          4  u8                version (1)
///          5  u8                rank
///          6  rank x u32 LE     dims
///          .. f32 LE            payload, row-major
///
/// Everything is little-endian regardless of host byte order.
inline constexpr unsigned char kTensorFileVersion = 1;

void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace avseg
