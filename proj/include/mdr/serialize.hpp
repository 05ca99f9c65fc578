#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "mdr/tensor.hpp"

namespace mdr {

/// Element encoding inside a tensor binary. Tensors always compute in double;
/// f32 is a storage option only.
enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

inline constexpr std::uint32_t kTensorFormatVersion = 1;

/// Binary layout, all integers little-endian:
///   "MDRT" | u32 version | u8 dtype | u8 rank | u64 dims[rank] | raw elements
void write_tensor(std::ostream& os, const Tensor& t, DType dtype = DType::f64);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::f64);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace mdr
