#pragma once

#include <string>
#include <variant>

#include "vattn/tensor.hpp"

namespace vattn {

// SPAT tensor container: magic "SPAT", u8 version (=1), u8 dtype code
// (0 = binary16, 1 = binary32, 2 = binary64), u8 rank, little-endian u64
// dims, then the raw little-endian payload. Dimensions must be nonzero and
// the payload length must match exactly.
enum class DType : uint8_t { F16 = 0, F32 = 1, F64 = 2 };

using AnyTensor = std::variant<Tensor<Half>, Tensor<float>, Tensor<double>>;

void write_spat(const std::string& path, const Tensor<Half>& t);
void write_spat(const std::string& path, const Tensor<float>& t);
void write_spat(const std::string& path, const Tensor<double>& t);

// Throws std::runtime_error on bad magic, unknown version or dtype, zero or
// overflowing dimensions, and truncated or oversized payloads.
AnyTensor read_spat(const std::string& path);

Tensor<Half> read_spat_f16(const std::string& path);

}  // namespace vattn
