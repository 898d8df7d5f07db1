#pragma once

#include <bit>
#include <cstdint>
#include <span>

namespace vattn {

// IEEE 754 binary16 value carried as its raw bit pattern (1 sign, 5 exponent,
// 10 mantissa). All arithmetic happens in binary32/binary64; this type is the
// storage format plus exact conversions. Subnormals are fully supported, no
// flush-to-zero.
struct Half {
    uint16_t bits = 0;

    Half() = default;

    static Half from_bits(uint16_t b) {
        Half h;
        h.bits = b;
        return h;
    }

    friend bool operator==(Half a, Half b) { return a.bits == b.bits; }
    friend bool operator!=(Half a, Half b) { return a.bits != b.bits; }
};

// Accumulation discipline for the MMA matrix C. Selects the C fragment
// element type and the downstream softmax data path.
enum class AccMode : uint8_t { FP16_ACC, FP32_ACC };

// Round-to-nearest-even conversion. Overflow saturates to +/-inf; NaN is
// quieted with the top payload bits kept.
Half f32_to_f16(float x);

// Exact widening; binary16 is a subset of binary32.
float f16_to_f32(Half h);

// Four binary16 products summed left to right in binary32. Products of
// binary16 operands are exact in binary32 (<= 22 significand bits), so the
// only roundings are the three partial-sum adds.
float dot4_partial(std::span<const Half, 4> a, std::span<const Half, 4> b);

// One k=4 MMA accumulation step, FP32 discipline: the partial sum is added
// to the binary32 accumulator.
float dot4_acc_f32(std::span<const Half, 4> a, std::span<const Half, 4> b, float acc);

// FP16 discipline: the binary32 partial sum is added to the widened binary16
// accumulator and the result is rounded to binary16 once per step.
Half dot4_acc_f16(std::span<const Half, 4> a, std::span<const Half, 4> b, Half acc);

}  // namespace vattn
