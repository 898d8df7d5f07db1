#include "vattn/half.hpp"

namespace vattn {

Half f32_to_f16(float x) {
    const uint32_t f = std::bit_cast<uint32_t>(x);
    const uint16_t sign = static_cast<uint16_t>((f >> 16) & 0x8000u);
    const uint32_t exp = (f >> 23) & 0xffu;
    const uint32_t mant = f & 0x007f'ffffu;

    if (exp == 0xffu) {
        if (mant == 0) return Half::from_bits(sign | 0x7c00u);
        // NaN: top payload bits kept so that widening then narrowing is the
        // identity on every binary16 pattern; quieted only if the payload
        // would otherwise vanish into an inf encoding.
        uint32_t payload = mant >> 13;
        if (payload == 0) payload = 0x200u;
        return Half::from_bits(static_cast<uint16_t>(sign | 0x7c00u | payload));
    }

    const int e = static_cast<int>(exp) - 127 + 15;
    if (e >= 31) return Half::from_bits(sign | 0x7c00u);  // overflow -> inf

    if (e <= 0) {
        // Subnormal target: the result counts units of 2^-24, i.e.
        // round(m * 2^(e-14)) with m the 24-bit significand.
        const int shift = 14 - e;
        if (shift > 24) return Half::from_bits(sign);  // below half the smallest subnormal
        const uint32_t m = mant | 0x0080'0000u;
        const uint32_t q = m >> shift;
        const uint32_t rem = m & ((1u << shift) - 1u);
        const uint32_t half = 1u << (shift - 1);
        uint32_t r = q;
        if (rem > half || (rem == half && (q & 1u))) ++r;
        // A carry into bit 10 lands on the smallest normal; the encoding is
        // contiguous so plain addition is correct.
        return Half::from_bits(static_cast<uint16_t>(sign | r));
    }

    uint32_t out = (static_cast<uint32_t>(e) << 10) | (mant >> 13);
    const uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (out & 1u))) ++out;  // may carry up to inf
    return Half::from_bits(static_cast<uint16_t>(sign | out));
}

float f16_to_f32(Half h) {
    const uint32_t sign = static_cast<uint32_t>(h.bits & 0x8000u) << 16;
    const uint32_t exp = (h.bits >> 10) & 0x1fu;
    uint32_t mant = h.bits & 0x3ffu;

    if (exp == 0x1fu) {
        return std::bit_cast<float>(sign | 0x7f80'0000u | (mant << 13));
    }
    if (exp == 0) {
        if (mant == 0) return std::bit_cast<float>(sign);
        int e = -14;
        while ((mant & 0x400u) == 0) {
            mant <<= 1;
            --e;
        }
        mant &= 0x3ffu;
        return std::bit_cast<float>(sign | (static_cast<uint32_t>(e + 127) << 23) | (mant << 13));
    }
    return std::bit_cast<float>(sign | ((exp - 15 + 127) << 23) | (mant << 13));
}

float dot4_partial(std::span<const Half, 4> a, std::span<const Half, 4> b) {
    float s = 0.0f;
    for (int k = 0; k < 4; ++k) {
        s += f16_to_f32(a[k]) * f16_to_f32(b[k]);
    }
    return s;
}

float dot4_acc_f32(std::span<const Half, 4> a, std::span<const Half, 4> b, float acc) {
    return acc + dot4_partial(a, b);
}

Half dot4_acc_f16(std::span<const Half, 4> a, std::span<const Half, 4> b, Half acc) {
    return f32_to_f16(f16_to_f32(acc) + dot4_partial(a, b));
}

}  // namespace vattn
