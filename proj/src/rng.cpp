#include "vattn/rng.hpp"

#include <cmath>
#include <numbers>

namespace vattn {

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

uint64_t hash_combine(uint64_t state, uint64_t v) {
    return mix64(state ^ (v + 0x9e3779b97f4a7c15ull + (state << 6) + (state >> 2)));
}

double bits_to_unit(uint64_t bits) {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

float normal_at(uint64_t seed, uint64_t index) {
    const uint64_t a = mix64(hash_combine(seed, 2 * index));
    const uint64_t b = mix64(hash_combine(seed, 2 * index + 1));
    // Box-Muller; u1 nudged away from zero so the log stays finite.
    const double u1 = 1.0 - bits_to_unit(a);
    const double u2 = bits_to_unit(b);
    return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                              std::cos(2.0 * std::numbers::pi * u2));
}

namespace {

uint64_t position_hash(uint64_t seed, uint64_t b, uint64_t h, uint64_t row, uint64_t col) {
    uint64_t s = hash_combine(seed, 0x64726f70ull);  // dropout stream tag
    s = hash_combine(s, b);
    s = hash_combine(s, h);
    s = hash_combine(s, row);
    s = hash_combine(s, col);
    return s;
}

}  // namespace

bool dropout_keep(uint64_t seed, uint64_t b, uint64_t h, uint64_t row, uint64_t col, float p) {
    if (p <= 0.0f) return true;
    return bits_to_unit(position_hash(seed, b, h, row, col)) >= static_cast<double>(p);
}

uint64_t dropout_digest_term(uint64_t seed, uint64_t b, uint64_t h, uint64_t row, uint64_t col,
                             bool keep) {
    return mix64(position_hash(seed, b, h, row, col) ^ (keep ? 0x6b656570ull : 0ull));
}

}  // namespace vattn
