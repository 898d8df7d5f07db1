#pragma once

#include <cstdint>

namespace vattn {

// SplitMix64 finalizer: stateless counter-based mixing, the basis for
// workload generation and dropout decisions.
uint64_t mix64(uint64_t x);

// Chained mixing of a value into a running hash state.
uint64_t hash_combine(uint64_t state, uint64_t v);

// Upper 53 bits mapped to [0, 1).
double bits_to_unit(uint64_t bits);

// Standard normal draw addressed by (seed, index); Box-Muller over two
// counter draws, so any element can be generated independently.
float normal_at(uint64_t seed, uint64_t index);

// Dropout decision for one attention position; keep iff u >= p with u the
// uniform variate of the (seed, b, h, row, col) tuple. Identical across
// forward, traditional, backward and oracle paths.
bool dropout_keep(uint64_t seed, uint64_t b, uint64_t h, uint64_t row, uint64_t col, float p);

// Order-independent digest term for one consumed mask position; callers sum
// terms, so any traversal order yields the same digest.
uint64_t dropout_digest_term(uint64_t seed, uint64_t b, uint64_t h, uint64_t row, uint64_t col,
                             bool keep);

}  // namespace vattn
