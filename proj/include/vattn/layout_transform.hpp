#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "vattn/warp_mma.hpp"

namespace vattn {

// One warp-wide register exchange: every lane swapped the given slot with its
// xor partner.
struct ShuffleRecord {
    uint8_t mask = 0;
    uint8_t slot = 0;
};

struct ShuffleLog {
    std::vector<ShuffleRecord> records;
};

// Warp shuffle: for each listed slot, lane t receives the value lane t^mask
// held there. Pure exchange, no arithmetic; mask 0 is the identity.
void shfl_xor(WarpFragment& frag, unsigned mask, std::span<const int> slots,
              ShuffleLog* log = nullptr);

// Splits each computation's 8x8 C tile into the two 8x4 A tiles covering
// columns 0..3 (result[0]) and 4..7 (result[1]), ready to feed the next MMA.
//
// The binary16 variant is pure within-lane re-slotting and preserves logical
// content bit for bit. The binary32 variant first runs shfl_xor(2) on the
// slots whose cells the A layout assigns to the partner lane, then narrows
// every element binary32 -> binary16 exactly once. Which slots travel is
// derived from the descriptor pair, not hard-coded; descriptors that would
// need any lane distance other than 0 or 2 are rejected.
std::array<WarpFragment, 2> transform_c16_to_a(const WarpFragment& frag);
std::array<WarpFragment, 2> transform_c32_to_a(const WarpFragment& frag,
                                               ShuffleLog* log = nullptr);

}  // namespace vattn
