#include "vattn/layout_transform.hpp"

#include <stdexcept>

namespace vattn {

void shfl_xor(WarpFragment& frag, unsigned mask, std::span<const int> slots, ShuffleLog* log) {
    if (mask >= 32) throw std::invalid_argument("shfl_xor: mask must be < 32");
    if (mask == 0) return;
    for (int slot : slots) {
        for (int lane = 0; lane < WarpFragment::kLanes; ++lane) {
            const int partner = lane ^ static_cast<int>(mask);
            if (partner < lane) continue;  // swap each pair once
            const uint32_t a = frag.raw(lane, slot);
            const uint32_t b = frag.raw(partner, slot);
            frag.set_raw(lane, slot, b);
            frag.set_raw(partner, slot, a);
        }
        if (log) log->records.push_back({static_cast<uint8_t>(mask), static_cast<uint8_t>(slot)});
    }
}

namespace {

// Source register for A-target (lane, slot) of sub-tile `half`, plus the lane
// distance it has to travel.
struct Route {
    RegRef src;
    int lane_delta;
};

Route route_for(const LayoutDescriptor& cdesc, const LayoutDescriptor& adesc, int lane, int slot,
                int half) {
    const CellRef cell = adesc.cell(lane, slot);
    const RegRef src = cdesc.reg(cell.row, cell.col + 4 * half);
    return {src, src.lane ^ lane};
}

}  // namespace

std::array<WarpFragment, 2> transform_c16_to_a(const WarpFragment& frag) {
    if (frag.role() != FragmentRole::C_FP16)
        throw std::invalid_argument("transform_c16_to_a: fragment role must be C_FP16");
    const LayoutDescriptor adesc = LayoutDescriptor::defaults(FragmentRole::A);
    const LayoutDescriptor& cdesc = frag.desc();

    std::array<WarpFragment, 2> out{WarpFragment(adesc), WarpFragment(adesc)};
    for (int half = 0; half < 2; ++half) {
        for (int lane = 0; lane < WarpFragment::kGroupLanes; ++lane) {
            for (int s = 0; s < adesc.slots(); ++s) {
                const Route r = route_for(cdesc, adesc, lane, s, half);
                if (r.lane_delta != 0)
                    throw std::invalid_argument(
                        "transform_c16_to_a: descriptors require cross-lane traffic");
                for (int g = 0; g < WarpFragment::kGroups; ++g) {
                    const int base = g * WarpFragment::kGroupLanes;
                    out[half].set_half(base + lane, s, frag.half_at(base + r.src.lane, r.src.slot));
                }
            }
        }
    }
    return out;
}

std::array<WarpFragment, 2> transform_c32_to_a(const WarpFragment& frag, ShuffleLog* log) {
    if (frag.role() != FragmentRole::C_FP32)
        throw std::invalid_argument("transform_c32_to_a: fragment role must be C_FP32");
    const LayoutDescriptor adesc = LayoutDescriptor::defaults(FragmentRole::A);
    const LayoutDescriptor& cdesc = frag.desc();

    // Slots whose cells sit in the partner lane form the exchange set.
    bool exchanged[8] = {};
    for (int half = 0; half < 2; ++half) {
        for (int lane = 0; lane < WarpFragment::kGroupLanes; ++lane) {
            for (int s = 0; s < adesc.slots(); ++s) {
                const Route r = route_for(cdesc, adesc, lane, s, half);
                if (r.lane_delta == 0) continue;
                if (r.lane_delta != 2)
                    throw std::invalid_argument(
                        "transform_c32_to_a: descriptors violate the xor-2 pairing");
                exchanged[r.src.slot] = true;
            }
        }
    }
    std::vector<int> slots;
    for (int s = 0; s < 8; ++s)
        if (exchanged[s]) slots.push_back(s);

    WarpFragment traded = frag;
    shfl_xor(traded, 2, slots, log);

    std::array<WarpFragment, 2> out{WarpFragment(adesc), WarpFragment(adesc)};
    for (int half = 0; half < 2; ++half) {
        for (int lane = 0; lane < WarpFragment::kGroupLanes; ++lane) {
            for (int s = 0; s < adesc.slots(); ++s) {
                const Route r = route_for(cdesc, adesc, lane, s, half);
                for (int g = 0; g < WarpFragment::kGroups; ++g) {
                    const int base = g * WarpFragment::kGroupLanes;
                    // After the exchange the needed value sits in this lane
                    // either way; narrow it to binary16 exactly once.
                    const float v = r.lane_delta == 0
                                        ? frag.f32_at(base + lane, r.src.slot)
                                        : traded.f32_at(base + lane, r.src.slot);
                    out[half].set_half(base + lane, s, f32_to_f16(v));
                }
            }
        }
    }
    return out;
}

}  // namespace vattn
