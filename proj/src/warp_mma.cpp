#include "vattn/warp_mma.hpp"

#include <bit>
#include <stdexcept>

namespace vattn {

int role_slots(FragmentRole role) {
    return (role == FragmentRole::A || role == FragmentRole::B) ? 4 : 8;
}

int role_rows(FragmentRole role) {
    return role == FragmentRole::B ? 4 : 8;
}

int role_cols(FragmentRole role) {
    return role == FragmentRole::A ? 4 : 8;
}

LayoutDescriptor LayoutDescriptor::defaults(FragmentRole role) {
    LayoutDescriptor d;
    d.role_ = role;
    const int slots = role_slots(role);
    for (int lane = 0; lane < WarpFragment::kGroupLanes; ++lane) {
        for (int s = 0; s < slots; ++s) {
            CellRef cell;
            switch (role) {
                case FragmentRole::A:  // lane t owns row t, 4 contiguous columns
                    cell = {static_cast<uint8_t>(lane), static_cast<uint8_t>(s)};
                    break;
                case FragmentRole::B:  // lane t owns column t, 4 contiguous rows
                    cell = {static_cast<uint8_t>(s), static_cast<uint8_t>(lane)};
                    break;
                case FragmentRole::C_FP16:  // lane t owns row t as two 4-element halves
                    cell = {static_cast<uint8_t>(lane), static_cast<uint8_t>(s)};
                    break;
                case FragmentRole::C_FP32:
                    // Lanes t and t^2 jointly hold each row: lane t keeps row t
                    // at columns with bit 1 clear and row t^2 at columns with
                    // bit 1 set, so assembling a full row is an xor-2 exchange.
                    cell = {static_cast<uint8_t>((s & 2) ? (lane ^ 2) : lane),
                            static_cast<uint8_t>(s)};
                    break;
            }
            d.map_[lane * slots + s] = cell;
        }
    }
    d.build_inverse();
    return d;
}

LayoutDescriptor LayoutDescriptor::from_map(FragmentRole role, const std::vector<CellRef>& map) {
    LayoutDescriptor d;
    d.role_ = role;
    const std::size_t n = static_cast<std::size_t>(WarpFragment::kGroupLanes) * role_slots(role);
    if (map.size() != n) throw std::invalid_argument("LayoutDescriptor: wrong map size");
    for (std::size_t i = 0; i < n; ++i) d.map_[i] = map[i];
    d.build_inverse();
    return d;
}

void LayoutDescriptor::build_inverse() {
    const int slots = role_slots(role_);
    const int r = rows(), c = cols();
    std::array<bool, 64> seen{};
    for (int lane = 0; lane < WarpFragment::kGroupLanes; ++lane) {
        for (int s = 0; s < slots; ++s) {
            const CellRef cell = map_[lane * slots + s];
            if (cell.row >= r || cell.col >= c)
                throw std::invalid_argument("LayoutDescriptor: cell out of range");
            const int idx = cell.row * c + cell.col;
            if (seen[idx]) throw std::invalid_argument("LayoutDescriptor: map not injective");
            seen[idx] = true;
            inverse_[idx] = {static_cast<uint8_t>(lane), static_cast<uint8_t>(s)};
        }
    }
    // 8 lanes x slots == rows x cols for every role, so injective == bijective.
}

namespace {

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

bool half_role(FragmentRole role) {
    return role != FragmentRole::C_FP32;
}

}  // namespace

Half WarpFragment::half_at(int lane, int slot) const {
    return Half::from_bits(static_cast<uint16_t>(regs_[lane][slot] & 0xffffu));
}

void WarpFragment::set_half(int lane, int slot, Half v) {
    regs_[lane][slot] = v.bits;
}

float WarpFragment::f32_at(int lane, int slot) const {
    return std::bit_cast<float>(regs_[lane][slot]);
}

void WarpFragment::set_f32(int lane, int slot, float v) {
    regs_[lane][slot] = std::bit_cast<uint32_t>(v);
}

void distribute(WarpFragment& frag, int group, const Matrix<Half>& m) {
    const LayoutDescriptor& d = frag.desc();
    require(half_role(d.role()), "distribute: binary16 payload into a C_FP32 fragment");
    require(m.rows() == d.rows() && m.cols() == d.cols(), "distribute: tile shape mismatch");
    const int base = group * WarpFragment::kGroupLanes;
    for (int lane = 0; lane < WarpFragment::kGroupLanes; ++lane) {
        for (int s = 0; s < d.slots(); ++s) {
            const CellRef cell = d.cell(lane, s);
            frag.set_half(base + lane, s, m.at(cell.row, cell.col));
        }
    }
}

void distribute(WarpFragment& frag, int group, const Matrix<float>& m) {
    const LayoutDescriptor& d = frag.desc();
    require(d.role() == FragmentRole::C_FP32, "distribute: binary32 payload needs a C_FP32 fragment");
    require(m.rows() == d.rows() && m.cols() == d.cols(), "distribute: tile shape mismatch");
    const int base = group * WarpFragment::kGroupLanes;
    for (int lane = 0; lane < WarpFragment::kGroupLanes; ++lane) {
        for (int s = 0; s < d.slots(); ++s) {
            const CellRef cell = d.cell(lane, s);
            frag.set_f32(base + lane, s, m.at(cell.row, cell.col));
        }
    }
}

Matrix<Half> gather_h(const WarpFragment& frag, int group) {
    const LayoutDescriptor& d = frag.desc();
    require(half_role(d.role()), "gather_h: fragment holds binary32 registers");
    Matrix<Half> m(d.rows(), d.cols());
    const int base = group * WarpFragment::kGroupLanes;
    for (int lane = 0; lane < WarpFragment::kGroupLanes; ++lane) {
        for (int s = 0; s < d.slots(); ++s) {
            const CellRef cell = d.cell(lane, s);
            m.at(cell.row, cell.col) = frag.half_at(base + lane, s);
        }
    }
    return m;
}

Matrix<float> gather_f(const WarpFragment& frag, int group) {
    const LayoutDescriptor& d = frag.desc();
    require(d.role() == FragmentRole::C_FP32, "gather_f: fragment holds binary16 registers");
    Matrix<float> m(d.rows(), d.cols());
    const int base = group * WarpFragment::kGroupLanes;
    for (int lane = 0; lane < WarpFragment::kGroupLanes; ++lane) {
        for (int s = 0; s < d.slots(); ++s) {
            const CellRef cell = d.cell(lane, s);
            m.at(cell.row, cell.col) = frag.f32_at(base + lane, s);
        }
    }
    return m;
}

WarpFragment mma_m8n8k4(const WarpFragment& a, const WarpFragment& b, const WarpFragment& c,
                        AccMode mode) {
    require(a.role() == FragmentRole::A, "mma_m8n8k4: first operand must have role A");
    require(b.role() == FragmentRole::B, "mma_m8n8k4: second operand must have role B");
    const FragmentRole want_c =
        mode == AccMode::FP16_ACC ? FragmentRole::C_FP16 : FragmentRole::C_FP32;
    require(c.role() == want_c, "mma_m8n8k4: accumulator role does not match mode");

    WarpFragment out(c.desc());
    const LayoutDescriptor& ad = a.desc();
    const LayoutDescriptor& bd = b.desc();
    const LayoutDescriptor& cd = c.desc();

    for (int g = 0; g < WarpFragment::kGroups; ++g) {
        const int base = g * WarpFragment::kGroupLanes;
        for (int r = 0; r < 8; ++r) {
            // Row r of A, read through the descriptor: stays inside this group.
            std::array<Half, 4> arow;
            for (int k = 0; k < 4; ++k) {
                const RegRef ra = ad.reg(r, k);
                arow[k] = a.half_at(base + ra.lane, ra.slot);
            }
            for (int col = 0; col < 8; ++col) {
                std::array<Half, 4> bcol;
                for (int k = 0; k < 4; ++k) {
                    const RegRef rb = bd.reg(k, col);
                    bcol[k] = b.half_at(base + rb.lane, rb.slot);
                }
                const RegRef rc = cd.reg(r, col);
                if (mode == AccMode::FP32_ACC) {
                    const float acc = c.f32_at(base + rc.lane, rc.slot);
                    out.set_f32(base + rc.lane, rc.slot, dot4_acc_f32(arow, bcol, acc));
                } else {
                    const Half acc = c.half_at(base + rc.lane, rc.slot);
                    out.set_half(base + rc.lane, rc.slot, dot4_acc_f16(arow, bcol, acc));
                }
            }
        }
    }
    return out;
}

}  // namespace vattn
