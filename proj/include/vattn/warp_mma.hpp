#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "vattn/half.hpp"

namespace vattn {

// Small dense row-major matrix used for logical MMA tiles.
template <typename T>
class Matrix {
  public:
    Matrix() = default;
    Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols) {}

    int rows() const { return rows_; }
    int cols() const { return cols_; }

    T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (int r = 0; r < rows_; ++r)
            for (int c = 0; c < cols_; ++c) t.at(c, r) = at(r, c);
        return t;
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

  private:
    int rows_ = 0, cols_ = 0;
    std::vector<T> data_;
};

// Operand position within the m8n8k4 instruction. The role fixes the logical
// tile shape and the per-lane slot count:
//   A      8x4 tile, 4 binary16 slots per lane
//   B      4x8 tile, 4 binary16 slots per lane
//   C_FP16 8x8 tile, 8 binary16 slots per lane
//   C_FP32 8x8 tile, 8 binary32 slots per lane
enum class FragmentRole : uint8_t { A, B, C_FP16, C_FP32 };

int role_slots(FragmentRole role);
int role_rows(FragmentRole role);
int role_cols(FragmentRole role);

struct CellRef {
    uint8_t row = 0;
    uint8_t col = 0;
    friend bool operator==(CellRef a, CellRef b) { return a.row == b.row && a.col == b.col; }
};

struct RegRef {
    uint8_t lane = 0;  // lane within the 8-thread computation
    uint8_t slot = 0;
    friend bool operator==(RegRef a, RegRef b) { return a.lane == b.lane && a.slot == b.slot; }
};

// Bijection between (lane-in-computation, slot) register coordinates and
// (row, col) cells of the fragment's logical tile. Descriptors are pluggable;
// the defaults keep the one load-bearing relationship, the xor-2 lane pairing
// between C_FP32 rows and the A layout.
class LayoutDescriptor {
  public:
    static LayoutDescriptor defaults(FragmentRole role);

    // Builds a custom descriptor from map[lane * slots + slot] = cell and
    // validates bijectivity.
    static LayoutDescriptor from_map(FragmentRole role, const std::vector<CellRef>& map);

    FragmentRole role() const { return role_; }
    int slots() const { return role_slots(role_); }
    int rows() const { return role_rows(role_); }
    int cols() const { return role_cols(role_); }

    CellRef cell(int lane, int slot) const { return map_[lane * slots() + slot]; }
    RegRef reg(int row, int col) const { return inverse_[row * cols() + col]; }

    friend bool operator==(const LayoutDescriptor& a, const LayoutDescriptor& b) {
        return a.role_ == b.role_ && a.map_ == b.map_;
    }

  private:
    LayoutDescriptor() = default;
    void build_inverse();

    FragmentRole role_ = FragmentRole::A;
    std::array<CellRef, 64> map_{};
    std::array<RegRef, 64> inverse_{};
};

// Per-lane register contents of one MMA operand for a full 32-lane warp.
// Lanes are partitioned into 4 disjoint computation groups of 8; group g owns
// lanes [8g, 8g+8). Registers hold 32-bit patterns: binary16 roles use the
// low 16 bits, C_FP32 stores binary32 bits.
class WarpFragment {
  public:
    static constexpr int kLanes = 32;
    static constexpr int kGroupLanes = 8;
    static constexpr int kGroups = 4;

    explicit WarpFragment(LayoutDescriptor desc) : desc_(desc) {}

    const LayoutDescriptor& desc() const { return desc_; }
    FragmentRole role() const { return desc_.role(); }

    uint32_t raw(int lane, int slot) const { return regs_[lane][slot]; }
    void set_raw(int lane, int slot, uint32_t bits) { regs_[lane][slot] = bits; }

    Half half_at(int lane, int slot) const;
    void set_half(int lane, int slot, Half v);
    float f32_at(int lane, int slot) const;
    void set_f32(int lane, int slot, float v);

  private:
    LayoutDescriptor desc_;
    std::array<std::array<uint32_t, 8>, kLanes> regs_{};
};

// Populate the 8 lanes of one computation group from a logical tile; gather
// inverts it exactly. The Half overloads serve roles A/B/C_FP16, the float
// overloads C_FP32.
void distribute(WarpFragment& frag, int group, const Matrix<Half>& m);
void distribute(WarpFragment& frag, int group, const Matrix<float>& m);
Matrix<Half> gather_h(const WarpFragment& frag, int group);
Matrix<float> gather_f(const WarpFragment& frag, int group);

// One warp-wide m8n8k4 instruction: the four computation groups run
// independently, each producing gather(a) * gather(b) + gather(c) under the
// dot4 rounding contract. No cross-group register access.
WarpFragment mma_m8n8k4(const WarpFragment& a, const WarpFragment& b, const WarpFragment& c,
                        AccMode mode);

}  // namespace vattn
