#pragma once

// Internal fragment/tile machinery shared by the forward and backward
// pipelines. Not part of the public surface.

#include <cstdint>
#include <vector>

#include "vattn/attention.hpp"
#include "vattn/half.hpp"
#include "vattn/layout_transform.hpp"
#include "vattn/tensor.hpp"
#include "vattn/traffic.hpp"
#include "vattn/warp_mma.hpp"

namespace vattn::detail {

inline int pad8(int x) { return (x + 7) & ~7; }

// Fragment-resident accumulator for an m x n tile. 8x8 sub-tiles are packed
// four per warp fragment along the column axis of each 8-row band, mirroring
// warps striding over row bands with their four MMA computations covering
// adjacent column sub-tiles.
class AccTile {
  public:
    AccTile(int rows, int cols, AccMode mode);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    int bands() const { return rows_ / 8; }
    int subcols() const { return cols_ / 8; }
    int chunks() const { return (subcols() + 3) / 4; }
    AccMode mode() const { return mode_; }

    WarpFragment& frag(int band, int chunk) { return frags_[band * chunks() + chunk]; }
    const WarpFragment& frag(int band, int chunk) const { return frags_[band * chunks() + chunk]; }

    static int group_of(int j8) { return j8 % 4; }

  private:
    int rows_, cols_;
    AccMode mode_;
    std::vector<WarpFragment> frags_;
};

// c += a * b through m8n8k4 warp instructions; one invocation counted per
// (k-step, band, column chunk).
void mma_accumulate(AccTile& c, const Matrix<Half>& a, const Matrix<Half>& b, TrafficCounter& tc);

// A operand living in transformed fragments: per band, k4count chunks of 8x4
// produced by splitting the 8x8 C sub-tiles of a previous result.
struct AFrags {
    int bands = 0;
    int k4count = 0;
    int src_chunks = 0;                // fragment columns of the source AccTile
    std::vector<WarpFragment> frags;   // [band][src_chunk][half]

    const WarpFragment& frag_for(int band, int k4) const {
        return frags[(band * src_chunks + (k4 / 2) / 4) * 2 + (k4 & 1)];
    }
    static int group_for(int k4) { return (k4 / 2) % 4; }
};

// Splits every fragment of a C-layout tile into A-layout fragments
// (transform_c16_to_a / transform_c32_to_a by mode).
AFrags transform_tile_to_a(const AccTile& c);

void mma_accumulate(AccTile& c, const AFrags& a, const Matrix<Half>& b, TrafficCounter& tc);

// Logical tile values; binary16 accumulators widen on gather and narrow on
// scatter (conversion cost is counted by the callers that model it).
Matrix<float> gather_tile(const AccTile& c);
void scatter_tile(AccTile& c, const Matrix<float>& vals);
Matrix<Half> gather_tile_h(const AccTile& c);  // FP16 accumulators only

// Row-block load/store against modeled HBM; counts element traffic.
Matrix<Half> load_rows(const Tensor<Half>& t, int b, int h, int r0, int rows, TrafficCounter& tc);
void store_rows(Tensor<Half>& t, int b, int h, int r0, const Matrix<Half>& m, int cols,
                TrafficCounter& tc);

Matrix<Half> pad_cols(const Matrix<Half>& m, int cols);

// Copy one computation group's lanes into all four groups (register-level
// broadcast used when four output sub-tiles share one A chunk).
WarpFragment broadcast_group(const WarpFragment& src, int group);

// One (batch, head, query-tile) forward unit. Loads and warp events are
// counted in tc; the O/lse stores are the caller's. The backward pre-pass
// reuses this with the stores suppressed.
struct ForwardUnit {
    Matrix<Half> o_tile;     // Br x d
    std::vector<float> lse;  // Br
    TrafficCounter tc;
    uint64_t digest = 0;
};

ForwardUnit run_forward_unit(const Tensor<Half>& q, const Tensor<Half>& k, const Tensor<Half>& v,
                             const AttnConfig& cfg, int b, int h, int qt, ForwardTrace* trace);

}  // namespace vattn::detail
