#pragma once

#include <vector>

#include "vattn/warp_mma.hpp"

namespace vattn {

// Per-row streaming softmax statistics: running maximum m and running sum l
// of exponentials shifted by that maximum. All state arithmetic is binary32.
struct SoftmaxState {
    std::vector<float> row_max;  // m, -inf until a row sees its first element
    std::vector<float> row_sum;  // l, 0 until a row sees its first finite element

    int rows() const { return static_cast<int>(row_max.size()); }
};

SoftmaxState softmax_state_init(int rows);

struct SoftmaxBlockUpdate {
    Matrix<float> weights;       // exp(s_ij - m_new), unnormalized
    std::vector<float> rescale;  // e^{m_old - m_new} per row; 1 for fresh rows
};

// Folds one block of scaled scores into the state. Masked entries arrive as
// -inf and contribute zero weight; NaN entries are rejected (they signal an
// upstream MMA fault). The returned rescale factor is what the caller must
// apply to its running output accumulator before adding this block's
// contribution.
SoftmaxBlockUpdate softmax_block_update(SoftmaxState& state, const Matrix<float>& scores);

// Combines the statistics of two disjoint column spans of the same rows:
// m = max(m_a, m_b), l = e^{m_a - m} l_a + e^{m_b - m} l_b.
SoftmaxState softmax_merge(const SoftmaxState& a, const SoftmaxState& b);

struct SoftmaxFinal {
    std::vector<float> inv_sum;  // 1/l
    std::vector<float> lse;      // m + ln l, the log-sum-exp backward needs
};

// Rows that never saw a finite element (l = 0) are a hard error: upstream
// tiling must never produce a fully masked row.
SoftmaxFinal softmax_finalize(const SoftmaxState& state);

}  // namespace vattn
