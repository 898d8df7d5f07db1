#include "vattn/online_softmax.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace vattn {

namespace {
constexpr float kNegInf = -std::numeric_limits<float>::infinity();
}

SoftmaxState softmax_state_init(int rows) {
    if (rows <= 0) throw std::invalid_argument("softmax_state_init: rows must be positive");
    SoftmaxState s;
    s.row_max.assign(rows, kNegInf);
    s.row_sum.assign(rows, 0.0f);
    return s;
}

SoftmaxBlockUpdate softmax_block_update(SoftmaxState& state, const Matrix<float>& scores) {
    if (scores.rows() != state.rows())
        throw std::invalid_argument("softmax_block_update: row count mismatch");

    SoftmaxBlockUpdate up;
    up.weights = Matrix<float>(scores.rows(), scores.cols());
    up.rescale.assign(scores.rows(), 1.0f);

    for (int i = 0; i < scores.rows(); ++i) {
        float block_max = kNegInf;
        for (int j = 0; j < scores.cols(); ++j) {
            const float s = scores.at(i, j);
            if (std::isnan(s))
                throw std::domain_error("softmax_block_update: NaN score (upstream MMA fault)");
            block_max = std::max(block_max, s);
        }
        const float m_old = state.row_max[i];
        const float m_new = std::max(m_old, block_max);

        if (m_new == kNegInf) {
            // Nothing finite yet: all-masked block onto a fresh row.
            for (int j = 0; j < scores.cols(); ++j) up.weights.at(i, j) = 0.0f;
            continue;
        }

        const float rescale = m_old == kNegInf ? 1.0f : std::exp(m_old - m_new);
        float block_sum = 0.0f;
        for (int j = 0; j < scores.cols(); ++j) {
            const float s = scores.at(i, j);
            const float w = s == kNegInf ? 0.0f : std::exp(s - m_new);
            up.weights.at(i, j) = w;
            block_sum += w;
        }
        state.row_sum[i] = state.row_sum[i] * rescale + block_sum;
        state.row_max[i] = m_new;
        up.rescale[i] = rescale;
    }
    return up;
}

SoftmaxState softmax_merge(const SoftmaxState& a, const SoftmaxState& b) {
    if (a.rows() != b.rows()) throw std::invalid_argument("softmax_merge: row count mismatch");
    SoftmaxState out = softmax_state_init(a.rows());
    for (int i = 0; i < a.rows(); ++i) {
        const float m = std::max(a.row_max[i], b.row_max[i]);
        if (m == kNegInf) continue;  // both fresh
        const float wa = a.row_max[i] == kNegInf ? 0.0f : std::exp(a.row_max[i] - m);
        const float wb = b.row_max[i] == kNegInf ? 0.0f : std::exp(b.row_max[i] - m);
        out.row_max[i] = m;
        out.row_sum[i] = wa * a.row_sum[i] + wb * b.row_sum[i];
    }
    return out;
}

SoftmaxFinal softmax_finalize(const SoftmaxState& state) {
    SoftmaxFinal fin;
    fin.inv_sum.resize(state.rows());
    fin.lse.resize(state.rows());
    for (int i = 0; i < state.rows(); ++i) {
        const float l = state.row_sum[i];
        if (!(l > 0.0f))
            throw std::domain_error("softmax_finalize: fully masked row (l == 0)");
        fin.inv_sum[i] = 1.0f / l;
        fin.lse[i] = state.row_max[i] + std::log(l);
    }
    return fin;
}

}  // namespace vattn
