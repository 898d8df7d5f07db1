#pragma once

#include <vector>

#include "vattn/attention.hpp"
#include "vattn/warp_mma.hpp"

namespace vattn {

struct GradOutputs {
    Tensor<Half> dq, dk, dv;  // shapes equal the forward inputs
    TrafficCounter traffic;
    uint64_t mask_digest = 0;
};

// One unit's additive dQ contribution; zero outside the rows it visited.
struct DqContribution {
    int unit_index = 0;
    int b = 0, h = 0;
    Matrix<float> delta;  // N x d
};

// Binary32 master buffer for the cross-unit dQ accumulation. Contributions
// add elementwise; the simulator applies them in ascending unit index, and
// the recorded contributions let tests replay any permutation to bound what
// hardware-order nondeterminism would cost. finalize() rounds to binary16
// exactly once.
class DqAccumulator {
  public:
    DqAccumulator(int batch, int heads, int n, int d);
    const Tensor<float>& buffer() const { return buffer_; }
    Tensor<Half> finalize() const;

    friend void dq_atomic_add(DqAccumulator& acc, const DqContribution& c);

  private:
    Tensor<float> buffer_;
};

void dq_atomic_add(DqAccumulator& acc, const DqContribution& c);

// dPsum_i = sum_j dO_ij * O_ij, products widened to binary32 before the sum.
Tensor<float> compute_dpsum(const Tensor<Half>& d_out, const Tensor<Half>& out);

// Fused recompute backward, FP16-ACC only. Per (batch, head): first a fused
// forward re-run produces O for dPsum (nothing but dPsum reaches modeled
// HBM); then per key-tile unit the S tile is recomputed, P = exp(S*scale -
// lse) replayed with the forward's dropout masks, and
//   dV += P~^T dO,  dP = D o (dO V^T),  dS = P o (dP - dPsum) * scale,
//   dK += dS^T Q,   dQ += dS K  (cross-unit, via DqAccumulator)
// with dK/dV accumulated locally in binary16 fragments. No N x N intermediate
// is ever written to modeled HBM.
//
// Pass-level traffic: reads 10 (pre-pass Q K V; main Q K V dO lse dPsum;
// dQ finalize), writes 5 (dPsum, dK, dV, dQ atomics, dQ narrowing).
GradOutputs backward_fused(const Tensor<Half>& q, const Tensor<Half>& k, const Tensor<Half>& v,
                           const Tensor<Half>& d_out, const Tensor<float>& lse,
                           const AttnConfig& cfg,
                           std::vector<DqContribution>* dq_log = nullptr);

}  // namespace vattn
