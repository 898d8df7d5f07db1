#pragma once

#include <cstdint>

#include "vattn/half.hpp"
#include "vattn/tensor.hpp"
#include "vattn/traffic.hpp"

namespace vattn {

struct AttnConfig {
    int batch = 1;
    int heads = 1;
    int seq_len = 0;       // N, multiple of both tile sizes
    int head_dim = 0;      // d, multiple of 4
    int tile_rows = 64;    // Br, multiple of 8
    int tile_cols = 64;    // Bc, multiple of 8
    bool causal = false;
    float dropout_p = 0.0f;  // in [0, 1)
    uint64_t seed = 0;
    AccMode acc_mode = AccMode::FP32_ACC;
    float softmax_scale = 0.0f;  // <= 0 picks 1/sqrt(head_dim)

    void validate() const;  // throws std::invalid_argument
    float scale() const;
};

struct ForwardOutput {
    Tensor<Half> out;    // [batch, heads, N, d]
    Tensor<float> lse;   // [batch, heads, N], log-sum-exp per query row
    TrafficCounter traffic;
    uint64_t mask_digest = 0;  // order-independent digest of consumed dropout positions
};

// Test and inspection hook: the effective normalized probabilities and the
// scaled scores the softmax saw, materialized densely.
struct ForwardTrace {
    Tensor<float> probs;   // [batch, heads, N, N]
    Tensor<float> scores;  // [batch, heads, N, N], -inf on masked cells
};

// Fused pass: per (batch, head, query-tile) unit iterate key tiles, keeping
// S, the softmax state and the O accumulator in fragments; O is written to
// modeled HBM once per unit. Pass-level traffic is fixed at 3 reads (Q, K, V)
// and 1 write (O).
//
// Element traffic per (batch, head), T = visited (query-tile, key-tile)
// pairs (dense: (N/Br)(N/Bc); causal: only tiles touching the diagonal band):
//   reads  = N*d (Q) + 2*Bc*d*T (K and V per visit)
//   writes = N*d (O) + N (lse)
ForwardOutput forward_fused(const Tensor<Half>& q, const Tensor<Half>& k, const Tensor<Half>& v,
                            const AttnConfig& cfg, ForwardTrace* trace = nullptr);

// Three-pass baseline materializing S and P to modeled HBM: QK^T, full-row
// softmax (+dropout), PV. Pass-level traffic is 5 reads and 3 writes; element
// traffic per (batch, head):
//   reads  = 2*N*d (Q, K) + N*N (S) + N*N + N*d (P, V)
//   writes = N*N (S) + N*N (P) + N*d (O) + N (lse)
ForwardOutput forward_traditional(const Tensor<Half>& q, const Tensor<Half>& k,
                                  const Tensor<Half>& v, const AttnConfig& cfg);

}  // namespace vattn
