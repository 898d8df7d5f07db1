#include "vattn/backward.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "tile_pipeline.hpp"
#include "vattn/rng.hpp"

namespace vattn {

namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

DqAccumulator::DqAccumulator(int batch, int heads, int n, int d)
    : buffer_(Tensor<float>::bhnd(batch, heads, n, d)) {}

Tensor<Half> DqAccumulator::finalize() const {
    Tensor<Half> out(buffer_.dims());
    for (std::size_t i = 0; i < buffer_.size(); ++i) out.data()[i] = f32_to_f16(buffer_.data()[i]);
    return out;
}

void dq_atomic_add(DqAccumulator& acc, const DqContribution& c) {
    const auto& dims = acc.buffer_.dims();
    require(c.delta.rows() == static_cast<int>(dims[2]) &&
                c.delta.cols() == static_cast<int>(dims[3]),
            "dq_atomic_add: contribution shape mismatch");
    require(c.b >= 0 && c.b < static_cast<int>(dims[0]) && c.h >= 0 &&
                c.h < static_cast<int>(dims[1]),
            "dq_atomic_add: batch/head out of range");
    for (int i = 0; i < c.delta.rows(); ++i)
        for (int j = 0; j < c.delta.cols(); ++j)
            acc.buffer_.at(c.b, c.h, i, j) += c.delta.at(i, j);
}

Tensor<float> compute_dpsum(const Tensor<Half>& d_out, const Tensor<Half>& out) {
    require(d_out.dims() == out.dims() && d_out.rank() == 4, "compute_dpsum: shape mismatch");
    const auto& dims = d_out.dims();
    Tensor<float> r(std::vector<std::size_t>{dims[0], dims[1], dims[2]});
    for (std::size_t b = 0; b < dims[0]; ++b)
        for (std::size_t h = 0; h < dims[1]; ++h)
            for (std::size_t i = 0; i < dims[2]; ++i) {
                float s = 0.0f;
                for (std::size_t j = 0; j < dims[3]; ++j)
                    s += f16_to_f32(d_out.at(b, h, i, j)) * f16_to_f32(out.at(b, h, i, j));
                r.at(b, h, i) = s;
            }
    return r;
}

GradOutputs backward_fused(const Tensor<Half>& q, const Tensor<Half>& k, const Tensor<Half>& v,
                           const Tensor<Half>& d_out, const Tensor<float>& lse,
                           const AttnConfig& cfg, std::vector<DqContribution>* dq_log) {
    cfg.validate();
    if (cfg.acc_mode != AccMode::FP16_ACC)
        throw std::invalid_argument("backward_fused: only FP16-ACC is supported");
    require(q.dims() == k.dims() && q.dims() == v.dims() && q.dims() == d_out.dims(),
            "backward_fused: input shape mismatch");
    require(q.rank() == 4 && q.dims()[0] == static_cast<std::size_t>(cfg.batch) &&
                q.dims()[1] == static_cast<std::size_t>(cfg.heads) &&
                q.dims()[2] == static_cast<std::size_t>(cfg.seq_len) &&
                q.dims()[3] == static_cast<std::size_t>(cfg.head_dim),
            "backward_fused: shapes do not match config");
    require(lse.rank() == 3 && lse.dims()[0] == static_cast<std::size_t>(cfg.batch) &&
                lse.dims()[1] == static_cast<std::size_t>(cfg.heads) &&
                lse.dims()[2] == static_cast<std::size_t>(cfg.seq_len),
            "backward_fused: lse shape mismatch");

    const int n = cfg.seq_len, d = cfg.head_dim;
    const int br = cfg.tile_rows, bc = cfg.tile_cols;
    const int dp = detail::pad8(d);
    const float scale = cfg.scale();
    const float inv_keep = 1.0f / (1.0f - cfg.dropout_p);

    GradOutputs g;
    g.dk = Tensor<Half>::bhnd(cfg.batch, cfg.heads, n, d);
    g.dv = Tensor<Half>::bhnd(cfg.batch, cfg.heads, n, d);
    // Pre-pass Q K V; main Q K V dO lse dPsum; dQ finalize read.
    g.traffic.matrix_pass_reads = 10;
    // dPsum, dK, dV, dQ atomics, dQ narrowing.
    g.traffic.matrix_pass_writes = 5;

    // Recompute pre-pass: a fused forward re-run supplies O for dPsum; only
    // dPsum reaches modeled HBM.
    Tensor<Half> o_re = Tensor<Half>::bhnd(cfg.batch, cfg.heads, n, d);
    for (int b = 0; b < cfg.batch; ++b) {
        for (int h = 0; h < cfg.heads; ++h) {
            for (int qt = 0; qt < n / br; ++qt) {
                detail::ForwardUnit u = detail::run_forward_unit(q, k, v, cfg, b, h, qt, nullptr);
                for (int i = 0; i < br; ++i)
                    for (int j = 0; j < d; ++j) o_re.at(b, h, qt * br + i, j) = u.o_tile.at(i, j);
                g.traffic += u.tc;
            }
        }
    }
    const Tensor<float> dpsum = compute_dpsum(d_out, o_re);
    g.traffic.element_writes += static_cast<uint64_t>(cfg.batch) * cfg.heads * n;

    DqAccumulator dq_acc(cfg.batch, cfg.heads, n, d);
    int unit_index = 0;

    for (int b = 0; b < cfg.batch; ++b) {
        for (int h = 0; h < cfg.heads; ++h) {
            for (int kt = 0; kt < n / bc; ++kt, ++unit_index) {
                TrafficCounter tc;
                uint64_t digest = 0;
                const int col0 = kt * bc;

                const Matrix<Half> k_tile = detail::load_rows(k, b, h, col0, bc, tc);
                const Matrix<Half> v_tile = detail::load_rows(v, b, h, col0, bc, tc);
                detail::AccTile dk_acc(bc, dp, AccMode::FP16_ACC);
                detail::AccTile dv_acc(bc, dp, AccMode::FP16_ACC);
                DqContribution contrib{unit_index, b, h, Matrix<float>(n, d)};

                for (int qt = 0; qt < n / br; ++qt) {
                    const int row0 = qt * br;
                    if (cfg.causal && row0 + br - 1 < col0) continue;  // tile fully masked

                    const Matrix<Half> q_tile = detail::load_rows(q, b, h, row0, br, tc);
                    const Matrix<Half> do_tile = detail::load_rows(d_out, b, h, row0, br, tc);
                    tc.element_reads += static_cast<uint64_t>(br) * 2;  // lse and dPsum rows

                    // Recompute the S tile and P = exp(S*scale - L).
                    detail::AccTile s_acc(br, bc, AccMode::FP16_ACC);
                    detail::mma_accumulate(s_acc, q_tile, k_tile.transposed(), tc);
                    Matrix<float> s_log = detail::gather_tile(s_acc);
                    tc.convert_events += static_cast<uint64_t>(br) * bc;
                    Matrix<float> p(br, bc);
                    for (int i = 0; i < br; ++i) {
                        for (int j = 0; j < bc; ++j) {
                            float s = s_log.at(i, j) * scale;
                            if (cfg.causal && col0 + j > row0 + i) s = kNegInf;
                            p.at(i, j) = std::exp(s - lse.at(b, h, row0 + i));
                        }
                    }

                    // Dropout replay: one mask query per cell, reused for both
                    // the P~ operand and the dP chain.
                    Matrix<float> drop(br, bc);
                    if (cfg.dropout_p > 0.0f) {
                        for (int i = 0; i < br; ++i)
                            for (int j = 0; j < bc; ++j) {
                                const bool keep = dropout_keep(cfg.seed, b, h, row0 + i, col0 + j,
                                                               cfg.dropout_p);
                                digest +=
                                    dropout_digest_term(cfg.seed, b, h, row0 + i, col0 + j, keep);
                                drop.at(i, j) = keep ? inv_keep : 0.0f;
                            }
                    } else {
                        for (int i = 0; i < br; ++i)
                            for (int j = 0; j < bc; ++j) drop.at(i, j) = 1.0f;
                    }

                    // dV += P~^T dO.
                    Matrix<Half> pd16(br, bc);
                    for (int i = 0; i < br; ++i)
                        for (int j = 0; j < bc; ++j)
                            pd16.at(i, j) = f32_to_f16(p.at(i, j) * drop.at(i, j));
                    tc.convert_events += static_cast<uint64_t>(br) * bc;
                    detail::mma_accumulate(dv_acc, pd16.transposed(), detail::pad_cols(do_tile, dp),
                                           tc);

                    // dP = D o (dO V^T), dS = P o (dP - dPsum) * scale.
                    detail::AccTile dpt_acc(br, bc, AccMode::FP16_ACC);
                    detail::mma_accumulate(dpt_acc, do_tile, v_tile.transposed(), tc);
                    const Matrix<float> dpt = detail::gather_tile(dpt_acc);
                    tc.convert_events += static_cast<uint64_t>(br) * bc;
                    Matrix<float> ds(br, bc);
                    for (int i = 0; i < br; ++i) {
                        const float dps = dpsum.at(b, h, row0 + i);
                        for (int j = 0; j < bc; ++j)
                            ds.at(i, j) =
                                p.at(i, j) * (drop.at(i, j) * dpt.at(i, j) - dps) * scale;
                    }

                    // dS through the C->A transform feeds dQ += dS K.
                    detail::AccTile ds_acc(br, bc, AccMode::FP16_ACC);
                    detail::scatter_tile(ds_acc, ds);
                    tc.convert_events += static_cast<uint64_t>(br) * bc;
                    detail::AFrags ds_frags = detail::transform_tile_to_a(ds_acc);
                    detail::AccTile dqc_acc(br, dp, AccMode::FP16_ACC);
                    detail::mma_accumulate(dqc_acc, ds_frags, detail::pad_cols(k_tile, dp), tc);
                    const Matrix<float> dq_vals = detail::gather_tile(dqc_acc);
                    for (int i = 0; i < br; ++i)
                        for (int j = 0; j < d; ++j) contrib.delta.at(row0 + i, j) += dq_vals.at(i, j);
                    tc.element_writes += static_cast<uint64_t>(br) * d;  // atomic adds

                    // dK += dS^T Q, reusing the narrowed dS registers.
                    const Matrix<Half> ds16 = detail::gather_tile_h(ds_acc);
                    detail::mma_accumulate(dk_acc, ds16.transposed(), detail::pad_cols(q_tile, dp),
                                           tc);
                }

                detail::store_rows(g.dk, b, h, col0, detail::gather_tile_h(dk_acc), d, tc);
                detail::store_rows(g.dv, b, h, col0, detail::gather_tile_h(dv_acc), d, tc);

                dq_atomic_add(dq_acc, contrib);
                if (dq_log) dq_log->push_back(std::move(contrib));

                g.traffic += tc;
                g.mask_digest += digest;
            }
        }
    }

    // Final pass: the binary32 master buffer narrows to binary16 once.
    g.dq = dq_acc.finalize();
    g.traffic.element_reads += static_cast<uint64_t>(cfg.batch) * cfg.heads * n * d;
    g.traffic.element_writes += static_cast<uint64_t>(cfg.batch) * cfg.heads * n * d;
    return g;
}

}  // namespace vattn
