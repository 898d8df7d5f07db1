#include "vattn/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "tile_pipeline.hpp"
#include "vattn/online_softmax.hpp"
#include "vattn/rng.hpp"

namespace vattn {

namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void require_bhnd(const Tensor<Half>& t, const AttnConfig& cfg, const char* name) {
    require(t.rank() == 4 && t.dims()[0] == static_cast<std::size_t>(cfg.batch) &&
                t.dims()[1] == static_cast<std::size_t>(cfg.heads) &&
                t.dims()[2] == static_cast<std::size_t>(cfg.seq_len) &&
                t.dims()[3] == static_cast<std::size_t>(cfg.head_dim),
            name);
}

}  // namespace

void AttnConfig::validate() const {
    require(batch >= 1 && heads >= 1, "AttnConfig: batch and heads must be positive");
    require(seq_len > 0 && head_dim > 0, "AttnConfig: seq_len and head_dim must be positive");
    require(tile_rows > 0 && tile_rows % 8 == 0, "AttnConfig: tile_rows must be a positive multiple of 8");
    require(tile_cols > 0 && tile_cols % 8 == 0, "AttnConfig: tile_cols must be a positive multiple of 8");
    require(head_dim % 4 == 0, "AttnConfig: head_dim must be a multiple of 4");
    require(seq_len % tile_rows == 0, "AttnConfig: seq_len must be a multiple of tile_rows");
    require(seq_len % tile_cols == 0, "AttnConfig: seq_len must be a multiple of tile_cols");
    require(dropout_p >= 0.0f && dropout_p < 1.0f, "AttnConfig: dropout_p must be in [0, 1)");
}

float AttnConfig::scale() const {
    return softmax_scale > 0.0f ? softmax_scale
                                : 1.0f / std::sqrt(static_cast<float>(head_dim));
}

namespace detail {

namespace {

// Multiply the accumulator rows by the softmax rescale factors. Binary16
// accumulators widen, multiply in binary32 and narrow back.
void rescale_acc(AccTile& o, const std::vector<float>& rescale) {
    for (int band = 0; band < o.bands(); ++band) {
        for (int j8 = 0; j8 < o.subcols(); ++j8) {
            WarpFragment& f = o.frag(band, j8 / 4);
            const int base = AccTile::group_of(j8) * WarpFragment::kGroupLanes;
            const LayoutDescriptor& d = f.desc();
            for (int lane = 0; lane < WarpFragment::kGroupLanes; ++lane) {
                for (int s = 0; s < d.slots(); ++s) {
                    const float r = rescale[band * 8 + d.cell(lane, s).row];
                    if (o.mode() == AccMode::FP16_ACC) {
                        const Half v = f.half_at(base + lane, s);
                        f.set_half(base + lane, s, f32_to_f16(f16_to_f32(v) * r));
                    } else {
                        f.set_f32(base + lane, s, f.f32_at(base + lane, s) * r);
                    }
                }
            }
        }
    }
}

// Dropout on the A-layout probability fragments (pipeline step after the
// layout transform): kept weights scale by 1/(1-p), dropped ones zero out.
// Every touched position contributes one digest term.
void apply_dropout(AFrags& p, const AttnConfig& cfg, int b, int h, int row0, int col0,
                   int subcols, uint64_t& digest) {
    const float inv_keep = 1.0f / (1.0f - cfg.dropout_p);
    const LayoutDescriptor adesc = LayoutDescriptor::defaults(FragmentRole::A);
    for (int band = 0; band < p.bands; ++band) {
        for (int chunk = 0; chunk < p.src_chunks; ++chunk) {
            for (int half = 0; half < 2; ++half) {
                WarpFragment& f = p.frags[(band * p.src_chunks + chunk) * 2 + half];
                for (int g = 0; g < WarpFragment::kGroups; ++g) {
                    const int j8 = chunk * 4 + g;
                    if (j8 >= subcols) break;
                    const int base = g * WarpFragment::kGroupLanes;
                    for (int lane = 0; lane < WarpFragment::kGroupLanes; ++lane) {
                        for (int s = 0; s < adesc.slots(); ++s) {
                            const CellRef cell = adesc.cell(lane, s);
                            const int row = row0 + band * 8 + cell.row;
                            const int col = col0 + j8 * 8 + half * 4 + cell.col;
                            const bool keep =
                                dropout_keep(cfg.seed, b, h, row, col, cfg.dropout_p);
                            digest += dropout_digest_term(cfg.seed, b, h, row, col, keep);
                            const Half v = f.half_at(base + lane, s);
                            f.set_half(base + lane, s,
                                       keep ? f32_to_f16(f16_to_f32(v) * inv_keep) : Half{});
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

ForwardUnit run_forward_unit(const Tensor<Half>& q, const Tensor<Half>& k, const Tensor<Half>& v,
                             const AttnConfig& cfg, int b, int h, int qt, ForwardTrace* trace) {
    const int n = cfg.seq_len, d = cfg.head_dim;
    const int br = cfg.tile_rows, bc = cfg.tile_cols;
    const int dp = pad8(d);
    const float scale = cfg.scale();
    const int row0 = qt * br;

    ForwardUnit u;
    const Matrix<Half> q_tile = load_rows(q, b, h, row0, br, u.tc);
    AccTile o_acc(br, dp, cfg.acc_mode);
    SoftmaxState state = softmax_state_init(br);

    Matrix<float> eff;  // trace only: effective weights so far
    if (trace) eff = Matrix<float>(br, n);

    for (int kt = 0; kt < n / bc; ++kt) {
        const int col0 = kt * bc;
        if (cfg.causal && col0 > row0 + br - 1) break;  // fully above the diagonal: no load, no MMA

        const Matrix<Half> k_tile = load_rows(k, b, h, col0, bc, u.tc);

        AccTile s_acc(br, bc, cfg.acc_mode);
        mma_accumulate(s_acc, q_tile, k_tile.transposed(), u.tc);

        Matrix<float> s_log = gather_tile(s_acc);
        if (cfg.acc_mode == AccMode::FP16_ACC)
            u.tc.convert_events += static_cast<uint64_t>(br) * bc;  // S widened for the f32 softmax
        for (int i = 0; i < br; ++i)
            for (int j = 0; j < bc; ++j) s_log.at(i, j) *= scale;
        if (cfg.causal && col0 + bc - 1 > row0) {
            for (int i = 0; i < br; ++i)
                for (int j = 0; j < bc; ++j)
                    if (col0 + j > row0 + i) s_log.at(i, j) = kNegInf;
        }

        SoftmaxBlockUpdate up = softmax_block_update(state, s_log);
        if (cfg.acc_mode == AccMode::FP32_ACC)
            u.tc.shuffle_events += 2ull * (br / 8);  // xor rounds for row max and row sum

        rescale_acc(o_acc, up.rescale);
        if (cfg.acc_mode == AccMode::FP16_ACC)
            u.tc.convert_events += 2ull * br * d;  // O widened, rescaled, narrowed back

        if (trace) {
            for (int i = 0; i < br; ++i) {
                for (int c = 0; c < n; ++c) eff.at(i, c) *= up.rescale[i];
                for (int j = 0; j < bc; ++j) eff.at(i, col0 + j) = up.weights.at(i, j);
                for (int j = 0; j < bc; ++j)
                    trace->scores.at(b, h, row0 + i, col0 + j) = s_log.at(i, j);
            }
        }

        scatter_tile(s_acc, up.weights);
        if (cfg.acc_mode == AccMode::FP16_ACC)
            u.tc.convert_events += static_cast<uint64_t>(br) * bc;  // P narrowed for the next MMA

        AFrags p_frags = transform_tile_to_a(s_acc);
        if (cfg.dropout_p > 0.0f)
            apply_dropout(p_frags, cfg, b, h, row0, col0, bc / 8, u.digest);

        const Matrix<Half> v_tile = load_rows(v, b, h, col0, bc, u.tc);
        mma_accumulate(o_acc, p_frags, pad_cols(v_tile, dp), u.tc);
    }

    const SoftmaxFinal fin = softmax_finalize(state);
    const Matrix<float> o_vals = gather_tile(o_acc);
    u.o_tile = Matrix<Half>(br, d);
    for (int i = 0; i < br; ++i)
        for (int j = 0; j < d; ++j) u.o_tile.at(i, j) = f32_to_f16(o_vals.at(i, j) * fin.inv_sum[i]);
    u.lse = fin.lse;

    if (trace) {
        for (int i = 0; i < br; ++i)
            for (int c = 0; c < n; ++c) trace->probs.at(b, h, row0 + i, c) = eff.at(i, c) * fin.inv_sum[i];
    }
    return u;
}

}  // namespace detail

ForwardOutput forward_fused(const Tensor<Half>& q, const Tensor<Half>& k, const Tensor<Half>& v,
                            const AttnConfig& cfg, ForwardTrace* trace) {
    cfg.validate();
    require_bhnd(q, cfg, "forward_fused: Q shape mismatch");
    require_bhnd(k, cfg, "forward_fused: K shape mismatch");
    require_bhnd(v, cfg, "forward_fused: V shape mismatch");

    const std::size_t nb = cfg.batch, nh = cfg.heads, n = cfg.seq_len, d = cfg.head_dim;
    ForwardOutput out;
    out.out = Tensor<Half>::bhnd(nb, nh, n, d);
    out.lse = Tensor<float>(std::vector<std::size_t>{nb, nh, n});
    out.traffic.matrix_pass_reads = 3;   // Q, K, V
    out.traffic.matrix_pass_writes = 1;  // O

    if (trace) {
        trace->probs = Tensor<float>::bhnd(nb, nh, n, n);
        trace->scores = Tensor<float>::bhnd(nb, nh, n, n);
        for (auto& s : trace->scores.values()) s = kNegInf;
    }

    // Units are independent; counters and digests are reduced afterwards, so
    // any schedule yields identical results.
    for (int b = 0; b < cfg.batch; ++b) {
        for (int h = 0; h < cfg.heads; ++h) {
            for (int qt = 0; qt < cfg.seq_len / cfg.tile_rows; ++qt) {
                detail::ForwardUnit u = detail::run_forward_unit(q, k, v, cfg, b, h, qt, trace);
                detail::store_rows(out.out, b, h, qt * cfg.tile_rows, u.o_tile, cfg.head_dim, u.tc);
                for (int i = 0; i < cfg.tile_rows; ++i)
                    out.lse.at(b, h, qt * cfg.tile_rows + i) = u.lse[i];
                u.tc.element_writes += cfg.tile_rows;  // lse rows
                out.traffic += u.tc;
                out.mask_digest += u.digest;
            }
        }
    }
    return out;
}

ForwardOutput forward_traditional(const Tensor<Half>& q, const Tensor<Half>& k,
                                  const Tensor<Half>& v, const AttnConfig& cfg) {
    cfg.validate();
    require_bhnd(q, cfg, "forward_traditional: Q shape mismatch");
    require_bhnd(k, cfg, "forward_traditional: K shape mismatch");
    require_bhnd(v, cfg, "forward_traditional: V shape mismatch");

    const int n = cfg.seq_len, d = cfg.head_dim;
    const int dp = detail::pad8(d);
    const float scale = cfg.scale();
    const float inv_keep = 1.0f / (1.0f - cfg.dropout_p);

    ForwardOutput out;
    out.out = Tensor<Half>::bhnd(cfg.batch, cfg.heads, n, d);
    out.lse = Tensor<float>(
        std::vector<std::size_t>{static_cast<std::size_t>(cfg.batch),
                                 static_cast<std::size_t>(cfg.heads), static_cast<std::size_t>(n)});
    out.traffic.matrix_pass_reads = 5;   // Q, K | S | P, V
    out.traffic.matrix_pass_writes = 3;  // S | P | O

    for (int b = 0; b < cfg.batch; ++b) {
        for (int h = 0; h < cfg.heads; ++h) {
            TrafficCounter tc;

            // Pass 1: S = QK^T, materialized to modeled HBM in the C dtype.
            const Matrix<Half> q_full = detail::load_rows(q, b, h, 0, n, tc);
            const Matrix<Half> k_full = detail::load_rows(k, b, h, 0, n, tc);
            detail::AccTile s_acc(n, n, cfg.acc_mode);
            detail::mma_accumulate(s_acc, q_full, k_full.transposed(), tc);
            tc.element_writes += static_cast<uint64_t>(n) * n;

            // Pass 2: full-row softmax on S read back from HBM, then dropout;
            // P and lse written out.
            tc.element_reads += static_cast<uint64_t>(n) * n;
            Matrix<float> s_log = detail::gather_tile(s_acc);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    s_log.at(i, j) *= scale;
                    if (cfg.causal && j > i) s_log.at(i, j) = kNegInf;
                }
            }
            Matrix<Half> p16(n, n);
            for (int i = 0; i < n; ++i) {
                float m = kNegInf;
                for (int j = 0; j < n; ++j) m = std::max(m, s_log.at(i, j));
                float l = 0.0f;
                std::vector<float> w(n);
                for (int j = 0; j < n; ++j) {
                    w[j] = s_log.at(i, j) == kNegInf ? 0.0f : std::exp(s_log.at(i, j) - m);
                    l += w[j];
                }
                if (!(l > 0.0f))
                    throw std::domain_error("forward_traditional: fully masked row");
                for (int j = 0; j < n; ++j) {
                    float pj = w[j] / l;
                    if (cfg.dropout_p > 0.0f) {
                        const bool keep = dropout_keep(cfg.seed, b, h, i, j, cfg.dropout_p);
                        out.mask_digest += dropout_digest_term(cfg.seed, b, h, i, j, keep);
                        pj = keep ? pj * inv_keep : 0.0f;
                    }
                    p16.at(i, j) = f32_to_f16(pj);
                }
                out.lse.at(b, h, i) = m + std::log(l);
            }
            tc.element_writes += static_cast<uint64_t>(n) * n + n;  // P, lse

            // Pass 3: O = PV.
            tc.element_reads += static_cast<uint64_t>(n) * n;  // P read back
            const Matrix<Half> v_full = detail::load_rows(v, b, h, 0, n, tc);
            detail::AccTile o_acc(n, dp, cfg.acc_mode);
            detail::mma_accumulate(o_acc, p16, detail::pad_cols(v_full, dp), tc);
            const Matrix<float> o_vals = detail::gather_tile(o_acc);
            Matrix<Half> o16(n, d);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) o16.at(i, j) = f32_to_f16(o_vals.at(i, j));
            detail::store_rows(out.out, b, h, 0, o16, d, tc);

            out.traffic += tc;
        }
    }
    return out;
}

}  // namespace vattn
