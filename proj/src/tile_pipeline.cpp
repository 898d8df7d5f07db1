#include "tile_pipeline.hpp"

#include <stdexcept>

namespace vattn::detail {

AccTile::AccTile(int rows, int cols, AccMode mode) : rows_(rows), cols_(cols), mode_(mode) {
    if (rows % 8 || cols % 8) throw std::invalid_argument("AccTile: dims must be multiples of 8");
    const LayoutDescriptor desc = LayoutDescriptor::defaults(
        mode == AccMode::FP16_ACC ? FragmentRole::C_FP16 : FragmentRole::C_FP32);
    frags_.assign(static_cast<std::size_t>(bands()) * chunks(), WarpFragment(desc));
}

namespace {

Matrix<Half> subtile_a(const Matrix<Half>& a, int band, int k4) {
    Matrix<Half> m(8, 4);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 4; ++c) m.at(r, c) = a.at(band * 8 + r, k4 * 4 + c);
    return m;
}

Matrix<Half> subtile_b(const Matrix<Half>& b, int k4, int j8) {
    Matrix<Half> m(4, 8);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 8; ++c) m.at(r, c) = b.at(k4 * 4 + r, j8 * 8 + c);
    return m;
}

// Shared instruction loop: `get_a` supplies the broadcast A fragment for
// (band, k4).
template <typename GetA>
void mma_accumulate_impl(AccTile& c, int kdim, GetA&& get_a, const Matrix<Half>& b,
                         TrafficCounter& tc) {
    const LayoutDescriptor bdesc = LayoutDescriptor::defaults(FragmentRole::B);
    for (int k4 = 0; k4 < kdim / 4; ++k4) {
        for (int band = 0; band < c.bands(); ++band) {
            const WarpFragment afrag = get_a(band, k4);
            for (int chunk = 0; chunk < c.chunks(); ++chunk) {
                WarpFragment bfrag(bdesc);
                for (int g = 0; g < WarpFragment::kGroups; ++g) {
                    const int j8 = chunk * 4 + g;
                    if (j8 >= c.subcols()) break;  // inactive groups stay zero
                    distribute(bfrag, g, subtile_b(b, k4, j8));
                }
                c.frag(band, chunk) = mma_m8n8k4(afrag, bfrag, c.frag(band, chunk), c.mode());
                ++tc.mma_invocations;
            }
        }
    }
}

}  // namespace

void mma_accumulate(AccTile& c, const Matrix<Half>& a, const Matrix<Half>& b, TrafficCounter& tc) {
    if (a.rows() != c.rows() || a.cols() != b.rows() || b.cols() != c.cols())
        throw std::invalid_argument("mma_accumulate: tile shape mismatch");
    if (a.cols() % 4) throw std::invalid_argument("mma_accumulate: k must be a multiple of 4");
    const LayoutDescriptor adesc = LayoutDescriptor::defaults(FragmentRole::A);
    mma_accumulate_impl(
        c, a.cols(),
        [&](int band, int k4) {
            WarpFragment afrag(adesc);
            const Matrix<Half> sub = subtile_a(a, band, k4);
            for (int g = 0; g < WarpFragment::kGroups; ++g) distribute(afrag, g, sub);
            return afrag;
        },
        b, tc);
}

void mma_accumulate(AccTile& c, const AFrags& a, const Matrix<Half>& b, TrafficCounter& tc) {
    if (a.bands != c.bands() || a.k4count * 4 != b.rows() || b.cols() != c.cols())
        throw std::invalid_argument("mma_accumulate: fragment operand shape mismatch");
    mma_accumulate_impl(
        c, b.rows(),
        [&](int band, int k4) { return broadcast_group(a.frag_for(band, k4), AFrags::group_for(k4)); },
        b, tc);
}

AFrags transform_tile_to_a(const AccTile& c) {
    AFrags out;
    out.bands = c.bands();
    out.k4count = c.cols() / 4;
    out.src_chunks = c.chunks();
    out.frags.reserve(static_cast<std::size_t>(out.bands) * out.src_chunks * 2);
    for (int band = 0; band < c.bands(); ++band) {
        for (int chunk = 0; chunk < c.chunks(); ++chunk) {
            const auto pair = c.mode() == AccMode::FP16_ACC
                                  ? transform_c16_to_a(c.frag(band, chunk))
                                  : transform_c32_to_a(c.frag(band, chunk));
            out.frags.push_back(pair[0]);
            out.frags.push_back(pair[1]);
        }
    }
    return out;
}

Matrix<float> gather_tile(const AccTile& c) {
    Matrix<float> out(c.rows(), c.cols());
    for (int band = 0; band < c.bands(); ++band) {
        for (int j8 = 0; j8 < c.subcols(); ++j8) {
            const WarpFragment& f = c.frag(band, j8 / 4);
            const int g = AccTile::group_of(j8);
            if (c.mode() == AccMode::FP16_ACC) {
                const Matrix<Half> m = gather_h(f, g);
                for (int r = 0; r < 8; ++r)
                    for (int cc = 0; cc < 8; ++cc)
                        out.at(band * 8 + r, j8 * 8 + cc) = f16_to_f32(m.at(r, cc));
            } else {
                const Matrix<float> m = gather_f(f, g);
                for (int r = 0; r < 8; ++r)
                    for (int cc = 0; cc < 8; ++cc) out.at(band * 8 + r, j8 * 8 + cc) = m.at(r, cc);
            }
        }
    }
    return out;
}

void scatter_tile(AccTile& c, const Matrix<float>& vals) {
    if (vals.rows() != c.rows() || vals.cols() != c.cols())
        throw std::invalid_argument("scatter_tile: shape mismatch");
    for (int band = 0; band < c.bands(); ++band) {
        for (int j8 = 0; j8 < c.subcols(); ++j8) {
            WarpFragment& f = c.frag(band, j8 / 4);
            const int g = AccTile::group_of(j8);
            if (c.mode() == AccMode::FP16_ACC) {
                Matrix<Half> m(8, 8);
                for (int r = 0; r < 8; ++r)
                    for (int cc = 0; cc < 8; ++cc)
                        m.at(r, cc) = f32_to_f16(vals.at(band * 8 + r, j8 * 8 + cc));
                distribute(f, g, m);
            } else {
                Matrix<float> m(8, 8);
                for (int r = 0; r < 8; ++r)
                    for (int cc = 0; cc < 8; ++cc) m.at(r, cc) = vals.at(band * 8 + r, j8 * 8 + cc);
                distribute(f, g, m);
            }
        }
    }
}

Matrix<Half> gather_tile_h(const AccTile& c) {
    if (c.mode() != AccMode::FP16_ACC)
        throw std::invalid_argument("gather_tile_h: tile is not binary16");
    Matrix<Half> out(c.rows(), c.cols());
    for (int band = 0; band < c.bands(); ++band) {
        for (int j8 = 0; j8 < c.subcols(); ++j8) {
            const Matrix<Half> m = gather_h(c.frag(band, j8 / 4), AccTile::group_of(j8));
            for (int r = 0; r < 8; ++r)
                for (int cc = 0; cc < 8; ++cc) out.at(band * 8 + r, j8 * 8 + cc) = m.at(r, cc);
        }
    }
    return out;
}

Matrix<Half> load_rows(const Tensor<Half>& t, int b, int h, int r0, int rows, TrafficCounter& tc) {
    const int cols = static_cast<int>(t.dims()[3]);
    Matrix<Half> m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m.at(r, c) = t.at(b, h, r0 + r, c);
    tc.element_reads += static_cast<uint64_t>(rows) * cols;
    return m;
}

void store_rows(Tensor<Half>& t, int b, int h, int r0, const Matrix<Half>& m, int cols,
                TrafficCounter& tc) {
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < cols; ++c) t.at(b, h, r0 + r, c) = m.at(r, c);
    tc.element_writes += static_cast<uint64_t>(m.rows()) * cols;
}

Matrix<Half> pad_cols(const Matrix<Half>& m, int cols) {
    if (cols == m.cols()) return m;
    Matrix<Half> out(m.rows(), cols);
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) out.at(r, c) = m.at(r, c);
    return out;
}

WarpFragment broadcast_group(const WarpFragment& src, int group) {
    WarpFragment out(src.desc());
    const int base = group * WarpFragment::kGroupLanes;
    for (int g = 0; g < WarpFragment::kGroups; ++g) {
        for (int lane = 0; lane < WarpFragment::kGroupLanes; ++lane) {
            for (int s = 0; s < src.desc().slots(); ++s) {
                out.set_raw(g * WarpFragment::kGroupLanes + lane, s, src.raw(base + lane, s));
            }
        }
    }
    return out;
}

}  // namespace vattn::detail
