#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "vattn/online_softmax.hpp"
#include "vattn/rng.hpp"

using namespace vattn;

namespace {

constexpr float kInf = std::numeric_limits<float>::infinity();

Matrix<float> row_block(const std::vector<float>& vals) {
    Matrix<float> m(1, static_cast<int>(vals.size()));
    for (std::size_t j = 0; j < vals.size(); ++j) m.at(0, static_cast<int>(j)) = vals[j];
    return m;
}

// Single-pass binary64 softmax statistics.
struct RefStats {
    double m, l;
};
RefStats ref_stats(const std::vector<float>& vals) {
    double m = -std::numeric_limits<double>::infinity();
    for (float v : vals) m = std::max(m, static_cast<double>(v));
    double l = 0.0;
    for (float v : vals) l += std::exp(static_cast<double>(v) - m);
    return {m, l};
}

std::vector<float> random_row(uint64_t seed, int n, float lo, float hi) {
    std::vector<float> r(n);
    for (int j = 0; j < n; ++j)
        r[j] = lo + static_cast<float>(bits_to_unit(mix64(hash_combine(seed, j)))) * (hi - lo);
    return r;
}

}  // namespace

TEST_CASE("state init and the fresh-state identity") {
    const SoftmaxState s = softmax_state_init(8);
    CHECK(s.rows() == 8);
    for (int i = 0; i < 8; ++i) {
        CHECK(s.row_max[i] == -kInf);
        CHECK(s.row_sum[i] == 0.0f);
    }
    CHECK_THROWS_AS(softmax_state_init(0), std::invalid_argument);

    SoftmaxState populated = softmax_state_init(1);
    softmax_block_update(populated, row_block({0.5f, -1.0f}));
    const SoftmaxState merged = softmax_merge(populated, softmax_state_init(1));
    CHECK(merged.row_max[0] == populated.row_max[0]);
    CHECK(merged.row_sum[0] == populated.row_sum[0]);
}

TEST_CASE("single-element and two-element block examples") {
    SoftmaxState s = softmax_state_init(1);
    const SoftmaxBlockUpdate up = softmax_block_update(s, row_block({0.0f}));
    CHECK(s.row_max[0] == 0.0f);
    CHECK(s.row_sum[0] == 1.0f);
    CHECK(up.weights.at(0, 0) == 1.0f);
    CHECK(up.rescale[0] == 1.0f);  // fresh row: applied to nothing

    SoftmaxState s2 = softmax_state_init(1);
    const float ln3 = std::log(3.0f);
    const SoftmaxBlockUpdate up2 = softmax_block_update(s2, row_block({0.0f, ln3}));
    CHECK(s2.row_max[0] == ln3);
    CHECK(s2.row_sum[0] == doctest::Approx(4.0f / 3.0f).epsilon(1e-6));
    CHECK(up2.weights.at(0, 0) == doctest::Approx(1.0f / 3.0f).epsilon(1e-6));
    CHECK(up2.weights.at(0, 1) == 1.0f);
}

TEST_CASE("sequential blocks equal one concatenated block") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        const std::vector<float> row = random_row(seed, 24, -20.0f, 20.0f);

        SoftmaxState split = softmax_state_init(1);
        std::vector<float> chain;  // rescale chain product per block
        for (int b = 0; b < 3; ++b) {
            const std::vector<float> blk(row.begin() + b * 8, row.begin() + (b + 1) * 8);
            const SoftmaxBlockUpdate up = softmax_block_update(split, row_block(blk));
            chain.push_back(up.rescale[0]);
        }
        SoftmaxState whole = softmax_state_init(1);
        softmax_block_update(whole, row_block(row));

        CHECK(split.row_max[0] == whole.row_max[0]);
        CHECK(split.row_sum[0] ==
              doctest::Approx(whole.row_sum[0]).epsilon(1e-6));
        // Chain product consistency: the total rescale equals
        // e^{m_first_blocks - m_final}.
        const RefStats first = ref_stats({row.begin(), row.begin() + 8});
        const double total = chain[1] * chain[2];
        CHECK(total == doctest::Approx(std::exp(first.m - whole.row_max[0])).epsilon(1e-5));
    }
}

TEST_CASE("merge equals single-pass statistics over the concatenation") {
    for (uint64_t seed = 1; seed <= 50; ++seed) {
        const std::vector<float> x1 = random_row(seed * 2, 16, -20.0f, 20.0f);
        const std::vector<float> x2 = random_row(seed * 2 + 1, 16, -20.0f, 20.0f);

        SoftmaxState a = softmax_state_init(1), b = softmax_state_init(1);
        softmax_block_update(a, row_block(x1));
        softmax_block_update(b, row_block(x2));
        const SoftmaxState ab = softmax_merge(a, b);
        const SoftmaxState ba = softmax_merge(b, a);

        std::vector<float> all = x1;
        all.insert(all.end(), x2.begin(), x2.end());
        const RefStats want = ref_stats(all);

        CHECK(ab.row_max[0] == static_cast<float>(want.m));
        CHECK(ab.row_sum[0] == doctest::Approx(want.l).epsilon(1e-6));
        // Commutativity.
        CHECK(ab.row_max[0] == ba.row_max[0]);
        CHECK(ab.row_sum[0] == doctest::Approx(ba.row_sum[0]).epsilon(1e-7));
    }
}

TEST_CASE("finalize examples and normalization") {
    SoftmaxState s = softmax_state_init(1);
    softmax_block_update(s, row_block({1.75f}));
    const SoftmaxFinal f = softmax_finalize(s);
    CHECK(f.inv_sum[0] == 1.0f);
    CHECK(f.lse[0] == 1.75f);

    SoftmaxState s4 = softmax_state_init(1);
    softmax_block_update(s4, row_block({0.0f, 0.0f, 0.0f, 0.0f}));
    const SoftmaxFinal f4 = softmax_finalize(s4);
    CHECK(f4.inv_sum[0] == 0.25f);
    CHECK(f4.lse[0] == doctest::Approx(std::log(4.0f)).epsilon(1e-7));

    // Random row: exp(s_ij - lse) sums to 1 within a few binary32 ulp.
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        const std::vector<float> row = random_row(seed, 32, -10.0f, 10.0f);
        SoftmaxState sr = softmax_state_init(1);
        softmax_block_update(sr, row_block(row));
        const SoftmaxFinal fr = softmax_finalize(sr);
        float sum = 0.0f;
        for (float v : row) sum += std::exp(v - fr.lse[0]);
        CHECK(sum == doctest::Approx(1.0f).epsilon(4e-7));
    }
}

TEST_CASE("shift invariance") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        const std::vector<float> row = random_row(seed, 16, -10.0f, 10.0f);
        const float c = 3.25f;  // exactly representable shift
        std::vector<float> shifted = row;
        for (float& v : shifted) v += c;

        SoftmaxState s0 = softmax_state_init(1), s1 = softmax_state_init(1);
        const SoftmaxBlockUpdate u0 = softmax_block_update(s0, row_block(row));
        const SoftmaxBlockUpdate u1 = softmax_block_update(s1, row_block(shifted));
        const SoftmaxFinal f0 = softmax_finalize(s0);
        const SoftmaxFinal f1 = softmax_finalize(s1);

        CHECK(f1.lse[0] == doctest::Approx(f0.lse[0] + c).epsilon(1e-6));
        for (int j = 0; j < 16; ++j) {
            const float p0 = u0.weights.at(0, j) * f0.inv_sum[0];
            const float p1 = u1.weights.at(0, j) * f1.inv_sum[0];
            CHECK(p1 == doctest::Approx(p0).epsilon(1e-6));
        }
    }
}

TEST_CASE("row sum stays >= 1 once a finite element has been processed") {
    // The running max contributes exp(0) = 1 when it arrives, and later
    // blocks rescale by at most 1 while adding nonnegative weight.
    for (uint64_t seed = 1; seed <= 30; ++seed) {
        SoftmaxState s = softmax_state_init(1);
        for (int b = 0; b < 4; ++b) {
            softmax_block_update(s, row_block(random_row(hash_combine(seed, b), 8, -30.0f, 30.0f)));
            CHECK(s.row_sum[0] >= 1.0f);
        }
    }
}

TEST_CASE("no overflow for inputs up to 88") {
    SoftmaxState s = softmax_state_init(1);
    const SoftmaxBlockUpdate up = softmax_block_update(s, row_block({88.0f, 87.0f, 10.0f}));
    for (int j = 0; j < 3; ++j) CHECK(std::isfinite(up.weights.at(0, j)));
    CHECK(std::isfinite(softmax_finalize(s).lse[0]));
}

TEST_CASE("masked entries, fully masked rows and NaN handling") {
    // -inf entries contribute nothing.
    SoftmaxState s = softmax_state_init(1);
    softmax_block_update(s, row_block({-kInf, 0.0f, -kInf}));
    CHECK(s.row_sum[0] == 1.0f);

    // An all-masked block on a fresh state leaves it fresh and rescales by 1.
    SoftmaxState s2 = softmax_state_init(1);
    const SoftmaxBlockUpdate up = softmax_block_update(s2, row_block({-kInf, -kInf}));
    CHECK(up.rescale[0] == 1.0f);
    CHECK(up.weights.at(0, 0) == 0.0f);
    CHECK(s2.row_max[0] == -kInf);

    // An all-masked block after data keeps the state and rescales by 1.
    SoftmaxState s3 = softmax_state_init(1);
    softmax_block_update(s3, row_block({2.0f}));
    const SoftmaxBlockUpdate up3 = softmax_block_update(s3, row_block({-kInf}));
    CHECK(up3.rescale[0] == 1.0f);
    CHECK(s3.row_sum[0] == 1.0f);

    // Fully masked row at finalize is a hard error.
    CHECK_THROWS_AS(softmax_finalize(s2), std::domain_error);

    // NaN scores are rejected.
    SoftmaxState s4 = softmax_state_init(1);
    CHECK_THROWS_AS(softmax_block_update(s4, row_block({std::nanf("")})), std::domain_error);

    // Row-count mismatches are rejected.
    SoftmaxState s5 = softmax_state_init(2);
    CHECK_THROWS_AS(softmax_block_update(s5, row_block({0.0f})), std::invalid_argument);
    CHECK_THROWS_AS(softmax_merge(s5, softmax_state_init(3)), std::invalid_argument);
}

TEST_CASE("split invariance across random partitions vs binary64 softmax") {
    for (uint64_t seed = 1; seed <= 40; ++seed) {
        const int n = 64;
        const std::vector<float> row = random_row(seed, n, -20.0f, 20.0f);
        const int parts = 2 + static_cast<int>(bits_to_unit(mix64(seed)) * 7);  // 2..8

        // Random contiguous partition.
        std::vector<int> cuts{0, n};
        for (int p = 1; p < parts; ++p)
            cuts.push_back(1 + static_cast<int>(bits_to_unit(mix64(hash_combine(seed, p))) * (n - 1)));
        std::sort(cuts.begin(), cuts.end());

        SoftmaxState s = softmax_state_init(1);
        for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
            if (cuts[c] == cuts[c + 1]) continue;
            const std::vector<float> blk(row.begin() + cuts[c], row.begin() + cuts[c + 1]);
            softmax_block_update(s, row_block(blk));
        }
        const SoftmaxFinal f = softmax_finalize(s);
        const RefStats want = ref_stats(row);
        const double lse_ref = want.m + std::log(want.l);
        CHECK(std::abs(f.lse[0] - lse_ref) / std::abs(lse_ref) <= 1e-6);
        for (int j = 0; j < n; j += 7) {
            const double p_ref = std::exp(row[j] - lse_ref);
            const double p_got = std::exp(row[j] - static_cast<double>(f.lse[0]));
            CHECK(std::abs(p_got - p_ref) <= 1e-6 * std::max(p_ref, 1e-12));
        }
    }
}
