#include <doctest.h>

#include <cmath>
#include <vector>

#include "lcomp/lowrank.hpp"
#include "lcomp/rng.hpp"

using namespace lcomp;

namespace {

LoraAdapter make_adapter(const Tensor& b, const Tensor& a, float w) {
    LoraAdapter ad;
    ad.name = "t";
    ad.rank = b.cols();
    ad.weight_scale = w;
    ad.deltas["hook"] = {b, a};
    return ad;
}

// Row-reduction rank estimate with tolerance; independent of delta_matrix.
size_t numeric_rank(Tensor m, double tol) {
    const size_t rows = m.rows(), cols = m.cols();
    std::vector<std::vector<double>> a(rows, std::vector<double>(cols));
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < cols; ++j) a[i][j] = m.at(i, j);
    double scale = 0.0;
    for (const auto& row : a)
        for (double v : row) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) return 0;
    size_t rank = 0;
    for (size_t col = 0; col < cols && rank < rows; ++col) {
        size_t pivot = rank;
        for (size_t r = rank + 1; r < rows; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        if (std::abs(a[pivot][col]) < tol * scale * static_cast<double>(std::max(rows, cols)))
            continue;
        std::swap(a[pivot], a[rank]);
        for (size_t r = 0; r < rows; ++r) {
            if (r == rank) continue;
            const double f = a[r][col] / a[rank][col];
            for (size_t j = col; j < cols; ++j) a[r][j] -= f * a[rank][j];
        }
        ++rank;
    }
    return rank;
}

}  // namespace

TEST_CASE("delta_matrix zero factor") {
    Rng rng(1);
    const auto ad = make_adapter(Tensor::zeros({3, 2}), Tensor::gaussian({2, 4}, rng), 0.8f);
    for (float v : delta_matrix(ad, "hook").data) CHECK(v == 0.0f);
}

TEST_CASE("delta_matrix hand values") {
    const auto ad = make_adapter(Tensor({2, 1}, {1, 2}), Tensor({1, 2}, {3, 4}), 1.0f);
    CHECK(delta_matrix(ad, "hook").data == std::vector<float>{3, 4, 6, 8});
    CHECK(delta_matrix(ad, "hook", 0.5f).data == std::vector<float>{1.5f, 2, 3, 4});
}

TEST_CASE("delta_matrix unknown hook throws") {
    const auto ad = make_adapter(Tensor({2, 1}, {1, 2}), Tensor({1, 2}, {3, 4}), 1.0f);
    CHECK_THROWS_AS(delta_matrix(ad, "nope"), DomainError);
}

TEST_CASE("merge_weights empty list returns base") {
    Rng rng(2);
    const Tensor base = Tensor::gaussian({3, 3}, rng);
    CHECK(merge_weights(base, {}, "hook").data == base.data);
}

TEST_CASE("merge_weights single adapter equals base + delta") {
    Rng rng(3);
    const Tensor base = Tensor::gaussian({4, 5}, rng);
    const auto ad = make_adapter(Tensor::gaussian({4, 2}, rng), Tensor::gaussian({2, 5}, rng), 0.8f);
    const Tensor merged = merge_weights(base, {ad}, "hook");
    const Tensor delta = delta_matrix(ad, "hook");
    for (size_t i = 0; i < merged.data.size(); ++i)
        CHECK(merged.data[i] == base.data[i] + delta.data[i]);
}

TEST_CASE("merge_weights order-insensitive within 1e-6") {
    Rng rng(4);
    const Tensor base = Tensor::gaussian({4, 5}, rng);
    const auto a1 = make_adapter(Tensor::gaussian({4, 2}, rng), Tensor::gaussian({2, 5}, rng), 0.8f);
    const auto a2 = make_adapter(Tensor::gaussian({4, 3}, rng), Tensor::gaussian({3, 5}, rng), 0.5f);
    const Tensor m12 = merge_weights(base, {a1, a2}, "hook");
    const Tensor m21 = merge_weights(base, {a2, a1}, "hook");
    for (size_t i = 0; i < m12.data.size(); ++i)
        CHECK(std::abs(m12.data[i] - m21.data[i]) <= 1e-6f);
}

TEST_CASE("delta rank bounded by r") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const size_t r = 1 + trial % 3;
        const auto ad =
            make_adapter(Tensor::gaussian({6, r}, rng), Tensor::gaussian({r, 8}, rng), 1.0f);
        CHECK(numeric_rank(delta_matrix(ad, "hook"), 1e-6) <= r);
    }
}

TEST_CASE("merge is linear in weight_scale") {
    Rng rng(6);
    const Tensor base = Tensor::gaussian({5, 5}, rng);
    auto ad = make_adapter(Tensor::gaussian({5, 2}, rng), Tensor::gaussian({2, 5}, rng), 0.8f);
    auto ad2 = ad;
    ad2.weight_scale = 0.3f;
    const Tensor d1 = merge_weights(base, {ad}, "hook");
    const Tensor d2 = merge_weights(base, {ad2}, "hook");
    const double ratio = 0.8 / 0.3;
    for (size_t i = 0; i < base.data.size(); ++i) {
        const double lhs = d1.data[i] - base.data[i];
        const double rhs = ratio * (d2.data[i] - base.data[i]);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
    }
}

TEST_CASE("adapter invariant validation") {
    auto ad = make_adapter(Tensor({2, 1}, {1, 2}), Tensor({1, 2}, {3, 4}), 1.0f);
    ad.rank = 3;  // inconsistent with factor shapes
    CHECK_THROWS_AS(ad.validate(), ValidationError);
    ad.rank = 1;
    ad.weight_scale = -0.1f;
    CHECK_THROWS_AS(ad.validate(), ValidationError);
}
