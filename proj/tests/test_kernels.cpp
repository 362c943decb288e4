#include <random>

#include "doctest.h"
#include "dwclust/kernels.hpp"
#include "dwclust/rotation.hpp"
#include "helpers.hpp"

using namespace dwclust;
using kernels::Exec;

namespace {

Matrix random_soft(Index n, Index j, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> e(1.0);
    Matrix a(n, j);
    for (Index r = 0; r < n; ++r) {
        for (Index c = 0; c < j; ++c) a(r, c) = e(rng);
        a.row(r) /= a.row(r).sum();
    }
    return a;
}

}  // namespace

TEST_CASE("rotate_all: parallel equals serial bit for bit") {
    std::mt19937_64 rng(3);
    const Matrix x = helpers::gaussian_matrix(5000, 4, 1, 10.0);
    std::vector<Matrix> rots;
    for (int i = 0; i < 3; ++i) rots.push_back(random_orthonormal(4, rng));
    const auto s = kernels::rotate_all(x, rots, Exec::serial);
    const auto p = kernels::rotate_all(x, rots, Exec::parallel);
    REQUIRE(s.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(s[i] == p[i]);
        CHECK((s[i] - x * rots[i].transpose()).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("moment_stats: parallel equals serial and the direct formula") {
    const Matrix x = helpers::gaussian_matrix(3000, 3, 2, 5.0);
    const Matrix a = random_soft(3000, 4, 8);
    const MomentStats s = kernels::moment_stats(x, a, Exec::serial);
    const MomentStats p = kernels::moment_stats(x, a, Exec::parallel);
    CHECK(s.mass == p.mass);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(s.first[i] == p.first[i]);
        CHECK(s.second[i] == p.second[i]);
        const Index col = static_cast<Index>(i);
        const Matrix direct = x.transpose() * a.col(col).asDiagonal() * x;
        CHECK((s.second[i] - direct).norm() < 1e-8 * direct.norm());
        CHECK((s.first[i] - x.transpose() * a.col(col)).norm() < 1e-9 * (1.0 + s.first[i].norm()));
    }
}

TEST_CASE("enumerate_labelings: parallel equals serial") {
    const Matrix x = helpers::gaussian_matrix(11, 2, 4);
    RegularizationConfig reg;
    reg.sigma_n_sq = 0.1;
    const auto s = kernels::enumerate_labelings(x, 2, reg, std::nullopt, Exec::serial);
    const auto p = kernels::enumerate_labelings(x, 2, reg, std::nullopt, Exec::parallel);
    CHECK(s.labels == p.labels);
    CHECK(s.objective == p.objective);
    CHECK(s.evaluated == 2048);
    const auto sc = kernels::enumerate_labelings(x, 2, reg, std::vector<Index>{5, 6}, Exec::serial);
    const auto pc = kernels::enumerate_labelings(x, 2, reg, std::vector<Index>{5, 6}, Exec::parallel);
    CHECK(sc.labels == pc.labels);
    CHECK(sc.objective == pc.objective);
    CHECK(sc.evaluated == 462);  // C(11, 5)
    CHECK(sc.objective >= s.objective);
}
