#include <cmath>
#include <random>

#include "doctest.h"
#include "dwclust/local_solver.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace dwclust;

namespace {

RotationSet identity_rotations(Index j, Index d) {
    RotationSet rs;
    rs.rotations.assign(static_cast<std::size_t>(j), Matrix::Identity(d, d));
    rs.rotated_variances = Matrix::Ones(j, d);
    return rs;
}

SolveParams plain_params(Index j, Index d, Index n_total, Index k = 1) {
    SolveParams p;
    p.rotations = identity_rotations(j, d);
    p.beta.beta = Matrix::Ones(j, d);
    p.proportions_target = Vector::Constant(j, 1.0 / static_cast<double>(j));
    p.duals = DualVariables(j, k, d);
    p.n_total = n_total;
    return p;
}

}  // namespace

TEST_CASE("transform_shard rotates rows and records the box") {
    Matrix x(1, 2);
    x << 3, 5;
    RotationSet rs = identity_rotations(1, 2);
    CHECK(transform_shard(x, rs).rotated[0].isApprox(x));

    rs.rotations[0] << 0, 1, 1, 0;
    const RotatedShard swapped = transform_shard(x, rs);
    CHECK(swapped.rotated[0](0, 0) == 5.0);
    CHECK(swapped.rotated[0](0, 1) == 3.0);
    CHECK(swapped.box.lo(0, 0) == 5.0);
    CHECK(swapped.box.hi(0, 1) == 3.0);

    // eigenbasis of [[2,1],[1,2]] applied to (1,1) -> (sqrt 2, 0)
    const double h = 1.0 / std::sqrt(2.0);
    rs.rotations[0] << h, h, h, -h;
    Matrix ones(1, 2);
    ones << 1, 1;
    const RotatedShard r = transform_shard(ones, rs);
    CHECK(r.rotated[0](0, 0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
    CHECK(std::abs(r.rotated[0](0, 1)) < 1e-15);
}

TEST_CASE("assignment_costs") {
    SolveParams p = plain_params(1, 1, 1);
    Matrix row(1, 1), mu(1, 1);
    row << 2.0;
    mu << 2.0;
    CHECK(assignment_costs(row, p, mu, 0)(0) == 0.0);
    mu << 0.0;
    CHECK(assignment_costs(row, p, mu, 0)(0) == 4.0);

    SolveParams q = plain_params(2, 1, 4);
    q.duals.p()(0) = 1e6;
    Matrix row2(2, 1), mu2 = Matrix::Zero(2, 1);
    row2 << 0.0, 0.0;
    const Vector c = assignment_costs(row2, q, mu2, 0);
    CHECK(c(0) == doctest::Approx(1e6 / 4));
    CHECK(c(1) == 0.0);
}

TEST_CASE("single cluster without multipliers is least squares") {
    Matrix x(4, 1);
    x << 1, 2, 4, 9;
    SolveParams p = plain_params(1, 1, 4);
    const RotatedShard cache = transform_shard(x, p.rotations);
    const LocalSolveResult r = solve_local(cache, p, 0, Matrix::Ones(4, 1));
    CHECK(r.mu_hat(0, 0) == doctest::Approx(4.0));
    CHECK(r.local_assignments.isApprox(Matrix::Ones(4, 1)));
    CHECK(r.f_star == doctest::Approx((9 + 4 + 0 + 25) / 4.0));

    const LocalDualTerms t = local_dual_terms(r, p);
    CHECK(std::abs(t.g_mu(0, 0)) < 1e-12);
    CHECK(t.g_mass(0) == doctest::Approx(1.0));
}

TEST_CASE("two separated groups split along the gap") {
    Matrix x(6, 1);
    x << -10, -9, -11, 20, 21, 19;
    SolveParams p = plain_params(2, 1, 6);
    const RotatedShard cache = transform_shard(x, p.rotations);
    Matrix warm = Matrix::Zero(6, 2);
    for (int n = 0; n < 3; ++n) warm(n, 0) = 1;
    for (int n = 3; n < 6; ++n) warm(n, 1) = 1;
    const LocalSolveResult r = solve_local(cache, p, 0, warm);
    CHECK(r.local_assignments.isApprox(warm));
    CHECK(r.f_star == doctest::Approx((2.0 + 2.0) / 6.0));
    CHECK(r.max_ascent <= 1e-12);

    const double brute = oracle::host_vertex_minimum(cache.rotated, p, 0, cache.box);
    CHECK(r.f_star == doctest::Approx(brute).epsilon(1e-12));
}

TEST_CASE("a heavy proportion multiplier empties its cluster") {
    Matrix x(5, 2);
    x << 0, 0, 1, 2, -3, 1, 4, 4, 2, -2;
    SolveParams p = plain_params(2, 2, 5);
    p.duals.p()(0) = 1e6;
    const RotatedShard cache = transform_shard(x, p.rotations);
    const LocalSolveResult r = solve_local(cache, p, 0, Matrix::Constant(5, 2, 0.5));
    CHECK(r.local_assignments.col(1).sum() == 5.0);
    CHECK(r.cluster_mass(0) == 0.0);
    // empty cluster with zero mean multiplier sits at the box midpoint
    CHECK(r.mu_hat(0, 0) == doctest::Approx(0.5 * (cache.box.lo(0, 0) + cache.box.hi(0, 0))));
}

TEST_CASE("local_dual_terms on a hand-built instance") {
    Matrix x(3, 1);
    x << 1, 2, 6;
    SolveParams p = plain_params(2, 1, 3);
    LocalSolveResult r;
    r.local_assignments = Matrix(3, 2);
    r.local_assignments << 1, 0, 1, 0, 0, 1;
    r.mu_hat = Matrix(2, 1);
    r.mu_hat << 1.25, 5.0;
    r.cluster_mass = r.local_assignments.colwise().sum().transpose();
    r.rotated_first_moment = Matrix(2, 1);
    r.rotated_first_moment << 3.0, 6.0;
    const LocalDualTerms t = local_dual_terms(r, p);
    // residual = mu_hat - sum a y / (p N), p N = 1.5
    CHECK(t.g_mu(0, 0) == doctest::Approx(1.25 - 3.0 / 1.5));
    CHECK(t.g_mu(1, 0) == doctest::Approx(5.0 - 6.0 / 1.5));
    CHECK(t.g_mass(0) == doctest::Approx(2.0 / 3.0));
    CHECK(t.g_mass(1) == doctest::Approx(1.0 / 3.0));

    LocalSolveResult all_first = r;
    all_first.cluster_mass << 3.0, 0.0;
    const LocalDualTerms u = local_dual_terms(all_first, p);
    CHECK(u.g_mass(0) == doctest::Approx(1.0));
    CHECK(u.g_mass(1) == 0.0);
}

TEST_CASE("solve_local matches vertex enumeration on micro instances") {
    std::mt19937_64 rng(20240611);
    int worst = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const helpers::MicroInstance inst = helpers::random_micro(rng);
        const LocalSolveResult r = solve_local(inst.cache, inst.params, inst.host, inst.warm);
        const double brute =
            oracle::host_vertex_minimum(inst.cache.rotated, inst.params, inst.host, inst.cache.box);
        const double err = r.f_star - brute;
        if (err > 1e-8) ++worst;
        CHECK(r.max_ascent <= 1e-12 * (1.0 + std::abs(r.f_star)));
        CHECK(err >= -1e-8);  // cannot beat the enumerated minimum
    }
    CHECK(worst == 0);
}

TEST_CASE("descent on larger shards never increases the objective") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
        const Index n = 30, d = 2, k = 2;
        Matrix x(n, d);
        for (Index r = 0; r < n; ++r)
            for (Index c = 0; c < d; ++c) x(r, c) = 3.0 * normal(rng) + (r % 3 == 0 ? 6.0 : 0.0);
        SolveParams p = plain_params(3, d, 50, k);
        p.rotations.rotations.clear();
        for (Index i = 0; i < 3; ++i) p.rotations.rotations.push_back(random_orthonormal(d, rng));
        for (double& v : p.duals.mu_flat()) v = 0.3 * normal(rng);
        for (Index i = 0; i < 3; ++i) p.duals.p()(i) = 0.3 * normal(rng);
        const RotatedShard cache = transform_shard(x, p.rotations);
        Matrix warm = Matrix::Zero(n, 3);
        std::vector<int> labels;
        for (Index r = 0; r < n; ++r) {
            warm(r, r % 3) = 1.0;
            labels.push_back(static_cast<int>(r % 3));
        }
        const LocalSolveResult r = solve_local(cache, p, 1, warm);
        CHECK(r.max_ascent <= 1e-12 * (1.0 + std::abs(r.f_star)));
        CHECK(r.f_star <= oracle::host_value_at_labels(cache.rotated, p, 1, cache.box, labels) + 1e-12);
        CHECK(r.f_star == doctest::Approx(subproblem_objective(cache, p, 1, r.local_assignments, r.mu_hat)));
    }
}

TEST_CASE("identical shards and params give identical results") {
    std::mt19937_64 rng(7);
    const helpers::MicroInstance inst = helpers::random_micro(rng);
    const LocalSolveResult a = solve_local(inst.cache, inst.params, inst.host, inst.warm);
    const LocalSolveResult b = solve_local(inst.cache, inst.params, inst.host, inst.warm);
    CHECK(a.f_star == b.f_star);
    CHECK(a.local_assignments == b.local_assignments);
    CHECK(a.mu_hat == b.mu_hat);
}

TEST_CASE("non-finite parameters are rejected") {
    Matrix x(2, 1);
    x << 0, 1;
    SolveParams p = plain_params(1, 1, 2);
    p.duals.p()(0) = std::nan("");
    const RotatedShard cache = transform_shard(x, p.rotations);
    CHECK_THROWS_AS(solve_local(cache, p, 0, Matrix::Ones(2, 1)), ConfigError);
}

TEST_CASE("branch and bound matches enumeration just past the enumeration limit") {
    std::mt19937_64 rng(4242);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 12; ++trial) {
        const Index n = 13 + trial % 2, d = 2, k = 2;  // 2^13 > 4096 labelings
        Matrix x(n, d);
        for (Index r = 0; r < n; ++r)
            for (Index c = 0; c < d; ++c) x(r, c) = 4.0 * normal(rng) + (r % 2 ? 5.0 : 0.0);
        SolveParams p = plain_params(2, d, 3 * n, k);
        p.rotations.rotations = {random_orthonormal(d, rng), random_orthonormal(d, rng)};
        p.beta.beta << 0.3, 1.2, 0.7, 0.05;
        for (double& v : p.duals.mu_flat()) v = 0.5 * normal(rng);
        p.duals.p() << 0.2 * normal(rng), 0.2 * normal(rng);
        const RotatedShard cache = transform_shard(x, p.rotations);
        const Matrix warm = Matrix::Constant(n, 2, 0.5);
        const LocalSolveResult r = solve_local(cache, p, 0, warm);
        const double brute = oracle::host_vertex_minimum(cache.rotated, p, 0, cache.box);
        CHECK(r.f_star == doctest::Approx(brute).epsilon(1e-9));
        CHECK(r.f_lower <= r.f_star + 1e-12);
        CHECK(r.f_lower >= brute - 1e-8 * (1.0 + std::abs(brute)));
    }
}

TEST_CASE("large shards: certified lower bound sits below every labeling tried") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> coin(0, 2);
    for (int trial = 0; trial < 6; ++trial) {
        const Index n = 200, d = 2, j = 3;
        Matrix x(n, d);
        for (Index r = 0; r < n; ++r)
            for (Index c = 0; c < d; ++c) x(r, c) = 2.0 * normal(rng) + 6.0 * static_cast<double>(r % 3);
        SolveParams p = plain_params(j, d, 2 * n, 2);
        for (double& v : p.duals.mu_flat()) v = 0.2 * normal(rng);
        const RotatedShard cache = transform_shard(x, p.rotations);
        Matrix warm = Matrix::Zero(n, j);
        for (Index r = 0; r < n; ++r) warm(r, coin(rng)) = 1.0;
        const LocalSolveResult r = solve_local(cache, p, 1, warm);
        CHECK(r.f_lower <= r.f_star + 1e-12);
        for (int t = 0; t < 50; ++t) {
            std::vector<int> labels(static_cast<std::size_t>(n));
            for (int& l : labels) l = coin(rng);
            CHECK(r.f_lower <= oracle::host_value_at_labels(cache.rotated, p, 1, cache.box, labels) + 1e-12);
        }
        std::vector<int> truth;
        for (Index row = 0; row < n; ++row) truth.push_back(static_cast<int>(row % 3));
        CHECK(r.f_star <= oracle::host_value_at_labels(cache.rotated, p, 1, cache.box, truth) + 1e-12);
    }
}
