#include "dwclust/kernels.hpp"

#include <cmath>
#include <limits>

namespace dwclust::kernels {

std::vector<Matrix> rotate_all(const Matrix& samples, const std::vector<Matrix>& rotations,
                               Exec exec) {
    const auto j = static_cast<long>(rotations.size());
    std::vector<Matrix> out(rotations.size());
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
    for (long i = 0; i < j; ++i) {
        const auto slot = static_cast<std::size_t>(i);
        out[slot] = samples * rotations[slot].transpose();
    }
    return out;
}

MomentStats moment_stats(const Matrix& samples, const Matrix& a, Exec exec) {
    const Index j = a.cols();
    const Index d = samples.cols();
    MomentStats s = MomentStats::zeros(j, d);
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
    for (Index i = 0; i < j; ++i) {
        const auto slot = static_cast<std::size_t>(i);
        double mass = 0.0;
        Vector first = Vector::Zero(d);
        Matrix second = Matrix::Zero(d, d);
        for (Index n = 0; n < samples.rows(); ++n) {
            const double w = a(n, i);
            if (w == 0.0) continue;
            mass += w;
            for (Index r = 0; r < d; ++r) {
                const double wx = w * samples(n, r);
                first(r) += wx;
                for (Index c = 0; c <= r; ++c) second(r, c) += wx * samples(n, c);
            }
        }
        for (Index r = 0; r < d; ++r)
            for (Index c = r + 1; c < d; ++c) second(r, c) = second(c, r);
        s.mass(i) = mass;
        s.first[slot] = std::move(first);
        s.second[slot] = std::move(second);
    }
    return s;
}

namespace {

struct Candidate {
    double value = std::numeric_limits<double>::infinity();
    long long code = -1;
    long long evaluated = 0;

    void offer(double v, long long c) {
        if (v < value || (v == value && c < code)) {
            value = v;
            code = c;
        }
    }
};

void decode_labels(long long code, Index j, std::vector<int>& labels) {
    for (int& l : labels) {
        l = static_cast<int>(code % j);
        code /= j;
    }
}

// Objective of one labeling from per-cluster sums; empty clusters drop out.
double labeling_value(const Matrix& x, const std::vector<int>& labels, Index j,
                      const RegularizationConfig& reg, std::vector<Index>& count,
                      std::vector<Vector>& s1, std::vector<Matrix>& s2) {
    const double n_total = static_cast<double>(x.rows());
    for (Index i = 0; i < j; ++i) {
        const auto slot = static_cast<std::size_t>(i);
        count[slot] = 0;
        s1[slot].setZero();
        s2[slot].setZero();
    }
    for (Index n = 0; n < x.rows(); ++n) {
        const auto slot = static_cast<std::size_t>(labels[static_cast<std::size_t>(n)]);
        ++count[slot];
        s1[slot] += x.row(n).transpose();
        s2[slot] += x.row(n).transpose() * x.row(n);
    }
    double value = 0.0;
    for (Index i = 0; i < j; ++i) {
        const auto slot = static_cast<std::size_t>(i);
        if (count[slot] == 0) continue;
        const double m = static_cast<double>(count[slot]);
        const double p = m / n_total;
        const Vector mu = s1[slot] / m;
        Matrix cov = s2[slot] / m - mu * mu.transpose();
        cov = 0.5 * (cov + cov.transpose());
        cov.diagonal().array() += reg.sigma_n_sq;
        value += -2.0 * p * std::log(p) + p * log_det_floored(cov, reg.variance_floor);
    }
    return value;
}

}  // namespace

LabelingMinimum enumerate_labelings(const Matrix& samples, Index j, const RegularizationConfig& reg,
                                    const std::optional<std::vector<Index>>& counts, Exec exec) {
    reg.validate();
    const Index n = samples.rows();
    const Index d = samples.cols();
    if (j < 1) throw ConfigError("enumerate_labelings: need at least one cluster");
    double total = 1.0;
    for (Index k = 0; k < n; ++k) total *= static_cast<double>(j);
    if (total > 1e6) throw ConfigError("enumerate_labelings: J^N exceeds 1e6");
    if (counts) {
        if (static_cast<Index>(counts->size()) != j)
            throw ConfigError("enumerate_labelings: one count per cluster required");
        Index sum = 0;
        for (Index c : *counts) sum += c;
        if (sum != n) throw ConfigError("enumerate_labelings: counts must sum to N");
    }
    const auto n_codes = static_cast<long long>(total);

    Candidate best;
#pragma omp parallel if (exec == Exec::parallel)
    {
        Candidate local;
        std::vector<int> labels(static_cast<std::size_t>(n));
        std::vector<Index> count(static_cast<std::size_t>(j));
        std::vector<Vector> s1(static_cast<std::size_t>(j), Vector::Zero(d));
        std::vector<Matrix> s2(static_cast<std::size_t>(j), Matrix::Zero(d, d));
#pragma omp for schedule(static)
        for (long long code = 0; code < n_codes; ++code) {
            decode_labels(code, j, labels);
            if (counts) {
                std::vector<Index> seen(static_cast<std::size_t>(j), 0);
                for (int l : labels) ++seen[static_cast<std::size_t>(l)];
                if (seen != *counts) continue;
            }
            ++local.evaluated;
            local.offer(labeling_value(samples, labels, j, reg, count, s1, s2), code);
        }
#pragma omp critical(dwclust_enumerate)
        {
            best.evaluated += local.evaluated;
            if (local.code >= 0) best.offer(local.value, local.code);
        }
    }
    if (best.code < 0) throw ConfigError("enumerate_labelings: no labeling meets the counts");
    LabelingMinimum out;
    out.labels.resize(static_cast<std::size_t>(n));
    decode_labels(best.code, j, out.labels);
    out.objective = best.value;
    out.evaluated = best.evaluated;
    return out;
}

}  // namespace dwclust::kernels
