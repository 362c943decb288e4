#include "dwclust/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "dwclust/errors.hpp"

namespace dwclust {

namespace {

double off_diagonal_norm(const Matrix& m) {
    double s = 0.0;
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j)
            if (i != j) s += m(i, j) * m(i, j);
    return std::sqrt(s);
}

}  // namespace

SymmetricEigen jacobi_eigen(const Matrix& m, int max_sweeps, double rel_tol) {
    const Index n = m.rows();
    if (m.cols() != n) throw ConfigError("jacobi_eigen: matrix is not square");
    if (!m.allFinite()) throw NumericError("jacobi_eigen: non-finite input");

    Matrix a = 0.5 * (m + m.transpose());
    Matrix v = Matrix::Identity(n, n);  // columns accumulate eigenvectors
    const double scale = a.norm();
    const double target = rel_tol * scale;

    SymmetricEigen out;
    int sweep = 0;
    while (off_diagonal_norm(a) > target) {
        if (sweep == max_sweeps)
            throw NumericError("jacobi_eigen: no convergence after " + std::to_string(max_sweeps) +
                               " sweeps");
        ++sweep;
        for (Index p = 0; p < n - 1; ++p) {
            for (Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                // Rutishauser's stable form of the rotation angle.
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = a(q, p) = 0.0;
                for (Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index x, Index y) { return a(x, x) > a(y, y); });

    out.values.resize(n);
    out.vectors.resize(n, n);
    const double tiny = 1e-12;
    for (Index r = 0; r < n; ++r) {
        const Index src = order[static_cast<std::size_t>(r)];
        out.values(r) = a(src, src);
        Vector col = v.col(src);
        for (Index k = 0; k < n; ++k) {
            if (std::abs(col(k)) > tiny) {
                if (col(k) < 0.0) col = -col;
                break;
            }
        }
        out.vectors.row(r) = col.transpose();
    }
    out.sweeps = sweep;
    return out;
}

double log_det_floored(const Matrix& spd, double floor) {
    const SymmetricEigen eig = jacobi_eigen(spd);
    const double largest = eig.values.size() ? std::abs(eig.values(0)) : 0.0;
    double total = 0.0;
    for (Index i = 0; i < eig.values.size(); ++i) {
        const double ev = eig.values(i);
        if (!std::isfinite(ev) || ev < -1e-9 * std::max(1.0, largest))
            throw NumericError("log_det_floored: matrix is not positive semidefinite");
        total += std::log(std::max(ev, floor));
    }
    return total;
}

Matrix random_orthonormal(Index dim, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix g(dim, dim);
    for (Index i = 0; i < dim; ++i)
        for (Index j = 0; j < dim; ++j) g(i, j) = normal(rng);
    // Modified Gram-Schmidt over rows.
    Matrix q = g;
    for (Index r = 0; r < dim; ++r) {
        for (Index s = 0; s < r; ++s) q.row(r) -= q.row(r).dot(q.row(s)) * q.row(s);
        const double nrm = q.row(r).norm();
        if (nrm < 1e-12) {
            q.row(r).setZero();
            q(r, r) = 1.0;
            for (Index s = 0; s < r; ++s) q.row(r) -= q.row(r).dot(q.row(s)) * q.row(s);
            q.row(r).normalize();
        } else {
            q.row(r) /= nrm;
        }
    }
    return q;
}

double orthonormality_error(const Matrix& a) {
    if (a.rows() != a.cols()) return std::numeric_limits<double>::infinity();
    return (a * a.transpose() - Matrix::Identity(a.rows(), a.cols())).cwiseAbs().maxCoeff();
}

}  // namespace dwclust
