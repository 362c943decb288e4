#ifndef DWCLUST_LINALG_HPP
#define DWCLUST_LINALG_HPP

#include <random>

#include <Eigen/Dense>

namespace dwclust {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Eigenvalues sorted descending; row r of `vectors` is the unit eigenvector
// for values(r), with its first non-negligible component positive.
struct SymmetricEigen {
    Vector values;
    Matrix vectors;
    int sweeps = 0;
};

// Cyclic Jacobi rotations. Stops when the off-diagonal Frobenius norm drops
// below rel_tol * ||m||_F; throws NumericError after max_sweeps.
SymmetricEigen jacobi_eigen(const Matrix& m, int max_sweeps = 100, double rel_tol = 1e-12);

// Sum of log(max(eigenvalue, floor)). Throws NumericError when an eigenvalue
// is clearly negative (below -1e-9 * max(1, |largest|)) or non-finite.
double log_det_floored(const Matrix& spd, double floor);

Matrix random_orthonormal(Index dim, std::mt19937_64& rng);

double orthonormality_error(const Matrix& a);

}  // namespace dwclust

#endif  // DWCLUST_LINALG_HPP
