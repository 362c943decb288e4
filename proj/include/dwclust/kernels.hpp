#ifndef DWCLUST_KERNELS_HPP
#define DWCLUST_KERNELS_HPP

#include <optional>
#include <vector>

#include "dwclust/core_model.hpp"

// Hot loops with a serial reference and an OpenMP variant. Both variants give
// bit-identical results: work is split only across independent outputs and
// every floating-point reduction keeps its serial order.
namespace dwclust::kernels {

enum class Exec { serial, parallel };

// rotated[i] = samples * rotations[i]^T
std::vector<Matrix> rotate_all(const Matrix& samples, const std::vector<Matrix>& rotations,
                               Exec exec);

MomentStats moment_stats(const Matrix& samples, const Matrix& a, Exec exec);

struct LabelingMinimum {
    std::vector<int> labels;
    double objective = 0.0;
    long long evaluated = 0;  // labelings that met the count constraint
};

// Minimum of the coding objective over all hard labelings of the rows into
// j clusters. Labeling codes use sample 0 as the least significant base-j
// digit; ties go to the smallest code. With `counts`, only labelings whose
// cluster sizes match are considered.
LabelingMinimum enumerate_labelings(const Matrix& samples, Index j, const RegularizationConfig& reg,
                                    const std::optional<std::vector<Index>>& counts, Exec exec);

}  // namespace dwclust::kernels

#endif  // DWCLUST_KERNELS_HPP
