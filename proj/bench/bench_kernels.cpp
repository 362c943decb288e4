// Serial reference against OpenMP variant for each kernel. Prints the median
// wall time of several repetitions and checks that both outputs agree.
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "dwclust/kernels.hpp"
#include "dwclust/rotation.hpp"

using namespace dwclust;
using kernels::Exec;

namespace {

double median_ms(const std::function<void()>& f, int reps) {
    std::vector<double> t;
    for (int r = 0; r < reps; ++r) {
        const auto start = std::chrono::steady_clock::now();
        f();
        t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
    }
    std::sort(t.begin(), t.end());
    return t[t.size() / 2];
}

void report(const char* name, double serial, double parallel, bool same) {
    std::printf("%-34s serial %9.2f ms  parallel %9.2f ms  speedup %5.2fx  %s\n", name, serial, parallel,
                serial / parallel, same ? "identical" : "MISMATCH");
}

Matrix gaussian(Index rows, Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 10.0);
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
    return m;
}

}  // namespace

int main() {
    std::printf("OpenMP threads: %d\n", omp_get_max_threads());
    std::mt19937_64 rng(1);
    bool all_same = true;

    {
        const Matrix x = gaussian(200000, 8, rng);
        std::vector<Matrix> rots;
        for (int i = 0; i < 4; ++i) rots.push_back(random_orthonormal(8, rng));
        std::vector<Matrix> s, p;
        const double ts = median_ms([&] { s = kernels::rotate_all(x, rots, Exec::serial); }, 5);
        const double tp = median_ms([&] { p = kernels::rotate_all(x, rots, Exec::parallel); }, 5);
        const bool same = s == p;
        all_same = all_same && same;
        report("rotate_all N=200000 D=8 J=4", ts, tp, same);
    }
    {
        const Matrix x = gaussian(200000, 8, rng);
        Matrix a = gaussian(200000, 4, rng).cwiseAbs();
        a = a.array().colwise() / a.rowwise().sum().array();
        MomentStats s, p;
        const double ts = median_ms([&] { s = kernels::moment_stats(x, a, Exec::serial); }, 5);
        const double tp = median_ms([&] { p = kernels::moment_stats(x, a, Exec::parallel); }, 5);
        bool same = s.mass == p.mass;
        for (std::size_t i = 0; i < s.first.size(); ++i)
            same = same && s.first[i] == p.first[i] && s.second[i] == p.second[i];
        all_same = all_same && same;
        report("moment_stats N=200000 D=8 J=4", ts, tp, same);
    }
    {
        const Matrix x = gaussian(16, 2, rng);
        RegularizationConfig reg;
        reg.sigma_n_sq = 0.1;
        kernels::LabelingMinimum s, p;
        const double ts = median_ms([&] { s = kernels::enumerate_labelings(x, 2, reg, std::nullopt, Exec::serial); }, 3);
        const double tp = median_ms([&] { p = kernels::enumerate_labelings(x, 2, reg, std::nullopt, Exec::parallel); }, 3);
        const bool same = s.labels == p.labels && s.objective == p.objective;
        all_same = all_same && same;
        report("enumerate_labelings N=16 J=2", ts, tp, same);
    }
    return all_same ? 0 : 1;
}
