#include "dwclust/core_model.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dwclust {

Dataset::Dataset(Matrix samples) : samples_(std::move(samples)) {
    if (samples_.rows() < 1 || samples_.cols() < 1)
        throw ConfigError("dataset must have at least one sample and one dimension");
    if (!samples_.allFinite()) throw ConfigError("dataset contains non-finite values");
}

Dataset Dataset::subset(const std::vector<Index>& rows) const {
    Matrix out(static_cast<Index>(rows.size()), dim());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = samples_.row(rows[r]);
    return Dataset(std::move(out));
}

void ShardLayout::validate(Index n_total) const {
    if (shards.empty()) throw ConfigError("shard layout has no hosts");
    std::vector<char> seen(static_cast<std::size_t>(n_total), 0);
    Index count = 0;
    for (std::size_t k = 0; k < shards.size(); ++k) {
        if (shards[k].empty()) throw ConfigError("shard " + std::to_string(k) + " is empty");
        for (Index n : shards[k]) {
            if (n < 0 || n >= n_total)
                throw ConfigError("shard " + std::to_string(k) + " has out-of-range index");
            if (seen[static_cast<std::size_t>(n)]++)
                throw ConfigError("sample " + std::to_string(n) + " appears in more than one shard");
            ++count;
        }
    }
    if (count != n_total) throw ConfigError("shards do not cover every sample");
}

bool ClusterModel::has_empty_cluster() const {
    for (bool e : empty)
        if (e) return true;
    return false;
}

void RegularizationConfig::validate() const {
    if (!(sigma_n_sq >= 0.0) || !std::isfinite(sigma_n_sq))
        throw ConfigError("sigma_n_sq must be a finite non-negative number");
    if (!(variance_floor > 0.0)) throw ConfigError("variance_floor must be positive");
}

double entropy(const Vector& p) {
    double sum = 0.0;
    for (Index i = 0; i < p.size(); ++i) {
        if (!(p(i) >= 0.0)) throw ConfigError("entropy: negative probability");
        sum += p(i);
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("entropy: probabilities do not sum to 1");
    double h = 0.0;
    for (Index i = 0; i < p.size(); ++i)
        if (p(i) > 0.0) h -= p(i) * std::log(p(i));
    return h;
}

ClusterModel mixture_moments(const Dataset& data, const AssignmentMatrix& a) {
    const Index n = data.n_samples();
    const Index d = data.dim();
    const Index j = a.n_clusters();
    if (a.n_rows() != n) throw ConfigError("assignment rows do not match dataset");
    const Matrix& x = data.samples();

    ClusterModel model;
    model.proportions.resize(j);
    model.means.assign(static_cast<std::size_t>(j), Vector::Zero(d));
    model.covariances.assign(static_cast<std::size_t>(j), Matrix::Zero(d, d));
    model.empty.assign(static_cast<std::size_t>(j), false);

    for (Index i = 0; i < j; ++i) {
        const auto col = a.a.col(i);
        const double mass = col.sum();
        const auto slot = static_cast<std::size_t>(i);
        if (!(mass > 0.0)) {
            model.proportions(i) = 0.0;
            model.empty[slot] = true;
            continue;
        }
        model.proportions(i) = mass / static_cast<double>(n);
        const Vector mu = (x.transpose() * col) / mass;
        const Matrix centered = x.rowwise() - mu.transpose();
        Matrix cov = centered.transpose() * col.asDiagonal() * centered / mass;
        model.means[slot] = mu;
        model.covariances[slot] = 0.5 * (cov + cov.transpose());
    }
    return model;
}

MomentStats MomentStats::zeros(Index n_clusters, Index dim) {
    MomentStats s;
    s.mass = Vector::Zero(n_clusters);
    s.first.assign(static_cast<std::size_t>(n_clusters), Vector::Zero(dim));
    s.second.assign(static_cast<std::size_t>(n_clusters), Matrix::Zero(dim, dim));
    return s;
}

MomentStats& MomentStats::operator+=(const MomentStats& other) {
    mass += other.mass;
    for (std::size_t i = 0; i < first.size(); ++i) {
        first[i] += other.first[i];
        second[i] += other.second[i];
    }
    return *this;
}

MomentStats moment_stats(const Matrix& samples, const Matrix& a) {
    const Index j = a.cols();
    MomentStats s = MomentStats::zeros(j, samples.cols());
    for (Index i = 0; i < j; ++i) {
        const auto col = a.col(i);
        const auto slot = static_cast<std::size_t>(i);
        s.mass(i) = col.sum();
        s.first[slot] = samples.transpose() * col;
        s.second[slot] = samples.transpose() * col.asDiagonal() * samples;
    }
    return s;
}

ClusterModel model_from_stats(const MomentStats& stats, Index n_total) {
    const Index j = stats.mass.size();
    const Index d = stats.first.empty() ? 0 : stats.first.front().size();
    ClusterModel model;
    model.proportions.resize(j);
    model.means.assign(static_cast<std::size_t>(j), Vector::Zero(d));
    model.covariances.assign(static_cast<std::size_t>(j), Matrix::Zero(d, d));
    model.empty.assign(static_cast<std::size_t>(j), false);
    for (Index i = 0; i < j; ++i) {
        const auto slot = static_cast<std::size_t>(i);
        const double mass = stats.mass(i);
        if (!(mass > 0.0)) {
            model.proportions(i) = 0.0;
            model.empty[slot] = true;
            continue;
        }
        model.proportions(i) = mass / static_cast<double>(n_total);
        const Vector mu = stats.first[slot] / mass;
        Matrix cov = stats.second[slot] / mass - mu * mu.transpose();
        model.means[slot] = mu;
        model.covariances[slot] = 0.5 * (cov + cov.transpose());
    }
    return model;
}

double coding_objective(const ClusterModel& model, const RegularizationConfig& reg) {
    reg.validate();
    double total = 2.0 * entropy(model.proportions);
    for (Index i = 0; i < model.n_clusters(); ++i) {
        const double p = model.proportions(i);
        if (p == 0.0) continue;
        const Matrix& cov = model.covariances[static_cast<std::size_t>(i)];
        const Matrix regularized = cov + reg.sigma_n_sq * Matrix::Identity(cov.rows(), cov.cols());
        total += p * log_det_floored(regularized, reg.variance_floor);
    }
    if (!std::isfinite(total)) throw NumericError("coding objective is not finite");
    return total;
}

AssignmentDiagnostics validate_assignment(const AssignmentMatrix& a, double tol) {
    AssignmentDiagnostics diag;
    diag.cluster_mass = a.a.colwise().sum().transpose();
    if (a.a.size() == 0) return diag;
    diag.min_entry = a.a.minCoeff();
    diag.max_entry = a.a.maxCoeff();
    for (Index n = 0; n < a.n_rows(); ++n) {
        const double dev = std::abs(a.a.row(n).sum() - 1.0);
        if (!(dev <= diag.max_row_deviation)) {
            diag.max_row_deviation = dev;
            diag.worst_row = n;
        }
    }
    if (diag.max_row_deviation == 0.0) diag.worst_row = -1;
    diag.ok = a.a.allFinite() && diag.max_row_deviation <= tol && diag.min_entry >= -tol &&
              diag.max_entry <= 1.0 + tol;
    return diag;
}

namespace {

double parse_double(std::string_view field, const std::string& path, std::size_t line) {
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
        field.remove_suffix(1);
    if (!field.empty() && field.front() == '+') field.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size())
        throw ConfigError(path + ":" + std::to_string(line) + ": cannot parse '" +
                          std::string(field) + "'");
    return v;
}

std::vector<std::vector<double>> read_rows(const std::string& path, bool has_header) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (has_header && lineno == 1) continue;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<double> row;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            const std::string_view field(line.data() + start,
                                         (comma == std::string::npos ? line.size() : comma) - start);
            row.push_back(parse_double(field, path, lineno));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": inconsistent column count");
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

Matrix read_csv_matrix(const std::string& path, bool has_header) {
    const auto rows = read_rows(path, has_header);
    if (rows.empty()) throw ConfigError(path + ": no data rows");
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            m(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    return m;
}

void write_csv_matrix(const std::string& path, const Matrix& m) {
    std::ostringstream out;
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) {
            if (c) out << ',';
            out << format_double(m(r, c));
        }
        out << '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path);
    f << out.str();
}

std::vector<int> read_labels(const std::string& path) {
    const auto rows = read_rows(path, false);
    std::vector<int> labels;
    labels.reserve(rows.size());
    for (const auto& r : rows) {
        if (r.size() != 1) throw ConfigError(path + ": labels file must have one column");
        const double v = r.front();
        if (v != std::floor(v) || v < 0) throw ConfigError(path + ": labels must be non-negative integers");
        labels.push_back(static_cast<int>(v));
    }
    return labels;
}

void write_labels(const std::string& path, const std::vector<int>& labels) {
    std::ostringstream out;
    for (int l : labels) out << l << '\n';
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path);
    f << out.str();
}

}  // namespace dwclust
