#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "ltem/error.hpp"
#include "ltem/gaussian_ops.hpp"
#include "ltem/linalg.hpp"
#include "ltem/model.hpp"
#include "ltem/philox.hpp"

namespace ltem {

/// m x n matrix of observed leaf values; column k belongs to leaf_names[k].
struct LeafSampleMatrix {
    std::vector<std::string> leaf_names;
    Matrix data;

    void validate() const {
        if (data.rows() < 1) throw DataError("sample matrix has no rows");
        if (static_cast<std::size_t>(data.cols()) != leaf_names.size()) {
            throw DataError("sample matrix column count does not match leaf names");
        }
        if (!data.allFinite()) throw DataError("sample matrix contains non-finite values");
    }
};

/// Draws for every node of the tree; column k belongs to ordering[k].
struct FullSample {
    std::vector<std::string> ordering;
    Matrix data;
};

/// Raw (uncentered) second-moment summary of leaf data.
struct EmpiricalStats {
    std::vector<std::string> leaf_names;
    Vector sigma_hat;
    Matrix alpha_hat;
    std::size_t m = 0;

    /// Second-moment matrix diag(sigma_hat) alpha_hat diag(sigma_hat).
    [[nodiscard]] Matrix second_moments() const {
        return sigma_hat.asDiagonal() * alpha_hat * sigma_hat.asDiagonal();
    }

    [[nodiscard]] GaussianMoments moments() const { return {leaf_names, second_moments()}; }
};

struct SampleResult {
    FullSample full;
    LeafSampleMatrix leaves;
};

/// Exact ancestral sampling from the root (lexicographically smallest node):
/// z_root = sigma_root eps, z_v = sigma_v (rho_uv z_u / sigma_u + sqrt(1 - rho_uv^2) eps_v).
/// Row k uses only the Philox stream keyed by (seed, k).
inline SampleResult sample(const ModelParams& params, std::size_t m, std::uint64_t seed) {
    if (m == 0) throw InvalidArgument("sample count must be at least 1");
    const auto& topo = params.topology();
    const auto n = topo.node_count();

    struct Step {
        std::size_t node, parent;
        double rho, noise;
    };
    std::vector<Step> order{{0, TreeTopology::npos, 0.0, 1.0}};
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto u = order[k].node;
        for (const auto& [v, e] : topo.neighbors(u)) {
            if (v == order[k].parent) continue;
            const double r = params.rho(e);
            order.push_back({v, u, r, std::sqrt(std::max(0.0, (1.0 - r) * (1.0 + r)))});
        }
    }

    SampleResult out;
    out.full.ordering = topo.nodes();
    out.full.data.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    for (std::size_t row = 0; row < m; ++row) {
        RowNormals rng(seed, row);
        const auto r = static_cast<Eigen::Index>(row);
        for (const auto& s : order) {
            const double eps = rng.next();
            const auto v = static_cast<Eigen::Index>(s.node);
            if (s.parent == TreeTopology::npos) {
                out.full.data(r, v) = params.sigma(s.node) * eps;
            } else {
                const double zu = out.full.data(r, static_cast<Eigen::Index>(s.parent));
                out.full.data(r, v) =
                    params.sigma(s.node) * (s.rho * zu / params.sigma(s.parent) + s.noise * eps);
            }
        }
    }
    out.leaves.leaf_names = topo.leaf_names();
    out.leaves.data.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(topo.leaves().size()));
    for (std::size_t k = 0; k < topo.leaves().size(); ++k) {
        out.leaves.data.col(static_cast<Eigen::Index>(k)) = out.full.data.col(static_cast<Eigen::Index>(topo.leaves()[k]));
    }
    return out;
}

/// Summary from a second-moment matrix (exact moments or a data average).
inline EmpiricalStats stats_from_moments(const GaussianMoments& moments, std::size_t m = 0) {
    const auto& s = moments.covariance;
    if (s.rows() != s.cols() || static_cast<std::size_t>(s.rows()) != moments.ordering.size()) {
        throw InvalidArgument("stats_from_moments: moment matrix does not match its ordering");
    }
    EmpiricalStats out;
    out.leaf_names = moments.ordering;
    out.m = m;
    out.sigma_hat = s.diagonal().cwiseSqrt();
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        if (!(out.sigma_hat(i) > 0.0)) {
            throw DataError("column '" + moments.ordering[static_cast<std::size_t>(i)] + "' is identically zero");
        }
    }
    const Vector inv = out.sigma_hat.cwiseInverse();
    out.alpha_hat = inv.asDiagonal() * s * inv.asDiagonal();
    out.alpha_hat = 0.5 * (out.alpha_hat + out.alpha_hat.transpose()).eval();
    out.alpha_hat.diagonal().setOnes();
    return out;
}

/// sigma_hat_i = sqrt(mean_k x_ik^2), alpha_hat_ij = mean_k(x_ik x_jk) / (sigma_hat_i sigma_hat_j).
inline EmpiricalStats empirical_stats(const LeafSampleMatrix& samples) {
    samples.validate();
    const double m = static_cast<double>(samples.data.rows());
    Matrix s = (samples.data.transpose() * samples.data) / m;
    return stats_from_moments({samples.leaf_names, std::move(s)}, static_cast<std::size_t>(samples.data.rows()));
}

/// Pools two summaries over the same leaves by sample-count-weighted second moments.
inline EmpiricalStats merge_stats(const EmpiricalStats& a, const EmpiricalStats& b) {
    if (a.leaf_names != b.leaf_names) throw InvalidArgument("merge_stats: leaf names differ");
    const double total = static_cast<double>(a.m + b.m);
    if (!(total > 0)) throw InvalidArgument("merge_stats: both summaries have zero weight");
    const Matrix s = (static_cast<double>(a.m) * a.second_moments() + static_cast<double>(b.m) * b.second_moments()) / total;
    return stats_from_moments({a.leaf_names, s}, a.m + b.m);
}

/// Smallest eta for which the sample is eta-representative of the truth's leaf
/// distribution, after normalizing every column by the true sigma:
///   |sigma_hat_i - 1|, |mean(x_i x_j) - c_ij|, |alpha_hat_ij - c_ij| <= eta
/// with c_ij the true leaf correlation.
inline double representativeness(const EmpiricalStats& stats, const ModelParams& truth) {
    const auto& topo = truth.topology();
    if (stats.leaf_names != topo.leaf_names()) {
        throw InvalidArgument("representativeness: statistics and truth have different leaves");
    }
    const auto cov = leaf_covariance(truth).matrix;
    const Vector sd = cov.diagonal().cwiseSqrt();
    const Eigen::Index n = sd.size();
    double eta = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double si = stats.sigma_hat(i) / sd(i);
        eta = std::max(eta, std::abs(si - 1.0));
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double sj = stats.sigma_hat(j) / sd(j);
            const double c = cov(i, j) / (sd(i) * sd(j));
            eta = std::max(eta, std::abs(si * sj * stats.alpha_hat(i, j) - c));
            eta = std::max(eta, std::abs(stats.alpha_hat(i, j) - c));
        }
    }
    return eta;
}

// ---------------------------------------------------------------------------
// CSV: header row of leaf names, one sample per row.
// ---------------------------------------------------------------------------

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_csv(std::ostream& out, const LeafSampleMatrix& samples) {
    for (std::size_t k = 0; k < samples.leaf_names.size(); ++k) {
        if (k) out << ',';
        out << samples.leaf_names[k];
    }
    out << '\n';
    for (Eigen::Index r = 0; r < samples.data.rows(); ++r) {
        for (Eigen::Index c = 0; c < samples.data.cols(); ++c) {
            if (c) out << ',';
            out << format_number(samples.data(r, c));
        }
        out << '\n';
    }
}

inline std::string to_csv(const LeafSampleMatrix& samples) {
    std::ostringstream out;
    write_csv(out, samples);
    return out.str();
}

inline void save_csv(const std::string& path, const LeafSampleMatrix& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    write_csv(out, samples);
    if (!out) throw DataError("failed writing '" + path + "'");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    for (auto& f : out) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    }
    return out;
}

}  // namespace detail

inline LeafSampleMatrix read_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    LeafSampleMatrix out;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") != std::string::npos) break;
    }
    if (line_no == 0 || line.find_first_not_of(" \t\r") == std::string::npos) {
        throw ParseError("CSV has no header row", 0);
    }
    out.leaf_names = detail::split_csv_line(line);
    for (const auto& name : out.leaf_names) {
        if (name.empty()) throw ParseError("empty column name in CSV header", line_no);
    }
    std::vector<double> values;
    std::size_t rows = 0;
    const auto cols = out.leaf_names.size();
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != cols) {
            throw ParseError("expected " + std::to_string(cols) + " fields, got " + std::to_string(fields.size()),
                             line_no);
        }
        for (const auto& f : fields) {
            double v = 0;
            const auto* first = f.data();
            const auto* last = f.data() + f.size();
            const auto res = std::from_chars(first, last, v);
            if (res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
                throw ParseError("invalid numeric value '" + f + "'", line_no);
            }
            values.push_back(v);
        }
        ++rows;
    }
    if (rows == 0) throw ParseError("CSV has no data rows", line_no);
    out.data.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = values[r * cols + c];
        }
    }
    return out;
}

inline LeafSampleMatrix load_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open CSV file '" + path + "'");
    return read_csv(in);
}

}  // namespace ltem
