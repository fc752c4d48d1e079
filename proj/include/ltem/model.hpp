#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ltem/error.hpp"
#include "ltem/linalg.hpp"
#include "ltem/topology.hpp"

namespace ltem {

/// Parameters of a zero-mean latent Gaussian tree: one correlation per edge
/// (aligned with topology().edges()) and one standard deviation per node
/// (aligned with topology().nodes()).
///
/// rho = 1 is representable so that boundary points can be written down, but
/// every operation that needs a nonsingular covariance rejects it.
class ModelParams {
public:
    ModelParams() = default;

    ModelParams(TreeTopology topology, std::vector<double> rho, std::vector<double> sigma)
        : topology_(std::move(topology)), rho_(std::move(rho)), sigma_(std::move(sigma)) {
        if (rho_.size() != topology_.edge_count()) {
            throw InvalidArgument("one correlation per edge required");
        }
        if (sigma_.size() != topology_.node_count()) {
            throw InvalidArgument("one standard deviation per node required");
        }
        for (std::size_t e = 0; e < rho_.size(); ++e) {
            if (!(rho_[e] >= 0.0 && rho_[e] <= 1.0)) {
                const auto [a, b] = topology_.edge_key(e);
                throw InvalidArgument("correlation on edge " + a + "-" + b + " must lie in [0,1]");
            }
        }
        for (std::size_t i = 0; i < sigma_.size(); ++i) {
            if (!(sigma_[i] > 0.0) || !std::isfinite(sigma_[i])) {
                throw InvalidArgument("standard deviation of '" + topology_.name(i) + "' must be positive");
            }
        }
    }

    /// Unit standard deviations everywhere.
    ModelParams(TreeTopology topology, std::vector<double> rho)
        : ModelParams(topology, std::move(rho), std::vector<double>(topology.node_count(), 1.0)) {}

    [[nodiscard]] const TreeTopology& topology() const noexcept { return topology_; }
    [[nodiscard]] const std::vector<double>& rho() const noexcept { return rho_; }
    [[nodiscard]] const std::vector<double>& sigma() const noexcept { return sigma_; }
    [[nodiscard]] double rho(std::size_t e) const { return rho_.at(e); }
    [[nodiscard]] double rho(const std::string& a, const std::string& b) const {
        return rho_.at(topology_.edge_index(a, b));
    }
    [[nodiscard]] double sigma(std::size_t i) const { return sigma_.at(i); }
    [[nodiscard]] double sigma(const std::string& n) const { return sigma_.at(topology_.index(n)); }

    [[nodiscard]] std::map<EdgeKey, double> rho_map() const {
        std::map<EdgeKey, double> out;
        for (std::size_t e = 0; e < rho_.size(); ++e) out[topology_.edge_key(e)] = rho_[e];
        return out;
    }

    /// All edge correlations strictly below 1 (full covariance nonsingular).
    [[nodiscard]] bool is_nondegenerate() const {
        for (double r : rho_) {
            if (!(r < 1.0)) return false;
        }
        return true;
    }

    void require_nondegenerate(const std::string& context) const {
        for (std::size_t e = 0; e < rho_.size(); ++e) {
            if (!(rho_[e] < 1.0)) {
                const auto [a, b] = topology_.edge_key(e);
                throw DegenerateModel(context + ": degenerate model, correlation on edge " + a + "-" + b +
                                      " equals 1");
            }
        }
    }

    [[nodiscard]] ModelParams with_rho(std::vector<double> rho) const { return {topology_, std::move(rho), sigma_}; }
    [[nodiscard]] ModelParams with_sigma(std::vector<double> sigma) const {
        return {topology_, rho_, std::move(sigma)};
    }

private:
    TreeTopology topology_;
    std::vector<double> rho_;
    std::vector<double> sigma_;
};

/// Symmetric covariance matrix together with its node ordering.
struct CovarianceView {
    std::vector<std::string> ordering;
    Matrix matrix;
};

/// Information (canonical) form of a Gaussian over `ordering`.
///
/// `precision` is stored as J = Sigma^{-1}, positive definite, so densities are
/// proportional to exp(-z'Jz/2 + h'z). The exponential-family convention that
/// writes the quadratic term as +z'J'z/2 uses J' = -precision; the external
/// field h has the same meaning in both conventions.
///
/// `field` holds one column per field component. For the latent block of a
/// tree conditioned on its leaves the columns are indexed by leaves, i.e.
/// h_y = field * x with field = -J_yx; for a plain numeric field it has a
/// single column.
struct InformationView {
    std::vector<std::string> ordering;
    Matrix precision;
    Matrix field;
    std::vector<std::string> field_labels;
};

/// Regression of latent nodes on leaves: E[y | x] = coefficients * x and
/// Cov[y | x] = covariance (independent of x).
struct LeafConditional {
    std::vector<std::string> internal_ordering;
    std::vector<std::string> leaf_ordering;
    Matrix coefficients;
    Matrix covariance;
};

/// Star topology with latent node "y" and leaves x1..xn (zero padded for n >= 10).
inline TreeTopology make_star_topology(std::size_t n) {
    if (n == 0) throw InvalidArgument("star needs at least one leaf");
    const auto width = std::to_string(n).size();
    std::vector<std::pair<std::string, std::string>> edges;
    for (std::size_t i = 1; i <= n; ++i) {
        std::ostringstream name;
        name << 'x' << std::setw(static_cast<int>(width)) << std::setfill('0') << i;
        edges.emplace_back(name.str(), "y");
    }
    return TreeTopology(edges, {"y"});
}

/// Star model; leaf order (and hence rho order) is x1..xn.
inline ModelParams make_star(const std::vector<double>& rho, std::vector<double> sigma_leaf = {},
                             double sigma_latent = 1.0) {
    auto topo = make_star_topology(rho.size());
    if (sigma_leaf.empty()) sigma_leaf.assign(rho.size(), 1.0);
    if (sigma_leaf.size() != rho.size()) throw InvalidArgument("one leaf sigma per correlation required");
    const auto y = topo.index("y");
    std::vector<double> edge_rho(topo.edge_count());
    std::vector<double> sigma(topo.node_count(), sigma_latent);
    const auto& leaves = topo.leaves();
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        edge_rho[topo.edge_index(leaves[k], y)] = rho[k];
        sigma[leaves[k]] = sigma_leaf[k];
    }
    return {std::move(topo), std::move(edge_rho), std::move(sigma)};
}

/// Correlations of a star model in leaf order.
inline Vector star_rho(const ModelParams& params) {
    const auto& topo = params.topology();
    if (!topo.is_star()) throw InvalidArgument("model is not a star");
    const auto y = topo.internals().front();
    Vector out(static_cast<Eigen::Index>(topo.leaves().size()));
    for (std::size_t k = 0; k < topo.leaves().size(); ++k) {
        out(static_cast<Eigen::Index>(k)) = params.rho(topo.edge_index(topo.leaves()[k], y));
    }
    return out;
}

/// Product of edge correlations on the path between a and b (1 when a == b).
inline double path_correlation(const ModelParams& params, const std::string& a, const std::string& b) {
    const auto& topo = params.topology();
    const auto ia = topo.index(a);
    const auto ib = topo.index(b);
    double out = 1.0;
    for (auto e : topo.path(ia, ib)) out *= params.rho(e);
    return out;
}

namespace detail {

/// Correlation matrix over all nodes by one traversal per source node.
inline Matrix correlation_matrix(const ModelParams& params) {
    const auto& topo = params.topology();
    const auto n = topo.node_count();
    Matrix c = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    std::vector<std::pair<std::size_t, std::size_t>> stack;
    for (std::size_t s = 0; s < n; ++s) {
        c(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s)) = 1.0;
        stack.assign(1, {s, TreeTopology::npos});
        while (!stack.empty()) {
            const auto [u, p] = stack.back();
            stack.pop_back();
            for (const auto& [v, e] : topo.neighbors(u)) {
                if (v == p) continue;
                c(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(v)) =
                    c(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(u)) * params.rho(e);
                stack.push_back({v, u});
            }
        }
    }
    // Products along a path are accumulated in opposite orders from its two
    // ends; keep one so the matrix is exactly symmetric.
    c.triangularView<Eigen::StrictlyLower>() = c.transpose();
    return c;
}

inline Matrix submatrix(const Matrix& m, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                m(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(cols[j]));
        }
    }
    return out;
}

inline std::vector<std::string> names(const TreeTopology& topo, const std::vector<std::size_t>& ids) {
    std::vector<std::string> out;
    for (auto i : ids) out.push_back(topo.name(i));
    return out;
}

}  // namespace detail

/// Sigma_uv = sigma_u sigma_v prod_{e in P(u,v)} rho_e over all nodes, lexicographic order.
inline CovarianceView full_covariance(const ModelParams& params) {
    const auto& topo = params.topology();
    Matrix c = detail::correlation_matrix(params);
    const Eigen::Map<const Vector> s(params.sigma().data(), static_cast<Eigen::Index>(params.sigma().size()));
    c = s.asDiagonal() * c * s.asDiagonal();
    return {topo.nodes(), std::move(c)};
}

/// Restriction of the full covariance to the leaves (marginalizing a Gaussian
/// is coordinate restriction).
inline CovarianceView leaf_covariance(const ModelParams& params) {
    const auto& topo = params.topology();
    const auto& leaves = topo.leaves();
    const Matrix c = detail::submatrix(detail::correlation_matrix(params), leaves, leaves);
    Vector s(static_cast<Eigen::Index>(leaves.size()));
    for (std::size_t k = 0; k < leaves.size(); ++k) s(static_cast<Eigen::Index>(k)) = params.sigma(leaves[k]);
    return {topo.leaf_names(), s.asDiagonal() * c * s.asDiagonal()};
}

/// J = Sigma^{-1} from the tree closed form:
///   J_uu = (1 + sum_{v~u} rho_uv^2 / (1 - rho_uv^2)) / sigma_u^2
///   J_uv = -rho_uv / ((1 - rho_uv^2) sigma_u sigma_v)   for edges, 0 otherwise.
/// The field is a single zero column (unconditioned zero-mean model).
inline InformationView information_view(const ModelParams& params) {
    params.require_nondegenerate("information_view");
    const auto& topo = params.topology();
    const auto n = static_cast<Eigen::Index>(topo.node_count());
    Matrix j = Matrix::Zero(n, n);
    for (Eigen::Index u = 0; u < n; ++u) j(u, u) = 1.0;
    for (std::size_t e = 0; e < topo.edge_count(); ++e) {
        const auto a = static_cast<Eigen::Index>(topo.edges()[e].a);
        const auto b = static_cast<Eigen::Index>(topo.edges()[e].b);
        const double r = params.rho(e);
        const double one_minus = (1.0 - r) * (1.0 + r);
        j(a, a) += r * r / one_minus;
        j(b, b) += r * r / one_minus;
        j(a, b) = j(b, a) = -r / one_minus;
    }
    const Eigen::Map<const Vector> s(params.sigma().data(), n);
    const Vector inv = s.cwiseInverse();
    j = inv.asDiagonal() * j * inv.asDiagonal();
    return {topo.nodes(), std::move(j), Matrix::Zero(n, 1), {"h"}};
}

/// Information form of the latent block given the leaves: precision J_yy and
/// field coefficients -J_yx (columns indexed by leaves).
inline InformationView latent_information_given_leaves(const ModelParams& params) {
    const auto full = information_view(params);
    const auto& topo = params.topology();
    return {topo.internal_names(), detail::submatrix(full.precision, topo.internals(), topo.internals()),
            -detail::submatrix(full.precision, topo.internals(), topo.leaves()), topo.leaf_names()};
}

/// E[y | x] = Lambda x with Lambda = -J_yy^{-1} J_yx; Cov[y | x] = J_yy^{-1}.
inline LeafConditional condition_on_leaves(const ModelParams& params) {
    const auto info = latent_information_given_leaves(params);
    const auto& topo = params.topology();
    if (info.precision.rows() == 0) {
        return {{}, topo.leaf_names(), Matrix(0, static_cast<Eigen::Index>(topo.leaves().size())), Matrix(0, 0)};
    }
    const SymmetricFactor f(info.precision, "latent precision");
    Matrix cov = f.inverse();
    cov = 0.5 * (cov + cov.transpose()).eval();
    return {info.ordering, info.field_labels, f.solve(info.field), std::move(cov)};
}

/// Marginalizes every node of `info` not in `keep`:
///   J' = J_KK - J_KC J_CC^{-1} J_CK,   h' = h_K - J_KC J_CC^{-1} h_C.
/// The surviving nodes keep their relative order.
inline InformationView marginalize_internal(const InformationView& info, const std::set<std::string>& keep) {
    std::vector<std::size_t> kept;
    std::vector<std::size_t> dropped;
    for (const auto& k : keep) {
        if (std::find(info.ordering.begin(), info.ordering.end(), k) == info.ordering.end()) {
            throw InvalidArgument("marginalize_internal: unknown node '" + k + "'");
        }
    }
    for (std::size_t i = 0; i < info.ordering.size(); ++i) {
        (keep.count(info.ordering[i]) ? kept : dropped).push_back(i);
    }
    std::vector<std::size_t> all_cols(static_cast<std::size_t>(info.field.cols()));
    for (std::size_t c = 0; c < all_cols.size(); ++c) all_cols[c] = c;

    InformationView out;
    for (auto i : kept) out.ordering.push_back(info.ordering[i]);
    out.field_labels = info.field_labels;
    const Matrix jkk = detail::submatrix(info.precision, kept, kept);
    const Matrix hk = detail::submatrix(info.field, kept, all_cols);
    if (dropped.empty()) {
        out.precision = jkk;
        out.field = hk;
        return out;
    }
    const Matrix jkc = detail::submatrix(info.precision, kept, dropped);
    const Matrix jcc = detail::submatrix(info.precision, dropped, dropped);
    const Matrix hc = detail::submatrix(info.field, dropped, all_cols);
    const SymmetricFactor f(jcc, "eliminated precision block");
    out.precision = jkk - jkc * f.solve(jkc.transpose());
    out.precision = 0.5 * (out.precision + out.precision.transpose()).eval();
    out.field = hk - jkc * f.solve(hc);
    return out;
}

// ---------------------------------------------------------------------------
// Edge-list model files:
//   <nodeA> <nodeB> <rho>
//   var <node> <sigma^2>
//   latent <node>
//   # comment
// ---------------------------------------------------------------------------

namespace detail {

inline double parse_number(const std::string& token, std::size_t line, const char* what) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(token, &used);
    } catch (const std::exception&) {
        throw ParseError(std::string("expected a number for ") + what + ", got '" + token + "'", line);
    }
    if (used != token.size() || !std::isfinite(v)) {
        throw ParseError(std::string("expected a number for ") + what + ", got '" + token + "'", line);
    }
    return v;
}

}  // namespace detail

inline ModelParams parse_model(std::istream& in) {
    struct RawEdge {
        std::string a, b;
        double rho;
        std::size_t line;
    };
    std::vector<RawEdge> edges;
    std::map<std::string, std::pair<double, std::size_t>> variances;
    std::set<std::string> latent;
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (const auto hash = text.find('#'); hash != std::string::npos) text.erase(hash);
        std::istringstream ls(text);
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        if (tok[0] == "var") {
            if (tok.size() != 3) throw ParseError("expected 'var <node> <sigma^2>'", line_no);
            const double v = detail::parse_number(tok[2], line_no, "variance");
            if (!(v > 0)) throw ParseError("variance must be positive", line_no);
            variances[tok[1]] = {v, line_no};
        } else if (tok[0] == "latent") {
            if (tok.size() != 2) throw ParseError("expected 'latent <node>'", line_no);
            latent.insert(tok[1]);
        } else {
            if (tok.size() != 3) throw ParseError("expected '<nodeA> <nodeB> <rho>'", line_no);
            const double r = detail::parse_number(tok[2], line_no, "correlation");
            if (!(r >= 0.0 && r <= 1.0)) throw ParseError("correlation must lie in [0,1]", line_no);
            edges.push_back({tok[0], tok[1], r, line_no});
        }
    }
    if (edges.empty()) throw ParseError("no edges found", 0);
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& e : edges) pairs.emplace_back(e.a, e.b);
    TreeTopology topo;
    try {
        topo = TreeTopology(pairs, latent);
    } catch (const InvalidArgument& err) {
        throw ParseError(err.what(), 0);
    }
    std::vector<double> rho(topo.edge_count());
    for (const auto& e : edges) rho[topo.edge_index(e.a, e.b)] = e.rho;
    std::vector<double> sigma(topo.node_count(), 1.0);
    for (const auto& [node, v] : variances) {
        if (!topo.contains(node)) throw ParseError("var for unknown node '" + node + "'", v.second);
        sigma[topo.index(node)] = std::sqrt(v.first);
    }
    return {std::move(topo), std::move(rho), std::move(sigma)};
}

inline ModelParams load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open model file '" + path + "'", 0);
    return parse_model(in);
}

inline std::string format_model(const ModelParams& params) {
    const auto& topo = params.topology();
    std::ostringstream out;
    out << std::setprecision(17);
    for (std::size_t e = 0; e < topo.edge_count(); ++e) {
        const auto [a, b] = topo.edge_key(e);
        out << a << ' ' << b << ' ' << params.rho(e) << '\n';
    }
    const bool degree_rule_holds = [&] {
        for (auto i : topo.internals()) {
            if (topo.degree(i) == 1) return false;
        }
        return true;
    }();
    if (!degree_rule_holds) {
        for (auto i : topo.internals()) out << "latent " << topo.name(i) << '\n';
    }
    for (std::size_t i = 0; i < topo.node_count(); ++i) {
        if (params.sigma(i) != 1.0) out << "var " << topo.name(i) << ' ' << params.sigma(i) * params.sigma(i) << '\n';
    }
    return out.str();
}

}  // namespace ltem
