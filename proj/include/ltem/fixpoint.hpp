#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ltem/error.hpp"
#include "ltem/linalg.hpp"
#include "ltem/model.hpp"
#include "ltem/philox.hpp"

namespace ltem {

/// p_i(u) = sum_{j != i} u_i u_j = u_i (s - u_i), s = sum_j u_j.
inline Vector system_eval(const Vector& u) {
    const double s = u.sum();
    return u.cwiseProduct((Vector::Constant(u.size(), s) - u));
}

/// dp_i/du_i = sum_{k != i} u_k, dp_i/du_j = u_i (j != i).
inline Matrix system_jacobian(const Vector& u) {
    if (u.size() < 2) throw InvalidArgument("system_jacobian: need n >= 2");
    const double s = u.sum();
    Matrix j = u * Vector::Ones(u.size()).transpose();
    for (Eigen::Index i = 0; i < u.size(); ++i) j(i, i) = s - u(i);
    return j;
}

inline double smallest_singular_value(const Matrix& m) {
    const Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues().minCoeff();
}

/// Lower bound on the smallest singular value of system_jacobian(u):
///   (min_i u_i)^3 / (||u||_2 ||u||_1) * (n - 2)^3 / (128 n^3).
inline double min_singular_bound(const Vector& u) {
    const auto n = u.size();
    if (n < 3) throw InvalidArgument("min_singular_bound: requires n >= 3");
    if (!(u.minCoeff() > 0.0)) throw InvalidArgument("min_singular_bound: requires u > 0");
    const double umin = u.minCoeff();
    const double nn = static_cast<double>(n);
    return umin * umin * umin / (u.norm() * u.lpNorm<1>()) * std::pow(nn - 2.0, 3) / (128.0 * nn * nn * nn);
}

// ---------------------------------------------------------------------------
// Multistart root finding for system_eval(u) = target over u > 0
// ---------------------------------------------------------------------------

enum class OracleStatus { unique, multiple, inconclusive };

inline std::string to_string(OracleStatus s) {
    switch (s) {
        case OracleStatus::unique: return "unique";
        case OracleStatus::multiple: return "multiple";
        case OracleStatus::inconclusive: return "inconclusive";
    }
    return "inconclusive";
}

struct OracleOptions {
    std::size_t starts = 1000;
    std::size_t max_newton = 100;
    double cluster_tol = 1e-8;
    double residual_tol = 1e-12;
};

struct OracleResult {
    OracleStatus status = OracleStatus::inconclusive;
    /// Distinct positive roots, sorted lexicographically.
    std::vector<Vector> solutions;
    /// n < 3: the nonsingularity argument does not apply.
    bool outside_nonsingular_regime = false;
    std::size_t converged_starts = 0;
    Vector upper_bound;
};

namespace detail {

inline double radical_inverse(std::uint64_t k, std::uint64_t base) {
    double inv = 1.0 / static_cast<double>(base);
    double f = inv;
    double out = 0.0;
    while (k > 0) {
        out += f * static_cast<double>(k % base);
        k /= base;
        f *= inv;
    }
    return out;
}

inline bool is_prime(std::uint64_t p) {
    if (p < 2) return false;
    for (std::uint64_t d = 2; d * d <= p; ++d) {
        if (p % d == 0) return false;
    }
    return true;
}

/// Point k (k >= 1) of the Halton sequence in (0,1)^n.
inline Vector halton_point(std::uint64_t k, Eigen::Index n) {
    Vector out(n);
    std::uint64_t p = 1;
    for (Eigen::Index d = 0; d < n; ++d) {
        do ++p;
        while (!is_prime(p));
        out(d) = radical_inverse(k, p);
    }
    return out;
}

inline bool lex_less(const Vector& a, const Vector& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace detail

/// Searches (0, 2 U]^n for roots of system_eval(u) = target, with Halton
/// starts and damped Newton. For n >= 3, U_i = p_i / sqrt(P - 2 p_i)
/// (P = sum p) bounds every positive root: P - 2 p_i <= (s - u_i)^2. For
/// n = 2 the Newton steps are minimum-norm least-squares steps, so starts
/// land on different points of a solution curve.
inline OracleResult uniqueness_oracle(const Vector& target, const OracleOptions& opt = {}) {
    const auto n = target.size();
    if (n < 2) throw InvalidArgument("uniqueness_oracle: need n >= 2");
    if (!target.allFinite()) throw InvalidArgument("uniqueness_oracle: non-finite target");
    OracleResult out;
    out.outside_nonsingular_regime = n < 3;
    const double total = target.sum();
    const double scale = std::max(1.0, target.cwiseAbs().maxCoeff());
    out.upper_bound.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double rest = total - 2.0 * target(i);
        out.upper_bound(i) = (n >= 3 && rest > 0.0 && target(i) > 0.0)
                                 ? target(i) / std::sqrt(rest)
                                 : 2.0 * std::sqrt(std::max(target.cwiseAbs().maxCoeff(), 1e-300));
    }

    auto residual = [&](const Vector& u) { return Vector(system_eval(u) - target); };
    std::vector<Vector> roots;
    for (std::size_t k = 1; k <= opt.starts; ++k) {
        Vector u = 2.0 * out.upper_bound.cwiseProduct(detail::halton_point(k, n));
        Vector f = residual(u);
        double fnorm = f.norm();
        bool ok = false;
        for (std::size_t it = 0; it < opt.max_newton; ++it) {
            if (f.lpNorm<Eigen::Infinity>() <= opt.residual_tol * scale) {
                ok = true;
                break;
            }
            const Matrix jac = system_jacobian(u);
            Vector delta;
            bool solved = false;
            if (n >= 3) {
                const Eigen::PartialPivLU<Matrix> lu(jac);
                delta = lu.solve(-f);
                solved = delta.allFinite() && (jac * delta + f).norm() <= 1e-8 * (1.0 + f.norm());
            }
            if (!solved) delta = Eigen::CompleteOrthogonalDecomposition<Matrix>(jac).solve(-f);
            if (!delta.allFinite()) break;
            double alpha = 1.0;
            bool improved = false;
            for (int ls = 0; ls < 40; ++ls) {
                const Vector trial = u + alpha * delta;
                if ((trial.array() > 0.0).all()) {
                    const Vector ft = residual(trial);
                    const double tn = ft.norm();
                    if (tn < fnorm) {
                        u = trial;
                        f = ft;
                        fnorm = tn;
                        improved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if (!improved) break;
        }
        if (!ok && f.lpNorm<Eigen::Infinity>() <= opt.residual_tol * scale) ok = true;
        if (!ok || !(u.array() > 0.0).all()) continue;
        ++out.converged_starts;
        const bool known = std::any_of(roots.begin(), roots.end(), [&](const Vector& r) {
            return (r - u).lpNorm<Eigen::Infinity>() <= opt.cluster_tol;
        });
        if (!known) roots.push_back(u);
    }
    std::sort(roots.begin(), roots.end(), detail::lex_less);
    out.solutions = std::move(roots);
    out.status = out.solutions.empty() ? OracleStatus::inconclusive
                 : out.solutions.size() == 1 ? OracleStatus::unique
                                             : OracleStatus::multiple;
    return out;
}

// ---------------------------------------------------------------------------
// General trees: path weights around an internal node
// ---------------------------------------------------------------------------

struct PathWeights {
    std::string center;
    std::vector<std::string> neighbors;
    /// Leaf combination H_i = a_i' x summarizing the branch behind neighbor i
    /// (coefficients over topology().leaves()).
    std::vector<Vector> coefficients;
    /// Coupling of the center to neighbor i in the reduced information form.
    Vector couplings;
    /// w_i = sigma_c rho_(c,i) sum_r a_ir sigma_r prod_{P(x_r, i)} rho, so that
    /// E[H_i H_j] = w_i w_j / sigma_c^2 for i != j.
    Vector weights;
};

namespace detail {

struct BranchForm {
    std::vector<std::string> neighbors;
    std::vector<std::size_t> neighbor_ids;
    std::vector<Vector> coefficients;
    Vector couplings;
};

/// Marginalizes every internal node except the center and its internal
/// neighbors out of the candidate's latent-given-leaves information form.
inline BranchForm branch_form(const ModelParams& candidate, std::size_t c) {
    const auto& topo = candidate.topology();
    const auto latent = latent_information_given_leaves(candidate);
    const auto full = information_view(candidate);
    std::set<std::string> keep{topo.name(c)};
    for (const auto& [v, e] : topo.neighbors(c)) {
        if (!topo.is_leaf(v)) keep.insert(topo.name(v));
    }
    const auto reduced = marginalize_internal(latent, keep);
    auto pos = [&](const std::string& name) {
        return static_cast<Eigen::Index>(std::find(reduced.ordering.begin(), reduced.ordering.end(), name) -
                                         reduced.ordering.begin());
    };
    const auto pc = pos(topo.name(c));
    const auto n_leaves = static_cast<Eigen::Index>(topo.leaves().size());
    std::vector<std::pair<std::size_t, std::size_t>> nbrs(topo.neighbors(c).begin(), topo.neighbors(c).end());
    std::sort(nbrs.begin(), nbrs.end());
    BranchForm out;
    out.couplings.resize(static_cast<Eigen::Index>(nbrs.size()));
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
        const auto v = nbrs[k].first;
        out.neighbors.push_back(topo.name(v));
        out.neighbor_ids.push_back(v);
        if (topo.is_leaf(v)) {
            Vector a = Vector::Zero(n_leaves);
            const auto col = std::find(topo.leaves().begin(), topo.leaves().end(), v) - topo.leaves().begin();
            a(col) = 1.0;
            out.coefficients.push_back(std::move(a));
            out.couplings(static_cast<Eigen::Index>(k)) =
                -full.precision(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(v));
        } else {
            const auto pv = pos(topo.name(v));
            out.coefficients.push_back(reduced.field.row(pv).transpose());
            out.couplings(static_cast<Eigen::Index>(k)) = -reduced.precision(pc, pv) / reduced.precision(pv, pv);
        }
    }
    return out;
}

}  // namespace detail

/// Path weights around `center`, with branch combinations and couplings
/// taken from `candidate` and the weights evaluated under `model`.
inline PathWeights tree_path_weights(const ModelParams& candidate, const std::string& center, const ModelParams& model) {
    const auto& topo = candidate.topology();
    if (model.topology().nodes() != topo.nodes() || model.topology().edge_count() != topo.edge_count()) {
        throw InvalidArgument("tree_path_weights: candidate and model topologies differ");
    }
    const auto c = topo.index(center);
    if (topo.is_leaf(c)) throw InvalidArgument("tree_path_weights: center '" + center + "' is not internal");
    candidate.require_nondegenerate("tree_path_weights");
    const auto form = detail::branch_form(candidate, c);
    PathWeights out;
    out.center = center;
    out.neighbors = form.neighbors;
    out.coefficients = form.coefficients;
    out.couplings = form.couplings;
    out.weights.resize(static_cast<Eigen::Index>(form.neighbors.size()));
    const auto& leaves = topo.leaves();
    for (std::size_t k = 0; k < form.neighbor_ids.size(); ++k) {
        const auto v = form.neighbor_ids[k];
        double acc = 0.0;
        for (std::size_t r = 0; r < leaves.size(); ++r) {
            const double a = form.coefficients[k](static_cast<Eigen::Index>(r));
            if (a == 0.0) continue;
            double prod = model.sigma(leaves[r]);
            for (auto e : topo.path(leaves[r], v)) prod *= model.rho(e);
            acc += a * prod;
        }
        out.weights(static_cast<Eigen::Index>(k)) = model.sigma(c) * model.rho(topo.edge_index(c, v)) * acc;
    }
    return out;
}

inline PathWeights tree_path_weights(const ModelParams& candidate, const std::string& center) {
    return tree_path_weights(candidate, center, candidate);
}

/// Reduced system around `center`: with q = r o w (coupling times weight),
///   residual_j = q*_j (sum_{i != j} q*_i) - q~_j (sum_{i != j} q~_i),
/// where w* is evaluated under the truth and w~ under the candidate.
inline Vector reduced_system_residual(const ModelParams& candidate, const ModelParams& truth, const std::string& center) {
    const auto star = tree_path_weights(candidate, center, truth);
    const auto cand = tree_path_weights(candidate, center, candidate);
    const Vector qs = star.couplings.cwiseProduct(star.weights);
    const Vector qc = cand.couplings.cwiseProduct(cand.weights);
    return system_eval(qs) - system_eval(qc);
}

/// The 3x3 linear system of the two-latent elimination step:
///   [c1 c3, c2 c4, c1 c4 + c2 c3; c1^2, c2^2, 2 c1 c2; c3^2, c4^2, 2 c3 c4],
/// whose determinant is (c1 c4 - c2 c3)^3 in this row order; it vanishes
/// exactly when c1 c4 = c2 c3.
inline Matrix moment_system_matrix(double c1, double c2, double c3, double c4) {
    Matrix m(3, 3);
    m << c1 * c3, c2 * c4, c1 * c4 + c2 * c3, c1 * c1, c2 * c2, 2.0 * c1 * c2, c3 * c3, c4 * c4, 2.0 * c3 * c4;
    return m;
}

inline double moment_system_determinant(double c1, double c2, double c3, double c4) {
    const double d = c1 * c4 - c2 * c3;
    return d * d * d;
}

}  // namespace ltem
