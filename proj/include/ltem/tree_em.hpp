#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ltem/error.hpp"
#include "ltem/gaussian_ops.hpp"
#include "ltem/linalg.hpp"
#include "ltem/model.hpp"

namespace ltem {

/// Second moments over all nodes of the distribution that draws the leaves
/// from the supplied moments and the latents from the current model's
/// conditional given the leaves.
struct MixedMoments {
    std::vector<std::string> ordering;
    Matrix matrix;
};

namespace detail {

/// Leaf moments re-indexed to topology().leaves() order.
inline Matrix aligned_leaf_moments(const TreeTopology& topo, const GaussianMoments& leaf) {
    const auto names = topo.leaf_names();
    const auto n = static_cast<Eigen::Index>(names.size());
    if (leaf.covariance.rows() != n || leaf.covariance.cols() != n) {
        throw InvalidArgument("leaf moments have the wrong dimension for this topology");
    }
    if (leaf.ordering.empty() || leaf.ordering == names) return leaf.covariance;
    std::vector<Eigen::Index> pos(names.size());
    for (std::size_t k = 0; k < names.size(); ++k) {
        const auto it = std::find(leaf.ordering.begin(), leaf.ordering.end(), names[k]);
        if (it == leaf.ordering.end()) throw InvalidArgument("leaf moments are missing leaf '" + names[k] + "'");
        pos[k] = static_cast<Eigen::Index>(it - leaf.ordering.begin());
    }
    Matrix out(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) out(i, j) = leaf.covariance(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(j)]);
    }
    return out;
}

}  // namespace detail

/// E[x x'] = S, E[y x'] = Lambda S, E[y y'] = C + Lambda S Lambda', with
/// (Lambda, C) from condition_on_leaves(current).
inline MixedMoments mixed_moments(const ModelParams& current, const GaussianMoments& leaf) {
    const auto& topo = current.topology();
    const Matrix s = detail::aligned_leaf_moments(topo, leaf);
    const auto cond = condition_on_leaves(current);
    const auto n = static_cast<Eigen::Index>(topo.node_count());
    MixedMoments out{topo.nodes(), Matrix::Zero(n, n)};
    const auto& leaves = topo.leaves();
    const auto& internals = topo.internals();
    const Matrix ys = cond.coefficients * s;
    const Matrix yy = cond.covariance + ys * cond.coefficients.transpose();
    for (std::size_t a = 0; a < leaves.size(); ++a) {
        const auto ia = static_cast<Eigen::Index>(leaves[a]);
        for (std::size_t b = 0; b < leaves.size(); ++b) {
            out.matrix(ia, static_cast<Eigen::Index>(leaves[b])) = s(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        }
        for (std::size_t k = 0; k < internals.size(); ++k) {
            const auto ik = static_cast<Eigen::Index>(internals[k]);
            const double v = ys(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(a));
            out.matrix(ik, ia) = v;
            out.matrix(ia, ik) = v;
        }
    }
    for (std::size_t k = 0; k < internals.size(); ++k) {
        for (std::size_t l = 0; l < internals.size(); ++l) {
            out.matrix(static_cast<Eigen::Index>(internals[k]), static_cast<Eigen::Index>(internals[l])) =
                0.5 * (yy(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) +
                       yy(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k)));
        }
    }
    return out;
}

struct MStepResult {
    ModelParams params;
    /// Internal-node variances before renormalization to 1 (lexicographic internal order).
    std::vector<double> raw_internal_variance;
    /// Some correlation left [0,1] by rounding and was clamped.
    bool clamped = false;
};

/// Edge-wise moment matching: rho_uv = E[z_u z_v] / sqrt(E[z_u^2] E[z_v^2]),
/// sigma_leaf^2 = E[x^2], internal sigmas renormalized to 1 (the correlations
/// do not depend on that scale). Correlations are kept in [0, 1 - 1e-15].
inline MStepResult m_step(const MixedMoments& mixed, const TreeTopology& topology) {
    if (mixed.ordering != topology.nodes()) throw InvalidArgument("m_step: moment ordering does not match topology");
    const auto& m = mixed.matrix;
    for (std::size_t i = 0; i < topology.node_count(); ++i) {
        const double d = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
        if (!(d > 0.0) || !std::isfinite(d)) {
            throw DegenerateModel("m_step: nonpositive second moment for node '" + topology.name(i) + "'");
        }
    }
    MStepResult out;
    std::vector<double> rho(topology.edge_count());
    for (std::size_t e = 0; e < topology.edge_count(); ++e) {
        const auto a = static_cast<Eigen::Index>(topology.edges()[e].a);
        const auto b = static_cast<Eigen::Index>(topology.edges()[e].b);
        double r = m(a, b) / std::sqrt(m(a, a) * m(b, b));
        if (r > 1.0 - 1e-15) {
            r = 1.0 - 1e-15;
            out.clamped = true;
        } else if (r < 0.0) {
            r = 0.0;
            out.clamped = true;
        }
        rho[e] = r;
    }
    std::vector<double> sigma(topology.node_count(), 1.0);
    for (auto i : topology.leaves()) sigma[i] = std::sqrt(m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
    for (auto i : topology.internals()) out.raw_internal_variance.push_back(m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
    out.params = ModelParams(topology, std::move(rho), std::move(sigma));
    return out;
}

inline ModelParams population_step_tree(const ModelParams& current, const GaussianMoments& leaf) {
    return m_step(mixed_moments(current, leaf), current.topology()).params;
}

struct FixpointResidual {
    /// False when the current model is degenerate (some rho_e = 1); no residual then.
    bool ok = true;
    std::string status = "ok";
    std::vector<double> residual;

    [[nodiscard]] double max() const {
        double out = 0.0;
        for (double r : residual) out = std::max(out, r);
        return out;
    }
};

/// residual_e = |rho'_e - rho_e| for one population step.
inline FixpointResidual fixpoint_residual(const ModelParams& current, const GaussianMoments& leaf) {
    FixpointResidual out;
    if (!current.is_nondegenerate()) {
        out.ok = false;
        out.status = "degenerate";
        return out;
    }
    const auto next = population_step_tree(current, leaf);
    for (std::size_t e = 0; e < current.rho().size(); ++e) out.residual.push_back(std::abs(next.rho(e) - current.rho(e)));
    return out;
}

struct MomentGaps {
    double cross = 0.0;
    double square_first = 0.0;
    double square_second = 0.0;

    [[nodiscard]] double max() const { return std::max({cross, square_first, square_second}); }
};

/// For every edge between two internal nodes (y1, y2), with m_k = E_cand[y_k | x]
/// the candidate's conditional means, the gaps between the truth-leaf and
/// candidate-leaf expectations of m_1 m_2, m_1^2 and m_2^2.
inline std::map<EdgeKey, MomentGaps> moment_identity_check(const ModelParams& candidate,
                                                           const GaussianMoments& truth_leaf) {
    const auto& topo = candidate.topology();
    const Matrix s_truth = detail::aligned_leaf_moments(topo, truth_leaf);
    const Matrix diff = s_truth - leaf_covariance(candidate).matrix;
    const auto cond = condition_on_leaves(candidate);
    std::map<std::size_t, Eigen::Index> row;
    for (std::size_t k = 0; k < topo.internals().size(); ++k) row[topo.internals()[k]] = static_cast<Eigen::Index>(k);
    std::map<EdgeKey, MomentGaps> out;
    for (std::size_t e = 0; e < topo.edge_count(); ++e) {
        const auto a = topo.edges()[e].a;
        const auto b = topo.edges()[e].b;
        if (topo.is_leaf(a) || topo.is_leaf(b)) continue;
        const Vector l1 = cond.coefficients.row(row.at(a)).transpose();
        const Vector l2 = cond.coefficients.row(row.at(b)).transpose();
        out[topo.edge_key(e)] = {std::abs(l1.dot(diff * l2)), std::abs(l1.dot(diff * l1)), std::abs(l2.dot(diff * l2))};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Iteration
// ---------------------------------------------------------------------------

struct TreeEmOptions {
    std::size_t max_iter = 100000;
    double tol = 1e-10;
    double monotonicity_slack = 1e-10;
    std::size_t record_stride = 0;
};

struct TreeEmRecord {
    std::size_t iteration = 0;
    std::vector<double> rho;
    double kl = 0.0;
    double step = 0.0;
};

struct TreeEmTrace {
    ModelParams final_params;
    std::vector<TreeEmRecord> records;
    std::size_t iterations = 0;
    bool converged = false;
    double final_step = 0.0;
    /// KL(leaf moments || iterate leaves) increases beyond the slack.
    std::size_t monotonicity_violations = 0;
    double worst_violation = 0.0;
    bool clamp_fired = false;
    double initial_kl = 0.0;
    double final_kl = 0.0;
    std::vector<double> raw_internal_variance;
    std::vector<std::string> warnings;
};

/// Iterates population_step_tree against `leaf`, which is either the exact leaf
/// covariance of a truth (population mode) or an empirical second-moment
/// matrix (sample mode).
inline TreeEmTrace run_tree_em(const ModelParams& initial, const GaussianMoments& leaf, const TreeEmOptions& opt = {}) {
    const auto& topo = initial.topology();
    const GaussianMoments target{topo.leaf_names(), detail::aligned_leaf_moments(topo, leaf)};
    TreeEmTrace trace;
    if (!topo.is_identifiable()) trace.warnings.push_back("topology has internal nodes of degree < 3 (non-identifiable)");
    for (double r : initial.rho()) {
        if (!(r > 0.0 && r < 1.0)) {
            trace.warnings.push_back("initial correlation outside (0,1)");
            break;
        }
    }
    auto kl_of = [&](const ModelParams& p) { return gaussian_kl(target, leaf_moments(p)); };
    ModelParams cur = initial;
    double prev_kl = kl_of(cur);
    trace.initial_kl = prev_kl;
    if (opt.record_stride > 0) trace.records.push_back({0, cur.rho(), prev_kl, 0.0});
    for (std::size_t t = 1; t <= opt.max_iter; ++t) {
        auto res = m_step(mixed_moments(cur, target), topo);
        trace.clamp_fired = trace.clamp_fired || res.clamped;
        double step = 0.0;
        for (std::size_t e = 0; e < cur.rho().size(); ++e) step = std::max(step, std::abs(res.params.rho(e) - cur.rho(e)));
        if (!std::isfinite(step)) throw Error("run_tree_em: non-finite iterate at iteration " + std::to_string(t));
        const double kl = kl_of(res.params);
        if (kl - prev_kl > opt.monotonicity_slack) ++trace.monotonicity_violations;
        trace.worst_violation = std::max(trace.worst_violation, kl - prev_kl);
        prev_kl = kl;
        cur = std::move(res.params);
        trace.raw_internal_variance = std::move(res.raw_internal_variance);
        trace.iterations = t;
        trace.final_step = step;
        const bool done = step <= opt.tol;
        if (opt.record_stride > 0 && (t % opt.record_stride == 0 || done || t == opt.max_iter)) {
            trace.records.push_back({t, cur.rho(), kl, step});
        }
        if (done) {
            trace.converged = true;
            break;
        }
    }
    trace.final_kl = prev_kl;
    trace.final_params = cur;
    return trace;
}

}  // namespace ltem
