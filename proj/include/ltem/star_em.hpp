#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ltem/error.hpp"
#include "ltem/gaussian_ops.hpp"
#include "ltem/linalg.hpp"
#include "ltem/philox.hpp"
#include "ltem/sampling.hpp"

namespace ltem {

/// Iterate of the star EM. Leaf i is x_(i+1); sigma_y is carried along but is
/// not identifiable from leaf data.
struct StarState {
    Vector rho;
    Vector sigma_x;
    double sigma_y = 1.0;
    std::size_t iteration = 0;

    StarState() = default;
    StarState(Vector r, Vector sx, double sy = 1.0, std::size_t it = 0)
        : rho(std::move(r)), sigma_x(std::move(sx)), sigma_y(sy), iteration(it) {
        if (rho.size() != sigma_x.size()) throw InvalidArgument("StarState: rho and sigma_x sizes differ");
        if (rho.size() == 0) throw InvalidArgument("StarState: empty state");
    }
    explicit StarState(Vector r) : StarState(r, Vector::Ones(r.size())) {}

    [[nodiscard]] Eigen::Index size() const noexcept { return rho.size(); }
};

inline StarState star_state_from_model(const ModelParams& params) {
    const auto& topo = params.topology();
    if (!topo.is_star()) throw InvalidArgument("model is not a star");
    Vector sx(static_cast<Eigen::Index>(topo.leaves().size()));
    for (std::size_t k = 0; k < topo.leaves().size(); ++k) sx(static_cast<Eigen::Index>(k)) = params.sigma(topo.leaves()[k]);
    return {star_rho(params), sx, params.sigma(topo.internals().front())};
}

inline ModelParams star_state_to_model(const StarState& s) {
    return make_star(std::vector<double>(s.rho.data(), s.rho.data() + s.rho.size()),
                     std::vector<double>(s.sigma_x.data(), s.sigma_x.data() + s.sigma_x.size()), s.sigma_y);
}

/// lambda_i = (rho_i / (1 - rho_i^2)) / (1 + sum_j rho_j^2 / (1 - rho_j^2)), so that
/// E[y | x] = sigma_y sum_i lambda_i x_i / sigma_i.
inline Vector lambda_coeffs(const Vector& rho) {
    detail::require_open_unit(rho, "lambda_coeffs");
    Vector a(rho.size());
    double b = 0.0;
    for (Eigen::Index i = 0; i < rho.size(); ++i) {
        a(i) = rho(i) / ((1.0 - rho(i)) * (1.0 + rho(i)));
        b += rho(i) * a(i);
    }
    return a / (1.0 + b);
}

/// Leaf distribution the population EM is run against: correlations rho and
/// standard deviations sigma of the true star.
struct PopulationTarget {
    Vector rho;
    Vector sigma;

    PopulationTarget() = default;
    PopulationTarget(Vector r, Vector s) : rho(std::move(r)), sigma(std::move(s)) {
        if (rho.size() != sigma.size()) throw InvalidArgument("PopulationTarget: size mismatch");
    }
    explicit PopulationTarget(Vector r) : PopulationTarget(r, Vector::Ones(r.size())) {}

    /// Leaf correlation matrix: 1 on the diagonal, rho_i rho_j elsewhere.
    [[nodiscard]] Matrix correlation() const {
        Matrix a = rho * rho.transpose();
        a.diagonal().setOnes();
        return a;
    }
    [[nodiscard]] Matrix covariance() const { return sigma.asDiagonal() * correlation() * sigma.asDiagonal(); }
};

/// One exact EM step of the star model against leaf second moments with
/// correlation matrix `target_corr` and standard deviations `target_sigma`.
///
/// With s_i = target_sigma_i / sigma_i, v_i = lambda_i s_i and B = sum rho_i^2/(1-rho_i^2):
///   rho'_i = (A v)_i / sqrt(D),  D = 1/(1 + B) + v'Av,  sigma_y' = sigma_y sqrt(D),
/// where 1/(1+B) = Var(y | x) / sigma_y^2. When sigma = target_sigma this is
///   rho'_i = (lambda_i + sum_{j!=i} A_ij lambda_j) / sqrt(1 + sum_{j!=k} Delta_jk lambda_j lambda_k),
/// Delta_jk = A_jk - rho_j rho_k.
///
/// If some rho_i equals 1 (lowest such i), y is a scaled copy of x_i and the
/// step returns rho'_i = 1, rho'_j = A_ij.
inline StarState star_em_step(const StarState& state, const Matrix& target_corr, const Vector& target_sigma) {
    const auto n = state.size();
    if (target_corr.rows() != n || target_corr.cols() != n || target_sigma.size() != n) {
        throw InvalidArgument("star EM step: dimension mismatch between state and target");
    }
    StarState next;
    next.sigma_x = target_sigma;
    next.iteration = state.iteration + 1;
    next.rho.resize(n);
    const Vector s = target_sigma.cwiseQuotient(state.sigma_x);

    for (Eigen::Index i = 0; i < n; ++i) {
        if (state.rho(i) >= 1.0) {
            for (Eigen::Index j = 0; j < n; ++j) next.rho(j) = j == i ? 1.0 : target_corr(i, j);
            next.sigma_y = state.sigma_y * s(i);
            return next;
        }
    }
    Vector v(n);
    double b = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double r = state.rho(i);
        const double a = r / ((1.0 - r) * (1.0 + r));
        v(i) = a;
        b += r * a;
    }
    v = (v / (1.0 + b)).cwiseProduct(s);
    const Vector num = target_corr * v;
    const double den = 1.0 / (1.0 + b) + v.dot(num);
    const double root = std::sqrt(den);
    next.rho = num / root;
    next.sigma_y = state.sigma_y * root;
    return next;
}

/// Population step against a truth with unit-free correlations truth_rho and
/// the state's own leaf sigmas (sigma_x is unchanged).
inline StarState population_step(const StarState& state, const Vector& truth_rho) {
    return star_em_step(state, PopulationTarget(truth_rho).correlation(), state.sigma_x);
}

inline StarState population_step(const StarState& state, const PopulationTarget& truth) {
    return star_em_step(state, truth.correlation(), truth.sigma);
}

/// Sample step: the target moments are sigma_hat and alpha_hat.
inline StarState sample_step(const StarState& state, const EmpiricalStats& stats) {
    return star_em_step(state, stats.alpha_hat, stats.sigma_hat);
}

// ---------------------------------------------------------------------------
// Iteration
// ---------------------------------------------------------------------------

inline constexpr double kClampEpsilon = 1e-15;

struct EmRecord {
    std::size_t iteration = 0;
    Vector rho;
    double loglik = std::numeric_limits<double>::quiet_NaN();
    double kl = std::numeric_limits<double>::quiet_NaN();
    double step = 0.0;
};

struct EmOptions {
    std::size_t max_iter = 100000;
    double tol = 1e-10;
    double monotonicity_slack = 1e-10;
    /// Keep every k-th iteration in EmTrace::records (0 keeps none; the last
    /// iteration is always kept when k > 0).
    std::size_t record_stride = 1;
    /// Truth for KL(truth || iterate) in sample mode.
    std::optional<PopulationTarget> truth;
    /// Optional point whose ball the trace is watched for leaving.
    std::optional<Vector> watch_point;
    double watch_radius = 1e-2;
};

struct EmTrace {
    std::vector<EmRecord> records;
    StarState final_state;
    std::size_t iterations = 0;
    bool converged = false;
    double final_step = 0.0;
    bool sample_mode = false;
    /// KL(target || iterate) increases (population) or log-likelihood decreases (sample).
    std::size_t monotonicity_violations = 0;
    /// KL(truth || iterate) increases in sample mode; informational, EM does not guarantee it.
    std::size_t truth_kl_increases = 0;
    double worst_violation = 0.0;
    double min_rho = std::numeric_limits<double>::infinity();
    double max_rho = -std::numeric_limits<double>::infinity();
    bool clamp_fired = false;
    std::size_t clamp_count = 0;
    std::optional<std::size_t> watch_exit_iteration;
    double initial_objective = std::numeric_limits<double>::quiet_NaN();
    double final_objective = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> warnings;
};

/// Fast leaf-covariance quantities for a star: Sigma = D (diag(1-rho^2) + rho rho') D.
struct StarObjective {
    Matrix target;
    double target_logdet = 0.0;

    explicit StarObjective(Matrix t) : target(std::move(t)) {
        target_logdet = SymmetricFactor(target, "target second moments").log_det();
    }

    /// Returns (log-likelihood, KL(target || model)); NaN when some rho_i = 1.
    [[nodiscard]] std::pair<double, double> evaluate(const Vector& rho, const Vector& sigma) const {
        if ((rho.array() >= 1.0).any()) {
            const double nan = std::numeric_limits<double>::quiet_NaN();
            return {nan, nan};
        }
        const auto n = static_cast<double>(rho.size());
        const Matrix inv = star_inverse(rho);
        const Vector sinv = sigma.cwiseInverse();
        const double trace = (sinv.asDiagonal() * inv * sinv.asDiagonal()).cwiseProduct(target).sum();
        const double logdet = 2.0 * sigma.array().log().sum() + star_logdet(rho);
        const double loglik = -0.5 * (n * std::log(2.0 * std::numbers::pi) + logdet + trace);
        const double kl = 0.5 * (logdet - target_logdet - n + trace);
        return {loglik, kl};
    }
};

namespace detail {

inline void clamp_iterate(StarState& next, const StarState& prev, EmTrace& trace) {
    for (Eigen::Index i = 0; i < next.size(); ++i) {
        if (prev.rho(i) == 0.0 || prev.rho(i) == 1.0) continue;
        if (next.rho(i) < kClampEpsilon) {
            next.rho(i) = kClampEpsilon;
            trace.clamp_fired = true;
            ++trace.clamp_count;
        } else if (next.rho(i) > 1.0 - kClampEpsilon) {
            next.rho(i) = 1.0 - kClampEpsilon;
            trace.clamp_fired = true;
            ++trace.clamp_count;
        }
    }
}

}  // namespace detail

using StarData = std::variant<EmpiricalStats, PopulationTarget>;

/// Iterates the population or sample step until the l-infinity step is <= tol
/// or max_iter steps have been taken. Rho is clamped to
/// [kClampEpsilon, 1 - kClampEpsilon] after each step; a fired clamp is
/// recorded as an anomaly.
inline EmTrace run_em(const StarState& initial, const StarData& data, const EmOptions& opt = {}) {
    const bool sample_mode = std::holds_alternative<EmpiricalStats>(data);
    const Matrix corr = sample_mode ? std::get<EmpiricalStats>(data).alpha_hat : std::get<PopulationTarget>(data).correlation();
    const Vector tsigma = sample_mode ? std::get<EmpiricalStats>(data).sigma_hat : std::get<PopulationTarget>(data).sigma;
    if (corr.rows() != initial.size()) throw InvalidArgument("run_em: data dimension does not match the state");

    EmTrace trace;
    trace.sample_mode = sample_mode;
    for (Eigen::Index i = 0; i < initial.size(); ++i) {
        if (!(initial.rho(i) > 0.0 && initial.rho(i) < 1.0)) {
            trace.warnings.push_back("initial correlation " + std::to_string(i + 1) + " is outside (0,1)");
        }
    }

    const StarObjective objective(tsigma.asDiagonal() * corr * tsigma.asDiagonal());
    std::optional<StarObjective> truth_objective;
    if (opt.truth) truth_objective.emplace(opt.truth->covariance());

    auto measure = [&](const StarState& s, EmRecord& rec) {
        const auto [ll, kl] = objective.evaluate(s.rho, s.sigma_x);
        rec.loglik = ll;
        rec.kl = sample_mode ? (truth_objective ? truth_objective->evaluate(s.rho, s.sigma_x).second
                                                : std::numeric_limits<double>::quiet_NaN())
                             : kl;
        return sample_mode ? ll : kl;
    };

    StarState cur = initial;
    EmRecord rec;
    rec.iteration = 0;
    rec.rho = cur.rho;
    double prev_obj = measure(cur, rec);
    double prev_truth_kl = rec.kl;
    trace.initial_objective = prev_obj;
    if (opt.record_stride > 0) trace.records.push_back(rec);
    bool inside_watch = opt.watch_point && (cur.rho - *opt.watch_point).lpNorm<Eigen::Infinity>() <= opt.watch_radius;

    for (std::size_t t = 1; t <= opt.max_iter; ++t) {
        StarState next = sample_mode ? sample_step(cur, std::get<EmpiricalStats>(data))
                                     : star_em_step(cur, corr, tsigma);
        if (!next.rho.allFinite() || !std::isfinite(next.sigma_y)) {
            throw Error("run_em: non-finite iterate at iteration " + std::to_string(t));
        }
        detail::clamp_iterate(next, cur, trace);
        const double step = (next.rho - cur.rho).lpNorm<Eigen::Infinity>();
        trace.min_rho = std::min(trace.min_rho, next.rho.minCoeff());
        trace.max_rho = std::max(trace.max_rho, next.rho.maxCoeff());

        rec.iteration = t;
        rec.step = step;
        const double obj = measure(next, rec);
        if (std::isfinite(obj) && std::isfinite(prev_obj)) {
            const double worsening = sample_mode ? prev_obj - obj : obj - prev_obj;
            if (worsening > opt.monotonicity_slack) {
                ++trace.monotonicity_violations;
            }
            trace.worst_violation = std::max(trace.worst_violation, worsening);
        }
        if (sample_mode && std::isfinite(rec.kl) && std::isfinite(prev_truth_kl) &&
            rec.kl > prev_truth_kl + opt.monotonicity_slack) {
            ++trace.truth_kl_increases;
        }
        prev_obj = obj;
        prev_truth_kl = rec.kl;
        if (opt.watch_point && inside_watch && !trace.watch_exit_iteration &&
            (next.rho - *opt.watch_point).lpNorm<Eigen::Infinity>() > opt.watch_radius) {
            trace.watch_exit_iteration = t;
        }
        cur = std::move(next);
        trace.iterations = t;
        trace.final_step = step;
        const bool done = step <= opt.tol;
        if (opt.record_stride > 0 && (t % opt.record_stride == 0 || done || t == opt.max_iter)) {
            rec.rho = cur.rho;
            trace.records.push_back(rec);
        }
        if (done) {
            trace.converged = true;
            break;
        }
    }
    trace.final_objective = prev_obj;
    trace.final_state = cur;
    return trace;
}

/// Default initialization: every rho_i = 0.5, unit sigmas.
inline StarState initial_half(Eigen::Index n) { return StarState(Vector::Constant(n, 0.5)); }

/// Uniform initialization in [0.1, 0.9] from the Philox stream of `seed`.
inline StarState initial_random(Eigen::Index n, std::uint64_t seed) {
    Vector rho(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto bits = Philox4x64::block({static_cast<std::uint64_t>(i), 0, 1, 0}, {seed, 0});
        rho(i) = 0.1 + 0.8 * open_unit(bits[0]);
    }
    return StarState(rho);
}

// ---------------------------------------------------------------------------
// Stationary points
// ---------------------------------------------------------------------------

enum class StationaryKind { truth, zero, boundary, none };

inline std::string to_string(StationaryKind k) {
    switch (k) {
        case StationaryKind::truth: return "truth";
        case StationaryKind::zero: return "zero";
        case StationaryKind::boundary: return "boundary";
        case StationaryKind::none: return "none";
    }
    return "none";
}

struct AnalyticPoint {
    StationaryKind kind = StationaryKind::none;
    /// 0-based coordinate set to 1 for boundary points.
    std::size_t index = 0;
    Vector point;

    [[nodiscard]] std::string label() const {
        return kind == StationaryKind::boundary ? "boundary(" + std::to_string(index + 1) + ")" : to_string(kind);
    }
};

struct StationaryReport {
    StationaryKind kind = StationaryKind::none;
    std::size_t index = 0;
    /// l-infinity distance to the nearest analytic point.
    double distance = std::numeric_limits<double>::infinity();
    /// Nearest analytic point (whether or not it is within the threshold).
    Vector point;

    [[nodiscard]] std::string label() const {
        return kind == StationaryKind::boundary ? "boundary(" + std::to_string(index + 1) + ")" : to_string(kind);
    }
};

/// The truth, the origin and the boundary points g^i (g^i_i = 1,
/// g^i_j = rho*_i rho*_j): n + 2 points.
inline std::vector<AnalyticPoint> analytic_stationary_points(const Vector& truth_rho) {
    const auto n = truth_rho.size();
    std::vector<AnalyticPoint> out;
    out.push_back({StationaryKind::truth, 0, truth_rho});
    out.push_back({StationaryKind::zero, 0, Vector::Zero(n)});
    for (Eigen::Index i = 0; i < n; ++i) {
        Vector g = truth_rho(i) * truth_rho;
        g(i) = 1.0;
        out.push_back({StationaryKind::boundary, static_cast<std::size_t>(i), std::move(g)});
    }
    return out;
}

inline StationaryReport classify_point(const Vector& rho, const Vector& truth_rho, double threshold = 1e-6) {
    if (!(threshold > 0.0)) throw InvalidArgument("classify_point: threshold must be positive");
    if (rho.size() != truth_rho.size()) throw InvalidArgument("classify_point: dimension mismatch");
    StationaryReport out;
    for (const auto& p : analytic_stationary_points(truth_rho)) {
        const double d = (rho - p.point).lpNorm<Eigen::Infinity>();
        if (d < out.distance) {
            out.distance = d;
            out.kind = p.kind;
            out.index = p.index;
            out.point = p.point;
        }
    }
    if (!(out.distance <= threshold)) {
        out.kind = StationaryKind::none;
        out.index = 0;
    }
    return out;
}

struct SaddleDiagnostics {
    double push_back = 0.0;
    double alignment = 0.0;
    StarState next;
};

/// One population step from a state near the boundary point g^i:
///   push_back = rho'_i - rho_i,
///   alignment = max_{j != i} |rho'_j - rho*_i rho*_j| / (1 - rho'_i).
/// Requires |rho_i - 1| <= 1e-2 and every other coordinate within 1e-1 of g^i.
inline SaddleDiagnostics saddle_diagnostics(const StarState& state, const Vector& truth_rho, std::size_t index = 0) {
    const auto n = truth_rho.size();
    if (state.size() != n) throw InvalidArgument("saddle_diagnostics: dimension mismatch");
    const auto i = static_cast<Eigen::Index>(index);
    if (i >= n) throw InvalidArgument("saddle_diagnostics: coordinate out of range");
    if (!(std::abs(state.rho(i) - 1.0) <= 1e-2)) {
        throw InvalidArgument("saddle_diagnostics: state is not in the diagnostic neighborhood (|rho_i - 1| > 1e-2)");
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        if (j != i && !(std::abs(state.rho(j) - truth_rho(i) * truth_rho(j)) <= 1e-1)) {
            throw InvalidArgument("saddle_diagnostics: state is not in the diagnostic neighborhood");
        }
    }
    SaddleDiagnostics out;
    out.next = population_step(state, truth_rho);
    out.push_back = out.next.rho(i) - state.rho(i);
    const double gap = 1.0 - out.next.rho(i);
    double worst = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (j != i) worst = std::max(worst, std::abs(out.next.rho(j) - truth_rho(i) * truth_rho(j)));
    }
    out.alignment = worst == 0.0 ? 0.0 : (gap > 0.0 ? worst / gap : std::numeric_limits<double>::infinity());
    return out;
}

struct PushbackFit {
    double c = 0.0;
    double r_squared = 0.0;
    std::vector<double> deltas;
    std::vector<double> push_backs;
};

/// Least-squares fit of push_back ~ -C delta^2 (through the origin) from
/// states with rho_i = 1 - delta and the other coordinates exactly at g^i.
inline PushbackFit fit_pushback(const Vector& truth_rho, const std::vector<double>& deltas, std::size_t index = 0) {
    PushbackFit fit;
    fit.deltas = deltas;
    double sxy = 0.0;
    double sxx = 0.0;
    for (double d : deltas) {
        Vector rho = truth_rho(static_cast<Eigen::Index>(index)) * truth_rho;
        rho(static_cast<Eigen::Index>(index)) = 1.0 - d;
        const auto diag = saddle_diagnostics(StarState(rho), truth_rho, index);
        fit.push_backs.push_back(diag.push_back);
        sxy += d * d * diag.push_back;
        sxx += d * d * d * d;
    }
    fit.c = -sxy / sxx;
    double mean = 0.0;
    for (double p : fit.push_backs) mean += p;
    mean /= static_cast<double>(fit.push_backs.size());
    double ss_res = 0.0;
    double ss_tot = 0.0;
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        const double model = -fit.c * deltas[k] * deltas[k];
        ss_res += (fit.push_backs[k] - model) * (fit.push_backs[k] - model);
        ss_tot += (fit.push_backs[k] - mean) * (fit.push_backs[k] - mean);
    }
    fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
    return fit;
}

}  // namespace ltem
