#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ltem/fixpoint.hpp"
#include "ltem/gaussian_ops.hpp"
#include "ltem/random.hpp"
#include "ltem/sampling.hpp"
#include "ltem/star_em.hpp"
#include "ltem/tree_em.hpp"

namespace ltem {

struct PropertyCheck {
    std::string name;
    bool passed = false;
    std::size_t cases = 0;
    double worst = 0.0;
    std::string detail;
};

struct VerifyResult {
    std::string suite;
    std::uint64_t seed = 0;
    std::vector<PropertyCheck> checks;

    [[nodiscard]] bool passed() const {
        for (const auto& c : checks) {
            if (!c.passed) return false;
        }
        return !checks.empty();
    }
};

inline const std::vector<std::string>& verify_suites() {
    static const std::vector<std::string> names{"algebra", "star", "tree", "fixpoint", "sampling"};
    return names;
}

namespace detail {

/// Records the largest measured value and passes iff it stays <= limit.
struct Tally {
    PropertyCheck check;
    double limit;

    Tally(std::string name, double lim) : limit(lim) { check.name = std::move(name); }

    void add(double value) {
        ++check.cases;
        if (!(value <= check.worst) || std::isnan(value)) check.worst = std::isnan(value) ? INFINITY : value;
    }

    PropertyCheck finish() {
        check.passed = check.cases > 0 && check.worst <= limit;
        std::ostringstream d;
        d << "worst " << check.worst << " (limit " << limit << ") over " << check.cases << " cases";
        check.detail = d.str();
        return check;
    }
};

inline double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

inline double rel_error(const Matrix& a, const Matrix& b) {
    return max_abs(a - b) / std::max(1.0, max_abs(b));
}

inline VerifyResult verify_algebra(std::uint64_t seed) {
    VerifyResult out{"algebra", seed, {}};
    UniformStream rng(seed, 1);

    Tally round("covariance/information round trip", 1e-9);
    Tally sparsity("information sparsity off the edges", 1e-10);
    Tally path("leaf covariance path products", 1e-12);
    Tally commute("marginalization commutes", 1e-10);
    for (int trial = 0; trial < 40; ++trial) {
        const auto topo = random_tree(1 + rng.index(4), rng, rng.index(3));
        auto params = random_params(topo, rng, 0.05, 0.95);
        std::vector<double> sigma(topo.node_count());
        for (auto& s : sigma) s = rng.uniform(0.5, 2.0);
        params = params.with_sigma(sigma);
        const auto cov = full_covariance(params).matrix;
        const auto info = information_view(params);
        round.add(rel_error(Matrix(info.precision * cov), Matrix::Identity(cov.rows(), cov.cols())));
        double off = 0.0;
        for (std::size_t i = 0; i < topo.node_count(); ++i) {
            for (std::size_t j = 0; j < topo.node_count(); ++j) {
                const bool adjacent = i == j || std::any_of(topo.neighbors(i).begin(), topo.neighbors(i).end(),
                                                            [&](const auto& nb) { return nb.first == j; });
                if (!adjacent) off = std::max(off, std::abs(info.precision(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
            }
        }
        sparsity.add(off);
        const auto leaf = leaf_covariance(params);
        double worst = 0.0;
        for (std::size_t a = 0; a < leaf.ordering.size(); ++a) {
            for (std::size_t b = 0; b < leaf.ordering.size(); ++b) {
                double expect = params.sigma(leaf.ordering[a]) * params.sigma(leaf.ordering[b]);
                for (auto e : topo.path(topo.index(leaf.ordering[a]), topo.index(leaf.ordering[b]))) expect *= params.rho(e);
                worst = std::max(worst, std::abs(leaf.matrix(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) - expect));
            }
        }
        path.add(worst);
        if (topo.internals().size() >= 3) {
            const auto latent = latent_information_given_leaves(params);
            const auto names = topo.internal_names();
            std::set<std::string> keep_a(names.begin() + 1, names.end());
            std::set<std::string> keep_ab(names.begin() + 2, names.end());
            const auto two = marginalize_internal(marginalize_internal(latent, keep_a), keep_ab);
            const auto one = marginalize_internal(latent, keep_ab);
            commute.add(std::max(rel_error(two.precision, one.precision), rel_error(two.field, one.field)));
        }
    }
    out.checks.push_back(round.finish());
    out.checks.push_back(sparsity.finish());
    out.checks.push_back(path.finish());
    out.checks.push_back(commute.finish());

    Tally lambda("star conditioning reproduces lambda", 1e-12);
    Tally sm("Sherman-Morrison inverse vs dense", 1e-9);
    Tally mdl("determinant lemma vs dense", 1e-9);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = static_cast<Eigen::Index>(1 + rng.index(12));
        const Vector rho = rng.uniform_vector(n, 0.0, 0.95);
        const auto model = make_star(std::vector<double>(rho.data(), rho.data() + n));
        const auto cond = condition_on_leaves(model);
        lambda.add(max_abs(cond.coefficients.row(0).transpose() - lambda_coeffs(rho)));
        const auto dense = leaf_covariance(model).matrix;
        sm.add(rel_error(star_inverse(rho), dense.inverse()));
        mdl.add(std::abs(star_logdet(rho) - std::log(dense.determinant())) / std::max(1.0, std::abs(star_logdet(rho))));
    }
    out.checks.push_back(lambda.finish());
    out.checks.push_back(sm.finish());
    out.checks.push_back(mdl.finish());

    Tally kl_nonneg("KL nonnegative", 0.0);
    Tally decomposition("log-likelihood = -n/2 - log|2 pi S|/2 - KL", 1e-9);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = static_cast<Eigen::Index>(1 + rng.index(6));
        Matrix a(n, n), b(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                a(i, j) = rng.uniform(-1, 1);
                b(i, j) = rng.uniform(-1, 1);
            }
        }
        const Matrix p = a * a.transpose() + 0.1 * Matrix::Identity(n, n);
        const Matrix q = b * b.transpose() + 0.1 * Matrix::Identity(n, n);
        kl_nonneg.add(-gaussian_kl({{}, p}, {{}, q}));
        const Vector rho = rng.uniform_vector(n, 0.05, 0.9);
        const auto model = make_star(std::vector<double>(rho.data(), rho.data() + n));
        const GaussianMoments emp{model.topology().leaf_names(), p};
        const double nn = static_cast<double>(n);
        const double rhs = -0.5 * nn - 0.5 * (nn * std::log(2.0 * std::numbers::pi) + std::log(p.determinant())) -
                           gaussian_kl(emp, leaf_moments(model));
        decomposition.add(std::abs(leaf_loglikelihood(model, emp) - rhs));
    }
    out.checks.push_back(kl_nonneg.finish());
    out.checks.push_back(decomposition.finish());
    return out;
}

inline VerifyResult verify_star(std::uint64_t seed) {
    VerifyResult out{"star", seed, {}};
    UniformStream rng(seed, 2);

    Tally fixed("analytic stationary points are fixed", 1e-14);
    for (int trial = 0; trial < 12; ++trial) {
        const auto n = static_cast<Eigen::Index>(3 + rng.index(6));
        const Vector truth = rng.uniform_vector(n, 0.1, 0.9);
        for (const auto& p : analytic_stationary_points(truth)) {
            fixed.add((population_step(StarState(p.point), truth).rho - p.point).lpNorm<Eigen::Infinity>());
        }
    }
    out.checks.push_back(fixed.finish());

    Tally interior("interior runs converge to the truth", 1e-6);
    Tally kl("population KL nonincreasing (violations)", 0.0);
    Tally sigma("sigma_x equals the target after one step", 0.0);
    for (int trial = 0; trial < 20; ++trial) {
        const auto n = static_cast<Eigen::Index>(3 + rng.index(4));
        const PopulationTarget truth(rng.uniform_vector(n, 0.1, 0.9), rng.uniform_vector(n, 0.5, 2.0));
        const StarState init(rng.uniform_vector(n, 0.1, 0.9), rng.uniform_vector(n, 0.5, 2.0));
        EmOptions opt;
        opt.record_stride = 0;
        const auto trace = run_em(init, truth, opt);
        interior.add((trace.final_state.rho - truth.rho).lpNorm<Eigen::Infinity>());
        kl.add(static_cast<double>(trace.monotonicity_violations));
        sigma.add((population_step(init, truth).sigma_x - truth.sigma).lpNorm<Eigen::Infinity>());
    }
    out.checks.push_back(interior.finish());
    out.checks.push_back(kl.finish());
    out.checks.push_back(sigma.finish());

    Tally repel("sum of rho does not decrease near zero", 0.0);
    Tally positive("one-step positivity (violations)", 0.0);
    for (int trial = 0; trial < 50; ++trial) {
        const auto n = static_cast<Eigen::Index>(3 + rng.index(4));
        const Vector truth = rng.uniform_vector(n, 0.1, 0.9);
        const Vector small = rng.uniform_vector(n, 0.0, 1e-3);
        const auto next = population_step(StarState(small), truth);
        repel.add(small.sum() - next.rho.sum());
        Vector sparse = Vector::Zero(n);
        sparse(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)))) = rng.uniform(0.01, 0.99);
        positive.add((population_step(StarState(sparse), truth).rho.array() > 0.0).all() ? 0.0 : 1.0);
    }
    out.checks.push_back(repel.finish());
    out.checks.push_back(positive.finish());

    Tally loglik("sample log-likelihood nondecreasing (violations)", 0.0);
    for (int trial = 0; trial < 3; ++trial) {
        const Vector truth = rng.uniform_vector(4, 0.3, 0.8);
        const auto model = make_star(std::vector<double>(truth.data(), truth.data() + 4));
        const auto stats = empirical_stats(sample(model, 5000, seed * 1000 + static_cast<std::uint64_t>(trial)).leaves);
        EmOptions opt;
        opt.record_stride = 0;
        loglik.add(static_cast<double>(run_em(initial_half(4), stats, opt).monotonicity_violations));
    }
    out.checks.push_back(loglik.finish());
    return out;
}

inline VerifyResult verify_tree(std::uint64_t seed) {
    VerifyResult out{"tree", seed, {}};
    UniformStream rng(seed, 3);

    Tally star_eq("tree step equals star step on stars", 1e-12);
    for (int trial = 0; trial < 30; ++trial) {
        const auto n = static_cast<Eigen::Index>(3 + rng.index(4));
        const Vector truth = rng.uniform_vector(n, 0.1, 0.9);
        const Vector cur = rng.uniform_vector(n, 0.1, 0.9);
        const auto tmodel = make_star(std::vector<double>(truth.data(), truth.data() + n));
        const auto cmodel = make_star(std::vector<double>(cur.data(), cur.data() + n));
        const auto next = population_step_tree(cmodel, leaf_moments(tmodel));
        star_eq.add((star_rho(next) - population_step(StarState(cur), truth).rho).lpNorm<Eigen::Infinity>());
    }
    out.checks.push_back(star_eq.finish());

    Tally recover("population tree EM recovers the truth", 1e-5);
    Tally kl("tree KL nonincreasing (violations)", 0.0);
    Tally leaf("leaf second moments conserved", 1e-12);
    for (int trial = 0; trial < 6; ++trial) {
        const auto topo = trial % 2 ? caterpillar_topology() : random_tree(2 + rng.index(2), rng);
        const auto truth = random_params(topo, rng, 0.3, 0.8);
        const ModelParams init(topo, std::vector<double>(topo.edge_count(), 0.5));
        TreeEmOptions opt;
        opt.tol = 1e-12;
        const auto trace = run_tree_em(init, leaf_moments(truth), opt);
        double err = 0.0;
        for (std::size_t e = 0; e < topo.edge_count(); ++e) err = std::max(err, std::abs(trace.final_params.rho(e) - truth.rho(e)));
        recover.add(err);
        kl.add(static_cast<double>(trace.monotonicity_violations));
        const auto mixed = mixed_moments(init, leaf_moments(truth));
        double worst = 0.0;
        const auto s = leaf_covariance(truth).matrix;
        for (std::size_t a = 0; a < topo.leaves().size(); ++a) {
            const auto ia = static_cast<Eigen::Index>(topo.leaves()[a]);
            worst = std::max(worst, std::abs(mixed.matrix(ia, ia) - s(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a))));
        }
        leaf.add(worst);
    }
    out.checks.push_back(recover.finish());
    out.checks.push_back(kl.finish());
    out.checks.push_back(leaf.finish());
    return out;
}

inline VerifyResult verify_fixpoint(std::uint64_t seed) {
    VerifyResult out{"fixpoint", seed, {}};
    UniformStream rng(seed, 4);

    PropertyCheck bound{"singular value bound holds", true, 0, 0.0, ""};
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = static_cast<Eigen::Index>(3 + rng.index(8));
        const Vector u = rng.uniform_vector(n, 1e-3, 1.0);
        const double smin = smallest_singular_value(system_jacobian(u));
        ++bound.cases;
        if (!(min_singular_bound(u) <= smin) || !(smin > 1e-12 * u.sum())) bound.passed = false;
    }
    bound.detail = std::to_string(bound.cases) + " random vectors";
    out.checks.push_back(bound);

    PropertyCheck unique{"oracle finds exactly the generating root", true, 0, 0.0, ""};
    OracleOptions opt;
    opt.starts = 200;
    for (int trial = 0; trial < 10; ++trial) {
        const auto n = static_cast<Eigen::Index>(3 + rng.index(4));
        const Vector u = rng.uniform_vector(n, 0.05, 1.0);
        const auto res = uniqueness_oracle(system_eval(u), opt);
        ++unique.cases;
        if (res.status != OracleStatus::unique || (res.solutions[0] - u).lpNorm<Eigen::Infinity>() > 1e-8) {
            unique.passed = false;
        }
    }
    unique.detail = std::to_string(unique.cases) + " targets";
    out.checks.push_back(unique);

    Vector two(2);
    two << 0.3, 0.6;
    const auto curve = uniqueness_oracle(system_eval(two), opt);
    out.checks.push_back({"n = 2 reports multiple roots", curve.status == OracleStatus::multiple && curve.outside_nonsingular_regime, 1, 0.0,
                          std::to_string(curve.solutions.size()) + " roots"});

    Tally det("3x3 moment system determinant identity", 1e-10);
    for (int trial = 0; trial < 100; ++trial) {
        const double c1 = rng.uniform(-1, 1), c2 = rng.uniform(-1, 1), c3 = rng.uniform(-1, 1), c4 = rng.uniform(-1, 1);
        det.add(std::abs(moment_system_matrix(c1, c2, c3, c4).determinant() - moment_system_determinant(c1, c2, c3, c4)));
    }
    out.checks.push_back(det.finish());

    Tally reduced("reduced system vanishes at the truth", 1e-10);
    for (int trial = 0; trial < 5; ++trial) {
        const auto topo = random_tree(2 + rng.index(3), rng);
        const auto truth = random_params(topo, rng, 0.3, 0.8);
        for (const auto& c : topo.internal_names()) reduced.add(reduced_system_residual(truth, truth, c).lpNorm<Eigen::Infinity>());
    }
    out.checks.push_back(reduced.finish());
    return out;
}

inline VerifyResult verify_sampling(std::uint64_t seed) {
    VerifyResult out{"sampling", seed, {}};
    UniformStream rng(seed, 5);
    const auto topo = random_tree(2, rng);
    const auto truth = random_params(topo, rng, 0.2, 0.9);

    const auto a = sample(truth, 200, seed);
    const auto b = sample(truth, 200, seed);
    out.checks.push_back({"seed determinism", a.full.data == b.full.data, 1, 0.0, "bit-identical draws"});

    const std::size_t m = 100000;
    const auto draws = sample(truth, m, seed + 17).full;
    const Matrix emp = draws.data.transpose() * draws.data / static_cast<double>(m);
    const Matrix cov = full_covariance(truth).matrix;
    Tally moments("sample covariances within 4 standard errors", 4.0);
    for (Eigen::Index i = 0; i < cov.rows(); ++i) {
        for (Eigen::Index j = 0; j < cov.cols(); ++j) {
            const double se = std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / static_cast<double>(m));
            moments.add(std::abs(emp(i, j) - cov(i, j)) / se);
        }
    }
    out.checks.push_back(moments.finish());

    const LeafSampleMatrix small = sample(truth, 50, seed).leaves;
    std::istringstream in(to_csv(small));
    const auto back = read_csv(in);
    out.checks.push_back({"CSV round trip", back.data == small.data && back.leaf_names == small.leaf_names, 1, 0.0, "exact"});

    const double eta = representativeness(stats_from_moments(leaf_moments(truth)), truth);
    out.checks.push_back({"exact moments are 0-representative", eta <= 1e-14, 1, eta, ""});
    return out;
}

}  // namespace detail

/// Runs one property suite. Throws InvalidArgument for an unknown suite name.
inline VerifyResult run_verify_suite(const std::string& suite, std::uint64_t seed) {
    if (suite == "algebra") return detail::verify_algebra(seed);
    if (suite == "star") return detail::verify_star(seed);
    if (suite == "tree") return detail::verify_tree(seed);
    if (suite == "fixpoint") return detail::verify_fixpoint(seed);
    if (suite == "sampling") return detail::verify_sampling(seed);
    throw InvalidArgument("unknown suite '" + suite + "' (expected algebra, star, tree, fixpoint or sampling)");
}

}  // namespace ltem
