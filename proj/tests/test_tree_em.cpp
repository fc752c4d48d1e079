#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

using Catch::Approx;
using namespace ltem;

namespace {

double rho_linf(const ModelParams& a, const ModelParams& b) {
    double out = 0.0;
    for (std::size_t e = 0; e < a.rho().size(); ++e) out = std::max(out, std::abs(a.rho(e) - b.rho(e)));
    return out;
}

ModelParams unit_internal(const ModelParams& p) {
    std::vector<double> sigma(p.topology().node_count());
    for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = p.topology().is_leaf(i) ? p.sigma(i) : 1.0;
    return p.with_sigma(sigma);
}

}  // namespace

TEST_CASE("mixed_moments", "[tree]") {
    const auto p = load_model(std::string(LTEM_DATA_DIR) + "/caterpillar.txt");
    const auto self = mixed_moments(p, leaf_moments(p));
    CHECK(self.ordering == p.topology().nodes());
    CHECK(oracle::linf(self.matrix, oracle::structural_covariance(p)) <= 1e-12);

    // Leaf block is copied exactly; the whole matrix is a PSD second-moment matrix.
    const auto other = leaf_moments(load_model(std::string(LTEM_DATA_DIR) + "/caterpillar.txt").with_rho({0.3, 0.4, 0.5, 0.6, 0.7}));
    const auto mixed = mixed_moments(p, other);
    const auto& leaves = p.topology().leaves();
    CHECK(oracle::restrict(mixed.matrix, leaves, leaves) == other.covariance);
    CHECK(mixed.matrix == mixed.matrix.transpose());
    CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(mixed.matrix).eigenvalues().minCoeff() >= -1e-12);

    const ModelParams zero(caterpillar_topology(), std::vector<double>(5, 0.0));
    const auto z = mixed_moments(zero, other);
    for (auto y : zero.topology().internals()) {
        for (std::size_t j = 0; j < zero.topology().node_count(); ++j) {
            if (j != y) CHECK(z.matrix(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(j)) == 0.0);
        }
    }
}

TEST_CASE("mixed_moments on a star matches the population closed form", "[tree]") {
    UniformStream rng(20);
    for (int t = 0; t < 50; ++t) {
        const auto n = static_cast<Eigen::Index>(2 + rng.index(6));
        const Vector rho = rng.uniform_vector(n, 0.05, 0.95);
        const Vector sig = rng.uniform_vector(n, 0.5, 2.0);
        const Vector truth = rng.uniform_vector(n, 0.05, 0.95);
        const auto model = make_star(oracle::to_std(rho), oracle::to_std(sig));
        const auto mixed = mixed_moments(model, leaf_moments(make_star(oracle::to_std(truth), oracle::to_std(sig))));
        const Vector lam = lambda_coeffs(rho);
        const auto& topo = model.topology();
        const auto y = static_cast<Eigen::Index>(topo.internals().front());
        for (Eigen::Index i = 0; i < n; ++i) {
            double acc = lam(i);
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j != i) acc += truth(i) * truth(j) * lam(j);
            }
            const auto xi = static_cast<Eigen::Index>(topo.leaves()[static_cast<std::size_t>(i)]);
            CHECK(mixed.matrix(xi, y) == Approx(sig(i) * acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("m_step", "[tree]") {
    UniformStream rng(21);
    const auto topo = random_tree(3, rng);
    auto p = random_params(topo, rng, 0.1, 0.9);
    std::vector<double> sigma(topo.node_count(), 1.0);
    for (auto i : topo.leaves()) sigma[i] = rng.uniform(0.5, 2.0);
    p = p.with_sigma(sigma);
    const auto res = m_step({topo.nodes(), full_covariance(p).matrix}, topo);
    CHECK(rho_linf(res.params, p) <= 1e-14);
    for (auto i : topo.leaves()) CHECK(res.params.sigma(i) == Approx(p.sigma(i)).epsilon(1e-14));
    CHECK_FALSE(res.clamped);

    const auto n = static_cast<Eigen::Index>(topo.node_count());
    const auto ind = m_step({topo.nodes(), Matrix::Identity(n, n)}, topo);
    for (double r : ind.params.rho()) CHECK(r == 0.0);

    Matrix bad = Matrix::Identity(n, n);
    bad(0, 0) = 0.0;
    CHECK_THROWS_AS(m_step({topo.nodes(), bad}, topo), DegenerateModel);
    CHECK_THROWS_AS(m_step({{}, Matrix::Identity(n, n)}, topo), InvalidArgument);

    Matrix over = Matrix::Identity(n, n);
    const auto& e0 = topo.edges()[0];
    over(static_cast<Eigen::Index>(e0.a), static_cast<Eigen::Index>(e0.b)) = 1.5;
    over(static_cast<Eigen::Index>(e0.b), static_cast<Eigen::Index>(e0.a)) = 1.5;
    const auto clamped = m_step({topo.nodes(), over}, topo);
    CHECK(clamped.clamped);
    CHECK(clamped.params.rho(0) == 1.0 - 1e-15);
}

TEST_CASE("population_step_tree on a star equals the star step", "[tree][property]") {
    UniformStream rng(22);
    for (int t = 0; t < 100; ++t) {
        const auto n = static_cast<Eigen::Index>(2 + rng.index(7));
        const Vector rho = rng.uniform_vector(n, 0.05, 0.95);
        const Vector sig = rng.uniform_vector(n, 0.5, 2.0);
        const PopulationTarget truth(rng.uniform_vector(n, 0.05, 0.95), sig);
        const auto tree = population_step_tree(make_star(oracle::to_std(rho), oracle::to_std(sig)),
                                               {make_star_topology(static_cast<std::size_t>(n)).leaf_names(), truth.covariance()});
        const auto star = population_step(StarState(rho, sig), truth);
        CHECK((star_rho(tree) - star.rho).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
}

TEST_CASE("population_step_tree conserves leaf variances", "[tree][property]") {
    UniformStream rng(23);
    for (int t = 0; t < 50; ++t) {
        const auto topo = random_tree(1 + rng.index(4), rng, rng.index(3));
        auto truth = random_params(topo, rng, 0.3, 0.8);
        std::vector<double> sigma(topo.node_count(), 1.0);
        for (auto i : topo.leaves()) sigma[i] = rng.uniform(0.5, 2.0);
        truth = truth.with_sigma(sigma);
        const auto target = leaf_moments(truth);
        const auto next = population_step_tree(random_params(topo, rng, 0.1, 0.9), target);
        for (std::size_t k = 0; k < topo.leaves().size(); ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            CHECK(leaf_covariance(next).matrix(i, i) == Approx(target.covariance(i, i)).epsilon(1e-12));
        }
    }
}

TEST_CASE("population_step_tree examples", "[tree]") {
    const auto truth = unit_internal(load_model(std::string(LTEM_DATA_DIR) + "/caterpillar.txt"));
    const auto target = leaf_moments(truth);
    CHECK(rho_linf(population_step_tree(truth, target), truth) <= 1e-14);

    UniformStream rng(24);
    for (int t = 0; t < 10; ++t) {
        const auto cat = random_params(caterpillar_topology(), rng, 0.3, 0.8);
        TreeEmOptions opt;
        opt.tol = 1e-13;
        const auto trace = run_tree_em(ModelParams(caterpillar_topology(), std::vector<double>(5, 0.5)), leaf_moments(cat), opt);
        CHECK(rho_linf(trace.final_params, cat) <= 1e-5);
    }

    for (int t = 0; t < 50; ++t) {
        const auto topo = random_tree(1 + rng.index(3), rng);
        const auto cur = random_params(topo, rng, 0.1, 0.9);
        const auto zeroed_edge = rng.index(topo.edge_count());
        auto rho = cur.rho();
        rho[zeroed_edge] = 0.0;
        const auto next = population_step_tree(cur.with_rho(rho), leaf_moments(random_params(topo, rng, 0.3, 0.8)));
        CHECK(next.rho(zeroed_edge) > 0.0);
    }
}

TEST_CASE("fixpoint_residual", "[tree]") {
    const auto truth = unit_internal(load_model(std::string(LTEM_DATA_DIR) + "/caterpillar.txt"));
    const auto target = leaf_moments(truth);
    const auto at = fixpoint_residual(truth, target);
    CHECK(at.ok);
    CHECK(at.status == "ok");
    CHECK(at.residual.size() == truth.rho().size());
    CHECK(at.max() <= 1e-13);

    auto rho = truth.rho();
    rho[truth.topology().edge_index("y1", "y2")] += 0.1;
    CHECK(fixpoint_residual(truth.with_rho(rho), target).max() >= 1e-3);

    rho[0] = 1.0;
    const auto degenerate = fixpoint_residual(truth.with_rho(rho), target);
    CHECK_FALSE(degenerate.ok);
    CHECK(degenerate.status == "degenerate");
    CHECK(degenerate.residual.empty());
}

TEST_CASE("moment_identity_check", "[tree]") {
    const auto truth = unit_internal(load_model(std::string(LTEM_DATA_DIR) + "/caterpillar.txt"));
    const auto target = leaf_moments(truth);
    const auto gaps = moment_identity_check(truth, target);
    REQUIRE(gaps.size() == 1);
    CHECK(gaps.begin()->second.max() <= 1e-14);

    auto rho = truth.rho();
    rho[truth.topology().edge_index("y1", "y2")] = 0.3;
    CHECK(moment_identity_check(truth.with_rho(rho), target).begin()->second.max() >= 1e-4);

    CHECK(moment_identity_check(make_star({0.3, 0.4, 0.5}), leaf_moments(make_star({0.6, 0.4, 0.5}))).empty());

    // Cross-check the gap definition against explicit conditional means.
    const auto cand = truth.with_rho(rho);
    const auto [lambda, cond] = oracle::regression(cand);
    const Matrix diff = target.covariance - leaf_covariance(cand).matrix;
    const Vector l1 = lambda.row(0).transpose();
    const Vector l2 = lambda.row(1).transpose();
    const auto g = moment_identity_check(cand, target).begin()->second;
    CHECK(g.cross == Approx(std::abs(l1.dot(diff * l2))).epsilon(1e-10));
    CHECK(g.square_first == Approx(std::abs(l1.dot(diff * l1))).epsilon(1e-10));
    CHECK(g.square_second == Approx(std::abs(l2.dot(diff * l2))).epsilon(1e-10));
}

TEST_CASE("interior fixpoints of general trees are the truth", "[tree][property][slow]") {
    UniformStream rng(25);
    for (int t = 0; t < 50; ++t) {
        const auto topo = random_tree(1 + rng.index(4), rng, rng.index(2));
        const auto truth = random_params(topo, rng, 0.3, 0.8);
        const auto target = leaf_moments(truth);
        TreeEmOptions opt;
        opt.tol = 1e-13;
        opt.record_stride = 1;
        const auto trace = run_tree_em(random_params(topo, rng, 0.2, 0.9), target, opt);
        INFO("trial " << t << " internal nodes " << topo.internals().size());
        CHECK(trace.converged);
        CHECK(rho_linf(trace.final_params, truth) <= 1e-5);
        CHECK(trace.monotonicity_violations == 0);
        CHECK_FALSE(trace.clamp_fired);
        for (std::size_t k = 1; k < trace.records.size(); ++k) CHECK(trace.records[k].kl <= trace.records[k - 1].kl + 1e-10);
        for (const auto& [edge, gap] : moment_identity_check(trace.final_params, target)) CHECK(gap.max() <= 1e-10);
    }
}

TEST_CASE("run_tree_em reports non-identifiable topologies", "[tree]") {
    const TreeTopology chain({{"x1", "y1"}, {"y1", "y2"}, {"y2", "x2"}, {"x3", "y2"}});
    const ModelParams truth(chain, {0.6, 0.7, 0.8, 0.5});
    TreeEmOptions opt;
    opt.max_iter = 50;
    const auto trace = run_tree_em(ModelParams(chain, std::vector<double>(4, 0.5)), leaf_moments(truth), opt);
    CHECK_FALSE(trace.warnings.empty());
    CHECK(trace.monotonicity_violations == 0);
}
