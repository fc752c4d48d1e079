#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "oracles.hpp"

using Catch::Approx;
using namespace ltem;
using EdgeList = std::vector<std::pair<std::string, std::string>>;

namespace {

TreeTopology chain_topology() { return TreeTopology({{"x1", "y1"}, {"y1", "y2"}, {"y2", "x2"}}); }

ModelParams chain_model() {
    const auto topo = chain_topology();
    std::vector<double> rho(3);
    rho[topo.edge_index("x1", "y1")] = 0.9;
    rho[topo.edge_index("y1", "y2")] = 0.8;
    rho[topo.edge_index("y2", "x2")] = 0.7;
    return {topo, rho};
}

}  // namespace

TEST_CASE("topology validation", "[model]") {
    const auto topo = chain_topology();
    CHECK(topo.node_count() == 4);
    CHECK(topo.leaf_names() == std::vector<std::string>{"x1", "x2"});
    CHECK(topo.internal_names() == std::vector<std::string>{"y1", "y2"});
    CHECK_FALSE(topo.is_identifiable());
    CHECK(make_star_topology(3).is_identifiable());
    CHECK(make_star_topology(3).is_star());

    CHECK_THROWS_AS(TreeTopology(EdgeList{{"a", "b"}, {"b", "c"}, {"c", "a"}}), InvalidArgument);
    CHECK_THROWS_AS(TreeTopology(EdgeList{{"a", "b"}, {"c", "d"}}), InvalidArgument);
    CHECK_THROWS_AS(TreeTopology(EdgeList{{"a", "a"}}), InvalidArgument);
    CHECK_THROWS_AS(TreeTopology(EdgeList{{"a", "b"}, {"b", "a"}}), InvalidArgument);
    CHECK_THROWS_AS(topo.index("nope"), InvalidArgument);

    const auto single = make_star_topology(1);
    CHECK(single.leaf_names() == std::vector<std::string>{"x1"});
    CHECK(single.internal_names() == std::vector<std::string>{"y"});
    CHECK(make_star_topology(12).leaf_names().front() == "x01");
}

TEST_CASE("model parameter invariants", "[model]") {
    const auto topo = make_star_topology(2);
    CHECK_THROWS_AS(ModelParams(topo, {0.5}), InvalidArgument);
    CHECK_THROWS_AS(ModelParams(topo, {0.5, 1.2}), InvalidArgument);
    CHECK_THROWS_AS(ModelParams(topo, {0.5, -0.1}), InvalidArgument);
    CHECK_THROWS_AS(ModelParams(topo, {0.5, 0.5}, {1.0, 0.0, 1.0}), InvalidArgument);
    const ModelParams boundary(topo, {1.0, 0.5});
    CHECK_FALSE(boundary.is_nondegenerate());
}

TEST_CASE("path_correlation", "[model]") {
    const auto star = make_star({0.5, 0.6});
    CHECK(path_correlation(star, "x1", "x1") == 1.0);
    CHECK(path_correlation(star, "x1", "x2") == Approx(0.30).epsilon(1e-14));
    CHECK_THROWS_AS(path_correlation(star, "x1", "zz"), InvalidArgument);

    const auto chain = chain_model();
    CHECK(path_correlation(chain, "x1", "x2") == Approx(0.504).epsilon(1e-14));
    const Matrix s = oracle::structural_covariance(chain);
    const auto i = static_cast<Eigen::Index>(chain.topology().index("x1"));
    const auto j = static_cast<Eigen::Index>(chain.topology().index("x2"));
    CHECK(s(i, j) / std::sqrt(s(i, i) * s(j, j)) == Approx(0.504).epsilon(1e-12));
}

TEST_CASE("full_covariance", "[model]") {
    const auto topo = make_star_topology(3);
    const ModelParams independent(topo, std::vector<double>(3, 0.0));
    CHECK(oracle::linf(full_covariance(independent).matrix, Matrix::Identity(4, 4)) == 0.0);

    const auto star = make_star({0.5, 0.5});
    const auto cov = full_covariance(star);
    CHECK(cov.ordering == std::vector<std::string>{"x1", "x2", "y"});
    CHECK(cov.matrix(0, 1) == Approx(0.25));
    CHECK(cov.matrix(0, 2) == Approx(0.5));
    CHECK(cov.matrix(1, 2) == Approx(0.5));
    CHECK(cov.matrix.diagonal().isOnes());

    const auto chain = chain_model();
    CHECK(oracle::linf(full_covariance(chain).matrix, oracle::structural_covariance(chain)) < 1e-12);
}

TEST_CASE("full_covariance matches the sampler", "[model][slow]") {
    const auto chain = chain_model();
    const std::size_t m = 1000000;
    const auto draws = sample(chain, m, 2024).full.data;
    const Matrix emp = draws.transpose() * draws / static_cast<double>(m);
    const Matrix cov = full_covariance(chain).matrix;
    for (Eigen::Index i = 0; i < 4; ++i) {
        for (Eigen::Index j = 0; j < 4; ++j) {
            const double se = std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / static_cast<double>(m));
            CHECK(std::abs(emp(i, j) - cov(i, j)) <= 3.0 * se);
        }
    }
}

TEST_CASE("leaf_covariance", "[model]") {
    const auto one = make_star({0.6}, {1.7});
    const auto l1 = leaf_covariance(one);
    REQUIRE(l1.matrix.rows() == 1);
    CHECK(l1.matrix(0, 0) == Approx(1.7 * 1.7));

    const auto three = make_star({0.2, 0.5, 0.8});
    const auto l3 = leaf_covariance(three).matrix;
    CHECK(l3(0, 1) == Approx(0.1));
    CHECK(l3(0, 2) == Approx(0.16));
    CHECK(l3(1, 2) == Approx(0.4));

    UniformStream rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto topo = random_tree(1 + rng.index(4), rng, rng.index(3));
        auto p = random_params(topo, rng, 0.0, 1.0);
        std::vector<double> sigma(topo.node_count());
        for (auto& s : sigma) s = rng.uniform(0.5, 2.0);
        p = p.with_sigma(sigma);
        const Matrix restricted = oracle::restrict(oracle::structural_covariance(p), topo.leaves(), topo.leaves());
        CHECK(oracle::linf(leaf_covariance(p).matrix, restricted) < 1e-12);
    }
}

TEST_CASE("path-product consistency on random trees", "[model][property]") {
    UniformStream rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const auto topo = random_tree(1 + rng.index(3), rng, rng.index(4));
        REQUIRE(topo.node_count() <= 12);
        auto p = random_params(topo, rng, 0.0, 1.0);
        std::vector<double> sigma(topo.node_count());
        for (auto& s : sigma) s = rng.uniform(0.3, 3.0);
        p = p.with_sigma(sigma);
        const auto leaf = leaf_covariance(p);
        for (std::size_t a = 0; a < leaf.ordering.size(); ++a) {
            for (std::size_t b = 0; b < leaf.ordering.size(); ++b) {
                double expect = p.sigma(leaf.ordering[a]) * p.sigma(leaf.ordering[b]);
                for (auto e : topo.path(topo.index(leaf.ordering[a]), topo.index(leaf.ordering[b]))) expect *= p.rho(e);
                CHECK(std::abs(leaf.matrix(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) - expect) <= 1e-12);
            }
        }
    }
}

TEST_CASE("information_view", "[model]") {
    const auto topo = make_star_topology(3);
    const ModelParams independent(topo, std::vector<double>(3, 0.0), {1.0, 2.0, 0.5, 1.5});
    const auto iv = information_view(independent);
    Matrix expect = Matrix::Zero(4, 4);
    expect.diagonal() << 1.0, 0.25, 4.0, 1.0 / 2.25;
    CHECK(oracle::linf(iv.precision, expect) < 1e-15);
    CHECK(iv.field.isZero());

    const auto star = make_star({0.5, 0.5});
    CHECK(std::abs(information_view(star).precision(0, 1)) <= 1e-10);

    const auto chain = chain_model();
    const Matrix dense = oracle::structural_covariance(chain).inverse();
    CHECK(oracle::linf(information_view(chain).precision, dense) < 1e-10);

    CHECK_THROWS_AS(information_view(ModelParams(make_star_topology(2), {1.0, 0.5})), DegenerateModel);
}

TEST_CASE("covariance/information round trip", "[model][property]") {
    UniformStream rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const auto topo = random_tree(1 + rng.index(4), rng, rng.index(3));
        auto p = random_params(topo, rng, 0.0, 0.999);
        std::vector<double> sigma(topo.node_count());
        for (auto& s : sigma) s = rng.uniform(0.5, 2.0);
        p = p.with_sigma(sigma);
        const Matrix cov = full_covariance(p).matrix;
        const Matrix back = information_view(p).precision.inverse();
        CHECK((back - cov).cwiseAbs().maxCoeff() / cov.cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("condition_on_leaves", "[model]") {
    const auto one = condition_on_leaves(make_star({0.6}));
    REQUIRE(one.coefficients.rows() == 1);
    CHECK(one.coefficients(0, 0) == Approx(0.6).epsilon(1e-14));

    const auto two_model = make_star({0.5, 0.5});
    const auto two = condition_on_leaves(two_model);
    CHECK(two.coefficients(0, 0) == Approx(0.4).epsilon(1e-14));
    CHECK(two.coefficients(0, 1) == Approx(0.4).epsilon(1e-14));
    const auto [lambda, cond] = oracle::regression(two_model);
    CHECK(oracle::linf(two.coefficients, lambda) < 1e-14);

    const auto zero = condition_on_leaves(ModelParams(caterpillar_topology(), std::vector<double>(5, 0.0)));
    CHECK(zero.coefficients.isZero());
    CHECK(oracle::linf(zero.covariance, Matrix::Identity(2, 2)) == 0.0);

    CHECK_THROWS_AS(condition_on_leaves(ModelParams(make_star_topology(2), {0.5, 1.0})), DegenerateModel);

    UniformStream rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const auto topo = random_tree(1 + rng.index(4), rng, rng.index(3));
        const auto p = random_params(topo, rng, 0.05, 0.95);
        const auto c = condition_on_leaves(p);
        const auto [l, cv] = oracle::regression(p);
        CHECK(oracle::linf(c.coefficients, l) < 1e-10);
        CHECK(oracle::linf(c.covariance, cv) < 1e-10);
    }
}

TEST_CASE("star conditioning reproduces the lambda closed form", "[model][property]") {
    UniformStream rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = static_cast<Eigen::Index>(1 + rng.index(10));
        const Vector rho = rng.uniform_vector(n, 0.0, 0.95);
        const auto c = condition_on_leaves(make_star(oracle::to_std(rho)));
        Vector expect(n);
        double denom = 1.0;
        for (Eigen::Index i = 0; i < n; ++i) denom += rho(i) * rho(i) / (1.0 - rho(i) * rho(i));
        for (Eigen::Index i = 0; i < n; ++i) expect(i) = rho(i) / (1.0 - rho(i) * rho(i)) / denom;
        CHECK((c.coefficients.row(0).transpose() - expect).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("marginalize_internal", "[model]") {
    const auto chain = chain_model();
    const auto latent = latent_information_given_leaves(chain);

    const auto same = marginalize_internal(latent, {"y1", "y2"});
    CHECK(same.precision == latent.precision);
    CHECK(same.field == latent.field);

    // Eliminating y1 from the chain: y2's field coefficient on x1 is
    // -J_{y2,y1} J_{y1,y1}^{-1} (-J_{y1,x1}), since y2 has no direct x1 term.
    const auto full = information_view(chain);
    const auto& t = chain.topology();
    auto J = [&](const char* a, const char* b) {
        return full.precision(static_cast<Eigen::Index>(t.index(a)), static_cast<Eigen::Index>(t.index(b)));
    };
    const auto reduced = marginalize_internal(latent, {"y2"});
    REQUIRE(reduced.ordering == std::vector<std::string>{"y2"});
    const double expect_x1 = -J("y2", "y1") / J("y1", "y1") * -J("y1", "x1");
    CHECK(reduced.field(0, 0) == Approx(expect_x1).epsilon(1e-12));
    CHECK(reduced.precision(0, 0) == Approx(J("y2", "y2") - J("y2", "y1") * J("y1", "y2") / J("y1", "y1")).epsilon(1e-12));

    // Degree-1 placeholder: single-leaf star with latent y; marginalizing y from
    // the joint information form leaves the inverse of the restricted covariance.
    const auto single = make_star({0.6}, {1.3}, 0.8);
    const auto joint = information_view(single);
    const auto survivors = marginalize_internal(joint, {"x1"});
    const Matrix restricted = oracle::restrict(oracle::structural_covariance(single), {0}, {0});
    CHECK(survivors.precision(0, 0) == Approx(1.0 / restricted(0, 0)).epsilon(1e-12));

    CHECK_THROWS_AS(marginalize_internal(latent, {"nope"}), InvalidArgument);
}

TEST_CASE("marginalization commutes", "[model][property]") {
    UniformStream rng(4);
    int tested = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const auto topo = random_tree(3 + rng.index(2), rng, rng.index(3));
        const auto p = random_params(topo, rng, 0.05, 0.95);
        const auto info = information_view(p);
        const auto names = topo.nodes();
        std::set<std::string> keep_a;
        std::set<std::string> keep_ab;
        for (const auto& nme : names) {
            const double u = rng.next();
            if (u > 0.25) keep_a.insert(nme);
            if (u > 0.6) keep_ab.insert(nme);
        }
        if (keep_ab.empty()) continue;
        const auto twice = marginalize_internal(marginalize_internal(info, keep_a), keep_ab);
        const auto once = marginalize_internal(info, keep_ab);
        CHECK(oracle::linf(twice.precision, once.precision) <= 1e-10);
        CHECK(oracle::linf(twice.field, once.field) <= 1e-10);
        std::vector<std::size_t> idx;
        for (const auto& k : keep_ab) idx.push_back(topo.index(k));
        const Matrix direct = oracle::restrict(full_covariance(p).matrix, idx, idx).inverse();
        CHECK(oracle::linf(once.precision, direct) <= 1e-8 * std::max(1.0, direct.cwiseAbs().maxCoeff()));
        ++tested;
    }
    CHECK(tested > 30);
}

TEST_CASE("model file parsing", "[model][io]") {
    std::istringstream ok("# comment\nx1 y 0.5\nx2 y 0.6 # trailing\n\nx3 y 0.7\nvar x2 4\n");
    const auto p = parse_model(ok);
    CHECK(p.topology().is_star());
    CHECK(p.rho("x2", "y") == 0.6);
    CHECK(p.sigma("x2") == 2.0);
    CHECK(p.sigma("y") == 1.0);

    auto fails_at = [](const std::string& text, std::size_t line) {
        std::istringstream in(text);
        try {
            parse_model(in);
        } catch (const ParseError& e) {
            return e.line() == line;
        }
        return false;
    };
    CHECK(fails_at("x1 y 0.5\nx2 y abc\n", 2));
    CHECK(fails_at("x1 y 0.5\nx2 y\n", 2));
    CHECK(fails_at("x1 y 1.5\n", 1));
    CHECK(fails_at("x1 y 0.5\nx2 y 0.5\nvar x1 -1\n", 3));
    CHECK(fails_at("x1 y 0.5\nx2 y 0.5\n\nvar q 2\n", 4));

    std::istringstream single("x1 y 0.6\nlatent y\n");
    const auto s = parse_model(single);
    CHECK(s.topology().leaf_names() == std::vector<std::string>{"x1"});

    std::istringstream round(format_model(chain_model().with_sigma({1.5, 0.7, 1.0, 1.0})));
    const auto back = parse_model(round);
    CHECK(back.rho() == chain_model().rho());
    CHECK(back.sigma(0) == Approx(1.5).epsilon(1e-15));
    CHECK(back.sigma(1) == Approx(0.7).epsilon(1e-15));

    const auto file = load_model(std::string(LTEM_DATA_DIR) + "/caterpillar.txt");
    CHECK(file.topology().is_identifiable());
    CHECK(file.sigma("x1") == 1.5);
}
