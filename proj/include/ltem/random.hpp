#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ltem/model.hpp"
#include "ltem/philox.hpp"

namespace ltem {

/// Sequential uniform draws from the Philox stream (seed, stream).
class UniformStream {
public:
    explicit UniformStream(std::uint64_t seed, std::uint64_t stream = 0) noexcept : seed_(seed), stream_(stream) {}

    double next() noexcept {
        if (pos_ == 4) {
            buf_ = Philox4x64::block({counter_++, stream_, 0x5EED, 0}, {seed_, 0});
            pos_ = 0;
        }
        return open_unit(buf_[pos_++]);
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * next(); }

    /// Integer in [0, n).
    std::size_t index(std::size_t n) noexcept {
        const auto k = static_cast<std::size_t>(next() * static_cast<double>(n));
        return k < n ? k : n - 1;
    }

    Vector uniform_vector(Eigen::Index n, double lo, double hi) {
        Vector out(n);
        for (Eigen::Index i = 0; i < n; ++i) out(i) = uniform(lo, hi);
        return out;
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint64_t, 4> buf_{};
    int pos_ = 4;
};

/// Random tree with `internal_count` latent nodes y1.., every one of degree
/// >= 3, and leaves x1.. attached so that the degree requirement holds
/// (plus up to `extra_leaves` more at random internal nodes).
inline TreeTopology random_tree(std::size_t internal_count, UniformStream& rng, std::size_t extra_leaves = 0) {
    if (internal_count == 0) throw InvalidArgument("random_tree: need at least one internal node");
    std::vector<std::pair<std::string, std::string>> edges;
    std::vector<std::size_t> degree(internal_count, 0);
    auto yname = [](std::size_t k) { return "y" + std::to_string(k + 1); };
    for (std::size_t k = 1; k < internal_count; ++k) {
        const auto parent = rng.index(k);
        edges.emplace_back(yname(parent), yname(k));
        ++degree[parent];
        ++degree[k];
    }
    std::size_t leaf = 0;
    auto add_leaf = [&](std::size_t k) {
        edges.emplace_back("x" + std::to_string(++leaf), yname(k));
        ++degree[k];
    };
    for (std::size_t k = 0; k < internal_count; ++k) {
        while (degree[k] < 3) add_leaf(k);
    }
    for (std::size_t e = 0; e < extra_leaves; ++e) add_leaf(rng.index(internal_count));
    return TreeTopology(edges);
}

/// Caterpillar with two latent nodes: x1, x2 - y1 - y2 - x3, x4.
inline TreeTopology caterpillar_topology() {
    return TreeTopology({{"x1", "y1"}, {"x2", "y1"}, {"y1", "y2"}, {"x3", "y2"}, {"x4", "y2"}});
}

/// Same topology, correlations uniform in [lo, hi], unit sigmas.
inline ModelParams random_params(const TreeTopology& topo, UniformStream& rng, double lo, double hi) {
    std::vector<double> rho(topo.edge_count());
    for (auto& r : rho) r = rng.uniform(lo, hi);
    return {topo, std::move(rho)};
}

}  // namespace ltem
