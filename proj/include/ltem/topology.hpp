#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ltem/error.hpp"

namespace ltem {

/// Unordered node pair, stored with first < second.
using EdgeKey = std::pair<std::string, std::string>;

inline EdgeKey make_edge_key(std::string a, std::string b) {
    if (b < a) std::swap(a, b);
    return {std::move(a), std::move(b)};
}

/// Tree over named nodes. Nodes are kept in lexicographic order and every
/// index-based accessor refers to that order; edges are sorted by their
/// (smaller, larger) node indices.
///
/// Leaves are the degree-1 nodes unless the caller names the latent nodes
/// explicitly, which is how a degree-1 internal placeholder (a single-leaf
/// star, say) is expressed.
class TreeTopology {
public:
    struct Edge {
        std::size_t a;  // a < b
        std::size_t b;
    };

    TreeTopology() = default;

    explicit TreeTopology(const std::vector<std::pair<std::string, std::string>>& edges,
                          const std::set<std::string>& latent = {}) {
        if (edges.empty()) {
            throw InvalidArgument("a tree needs at least one edge");
        }
        std::set<std::string> names;
        for (const auto& [a, b] : edges) {
            if (a.empty() || b.empty()) throw InvalidArgument("empty node identifier");
            if (a == b) throw InvalidArgument("self-loop on node '" + a + "'");
            names.insert(a);
            names.insert(b);
        }
        for (const auto& l : latent) {
            if (!names.count(l)) throw InvalidArgument("latent node '" + l + "' is not in the edge list");
        }
        nodes_.assign(names.begin(), names.end());
        for (std::size_t i = 0; i < nodes_.size(); ++i) index_[nodes_[i]] = i;

        if (edges.size() + 1 != nodes_.size()) {
            throw InvalidArgument("edge count must be node count - 1 for a tree (got " +
                                  std::to_string(edges.size()) + " edges, " +
                                  std::to_string(nodes_.size()) + " nodes)");
        }
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (const auto& [na, nb] : edges) {
            auto a = index_.at(na);
            auto b = index_.at(nb);
            if (b < a) std::swap(a, b);
            if (!seen.insert({a, b}).second) {
                throw InvalidArgument("duplicate edge " + na + " " + nb);
            }
        }
        for (const auto& [a, b] : seen) edges_.push_back({a, b});

        adjacency_.resize(nodes_.size());
        for (std::size_t e = 0; e < edges_.size(); ++e) {
            adjacency_[edges_[e].a].push_back({edges_[e].b, e});
            adjacency_[edges_[e].b].push_back({edges_[e].a, e});
        }

        // Connectivity: with |E| = |V| - 1, connected <=> acyclic.
        std::vector<bool> visited(nodes_.size(), false);
        std::vector<std::size_t> stack{0};
        visited[0] = true;
        std::size_t count = 1;
        while (!stack.empty()) {
            const auto u = stack.back();
            stack.pop_back();
            for (const auto& [v, e] : adjacency_[u]) {
                if (!visited[v]) {
                    visited[v] = true;
                    ++count;
                    stack.push_back(v);
                }
            }
        }
        if (count != nodes_.size()) {
            throw InvalidArgument("edge list is not connected (contains a cycle or a separate component)");
        }

        is_leaf_.assign(nodes_.size(), false);
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const bool declared_latent = latent.count(nodes_[i]) > 0;
            if (latent.empty()) {
                is_leaf_[i] = adjacency_[i].size() == 1;
            } else {
                if (!declared_latent && adjacency_[i].size() != 1) {
                    throw InvalidArgument("node '" + nodes_[i] +
                                          "' has degree > 1 and must be declared latent");
                }
                is_leaf_[i] = !declared_latent;
            }
            (is_leaf_[i] ? leaves_ : internals_).push_back(i);
        }
        if (leaves_.empty()) throw InvalidArgument("tree has no observed leaves");
        explicit_latent_ = !latent.empty();
    }

    [[nodiscard]] std::size_t node_count() const noexcept { return nodes_.size(); }
    [[nodiscard]] std::size_t edge_count() const noexcept { return edges_.size(); }
    [[nodiscard]] const std::vector<std::string>& nodes() const noexcept { return nodes_; }
    [[nodiscard]] const std::string& name(std::size_t i) const { return nodes_.at(i); }
    [[nodiscard]] const std::vector<Edge>& edges() const noexcept { return edges_; }
    [[nodiscard]] const std::vector<std::size_t>& leaves() const noexcept { return leaves_; }
    [[nodiscard]] const std::vector<std::size_t>& internals() const noexcept { return internals_; }
    [[nodiscard]] bool is_leaf(std::size_t i) const { return is_leaf_.at(i); }
    [[nodiscard]] std::size_t degree(std::size_t i) const { return adjacency_.at(i).size(); }
    [[nodiscard]] bool has_explicit_latents() const noexcept { return explicit_latent_; }

    /// Neighbors of node i as (neighbor, edge index).
    [[nodiscard]] const std::vector<std::pair<std::size_t, std::size_t>>& neighbors(std::size_t i) const {
        return adjacency_.at(i);
    }

    [[nodiscard]] bool contains(const std::string& n) const { return index_.count(n) > 0; }

    [[nodiscard]] std::size_t index(const std::string& n) const {
        const auto it = index_.find(n);
        if (it == index_.end()) throw InvalidArgument("unknown node identifier '" + n + "'");
        return it->second;
    }

    [[nodiscard]] std::vector<std::string> leaf_names() const { return names_of(leaves_); }
    [[nodiscard]] std::vector<std::string> internal_names() const { return names_of(internals_); }

    [[nodiscard]] EdgeKey edge_key(std::size_t e) const {
        return {nodes_.at(edges_.at(e).a), nodes_.at(edges_.at(e).b)};
    }

    /// Edge index between two adjacent nodes; throws if they are not adjacent.
    [[nodiscard]] std::size_t edge_index(std::size_t a, std::size_t b) const {
        for (const auto& [v, e] : adjacency_.at(a)) {
            if (v == b) return e;
        }
        throw InvalidArgument("no edge between '" + nodes_.at(a) + "' and '" + nodes_.at(b) + "'");
    }

    [[nodiscard]] std::size_t edge_index(const std::string& a, const std::string& b) const {
        return edge_index(index(a), index(b));
    }

    /// Edge indices on the unique path between a and b (empty when a == b).
    [[nodiscard]] std::vector<std::size_t> path(std::size_t a, std::size_t b) const {
        std::vector<std::size_t> parent_edge(nodes_.size(), npos);
        std::vector<std::size_t> parent(nodes_.size(), npos);
        std::vector<std::size_t> stack{a};
        parent[a] = a;
        while (!stack.empty()) {
            const auto u = stack.back();
            stack.pop_back();
            if (u == b) break;
            for (const auto& [v, e] : adjacency_[u]) {
                if (parent[v] == npos) {
                    parent[v] = u;
                    parent_edge[v] = e;
                    stack.push_back(v);
                }
            }
        }
        std::vector<std::size_t> out;
        for (auto v = b; v != a; v = parent[v]) out.push_back(parent_edge[v]);
        std::reverse(out.begin(), out.end());
        return out;
    }

    /// Identifiable iff every internal node has degree >= 3.
    [[nodiscard]] bool is_identifiable() const {
        return std::all_of(internals_.begin(), internals_.end(),
                           [&](std::size_t i) { return adjacency_[i].size() >= 3; });
    }

    /// Single latent node adjacent to every leaf.
    [[nodiscard]] bool is_star() const {
        return internals_.size() == 1 && adjacency_[internals_[0]].size() == leaves_.size();
    }

    /// Leaves reachable from `from` without passing through `blocked`.
    [[nodiscard]] std::vector<std::size_t> leaves_behind(std::size_t from, std::size_t blocked) const {
        std::vector<std::size_t> out;
        std::vector<std::pair<std::size_t, std::size_t>> stack{{from, blocked}};
        while (!stack.empty()) {
            const auto [u, p] = stack.back();
            stack.pop_back();
            if (is_leaf_[u]) out.push_back(u);
            for (const auto& [v, e] : adjacency_[u]) {
                if (v != p) stack.push_back({v, u});
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    [[nodiscard]] std::vector<std::string> names_of(const std::vector<std::size_t>& ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (auto i : ids) out.push_back(nodes_[i]);
        return out;
    }

    std::vector<std::string> nodes_;
    std::map<std::string, std::size_t> index_;
    std::vector<Edge> edges_;
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adjacency_;
    std::vector<bool> is_leaf_;
    std::vector<std::size_t> leaves_;
    std::vector<std::size_t> internals_;
    bool explicit_latent_ = false;
};

}  // namespace ltem
