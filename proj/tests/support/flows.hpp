#pragma once

// Divergence-free test flows.

#include <deque>
#include <random>
#include <vector>

#include "metastab/potential.hpp"

namespace testsupport {

/// A circulation of random strength around the cycle closed by a random
/// non-tree edge of a BFS spanning tree. Zero flow when the graph is a tree.
inline metastab::Flow random_circulation(const std::shared_ptr<const metastab::EdgeSet>& edges,
                                         std::mt19937_64& rng, double strength_scale) {
    using metastab::Index;
    const Index n = edges->state_count();
    std::vector<Index> parent(static_cast<std::size_t>(n), -1);
    std::vector<int> depth(static_cast<std::size_t>(n), -1);
    std::vector<bool> tree(edges->size(), false);
    std::deque<Index> queue{0};
    depth[0] = 0;
    while (!queue.empty()) {
        const Index x = queue.front();
        queue.pop_front();
        for (std::size_t e : edges->incident(x)) {
            const Index y = edges->tail(e) == x ? edges->head(e) : edges->tail(e);
            if (depth[static_cast<std::size_t>(y)] < 0) {
                depth[static_cast<std::size_t>(y)] = depth[static_cast<std::size_t>(x)] + 1;
                parent[static_cast<std::size_t>(y)] = x;
                tree[e] = true;
                queue.push_back(y);
            }
        }
    }
    std::vector<std::size_t> extra;
    for (std::size_t e = 0; e < edges->size(); ++e) {
        if (!tree[e]) extra.push_back(e);
    }
    metastab::Flow flow(edges);
    if (extra.empty()) return flow;
    const std::size_t e = extra[std::uniform_int_distribution<std::size_t>(0, extra.size() - 1)(rng)];
    const double s = std::uniform_real_distribution<double>(-1.0, 1.0)(rng) * strength_scale;
    // Push s along u -> v, then back from v to u through the tree.
    Index u = edges->tail(e), v = edges->head(e);
    flow.set(u, v, s);
    std::vector<Index> up_u, up_v;
    Index a = u, b = v;
    while (a != b) {
        if (depth[static_cast<std::size_t>(a)] >= depth[static_cast<std::size_t>(b)]) {
            up_u.push_back(a);
            a = parent[static_cast<std::size_t>(a)];
        } else {
            up_v.push_back(b);
            b = parent[static_cast<std::size_t>(b)];
        }
    }
    // v climbs to the common ancestor, then descends to u.
    for (Index x : up_v) flow.set(x, parent[static_cast<std::size_t>(x)], flow.at(x, parent[static_cast<std::size_t>(x)]) + s);
    for (Index x : up_u) flow.set(parent[static_cast<std::size_t>(x)], x, flow.at(parent[static_cast<std::size_t>(x)], x) + s);
    return flow;
}

}  // namespace testsupport
