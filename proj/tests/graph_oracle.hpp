#pragma once

// Brute-force shortest-path oracle: enumerates every simple path by DFS and
// keeps the minimum under (total weight, hop count, lexicographic node
// sequence) — the same ordering the real planner promises. Only usable on
// tiny graphs; the tests stay at <= 7 nodes.

#include <optional>
#include <vector>

#include "topnav/planning.hpp"
#include "topnav/topomap.hpp"

namespace testutil {

struct OraclePath {
    std::vector<int> path;
    double weight = 0.0;
};

inline bool oracle_better(const OraclePath& a, const OraclePath& b) {
    if (a.weight != b.weight) return a.weight < b.weight;
    if (a.path.size() != b.path.size()) return a.path.size() < b.path.size();
    return a.path < b.path;
}

inline void oracle_dfs(const topnav::tmap::TopoMap& m, int u, int dst, std::vector<bool>& used,
                       std::vector<int>& path, double weight, std::optional<OraclePath>& best) {
    if (u == dst) {
        OraclePath cand{path, weight};
        if (!best || oracle_better(cand, *best)) best = cand;
        return;
    }
    for (const topnav::tmap::TopoEdge& e : m.adj[u]) {
        if (used[e.dst]) continue;
        used[e.dst] = true;
        path.push_back(e.dst);
        oracle_dfs(m, e.dst, dst, used, path, weight + e.weight, best);
        path.pop_back();
        used[e.dst] = false;
    }
}

inline std::optional<OraclePath> oracle_shortest(const topnav::tmap::TopoMap& m, int src, int dst) {
    std::vector<bool> used(m.nodes.size(), false);
    std::vector<int> path{src};
    used[src] = true;
    std::optional<OraclePath> best;
    oracle_dfs(m, src, dst, used, path, 0.0, best);
    return best;
}

/// Random digraph with the map's weight bounds; positions spread on a line so
/// map invariants that look at positions stay harmless.
inline topnav::tmap::TopoMap random_digraph(topnav::Rng& rng, int max_nodes = 7) {
    using namespace topnav;
    tmap::TopoMap m;
    const int n = static_cast<int>(rng.uniform_int(2, max_nodes));
    for (int i = 0; i < n; ++i) {
        tmap::TopoNode node;
        node.id = i;
        node.position = {static_cast<double>(i), 0.0};
        m.nodes.push_back(node);
    }
    m.adj.resize(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j || !rng.bernoulli(0.45)) continue;
            // quantized weights make exact ties common, exercising the tie-break
            const double w = 0.25 * static_cast<double>(rng.uniform_int(0, 8));
            m.adj[i].push_back({i, j, w, 0.0});
        }
    return m;
}

}  // namespace testutil
