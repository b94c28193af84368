#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <stdexcept>
#include <vector>

#include "topnav/topomap.hpp"

namespace topnav::plan {

struct Plan {
    std::vector<int> path;  // node ids, src first, dst last
    double total_weight = 0.0;
};

struct Waypoint {
    int node = -1;          // next node to head for
    double abs_angle = 0.0; // world bearing of the edge current -> node
    bool arrived = false;   // current == goal
};

namespace detail {

/// Label ordering: total weight, then hop count, then lexicographic node
/// sequence. Weight comparison is exact (==) — the tie-break is for genuinely
/// identical sums, which the brute-force oracle reproduces.
struct Label {
    double dist;
    std::vector<int> path;

    bool operator>(const Label& o) const {
        if (dist != o.dist) return dist > o.dist;
        if (path.size() != o.path.size()) return path.size() > o.path.size();
        return path > o.path;
    }
};

}  // namespace detail

/// Dijkstra over the directed map. Returns std::nullopt when dst is
/// unreachable; src == dst yields the single-node path with weight 0.
inline std::optional<Plan> shortest_path(const tmap::MapView& view, int src, int dst) {
    const int n = view.size();
    if (src < 0 || src >= n || dst < 0 || dst >= n)
        throw std::invalid_argument("shortest_path: node id out of range");
    if (src == dst) return Plan{{src}, 0.0};

    std::priority_queue<detail::Label, std::vector<detail::Label>, std::greater<detail::Label>> pq;
    std::vector<bool> done(n, false);
    pq.push({0.0, {src}});
    while (!pq.empty()) {
        detail::Label cur = pq.top();
        pq.pop();
        const int u = cur.path.back();
        if (done[u]) continue;
        done[u] = true;
        if (u == dst) return Plan{cur.path, cur.dist};
        for (const tmap::TopoEdge& e : view.edges_from(u)) {
            if (e.weight < 0.0) throw std::runtime_error("shortest_path: negative edge weight");
            if (done[e.dst]) continue;
            detail::Label next{cur.dist + e.weight, cur.path};
            next.path.push_back(e.dst);
            pq.push(std::move(next));
        }
    }
    return std::nullopt;
}

/// First hop of the current best plan, with the edge's world bearing.
inline std::optional<Waypoint> next_waypoint(const tmap::MapView& view, int current, int goal) {
    if (current == goal) return Waypoint{current, 0.0, true};
    const auto p = shortest_path(view, current, goal);
    if (!p) return std::nullopt;
    const int next = p->path.at(1);
    for (const tmap::TopoEdge& e : view.edges_from(current))
        if (e.dst == next) return Waypoint{next, e.abs_angle, false};
    throw std::runtime_error("next_waypoint: plan edge missing from adjacency");
}

}  // namespace topnav::plan
