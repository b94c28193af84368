#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "topnav/geometry.hpp"
#include "topnav/gmm.hpp"
#include "topnav/perception.hpp"
#include "topnav/rng.hpp"
#include "topnav/scene.hpp"
#include "topnav/sim.hpp"

namespace topnav::tmap {

struct TopoNode {
    int id = -1;
    Vec2 position;  // kept for evaluation/visualization only; never read by navigation
    std::vector<percep::Descriptor> descriptors;  // exactly 18, headings 0,20,...,340 deg
};

struct TopoEdge {
    int src = -1, dst = -1;
    double weight = 0.0;     // -log passage probability, clamp-bounded
    double abs_angle = 0.0;  // world-frame bearing src -> dst
};

struct MapMeta {
    std::uint64_t seed = 0;
    std::uint64_t fx_hash = 0;
    std::uint64_t pd_hash = 0;
};

struct TopoMap {
    std::vector<TopoNode> nodes;
    std::vector<std::vector<TopoEdge>> adj;  // adj[src]
    std::string scene_name;
    MapMeta meta;

    int size() const { return static_cast<int>(nodes.size()); }
};

/// The only map interface localization, planning, and the policy receive.
/// It deliberately has no accessor for node positions — decision modules can
/// see descriptors and edge weights/angles, nothing metric about nodes.
class MapView {
  public:
    explicit MapView(const TopoMap& m) : map_(&m) {}
    int size() const { return map_->size(); }
    const std::vector<percep::Descriptor>& descriptors(int node) const {
        return map_->nodes.at(node).descriptors;
    }
    const std::vector<TopoEdge>& edges_from(int node) const { return map_->adj.at(node); }

  private:
    const TopoMap* map_;
};

inline constexpr int kNodeHeadings = percep::kHeadings;  // 18
inline constexpr double kConnectRadius = 2.5;            // meters
inline constexpr double kSpacingMin = 0.8;               // meters between nodes
inline constexpr double kNodeClearance = 0.2;            // meters

namespace detail {

/// Weak-connectivity components (edges treated as undirected).
inline std::vector<int> weak_components(const TopoMap& m) {
    std::vector<int> comp(m.size(), -1);
    int c = 0;
    for (int s = 0; s < m.size(); ++s) {
        if (comp[s] != -1) continue;
        std::queue<int> q;
        q.push(s);
        comp[s] = c;
        while (!q.empty()) {
            const int u = q.front();
            q.pop();
            for (const TopoEdge& e : m.adj[u])
                if (comp[e.dst] == -1) { comp[e.dst] = c; q.push(e.dst); }
            // reverse direction: scan all edges into u (maps are small)
            for (int v = 0; v < m.size(); ++v) {
                if (comp[v] != -1) continue;
                for (const TopoEdge& e : m.adj[v])
                    if (e.dst == u) { comp[v] = c; q.push(v); break; }
            }
        }
        ++c;
    }
    return comp;
}

inline int closest_heading(double bearing) {
    // headings h * 20deg; pick the index minimizing wrapped angular distance
    int best = 0;
    double best_d = 1e300;
    for (int h = 0; h < kNodeHeadings; ++h) {
        const double ang = 2.0 * kPi * h / kNodeHeadings;
        const double d = std::abs(angle_diff(bearing, ang));
        if (d < best_d) { best_d = d; best = h; }
    }
    return best;
}

}  // namespace detail

/// Node positions: valid (clearance >= 0.2 m), pairwise spacing >= kSpacingMin,
/// at least min_per_room in every GMM cluster. Densely packs the scene, then
/// verifies the per-cluster quota.
inline std::vector<Vec2> sample_node_positions(const sim::Scene& scene, const seg::GmmModel& gmm,
                                               int min_per_room, std::uint64_t seed,
                                               double spacing_min = kSpacingMin,
                                               int max_attempts = 40000) {
    if (min_per_room < 1) throw std::invalid_argument("sample_node_positions: min_per_room >= 1");
    Rng rng(seed);
    std::vector<Vec2> nodes;
    std::vector<int> per_cluster(gmm.K, 0);
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        const double x = rng.uniform(0.0, scene.width_m());
        const double y = rng.uniform(0.0, scene.height_m());
        if (scene.occupied_at(x, y)) continue;
        if (sim::clearance(scene, x, y) < kNodeClearance) continue;
        const Vec2 p{x, y};
        bool spaced = true;
        for (const Vec2& q : nodes)
            if (distance(p, q) < spacing_min) { spaced = false; break; }
        if (!spaced) continue;
        nodes.push_back(p);
        ++per_cluster[seg::assign_label(gmm, p)];
    }
    for (int k = 0; k < gmm.K; ++k) {
        if (per_cluster[k] < min_per_room)
            throw std::runtime_error("sample_node_positions: cluster " + std::to_string(k) +
                                     " has " + std::to_string(per_cluster[k]) + " nodes, needs " +
                                     std::to_string(min_per_room));
    }
    return nodes;
}

/// Build the directed map: 18 descriptors per node; for every ordered pair
/// within connect_radius, weight = -log passage probability of the source
/// observation whose stored heading is closest to the bearing.
inline TopoMap build_map(const sim::Scene& scene, const std::vector<Vec2>& positions,
                         const percep::FeatureExtractor& fx, const percep::PassageDetector& pd,
                         const sim::DomainParams& dom, Rng& rng,
                         double connect_radius = kConnectRadius,
                         const sim::SensorParams& sensor = {}) {
    TopoMap m;
    m.scene_name = scene.name;
    m.meta.seed = rng.seed();
    std::vector<std::vector<sim::RayObservation>> node_obs;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        TopoNode node;
        node.id = static_cast<int>(i);
        node.position = positions[i];
        std::vector<sim::RayObservation> obs_set;
        for (int h = 0; h < kNodeHeadings; ++h) {
            const double heading = wrap_angle(2.0 * kPi * h / kNodeHeadings);
            const sim::Pose pose(positions[i].x, positions[i].y, heading);
            sim::RayObservation obs = sim::observe(scene, pose, sensor, dom, rng);
            node.descriptors.push_back(percep::extract_descriptor(fx, obs));
            obs_set.push_back(std::move(obs));
        }
        m.nodes.push_back(std::move(node));
        node_obs.push_back(std::move(obs_set));
    }
    m.adj.resize(m.nodes.size());
    for (int i = 0; i < m.size(); ++i) {
        for (int j = 0; j < m.size(); ++j) {
            if (i == j) continue;
            const double d = distance(positions[i], positions[j]);
            if (d >= connect_radius) continue;
            const double bearing = std::atan2(positions[j].y - positions[i].y,
                                              positions[j].x - positions[i].x);
            const int h = detail::closest_heading(bearing);
            const double p = percep::passage_probability(pd, node_obs[i][h]);
            m.adj[i].push_back({i, j, -std::log(p), bearing});
        }
    }
    const auto comp = detail::weak_components(m);
    const int n_comp = m.size() == 0 ? 0 : 1 + *std::max_element(comp.begin(), comp.end());
    if (n_comp > 1) {
        std::string msg = "build_map: graph is disconnected; components:";
        for (int c = 0; c < n_comp; ++c) {
            msg += " [";
            for (int v = 0; v < m.size(); ++v)
                if (comp[v] == c) msg += std::to_string(v) + " ";
            msg += "]";
        }
        throw std::runtime_error(msg);
    }
    return m;
}

/// Map from a collected dataset: positions with 18 labeled observations each
/// and an explicit adjacency. Edge weights use the observation with heading
/// closest to the bearing, scored by the (possibly finetuned) detector.
inline TopoMap build_map_from_dataset(
    const std::vector<Vec2>& positions,
    const std::vector<std::vector<sim::RayObservation>>& obs_per_position,
    const std::vector<std::pair<int, int>>& adjacency, const percep::FeatureExtractor& fx,
    const percep::PassageDetector& pd, const std::string& scene_name) {
    if (positions.size() != obs_per_position.size())
        throw std::invalid_argument("build_map_from_dataset: positions/observations mismatch");
    TopoMap m;
    m.scene_name = scene_name;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (static_cast<int>(obs_per_position[i].size()) != kNodeHeadings)
            throw std::invalid_argument("build_map_from_dataset: node " + std::to_string(i) +
                                        " is missing heading observations");
        TopoNode node;
        node.id = static_cast<int>(i);
        node.position = positions[i];
        for (const auto& obs : obs_per_position[i])
            node.descriptors.push_back(percep::extract_descriptor(fx, obs));
        m.nodes.push_back(std::move(node));
    }
    m.adj.resize(m.nodes.size());
    auto add_edge = [&](int i, int j) {
        const double bearing =
            std::atan2(positions[j].y - positions[i].y, positions[j].x - positions[i].x);
        const int h = detail::closest_heading(bearing);
        const double p = percep::passage_probability(pd, obs_per_position[i][h]);
        m.adj[i].push_back({i, j, -std::log(p), bearing});
    };
    for (const auto& [a, b] : adjacency) {
        if (a < 0 || b < 0 || a >= m.size() || b >= m.size() || a == b)
            throw std::invalid_argument("build_map_from_dataset: bad adjacency pair");
        add_edge(a, b);
        add_edge(b, a);
    }
    return m;
}

// --- serialization ---

inline nlohmann::json map_to_json(const TopoMap& m) {
    nlohmann::json j;
    j["version"] = 1;
    j["scene"] = m.scene_name;
    j["metadata"] = {{"seed", m.meta.seed}, {"fx_hash", m.meta.fx_hash}, {"pd_hash", m.meta.pd_hash}};
    j["nodes"] = nlohmann::json::array();
    for (const TopoNode& n : m.nodes) {
        nlohmann::json jn;
        jn["id"] = n.id;
        jn["position"] = {n.position.x, n.position.y};
        jn["descriptors"] = nlohmann::json::array();
        for (const auto& d : n.descriptors)
            jn["descriptors"].push_back(
                {{"values", d.values}, {"domain", sim::domain_name(d.domain)}});
        j["nodes"].push_back(std::move(jn));
    }
    j["edges"] = nlohmann::json::array();
    for (const auto& edges : m.adj)
        for (const TopoEdge& e : edges)
            j["edges"].push_back(
                {{"src", e.src}, {"dst", e.dst}, {"weight", e.weight}, {"abs_angle", e.abs_angle}});
    return j;
}

inline TopoMap map_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != 1) throw std::runtime_error("map file: unsupported version");
    TopoMap m;
    m.scene_name = j.at("scene").get<std::string>();
    m.meta.seed = j.at("metadata").at("seed").get<std::uint64_t>();
    m.meta.fx_hash = j.at("metadata").at("fx_hash").get<std::uint64_t>();
    m.meta.pd_hash = j.at("metadata").at("pd_hash").get<std::uint64_t>();
    for (const auto& jn : j.at("nodes")) {
        TopoNode n;
        n.id = jn.at("id").get<int>();
        n.position = {jn.at("position").at(0).get<double>(), jn.at("position").at(1).get<double>()};
        for (const auto& jd : jn.at("descriptors")) {
            percep::Descriptor d;
            d.values = jd.at("values").get<std::vector<double>>();
            d.domain = sim::domain_from_name(jd.at("domain").get<std::string>());
            n.descriptors.push_back(std::move(d));
        }
        m.nodes.push_back(std::move(n));
    }
    m.adj.resize(m.nodes.size());
    for (const auto& je : j.at("edges")) {
        TopoEdge e;
        e.src = je.at("src").get<int>();
        e.dst = je.at("dst").get<int>();
        e.weight = je.at("weight").get<double>();
        e.abs_angle = je.at("abs_angle").get<double>();
        m.adj.at(e.src).push_back(e);
    }
    return m;
}

inline void save_map(const TopoMap& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << map_to_json(m).dump();
}

inline TopoMap load_map(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    f >> j;
    return map_from_json(j);
}

}  // namespace topnav::tmap
