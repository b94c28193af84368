#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "topnav/geometry.hpp"
#include "topnav/gmm.hpp"
#include "topnav/navruntime.hpp"
#include "topnav/rng.hpp"
#include "topnav/scene.hpp"
#include "topnav/sim.hpp"
#include "topnav/topomap.hpp"

namespace topnav::eval {

// --- episode specification -----------------------------------------------------

struct EpisodeSpec {
    int scene_id = 0;
    sim::Pose start;
    Vec2 goal_pos;
    double goal_heading = 0.0;
    double shortest = 0.0;  // grid-true shortest path length, meters
};

struct EpisodeResult {
    bool success = false;
    double shortest = 0.0;
    double navigated = 0.0;
    double contact_seconds = 0.0;
    double duration = 0.0;
    std::string failure;  // empty on success
};

// --- grid shortest path ---------------------------------------------------------

/// Dijkstra over cell centers with 8-connected moves (orthogonal steps cost one
/// cell, diagonal steps sqrt(2) cells, corner cutting forbidden); a cell is
/// traversable when its clearance covers the agent disc. Returns nullopt when
/// no path exists. Endpoint poses are snapped to their containing cells.
/// Callers doing many queries on one scene should pass a precomputed
/// clearance_field.
inline std::optional<double> grid_shortest_length(const sim::Scene& s, const Vec2& a, const Vec2& b,
                                                  double min_clearance = sim::kAgentRadius,
                                                  const std::vector<double>* clear_field = nullptr) {
    if (!s.in_bounds(a.x, a.y) || !s.in_bounds(b.x, b.y)) return std::nullopt;
    std::vector<double> local;
    if (!clear_field) {
        local = clearance_field(s);
        clear_field = &local;
    }
    const std::vector<double>& clear = *clear_field;
    if (clear.size() != static_cast<std::size_t>(s.width) * s.height)
        throw std::invalid_argument("grid_shortest_length: clearance field size mismatch");
    const auto open = [&](int cx, int cy) {
        return s.in_bounds_cell(cx, cy) && !s.occ[s.idx(cx, cy)] &&
               clear[s.idx(cx, cy)] >= min_clearance;
    };
    const int ax = static_cast<int>(a.x / s.resolution), ay = static_cast<int>(a.y / s.resolution);
    const int bx = static_cast<int>(b.x / s.resolution), by = static_cast<int>(b.y / s.resolution);
    if (!open(ax, ay) || !open(bx, by)) return std::nullopt;

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(static_cast<std::size_t>(s.width) * s.height, inf);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[s.idx(ax, ay)] = 0.0;
    pq.push({0.0, s.idx(ax, ay)});
    const int goal = s.idx(bx, by);
    while (!pq.empty()) {
        const auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[u]) continue;
        if (u == goal) return d * s.resolution;
        const int ux = u % s.width, uy = u / s.width;
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                if (dx == 0 && dy == 0) continue;
                const int vx = ux + dx, vy = uy + dy;
                if (!open(vx, vy)) continue;
                // forbid cutting a blocked corner on diagonal moves
                if (dx != 0 && dy != 0 && (!open(ux + dx, uy) || !open(ux, uy + dy))) continue;
                const double step = (dx != 0 && dy != 0) ? std::sqrt(2.0) : 1.0;
                const int v = s.idx(vx, vy);
                if (d + step < dist[v]) {
                    dist[v] = d + step;
                    pq.push({d + step, v});
                }
            }
        }
    }
    return std::nullopt;
}

// --- episode sampling ------------------------------------------------------------

inline constexpr double kMinSeparation = 2.5;  // meters between start and goal

/// Rejection-sample n episodes whose start and goal lie in different GMM
/// clusters, at least kMinSeparation apart, and connected on the clearance
/// grid. Shortest lengths come from grid_shortest_length. Throws when the
/// attempt budget runs out, reporting how many episodes were achieved.
inline std::vector<EpisodeSpec> sample_episodes(const sim::Scene& scene, const seg::GmmModel& gmm,
                                                int n, std::uint64_t seed, int scene_id = 0,
                                                double min_clearance = 0.25,
                                                int max_attempts_per_episode = 500) {
    if (n <= 0) throw std::invalid_argument("sample_episodes: n must be positive");
    if (gmm.K < 2) throw std::invalid_argument("sample_episodes: scene needs at least 2 clusters");
    Rng rng(seed);

    // one clearance field per scene; 4-connected components over agent-open
    // cells give an O(1) reachability filter (the corner-cutting rule makes
    // diagonal connectivity identical to 4-connectivity)
    const std::vector<double> clear = clearance_field(scene);
    const auto open_cell = [&](int cx, int cy) {
        return scene.in_bounds_cell(cx, cy) && !scene.occ[scene.idx(cx, cy)] &&
               clear[scene.idx(cx, cy)] >= sim::kAgentRadius;
    };
    std::vector<int> comp(clear.size(), -1);
    int n_comp = 0;
    for (int cy = 0; cy < scene.height; ++cy) {
        for (int cx = 0; cx < scene.width; ++cx) {
            if (!open_cell(cx, cy) || comp[scene.idx(cx, cy)] != -1) continue;
            std::queue<std::pair<int, int>> q;
            q.push({cx, cy});
            comp[scene.idx(cx, cy)] = n_comp;
            while (!q.empty()) {
                const auto [ux, uy] = q.front();
                q.pop();
                const int dx4[4] = {1, -1, 0, 0}, dy4[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int vx = ux + dx4[k], vy = uy + dy4[k];
                    if (!open_cell(vx, vy) || comp[scene.idx(vx, vy)] != -1) continue;
                    comp[scene.idx(vx, vy)] = n_comp;
                    q.push({vx, vy});
                }
            }
            ++n_comp;
        }
    }
    const auto comp_at = [&](const Vec2& p) {
        const int cx = static_cast<int>(p.x / scene.resolution);
        const int cy = static_cast<int>(p.y / scene.resolution);
        return scene.in_bounds_cell(cx, cy) ? comp[scene.idx(cx, cy)] : -1;
    };

    std::vector<EpisodeSpec> out;
    const long budget = static_cast<long>(n) * max_attempts_per_episode;
    for (long attempt = 0; attempt < budget && static_cast<int>(out.size()) < n; ++attempt) {
        Vec2 sp, gp;
        try {
            sp = sample_free_position(scene, rng, min_clearance, 2000);
            gp = sample_free_position(scene, rng, min_clearance, 2000);
        } catch (const std::runtime_error&) {
            break;  // scene too tight; report achieved count below
        }
        if (seg::assign_label(gmm, sp) == seg::assign_label(gmm, gp)) continue;
        if ((gp - sp).norm() < kMinSeparation) continue;
        if (comp_at(sp) < 0 || comp_at(sp) != comp_at(gp)) continue;
        const auto len = grid_shortest_length(scene, sp, gp, sim::kAgentRadius, &clear);
        if (!len) continue;
        EpisodeSpec ep;
        ep.scene_id = scene_id;
        ep.start = sim::Pose(sp.x, sp.y, rng.uniform(-kPi, kPi));
        ep.goal_pos = gp;
        ep.goal_heading = rng.uniform(-kPi, kPi);
        ep.shortest = *len;
        out.push_back(ep);
    }
    if (static_cast<int>(out.size()) < n)
        throw std::runtime_error("sample_episodes: achieved " + std::to_string(out.size()) +
                                 " of " + std::to_string(n) + " episodes within attempt budget");
    return out;
}

// --- metrics ----------------------------------------------------------------------

struct SceneMetrics {
    std::string scene;
    int episodes = 0;
    double sr = 0.0, spl = 0.0, rc = 0.0, aadc = 0.0, ad = 0.0;
};

struct MetricsReport {
    double sr = 0.0;    // success rate
    double spl = 0.0;   // success weighted by shortest/navigated
    double rc = 0.0;    // successful runs with at least one contact / successful runs
    double aadc = 0.0;  // mean contact seconds over successful runs
    double ad = 0.0;    // mean episode duration, seconds
    int episodes = 0;
    std::vector<SceneMetrics> per_scene;
};

/// Pure fold over episode results. SPL term = success * shortest /
/// max(shortest, navigated); a degenerate success with both lengths zero
/// counts as a perfect path. RC and AADC are 0 by convention when nothing
/// succeeded.
inline MetricsReport compute_metrics(const std::vector<EpisodeResult>& results) {
    if (results.empty()) throw std::invalid_argument("compute_metrics: empty result list");
    MetricsReport r;
    r.episodes = static_cast<int>(results.size());
    int succ = 0, succ_contact = 0;
    double spl_sum = 0.0, contact_sum = 0.0, dur_sum = 0.0;
    for (const EpisodeResult& e : results) {
        if (e.navigated < 0.0 || e.shortest < 0.0 || e.contact_seconds < 0.0 || e.duration < 0.0)
            throw std::invalid_argument("compute_metrics: negative field in episode result");
        dur_sum += e.duration;
        if (!e.success) continue;
        ++succ;
        const double denom = std::max(e.shortest, e.navigated);
        spl_sum += denom > 0.0 ? e.shortest / denom : 1.0;
        if (e.contact_seconds > 0.0) ++succ_contact;
        contact_sum += e.contact_seconds;
    }
    r.sr = static_cast<double>(succ) / r.episodes;
    r.spl = spl_sum / r.episodes;
    r.rc = succ > 0 ? static_cast<double>(succ_contact) / succ : 0.0;
    r.aadc = succ > 0 ? contact_sum / succ : 0.0;
    r.ad = dur_sum / r.episodes;
    return r;
}

// --- benchmark ---------------------------------------------------------------------

struct BenchScene {
    std::string name;
    const sim::Scene* scene = nullptr;
    const seg::GmmModel* gmm = nullptr;
    const tmap::TopoMap* map = nullptr;
    int episodes = 25;
    std::uint64_t seed = 1;
};

struct BenchConfig {
    nav::NavConfig nav;
    sim::DomainParams dom = sim::DomainParams::sim();
    sim::SensorParams sensor;
    int jobs = 1;
    double sample_clearance = 0.25;
};

struct EpisodeRow {
    std::string scene;
    int index = 0;
    std::uint64_t seed = 0;
    EpisodeSpec spec;
    EpisodeResult result;
};

struct BenchOutput {
    MetricsReport report;
    std::vector<EpisodeRow> rows;
};

namespace detail {

inline SceneMetrics scene_row(const std::string& name, const std::vector<EpisodeResult>& rs) {
    const MetricsReport m = compute_metrics(rs);
    SceneMetrics s;
    s.scene = name;
    s.episodes = m.episodes;
    s.sr = m.sr;
    s.spl = m.spl;
    s.rc = m.rc;
    s.aadc = m.aadc;
    s.ad = m.ad;
    return s;
}

}  // namespace detail

/// Run one episode spec against a map. The goal observation is rendered in the
/// benchmark domain from its own stream, so episode outcomes stay independent
/// of ordering.
inline EpisodeResult run_episode_spec(const sim::Scene& scene, const tmap::MapView& view,
                                      const nav::NavModels& models, const EpisodeSpec& spec,
                                      const BenchConfig& cfg, std::uint64_t seed) {
    Rng goal_rng = Rng(seed).fork(0xB0A7);
    const sim::RayObservation goal_obs =
        sim::observe(scene, sim::Pose(spec.goal_pos.x, spec.goal_pos.y, spec.goal_heading),
                     cfg.sensor, cfg.dom, goal_rng);
    const nav::EpisodeOutcome out = nav::run_episode(scene, view, models, spec.start, goal_obs,
                                                     spec.goal_pos, cfg.nav, cfg.dom, seed);
    EpisodeResult r;
    r.success = out.success;
    r.shortest = spec.shortest;
    r.navigated = out.navigated;
    r.contact_seconds = out.contact_seconds;
    r.duration = out.duration;
    r.failure = out.failure;
    return r;
}

/// Sample and run every scene's episodes, aggregate per scene and overall.
/// Episode seeds derive from the scene seed and episode index, so results are
/// reproducible for any job count; jobs > 1 fans episodes out over threads.
inline BenchOutput run_benchmark(const std::vector<BenchScene>& scenes,
                                 const nav::NavModels& models, const BenchConfig& cfg) {
    models.validate();
    if (scenes.empty()) throw std::invalid_argument("run_benchmark: no scenes");
    for (const BenchScene& bs : scenes) {
        if (!bs.scene) throw std::invalid_argument("run_benchmark: missing scene: " + bs.name);
        if (!bs.gmm) throw std::invalid_argument("run_benchmark: missing gmm: " + bs.name);
        if (!bs.map) throw std::invalid_argument("run_benchmark: missing map: " + bs.name);
    }
    BenchOutput out;
    std::vector<EpisodeResult> all;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
        const BenchScene& bs = scenes[si];
        const std::vector<EpisodeSpec> specs =
            sample_episodes(*bs.scene, *bs.gmm, bs.episodes, bs.seed, static_cast<int>(si),
                            cfg.sample_clearance);
        const tmap::MapView view(*bs.map);
        std::vector<std::uint64_t> seeds(specs.size());
        for (std::size_t i = 0; i < specs.size(); ++i) seeds[i] = Rng(bs.seed).fork(1000 + i).seed();
        std::vector<EpisodeResult> results(specs.size());
        const auto run_one = [&](std::size_t i) {
            results[i] = run_episode_spec(*bs.scene, view, models, specs[i], cfg, seeds[i]);
        };
        if (cfg.jobs <= 1) {
            for (std::size_t i = 0; i < specs.size(); ++i) run_one(i);
        } else {
            // striped assignment over immutable inputs; each thread writes its
            // own result slots, so no locking is needed
            std::vector<std::thread> pool;
            const int n_threads = std::min<int>(cfg.jobs, static_cast<int>(specs.size()));
            pool.reserve(n_threads);
            for (int t = 0; t < n_threads; ++t)
                pool.emplace_back([&, t] {
                    for (std::size_t i = t; i < specs.size(); i += n_threads) run_one(i);
                });
            for (std::thread& th : pool) th.join();
        }
        for (std::size_t i = 0; i < specs.size(); ++i) {
            EpisodeRow row;
            row.scene = bs.name;
            row.index = static_cast<int>(i);
            row.seed = seeds[i];
            row.spec = specs[i];
            row.result = results[i];
            out.rows.push_back(std::move(row));
        }
        out.report.per_scene.push_back(detail::scene_row(bs.name, results));
        all.insert(all.end(), results.begin(), results.end());
    }
    const MetricsReport overall = compute_metrics(all);
    out.report.sr = overall.sr;
    out.report.spl = overall.spl;
    out.report.rc = overall.rc;
    out.report.aadc = overall.aadc;
    out.report.ad = overall.ad;
    out.report.episodes = overall.episodes;
    return out;
}

// --- report emission ----------------------------------------------------------------

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace detail

/// metrics.csv: one row per scene plus an "overall" row.
inline void write_metrics_csv(const MetricsReport& r, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << "scene,episodes,sr,spl,rc,aadc,ad\n";
    const auto row = [&](const std::string& name, int n, double sr, double spl, double rc,
                         double aadc, double ad) {
        f << name << ',' << n << ',' << detail::fmt(sr) << ',' << detail::fmt(spl) << ','
          << detail::fmt(rc) << ',' << detail::fmt(aadc) << ',' << detail::fmt(ad) << '\n';
    };
    for (const SceneMetrics& s : r.per_scene) row(s.scene, s.episodes, s.sr, s.spl, s.rc, s.aadc, s.ad);
    row("overall", r.episodes, r.sr, r.spl, r.rc, r.aadc, r.ad);
}

/// per-episode.csv: one row per run episode.
inline void write_per_episode_csv(const std::vector<EpisodeRow>& rows, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << "scene,episode,seed,start_x,start_y,start_theta,goal_x,goal_y,shortest,"
         "success,navigated,contact_seconds,duration,failure\n";
    for (const EpisodeRow& r : rows) {
        f << r.scene << ',' << r.index << ',' << r.seed << ',' << detail::fmt(r.spec.start.x)
          << ',' << detail::fmt(r.spec.start.y) << ',' << detail::fmt(r.spec.start.theta) << ','
          << detail::fmt(r.spec.goal_pos.x) << ',' << detail::fmt(r.spec.goal_pos.y) << ','
          << detail::fmt(r.spec.shortest) << ',' << (r.result.success ? 1 : 0) << ','
          << detail::fmt(r.result.navigated) << ',' << detail::fmt(r.result.contact_seconds)
          << ',' << detail::fmt(r.result.duration) << ',' << r.result.failure << '\n';
    }
}

/// report.md: human-readable per-scene table plus the overall row.
inline void write_report_md(const MetricsReport& r, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << "# Navigation benchmark\n\n";
    f << "| scene | episodes | SR | SPL | RC | AADC (s) | AD (s) |\n";
    f << "|---|---|---|---|---|---|---|\n";
    const auto row = [&](const std::string& name, int n, double sr, double spl, double rc,
                         double aadc, double ad) {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os.precision(3);
        os << "| " << name << " | " << n << " | " << sr << " | " << spl << " | " << rc << " | "
           << aadc << " | " << ad << " |\n";
        f << os.str();
    };
    for (const SceneMetrics& s : r.per_scene) row(s.scene, s.episodes, s.sr, s.spl, s.rc, s.aadc, s.ad);
    row("overall", r.episodes, r.sr, r.spl, r.rc, r.aadc, r.ad);
}

}  // namespace topnav::eval
