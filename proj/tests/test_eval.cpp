// Evaluation harness: grid-true shortest paths, episode sampling contracts,
// metric algebra (SR/SPL/RC/AADC/AD), and benchmark determinism.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "topnav/evaluation.hpp"

#include "helpers.hpp"

using namespace topnav;

namespace {

/// Empty rectangular scene with boundary walls, uniform texture.
sim::Scene box_scene(int w, int h, const std::string& name) {
    sim::Scene s;
    s.name = name;
    s.width = w;
    s.height = h;
    s.occ.assign(static_cast<std::size_t>(w) * h, 0);
    s.tex.assign(static_cast<std::size_t>(w) * h, 0.5);
    s.room.assign(static_cast<std::size_t>(w) * h, 0);
    for (int x = 0; x < w; ++x) s.occ[s.idx(x, 0)] = s.occ[s.idx(x, h - 1)] = 1;
    for (int y = 0; y < h; ++y) s.occ[s.idx(0, y)] = s.occ[s.idx(w - 1, y)] = 1;
    return s;
}

void fill_rect(sim::Scene& s, int x0, int y0, int x1, int y1) {
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) s.occ[s.idx(x, y)] = 1;
}

void paint_walls(sim::Scene& s) {
    for (int x = 0; x < s.width; ++x) {
        s.tex[s.idx(x, 0)] = 0.15;
        s.tex[s.idx(x, s.height - 1)] = 0.85;
    }
    for (int y = 0; y < s.height; ++y) {
        s.tex[s.idx(0, y)] = 0.35;
        s.tex[s.idx(s.width - 1, y)] = 0.65;
    }
}

/// Two-component mixture with hand-placed means; assign_label reduces to
/// nearest-mean, so cluster membership is predictable in tests.
seg::GmmModel two_cluster_gmm(Vec2 m0, Vec2 m1) {
    seg::GmmModel g;
    g.K = 2;
    g.weights = {0.5, 0.5};
    g.means = {m0, m1};
    g.covs = {{0.25, 0.0, 0.25}, {0.25, 0.0, 0.25}};
    return g;
}

/// Independent shortest-path oracle: Bellman-Ford over the same cell graph
/// (agent-clearance cells, 8-connected, corner cutting forbidden).
std::optional<double> bf_shortest(const sim::Scene& s, const Vec2& a, const Vec2& b) {
    const std::vector<double> clear = clearance_field(s);
    const auto open = [&](int cx, int cy) {
        return s.in_bounds_cell(cx, cy) && !s.occ[s.idx(cx, cy)] &&
               clear[s.idx(cx, cy)] >= sim::kAgentRadius;
    };
    const int ax = static_cast<int>(a.x / s.resolution), ay = static_cast<int>(a.y / s.resolution);
    const int bx = static_cast<int>(b.x / s.resolution), by = static_cast<int>(b.y / s.resolution);
    if (!s.in_bounds(a.x, a.y) || !s.in_bounds(b.x, b.y)) return std::nullopt;
    if (!open(ax, ay) || !open(bx, by)) return std::nullopt;

    struct E {
        int u, v;
        double w;
    };
    std::vector<E> edges;
    for (int cy = 0; cy < s.height; ++cy) {
        for (int cx = 0; cx < s.width; ++cx) {
            if (!open(cx, cy)) continue;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    if (!open(cx + dx, cy + dy)) continue;
                    if (dx != 0 && dy != 0 && (!open(cx + dx, cy) || !open(cx, cy + dy))) continue;
                    edges.push_back({s.idx(cx, cy), s.idx(cx + dx, cy + dy),
                                     dx != 0 && dy != 0 ? std::sqrt(2.0) : 1.0});
                }
            }
        }
    }
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(static_cast<std::size_t>(s.width) * s.height, inf);
    dist[s.idx(ax, ay)] = 0.0;
    for (int pass = 0; pass < s.width * s.height; ++pass) {
        bool changed = false;
        for (const E& e : edges) {
            if (dist[e.u] + e.w < dist[e.v]) {
                dist[e.v] = dist[e.u] + e.w;
                changed = true;
            }
        }
        if (!changed) break;
    }
    if (dist[s.idx(bx, by)] == inf) return std::nullopt;
    return dist[s.idx(bx, by)] * s.resolution;
}

eval::EpisodeResult result(bool success, double shortest, double navigated, double contact = 0.0,
                           double duration = 0.0, const std::string& failure = "") {
    eval::EpisodeResult r;
    r.success = success;
    r.shortest = shortest;
    r.navigated = navigated;
    r.contact_seconds = contact;
    r.duration = duration;
    r.failure = failure;
    return r;
}

}  // namespace

TEST_CASE("grid shortest path matches analytic lengths in an empty room") {
    const sim::Scene s = box_scene(40, 40, "empty");

    SECTION("axis-aligned straight line") {
        const auto d = eval::grid_shortest_length(s, {1.05, 1.05}, {3.05, 1.05});
        REQUIRE(d.has_value());
        REQUIRE(*d == Catch::Approx(2.0).margin(1e-12));
    }
    SECTION("pure diagonal") {
        const auto d = eval::grid_shortest_length(s, {1.05, 1.05}, {2.05, 2.05});
        REQUIRE(d.has_value());
        REQUIRE(*d == Catch::Approx(std::sqrt(2.0)).margin(1e-12));
    }
    SECTION("octile mix: diagonal run plus straight remainder") {
        const auto d = eval::grid_shortest_length(s, {1.05, 1.05}, {3.05, 2.05});
        REQUIRE(d.has_value());
        REQUIRE(*d == Catch::Approx(1.0 + std::sqrt(2.0)).margin(1e-12));
    }
    SECTION("identical endpoints cost zero") {
        const auto d = eval::grid_shortest_length(s, {2.0, 2.0}, {2.0, 2.0});
        REQUIRE(d.has_value());
        REQUIRE(*d == 0.0);
    }
    SECTION("endpoint hugging a wall is not traversable for the agent disc") {
        REQUIRE_FALSE(eval::grid_shortest_length(s, {1.05, 0.15}, {2.0, 2.0}).has_value());
        REQUIRE_FALSE(eval::grid_shortest_length(s, {0.05, 0.05}, {2.0, 2.0}).has_value());
    }
    SECTION("out-of-bounds endpoints") {
        REQUIRE_FALSE(eval::grid_shortest_length(s, {-1.0, 1.0}, {2.0, 2.0}).has_value());
        REQUIRE_FALSE(eval::grid_shortest_length(s, {2.0, 2.0}, {99.0, 1.0}).has_value());
    }
    SECTION("sealed chambers are unreachable") {
        sim::Scene split = box_scene(40, 40, "split");
        fill_rect(split, 19, 0, 20, 39);  // full-height dividing wall
        REQUIRE_FALSE(eval::grid_shortest_length(split, {1.0, 2.0}, {3.0, 2.0}).has_value());
    }
    SECTION("mismatched precomputed field is rejected") {
        const std::vector<double> bad(3, 1.0);
        REQUIRE_THROWS_AS(eval::grid_shortest_length(s, {1.0, 1.0}, {2.0, 2.0}, 0.18, &bad),
                          std::invalid_argument);
    }
}

TEST_CASE("grid shortest path agrees with a Bellman-Ford oracle on random scenes") {
    Rng rng(4021);
    for (int trial = 0; trial < 5; ++trial) {
        sim::Scene s = box_scene(24, 16, "rand" + std::to_string(trial));
        for (int k = 0; k < 4; ++k) {
            const int x0 = static_cast<int>(rng.uniform_int(2, 18));
            const int y0 = static_cast<int>(rng.uniform_int(2, 10));
            fill_rect(s, x0, y0, x0 + static_cast<int>(rng.uniform_int(0, 3)),
                      y0 + static_cast<int>(rng.uniform_int(0, 3)));
        }
        const std::vector<double> clear = clearance_field(s);
        for (int q = 0; q < 6; ++q) {
            const Vec2 a{rng.uniform(0.1, 2.3), rng.uniform(0.1, 1.5)};
            const Vec2 b{rng.uniform(0.1, 2.3), rng.uniform(0.1, 1.5)};
            const auto got = eval::grid_shortest_length(s, a, b, sim::kAgentRadius, &clear);
            const auto want = bf_shortest(s, a, b);
            REQUIRE(got.has_value() == want.has_value());
            if (got) REQUIRE(*got == Catch::Approx(*want).margin(1e-9));
        }
    }
}

TEST_CASE("episode sampling honors cluster, separation, and reachability constraints") {
    sim::Scene s = box_scene(60, 40, "tworoom");
    const seg::GmmModel gmm = two_cluster_gmm({1.5, 2.0}, {4.5, 2.0});

    SECTION("sampled specs satisfy every constraint and are seed-deterministic") {
        const auto eps = eval::sample_episodes(s, gmm, 12, 97);
        REQUIRE(eps.size() == 12);
        for (const eval::EpisodeSpec& e : eps) {
            const Vec2 sp{e.start.x, e.start.y};
            REQUIRE(seg::assign_label(gmm, sp) != seg::assign_label(gmm, e.goal_pos));
            REQUIRE((e.goal_pos - sp).norm() >= eval::kMinSeparation);
            REQUIRE(e.shortest > 0.0);
            REQUIRE(std::isfinite(e.shortest));
            // grid length is at least the straight line minus cell snapping slack
            REQUIRE(e.shortest >= (e.goal_pos - sp).norm() - 0.15);
            REQUIRE(e.start.theta >= -kPi);
            REQUIRE(e.start.theta <= kPi);
        }
        const auto again = eval::sample_episodes(s, gmm, 12, 97);
        for (std::size_t i = 0; i < eps.size(); ++i) {
            REQUIRE(eps[i].start.x == again[i].start.x);
            REQUIRE(eps[i].start.y == again[i].start.y);
            REQUIRE(eps[i].start.theta == again[i].start.theta);
            REQUIRE(eps[i].goal_pos.x == again[i].goal_pos.x);
            REQUIRE(eps[i].goal_pos.y == again[i].goal_pos.y);
            REQUIRE(eps[i].goal_heading == again[i].goal_heading);
            REQUIRE(eps[i].shortest == again[i].shortest);
        }
        const auto other = eval::sample_episodes(s, gmm, 12, 98);
        bool any_diff = false;
        for (std::size_t i = 0; i < eps.size(); ++i)
            any_diff = any_diff || eps[i].start.x != other[i].start.x;
        REQUIRE(any_diff);
    }

    SECTION("unsatisfiable constraints fail with the achieved count") {
        // both means identical: every point lands in cluster 0, so no pair is
        // ever cluster-distinct
        const seg::GmmModel degenerate = two_cluster_gmm({3.0, 2.0}, {3.0, 2.0});
        REQUIRE_THROWS_WITH(eval::sample_episodes(s, degenerate, 3, 5, 0, 0.25, 40),
                            Catch::Matchers::ContainsSubstring("achieved 0 of 3"));
    }

    SECTION("argument validation") {
        REQUIRE_THROWS_AS(eval::sample_episodes(s, gmm, 0, 1), std::invalid_argument);
        seg::GmmModel one;
        one.K = 1;
        one.weights = {1.0};
        one.means = {{3.0, 2.0}};
        one.covs = {{0.25, 0.0, 0.25}};
        REQUIRE_THROWS_AS(eval::sample_episodes(s, one, 3, 1), std::invalid_argument);
    }

    SECTION("a dividing wall with no door separates the clusters: zero achieved") {
        sim::Scene walled = box_scene(60, 40, "walled");
        fill_rect(walled, 29, 0, 30, 39);
        REQUIRE_THROWS_WITH(eval::sample_episodes(walled, gmm, 2, 7, 0, 0.25, 60),
                            Catch::Matchers::ContainsSubstring("achieved 0 of 2"));
    }
}

TEST_CASE("metric algebra reproduces hand-computed values") {
    SECTION("single success with optimal path") {
        const auto m = eval::compute_metrics({result(true, 5.0, 5.0, 0.0, 12.5)});
        REQUIRE(m.sr == 1.0);
        REQUIRE(m.spl == 1.0);
        REQUIRE(m.rc == 0.0);
        REQUIRE(m.aadc == 0.0);
        REQUIRE(m.ad == 12.5);
        REQUIRE(m.episodes == 1);
    }
    SECTION("one detour success plus one failure") {
        const auto m = eval::compute_metrics(
            {result(true, 10.0, 20.0, 0.0, 30.0), result(false, 8.0, 3.0, 0.0, 50.0, "timeout")});
        REQUIRE(m.sr == 0.5);
        REQUIRE(m.spl == 0.25);
        REQUIRE(m.ad == 40.0);
    }
    SECTION("all failures: zero by convention") {
        const auto m = eval::compute_metrics(
            {result(false, 5.0, 1.0, 2.0, 10.0, "timeout"), result(false, 5.0, 0.0, 0.0, 20.0, "no_path")});
        REQUIRE(m.sr == 0.0);
        REQUIRE(m.spl == 0.0);
        REQUIRE(m.rc == 0.0);   // convention: no successes
        REQUIRE(m.aadc == 0.0); // convention: no successes
        REQUIRE(m.ad == 15.0);
        // the failed run's contact does not leak into AADC
    }
    SECTION("contact accounting only counts successful episodes") {
        const auto m = eval::compute_metrics({result(true, 4.0, 4.0, 3.0, 10.0),
                                              result(true, 4.0, 8.0, 0.0, 20.0),
                                              result(false, 4.0, 1.0, 9.0, 30.0, "timeout")});
        REQUIRE(m.sr == Catch::Approx(2.0 / 3.0));
        REQUIRE(m.spl == Catch::Approx((1.0 + 0.5) / 3.0));
        REQUIRE(m.rc == 0.5);    // one of two successes touched a wall
        REQUIRE(m.aadc == 1.5);  // (3 + 0) / 2
        REQUIRE(m.ad == 20.0);
    }
    SECTION("navigated shorter than shortest still caps the term at one") {
        // the agent can luck into a line shorter than the grid path; the max()
        // in the denominator keeps the term at 1, never above
        const auto m = eval::compute_metrics({result(true, 5.0, 4.0, 0.0, 10.0)});
        REQUIRE(m.spl == 1.0);
    }
    SECTION("degenerate zero-length success counts as a perfect path") {
        const auto m = eval::compute_metrics({result(true, 0.0, 0.0, 0.0, 0.0)});
        REQUIRE(m.spl == 1.0);
    }
    SECTION("validation") {
        REQUIRE_THROWS_AS(eval::compute_metrics({}), std::invalid_argument);
        REQUIRE_THROWS_AS(eval::compute_metrics({result(true, 1.0, -0.5)}), std::invalid_argument);
        REQUIRE_THROWS_AS(eval::compute_metrics({result(true, -1.0, 0.5)}), std::invalid_argument);
    }
}

TEST_CASE("metric invariants hold under fuzzing and reordering") {
    Rng rng(7311);
    for (int trial = 0; trial < 10000; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_int(0, 14));
        std::vector<eval::EpisodeResult> rs;
        for (int i = 0; i < n; ++i)
            rs.push_back(result(rng.bernoulli(0.5), rng.uniform(0.0, 20.0), rng.uniform(0.0, 30.0),
                                rng.bernoulli(0.3) ? rng.uniform(0.0, 10.0) : 0.0,
                                rng.uniform(0.0, 300.0)));
        const auto m = eval::compute_metrics(rs);
        REQUIRE(m.sr >= 0.0);
        REQUIRE(m.sr <= 1.0);
        REQUIRE(m.spl >= 0.0);
        REQUIRE(m.spl <= m.sr + 1e-15);
        REQUIRE(m.rc >= 0.0);
        REQUIRE(m.rc <= 1.0);
        REQUIRE(m.aadc >= 0.0);
        if (trial % 100 == 0) {
            std::vector<eval::EpisodeResult> shuffled = rs;
            rng.shuffle(shuffled);
            const auto m2 = eval::compute_metrics(shuffled);
            REQUIRE(m2.sr == m.sr);
            REQUIRE(m2.spl == Catch::Approx(m.spl).margin(1e-12));
            REQUIRE(m2.rc == m.rc);
            REQUIRE(m2.aadc == Catch::Approx(m.aadc).margin(1e-12));
            REQUIRE(m2.ad == Catch::Approx(m.ad).margin(1e-12));
        }
    }
}

TEST_CASE("benchmark is reproducible, thread-count invariant, and well-formed") {
    sim::Scene s = box_scene(60, 40, "bench");
    paint_walls(s);
    const seg::GmmModel gmm = two_cluster_gmm({1.5, 2.0}, {4.5, 2.0});

    Rng mrng(31);
    const percep::FeatureExtractor fx = percep::FeatureExtractor::make({}, mrng);
    percep::PassageDetector pd;
    pd.fx = percep::FeatureExtractor::make({}, mrng);
    pd.head = nn::Mlp::make({pd.fx.cfg.descriptor_dim(), 64, 1}, mrng);
    const pol::LocalPolicy policy = pol::LocalPolicy::make({}, mrng);
    nav::NavModels models;
    models.fx_loc = &fx;
    models.pd = &pd;
    models.policy = &policy;

    // a small chain map; untrained models make most episodes fail, which is
    // fine: the contract under test is reproducibility and report shape
    const std::vector<Vec2> pos{{1.5, 2.0}, {3.0, 2.0}, {4.5, 2.0}};
    Rng obs_rng(5);
    const sim::DomainParams dom = sim::DomainParams::sim();
    std::vector<std::vector<sim::RayObservation>> node_obs;
    for (const Vec2& p : pos) {
        std::vector<sim::RayObservation> per;
        for (int h = 0; h < tmap::kNodeHeadings; ++h)
            per.push_back(sim::observe(
                s, {p.x, p.y, wrap_angle(2.0 * kPi * h / tmap::kNodeHeadings)}, {}, dom, obs_rng));
        node_obs.push_back(std::move(per));
    }
    const tmap::TopoMap map =
        tmap::build_map_from_dataset(pos, node_obs, {{0, 1}, {1, 2}}, fx, pd, s.name);

    eval::BenchConfig cfg;
    cfg.nav.max_episode_seconds = 6.0;  // keep untrained episodes short
    cfg.nav.segments_per_waypoint = 2;

    std::vector<eval::BenchScene> scenes(1);
    scenes[0].name = "bench";
    scenes[0].scene = &s;
    scenes[0].gmm = &gmm;
    scenes[0].map = &map;
    scenes[0].episodes = 3;
    scenes[0].seed = 11;

    const eval::BenchOutput a = eval::run_benchmark(scenes, models, cfg);
    REQUIRE(a.rows.size() == 3);
    REQUIRE(a.report.episodes == 3);
    REQUIRE(a.report.per_scene.size() == 1);
    REQUIRE(a.report.per_scene[0].scene == "bench");
    REQUIRE(a.report.per_scene[0].episodes == 3);
    REQUIRE(a.report.spl <= a.report.sr + 1e-15);
    for (const eval::EpisodeRow& r : a.rows) {
        REQUIRE(r.result.shortest == r.spec.shortest);
        REQUIRE(r.result.navigated >= 0.0);
        if (!r.result.success) REQUIRE_FALSE(r.result.failure.empty());
    }

    SECTION("same inputs, same output, bit for bit") {
        const eval::BenchOutput b = eval::run_benchmark(scenes, models, cfg);
        REQUIRE(b.report.sr == a.report.sr);
        REQUIRE(b.report.spl == a.report.spl);
        REQUIRE(b.report.ad == a.report.ad);
        for (std::size_t i = 0; i < a.rows.size(); ++i) {
            REQUIRE(b.rows[i].result.success == a.rows[i].result.success);
            REQUIRE(b.rows[i].result.navigated == a.rows[i].result.navigated);
            REQUIRE(b.rows[i].result.duration == a.rows[i].result.duration);
            REQUIRE(b.rows[i].result.failure == a.rows[i].result.failure);
            REQUIRE(b.rows[i].seed == a.rows[i].seed);
        }
    }

    SECTION("jobs > 1 reproduces the sequential results exactly") {
        eval::BenchConfig par = cfg;
        par.jobs = 3;
        const eval::BenchOutput b = eval::run_benchmark(scenes, models, par);
        for (std::size_t i = 0; i < a.rows.size(); ++i) {
            REQUIRE(b.rows[i].result.success == a.rows[i].result.success);
            REQUIRE(b.rows[i].result.navigated == a.rows[i].result.navigated);
            REQUIRE(b.rows[i].result.duration == a.rows[i].result.duration);
        }
        REQUIRE(b.report.sr == a.report.sr);
    }

    SECTION("csv and report files have the right shape") {
        eval::write_metrics_csv(a.report, "eval_metrics.csv");
        eval::write_per_episode_csv(a.rows, "eval_episodes.csv");
        eval::write_report_md(a.report, "eval_report.md");
        const auto count_lines = [](const std::string& path) {
            std::ifstream f(path);
            REQUIRE(f.good());
            int n = 0;
            std::string line;
            while (std::getline(f, line))
                if (!line.empty()) ++n;
            return n;
        };
        REQUIRE(count_lines("eval_metrics.csv") == 3);   // header + scene + overall
        REQUIRE(count_lines("eval_episodes.csv") == 4);  // header + 3 episodes
        std::ifstream f("eval_metrics.csv");
        std::string header;
        std::getline(f, header);
        REQUIRE(header == "scene,episodes,sr,spl,rc,aadc,ad");
        REQUIRE(count_lines("eval_report.md") >= 4);  // title + table head + rule + rows
        std::remove("eval_metrics.csv");
        std::remove("eval_episodes.csv");
        std::remove("eval_report.md");
    }

    SECTION("missing artifacts are named") {
        std::vector<eval::BenchScene> broken = scenes;
        broken[0].map = nullptr;
        REQUIRE_THROWS_WITH(eval::run_benchmark(broken, models, cfg),
                            Catch::Matchers::ContainsSubstring("bench"));
    }
}
