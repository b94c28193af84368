// World model tests: scene generation, kinematics + collision, raycasting,
// domain distortions, clearance, segment checks. Oracles are independent
// re-derivations (analytic ray-box, supercover rasterization, folded-normal
// statistics, closed-form time-to-wall), not re-runs of the implementation.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "topnav/scene.hpp"
#include "topnav/sim.hpp"

using namespace topnav;
using namespace topnav::sim;

namespace {

Scene one_room(int w = 16, int h = 16, std::uint64_t seed = 7) {
    SceneSpec spec;
    spec.rooms = 1;
    spec.width = w;
    spec.height = h;
    spec.clutter = 0.0;
    return generate_scene(spec, seed);
}

// Analytic first-hit distance from an interior point of an axis-aligned free
// box to its boundary, along direction `ang`.
double ray_box_exit(double px, double py, double ang, double x0, double y0, double x1, double y1) {
    const double dx = std::cos(ang), dy = std::sin(ang);
    double t = 1e300;
    if (dx > 1e-15) t = std::min(t, (x1 - px) / dx);
    if (dx < -1e-15) t = std::min(t, (x0 - px) / dx);
    if (dy > 1e-15) t = std::min(t, (y1 - py) / dy);
    if (dy < -1e-15) t = std::min(t, (y0 - py) / dy);
    return t;
}

// Exhaustive supercover oracle: the segment is blocked iff it spends positive
// length inside some occupied cell. Interval clipping per cell, bbox-limited.
bool segment_clear_oracle(const Scene& s, const Vec2& a, const Vec2& b) {
    const double len = distance(a, b);
    const int lo_x = std::max(0, s.cell_of(std::min(a.x, b.x)) - 1);
    const int hi_x = std::min(s.width - 1, s.cell_of(std::max(a.x, b.x)) + 1);
    const int lo_y = std::max(0, s.cell_of(std::min(a.y, b.y)) - 1);
    const int hi_y = std::min(s.height - 1, s.cell_of(std::max(a.y, b.y)) + 1);
    for (int cy = lo_y; cy <= hi_y; ++cy) {
        for (int cx = lo_x; cx <= hi_x; ++cx) {
            if (!s.occ[s.idx(cx, cy)]) continue;
            // clip segment parameter range to the cell slab-by-slab
            double t0 = 0.0, t1 = 1.0;
            const double x0 = cx * s.resolution, x1 = (cx + 1) * s.resolution;
            const double y0 = cy * s.resolution, y1 = (cy + 1) * s.resolution;
            const double dx = b.x - a.x, dy = b.y - a.y;
            bool empty = false;
            auto clip = [&](double p, double d, double lo, double hi) {
                if (std::abs(d) < 1e-300) {
                    if (p < lo || p > hi) empty = true;
                    return;
                }
                double u0 = (lo - p) / d, u1 = (hi - p) / d;
                if (u0 > u1) std::swap(u0, u1);
                t0 = std::max(t0, u0);
                t1 = std::min(t1, u1);
            };
            clip(a.x, dx, x0, x1);
            clip(a.y, dy, y0, y1);
            if (!empty && t1 - t0 > 1e-9 / std::max(len, 1e-9)) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("generate_scene: single empty room is one free rectangle") {
    const Scene s = one_room();
    // free cells form exactly the interior rectangle [1,14]x[1,14]
    for (int cy = 0; cy < s.height; ++cy) {
        for (int cx = 0; cx < s.width; ++cx) {
            const bool boundary = cx == 0 || cy == 0 || cx == s.width - 1 || cy == s.height - 1;
            REQUIRE(static_cast<bool>(s.occ[s.idx(cx, cy)]) == boundary);
            if (!boundary) REQUIRE(s.room[s.idx(cx, cy)] == 0);
        }
    }
    REQUIRE(s.num_rooms() == 1);
}

TEST_CASE("generate_scene: determinism, connectivity, invariants") {
    SceneSpec spec;
    spec.rooms = 4;
    spec.width = 64;
    spec.height = 64;
    spec.clutter = 0.05;
    const Scene a = generate_scene(spec, 1);
    const Scene b = generate_scene(spec, 1);
    REQUIRE(a.occ == b.occ);
    REQUIRE(a.tex == b.tex);
    REQUIRE(a.room == b.room);

    REQUIRE(is_connected(a));
    REQUIRE(a.num_rooms() == 4);
    // boundary occupied; every free cell labeled
    for (int cx = 0; cx < a.width; ++cx) {
        REQUIRE(a.occ[a.idx(cx, 0)] == 1);
        REQUIRE(a.occ[a.idx(cx, a.height - 1)] == 1);
    }
    for (int i = 0; i < a.width * a.height; ++i)
        if (!a.occ[i]) REQUIRE(a.room[i] != kNoRoom);

    // a different seed changes the layout
    const Scene c = generate_scene(spec, 2);
    REQUIRE(a.occ != c.occ);
}

TEST_CASE("generate_scene: infeasible and invalid specs throw") {
    SceneSpec spec;
    spec.rooms = 50;  // cannot fit in 16x16
    spec.width = 16;
    spec.height = 16;
    REQUIRE_THROWS_AS(generate_scene(spec, 3), std::invalid_argument);
    spec.rooms = 0;
    REQUIRE_THROWS_AS(generate_scene(spec, 3), std::invalid_argument);
    spec.rooms = 1;
    spec.clutter = 1.5;
    REQUIRE_THROWS_AS(generate_scene(spec, 3), std::invalid_argument);
    spec.clutter = 0.0;
    spec.width = 6;
    REQUIRE_THROWS_AS(generate_scene(spec, 3), std::invalid_argument);
}

TEST_CASE("step: zero command and pure rotation") {
    const Scene s = one_room(32, 32);
    const Pose p(1.6, 1.6, 0.3);
    auto [q, contact] = step(s, p, VelocityCommand(0.0, 0.0), 0.1);
    REQUIRE(q.x == p.x);
    REQUIRE(q.y == p.y);
    REQUIRE(q.theta == p.theta);
    REQUIRE_FALSE(contact);

    // command range caps w at 0.5 rad/s, so spin for pi seconds to reach pi/2
    auto [r, c2] = step(s, Pose(1.6, 1.6, 0.0), VelocityCommand(0.0, kPi), kPi);
    REQUIRE_FALSE(c2);
    REQUIRE(r.x == 1.6);
    REQUIRE(r.y == 1.6);
    REQUIRE_THAT(r.theta, Catch::Matchers::WithinAbs(kPi / 2.0, 1e-12));
}

TEST_CASE("step: driving into a wall stops at the disc contact point") {
    const Scene s = one_room(32, 32);
    // wall cells start at x = 3.1 m; agent 0.3 m short of it
    const double wall_x = (s.width - 1) * s.resolution;
    const Pose p(wall_x - 0.3, 1.6, 0.0);
    auto [q, contact] = step(s, p, VelocityCommand(0.5, 0.0), 1.0);
    REQUIRE(contact);
    const double gap = wall_x - q.x;
    // stops within one collision substep of the exact touching distance
    REQUIRE(gap >= kAgentRadius - 1e-12);
    REQUIRE(gap <= kAgentRadius + kSubstep + 1e-12);
    REQUIRE(q.y == p.y);
}

TEST_CASE("step: cannot tunnel through a one-cell wall at high speed") {
    SceneSpec spec;
    spec.rooms = 2;
    spec.width = 32;
    spec.height = 32;
    const Scene s = generate_scene(spec, 11);
    // fire the agent across the scene many times; it must never end up inside
    // a wall or with negative clearance
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        Vec2 start = sample_free_position(s, rng, kAgentRadius + 0.02);
        Pose p(start.x, start.y, rng.uniform(-kPi, kPi));
        for (int k = 0; k < 40; ++k) {
            auto [q, contact] = step(s, p, VelocityCommand(0.5, 0.0), 0.1);
            REQUIRE(clearance(s, q.x, q.y) >= 0.0);
            REQUIRE_FALSE(s.occupied_at(q.x, q.y));
            p = q;
            if (contact) break;
        }
    }
}

TEST_CASE("theta stays normalized under long spins") {
    const Scene s = one_room();
    Pose p(0.8, 0.8, 0.0);
    for (int i = 0; i < 1000; ++i) {
        p = step(s, p, VelocityCommand(0.0, 0.5), 0.1).first;
        REQUIRE(p.theta >= -kPi);
        REQUIRE(p.theta < kPi);
    }
}

TEST_CASE("observe: SIM depths match analytic ray-box intersection") {
    const Scene s = one_room(102, 102);  // 10.2 m box, interior [0.1, 10.1]
    const Pose pose(5.1, 5.1, 0.37);
    SensorParams sensor;
    sensor.max_range = 20.0;  // wider than the room so every ray hits a wall
    Rng rng(0);
    const auto obs = observe(s, pose, sensor, DomainParams::sim(), rng);
    const double x0 = s.resolution, y0 = s.resolution;
    const double x1 = (s.width - 1) * s.resolution, y1 = (s.height - 1) * s.resolution;
    for (int i = 0; i < sensor.rays; ++i) {
        const double ang = pose.theta - sensor.fov / 2.0 + sensor.fov * i / (sensor.rays - 1);
        const double expected = ray_box_exit(pose.x, pose.y, ang, x0, y0, x1, y1);
        REQUIRE_THAT(obs.depths[i], Catch::Matchers::WithinAbs(expected, 1e-9));
        REQUIRE(obs.textures[i] > 0.0);  // walls are textured
    }
}

TEST_CASE("observe: SIM is pure; REAL noise has folded-normal magnitude") {
    // room small enough that every ray hits well inside max_range
    const Scene s = one_room(42, 42);
    const Pose pose(2.1, 2.1, -1.1);
    SensorParams sensor;
    Rng rng(1);
    const auto a = observe(s, pose, sensor, DomainParams::sim(), rng);
    const auto b = observe(s, pose, sensor, DomainParams::sim(), rng);
    REQUIRE(a.depths == b.depths);
    REQUIRE(a.textures == b.textures);

    // REAL with only depth noise: E|delta| = sigma * sqrt(2/pi)
    DomainParams noisy;
    noisy.domain = Domain::REAL;
    noisy.noise_sigma = 0.05;
    Rng rng2(2);
    double sum_abs = 0.0;
    long n = 0;
    while (n < 10000) {
        const auto r = observe(s, pose, sensor, noisy, rng2);
        for (int i = 0; i < sensor.rays; ++i, ++n) sum_abs += std::abs(r.depths[i] - a.depths[i]);
    }
    const double expected = 0.05 * std::sqrt(2.0 / kPi);
    REQUIRE_THAT(sum_abs / n, Catch::Matchers::WithinAbs(expected, 0.003));
}

TEST_CASE("observe: REAL dropout rate and conventions") {
    // every ray hits inside max_range, so (max_range, 0) only means dropout
    const Scene s = one_room(42, 42);
    const Pose pose(2.1, 2.1, 0.0);
    SensorParams sensor;
    DomainParams dom;
    dom.domain = Domain::REAL;
    dom.dropout_p = 0.02;
    Rng rng(7);
    long dropped = 0, n = 0;
    for (int rep = 0; rep < 400; ++rep) {
        const auto r = observe(s, pose, sensor, dom, rng);
        for (int i = 0; i < sensor.rays; ++i, ++n) {
            if (r.depths[i] == sensor.max_range && r.textures[i] == 0.0) ++dropped;
        }
    }
    const double rate = static_cast<double>(dropped) / n;
    REQUIRE_THAT(rate, Catch::Matchers::WithinAbs(0.02, 0.005));
}

TEST_CASE("observe: occupied pose throws") {
    const Scene s = one_room();
    Rng rng(0);
    SensorParams sensor;
    REQUIRE_THROWS_AS(observe(s, Pose(0.05, 0.05, 0.0), sensor, DomainParams::sim(), rng),
                      std::invalid_argument);
}

TEST_CASE("clearance: brute-force anchor points") {
    const Scene s = one_room(16, 16);
    const double half_diag = 0.5 * s.resolution * std::sqrt(2.0);
    // adjacent to the wall, level with a wall-cell center: nearest occupied
    // center is exactly one cell away
    const double near_wall = clearance(s, 0.15, 0.75);
    REQUIRE_THAT(near_wall, Catch::Matchers::WithinAbs(s.resolution - half_diag, 1e-12));
    // center of the scene: nearest wall-cell center is (0.05, 0.75)
    const double mid = clearance(s, 0.8, 0.8);
    REQUIRE_THAT(mid, Catch::Matchers::WithinAbs(std::hypot(0.75, 0.05) - half_diag, 1e-12));
    // a point inside a wall cell still measures to the nearest occupied center
    REQUIRE(clearance(s, 0.05, 0.05) == 0.0);
}

TEST_CASE("clearance_field matches pointwise clearance at cell centers") {
    SceneSpec spec;
    spec.rooms = 2;
    spec.width = 24;
    spec.height = 24;
    const Scene s = generate_scene(spec, 5);
    const auto field = clearance_field(s);
    for (int cy = 0; cy < s.height; cy += 3) {
        for (int cx = 0; cx < s.width; cx += 3) {
            const Vec2 c = s.cell_center(cx, cy);
            REQUIRE_THAT(field[s.idx(cx, cy)], Catch::Matchers::WithinAbs(clearance(s, c.x, c.y), 1e-12));
        }
    }
}

TEST_CASE("segment_clear: basic truths and supercover agreement") {
    const Scene s = one_room(32, 32);
    REQUIRE(segment_clear(s, {0.5, 0.5}, {2.5, 2.5}));
    REQUIRE_FALSE(segment_clear(s, {0.5, 0.5}, {3.15, 0.5}));  // endpoint inside wall
    REQUIRE_THROWS_AS(segment_clear(s, {0.5, 0.5}, {1.0, 1.0}, 1), std::invalid_argument);

    // randomized agreement with the exhaustive oracle
    Rng rng(123);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        SceneSpec spec;
        spec.rooms = 1 + static_cast<int>(rng.uniform_int(0, 2));
        spec.width = 32;
        spec.height = 32;
        spec.clutter = 0.03;
        const Scene sc = generate_scene(spec, 1000 + trial);
        const Vec2 a{rng.uniform(0.2, 3.0), rng.uniform(0.2, 3.0)};
        const Vec2 b{rng.uniform(0.2, 3.0), rng.uniform(0.2, 3.0)};
        const double len = distance(a, b);
        const int n = std::max(2, static_cast<int>(std::ceil(10.0 * len / sc.resolution)));
        if (segment_clear(sc, a, b, n) == segment_clear_oracle(sc, a, b)) ++checked;
    }
    REQUIRE(checked == 100);
}

TEST_CASE("scene JSON round-trip is exact") {
    SceneSpec spec;
    spec.rooms = 3;
    spec.width = 48;
    spec.height = 40;
    spec.clutter = 0.04;
    spec.name = "roundtrip";
    const Scene a = generate_scene(spec, 21);
    const Scene b = scene_from_json(scene_to_json(a));
    REQUIRE(a.name == b.name);
    REQUIRE(a.width == b.width);
    REQUIRE(a.height == b.height);
    REQUIRE(a.resolution == b.resolution);
    REQUIRE(a.occ == b.occ);
    REQUIRE(a.tex == b.tex);
    REQUIRE(a.room == b.room);
}

TEST_CASE("rng: determinism, forks, and bounds") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng c(42);
    Rng f1 = c.fork("alpha"), f2 = c.fork("beta");
    REQUIRE(f1.next_u64() != f2.next_u64());  // distinct labeled streams

    Rng d(7);
    for (int i = 0; i < 1000; ++i) {
        const auto v = d.uniform_int(-3, 5);
        REQUIRE(v >= -3);
        REQUIRE(v <= 5);
        const double u = d.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }

    std::vector<int> xs(20);
    std::iota(xs.begin(), xs.end(), 0);
    auto ys = xs;
    d.shuffle(ys);
    auto sorted = ys;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(sorted == xs);  // a permutation
}
