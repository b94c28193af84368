#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "topnav/geometry.hpp"
#include "topnav/rng.hpp"
#include "topnav/scene.hpp"

namespace topnav::sim {

struct Pose {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;  // radians in [-pi, pi)

    Pose() = default;
    Pose(double x_, double y_, double th) : x(x_), y(y_), theta(wrap_angle(th)) {}
    Vec2 position() const { return {x, y}; }
};

/// Differential-drive command; ranges enforced by clamping at construction.
struct VelocityCommand {
    double v = 0.0;  // m/s in [0, 0.5]
    double w = 0.0;  // rad/s in [-0.5, 0.5]

    VelocityCommand() = default;
    VelocityCommand(double v_, double w_)
        : v(std::clamp(v_, 0.0, 0.5)), w(std::clamp(w_, -0.5, 0.5)) {}
};

enum class Domain { SIM, REAL };

inline const char* domain_name(Domain d) { return d == Domain::SIM ? "sim" : "real"; }
inline Domain domain_from_name(const std::string& s) {
    if (s == "sim") return Domain::SIM;
    if (s == "real") return Domain::REAL;
    throw std::invalid_argument("unknown domain: " + s);
}

/// Rendering-domain distortions. SIM is the identity; REAL layers additive
/// depth noise, a low-spatial-frequency multiplicative gain over texture,
/// a gamma warp, and per-ray dropout (dropped ray reads max_range / 0).
struct DomainParams {
    Domain domain = Domain::SIM;
    double noise_sigma = 0.0;   // stddev of additive depth noise, meters
    double gain_amp = 0.0;      // amplitude of the sinusoidal gain field
    double gain_kx = 0.0;       // spatial angular frequencies, rad/m
    double gain_ky = 0.0;
    double gain_phase_x = 0.0;
    double gain_phase_y = 0.0;
    double texture_gamma = 1.0;  // monotone warp t -> t^gamma
    double dropout_p = 0.0;

    static DomainParams sim() { return {}; }

    static DomainParams real() {
        DomainParams p;
        p.domain = Domain::REAL;
        p.noise_sigma = 0.05;
        p.gain_amp = 0.3;
        p.gain_kx = 2.0 * kPi / 7.3;  // wavelengths of a few meters: low frequency
        p.gain_ky = 2.0 * kPi / 5.1;
        p.gain_phase_x = 0.7;
        p.gain_phase_y = 2.1;
        p.texture_gamma = 1.5;
        p.dropout_p = 0.02;
        return p;
    }

    double gain_at(double x, double y) const {
        if (gain_amp == 0.0) return 1.0;
        const double g = 1.0 + gain_amp * std::sin(gain_kx * x + gain_phase_x) *
                                   std::sin(gain_ky * y + gain_phase_y);
        return std::max(0.0, g);
    }

    double warp(double t) const { return std::pow(std::clamp(t, 0.0, 1.0), texture_gamma); }
};

struct SensorParams {
    int rays = 64;
    double fov = kPi / 2.0;  // field of view, centered on heading
    double max_range = 5.0;  // meters
};

struct RayObservation {
    std::vector<double> depths;    // meters, in [0, max_range]
    std::vector<double> textures;  // in [0, 1]
    Domain domain = Domain::SIM;
};

inline constexpr double kAgentRadius = 0.18;  // meters
inline constexpr double kSubstep = 0.02;      // collision sweep increment, meters

/// True iff the agent disc of radius r at p overlaps an occupied cell
/// (out-of-bounds space counts as occupied).
inline bool disc_hits(const Scene& s, const Vec2& p, double r = kAgentRadius) {
    const int c_lo_x = s.cell_of(p.x - r), c_hi_x = s.cell_of(p.x + r);
    const int c_lo_y = s.cell_of(p.y - r), c_hi_y = s.cell_of(p.y + r);
    for (int cy = c_lo_y; cy <= c_hi_y; ++cy) {
        for (int cx = c_lo_x; cx <= c_hi_x; ++cx) {
            const bool occ = !s.in_bounds_cell(cx, cy) || s.occ[s.idx(cx, cy)] != 0;
            if (!occ) continue;
            // closest point on the cell rectangle to p
            const double x0 = cx * s.resolution, x1 = (cx + 1) * s.resolution;
            const double y0 = cy * s.resolution, y1 = (cy + 1) * s.resolution;
            const double qx = std::clamp(p.x, x0, x1), qy = std::clamp(p.y, y0, y1);
            const double dx = p.x - qx, dy = p.y - qy;
            if (dx * dx + dy * dy < r * r) return true;
        }
    }
    return false;
}

/// Unicycle step with swept-disc collision. Translation is checked in
/// increments of at most kSubstep so fast commands cannot tunnel through
/// one-cell walls; on contact the position freezes at the last free sample.
inline std::pair<Pose, bool> step(const Scene& s, const Pose& pose, const VelocityCommand& cmd,
                                  double dt = 0.1) {
    if (dt <= 0.0) throw std::invalid_argument("step: dt must be positive");
    const double theta_next = wrap_angle(pose.theta + cmd.w * dt);
    const double dist = cmd.v * dt;
    const Vec2 dir{std::cos(pose.theta), std::sin(pose.theta)};
    const Vec2 start = pose.position();
    if (dist <= 0.0) return {{start.x, start.y, theta_next}, false};

    const int n_sub = std::max(1, static_cast<int>(std::ceil(dist / kSubstep)));
    Vec2 ok = start;
    for (int k = 1; k <= n_sub; ++k) {
        const Vec2 p = start + dir * (dist * k / n_sub);
        if (disc_hits(s, p)) return {{ok.x, ok.y, theta_next}, true};
        ok = p;
    }
    return {{ok.x, ok.y, theta_next}, false};
}

/// First-hit distance of a ray against occupied cells via grid traversal
/// (Amanatides–Woo). Returns max_range when nothing is hit; hit_cell is the
/// index of the struck cell or -1.
inline double raycast(const Scene& s, double x, double y, double angle, double max_range,
                      int* hit_cell = nullptr) {
    const double dx = std::cos(angle), dy = std::sin(angle);
    int cx = s.cell_of(x), cy = s.cell_of(y);
    if (hit_cell) *hit_cell = -1;
    if (!s.in_bounds_cell(cx, cy)) return 0.0;

    const int step_x = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
    const int step_y = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
    const double inf = std::numeric_limits<double>::infinity();
    // distance along the ray to the first vertical / horizontal cell boundary
    double t_max_x = inf, t_max_y = inf, t_dx = inf, t_dy = inf;
    if (step_x != 0) {
        const double edge = (step_x > 0 ? (cx + 1) : cx) * s.resolution;
        t_max_x = (edge - x) / dx;
        t_dx = s.resolution / std::abs(dx);
    }
    if (step_y != 0) {
        const double edge = (step_y > 0 ? (cy + 1) : cy) * s.resolution;
        t_max_y = (edge - y) / dy;
        t_dy = s.resolution / std::abs(dy);
    }
    double t = 0.0;
    while (t <= max_range) {
        if (t_max_x <= t_max_y) {
            t = t_max_x;
            t_max_x += t_dx;
            cx += step_x;
        } else {
            t = t_max_y;
            t_max_y += t_dy;
            cy += step_y;
        }
        if (t > max_range) break;
        if (!s.in_bounds_cell(cx, cy)) return std::min(t, max_range);
        if (s.occ[s.idx(cx, cy)]) {
            if (hit_cell) *hit_cell = s.idx(cx, cy);
            return t;
        }
    }
    return max_range;
}

/// Cast the sensor fan and apply domain distortions. SIM consumes no
/// randomness and is a pure function of (scene, pose).
inline RayObservation observe(const Scene& s, const Pose& pose, const SensorParams& sensor,
                              const DomainParams& dom, Rng& rng) {
    if (s.occupied_at(pose.x, pose.y))
        throw std::invalid_argument("observe: pose is inside an occupied cell");
    RayObservation obs;
    obs.domain = dom.domain;
    obs.depths.resize(sensor.rays);
    obs.textures.resize(sensor.rays);
    for (int i = 0; i < sensor.rays; ++i) {
        const double frac = sensor.rays > 1 ? static_cast<double>(i) / (sensor.rays - 1) : 0.5;
        const double ang = pose.theta - sensor.fov / 2.0 + sensor.fov * frac;
        int hit = -1;
        double depth = raycast(s, pose.x, pose.y, ang, sensor.max_range, &hit);
        double tex = 0.0;
        if (hit >= 0) {
            tex = s.tex[hit];
            const double hx = pose.x + std::cos(ang) * depth;
            const double hy = pose.y + std::sin(ang) * depth;
            tex = dom.warp(std::clamp(tex * dom.gain_at(hx, hy), 0.0, 1.0));
        }
        if (dom.domain == Domain::REAL) {
            // noise perturbs actual returns; a no-return stays pinned at max_range
            if (dom.noise_sigma > 0.0 && hit >= 0) depth += rng.normal(0.0, dom.noise_sigma);
            if (dom.dropout_p > 0.0 && rng.bernoulli(dom.dropout_p)) {
                depth = sensor.max_range;
                tex = 0.0;
            }
        }
        obs.depths[i] = std::clamp(depth, 0.0, sensor.max_range);
        obs.textures[i] = std::clamp(tex, 0.0, 1.0);
    }
    return obs;
}

}  // namespace topnav::sim
