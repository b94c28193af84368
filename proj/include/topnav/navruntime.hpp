#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "topnav/geometry.hpp"
#include "topnav/localization.hpp"
#include "topnav/perception.hpp"
#include "topnav/planning.hpp"
#include "topnav/policy.hpp"
#include "topnav/rng.hpp"
#include "topnav/scene.hpp"
#include "topnav/sim.hpp"
#include "topnav/topomap.hpp"

namespace topnav::nav {

// --- PID heading controller ---------------------------------------------------

struct PidController {
    double kp = 1.2, ki = 0.0, kd = 0.1;
    double integral_clamp = 1.0;  // anti-windup bound on the accumulated error
    double output_clamp = 0.5;    // command range of w

    double integral = 0.0;
    double prev_error = 0.0;
    bool has_prev = false;

    void reset() {
        integral = 0.0;
        prev_error = 0.0;
        has_prev = false;
    }

    double step(double error, double dt) {
        integral = std::clamp(integral + error * dt, -integral_clamp, integral_clamp);
        const double deriv = has_prev ? (error - prev_error) / dt : 0.0;
        prev_error = error;
        has_prev = true;
        return std::clamp(kp * error + ki * integral + kd * deriv, -output_clamp, output_clamp);
    }
};

struct NavConfig {
    double segment_seconds = 5.0;
    int segments_per_waypoint = 12;
    double control_rate_hz = 10.0;
    double sweep_increment = deg2rad(20.0);
    double max_episode_seconds = 300.0;
    double goal_similarity = 0.95;
    double success_radius = 1.5;  // evaluation-only ground-truth check
    double orient_tolerance = deg2rad(2.0);
    int orient_max_steps = 100;

    int segment_steps() const {
        return static_cast<int>(std::lround(segment_seconds * control_rate_hz));
    }
    double dt() const { return 1.0 / control_rate_hz; }
    void validate() const {
        if (segment_seconds <= 0 || segments_per_waypoint < 1 || control_rate_hz <= 0 ||
            sweep_increment <= 0 || max_episode_seconds <= 0 || goal_similarity <= 0 ||
            success_radius <= 0 || orient_tolerance <= 0 || orient_max_steps < 1)
            throw std::invalid_argument("NavConfig: all fields must be positive");
    }
};

// --- orientation and passage sweep ---------------------------------------------

/// Closed-loop in-place rotation toward target_angle at 10 Hz until the
/// wrapped error is below tol. Budget exhaustion returns the best-effort pose.
inline sim::Pose pid_orient(const sim::Scene& scene, sim::Pose pose, double target_angle,
                            PidController& pid, int max_steps = 100,
                            double tol = deg2rad(2.0), double dt = 0.1, int* steps_taken = nullptr) {
    pid.reset();
    int taken = 0;
    for (int i = 0; i < max_steps; ++i) {
        const double err = angle_diff(target_angle, pose.theta);  // short way around
        if (std::abs(err) < tol) break;
        const double w = pid.step(err, dt);
        pose = sim::step(scene, pose, sim::VelocityCommand(0.0, w), dt).first;
        ++taken;
    }
    if (steps_taken) *steps_taken = taken;
    return pose;
}

struct SweepResult {
    sim::Pose pose;      // input pose rotated to the first passing heading
    bool found = false;  // false -> original pose returned, warning condition
    int tested = 0;      // headings probed including the original
};

/// Probe order for the passage sweep: 0, +d, -d, +2d, -2d, ... out to a half
/// turn on each side (the union covers the full circle).
inline std::vector<double> sweep_offsets(double increment) {
    if (increment <= 0) throw std::invalid_argument("sweep_offsets: increment must be positive");
    const int half = std::max(1, static_cast<int>(std::ceil(kPi / increment)));
    std::vector<double> offsets{0.0};
    for (int k = 1; k <= half; ++k) {
        offsets.push_back(k * increment);  // +d before -d
        offsets.push_back(-k * increment);
    }
    return offsets;
}

/// Probes headings theta, theta+d, theta-d, theta+2d, ... until the passage
/// probability reaches 0.5 or the full circle is exhausted. The rotation is a
/// sensor pan: the returned pose differs only in heading.
inline SweepResult sweep_for_passage(const sim::Scene& scene, const sim::Pose& pose,
                                     const percep::PassageDetector& pd, double increment,
                                     const sim::DomainParams& dom, Rng& rng,
                                     const sim::SensorParams& sensor = {}) {
    SweepResult res;
    res.pose = pose;
    for (const double off : sweep_offsets(increment)) {
        const sim::Pose candidate(pose.x, pose.y, wrap_angle(pose.theta + off));
        const sim::RayObservation obs = sim::observe(scene, candidate, sensor, dom, rng);
        ++res.tested;
        if (percep::passage_probability(pd, obs) >= 0.5) {
            res.pose = candidate;
            res.found = true;
            return res;
        }
    }
    return res;  // nothing passed; original pose, found == false
}

// --- full episode ---------------------------------------------------------------

struct NavModels {
    const percep::FeatureExtractor* fx_loc = nullptr;  // localization descriptors
    const percep::PassageDetector* pd = nullptr;       // passage probability + trunk
    const pol::LocalPolicy* policy = nullptr;

    void validate() const {
        if (!fx_loc || !pd || !policy) throw std::invalid_argument("NavModels: missing model");
    }
};

struct StepLog {
    double t = 0.0;
    sim::Pose pose;
    int node = -1;       // last localized node
    int plan_next = -1;  // current waypoint node
    double v = 0.0, w = 0.0;
    bool contact = false;
    double similarity = 0.0;  // last localization score
    std::string phase;        // "orient", "segment"
};

struct EpisodeOutcome {
    bool success = false;
    std::string failure;  // "", "timeout", "no_path"
    double navigated = 0.0;        // integrated ground-truth displacement, meters
    double contact_seconds = 0.0;  // 5 s per contacted segment
    double duration = 0.0;         // steps * dt exactly
    int steps = 0;
    int goal_node = -1;
    int replans = 0;
    sim::Pose final_pose;
    std::vector<StepLog> log;
};

/// The navigation loop: localize the goal once, then
/// observe -> localize -> plan -> orient -> sweep -> up to twelve 5 s local
/// segments with re-localization (and replanning on node change) after each.
/// Success: localized in the goal node, or (evaluation-only) ground truth
/// within success_radius at a segment boundary. All failures are recorded
/// outcomes, never exceptions.
inline EpisodeOutcome run_episode(const sim::Scene& scene, const tmap::MapView& view,
                                  const NavModels& models, const sim::Pose& start,
                                  const sim::RayObservation& goal_obs, Vec2 goal_pos_eval,
                                  const NavConfig& cfg, const sim::DomainParams& dom,
                                  std::uint64_t seed) {
    cfg.validate();
    models.validate();
    Rng rng(seed);
    EpisodeOutcome out;
    sim::Pose pose = start;
    out.final_pose = pose;

    const percep::Descriptor goal_desc = percep::extract_descriptor(*models.fx_loc, goal_obs);
    out.goal_node = loc::localize(view, goal_desc).node;

    const double dt = cfg.dt();
    const int seg_steps = cfg.segment_steps();
    const auto timed_out = [&] { return out.duration >= cfg.max_episode_seconds; };
    const auto log_step = [&](const char* phase, int node, int plan_next, double v, double w,
                              bool contact, double similarity) {
        StepLog s;
        s.t = out.duration;
        s.pose = pose;
        s.node = node;
        s.plan_next = plan_next;
        s.v = v;
        s.w = w;
        s.contact = contact;
        s.similarity = similarity;
        s.phase = phase;
        out.log.push_back(std::move(s));
    };

    PidController pid;
    int current_node = -1;
    double current_score = 0.0;
    while (!timed_out()) {
        // localize from the current observation
        const sim::RayObservation obs = sim::observe(scene, pose, {}, dom, rng);
        const loc::LocalizationResult lr = loc::localize_observation(view, *models.fx_loc, obs);
        current_node = lr.node;
        current_score = lr.score;
        if (current_node == out.goal_node) {
            out.success = true;
            break;
        }

        // plan
        const auto wp = plan::next_waypoint(view, current_node, out.goal_node);
        if (!wp) {
            out.failure = "no_path";
            break;
        }
        ++out.replans;

        // orient toward the edge angle, then sweep for a navigable heading
        {
            const sim::Pose before = pose;
            int taken = 0;
            pose = pid_orient(scene, pose, wp->abs_angle, pid, cfg.orient_max_steps,
                              cfg.orient_tolerance, dt, &taken);
            out.steps += taken;
            out.duration = out.steps * dt;
            out.navigated += distance({before.x, before.y}, {pose.x, pose.y});
            log_step("orient", current_node, wp->node, 0.0, 0.0, false, current_score);
        }
        const SweepResult sweep =
            sweep_for_passage(scene, pose, *models.pd, cfg.sweep_increment, dom, rng);
        pose = sweep.pose;  // sensor pan; no simulated time consumed

        // local policy segments with re-localization between them
        for (int seg = 0; seg < cfg.segments_per_waypoint && !timed_out(); ++seg) {
            const pol::SegmentResult sr = pol::run_local_segment(
                scene, pose, *models.policy, *models.fx_loc, models.pd->fx, dom, rng, seg_steps);
            sim::Pose prev = pose;
            for (int k = 0; k < sr.steps; ++k) {
                out.navigated += distance({prev.x, prev.y}, {sr.poses[k].x, sr.poses[k].y});
                prev = sr.poses[k];
                ++out.steps;
                out.duration = out.steps * dt;
                pose = sr.poses[k];
                log_step("segment", current_node, wp->node, sr.commands[k].v, sr.commands[k].w,
                         sr.contacts[k], current_score);
            }
            if (sr.contact) out.contact_seconds += cfg.segment_seconds;

            // segment boundary: evaluation-only ground-truth success check
            if (distance({pose.x, pose.y}, goal_pos_eval) <= cfg.success_radius) {
                out.success = true;
                break;
            }
            // re-localize; replan as soon as the node changes
            const sim::RayObservation re_obs = sim::observe(scene, pose, {}, dom, rng);
            const loc::LocalizationResult re = loc::localize_observation(view, *models.fx_loc, re_obs);
            current_score = re.score;
            if (re.node != current_node) {
                current_node = re.node;
                break;  // replan from the new node
            }
        }
        if (out.success) break;
        // loop continues: either the node changed (replan) or all segments ran
    }
    if (!out.success && out.failure.empty()) out.failure = "timeout";
    out.final_pose = pose;
    return out;
}

inline void save_episode_log(const EpisodeOutcome& out, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    for (const StepLog& s : out.log) {
        nlohmann::json j;
        j["t"] = s.t;
        j["pose"] = {s.pose.x, s.pose.y, s.pose.theta};
        j["node"] = s.node;
        j["plan_next"] = s.plan_next;
        j["cmd"] = {s.v, s.w};
        j["contact"] = s.contact;
        j["similarity"] = s.similarity;
        j["phase"] = s.phase;
        f << j.dump() << "\n";
    }
}

}  // namespace topnav::nav
