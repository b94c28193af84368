#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "topnav/geometry.hpp"
#include "topnav/nn.hpp"
#include "topnav/perception.hpp"
#include "topnav/rng.hpp"
#include "topnav/scene.hpp"
#include "topnav/sim.hpp"

namespace topnav::pol {

// --- action discretization ------------------------------------------------
// Linear velocity [0, 0.5] m/s in 3 uniform bins, angular [-0.5, 0.5] rad/s
// in 5; commands decode to bin centers.

inline constexpr int kLinClasses = 3;
inline constexpr int kAngClasses = 5;
inline constexpr double kLinCenters[kLinClasses] = {1.0 / 12.0, 0.25, 5.0 / 12.0};
inline constexpr double kAngCenters[kAngClasses] = {-0.4, -0.2, 0.0, 0.2, 0.4};

inline int encode_linear(double v) {
    int best = 0;
    for (int i = 1; i < kLinClasses; ++i)
        if (std::abs(v - kLinCenters[i]) < std::abs(v - kLinCenters[best])) best = i;
    return best;
}

inline int encode_angular(double w) {
    int best = 0;
    for (int i = 1; i < kAngClasses; ++i)
        if (std::abs(w - kAngCenters[i]) < std::abs(w - kAngCenters[best])) best = i;
    return best;
}

inline double decode_linear(int c) {
    if (c < 0 || c >= kLinClasses) throw std::invalid_argument("decode_linear: bad class");
    return kLinCenters[c];
}

inline double decode_angular(int c) {
    if (c < 0 || c >= kAngClasses) throw std::invalid_argument("decode_angular: bad class");
    return kAngCenters[c];
}

// --- expert oracle ----------------------------------------------------------
// A* over the clearance-inflated grid plus a pure-pursuit tracker. Replaces a
// full navigation stack with a reproducible, dependency-free path follower.

inline constexpr double kInflationMargin = 0.25;  // meters, grid cells below this are blocked
inline constexpr double kLookahead = 0.5;         // meters
inline constexpr double kArrivalRadius = 0.3;     // meters
inline constexpr int kExpertTimeoutSteps = 600;   // 60 s at 10 Hz

struct ExpertStep {
    sim::RayObservation obs;  // taken at the pose before acting
    double v = 0.0, w = 0.0;  // executed command (bin centers)
    bool contact = false;
};

struct ExpertTrajectory {
    std::vector<ExpertStep> steps;
    sim::RayObservation terminal_obs;
    std::string scene_name;
    bool reached = false;
    std::string note;  // non-empty when the trajectory should be discarded
};

namespace detail {

/// A* over free cells; edge cost = euclidean step scaled up where clearance is
/// low, so paths prefer the middle of rooms and doors. Returns cell-center
/// waypoints start..goal, or empty when no path exists.
inline std::vector<Vec2> astar_path(const sim::Scene& scene, const std::vector<double>& clear,
                                    Vec2 start, Vec2 goal, double margin) {
    const int W = scene.width, H = scene.height;
    const auto blocked = [&](int cx, int cy) {
        return !scene.in_bounds_cell(cx, cy) || scene.occ[scene.idx(cx, cy)] != 0 ||
               clear[scene.idx(cx, cy)] < margin;
    };
    const int sx = scene.cell_of(start.x), sy = scene.cell_of(start.y);
    const int gx = scene.cell_of(goal.x), gy = scene.cell_of(goal.y);
    if (blocked(sx, sy) || blocked(gx, gy)) return {};

    const double res = scene.resolution;
    const double kSafe = 0.7, kPenalty = 4.0;
    std::vector<double> dist(static_cast<std::size_t>(W) * H, 1e300);
    std::vector<int> prev(static_cast<std::size_t>(W) * H, -1);
    using QE = std::pair<double, int>;  // (f = g + heuristic, cell index)
    std::priority_queue<QE, std::vector<QE>, std::greater<QE>> pq;
    const auto heur = [&](int cx, int cy) {
        const double dx = (cx - gx) * res, dy = (cy - gy) * res;
        return std::sqrt(dx * dx + dy * dy);
    };
    dist[scene.idx(sx, sy)] = 0.0;
    pq.push({heur(sx, sy), scene.idx(sx, sy)});
    const int goal_idx = scene.idx(gx, gy);
    while (!pq.empty()) {
        const auto [f, u] = pq.top();
        pq.pop();
        const int ux = u % W, uy = u / W;
        if (f > dist[u] + heur(ux, uy) + 1e-12) continue;
        if (u == goal_idx) break;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dx == 0 && dy == 0) continue;
                const int vx = ux + dx, vy = uy + dy;
                if (blocked(vx, vy)) continue;
                // no corner cutting through diagonals
                if (dx != 0 && dy != 0 && (blocked(ux + dx, uy) || blocked(ux, uy + dy))) continue;
                const double step_len = res * std::sqrt(double(dx * dx + dy * dy));
                const double c = clear[scene.idx(vx, vy)];
                const double cost =
                    step_len * (1.0 + kPenalty * std::max(0.0, kSafe - c) / kSafe);
                const int v = scene.idx(vx, vy);
                if (dist[u] + cost < dist[v] - 1e-15) {
                    dist[v] = dist[u] + cost;
                    prev[v] = u;
                    pq.push({dist[v] + heur(vx, vy), v});
                }
            }
    }
    if (dist[goal_idx] >= 1e300) return {};
    std::vector<Vec2> path;
    for (int c = goal_idx; c != -1; c = prev[c]) path.push_back(scene.cell_center(c % W, c / W));
    std::reverse(path.begin(), path.end());
    path.front() = start;  // track from the true start, end at the true goal
    path.back() = goal;
    return path;
}

}  // namespace detail

/// Drive from start to goal with A* + pure pursuit at 10 Hz, logging the
/// observation before each executed (quantized) command.
inline ExpertTrajectory expert_drive(const sim::Scene& scene, const sim::Pose& start, Vec2 goal,
                                     std::uint64_t seed,
                                     const sim::SensorParams& sensor = {},
                                     const sim::DomainParams& dom = sim::DomainParams::sim(),
                                     int timeout_steps = kExpertTimeoutSteps) {
    if (scene.occupied_at(start.x, start.y)) throw std::invalid_argument("expert_drive: bad start");
    if (scene.occupied_at(goal.x, goal.y)) throw std::invalid_argument("expert_drive: bad goal");
    Rng rng(seed);
    ExpertTrajectory traj;
    traj.scene_name = scene.name;

    if (distance({start.x, start.y}, goal) <= kArrivalRadius) {
        traj.terminal_obs = sim::observe(scene, start, sensor, dom, rng);
        traj.reached = true;
        return traj;
    }
    const std::vector<double> clear = sim::clearance_field(scene);
    const std::vector<Vec2> path =
        detail::astar_path(scene, clear, {start.x, start.y}, goal, kInflationMargin);
    if (path.empty()) throw std::runtime_error("expert_drive: no grid path to goal");

    sim::Pose pose = start;
    std::size_t progress = 0;  // monotone index of the nearest path point
    for (int step = 0; step < timeout_steps; ++step) {
        const Vec2 pos{pose.x, pose.y};
        if (distance(pos, goal) <= kArrivalRadius) {
            traj.terminal_obs = sim::observe(scene, pose, sensor, dom, rng);
            traj.reached = true;
            return traj;
        }
        // advance the progress marker, then look ahead along the path
        while (progress + 1 < path.size() &&
               distance(pos, path[progress + 1]) <= distance(pos, path[progress]))
            ++progress;
        std::size_t target_i = progress;
        while (target_i + 1 < path.size() && distance(pos, path[target_i]) < kLookahead)
            ++target_i;
        const Vec2 target = path[target_i];

        const double alpha = angle_diff(std::atan2(target.y - pos.y, target.x - pos.x), pose.theta);
        double v_des;
        if (std::abs(alpha) > 1.1)
            v_des = kLinCenters[0];
        else if (std::abs(alpha) > 0.4)
            v_des = kLinCenters[1];
        else
            v_des = kLinCenters[2];
        const double w_des = std::clamp(2.0 * v_des * std::sin(alpha) / kLookahead, -0.5, 0.5);

        ExpertStep es;
        es.obs = sim::observe(scene, pose, sensor, dom, rng);
        es.v = decode_linear(encode_linear(v_des));
        es.w = decode_angular(encode_angular(w_des));
        const auto [next_pose, contact] = sim::step(scene, pose, sim::VelocityCommand(es.v, es.w));
        es.contact = contact;
        traj.steps.push_back(std::move(es));
        pose = next_pose;
    }
    traj.terminal_obs = sim::observe(scene, pose, sensor, dom, rng);
    traj.reached = false;
    traj.note = "timeout before reaching goal";
    return traj;
}

// --- behavioral-cloning dataset ---------------------------------------------

inline constexpr int kSeqLen = 50;      // transitions per sequence
inline constexpr int kSeqStride = 10;   // start-index stride => overlap <= 40 steps
inline constexpr double kNonZeroFrac = 0.2;

struct BcSequence {
    std::vector<nn::Vec> u;  // kSeqLen + 1 state descriptors
    std::vector<int> lin;    // kSeqLen linear classes
    std::vector<int> ang;    // kSeqLen angular classes
    int traj_id = -1;
};

struct BcDataset {
    std::vector<BcSequence> train, test;
    int du = 0;
};

/// Concatenated state descriptor: localization trunk then passage trunk.
inline nn::Vec embed_observation(const percep::FeatureExtractor& fx_loc,
                                 const percep::FeatureExtractor& fx_pass,
                                 const sim::RayObservation& obs) {
    const percep::Descriptor a = percep::extract_descriptor(fx_loc, obs);
    const percep::Descriptor b = percep::extract_descriptor(fx_pass, obs);
    nn::Vec u;
    u.reserve(a.values.size() + b.values.size());
    u.insert(u.end(), a.values.begin(), a.values.end());
    u.insert(u.end(), b.values.begin(), b.values.end());
    return u;
}

/// Cut trajectories into L=50 sequences at stride 10, drop sequences with
/// fewer than 20% non-zero commands, embed observations, split 80/20 by
/// source trajectory.
inline BcDataset build_bc_dataset(const std::vector<ExpertTrajectory>& trajs,
                                  const percep::FeatureExtractor& fx_loc,
                                  const percep::FeatureExtractor& fx_pass, std::uint64_t seed) {
    std::vector<std::vector<BcSequence>> per_traj;
    for (std::size_t ti = 0; ti < trajs.size(); ++ti) {
        const ExpertTrajectory& tr = trajs[ti];
        if (!tr.note.empty()) continue;  // discarded trajectories carry a reason
        const int T = static_cast<int>(tr.steps.size());
        std::vector<BcSequence> seqs;
        // embed each observation once; index t in [0, T] (T = terminal)
        std::vector<nn::Vec> u_all(T + 1);
        bool embedded = false;
        for (int s = 0; s + kSeqLen <= T; s += kSeqStride) {
            int nonzero = 0;
            for (int t = s; t < s + kSeqLen; ++t)
                if (tr.steps[t].v != 0.0 || tr.steps[t].w != 0.0) ++nonzero;
            if (nonzero < static_cast<int>(kNonZeroFrac * kSeqLen)) continue;
            if (!embedded) {
                for (int t = 0; t < T; ++t) u_all[t] = embed_observation(fx_loc, fx_pass, tr.steps[t].obs);
                u_all[T] = embed_observation(fx_loc, fx_pass, tr.terminal_obs);
                embedded = true;
            }
            BcSequence seq;
            seq.traj_id = static_cast<int>(ti);
            for (int t = s; t <= s + kSeqLen; ++t) seq.u.push_back(u_all[t]);
            for (int t = s; t < s + kSeqLen; ++t) {
                seq.lin.push_back(encode_linear(tr.steps[t].v));
                seq.ang.push_back(encode_angular(tr.steps[t].w));
            }
            seqs.push_back(std::move(seq));
        }
        if (!seqs.empty()) per_traj.push_back(std::move(seqs));
    }
    if (per_traj.empty()) throw std::runtime_error("build_bc_dataset: no sequences after filtering");

    Rng rng(seed);
    std::vector<int> order(per_traj.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    std::size_t n_train = std::max<std::size_t>(1, per_traj.size() * 8 / 10);
    if (n_train == per_traj.size() && per_traj.size() > 1) --n_train;

    BcDataset ds;
    ds.du = static_cast<int>(per_traj[0][0].u[0].size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto& dst = i < n_train ? ds.train : ds.test;
        for (BcSequence& s : per_traj[order[i]]) dst.push_back(std::move(s));
    }
    return ds;
}

// --- the recurrent two-headed policy and forward model ----------------------

struct PolicyConfig {
    int du = 320;   // state descriptor dim (two 160-dim trunks)
    int hidden = 64;
    std::vector<int> fm_hidden = {128};
    double alpha = 10.0;  // CE weight in Eq. (2)
    double lambda = 0.1;  // policy-action consistency weight

    int cell_input() const { return du + 2 * hidden; }
    int action_onehot() const { return kLinClasses + kAngClasses; }
    std::vector<int> fm_sizes() const {
        std::vector<int> s{du + action_onehot()};
        s.insert(s.end(), fm_hidden.begin(), fm_hidden.end());
        s.push_back(du);
        return s;
    }
};

struct LocalPolicy {
    PolicyConfig cfg;
    nn::GruCell gru_ang, gru_lin;
    nn::Mlp head_ang, head_lin;

    static LocalPolicy make(const PolicyConfig& cfg, Rng& rng) {
        LocalPolicy p;
        p.cfg = cfg;
        p.gru_ang = nn::GruCell::make(cfg.cell_input(), cfg.hidden, rng);
        p.gru_lin = nn::GruCell::make(cfg.cell_input(), cfg.hidden, rng);
        p.head_ang = nn::Mlp::make({cfg.hidden, kAngClasses}, rng);
        p.head_lin = nn::Mlp::make({cfg.hidden, kLinClasses}, rng);
        return p;
    }
};

struct ForwardModel {
    PolicyConfig cfg;
    nn::Mlp net;

    static ForwardModel make(const PolicyConfig& cfg, Rng& rng) {
        ForwardModel fm;
        fm.cfg = cfg;
        fm.net = nn::Mlp::make(cfg.fm_sizes(), rng);
        return fm;
    }
};

struct PolicyGrads {
    nn::GruCell::Grads gru_ang, gru_lin;
    nn::Mlp::Grads head_ang, head_lin;
};

inline PolicyGrads zero_policy_grads(const LocalPolicy& p) {
    return {p.gru_ang.zero_grads(), p.gru_lin.zero_grads(), p.head_ang.zero_grads(),
            p.head_lin.zero_grads()};
}

inline std::vector<std::pair<nn::Vec*, const nn::Vec*>> param_refs(LocalPolicy& p, PolicyGrads& g) {
    auto refs = nn::param_refs(p.gru_ang, g.gru_ang);
    for (auto& r : nn::param_refs(p.gru_lin, g.gru_lin)) refs.push_back(r);
    for (auto& r : nn::param_refs(p.head_ang, g.head_ang)) refs.push_back(r);
    for (auto& r : nn::param_refs(p.head_lin, g.head_lin)) refs.push_back(r);
    return refs;
}

struct PolicyStepOut {
    nn::Vec logits_ang, logits_lin;
    nn::Vec h_ang, h_lin;
    int cls_ang = 0, cls_lin = 0;
};

struct PolicyStepTrace {
    nn::GruCell::Trace gru_ang, gru_lin;
    nn::Mlp::Trace head_ang, head_lin;
};

/// One recurrent step. Both cells consume (u, previous hiddens of both cells).
inline PolicyStepOut policy_step(const LocalPolicy& p, const nn::Vec& u, const nn::Vec& h_ang,
                                 const nn::Vec& h_lin, PolicyStepTrace* trace = nullptr) {
    if (static_cast<int>(u.size()) != p.cfg.du) throw std::invalid_argument("policy_step: bad u dim");
    if (static_cast<int>(h_ang.size()) != p.cfg.hidden ||
        static_cast<int>(h_lin.size()) != p.cfg.hidden)
        throw std::invalid_argument("policy_step: bad hidden dim");
    nn::Vec x;
    x.reserve(p.cfg.cell_input());
    x.insert(x.end(), u.begin(), u.end());
    x.insert(x.end(), h_ang.begin(), h_ang.end());
    x.insert(x.end(), h_lin.begin(), h_lin.end());

    PolicyStepOut out;
    out.h_ang = p.gru_ang.step(x, h_ang, trace ? &trace->gru_ang : nullptr);
    out.h_lin = p.gru_lin.step(x, h_lin, trace ? &trace->gru_lin : nullptr);
    out.logits_ang = p.head_ang.forward(out.h_ang, trace ? &trace->head_ang : nullptr);
    out.logits_lin = p.head_lin.forward(out.h_lin, trace ? &trace->head_lin : nullptr);
    out.cls_ang = static_cast<int>(
        std::max_element(out.logits_ang.begin(), out.logits_ang.end()) - out.logits_ang.begin());
    out.cls_lin = static_cast<int>(
        std::max_element(out.logits_lin.begin(), out.logits_lin.end()) - out.logits_lin.begin());
    return out;
}

inline sim::VelocityCommand policy_command(const PolicyStepOut& out) {
    return sim::VelocityCommand(decode_linear(out.cls_lin), decode_angular(out.cls_ang));
}

namespace detail {

/// One-hot action encoding for the forward model: [linear(3) | angular(5)].
inline nn::Vec action_onehot(int lin, int ang) {
    nn::Vec a(kLinClasses + kAngClasses, 0.0);
    a.at(lin) = 1.0;
    a.at(kLinClasses + ang) = 1.0;
    return a;
}

/// d(loss)/d(logits) given d(loss)/d(softmax probs).
inline nn::Vec softmax_backward(const nn::Vec& probs, const nn::Vec& dprobs) {
    double dot = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * dprobs[i];
    nn::Vec dl(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) dl[i] = probs[i] * (dprobs[i] - dot);
    return dl;
}

inline nn::Vec fm_input(const nn::Vec& u, const nn::Vec& action) {
    nn::Vec x;
    x.reserve(u.size() + action.size());
    x.insert(x.end(), u.begin(), u.end());
    x.insert(x.end(), action.begin(), action.end());
    return x;
}

}  // namespace detail

struct JointLossParts {
    double total = 0.0;
    double ce = 0.0;         // alpha-weighted CE sum, both heads
    double fm_expert = 0.0;  // sum ||u_{t+1} - fm(u_t, a_t)||^2
    double fm_policy = 0.0;  // lambda-weighted sum with the policy's action mix
};

/// Full Eq. (2) loss and analytic gradients for one sequence, BPTT through
/// both GRU cells. With train_policy=false the CE terms are dropped and no
/// gradient reaches the policy (Eq. (1) pretraining of the forward model);
/// with train_fm=false the forward-model gradients are skipped.
inline JointLossParts sequence_loss(const LocalPolicy& p, const ForwardModel& fm,
                                    const BcSequence& seq, double alpha, double lambda,
                                    PolicyGrads* pg, nn::Mlp::Grads* fg, bool train_policy,
                                    bool train_fm) {
    const int L = static_cast<int>(seq.lin.size());
    if (static_cast<int>(seq.u.size()) != L + 1)
        throw std::invalid_argument("sequence_loss: states must be actions + 1");
    const int H = p.cfg.hidden;

    // forward pass
    std::vector<PolicyStepTrace> traces(L);
    std::vector<PolicyStepOut> outs(L);
    std::vector<nn::Mlp::Trace> fm_exp_tr(L), fm_mix_tr(L);
    std::vector<nn::Vec> fm_exp_out(L), fm_mix_out(L);
    std::vector<nn::Vec> probs_ang(L), probs_lin(L);
    std::vector<nn::Vec> ce_grad_ang(L), ce_grad_lin(L);

    JointLossParts parts;
    nn::Vec h_ang(H, 0.0), h_lin(H, 0.0);  // zeroed at sequence start
    for (int t = 0; t < L; ++t) {
        outs[t] = policy_step(p, seq.u[t], h_ang, h_lin, &traces[t]);
        h_ang = outs[t].h_ang;
        h_lin = outs[t].h_lin;
        probs_ang[t] = nn::softmax(outs[t].logits_ang);
        probs_lin[t] = nn::softmax(outs[t].logits_lin);

        if (train_policy) {
            parts.ce += alpha * nn::cross_entropy_smoothed(outs[t].logits_ang, seq.ang[t],
                                                           percep::kLabelSmoothing, ce_grad_ang[t]);
            parts.ce += alpha * nn::cross_entropy_smoothed(outs[t].logits_lin, seq.lin[t],
                                                           percep::kLabelSmoothing, ce_grad_lin[t]);
        }

        const nn::Vec a_exp = detail::action_onehot(seq.lin[t], seq.ang[t]);
        fm_exp_out[t] = fm.net.forward(detail::fm_input(seq.u[t], a_exp), &fm_exp_tr[t]);
        nn::Vec a_mix;
        a_mix.reserve(kLinClasses + kAngClasses);
        a_mix.insert(a_mix.end(), probs_lin[t].begin(), probs_lin[t].end());
        a_mix.insert(a_mix.end(), probs_ang[t].begin(), probs_ang[t].end());
        fm_mix_out[t] = fm.net.forward(detail::fm_input(seq.u[t], a_mix), &fm_mix_tr[t]);

        for (int i = 0; i < p.cfg.du; ++i) {
            const double de = seq.u[t + 1][i] - fm_exp_out[t][i];
            const double dm = seq.u[t + 1][i] - fm_mix_out[t][i];
            parts.fm_expert += de * de;
            parts.fm_policy += lambda * dm * dm;
        }
    }
    parts.total = parts.ce + parts.fm_expert + parts.fm_policy;
    if (!std::isfinite(parts.total)) throw std::runtime_error("sequence_loss: non-finite loss");
    if (!pg && !fg) return parts;

    // backward pass
    nn::Vec dh_ang(H, 0.0), dh_lin(H, 0.0);
    for (int t = L - 1; t >= 0; --t) {
        nn::Vec dlog_ang(kAngClasses, 0.0), dlog_lin(kLinClasses, 0.0);
        if (train_policy) {
            for (int i = 0; i < kAngClasses; ++i) dlog_ang[i] = alpha * ce_grad_ang[t][i];
            for (int i = 0; i < kLinClasses; ++i) dlog_lin[i] = alpha * ce_grad_lin[t][i];
        }

        // policy-action consistency path
        nn::Vec dmix_out(p.cfg.du);
        for (int i = 0; i < p.cfg.du; ++i)
            dmix_out[i] = 2.0 * lambda * (fm_mix_out[t][i] - seq.u[t + 1][i]);
        const bool fm_grads = train_fm && fg != nullptr;
        nn::Mlp::Grads scratch = fm_grads ? nn::Mlp::Grads{} : fm.net.zero_grads();
        const nn::Vec dmix_in = fm.net.backward(fm_mix_tr[t], dmix_out, fm_grads ? *fg : scratch);
        if (train_policy && pg) {
            nn::Vec dpl(kLinClasses), dpa(kAngClasses);
            for (int i = 0; i < kLinClasses; ++i) dpl[i] = dmix_in[p.cfg.du + i];
            for (int i = 0; i < kAngClasses; ++i) dpa[i] = dmix_in[p.cfg.du + kLinClasses + i];
            const nn::Vec dl = detail::softmax_backward(probs_lin[t], dpl);
            const nn::Vec da = detail::softmax_backward(probs_ang[t], dpa);
            for (int i = 0; i < kLinClasses; ++i) dlog_lin[i] += dl[i];
            for (int i = 0; i < kAngClasses; ++i) dlog_ang[i] += da[i];
        }

        // expert-action consistency path (forward-model parameters only)
        if (fm_grads) {
            nn::Vec dexp_out(p.cfg.du);
            for (int i = 0; i < p.cfg.du; ++i)
                dexp_out[i] = 2.0 * (fm_exp_out[t][i] - seq.u[t + 1][i]);
            fm.net.backward(fm_exp_tr[t], dexp_out, *fg);
        }

        if (!train_policy || !pg) continue;
        // heads then both cells; cell input x = [u | h_ang_prev | h_lin_prev]
        nn::Vec dh_ang_total = p.head_ang.backward(traces[t].head_ang, dlog_ang, pg->head_ang);
        nn::Vec dh_lin_total = p.head_lin.backward(traces[t].head_lin, dlog_lin, pg->head_lin);
        for (int i = 0; i < H; ++i) {
            dh_ang_total[i] += dh_ang[i];
            dh_lin_total[i] += dh_lin[i];
        }
        auto [dx_a, dhp_a] = p.gru_ang.backward(traces[t].gru_ang, dh_ang_total, pg->gru_ang);
        auto [dx_l, dhp_l] = p.gru_lin.backward(traces[t].gru_lin, dh_lin_total, pg->gru_lin);
        for (int i = 0; i < H; ++i) {
            dh_ang[i] = dhp_a[i] + dx_a[p.cfg.du + i] + dx_l[p.cfg.du + i];
            dh_lin[i] = dhp_l[i] + dx_a[p.cfg.du + H + i] + dx_l[p.cfg.du + H + i];
        }
    }
    return parts;
}

// --- training loops ---------------------------------------------------------

inline constexpr int kBcBatch = 50;

/// Eq. (1): train the forward model against expert and (frozen) policy
/// actions. Returns the per-epoch mean loss curve.
inline nn::TrainMeta fm_pretrain(ForwardModel& fm, const LocalPolicy& policy,
                                 const std::vector<BcSequence>& train, int epochs,
                                 std::uint64_t seed, double lambda = 0.1, int batch = kBcBatch,
                                 double lr = 1e-4) {
    if (train.empty()) throw std::invalid_argument("fm_pretrain: empty dataset");
    Rng rng(seed);
    nn::Adam opt(lr);
    nn::TrainMeta meta;
    meta.seed = seed;
    meta.epochs = epochs;
    std::vector<int> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < order.size(); b += batch) {
            const std::size_t n = std::min<std::size_t>(batch, order.size() - b);
            nn::Mlp::Grads fg = fm.net.zero_grads();
            double inv = 1.0 / static_cast<double>(n);
            for (std::size_t k = 0; k < n; ++k) {
                const JointLossParts parts = sequence_loss(policy, fm, train[order[b + k]], 0.0,
                                                           lambda, nullptr, &fg, false, true);
                epoch_loss += parts.total;
            }
            nn::scale_grads(fg, inv);
            opt.step(nn::param_refs(fm.net, fg));
        }
        meta.loss_curve.push_back(epoch_loss / static_cast<double>(train.size()));
    }
    return meta;
}

struct PolicyEval {
    double acc_ang = 0.0, acc_lin = 0.0;
    double f1_ang = 0.0, f1_lin = 0.0;
};

inline PolicyEval eval_policy(const LocalPolicy& p, const std::vector<BcSequence>& seqs) {
    std::vector<int> pred_a, true_a, pred_l, true_l;
    for (const BcSequence& seq : seqs) {
        nn::Vec h_ang(p.cfg.hidden, 0.0), h_lin(p.cfg.hidden, 0.0);
        for (std::size_t t = 0; t < seq.lin.size(); ++t) {
            const PolicyStepOut out = policy_step(p, seq.u[t], h_ang, h_lin);
            h_ang = out.h_ang;
            h_lin = out.h_lin;
            pred_a.push_back(out.cls_ang);
            true_a.push_back(seq.ang[t]);
            pred_l.push_back(out.cls_lin);
            true_l.push_back(seq.lin[t]);
        }
    }
    PolicyEval ev;
    const percep::EvalMetrics ma = percep::classification_metrics(pred_a, true_a);
    const percep::EvalMetrics ml = percep::classification_metrics(pred_l, true_l);
    ev.acc_ang = ma.accuracy;
    ev.f1_ang = ma.macro_f1;
    ev.acc_lin = ml.accuracy;
    ev.f1_lin = ml.macro_f1;
    return ev;
}

/// Eq. (2): joint policy + forward-model training with BPTT.
inline nn::TrainMeta joint_train(LocalPolicy& policy, ForwardModel& fm,
                                 const std::vector<BcSequence>& train, int epochs,
                                 std::uint64_t seed, double alpha = 10.0, double lambda = 0.1,
                                 int batch = kBcBatch, double lr = 1e-4) {
    if (train.empty()) throw std::invalid_argument("joint_train: empty dataset");
    Rng rng(seed);
    nn::Adam opt_p(lr), opt_f(lr);
    nn::TrainMeta meta;
    meta.seed = seed;
    meta.epochs = epochs;
    std::vector<int> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < order.size(); b += batch) {
            const std::size_t n = std::min<std::size_t>(batch, order.size() - b);
            PolicyGrads pg = zero_policy_grads(policy);
            nn::Mlp::Grads fg = fm.net.zero_grads();
            const double inv = 1.0 / static_cast<double>(n);
            for (std::size_t k = 0; k < n; ++k) {
                const JointLossParts parts = sequence_loss(policy, fm, train[order[b + k]], alpha,
                                                           lambda, &pg, &fg, true, true);
                epoch_loss += parts.total;
            }
            nn::scale_grads(pg.gru_ang, inv);
            nn::scale_grads(pg.gru_lin, inv);
            nn::scale_grads(pg.head_ang, inv);
            nn::scale_grads(pg.head_lin, inv);
            nn::scale_grads(fg, inv);
            opt_p.step(param_refs(policy, pg));
            opt_f.step(nn::param_refs(fm.net, fg));
        }
        meta.loss_curve.push_back(epoch_loss / static_cast<double>(train.size()));
    }
    return meta;
}

// --- rollout ------------------------------------------------------------------

struct SegmentResult {
    std::vector<sim::Pose> poses;                 // pose after each executed step
    std::vector<sim::VelocityCommand> commands;   // command executed at each step
    std::vector<bool> contacts;                   // per-step contact flag
    bool contact = false;
    int steps = 0;
};

/// One 5 s local-navigation unit: observe -> embed -> policy_step -> step at
/// 10 Hz, hidden states zeroed at segment start.
inline SegmentResult run_local_segment(const sim::Scene& scene, sim::Pose pose,
                                       const LocalPolicy& policy,
                                       const percep::FeatureExtractor& fx_loc,
                                       const percep::FeatureExtractor& fx_pass,
                                       const sim::DomainParams& dom, Rng& rng, int steps = 50,
                                       const sim::SensorParams& sensor = {}) {
    SegmentResult res;
    nn::Vec h_ang(policy.cfg.hidden, 0.0), h_lin(policy.cfg.hidden, 0.0);
    for (int t = 0; t < steps; ++t) {
        const sim::RayObservation obs = sim::observe(scene, pose, sensor, dom, rng);
        const nn::Vec u = embed_observation(fx_loc, fx_pass, obs);
        const PolicyStepOut out = policy_step(policy, u, h_ang, h_lin);
        h_ang = out.h_ang;
        h_lin = out.h_lin;
        const sim::VelocityCommand cmd = policy_command(out);
        const auto [next, contact] = sim::step(scene, pose, cmd);
        pose = next;
        res.poses.push_back(pose);
        res.commands.push_back(cmd);
        res.contacts.push_back(contact);
        res.contact = res.contact || contact;
        ++res.steps;
    }
    return res;
}

// --- serialization ------------------------------------------------------------

inline nlohmann::json policy_to_json(const LocalPolicy& p, const nn::TrainMeta& meta) {
    nlohmann::json j;
    j["version"] = 1;
    j["arch"] = "two_head_gru_policy";
    j["config"] = {{"du", p.cfg.du},
                   {"hidden", p.cfg.hidden},
                   {"fm_hidden", p.cfg.fm_hidden},
                   {"alpha", p.cfg.alpha},
                   {"lambda", p.cfg.lambda}};
    j["gru_ang"] = nn::gru_to_json(p.gru_ang);
    j["gru_lin"] = nn::gru_to_json(p.gru_lin);
    j["head_ang"] = nn::mlp_to_json(p.head_ang, {});
    j["head_lin"] = nn::mlp_to_json(p.head_lin, {});
    j["meta"] = nn::meta_to_json(meta);
    return j;
}

inline LocalPolicy policy_from_json(const nlohmann::json& j, nn::TrainMeta* meta = nullptr) {
    if (j.at("version").get<int>() != 1) throw std::runtime_error("policy file: unsupported version");
    LocalPolicy p;
    p.cfg.du = j.at("config").at("du").get<int>();
    p.cfg.hidden = j.at("config").at("hidden").get<int>();
    p.cfg.fm_hidden = j.at("config").at("fm_hidden").get<std::vector<int>>();
    p.cfg.alpha = j.at("config").at("alpha").get<double>();
    p.cfg.lambda = j.at("config").at("lambda").get<double>();
    p.gru_ang = nn::gru_from_json(j.at("gru_ang"));
    p.gru_lin = nn::gru_from_json(j.at("gru_lin"));
    p.head_ang = nn::mlp_from_json(j.at("head_ang"), nullptr);
    p.head_lin = nn::mlp_from_json(j.at("head_lin"), nullptr);
    if (meta) *meta = nn::meta_from_json(j.at("meta"));
    return p;
}

inline nlohmann::json fm_to_json(const ForwardModel& fm, const nn::TrainMeta& meta) {
    nlohmann::json j;
    j["version"] = 1;
    j["arch"] = "forward_model";
    j["config"] = {{"du", fm.cfg.du}, {"fm_hidden", fm.cfg.fm_hidden}};
    j["net"] = nn::mlp_to_json(fm.net, meta);
    return j;
}

inline ForwardModel fm_from_json(const nlohmann::json& j, nn::TrainMeta* meta = nullptr) {
    if (j.at("version").get<int>() != 1) throw std::runtime_error("fm file: unsupported version");
    ForwardModel fm;
    fm.cfg.du = j.at("config").at("du").get<int>();
    fm.cfg.fm_hidden = j.at("config").at("fm_hidden").get<std::vector<int>>();
    fm.net = nn::mlp_from_json(j.at("net"), meta);
    return fm;
}

inline void save_trajectories(const std::vector<ExpertTrajectory>& trajs, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    for (const ExpertTrajectory& tr : trajs) {
        nlohmann::json j;
        j["scene"] = tr.scene_name;
        j["reached"] = tr.reached;
        j["note"] = tr.note;
        j["terminal_obs"] = percep::obs_to_json(tr.terminal_obs);
        j["steps"] = nlohmann::json::array();
        for (const ExpertStep& s : tr.steps)
            j["steps"].push_back({{"obs", percep::obs_to_json(s.obs)},
                                  {"v", s.v},
                                  {"w", s.w},
                                  {"contact", s.contact}});
        f << j.dump() << "\n";
    }
}

inline std::vector<ExpertTrajectory> load_trajectories(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::vector<ExpertTrajectory> trajs;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const nlohmann::json j = nlohmann::json::parse(line);
        ExpertTrajectory tr;
        tr.scene_name = j.at("scene").get<std::string>();
        tr.reached = j.at("reached").get<bool>();
        tr.note = j.at("note").get<std::string>();
        tr.terminal_obs = percep::obs_from_json(j.at("terminal_obs"));
        for (const auto& js : j.at("steps")) {
            ExpertStep s;
            s.obs = percep::obs_from_json(js.at("obs"));
            s.v = js.at("v").get<double>();
            s.w = js.at("w").get<double>();
            s.contact = js.at("contact").get<bool>();
            tr.steps.push_back(std::move(s));
        }
        trajs.push_back(std::move(tr));
    }
    return trajs;
}

}  // namespace topnav::pol
