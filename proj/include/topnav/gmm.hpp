#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "topnav/geometry.hpp"
#include "topnav/rng.hpp"
#include "topnav/scene.hpp"

namespace topnav::seg {

/// 2x2 symmetric covariance stored as (xx, xy, yy).
struct Cov2 {
    double xx = 1.0, xy = 0.0, yy = 1.0;
    double det() const { return xx * yy - xy * xy; }
};

struct GmmModel {
    int K = 0;
    std::vector<double> weights;
    std::vector<Vec2> means;
    std::vector<Cov2> covs;
    std::vector<double> ll_curve;  // per-EM-iteration log-likelihood
    std::uint64_t seed = 0;
};

inline constexpr double kRegFloor = 1e-4;  // m^2 floor on covariance eigenvalues

namespace detail {

inline double log_gauss2(const Vec2& x, const Vec2& mu, const Cov2& c) {
    const double det = c.det();
    if (det <= 0.0) throw std::runtime_error("gmm: covariance is not positive definite");
    const double dx = x.x - mu.x, dy = x.y - mu.y;
    // inverse of [[xx,xy],[xy,yy]] applied to (dx,dy)
    const double ix = (c.yy * dx - c.xy * dy) / det;
    const double iy = (-c.xy * dx + c.xx * dy) / det;
    const double maha = dx * ix + dy * iy;
    return -std::log(2.0 * kPi) - 0.5 * std::log(det) - 0.5 * maha;
}

inline double logsumexp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

/// Clamp the eigenvalues of a 2x2 symmetric matrix to at least `floor`.
/// This is the constrained M-step maximizer, so EM's monotone log-likelihood
/// guarantee survives the regularization (a diagonal additive floor would not
/// preserve it).
inline Cov2 clamp_eigenvalues(const Cov2& s, double floor) {
    const double tr = s.xx + s.yy;
    const double gap = std::sqrt(std::max(0.0, (s.xx - s.yy) * (s.xx - s.yy) + 4.0 * s.xy * s.xy));
    const double l1 = 0.5 * (tr + gap), l2 = 0.5 * (tr - gap);
    if (l2 >= floor) return s;  // already inside the constraint set
    // eigenvector for l1; the other is its perpendicular
    double vx, vy;
    if (std::abs(s.xy) > 1e-300) {
        vx = l1 - s.yy;
        vy = s.xy;
    } else if (s.xx >= s.yy) {
        vx = 1.0;
        vy = 0.0;
    } else {
        vx = 0.0;
        vy = 1.0;
    }
    const double n = std::hypot(vx, vy);
    vx /= n;
    vy /= n;
    const double c1 = std::max(l1, floor), c2 = std::max(l2, floor);
    Cov2 out;
    out.xx = c1 * vx * vx + c2 * vy * vy;
    out.xy = (c1 - c2) * vx * vy;
    out.yy = c1 * vy * vy + c2 * vx * vx;
    return out;
}

}  // namespace detail

/// Fit a K-component GMM with EM from a k-means++ seeding. Log-likelihood is
/// non-decreasing across iterations (recorded in ll_curve); covariance
/// diagonals are floored every M-step so components cannot collapse.
inline GmmModel fit_gmm(const std::vector<Vec2>& points, int K, std::uint64_t seed,
                        int max_iter = 200, double tol = 1e-6) {
    const int n = static_cast<int>(points.size());
    if (K < 1) throw std::invalid_argument("fit_gmm: K must be >= 1");
    if (n < 2 * K) throw std::invalid_argument("fit_gmm: need at least 2K points");

    // degenerate-input guard: K distinct points must exist to seed K components
    {
        std::vector<Vec2> uniq;
        for (const Vec2& p : points) {
            bool seen = false;
            for (const Vec2& q : uniq)
                if (p.x == q.x && p.y == q.y) { seen = true; break; }
            if (!seen) {
                uniq.push_back(p);
                if (static_cast<int>(uniq.size()) >= K) break;
            }
        }
        if (static_cast<int>(uniq.size()) < K)
            throw std::runtime_error("fit_gmm: fewer distinct points than components");
    }

    Rng rng(seed);
    GmmModel m;
    m.K = K;
    m.seed = seed;

    // k-means++ seeding
    std::vector<Vec2> centers;
    centers.push_back(points[rng.uniform_int(0, n - 1)]);
    std::vector<double> d2(n);
    while (static_cast<int>(centers.size()) < K) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = 1e300;
            for (const Vec2& c : centers) {
                const double dx = points[i].x - c.x, dy = points[i].y - c.y;
                best = std::min(best, dx * dx + dy * dy);
            }
            d2[i] = best;
            total += best;
        }
        int pick = 0;
        if (total > 0.0) {
            double r = rng.uniform01() * total, acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) { pick = i; break; }
            }
        } else {
            pick = static_cast<int>(rng.uniform_int(0, n - 1));
        }
        centers.push_back(points[pick]);
    }

    // initial parameters: uniform weights, seeded means, global covariance
    Vec2 mean{0, 0};
    for (const Vec2& p : points) mean = mean + p;
    mean = mean * (1.0 / n);
    Cov2 global;
    global.xx = global.yy = global.xy = 0.0;
    for (const Vec2& p : points) {
        const double dx = p.x - mean.x, dy = p.y - mean.y;
        global.xx += dx * dx;
        global.xy += dx * dy;
        global.yy += dy * dy;
    }
    global.xx /= n;
    global.yy /= n;
    global.xy /= n;
    global = detail::clamp_eigenvalues(global, kRegFloor);
    m.weights.assign(K, 1.0 / K);
    m.means = centers;
    m.covs.assign(K, global);

    // EM
    std::vector<std::vector<double>> resp(n, std::vector<double>(K));
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iter; ++iter) {
        // E-step in log space
        double ll = 0.0;
        std::vector<double> row(K);
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < K; ++k)
                row[k] = std::log(m.weights[k]) + detail::log_gauss2(points[i], m.means[k], m.covs[k]);
            const double lse = detail::logsumexp(row);
            ll += lse;
            for (int k = 0; k < K; ++k) resp[i][k] = std::exp(row[k] - lse);
        }
        m.ll_curve.push_back(ll);
        if (!std::isfinite(ll)) throw std::runtime_error("fit_gmm: log-likelihood diverged");
        if (ll - prev_ll < tol && iter > 0) break;
        prev_ll = ll;

        // M-step with diagonal floor
        for (int k = 0; k < K; ++k) {
            double nk = 0.0;
            Vec2 mu{0, 0};
            for (int i = 0; i < n; ++i) {
                nk += resp[i][k];
                mu = mu + points[i] * resp[i][k];
            }
            m.weights[k] = nk / n;
            if (nk < 1e-12) continue;  // emptied component: hold mean/cov (keeps EM monotone)
            mu = mu * (1.0 / nk);
            Cov2 c;
            c.xx = c.yy = c.xy = 0.0;
            for (int i = 0; i < n; ++i) {
                const double dx = points[i].x - mu.x, dy = points[i].y - mu.y;
                c.xx += resp[i][k] * dx * dx;
                c.xy += resp[i][k] * dx * dy;
                c.yy += resp[i][k] * dy * dy;
            }
            c.xx /= nk;
            c.yy /= nk;
            c.xy /= nk;
            m.means[k] = mu;
            m.covs[k] = detail::clamp_eigenvalues(c, kRegFloor);
        }
    }
    return m;
}

/// Component with the highest weighted density; ties go to the lowest index.
inline int assign_label(const GmmModel& m, const Vec2& p) {
    if (m.K < 1) throw std::invalid_argument("assign_label: model not fitted");
    int best = 0;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < m.K; ++k) {
        const double ll = std::log(m.weights[k]) + detail::log_gauss2(p, m.means[k], m.covs[k]);
        if (ll > best_ll) { best_ll = ll; best = k; }
    }
    return best;
}

/// Chance-adjusted best-permutation agreement between two labelings with K
/// classes each: (acc - 1/K) / (1 - 1/K), exhaustive over permutations (K <= 8).
inline double adjusted_agreement(const std::vector<int>& pred, const std::vector<int>& truth, int K) {
    if (pred.size() != truth.size() || pred.empty())
        throw std::invalid_argument("adjusted_agreement: size mismatch");
    if (K < 1 || K > 8) throw std::invalid_argument("adjusted_agreement: K must be in [1,8]");
    if (K == 1) return 1.0;
    // confusion counts
    std::vector<long> conf(static_cast<std::size_t>(K) * K, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || pred[i] >= K || truth[i] < 0 || truth[i] >= K)
            throw std::invalid_argument("adjusted_agreement: label out of range");
        ++conf[static_cast<std::size_t>(pred[i]) * K + truth[i]];
    }
    std::vector<int> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    long best = 0;
    do {
        long hits = 0;
        for (int k = 0; k < K; ++k) hits += conf[static_cast<std::size_t>(k) * K + perm[k]];
        best = std::max(best, hits);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const double acc = static_cast<double>(best) / static_cast<double>(pred.size());
    return (acc - 1.0 / K) / (1.0 - 1.0 / K);
}

struct SegmentationResult {
    GmmModel model;
    double agreement = 0.0;  // adjusted agreement vs generator room ids, in [-1,1]
    std::vector<Vec2> samples;
};

/// Sample valid positions, fit a GMM with the scene's ground-truth room count
/// (or an explicit override, e.g. to force >= 2 clusters on a one-room arena),
/// and measure how well GMM labels agree with generator room ids.
inline SegmentationResult segment_scene(const sim::Scene& scene, int n_train_points,
                                        std::uint64_t seed, int k_override = 0) {
    const int K = k_override > 0 ? k_override : scene.num_rooms();
    if (K < 1) throw std::invalid_argument("segment_scene: scene has no rooms");
    Rng rng(seed);
    SegmentationResult out;
    out.samples.reserve(n_train_points);
    for (int i = 0; i < n_train_points; ++i)
        out.samples.push_back(sim::sample_free_position(scene, rng, 0.2));
    out.model = fit_gmm(out.samples, K, rng.fork("gmm_fit").seed());
    std::vector<int> pred, truth;
    for (const Vec2& p : out.samples) {
        const int room = scene.room_at(p.x, p.y);
        if (room == sim::kNoRoom) continue;  // door cells can be ambiguous; skip
        pred.push_back(assign_label(out.model, p));
        truth.push_back(room);
    }
    out.agreement = K <= 8 ? adjusted_agreement(pred, truth, K) : 0.0;
    return out;
}

// --- serialization ---

inline nlohmann::json gmm_to_json(const GmmModel& m) {
    nlohmann::json j;
    j["version"] = 1;
    j["K"] = m.K;
    j["weights"] = m.weights;
    j["means"] = nlohmann::json::array();
    for (const Vec2& mu : m.means) j["means"].push_back({mu.x, mu.y});
    j["covariances"] = nlohmann::json::array();
    for (const Cov2& c : m.covs) j["covariances"].push_back({c.xx, c.xy, c.yy});
    j["ll_curve"] = m.ll_curve;
    j["seed"] = m.seed;
    return j;
}

inline GmmModel gmm_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != 1) throw std::runtime_error("gmm file: unsupported version");
    GmmModel m;
    m.K = j.at("K").get<int>();
    m.weights = j.at("weights").get<std::vector<double>>();
    for (const auto& e : j.at("means")) m.means.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
    for (const auto& e : j.at("covariances"))
        m.covs.push_back({e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>()});
    m.ll_curve = j.at("ll_curve").get<std::vector<double>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    return m;
}

inline void save_gmm(const GmmModel& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << gmm_to_json(m).dump();
}

inline GmmModel load_gmm(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    f >> j;
    return gmm_from_json(j);
}

}  // namespace topnav::seg
