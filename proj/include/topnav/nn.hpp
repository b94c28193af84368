#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "topnav/rng.hpp"

namespace topnav::nn {

using Vec = std::vector<double>;

/// Dense row-major matrix.
struct Mat {
    int rows = 0, cols = 0;
    Vec a;
    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
    double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
};

inline Vec matvec(const Mat& W, const Vec& x) {
    if (static_cast<int>(x.size()) != W.cols) throw std::invalid_argument("matvec: dim mismatch");
    Vec y(W.rows, 0.0);
    for (int i = 0; i < W.rows; ++i) {
        double s = 0.0;
        const double* row = &W.a[static_cast<std::size_t>(i) * W.cols];
        for (int j = 0; j < W.cols; ++j) s += row[j] * x[j];
        y[i] = s;
    }
    return y;
}

/// y = W^T u (gradient propagation through a matvec).
inline Vec mat_t_vec(const Mat& W, const Vec& u) {
    if (static_cast<int>(u.size()) != W.rows) throw std::invalid_argument("mat_t_vec: dim mismatch");
    Vec y(W.cols, 0.0);
    for (int i = 0; i < W.rows; ++i) {
        const double ui = u[i];
        const double* row = &W.a[static_cast<std::size_t>(i) * W.cols];
        for (int j = 0; j < W.cols; ++j) y[j] += row[j] * ui;
    }
    return y;
}

/// dW += u v^T.
inline void add_outer(Mat& dW, const Vec& u, const Vec& v) {
    if (static_cast<int>(u.size()) != dW.rows || static_cast<int>(v.size()) != dW.cols)
        throw std::invalid_argument("add_outer: dim mismatch");
    for (int i = 0; i < dW.rows; ++i) {
        double* row = &dW.a[static_cast<std::size_t>(i) * dW.cols];
        const double ui = u[i];
        for (int j = 0; j < dW.cols; ++j) row[j] += ui * v[j];
    }
}

inline void axpy(Vec& y, double alpha, const Vec& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Vec softmax(const Vec& logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    Vec p(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) { p[i] = std::exp(logits[i] - m); s += p[i]; }
    for (double& x : p) x /= s;
    return p;
}

inline constexpr double kLeakySlope = 0.01;

// ---------------------------------------------------------------------------
// MLP: affine layers, leaky-rectifier hidden activations, identity output.
// ---------------------------------------------------------------------------

struct Mlp {
    std::vector<int> sizes;  // e.g. {8, 32, 8}
    std::vector<Mat> W;      // W[l] maps sizes[l] -> sizes[l+1]
    std::vector<Vec> b;

    struct Grads {
        std::vector<Mat> dW;
        std::vector<Vec> db;
    };
    struct Trace {
        std::vector<Vec> act;  // act[0] = input, act[L] = output
        std::vector<Vec> pre;  // pre-activations per layer
    };

    int in_dim() const { return sizes.front(); }
    int out_dim() const { return sizes.back(); }
    int n_layers() const { return static_cast<int>(W.size()); }

    static Mlp make(std::vector<int> layer_sizes, Rng& rng) {
        if (layer_sizes.size() < 2) throw std::invalid_argument("Mlp: need at least 2 layer sizes");
        Mlp m;
        m.sizes = std::move(layer_sizes);
        for (std::size_t l = 0; l + 1 < m.sizes.size(); ++l) {
            const int in = m.sizes[l], out = m.sizes[l + 1];
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            Mat w(out, in);
            for (double& x : w.a) x = rng.uniform(-bound, bound);
            Vec bias(out);
            for (double& x : bias) x = rng.uniform(-bound, bound);
            m.W.push_back(std::move(w));
            m.b.push_back(std::move(bias));
        }
        return m;
    }

    Grads zero_grads() const {
        Grads g;
        for (const Mat& w : W) g.dW.emplace_back(w.rows, w.cols);
        for (const Vec& bias : b) g.db.emplace_back(bias.size(), 0.0);
        return g;
    }

    Vec forward(const Vec& x, Trace* tr = nullptr) const {
        if (static_cast<int>(x.size()) != in_dim()) throw std::invalid_argument("Mlp::forward: dim mismatch");
        if (tr) { tr->act.clear(); tr->pre.clear(); tr->act.push_back(x); }
        Vec h = x;
        for (int l = 0; l < n_layers(); ++l) {
            Vec z = matvec(W[l], h);
            axpy(z, 1.0, b[l]);
            if (tr) tr->pre.push_back(z);
            if (l + 1 < n_layers())
                for (double& v : z) v = v >= 0.0 ? v : kLeakySlope * v;
            if (tr) tr->act.push_back(z);
            h = std::move(z);
        }
        return h;
    }

    /// Accumulates parameter gradients into g; returns dL/dinput.
    Vec backward(const Trace& tr, const Vec& upstream, Grads& g) const {
        if (static_cast<int>(upstream.size()) != out_dim())
            throw std::invalid_argument("Mlp::backward: dim mismatch");
        Vec delta = upstream;
        for (int l = n_layers() - 1; l >= 0; --l) {
            if (l + 1 < n_layers()) {  // undo the leaky rectifier of this layer's output
                const Vec& z = tr.pre[l];
                for (std::size_t i = 0; i < delta.size(); ++i)
                    if (z[i] < 0.0) delta[i] *= kLeakySlope;
            }
            add_outer(g.dW[l], delta, tr.act[l]);
            axpy(g.db[l], 1.0, delta);
            delta = mat_t_vec(W[l], delta);
        }
        return delta;
    }
};

// ---------------------------------------------------------------------------
// GRU cell: z/r sigmoid gates, tanh candidate, h' = (1-z) ⊙ h + z ⊙ c.
// ---------------------------------------------------------------------------

struct GruCell {
    int in = 0, hidden = 0;
    Mat Wz, Uz, Wr, Ur, Wc, Uc;
    Vec bz, br, bc;

    struct Grads {
        Mat dWz, dUz, dWr, dUr, dWc, dUc;
        Vec dbz, dbr, dbc;
    };
    struct Trace {
        Vec x, h, z, r, c, rh;
    };

    static GruCell make(int in, int hidden, Rng& rng) {
        if (in < 1 || hidden < 1) throw std::invalid_argument("GruCell: dims must be positive");
        GruCell c;
        c.in = in;
        c.hidden = hidden;
        auto init_mat = [&rng](int rows, int cols) {
            Mat m(rows, cols);
            const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
            for (double& x : m.a) x = rng.uniform(-bound, bound);
            return m;
        };
        auto init_vec = [&rng](int n, int fan_in) {
            Vec v(n);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& x : v) x = rng.uniform(-bound, bound);
            return v;
        };
        c.Wz = init_mat(hidden, in);
        c.Uz = init_mat(hidden, hidden);
        c.Wr = init_mat(hidden, in);
        c.Ur = init_mat(hidden, hidden);
        c.Wc = init_mat(hidden, in);
        c.Uc = init_mat(hidden, hidden);
        c.bz = init_vec(hidden, hidden);
        c.br = init_vec(hidden, hidden);
        c.bc = init_vec(hidden, hidden);
        return c;
    }

    Grads zero_grads() const {
        Grads g;
        g.dWz = Mat(hidden, in);
        g.dUz = Mat(hidden, hidden);
        g.dWr = Mat(hidden, in);
        g.dUr = Mat(hidden, hidden);
        g.dWc = Mat(hidden, in);
        g.dUc = Mat(hidden, hidden);
        g.dbz.assign(hidden, 0.0);
        g.dbr.assign(hidden, 0.0);
        g.dbc.assign(hidden, 0.0);
        return g;
    }

    Vec step(const Vec& x, const Vec& h, Trace* tr = nullptr) const {
        if (static_cast<int>(x.size()) != in || static_cast<int>(h.size()) != hidden)
            throw std::invalid_argument("GruCell::step: dim mismatch");
        Vec az = matvec(Wz, x), ar = matvec(Wr, x);
        axpy(az, 1.0, matvec(Uz, h));
        axpy(ar, 1.0, matvec(Ur, h));
        axpy(az, 1.0, bz);
        axpy(ar, 1.0, br);
        Vec z(hidden), r(hidden);
        for (int i = 0; i < hidden; ++i) { z[i] = sigmoid(az[i]); r[i] = sigmoid(ar[i]); }
        Vec rh(hidden);
        for (int i = 0; i < hidden; ++i) rh[i] = r[i] * h[i];
        Vec ac = matvec(Wc, x);
        axpy(ac, 1.0, matvec(Uc, rh));
        axpy(ac, 1.0, bc);
        Vec c(hidden), h_new(hidden);
        for (int i = 0; i < hidden; ++i) {
            c[i] = std::tanh(ac[i]);
            h_new[i] = (1.0 - z[i]) * h[i] + z[i] * c[i];
        }
        if (tr) { tr->x = x; tr->h = h; tr->z = z; tr->r = r; tr->c = c; tr->rh = rh; }
        return h_new;
    }

    /// One step of backprop through time. Accumulates into g; returns
    /// (dL/dx, dL/dh_prev) given dL/dh_new.
    std::pair<Vec, Vec> backward(const Trace& tr, const Vec& dh_new, Grads& g) const {
        Vec dx(in, 0.0), dh(hidden, 0.0);
        Vec dz_pre(hidden), dc_pre(hidden);
        for (int i = 0; i < hidden; ++i) {
            const double dz = dh_new[i] * (tr.c[i] - tr.h[i]);
            dz_pre[i] = dz * tr.z[i] * (1.0 - tr.z[i]);
            dc_pre[i] = dh_new[i] * tr.z[i] * (1.0 - tr.c[i] * tr.c[i]);
            dh[i] += dh_new[i] * (1.0 - tr.z[i]);
        }
        // candidate path
        add_outer(g.dWc, dc_pre, tr.x);
        add_outer(g.dUc, dc_pre, tr.rh);
        axpy(g.dbc, 1.0, dc_pre);
        axpy(dx, 1.0, mat_t_vec(Wc, dc_pre));
        const Vec drh = mat_t_vec(Uc, dc_pre);
        Vec dr_pre(hidden);
        for (int i = 0; i < hidden; ++i) {
            dh[i] += drh[i] * tr.r[i];
            const double dr = drh[i] * tr.h[i];
            dr_pre[i] = dr * tr.r[i] * (1.0 - tr.r[i]);
        }
        // reset gate path
        add_outer(g.dWr, dr_pre, tr.x);
        add_outer(g.dUr, dr_pre, tr.h);
        axpy(g.dbr, 1.0, dr_pre);
        axpy(dx, 1.0, mat_t_vec(Wr, dr_pre));
        axpy(dh, 1.0, mat_t_vec(Ur, dr_pre));
        // update gate path
        add_outer(g.dWz, dz_pre, tr.x);
        add_outer(g.dUz, dz_pre, tr.h);
        axpy(g.dbz, 1.0, dz_pre);
        axpy(dx, 1.0, mat_t_vec(Wz, dz_pre));
        axpy(dh, 1.0, mat_t_vec(Uz, dz_pre));
        return {std::move(dx), std::move(dh)};
    }
};

// ---------------------------------------------------------------------------
// Losses. Each returns the loss and writes analytic gradients.
// ---------------------------------------------------------------------------

/// Label-smoothed cross entropy over logits; grad w.r.t. logits.
inline double cross_entropy_smoothed(const Vec& logits, int label, double smoothing, Vec& grad) {
    const int C = static_cast<int>(logits.size());
    if (label < 0 || label >= C) throw std::invalid_argument("cross_entropy_smoothed: label out of range");
    if (smoothing < 0.0 || smoothing >= 1.0) throw std::invalid_argument("cross_entropy_smoothed: smoothing in [0,1)");
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double v : logits) s += std::exp(v - m);
    const double lse = m + std::log(s);
    double loss = 0.0;
    grad.assign(C, 0.0);
    for (int i = 0; i < C; ++i) {
        const double q = (i == label ? 1.0 - smoothing : 0.0) + smoothing / C;
        const double logp = logits[i] - lse;
        loss -= q * logp;
        grad[i] = std::exp(logp) - q;
    }
    return loss;
}

/// Binary cross entropy on a logit (softplus form); grad w.r.t. the logit.
inline double bce_logit(double logit, double label, double& grad) {
    if (label != 0.0 && label != 1.0) throw std::invalid_argument("bce_logit: label must be 0 or 1");
    // max(l,0) - l*y + log(1 + exp(-|l|))
    const double loss = std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
    grad = sigmoid(logit) - label;
    return loss;
}

/// Squared L2 distance ‖u−v‖²; gradients w.r.t. both arguments.
inline double l2(const Vec& u, const Vec& v, Vec& du, Vec& dv) {
    if (u.size() != v.size()) throw std::invalid_argument("l2: dim mismatch");
    du.assign(u.size(), 0.0);
    dv.assign(v.size(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = u[i] - v[i];
        loss += d * d;
        du[i] = 2.0 * d;
        dv[i] = -2.0 * d;
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Adam over a fixed ordered list of parameter arrays.
// ---------------------------------------------------------------------------

struct Adam {
    double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long t = 0;
    std::vector<Vec> m, v;

    explicit Adam(double lr_ = 1e-4) : lr(lr_) {}

    /// One bias-corrected update. `params` must list the same arrays in the
    /// same order on every call; moments are allocated on first use.
    void step(const std::vector<std::pair<Vec*, const Vec*>>& params) {
        if (m.empty()) {
            for (const auto& [p, g] : params) {
                (void)g;
                m.emplace_back(p->size(), 0.0);
                v.emplace_back(p->size(), 0.0);
            }
        }
        if (m.size() != params.size()) throw std::invalid_argument("Adam::step: param list changed");
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Vec& p = *params[k].first;
            const Vec& g = *params[k].second;
            if (p.size() != g.size() || p.size() != m[k].size())
                throw std::invalid_argument("Adam::step: shape mismatch");
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (!std::isfinite(g[i])) throw std::runtime_error("Adam::step: non-finite gradient");
                m[k][i] = beta1 * m[k][i] + (1.0 - beta1) * g[i];
                v[k][i] = beta2 * v[k][i] + (1.0 - beta2) * g[i] * g[i];
                const double mhat = m[k][i] / c1;
                const double vhat = v[k][i] / c2;
                p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

/// Convenience: parameter/gradient array pairs for the two model kinds,
/// in a fixed canonical order.
inline std::vector<std::pair<Vec*, const Vec*>> param_refs(Mlp& m, const Mlp::Grads& g) {
    std::vector<std::pair<Vec*, const Vec*>> out;
    for (std::size_t l = 0; l < m.W.size(); ++l) {
        out.push_back({&m.W[l].a, &g.dW[l].a});
        out.push_back({&m.b[l], &g.db[l]});
    }
    return out;
}

inline std::vector<std::pair<Vec*, const Vec*>> param_refs(GruCell& c, const GruCell::Grads& g) {
    return {
        {&c.Wz.a, &g.dWz.a}, {&c.Uz.a, &g.dUz.a}, {&c.Wr.a, &g.dWr.a},
        {&c.Ur.a, &g.dUr.a}, {&c.Wc.a, &g.dWc.a}, {&c.Uc.a, &g.dUc.a},
        {&c.bz, &g.dbz},     {&c.br, &g.dbr},     {&c.bc, &g.dbc},
    };
}

inline void scale_grads(Mlp::Grads& g, double s) {
    for (Mat& m : g.dW)
        for (double& v : m.a) v *= s;
    for (Vec& b : g.db)
        for (double& v : b) v *= s;
}

inline void scale_grads(GruCell::Grads& g, double s) {
    for (Mat* m : {&g.dWz, &g.dUz, &g.dWr, &g.dUr, &g.dWc, &g.dUc})
        for (double& v : m->a) v *= s;
    for (Vec* b : {&g.dbz, &g.dbr, &g.dbc})
        for (double& v : *b) v *= s;
}

/// FNV-1a over the exact parameter bytes — detects any weight change.
inline std::uint64_t param_hash(const Mlp& m) {
    std::uint64_t h = 14695981039346656037ULL;
    const auto mix = [&h](const double* data, std::size_t n) {
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    for (const Mat& W : m.W) mix(W.a.data(), W.a.size());
    for (const Vec& b : m.b) mix(b.data(), b.size());
    return h;
}

// ---------------------------------------------------------------------------
// Persistence: versioned JSON with flat parameter arrays.
// ---------------------------------------------------------------------------

struct TrainMeta {
    std::uint64_t seed = 0;
    int epochs = 0;
    std::vector<double> loss_curve;
};

inline nlohmann::json meta_to_json(const TrainMeta& m) {
    return {{"seed", m.seed}, {"epochs", m.epochs}, {"loss_curve", m.loss_curve}};
}

inline TrainMeta meta_from_json(const nlohmann::json& j) {
    TrainMeta m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.epochs = j.at("epochs").get<int>();
    m.loss_curve = j.at("loss_curve").get<std::vector<double>>();
    return m;
}

inline nlohmann::json mlp_to_json(const Mlp& m, const TrainMeta& meta = {}) {
    nlohmann::json j;
    j["version"] = 1;
    j["arch"] = "mlp";
    j["sizes"] = m.sizes;
    j["weights"] = nlohmann::json::array();
    j["biases"] = nlohmann::json::array();
    for (const Mat& w : m.W) j["weights"].push_back(w.a);
    for (const Vec& b : m.b) j["biases"].push_back(b);
    j["metadata"] = meta_to_json(meta);
    return j;
}

inline Mlp mlp_from_json(const nlohmann::json& j, TrainMeta* meta = nullptr) {
    if (j.at("version").get<int>() != 1 || j.at("arch").get<std::string>() != "mlp")
        throw std::runtime_error("weights file: not a v1 mlp");
    Mlp m;
    m.sizes = j.at("sizes").get<std::vector<int>>();
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    for (std::size_t l = 0; l + 1 < m.sizes.size(); ++l) {
        Mat w(m.sizes[l + 1], m.sizes[l]);
        w.a = ws.at(l).get<Vec>();
        if (w.a.size() != static_cast<std::size_t>(w.rows) * w.cols)
            throw std::runtime_error("weights file: shape mismatch");
        m.W.push_back(std::move(w));
        Vec b = bs.at(l).get<Vec>();
        if (b.size() != static_cast<std::size_t>(m.sizes[l + 1]))
            throw std::runtime_error("weights file: bias shape mismatch");
        m.b.push_back(std::move(b));
    }
    if (meta && j.contains("metadata")) *meta = meta_from_json(j.at("metadata"));
    return m;
}

inline nlohmann::json gru_to_json(const GruCell& c) {
    nlohmann::json j;
    j["version"] = 1;
    j["arch"] = "gru";
    j["in"] = c.in;
    j["hidden"] = c.hidden;
    j["Wz"] = c.Wz.a;
    j["Uz"] = c.Uz.a;
    j["Wr"] = c.Wr.a;
    j["Ur"] = c.Ur.a;
    j["Wc"] = c.Wc.a;
    j["Uc"] = c.Uc.a;
    j["bz"] = c.bz;
    j["br"] = c.br;
    j["bc"] = c.bc;
    return j;
}

inline GruCell gru_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != 1 || j.at("arch").get<std::string>() != "gru")
        throw std::runtime_error("weights file: not a v1 gru");
    GruCell c;
    c.in = j.at("in").get<int>();
    c.hidden = j.at("hidden").get<int>();
    auto mat = [&](const char* key, int rows, int cols) {
        Mat m(rows, cols);
        m.a = j.at(key).get<Vec>();
        if (m.a.size() != static_cast<std::size_t>(rows) * cols)
            throw std::runtime_error("weights file: gru shape mismatch");
        return m;
    };
    c.Wz = mat("Wz", c.hidden, c.in);
    c.Uz = mat("Uz", c.hidden, c.hidden);
    c.Wr = mat("Wr", c.hidden, c.in);
    c.Ur = mat("Ur", c.hidden, c.hidden);
    c.Wc = mat("Wc", c.hidden, c.in);
    c.Uc = mat("Uc", c.hidden, c.hidden);
    c.bz = j.at("bz").get<Vec>();
    c.br = j.at("br").get<Vec>();
    c.bc = j.at("bc").get<Vec>();
    return c;
}

}  // namespace topnav::nn
