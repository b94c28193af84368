#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "topnav/gmm.hpp"
#include "topnav/nn.hpp"
#include "topnav/rng.hpp"
#include "topnav/scene.hpp"
#include "topnav/sim.hpp"

namespace topnav::percep {

using nn::Mlp;
using nn::Vec;

/// Two-scale descriptor extractor. The trunk MLP runs on each non-overlapping
/// window of `window` rays (depth normalized by max_range + texture per ray);
/// fine features are the per-window outputs, coarse features are elementwise
/// maxima over groups of `coarse_group` windows. Concatenated [coarse|fine]
/// and L2-normalized.
struct FxConfig {
    int rays = 64;
    int window = 4;        // rays per trunk window
    int coarse_group = 4;  // windows pooled per coarse feature
    int feat = 8;          // trunk output dim
    std::vector<int> trunk_hidden = {32};
    double max_range = 5.0;

    int fine_windows() const { return rays / window; }
    int coarse_windows() const { return fine_windows() / coarse_group; }
    int descriptor_dim() const { return (fine_windows() + coarse_windows()) * feat; }
    std::vector<int> trunk_sizes() const {
        std::vector<int> s{window * 2};
        s.insert(s.end(), trunk_hidden.begin(), trunk_hidden.end());
        s.push_back(feat);
        return s;
    }
    void validate() const {
        if (rays % window != 0 || fine_windows() % coarse_group != 0)
            throw std::invalid_argument("FxConfig: rays/window/coarse_group do not divide evenly");
    }
};

struct FeatureExtractor {
    FxConfig cfg;
    Mlp trunk;

    static FeatureExtractor make(const FxConfig& cfg, Rng& rng) {
        cfg.validate();
        FeatureExtractor fx;
        fx.cfg = cfg;
        fx.trunk = Mlp::make(cfg.trunk_sizes(), rng);
        return fx;
    }
};

struct Descriptor {
    Vec values;
    sim::Domain domain = sim::Domain::SIM;
};

inline double cosine(const Descriptor& a, const Descriptor& b) {
    if (a.values.size() != b.values.size()) throw std::invalid_argument("cosine: dim mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
    return s;
}

/// Everything the backward pass needs to push a descriptor gradient into the
/// trunk parameters.
struct FxTrace {
    std::vector<Vec> windows;            // trunk inputs
    std::vector<Mlp::Trace> win_traces;  // per-window trunk traces
    std::vector<Vec> fine;               // trunk outputs
    std::vector<int> max_src;            // winning window per coarse slot
    Vec feat;                            // pre-normalization concatenation
    double norm = 0.0;
    Vec desc;
};

inline Vec fx_windows_from_obs(const FxConfig& cfg, const sim::RayObservation& obs, int w) {
    Vec in(static_cast<std::size_t>(cfg.window) * 2);
    for (int r = 0; r < cfg.window; ++r) {
        const int ray = w * cfg.window + r;
        in[r] = obs.depths[ray] / cfg.max_range;
        in[cfg.window + r] = obs.textures[ray];
    }
    return in;
}

inline Descriptor extract_descriptor(const FeatureExtractor& fx, const sim::RayObservation& obs,
                                     FxTrace* tr = nullptr) {
    const FxConfig& c = fx.cfg;
    if (static_cast<int>(obs.depths.size()) != c.rays)
        throw std::invalid_argument("extract_descriptor: ray count mismatch");
    const int nf = c.fine_windows(), nc = c.coarse_windows();
    std::vector<Vec> fine(nf);
    if (tr) {
        tr->windows.resize(nf);
        tr->win_traces.resize(nf);
    }
    for (int w = 0; w < nf; ++w) {
        Vec in = fx_windows_from_obs(c, obs, w);
        fine[w] = fx.trunk.forward(in, tr ? &tr->win_traces[w] : nullptr);
        if (tr) tr->windows[w] = std::move(in);
    }
    Vec feat(static_cast<std::size_t>(c.descriptor_dim()), 0.0);
    std::vector<int> max_src(static_cast<std::size_t>(nc) * c.feat, 0);
    // coarse block first: elementwise max over each group of windows
    for (int g = 0; g < nc; ++g) {
        for (int f = 0; f < c.feat; ++f) {
            double best = -std::numeric_limits<double>::infinity();
            int src = g * c.coarse_group;
            for (int w = g * c.coarse_group; w < (g + 1) * c.coarse_group; ++w) {
                if (fine[w][f] > best) { best = fine[w][f]; src = w; }
            }
            feat[static_cast<std::size_t>(g) * c.feat + f] = best;
            max_src[static_cast<std::size_t>(g) * c.feat + f] = src;
        }
    }
    // fine block
    for (int w = 0; w < nf; ++w)
        for (int f = 0; f < c.feat; ++f)
            feat[static_cast<std::size_t>(nc + w) * c.feat + f] = fine[w][f];

    double norm = 0.0;
    for (double v : feat) norm += v * v;
    norm = std::sqrt(norm);
    Descriptor d;
    d.domain = obs.domain;
    d.values.assign(feat.size(), 0.0);
    if (norm > 0.0)
        for (std::size_t i = 0; i < feat.size(); ++i) d.values[i] = feat[i] / norm;
    if (tr) {
        tr->fine = std::move(fine);
        tr->max_src = std::move(max_src);
        tr->feat = std::move(feat);
        tr->norm = norm;
        tr->desc = d.values;
    }
    return d;
}

/// Push dL/ddescriptor through normalization, pooling, and all window trunk
/// passes; accumulates into trunk_grads.
inline void fx_backward(const FeatureExtractor& fx, const FxTrace& tr, const Vec& ddesc,
                        Mlp::Grads& trunk_grads) {
    const FxConfig& c = fx.cfg;
    const int nf = c.fine_windows(), nc = c.coarse_windows();
    const std::size_t D = tr.feat.size();
    Vec dfeat(D, 0.0);
    if (tr.norm > 0.0) {
        // y = x / |x|  =>  dx = (dy - y <y, dy>) / |x|
        double dot = 0.0;
        for (std::size_t i = 0; i < D; ++i) dot += tr.desc[i] * ddesc[i];
        for (std::size_t i = 0; i < D; ++i) dfeat[i] = (ddesc[i] - tr.desc[i] * dot) / tr.norm;
    }
    std::vector<Vec> dfine(nf, Vec(c.feat, 0.0));
    for (int g = 0; g < nc; ++g)
        for (int f = 0; f < c.feat; ++f)
            dfine[tr.max_src[static_cast<std::size_t>(g) * c.feat + f]][f] +=
                dfeat[static_cast<std::size_t>(g) * c.feat + f];
    for (int w = 0; w < nf; ++w)
        for (int f = 0; f < c.feat; ++f)
            dfine[w][f] += dfeat[static_cast<std::size_t>(nc + w) * c.feat + f];
    for (int w = 0; w < nf; ++w) fx.trunk.backward(tr.win_traces[w], dfine[w], trunk_grads);
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct LabeledExample {
    sim::RayObservation obs;
    int label = 0;
    sim::Pose pose;
};

struct SplitDataset {
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> test;
};

inline constexpr int kHeadings = 18;  // every 20 degrees

/// Room-classification dataset: per valid position, 18 headings labeled with
/// the GMM cluster of the position. Split 70/30 by position; rooms holding
/// fewer than 3 positions are dropped; at most 10 positions kept per room.
inline SplitDataset build_room_dataset(const std::vector<const sim::Scene*>& scenes,
                                       const std::vector<const seg::GmmModel*>& gmms,
                                       int positions_per_scene, std::uint64_t seed,
                                       const sim::SensorParams& sensor = {},
                                       const sim::DomainParams& dom = sim::DomainParams::sim()) {
    if (scenes.size() != gmms.size())
        throw std::invalid_argument("build_room_dataset: scenes/gmms size mismatch");
    Rng rng(seed);
    SplitDataset out;
    int label_base = 0;  // room ids are namespaced per scene
    for (std::size_t si = 0; si < scenes.size(); ++si) {
        const sim::Scene& scene = *scenes[si];
        const seg::GmmModel& gmm = *gmms[si];
        Rng srng = rng.fork(scene.name + ":rooms");
        // sample positions, bucket by GMM label, cap at 10 per room, drop < 3
        std::map<int, std::vector<Vec2>> by_room;
        for (int i = 0; i < positions_per_scene; ++i) {
            const Vec2 p = sim::sample_free_position(scene, srng, 0.2);
            auto& bucket = by_room[seg::assign_label(gmm, p)];
            if (static_cast<int>(bucket.size()) < 10) bucket.push_back(p);
        }
        std::vector<std::pair<Vec2, int>> positions;
        for (auto& [room, pts] : by_room) {
            if (static_cast<int>(pts.size()) < 3) continue;
            for (const Vec2& p : pts) positions.push_back({p, label_base + room});
        }
        if (positions.empty())
            throw std::runtime_error("build_room_dataset: scene yields no valid positions: " + scene.name);
        srng.shuffle(positions);
        const std::size_t n_train = (positions.size() * 7 + 9) / 10;
        Rng orng = srng.fork("obs");
        for (std::size_t i = 0; i < positions.size(); ++i) {
            auto& dst = i < n_train ? out.train : out.test;
            for (int h = 0; h < kHeadings; ++h) {
                const double heading = wrap_angle(2.0 * kPi * h / kHeadings);
                LabeledExample ex;
                ex.pose = sim::Pose(positions[i].first.x, positions[i].first.y, heading);
                ex.obs = sim::observe(scene, ex.pose, sensor, dom, orng);
                ex.label = positions[i].second;
                dst.push_back(std::move(ex));
            }
        }
        label_base += gmm.K;
    }
    return out;
}

/// Passage-detection dataset: sources stratified per ground-truth room with
/// 0.3 m clearance; per source, `targets_per_source` bearings evenly covering
/// the circle of `radius`; label = segment_clear(source, target). Downsampled
/// to an exact 1:1 class ratio. Returned split 70/30 by source position.
inline SplitDataset build_passage_dataset(const std::vector<const sim::Scene*>& scenes,
                                          int sources_per_room, int targets_per_source,
                                          double radius, std::uint64_t seed,
                                          const sim::SensorParams& sensor = {},
                                          const sim::DomainParams& dom = sim::DomainParams::sim()) {
    Rng rng(seed);
    std::vector<std::vector<LabeledExample>> per_source;  // grouped to split by source
    for (const sim::Scene* sc : scenes) {
        const sim::Scene& scene = *sc;
        Rng srng = rng.fork(scene.name + ":passage");
        const int rooms = scene.num_rooms();
        for (int room = 0; room < rooms; ++room) {
            int placed = 0, tries = 0;
            while (placed < sources_per_room && tries < 20000) {
                ++tries;
                const Vec2 p = sim::sample_free_position(scene, srng, 0.3);
                if (scene.room_at(p.x, p.y) != room) continue;
                std::vector<LabeledExample> group;
                Rng orng = srng.fork(static_cast<std::uint64_t>(placed) * 1000 + room);
                for (int t = 0; t < targets_per_source; ++t) {
                    const double bearing = wrap_angle(2.0 * kPi * t / targets_per_source);
                    const Vec2 target{p.x + radius * std::cos(bearing), p.y + radius * std::sin(bearing)};
                    LabeledExample ex;
                    ex.pose = sim::Pose(p.x, p.y, bearing);
                    ex.obs = sim::observe(scene, ex.pose, sensor, dom, orng);
                    ex.label = sim::segment_clear(scene, p, target, 50) ? 1 : 0;
                    group.push_back(std::move(ex));
                }
                per_source.push_back(std::move(group));
                ++placed;
            }
        }
    }
    // split by source, then balance each side to a 1:1 class ratio
    rng.shuffle(per_source);
    const std::size_t n_train = (per_source.size() * 7 + 9) / 10;
    auto balance = [&rng](std::vector<LabeledExample>& exs) {
        std::vector<LabeledExample> pos, neg;
        for (auto& e : exs) (e.label == 1 ? pos : neg).push_back(std::move(e));
        rng.shuffle(pos);
        rng.shuffle(neg);
        const std::size_t n = std::min(pos.size(), neg.size());
        exs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            exs.push_back(std::move(pos[i]));
            exs.push_back(std::move(neg[i]));
        }
    };
    SplitDataset out;
    for (std::size_t i = 0; i < per_source.size(); ++i) {
        auto& dst = i < n_train ? out.train : out.test;
        for (auto& e : per_source[i]) dst.push_back(std::move(e));
    }
    balance(out.train);
    balance(out.test);
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct EvalMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

inline EvalMetrics classification_metrics(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw std::invalid_argument("classification_metrics: size mismatch");
    std::map<int, long> tp, fp, fn;
    long hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == truth[i]) { ++hits; ++tp[truth[i]]; }
        else { ++fp[pred[i]]; ++fn[truth[i]]; }
    }
    std::map<int, bool> classes;
    for (int t : truth) classes[t] = true;
    double f1_sum = 0.0;
    for (const auto& [c, _] : classes) {
        const double p_den = tp[c] + fp[c], r_den = tp[c] + fn[c];
        const double prec = p_den > 0 ? tp[c] / p_den : 0.0;
        const double rec = r_den > 0 ? tp[c] / r_den : 0.0;
        f1_sum += (prec + rec) > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    }
    EvalMetrics m;
    m.accuracy = static_cast<double>(hits) / pred.size();
    m.macro_f1 = f1_sum / classes.size();
    return m;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct RoomClassifier {
    FeatureExtractor fx;
    Mlp head;  // descriptor -> room logits
    EvalMetrics test;
    nn::TrainMeta meta;
};

inline constexpr double kLabelSmoothing = 0.1;

namespace detail {

inline int max_label(const std::vector<LabeledExample>& exs) {
    int m = -1;
    for (const auto& e : exs) m = std::max(m, e.label);
    return m;
}

}  // namespace detail

/// Joint trunk+head training with label-smoothed cross entropy. The head is
/// kept for diagnostics; navigation uses only the trunk (via the extractor).
inline RoomClassifier train_room_classifier(const SplitDataset& data, const FxConfig& cfg,
                                            int epochs, std::uint64_t seed, int batch = 20,
                                            std::vector<int> head_hidden = {64}) {
    const int classes = std::max(detail::max_label(data.train), detail::max_label(data.test)) + 1;
    if (classes < 2) throw std::invalid_argument("train_room_classifier: need at least 2 rooms");
    if (data.train.empty()) throw std::invalid_argument("train_room_classifier: empty train set");
    Rng rng(seed);
    RoomClassifier rc;
    rc.fx = FeatureExtractor::make(cfg, rng);
    std::vector<int> head_sizes{cfg.descriptor_dim()};
    head_sizes.insert(head_sizes.end(), head_hidden.begin(), head_hidden.end());
    head_sizes.push_back(classes);
    rc.head = Mlp::make(head_sizes, rng);
    rc.meta.seed = seed;
    rc.meta.epochs = epochs;

    nn::Adam opt_trunk(1e-4), opt_head(1e-4);
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(order.size(), start + batch);
            auto tg = rc.fx.trunk.zero_grads();
            auto hg = rc.head.zero_grads();
            double batch_loss = 0.0;
            for (std::size_t k = start; k < stop; ++k) {
                const LabeledExample& ex = data.train[order[k]];
                FxTrace tr;
                extract_descriptor(rc.fx, ex.obs, &tr);
                Mlp::Trace ht;
                const Vec logits = rc.head.forward(tr.desc, &ht);
                Vec dlogits;
                batch_loss += nn::cross_entropy_smoothed(logits, ex.label, kLabelSmoothing, dlogits);
                const Vec ddesc = rc.head.backward(ht, dlogits, hg);
                fx_backward(rc.fx, tr, ddesc, tg);
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (auto& m : tg.dW) for (double& v : m.a) v *= inv;
            for (auto& b : tg.db) for (double& v : b) v *= inv;
            for (auto& m : hg.dW) for (double& v : m.a) v *= inv;
            for (auto& b : hg.db) for (double& v : b) v *= inv;
            if (!std::isfinite(batch_loss)) throw std::runtime_error("train_room_classifier: loss diverged");
            opt_trunk.step(nn::param_refs(rc.fx.trunk, tg));
            opt_head.step(nn::param_refs(rc.head, hg));
            epoch_loss += batch_loss;
        }
        rc.meta.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
    }

    if (!data.test.empty()) {
        std::vector<int> pred, truth;
        for (const auto& ex : data.test) {
            const Descriptor d = extract_descriptor(rc.fx, ex.obs);
            const Vec logits = rc.head.forward(d.values);
            pred.push_back(static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin()));
            truth.push_back(ex.label);
        }
        rc.test = classification_metrics(pred, truth);
    }
    return rc;
}

struct PassageDetector {
    FeatureExtractor fx;
    Mlp head;  // descriptor -> single logit
    bool trunk_frozen = false;
    EvalMetrics test;
    nn::TrainMeta meta;
};

enum class TrunkMode { Fresh, FrozenRoomTrunk };

/// BCE epochs in place on an existing detector (respects trunk_frozen),
/// appending per-epoch mean losses to the detector's curve. Shared by initial
/// training and real-domain finetuning.
inline void passage_training_epochs(PassageDetector& pd, const std::vector<LabeledExample>& train,
                                    int epochs, int batch, Rng& rng) {
    if (train.empty()) throw std::invalid_argument("passage_training_epochs: empty train set");
    nn::Adam opt_trunk(1e-4), opt_head(1e-4);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(order.size(), start + batch);
            auto tg = pd.fx.trunk.zero_grads();
            auto hg = pd.head.zero_grads();
            double batch_loss = 0.0;
            for (std::size_t k = start; k < stop; ++k) {
                const LabeledExample& ex = train[order[k]];
                FxTrace tr;
                extract_descriptor(pd.fx, ex.obs, &tr);
                Mlp::Trace ht;
                const Vec logit = pd.head.forward(tr.desc, &ht);
                double dlogit;
                batch_loss += nn::bce_logit(logit[0], ex.label, dlogit);
                const Vec ddesc = pd.head.backward(ht, {dlogit}, hg);
                if (!pd.trunk_frozen) fx_backward(pd.fx, tr, ddesc, tg);
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            nn::scale_grads(hg, inv);
            if (!std::isfinite(batch_loss)) throw std::runtime_error("passage training: loss diverged");
            if (!pd.trunk_frozen) {
                nn::scale_grads(tg, inv);
                opt_trunk.step(nn::param_refs(pd.fx.trunk, tg));
            }
            opt_head.step(nn::param_refs(pd.head, hg));
            epoch_loss += batch_loss;
        }
        pd.meta.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
    }
}

/// Binary prediction metrics of a detector on a labeled set.
inline EvalMetrics evaluate_passage_detector(const PassageDetector& pd,
                                             const std::vector<LabeledExample>& test) {
    std::vector<int> pred, truth;
    for (const auto& ex : test) {
        const Descriptor d = extract_descriptor(pd.fx, ex.obs);
        const Vec logit = pd.head.forward(d.values);
        pred.push_back(logit[0] > 0.0 ? 1 : 0);
        truth.push_back(ex.label);
    }
    return classification_metrics(pred, truth);
}

/// BCE training of the passage head, either with a fresh jointly-trained trunk
/// or on top of a frozen room-classifier trunk (the negative-transfer probe).
inline PassageDetector train_passage_detector(const SplitDataset& data, const FxConfig& cfg,
                                              TrunkMode mode, const FeatureExtractor* room_trunk,
                                              int epochs, std::uint64_t seed, int batch = 32,
                                              std::vector<int> head_hidden = {64}) {
    if (data.train.empty()) throw std::invalid_argument("train_passage_detector: empty train set");
    Rng rng(seed);
    PassageDetector pd;
    if (mode == TrunkMode::FrozenRoomTrunk) {
        if (!room_trunk) throw std::invalid_argument("train_passage_detector: room trunk required");
        pd.fx = *room_trunk;
        pd.trunk_frozen = true;
    } else {
        pd.fx = FeatureExtractor::make(cfg, rng);
    }
    std::vector<int> head_sizes{pd.fx.cfg.descriptor_dim()};
    head_sizes.insert(head_sizes.end(), head_hidden.begin(), head_hidden.end());
    head_sizes.push_back(1);
    pd.head = Mlp::make(head_sizes, rng);
    pd.meta.seed = seed;
    pd.meta.epochs = epochs;

    passage_training_epochs(pd, data.train, epochs, batch, rng);
    if (!data.test.empty()) pd.test = evaluate_passage_detector(pd, data.test);
    return pd;
}

inline constexpr double kProbClamp = 1e-3;

/// Sigmoid of the head logit on the observation's descriptor, clamped away
/// from 0/1 so downstream -log weights stay finite.
inline double passage_probability(const PassageDetector& pd, const sim::RayObservation& obs) {
    const Descriptor d = extract_descriptor(pd.fx, obs);
    const double logit = pd.head.forward(d.values)[0];
    return std::clamp(nn::sigmoid(logit), kProbClamp, 1.0 - kProbClamp);
}

inline double passage_probability_from_descriptor(const PassageDetector& pd, const Vec& desc) {
    const double logit = pd.head.forward(desc)[0];
    return std::clamp(nn::sigmoid(logit), kProbClamp, 1.0 - kProbClamp);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json obs_to_json(const sim::RayObservation& o) {
    return {{"depths", o.depths}, {"textures", o.textures}, {"domain", sim::domain_name(o.domain)}};
}

inline sim::RayObservation obs_from_json(const nlohmann::json& j) {
    sim::RayObservation o;
    o.depths = j.at("depths").get<std::vector<double>>();
    o.textures = j.at("textures").get<std::vector<double>>();
    o.domain = sim::domain_from_name(j.at("domain").get<std::string>());
    return o;
}

inline nlohmann::json example_to_json(const LabeledExample& e) {
    return {{"obs", obs_to_json(e.obs)},
            {"label", e.label},
            {"pose", {e.pose.x, e.pose.y, e.pose.theta}}};
}

inline LabeledExample example_from_json(const nlohmann::json& j) {
    LabeledExample e;
    e.obs = obs_from_json(j.at("obs"));
    e.label = j.at("label").get<int>();
    const auto& p = j.at("pose");
    e.pose = sim::Pose(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
    return e;
}

/// JSON-lines: one LabeledExample per line.
inline void save_examples(const std::vector<LabeledExample>& exs, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    for (const auto& e : exs) f << example_to_json(e).dump() << "\n";
}

inline std::vector<LabeledExample> load_examples(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::vector<LabeledExample> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        out.push_back(example_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

inline nlohmann::json fx_to_json(const FeatureExtractor& fx, const nn::TrainMeta& meta = {}) {
    nlohmann::json j;
    j["version"] = 1;
    j["arch"] = "feature_extractor";
    j["config"] = {{"rays", fx.cfg.rays},
                   {"window", fx.cfg.window},
                   {"coarse_group", fx.cfg.coarse_group},
                   {"feat", fx.cfg.feat},
                   {"trunk_hidden", fx.cfg.trunk_hidden},
                   {"max_range", fx.cfg.max_range}};
    j["trunk"] = nn::mlp_to_json(fx.trunk, meta);
    return j;
}

inline FeatureExtractor fx_from_json(const nlohmann::json& j, nn::TrainMeta* meta = nullptr) {
    if (j.at("version").get<int>() != 1 || j.at("arch").get<std::string>() != "feature_extractor")
        throw std::runtime_error("weights file: not a v1 feature extractor");
    FeatureExtractor fx;
    const auto& c = j.at("config");
    fx.cfg.rays = c.at("rays").get<int>();
    fx.cfg.window = c.at("window").get<int>();
    fx.cfg.coarse_group = c.at("coarse_group").get<int>();
    fx.cfg.feat = c.at("feat").get<int>();
    fx.cfg.trunk_hidden = c.at("trunk_hidden").get<std::vector<int>>();
    fx.cfg.max_range = c.at("max_range").get<double>();
    fx.cfg.validate();
    fx.trunk = nn::mlp_from_json(j.at("trunk"), meta);
    return fx;
}

inline nlohmann::json pd_to_json(const PassageDetector& pd) {
    nlohmann::json j;
    j["version"] = 1;
    j["arch"] = "passage_detector";
    j["fx"] = fx_to_json(pd.fx, pd.meta);
    j["head"] = nn::mlp_to_json(pd.head);
    j["trunk_frozen"] = pd.trunk_frozen;
    return j;
}

inline PassageDetector pd_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != 1 || j.at("arch").get<std::string>() != "passage_detector")
        throw std::runtime_error("weights file: not a v1 passage detector");
    PassageDetector pd;
    pd.fx = fx_from_json(j.at("fx"), &pd.meta);
    pd.head = nn::mlp_from_json(j.at("head"));
    pd.trunk_frozen = j.at("trunk_frozen").get<bool>();
    return pd;
}

inline nlohmann::json rc_to_json(const RoomClassifier& rc) {
    nlohmann::json j;
    j["version"] = 1;
    j["arch"] = "room_classifier";
    j["fx"] = fx_to_json(rc.fx, rc.meta);
    j["head"] = nn::mlp_to_json(rc.head);
    j["test"] = {{"accuracy", rc.test.accuracy}, {"macro_f1", rc.test.macro_f1}};
    return j;
}

inline RoomClassifier rc_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != 1 || j.at("arch").get<std::string>() != "room_classifier")
        throw std::runtime_error("weights file: not a v1 room classifier");
    RoomClassifier rc;
    rc.fx = fx_from_json(j.at("fx"), &rc.meta);
    rc.head = nn::mlp_from_json(j.at("head"));
    rc.test.accuracy = j.at("test").at("accuracy").get<double>();
    rc.test.macro_f1 = j.at("test").at("macro_f1").get<double>();
    return rc;
}

}  // namespace topnav::percep
