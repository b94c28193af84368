#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "topnav/geometry.hpp"
#include "topnav/nn.hpp"
#include "topnav/perception.hpp"
#include "topnav/rng.hpp"
#include "topnav/scene.hpp"
#include "topnav/sim.hpp"

namespace topnav::adapt {

// --- adversarial feature alignment -------------------------------------------

struct Discriminator {
    nn::Mlp net;  // descriptor -> one logit; sigmoid > 0.5 reads "source"

    static Discriminator make(int in_dim, Rng& rng) {
        Discriminator d;
        d.net = nn::Mlp::make({in_dim, 64, 64, 1}, rng);
        return d;
    }
};

struct AdaptConfig {
    int epochs = 200;
    int batch = 50;
    int resample_interval = 20;  // redraw the working image pools every N epochs
    int pool_size = 250;         // images drawn per domain at each resample
    int k_disc = 1;              // discriminator steps per extractor step
    int probe_size = 50;         // frozen diagnostic batch per domain
    double lr = 1e-4;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1 || batch < 1 || resample_interval < 1 || pool_size < 1 || k_disc < 1 ||
            probe_size < 1)
            throw std::invalid_argument("AdaptConfig: all counts must be positive");
    }
};

struct AdaptDiagnostics {
    // one entry per epoch, measured on the frozen probe batches
    std::vector<double> disc_accuracy;       // source->1 / target->0 classification rate
    std::vector<double> mean_desc_distance;  // || mean f_s(sim probe) - mean f_t(real probe) ||
    std::vector<double> dis_loss;            // epoch-mean discriminator loss
    std::vector<double> adv_loss;            // epoch-mean extractor (adversarial) loss
};

struct AdaptResult {
    percep::FeatureExtractor fx_t;
    Discriminator disc;
    AdaptDiagnostics diag;
    std::uint64_t source_hash_before = 0;  // f_s trunk hash at entry == at exit
    std::uint64_t source_hash_after = 0;
};

/// Extractor objective on a target batch (Eq. (3), non-saturating reading):
/// mean of -log D(f_t(x_t)). Gradients (if requested) flow into the f_t trunk
/// only; the discriminator is frozen here.
inline double adversarial_loss(const percep::FeatureExtractor& fx_t, const Discriminator& disc,
                               const std::vector<const sim::RayObservation*>& target_batch,
                               nn::Mlp::Grads* trunk_g) {
    if (target_batch.empty()) throw std::invalid_argument("adversarial_loss: empty batch");
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(target_batch.size());
    for (const sim::RayObservation* obs : target_batch) {
        percep::FxTrace tr;
        const percep::Descriptor d =
            percep::extract_descriptor(fx_t, *obs, trunk_g ? &tr : nullptr);
        nn::Mlp::Trace dt;
        const nn::Vec logit = disc.net.forward(d.values, trunk_g ? &dt : nullptr);
        double dlogit;
        loss += nn::bce_logit(logit[0], 1, dlogit);
        if (trunk_g) {
            nn::Mlp::Grads d_scratch = disc.net.zero_grads();
            const nn::Vec ddesc = disc.net.backward(dt, {dlogit * inv}, d_scratch);
            percep::fx_backward(fx_t, tr, ddesc, *trunk_g);
        }
    }
    loss *= inv;
    if (!std::isfinite(loss)) throw std::runtime_error("adversarial_loss: non-finite loss");
    return loss;
}

/// Discriminator objective (Eq. (4)):
/// mean_s -log D(f_s(x_s)) + mean_t -log(1 - D(f_t(x_t))).
/// Gradients (if requested) flow into the discriminator only.
inline double discriminator_loss(const percep::FeatureExtractor& fx_s,
                                 const percep::FeatureExtractor& fx_t, const Discriminator& disc,
                                 const std::vector<const sim::RayObservation*>& source_batch,
                                 const std::vector<const sim::RayObservation*>& target_batch,
                                 nn::Mlp::Grads* d_g) {
    if (source_batch.empty() || target_batch.empty())
        throw std::invalid_argument("discriminator_loss: empty batch");
    double loss = 0.0;
    const auto run_side = [&](const percep::FeatureExtractor& fx,
                              const std::vector<const sim::RayObservation*>& batch, int label) {
        const double inv = 1.0 / static_cast<double>(batch.size());
        double side = 0.0;
        for (const sim::RayObservation* obs : batch) {
            const percep::Descriptor d = percep::extract_descriptor(fx, *obs);
            nn::Mlp::Trace dt;
            const nn::Vec logit = disc.net.forward(d.values, d_g ? &dt : nullptr);
            double dlogit;
            side += nn::bce_logit(logit[0], label, dlogit);
            if (d_g) disc.net.backward(dt, {dlogit * inv}, *d_g);
        }
        return side * inv;
    };
    loss += run_side(fx_s, source_batch, 1);
    loss += run_side(fx_t, target_batch, 0);
    if (!std::isfinite(loss)) throw std::runtime_error("discriminator_loss: non-finite loss");
    return loss;
}

namespace detail {

inline std::vector<const sim::RayObservation*> gather(const std::vector<sim::RayObservation>& all,
                                                      const std::vector<int>& pool,
                                                      std::size_t start, std::size_t count) {
    std::vector<const sim::RayObservation*> out;
    for (std::size_t k = 0; k < count; ++k) out.push_back(&all[pool[(start + k) % pool.size()]]);
    return out;
}

inline nn::Vec mean_descriptor(const percep::FeatureExtractor& fx,
                               const std::vector<const sim::RayObservation*>& batch) {
    nn::Vec mean(fx.cfg.descriptor_dim(), 0.0);
    for (const sim::RayObservation* obs : batch) {
        const percep::Descriptor d = percep::extract_descriptor(fx, *obs);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += d.values[i];
    }
    for (double& v : mean) v /= static_cast<double>(batch.size());
    return mean;
}

}  // namespace detail

/// Adversarial alignment of a target-domain extractor against the frozen
/// source extractor: alternating discriminator / extractor steps, image pools
/// redrawn every resample_interval epochs, per-epoch diagnostics on a frozen
/// probe batch.
inline AdaptResult adapt_extractor(const percep::FeatureExtractor& fx_s,
                                   const std::vector<sim::RayObservation>& sim_obs,
                                   const std::vector<sim::RayObservation>& real_obs,
                                   const AdaptConfig& cfg) {
    cfg.validate();
    if (sim_obs.empty() || real_obs.empty())
        throw std::invalid_argument("adapt_extractor: both image sets must be non-empty");
    Rng rng(cfg.seed);
    AdaptResult res;
    res.source_hash_before = nn::param_hash(fx_s.trunk);
    res.fx_t = fx_s;  // target extractor initialized with the source weights
    res.disc = Discriminator::make(fx_s.cfg.descriptor_dim(), rng);

    // frozen probe batches, drawn once
    const auto draw = [&rng](std::size_t n, std::size_t want) {
        std::vector<int> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
        rng.shuffle(idx);
        idx.resize(std::min(want, n));
        return idx;
    };
    const std::vector<int> probe_s = draw(sim_obs.size(), cfg.probe_size);
    const std::vector<int> probe_t = draw(real_obs.size(), cfg.probe_size);
    const auto probe_batch_s = detail::gather(sim_obs, probe_s, 0, probe_s.size());
    const auto probe_batch_t = detail::gather(real_obs, probe_t, 0, probe_t.size());

    nn::Adam opt_d(cfg.lr), opt_t(cfg.lr);
    std::vector<int> pool_s, pool_t;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (epoch % cfg.resample_interval == 0) {
            pool_s = draw(sim_obs.size(), cfg.pool_size);
            pool_t = draw(real_obs.size(), cfg.pool_size);
        }
        const std::size_t bsz = std::min<std::size_t>(
            cfg.batch, std::min(pool_s.size(), pool_t.size()));
        const std::size_t n_batches =
            std::max<std::size_t>(1, std::min(pool_s.size(), pool_t.size()) / bsz);
        double e_dis = 0.0, e_adv = 0.0;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const auto bs = detail::gather(sim_obs, pool_s, b * bsz, bsz);
            const auto bt = detail::gather(real_obs, pool_t, b * bsz, bsz);
            for (int k = 0; k < cfg.k_disc; ++k) {
                nn::Mlp::Grads dg = res.disc.net.zero_grads();
                e_dis += discriminator_loss(fx_s, res.fx_t, res.disc, bs, bt, &dg);
                opt_d.step(nn::param_refs(res.disc.net, dg));
            }
            nn::Mlp::Grads tg = res.fx_t.trunk.zero_grads();
            e_adv += adversarial_loss(res.fx_t, res.disc, bt, &tg);
            opt_t.step(nn::param_refs(res.fx_t.trunk, tg));
        }
        res.diag.dis_loss.push_back(e_dis / static_cast<double>(n_batches * cfg.k_disc));
        res.diag.adv_loss.push_back(e_adv / static_cast<double>(n_batches));

        // probe diagnostics
        int correct = 0;
        for (const sim::RayObservation* obs : probe_batch_s) {
            const percep::Descriptor d = percep::extract_descriptor(fx_s, *obs);
            if (res.disc.net.forward(d.values)[0] > 0.0) ++correct;
        }
        for (const sim::RayObservation* obs : probe_batch_t) {
            const percep::Descriptor d = percep::extract_descriptor(res.fx_t, *obs);
            if (res.disc.net.forward(d.values)[0] <= 0.0) ++correct;
        }
        res.diag.disc_accuracy.push_back(
            static_cast<double>(correct) /
            static_cast<double>(probe_batch_s.size() + probe_batch_t.size()));
        const nn::Vec mu_s = detail::mean_descriptor(fx_s, probe_batch_s);
        const nn::Vec mu_t = detail::mean_descriptor(res.fx_t, probe_batch_t);
        double d2 = 0.0;
        for (std::size_t i = 0; i < mu_s.size(); ++i) d2 += (mu_s[i] - mu_t[i]) * (mu_s[i] - mu_t[i]);
        res.diag.mean_desc_distance.push_back(std::sqrt(d2));
    }
    res.source_hash_after = nn::param_hash(fx_s.trunk);
    return res;
}

inline void save_diagnostics_csv(const AdaptDiagnostics& d, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << "epoch,disc_accuracy,mean_desc_distance,dis_loss,adv_loss\n";
    for (std::size_t e = 0; e < d.disc_accuracy.size(); ++e)
        f << e << "," << d.disc_accuracy[e] << "," << d.mean_desc_distance[e] << ","
          << d.dis_loss[e] << "," << d.adv_loss[e] << "\n";
}

// --- real-domain collection with lenient labels -------------------------------

struct RealCollection {
    std::vector<Vec2> positions;
    std::vector<std::vector<percep::LabeledExample>> per_position;  // 18 each

    std::vector<percep::LabeledExample> flatten() const {
        std::vector<percep::LabeledExample> out;
        for (const auto& group : per_position) out.insert(out.end(), group.begin(), group.end());
        return out;
    }
    std::vector<std::vector<sim::RayObservation>> observations() const {
        std::vector<std::vector<sim::RayObservation>> out;
        for (const auto& group : per_position) {
            std::vector<sim::RayObservation> per;
            for (const auto& ex : group) per.push_back(ex.obs);
            out.push_back(std::move(per));
        }
        return out;
    }
};

/// 18 REAL-domain observations per position at 20-degree increments. Lenient
/// passage labels: the heading counts as a passage when ANY bearing within
/// +-40 degrees of it (two heading steps each side) has a clear segment of
/// the given radius.
inline RealCollection build_real_collection(const sim::Scene& scene,
                                            const std::vector<Vec2>& positions, double radius,
                                            std::uint64_t seed,
                                            const sim::SensorParams& sensor = {},
                                            const sim::DomainParams& dom = sim::DomainParams::real()) {
    RealCollection col;
    col.positions = positions;
    Rng rng(seed);
    const int H = percep::kHeadings;
    for (std::size_t p = 0; p < positions.size(); ++p) {
        const Vec2 pos = positions[p];
        if (scene.occupied_at(pos.x, pos.y))
            throw std::invalid_argument("build_real_collection: position " + std::to_string(p) +
                                        " is not in free space");
        std::vector<int> clear(H, 0);
        for (int h = 0; h < H; ++h) {
            const double ang = 2.0 * kPi * h / H;
            const Vec2 tip{pos.x + radius * std::cos(ang), pos.y + radius * std::sin(ang)};
            clear[h] = sim::segment_clear(scene, pos, tip) ? 1 : 0;
        }
        std::vector<percep::LabeledExample> group;
        for (int h = 0; h < H; ++h) {
            percep::LabeledExample ex;
            const double heading = wrap_angle(2.0 * kPi * h / H);
            ex.pose = sim::Pose(pos.x, pos.y, heading);
            ex.obs = sim::observe(scene, ex.pose, sensor, dom, rng);
            int lenient = 0;
            for (int off = -2; off <= 2; ++off) lenient |= clear[((h + off) % H + H) % H];
            ex.label = lenient;
            group.push_back(std::move(ex));
        }
        col.per_position.push_back(std::move(group));
    }
    return col;
}

/// 70/30 split by position for finetune evaluation.
inline percep::SplitDataset split_collection(const RealCollection& col, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> order(col.per_position.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    const std::size_t n_train = (order.size() * 7 + 9) / 10;
    percep::SplitDataset ds;
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto& dst = i < n_train ? ds.train : ds.test;
        for (const auto& ex : col.per_position[order[i]]) dst.push_back(ex);
    }
    return ds;
}

// --- four-configuration passage finetuning (A/B/C/D) --------------------------

enum class FinetuneSetup { A, B, C, D };

inline FinetuneSetup setup_from_name(const std::string& name) {
    if (name == "A") return FinetuneSetup::A;
    if (name == "B") return FinetuneSetup::B;
    if (name == "C") return FinetuneSetup::C;
    if (name == "D") return FinetuneSetup::D;
    throw std::invalid_argument("finetune setup must be one of A, B, C, D");
}

inline const char* setup_name(FinetuneSetup s) {
    switch (s) {
        case FinetuneSetup::A: return "A";
        case FinetuneSetup::B: return "B";
        case FinetuneSetup::C: return "C";
        case FinetuneSetup::D: return "D";
    }
    return "?";
}

struct FinetuneOutcome {
    percep::PassageDetector pd;
    double accuracy = 0.0, f1 = 0.0;
    int tn = 0, fp = 0, fn = 0, tp = 0;
};

/// A = fresh, no finetune; B = fresh + finetune; C = sim-trained, no finetune;
/// D = sim-trained + finetune. Training: 10 epochs, batch 5, on the real train
/// split; evaluation on the fixed real test split.
inline FinetuneOutcome finetune_passage(const percep::SplitDataset& real_data, FinetuneSetup setup,
                                        const percep::PassageDetector* sim_pd,
                                        const percep::FxConfig& cfg, std::uint64_t seed,
                                        int epochs = 10, int batch = 5) {
    if (real_data.test.empty()) throw std::invalid_argument("finetune_passage: empty test split");
    const bool pretrained = setup == FinetuneSetup::C || setup == FinetuneSetup::D;
    const bool finetuned = setup == FinetuneSetup::B || setup == FinetuneSetup::D;
    if (pretrained && !sim_pd)
        throw std::invalid_argument("finetune_passage: setups C/D need the sim-trained detector");

    Rng rng(seed);
    FinetuneOutcome out;
    if (pretrained) {
        out.pd = *sim_pd;
        out.pd.trunk_frozen = false;  // finetuning updates the whole detector
    } else {
        out.pd.fx = percep::FeatureExtractor::make(cfg, rng);
        out.pd.head = nn::Mlp::make({cfg.descriptor_dim(), 64, 1}, rng);
    }
    out.pd.meta.seed = seed;
    if (finetuned) {
        if (real_data.train.empty()) throw std::invalid_argument("finetune_passage: empty train split");
        percep::passage_training_epochs(out.pd, real_data.train, epochs, batch, rng);
        out.pd.meta.epochs += epochs;
    }

    std::vector<int> pred, truth;
    for (const auto& ex : real_data.test) {
        const percep::Descriptor d = percep::extract_descriptor(out.pd.fx, ex.obs);
        const int p = out.pd.head.forward(d.values)[0] > 0.0 ? 1 : 0;
        pred.push_back(p);
        truth.push_back(ex.label);
        if (ex.label == 1)
            (p == 1 ? out.tp : out.fn) += 1;
        else
            (p == 1 ? out.fp : out.tn) += 1;
    }
    const int n = out.tn + out.fp + out.fn + out.tp;
    out.accuracy = n > 0 ? static_cast<double>(out.tn + out.tp) / n : 0.0;
    const double denom = 2.0 * out.tp + out.fp + out.fn;  // binary F1 of the passage class
    out.f1 = denom > 0.0 ? 2.0 * out.tp / denom : 0.0;
    out.pd.test = percep::classification_metrics(pred, truth);
    return out;
}

}  // namespace topnav::adapt
