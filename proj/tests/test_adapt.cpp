// Adversarial feature alignment and real-domain passage finetuning: loss
// gradients against finite differences, equilibrium on indistinguishable
// domains, lenient-label dataset construction, and the A/B/C/D grid.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>

#include "topnav/adaptation.hpp"

#include "helpers.hpp"

using namespace topnav;

namespace {

/// Reduced extractor so finite differences stay fast: 16 rays in 4-ray
/// windows, 4 fine + 1 coarse features of width 4 -> 20-dim descriptors.
percep::FxConfig small_cfg() {
    percep::FxConfig cfg;
    cfg.rays = 16;
    cfg.window = 4;
    cfg.coarse_group = 4;
    cfg.feat = 4;
    cfg.trunk_hidden = {8};
    return cfg;
}

sim::RayObservation random_obs(Rng& rng, int rays) {
    sim::RayObservation o;
    o.domain = sim::Domain::SIM;
    for (int r = 0; r < rays; ++r) {
        o.depths.push_back(rng.uniform(0.2, 5.0));
        o.textures.push_back(rng.uniform01());
    }
    return o;
}

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

void append_refs(std::vector<std::pair<nn::Vec*, const nn::Vec*>> probe,
                 std::vector<std::pair<nn::Vec*, const nn::Vec*>> actual,
                 std::vector<nn::Vec*>& params, std::vector<const nn::Vec*>& grads) {
    for (std::size_t i = 0; i < probe.size(); ++i) {
        params.push_back(probe[i].first);
        grads.push_back(actual[i].second);
    }
}

}  // namespace

TEST_CASE("adversarial loss gradient matches finite differences") {
    Rng rng(31);
    const percep::FxConfig cfg = small_cfg();
    percep::FeatureExtractor fx = percep::FeatureExtractor::make(cfg, rng);
    adapt::Discriminator disc = adapt::Discriminator::make(cfg.descriptor_dim(), rng);

    std::vector<sim::RayObservation> obs;
    for (int i = 0; i < 6; ++i) obs.push_back(random_obs(rng, cfg.rays));
    std::vector<const sim::RayObservation*> batch;
    for (const auto& o : obs) batch.push_back(&o);

    nn::Mlp::Grads tg = fx.trunk.zero_grads();
    const double loss = adapt::adversarial_loss(fx, disc, batch, &tg);
    REQUIRE(std::isfinite(loss));
    REQUIRE(loss > 0.0);  // -log of a sigmoid is positive

    nn::Mlp::Grads probe = fx.trunk.zero_grads();
    std::vector<nn::Vec*> params;
    std::vector<const nn::Vec*> grads;
    append_refs(nn::param_refs(fx.trunk, probe), nn::param_refs(fx.trunk, tg), params, grads);
    const auto rep = testutil::fd_check(
        [&] { return adapt::adversarial_loss(fx, disc, batch, nullptr); }, params, grads, 1);
    INFO("worst rel err " << rep.worst_rel << " over " << rep.checked);
    REQUIRE(rep.checked > 100);
    REQUIRE(rep.worst_rel < 1e-4);

    REQUIRE_THROWS_AS(adapt::adversarial_loss(fx, disc, {}, nullptr), std::invalid_argument);
}

TEST_CASE("discriminator loss gradient matches finite differences") {
    Rng rng(32);
    const percep::FxConfig cfg = small_cfg();
    percep::FeatureExtractor fx_s = percep::FeatureExtractor::make(cfg, rng);
    percep::FeatureExtractor fx_t = percep::FeatureExtractor::make(cfg, rng);  // distinct weights
    adapt::Discriminator disc = adapt::Discriminator::make(cfg.descriptor_dim(), rng);

    std::vector<sim::RayObservation> obs_s, obs_t;
    for (int i = 0; i < 5; ++i) obs_s.push_back(random_obs(rng, cfg.rays));
    for (int i = 0; i < 7; ++i) obs_t.push_back(random_obs(rng, cfg.rays));
    std::vector<const sim::RayObservation*> bs, bt;
    for (const auto& o : obs_s) bs.push_back(&o);
    for (const auto& o : obs_t) bt.push_back(&o);

    nn::Mlp::Grads dg = disc.net.zero_grads();
    const double loss = adapt::discriminator_loss(fx_s, fx_t, disc, bs, bt, &dg);
    REQUIRE(std::isfinite(loss));

    nn::Mlp::Grads probe = disc.net.zero_grads();
    std::vector<nn::Vec*> params;
    std::vector<const nn::Vec*> grads;
    append_refs(nn::param_refs(disc.net, probe), nn::param_refs(disc.net, dg), params, grads);
    const auto rep = testutil::fd_check_robust(
        [&] { return adapt::discriminator_loss(fx_s, fx_t, disc, bs, bt, nullptr); }, params,
        grads, 41);
    INFO("worst rel err " << rep.worst_rel << " over " << rep.checked);
    REQUIRE(rep.checked > 100);
    REQUIRE(rep.worst_rel < 1e-4);

    REQUIRE_THROWS_AS(adapt::discriminator_loss(fx_s, fx_t, disc, {}, bt, nullptr),
                      std::invalid_argument);
}

TEST_CASE("indistinguishable domains settle near chance discriminator accuracy") {
    Rng rng(5);
    const percep::FxConfig cfg = small_cfg();
    percep::FeatureExtractor fx_s = percep::FeatureExtractor::make(cfg, rng);

    // two image decks drawn from the exact same distribution: SIM renders at
    // random free poses of one scene
    sim::Scene s = box_scene(50, 30, "arena");
    sim::SensorParams sensor;
    sensor.rays = cfg.rays;
    const sim::DomainParams dom = sim::DomainParams::sim();
    const auto draw_deck = [&](std::uint64_t seed, int n) {
        Rng drng(seed);
        std::vector<sim::RayObservation> deck;
        for (int i = 0; i < n; ++i) {
            const Vec2 p = sim::sample_free_position(s, drng, 0.25);
            const sim::Pose pose(p.x, p.y, drng.uniform(-kPi, kPi));
            deck.push_back(sim::observe(s, pose, sensor, dom, drng));
        }
        return deck;
    };
    const std::vector<sim::RayObservation> deck_a = draw_deck(881, 160);
    const std::vector<sim::RayObservation> deck_b = draw_deck(882, 160);

    adapt::AdaptConfig acfg;
    acfg.epochs = 40;
    acfg.batch = 40;
    acfg.pool_size = 120;
    acfg.resample_interval = 10;
    acfg.probe_size = 40;
    acfg.seed = 99;

    const std::uint64_t before = nn::param_hash(fx_s.trunk);
    const adapt::AdaptResult res = adapt::adapt_extractor(fx_s, deck_a, deck_b, acfg);

    // the source extractor is frozen throughout
    REQUIRE(res.source_hash_before == before);
    REQUIRE(res.source_hash_after == before);
    REQUIRE(nn::param_hash(fx_s.trunk) == before);
    // the target extractor actually trained
    REQUIRE(nn::param_hash(res.fx_t.trunk) != before);

    REQUIRE(res.diag.disc_accuracy.size() == static_cast<std::size_t>(acfg.epochs));
    REQUIRE(res.diag.mean_desc_distance.size() == static_cast<std::size_t>(acfg.epochs));
    REQUIRE(res.diag.dis_loss.size() == static_cast<std::size_t>(acfg.epochs));
    for (double a : res.diag.disc_accuracy) {
        REQUIRE(a >= 0.0);
        REQUIRE(a <= 1.0);
    }
    const double final_acc = res.diag.disc_accuracy.back();
    INFO("final probe accuracy " << final_acc);
    REQUIRE(final_acc >= 0.4);
    REQUIRE(final_acc <= 0.6);

    // adapted extractor still emits unit-norm descriptors
    for (int i = 0; i < 5; ++i) {
        const percep::Descriptor d = percep::extract_descriptor(res.fx_t, deck_b[i]);
        double n2 = 0.0;
        for (double v : d.values) n2 += v * v;
        REQUIRE(std::sqrt(n2) == Catch::Approx(1.0).margin(1e-6));
    }

    // fully deterministic given the config seed
    const adapt::AdaptResult res2 = adapt::adapt_extractor(fx_s, deck_a, deck_b, acfg);
    REQUIRE(nn::param_hash(res2.fx_t.trunk) == nn::param_hash(res.fx_t.trunk));
    REQUIRE(res2.diag.disc_accuracy == res.diag.disc_accuracy);
    REQUIRE(res2.diag.mean_desc_distance == res.diag.mean_desc_distance);

    // diagnostics CSV: header plus one row per epoch
    const std::string path = "adapt_diag.csv";
    adapt::save_diagnostics_csv(res.diag, path);
    std::ifstream f(path);
    REQUIRE(f.good());
    std::string line;
    REQUIRE(std::getline(f, line));
    REQUIRE(line == "epoch,disc_accuracy,mean_desc_distance,dis_loss,adv_loss");
    int rows = 0;
    while (std::getline(f, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == acfg.epochs);
    std::remove(path.c_str());

    adapt::AdaptConfig bad = acfg;
    bad.epochs = 0;
    REQUIRE_THROWS_AS(adapt::adapt_extractor(fx_s, deck_a, deck_b, bad), std::invalid_argument);
    REQUIRE_THROWS_AS(adapt::adapt_extractor(fx_s, {}, deck_b, acfg), std::invalid_argument);
}

TEST_CASE("real collection: counts, headings, and the lenient frontal rule") {
    sim::Scene s = box_scene(100, 40, "slab");  // 10 m x 4 m interior

    SECTION("20 positions yield 360 examples at 20-degree headings") {
        std::vector<Vec2> pos;
        for (int i = 0; i < 20; ++i) pos.push_back({1.5 + 0.35 * i, 2.0});
        const adapt::RealCollection col = adapt::build_real_collection(s, pos, 1.0, 13);
        REQUIRE(col.per_position.size() == 20);
        REQUIRE(col.flatten().size() == 360);
        for (const auto& group : col.per_position) {
            REQUIRE(group.size() == 18);
            for (int h = 0; h < 18; ++h) {
                REQUIRE(group[h].pose.theta ==
                        Catch::Approx(wrap_angle(2.0 * kPi * h / 18.0)).margin(1e-12));
                REQUIRE(group[h].obs.domain == sim::Domain::REAL);
                REQUIRE(group[h].obs.depths.size() == 64);
            }
        }
        const auto obs = col.observations();
        REQUIRE(obs.size() == 20);
        REQUIRE(obs[0].size() == 18);
    }

    SECTION("open center position: every heading is a passage") {
        const adapt::RealCollection col = adapt::build_real_collection(s, {{5.0, 2.0}}, 1.0, 14);
        for (const auto& ex : col.per_position[0]) REQUIRE(ex.label == 1);
    }

    SECTION("wall 0.3 m ahead blocks exactly the three frontal headings") {
        // east wall face at x = 9.9; radius-1.0 segments from (9.6, 2.0) are
        // blocked for |bearing| < acos(0.3) ~ 72.5 deg, i.e. headings
        // 0,+-20,+-40,+-60. The +-40 deg lenient window clears every heading
        // that can see +-80 deg, leaving labels 0 only at -20, 0, +20.
        const adapt::RealCollection col = adapt::build_real_collection(s, {{9.6, 2.0}}, 1.0, 15);
        const auto& group = col.per_position[0];
        for (int h = 0; h < 18; ++h) {
            const bool frontal = (h == 0 || h == 1 || h == 17);
            REQUIRE(group[h].label == (frontal ? 0 : 1));
        }
    }

    SECTION("position inside a wall is rejected") {
        REQUIRE_THROWS_AS(adapt::build_real_collection(s, {{0.05, 2.0}}, 1.0, 16),
                          std::invalid_argument);
    }

    SECTION("70/30 split keeps each position's examples together") {
        std::vector<Vec2> pos;
        for (int i = 0; i < 20; ++i) pos.push_back({1.5 + 0.35 * i, 2.0});
        const adapt::RealCollection col = adapt::build_real_collection(s, pos, 1.0, 13);
        const percep::SplitDataset ds = adapt::split_collection(col, 77);
        REQUIRE(ds.train.size() == 14 * 18);
        REQUIRE(ds.test.size() == 6 * 18);
        std::set<std::pair<double, double>> train_pos, test_pos;
        for (const auto& ex : ds.train) train_pos.insert({ex.pose.x, ex.pose.y});
        for (const auto& ex : ds.test) test_pos.insert({ex.pose.x, ex.pose.y});
        REQUIRE(train_pos.size() == 14);
        REQUIRE(test_pos.size() == 6);
        for (const auto& p : test_pos) REQUIRE(train_pos.count(p) == 0);
    }
}

TEST_CASE("finetune grid: B >= A and D >= C on a smoke dataset") {
    // two rooms joined by a door; positions hug walls so both labels occur
    sim::Scene s = box_scene(60, 40, "tworoom");
    fill_rect(s, 29, 1, 30, 38);
    for (int y = 17; y <= 22; ++y) s.occ[s.idx(29, y)] = s.occ[s.idx(30, y)] = 0;

    std::vector<Vec2> pos;
    for (double x : {0.5, 1.5, 2.4, 3.5, 4.5, 5.4})
        for (double y : {0.5, 2.0, 3.4}) pos.push_back({x, y});
    REQUIRE(pos.size() == 18);

    const adapt::RealCollection real_col = adapt::build_real_collection(s, pos, 1.2, 21);
    const percep::SplitDataset real_ds = adapt::split_collection(real_col, 22);

    // both labels present in the held-out split
    int ones = 0;
    for (const auto& ex : real_ds.test) ones += ex.label;
    REQUIRE(ones > 0);
    REQUIRE(ones < static_cast<int>(real_ds.test.size()));

    // sim-domain detector for the pretrained configurations: same scene and
    // positions rendered without the real-domain distortions
    const adapt::RealCollection sim_col =
        adapt::build_real_collection(s, pos, 1.2, 23, {}, sim::DomainParams::sim());
    percep::SplitDataset sim_ds;
    sim_ds.train = sim_col.flatten();
    const percep::FxConfig cfg;
    const percep::PassageDetector sim_pd =
        percep::train_passage_detector(sim_ds, cfg, percep::TrunkMode::Fresh, nullptr, 20, 24);

    const adapt::FinetuneOutcome A =
        adapt::finetune_passage(real_ds, adapt::FinetuneSetup::A, nullptr, cfg, 101);
    const adapt::FinetuneOutcome B =
        adapt::finetune_passage(real_ds, adapt::FinetuneSetup::B, nullptr, cfg, 101);
    const adapt::FinetuneOutcome C =
        adapt::finetune_passage(real_ds, adapt::FinetuneSetup::C, &sim_pd, cfg, 101);
    const adapt::FinetuneOutcome D =
        adapt::finetune_passage(real_ds, adapt::FinetuneSetup::D, &sim_pd, cfg, 101);
    INFO("A " << A.accuracy << "  B " << B.accuracy << "  C " << C.accuracy << "  D "
              << D.accuracy);

    for (const adapt::FinetuneOutcome* o : {&A, &B, &C, &D}) {
        REQUIRE(o->tn + o->fp + o->fn + o->tp == static_cast<int>(real_ds.test.size()));
        REQUIRE(o->accuracy == Catch::Approx(static_cast<double>(o->tn + o->tp) /
                                             static_cast<double>(real_ds.test.size())));
        REQUIRE(o->f1 >= 0.0);
        REQUIRE(o->f1 <= 1.0);
    }
    REQUIRE(B.accuracy >= A.accuracy);
    REQUIRE(D.accuracy >= C.accuracy);
    REQUIRE(D.accuracy > 0.7);

    // finetuning must actually change the pretrained weights
    REQUIRE(nn::param_hash(D.pd.head) != nn::param_hash(sim_pd.head));
    REQUIRE(nn::param_hash(C.pd.head) == nn::param_hash(sim_pd.head));

    REQUIRE_THROWS_AS(adapt::finetune_passage(real_ds, adapt::FinetuneSetup::C, nullptr, cfg, 7),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(adapt::setup_from_name("E"), std::invalid_argument);
    REQUIRE(adapt::setup_from_name("D") == adapt::FinetuneSetup::D);
    REQUIRE(std::string(adapt::setup_name(adapt::FinetuneSetup::B)) == "B");
}
