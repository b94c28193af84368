// Command-line front end. Each subcommand is a thin wrapper over one library
// operation; the `pipeline` verb chains them all with artifact caching.
// Exit codes: 0 success, 2 config/usage error, 3 stage failure.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <fstream>
#include <string>
#include <vector>

#include "topnav/pipeline.hpp"

namespace {

using namespace topnav;

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

sim::Pose parse_pose(const std::string& s) {
    double x, y, deg = 0.0;
    const int n = std::sscanf(s.c_str(), "%lf,%lf,%lf", &x, &y, &deg);
    require(n >= 2, "pose must look like X,Y or X,Y,DEG: " + s);
    return sim::Pose(x, y, deg2rad(deg));
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream f(path);
    require(static_cast<bool>(f), "cannot open " + path);
    nlohmann::json j;
    f >> j;
    return j;
}

/// Accepts either a bare extractor artifact or a room-classifier artifact
/// (whose trunk doubles as the localization extractor).
percep::FeatureExtractor load_fx_any(const std::string& path) {
    const nlohmann::json j = read_json(path);
    if (j.value("arch", std::string()) == "room_classifier")
        return percep::rc_from_json(j).fx;
    return percep::fx_from_json(j);
}

percep::PassageDetector load_pd_file(const std::string& path) {
    return percep::pd_from_json(read_json(path));
}

pol::LocalPolicy load_policy_file(const std::string& path) {
    return pol::policy_from_json(read_json(path));
}

sim::DomainParams parse_domain(const std::string& name) {
    if (name == "sim") return sim::DomainParams::sim();
    if (name == "real") return sim::DomainParams::real();
    throw std::invalid_argument("--domain must be sim or real");
}

struct Globals {
    std::uint64_t seed = 1;
    int jobs = 1;
    std::string out;
};

// --- scene ------------------------------------------------------------------

int cmd_scene_gen(const std::string& size, int rooms, double clutter, const std::string& name,
                  const Globals& g) {
    require(!g.out.empty(), "scene gen needs --out FILE");
    sim::SceneSpec spec;
    spec.rooms = rooms;
    spec.clutter = clutter;
    spec.name = name;
    require(std::sscanf(size.c_str(), "%dx%d", &spec.width, &spec.height) == 2,
            "--size must look like 64x64");
    const sim::Scene scene = sim::generate_scene(spec, g.seed);
    sim::save_scene(scene, g.out);
    std::printf("scene '%s' %dx%d rooms=%d -> %s\n", scene.name.c_str(), scene.width,
                scene.height, scene.num_rooms(), g.out.c_str());
    return 0;
}

// --- segment ----------------------------------------------------------------

int cmd_segment(const std::string& scene_path, int n_points, int k, const Globals& g) {
    require(!g.out.empty(), "segment needs --out FILE");
    const sim::Scene scene = sim::load_scene(scene_path);
    const seg::SegmentationResult res = seg::segment_scene(scene, n_points, g.seed, k);
    seg::save_gmm(res.model, g.out);
    std::printf("gmm K=%d agreement=%.3f -> %s\n", res.model.K, res.agreement, g.out.c_str());
    return 0;
}

// --- perceive ---------------------------------------------------------------

int cmd_perceive_rooms(const std::vector<std::string>& scene_paths,
                       const std::vector<std::string>& gmm_paths, int positions, int epochs,
                       const Globals& g) {
    require(!g.out.empty(), "perceive rooms needs --out FILE");
    require(scene_paths.size() == gmm_paths.size() && !scene_paths.empty(),
            "need matching --scene/--gmm lists");
    std::vector<sim::Scene> scenes;
    std::vector<seg::GmmModel> gmms;
    for (std::size_t i = 0; i < scene_paths.size(); ++i) {
        scenes.push_back(sim::load_scene(scene_paths[i]));
        gmms.push_back(seg::load_gmm(gmm_paths[i]));
    }
    std::vector<const sim::Scene*> sp;
    std::vector<const seg::GmmModel*> gp;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        sp.push_back(&scenes[i]);
        gp.push_back(&gmms[i]);
    }
    const percep::SplitDataset ds =
        percep::build_room_dataset(sp, gp, positions, Rng(g.seed).fork("rooms").seed());
    const percep::RoomClassifier rc =
        percep::train_room_classifier(ds, {}, epochs, Rng(g.seed).fork("rc").seed());
    std::ofstream f(g.out);
    f << percep::rc_to_json(rc).dump() << "\n";
    std::printf("room classifier: accuracy=%.3f macro_f1=%.3f -> %s\n", rc.test.accuracy,
                rc.test.macro_f1, g.out.c_str());
    return 0;
}

int cmd_perceive_passages(const std::vector<std::string>& scene_paths, int sources, int targets,
                          double radius, int epochs, const std::string& trunk,
                          const std::string& rc_path, const Globals& g) {
    require(!g.out.empty(), "perceive passages needs --out FILE");
    require(!scene_paths.empty(), "need at least one --scene");
    require(trunk == "fresh" || trunk == "room", "--trunk must be fresh or room");
    require(trunk == "fresh" || !rc_path.empty(), "--trunk room needs --rc FILE");
    std::vector<sim::Scene> scenes;
    for (const std::string& p : scene_paths) scenes.push_back(sim::load_scene(p));
    std::vector<const sim::Scene*> sp;
    for (const sim::Scene& s : scenes) sp.push_back(&s);
    const percep::SplitDataset ds = percep::build_passage_dataset(
        sp, sources, targets, radius, Rng(g.seed).fork("passages").seed());
    percep::RoomClassifier rc;
    if (trunk == "room") rc = percep::rc_from_json(read_json(rc_path));
    const percep::PassageDetector pd = percep::train_passage_detector(
        ds, {}, trunk == "fresh" ? percep::TrunkMode::Fresh : percep::TrunkMode::FrozenRoomTrunk,
        trunk == "fresh" ? nullptr : &rc.fx, epochs, Rng(g.seed).fork("pd").seed());
    std::ofstream f(g.out);
    f << percep::pd_to_json(pd).dump() << "\n";
    std::printf("passage detector: accuracy=%.3f -> %s\n", pd.test.accuracy, g.out.c_str());
    return 0;
}

// --- policy -----------------------------------------------------------------

int cmd_policy_collect(const std::string& scene_path, int episodes, const Globals& g) {
    require(!g.out.empty(), "policy collect needs --out FILE");
    const sim::Scene s = sim::load_scene(scene_path);
    Rng rng = Rng(g.seed).fork("expert:" + s.name);
    std::vector<pol::ExpertTrajectory> all;
    for (int e = 0; e < episodes; ++e) {
        const Vec2 a = sim::sample_free_position(s, rng, 0.3);
        Vec2 b = sim::sample_free_position(s, rng, 0.3);
        for (int tries = 0; tries < 50 && (b - a).norm() < 2.0; ++tries)
            b = sim::sample_free_position(s, rng, 0.3);
        try {
            all.push_back(pol::expert_drive(s, sim::Pose(a.x, a.y, rng.uniform(-kPi, kPi)), b,
                                            rng.fork(e).seed()));
        } catch (const std::runtime_error&) {
            // unreachable draw; the episode budget is a cap, not a promise
        }
    }
    require(!all.empty(), "no expert trajectories collected");
    pol::save_trajectories(all, g.out);
    int clean = 0;
    for (const auto& t : all) clean += t.note.empty() ? 1 : 0;
    std::printf("%d trajectories (%d clean) -> %s\n", static_cast<int>(all.size()), clean,
                g.out.c_str());
    return 0;
}

int cmd_policy_train(const std::string& traj_path, const std::string& fx_path,
                     const std::string& pd_path, int epochs, double alpha, double lambda,
                     double lr, const Globals& g) {
    require(!g.out.empty(), "policy train needs --out DIR");
    const auto trajs = pol::load_trajectories(traj_path);
    const percep::FeatureExtractor fx = load_fx_any(fx_path);
    const percep::PassageDetector pd = load_pd_file(pd_path);
    const pol::BcDataset ds = pol::build_bc_dataset(trajs, fx, pd.fx, Rng(g.seed).fork("bc").seed());
    pol::PolicyConfig pc;
    pc.du = 2 * fx.cfg.descriptor_dim();
    pc.alpha = alpha;
    pc.lambda = lambda;
    Rng init = Rng(g.seed).fork("policy_init");
    pol::LocalPolicy policy = pol::LocalPolicy::make(pc, init);
    pol::ForwardModel fm = pol::ForwardModel::make(pc, init);
    const nn::TrainMeta meta = pol::joint_train(policy, fm, ds.train, epochs,
                                                Rng(g.seed).fork("policy_train").seed(), alpha,
                                                lambda, pol::kBcBatch, lr);
    std::filesystem::create_directories(g.out);
    std::ofstream pf(g.out + "/policy.json");
    pf << pol::policy_to_json(policy, meta).dump() << "\n";
    std::ofstream ff(g.out + "/forward_model.json");
    ff << pol::fm_to_json(fm, meta).dump() << "\n";
    std::printf("trained on %d sequences, final loss %.4f -> %s\n",
                static_cast<int>(ds.train.size()),
                meta.loss_curve.empty() ? 0.0 : meta.loss_curve.back(), g.out.c_str());
    return 0;
}

int cmd_policy_rollout(const std::string& scene_path, const std::string& policy_path,
                       const std::string& fx_path, const std::string& pd_path,
                       const std::string& start, int steps, const std::string& domain,
                       const Globals& g) {
    const sim::Scene s = sim::load_scene(scene_path);
    const pol::LocalPolicy policy = load_policy_file(policy_path);
    const percep::FeatureExtractor fx = load_fx_any(fx_path);
    const percep::PassageDetector pd = load_pd_file(pd_path);
    const sim::DomainParams dom = parse_domain(domain);
    sim::Pose pose = parse_pose(start);
    Rng rng(g.seed);
    nn::Vec h_ang(policy.cfg.hidden, 0.0), h_lin(policy.cfg.hidden, 0.0);
    std::ofstream log;
    if (!g.out.empty()) log.open(g.out);
    const double dt = 0.1;
    int contacts = 0;
    for (int t = 0; t < steps; ++t) {
        const sim::RayObservation obs = sim::observe(s, pose, {}, dom, rng);
        const nn::Vec u = pol::embed_observation(fx, pd.fx, obs);
        const pol::PolicyStepOut po = pol::policy_step(policy, u, h_ang, h_lin);
        h_ang = po.h_ang;
        h_lin = po.h_lin;
        sim::VelocityCommand cmd;
        cmd.v = pol::decode_linear(po.cls_lin);
        cmd.w = pol::decode_angular(po.cls_ang);
        const auto [next, contact] = sim::step(s, pose, cmd, dt);
        contacts += contact ? 1 : 0;
        if (log.is_open())
            log << nlohmann::json({{"t", t * dt},
                                   {"pose", {pose.x, pose.y, pose.theta}},
                                   {"v", cmd.v},
                                   {"w", cmd.w},
                                   {"contact", contact}})
                       .dump()
                << "\n";
        pose = next;
    }
    std::printf("rollout %d steps, %d contact steps, final pose (%.2f, %.2f, %.1f deg)\n", steps,
                contacts, pose.x, pose.y, rad2deg(pose.theta));
    return 0;
}

// --- map --------------------------------------------------------------------

int cmd_map_build(const std::string& scene_path, const std::string& gmm_path,
                  const std::string& fx_path, const std::string& pd_path, int min_per_room,
                  double connect_radius, const std::string& domain, const Globals& g) {
    require(!g.out.empty(), "map build needs --out FILE");
    const sim::Scene s = sim::load_scene(scene_path);
    const seg::GmmModel gmm = seg::load_gmm(gmm_path);
    const percep::FeatureExtractor fx = load_fx_any(fx_path);
    const percep::PassageDetector pd = load_pd_file(pd_path);
    const std::vector<Vec2> nodes =
        tmap::sample_node_positions(s, gmm, min_per_room, Rng(g.seed).fork("nodes").seed());
    Rng mrng = Rng(g.seed).fork("obs");
    const tmap::TopoMap m =
        tmap::build_map(s, nodes, fx, pd, parse_domain(domain), mrng, connect_radius);
    tmap::save_map(m, g.out);
    int edges = 0;
    for (const auto& a : m.adj) edges += static_cast<int>(a.size());
    std::printf("map: %d nodes, %d edges -> %s\n", m.size(), edges, g.out.c_str());
    return 0;
}

int cmd_map_from_dataset(const std::string& data_path, const std::string& adjacency_path,
                         const std::string& fx_path, const std::string& pd_path,
                         const std::string& name, const Globals& g) {
    require(!g.out.empty(), "map from-dataset needs --out FILE");
    const adapt::RealCollection col = pipe::collection_from_json(read_json(data_path));
    std::vector<std::vector<sim::RayObservation>> obs(col.per_position.size());
    for (std::size_t i = 0; i < col.per_position.size(); ++i)
        for (const auto& ex : col.per_position[i]) obs[i].push_back(ex.obs);
    std::vector<std::pair<int, int>> adjacency;
    for (const auto& e : read_json(adjacency_path))
        adjacency.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    const percep::FeatureExtractor fx = load_fx_any(fx_path);
    const percep::PassageDetector pd = load_pd_file(pd_path);
    const tmap::TopoMap m = tmap::build_map_from_dataset(col.positions, obs, adjacency, fx, pd, name);
    tmap::save_map(m, g.out);
    std::printf("map: %d nodes from dataset -> %s\n", m.size(), g.out.c_str());
    return 0;
}

// --- nav --------------------------------------------------------------------

int cmd_nav_run(const std::string& scene_path, const std::string& map_path,
                const std::string& models_dir, std::string fx_path, std::string pd_path,
                std::string policy_path, const std::string& start, const std::string& goal,
                const std::string& domain, const Globals& g) {
    if (!models_dir.empty()) {
        if (fx_path.empty()) fx_path = models_dir + "/room_classifier.json";
        if (pd_path.empty()) pd_path = models_dir + "/passage_detector.json";
        if (policy_path.empty()) policy_path = models_dir + "/policy.json";
    }
    require(!fx_path.empty() && !pd_path.empty() && !policy_path.empty(),
            "nav run needs --models DIR or all of --fx/--pd/--policy");
    const sim::Scene s = sim::load_scene(scene_path);
    const tmap::TopoMap m = tmap::load_map(map_path);
    const tmap::MapView view(m);
    const percep::FeatureExtractor fx = load_fx_any(fx_path);
    const percep::PassageDetector pd = load_pd_file(pd_path);
    const pol::LocalPolicy policy = load_policy_file(policy_path);
    nav::NavModels models;
    models.fx_loc = &fx;
    models.pd = &pd;
    models.policy = &policy;
    const sim::Pose start_pose = parse_pose(start);
    const sim::Pose goal_pose = parse_pose(goal);
    const sim::DomainParams dom = parse_domain(domain);
    Rng goal_rng = Rng(g.seed).fork(0xB0A7);
    const sim::RayObservation goal_obs = sim::observe(s, goal_pose, {}, dom, goal_rng);
    const nav::EpisodeOutcome out = nav::run_episode(
        s, view, models, start_pose, goal_obs, {goal_pose.x, goal_pose.y}, {}, dom, g.seed);
    if (!g.out.empty()) {
        std::ofstream f(g.out);
        for (const nav::StepLog& sl : out.log)
            f << nlohmann::json({{"t", sl.t},
                                 {"pose", {sl.pose.x, sl.pose.y, sl.pose.theta}},
                                 {"node", sl.node},
                                 {"plan_next", sl.plan_next},
                                 {"v", sl.v},
                                 {"w", sl.w},
                                 {"contact", sl.contact},
                                 {"similarity", sl.similarity},
                                 {"phase", sl.phase}})
                     .dump()
              << "\n";
    }
    std::printf("%s in %.1f s (%.2f m navigated, %d replans)%s%s\n",
                out.success ? "success" : "failure", out.duration, out.navigated, out.replans,
                out.failure.empty() ? "" : ", reason: ", out.failure.c_str());
    return 0;
}

// --- adapt ------------------------------------------------------------------

int cmd_adapt_run(const std::string& fx_path, const std::string& sim_pool_path,
                  const std::string& collection_path, int epochs, const Globals& g) {
    require(!g.out.empty(), "adapt run needs --out DIR");
    const percep::FeatureExtractor fx_s = load_fx_any(fx_path);
    std::vector<sim::RayObservation> sim_obs, real_obs;
    for (const auto& ex : percep::load_examples(sim_pool_path)) sim_obs.push_back(ex.obs);
    const adapt::RealCollection col = pipe::collection_from_json(read_json(collection_path));
    for (const auto& ex : col.flatten()) real_obs.push_back(ex.obs);
    adapt::AdaptConfig cfg;
    cfg.epochs = epochs;
    cfg.seed = Rng(g.seed).fork("adapt").seed();
    const adapt::AdaptResult res = adapt::adapt_extractor(fx_s, sim_obs, real_obs, cfg);
    std::filesystem::create_directories(g.out);
    nn::TrainMeta meta;
    meta.seed = cfg.seed;
    meta.epochs = cfg.epochs;
    std::ofstream f(g.out + "/extractor_target.json");
    f << percep::fx_to_json(res.fx_t, meta).dump() << "\n";
    adapt::save_diagnostics_csv(res.diag, g.out + "/diagnostics.csv");
    std::printf("adapted extractor -> %s (final probe accuracy %.3f)\n", g.out.c_str(),
                res.diag.disc_accuracy.empty() ? 0.0 : res.diag.disc_accuracy.back());
    return 0;
}

int cmd_adapt_finetune(const std::string& collection_path, const std::string& pd_path,
                       const std::string& setup, int epochs, int batch, const Globals& g) {
    require(!g.out.empty(), "adapt finetune needs --out FILE");
    const adapt::RealCollection col = pipe::collection_from_json(read_json(collection_path));
    const percep::SplitDataset split =
        adapt::split_collection(col, Rng(g.seed).fork("ft_split").seed());
    const percep::PassageDetector sim_pd = load_pd_file(pd_path);
    const adapt::FinetuneOutcome out =
        adapt::finetune_passage(split, adapt::setup_from_name(setup), &sim_pd, sim_pd.fx.cfg,
                                Rng(g.seed).fork("ft").fork(setup).seed(), epochs, batch);
    std::ofstream f(g.out);
    f << percep::pd_to_json(out.pd).dump() << "\n";
    std::printf("setup %s: accuracy=%.3f f1=%.3f -> %s\n", setup.c_str(), out.accuracy, out.f1,
                g.out.c_str());
    return 0;
}

// --- bench ------------------------------------------------------------------

int cmd_bench_run(const std::vector<std::string>& scene_paths,
                  const std::vector<std::string>& gmm_paths,
                  const std::vector<std::string>& map_paths, const std::string& fx_path,
                  const std::string& pd_path, const std::string& policy_path, int episodes,
                  const std::string& domain, const Globals& g) {
    require(!g.out.empty(), "bench run needs --out DIR");
    require(scene_paths.size() == gmm_paths.size() && scene_paths.size() == map_paths.size() &&
                !scene_paths.empty(),
            "need matching --scene/--gmm/--map lists");
    std::vector<sim::Scene> scenes;
    std::vector<seg::GmmModel> gmms;
    std::vector<tmap::TopoMap> maps;
    for (std::size_t i = 0; i < scene_paths.size(); ++i) {
        scenes.push_back(sim::load_scene(scene_paths[i]));
        gmms.push_back(seg::load_gmm(gmm_paths[i]));
        maps.push_back(tmap::load_map(map_paths[i]));
    }
    const percep::FeatureExtractor fx = load_fx_any(fx_path);
    const percep::PassageDetector pd = load_pd_file(pd_path);
    const pol::LocalPolicy policy = load_policy_file(policy_path);
    nav::NavModels models;
    models.fx_loc = &fx;
    models.pd = &pd;
    models.policy = &policy;
    std::vector<eval::BenchScene> bench(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        bench[i].name = scenes[i].name;
        bench[i].scene = &scenes[i];
        bench[i].gmm = &gmms[i];
        bench[i].map = &maps[i];
        bench[i].episodes = episodes;
        bench[i].seed = Rng(g.seed).fork("bench:" + scenes[i].name).seed();
    }
    eval::BenchConfig bc;
    bc.dom = parse_domain(domain);
    bc.jobs = g.jobs;
    const eval::BenchOutput out = eval::run_benchmark(bench, models, bc);
    std::filesystem::create_directories(g.out);
    eval::write_metrics_csv(out.report, g.out + "/metrics.csv");
    eval::write_per_episode_csv(out.rows, g.out + "/per-episode.csv");
    eval::write_report_md(out.report, g.out + "/report.md");
    std::printf("SR=%.3f SPL=%.3f RC=%.3f AADC=%.2f AD=%.1f over %d episodes -> %s\n",
                out.report.sr, out.report.spl, out.report.rc, out.report.aadc, out.report.ad,
                static_cast<int>(out.rows.size()), g.out.c_str());
    return 0;
}

// --- pipeline ---------------------------------------------------------------

int cmd_pipeline_validate(const std::string& config_path) {
    const pipe::PipelineConfig cfg = pipe::load_config(config_path);
    std::printf("%s\n", pipe::config_to_json(cfg).dump(2).c_str());
    return 0;
}

int cmd_pipeline_all(const std::string& config_path, bool seed_set, bool jobs_set,
                     const Globals& g) {
    require(!g.out.empty(), "pipeline all needs --out DIR");
    pipe::PipelineConfig cfg = pipe::load_config(config_path);
    if (seed_set) cfg.seed = g.seed;
    if (jobs_set) cfg.bench_jobs = g.jobs;
    pipe::Pipeline p(cfg, g.out);
    for (const pipe::StageStatus& st : p.run_all()) {
        if (st.skipped)
            std::printf("%-12s skipped (cached)\n", st.name.c_str());
        else
            std::printf("%-12s %.1f s\n", st.name.c_str(), st.seconds);
    }
    std::printf("artifacts in %s\n", g.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Topological visual navigation: train, map, navigate, benchmark"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    auto* seed_opt = app.add_option("--seed", g.seed, "master rng seed (default 1)");
    auto* jobs_opt = app.add_option("--jobs", g.jobs, "worker threads where supported");
    app.add_option("--out", g.out, "output file or directory (verb-specific)");

    // scene gen
    auto* scene = app.add_subcommand("scene", "Scene tools")->fallthrough();
    scene->require_subcommand(1);
    auto* gen = scene->add_subcommand("gen", "Generate a BSP scene")->fallthrough();
    std::string size = "64x64", name = "scene";
    int rooms = 4;
    double clutter = 0.0;
    gen->add_option("--size", size, "WxH in cells");
    gen->add_option("--rooms", rooms, "room count");
    gen->add_option("--clutter", clutter, "clutter density in [0,1]");
    gen->add_option("--name", name, "scene name");

    // segment
    auto* segment = app.add_subcommand("segment", "Fit a room GMM to a scene")->fallthrough();
    std::string seg_scene;
    int seg_points = 300, seg_k = 0;
    segment->add_option("--scene", seg_scene, "scene JSON")->required();
    segment->add_option("--points", seg_points, "training positions");
    segment->add_option("--k", seg_k, "override cluster count (default: room count)");

    // perceive
    auto* perceive = app.add_subcommand("perceive", "Train perception models")->fallthrough();
    perceive->require_subcommand(1);
    auto* prooms = perceive->add_subcommand("rooms", "Train the room classifier")->fallthrough();
    std::vector<std::string> pr_scenes, pr_gmms;
    int pr_positions = 60, pr_epochs = 30;
    prooms->add_option("--scene", pr_scenes, "scene JSON (repeatable)")->required();
    prooms->add_option("--gmm", pr_gmms, "gmm JSON (repeatable, same order)")->required();
    prooms->add_option("--positions", pr_positions, "positions per scene");
    prooms->add_option("--epochs", pr_epochs, "training epochs");
    auto* ppass = perceive->add_subcommand("passages", "Train the passage detector")->fallthrough();
    std::vector<std::string> pp_scenes;
    int pp_sources = 8, pp_targets = 12, pp_epochs = 30;
    double pp_radius = 1.2;
    std::string pp_trunk = "fresh", pp_rc;
    ppass->add_option("--scene", pp_scenes, "scene JSON (repeatable)")->required();
    ppass->add_option("--sources", pp_sources, "source positions per room");
    ppass->add_option("--targets", pp_targets, "probe targets per source");
    ppass->add_option("--radius", pp_radius, "probe radius, meters");
    ppass->add_option("--epochs", pp_epochs, "training epochs");
    ppass->add_option("--trunk", pp_trunk, "fresh | room (frozen room-classifier trunk)");
    ppass->add_option("--rc", pp_rc, "room classifier JSON (for --trunk room)");

    // policy
    auto* policy = app.add_subcommand("policy", "Expert data and local policy")->fallthrough();
    policy->require_subcommand(1);
    auto* pcollect = policy->add_subcommand("collect", "Collect expert trajectories")->fallthrough();
    std::string pc_scene;
    int pc_episodes = 24;
    pcollect->add_option("--scene", pc_scene, "scene JSON")->required();
    pcollect->add_option("--episodes", pc_episodes, "expert episodes to attempt");
    auto* ptrain = policy->add_subcommand("train", "Behavior-clone the local policy")->fallthrough();
    std::string pt_traj, pt_fx, pt_pd;
    int pt_epochs = 20;
    double pt_alpha = 10.0, pt_lambda = 0.1, pt_lr = 1e-4;
    ptrain->add_option("--traj", pt_traj, "trajectories JSONL")->required();
    ptrain->add_option("--fx", pt_fx, "localization extractor or room classifier JSON")->required();
    ptrain->add_option("--pd", pt_pd, "passage detector JSON")->required();
    ptrain->add_option("--epochs", pt_epochs, "training epochs");
    ptrain->add_option("--alpha", pt_alpha, "cross-entropy weight");
    ptrain->add_option("--lambda", pt_lambda, "action-consistency weight");
    ptrain->add_option("--lr", pt_lr, "learning rate");
    auto* proll = policy->add_subcommand("rollout", "Drive the raw policy open-loop")->fallthrough();
    std::string pl_scene, pl_policy, pl_fx, pl_pd, pl_start = "1,1,0", pl_domain = "sim";
    int pl_steps = 50;
    proll->add_option("--scene", pl_scene, "scene JSON")->required();
    proll->add_option("--policy", pl_policy, "policy JSON")->required();
    proll->add_option("--fx", pl_fx, "localization extractor JSON")->required();
    proll->add_option("--pd", pl_pd, "passage detector JSON")->required();
    proll->add_option("--start", pl_start, "start pose X,Y,DEG");
    proll->add_option("--steps", pl_steps, "control steps at 10 Hz");
    proll->add_option("--domain", pl_domain, "sim | real");

    // map
    auto* map = app.add_subcommand("map", "Topological maps")->fallthrough();
    map->require_subcommand(1);
    auto* mbuild = map->add_subcommand("build", "Build a map by sampling a scene")->fallthrough();
    std::string mb_scene, mb_gmm, mb_fx, mb_pd, mb_domain = "sim";
    int mb_min = 2;
    double mb_radius = tmap::kConnectRadius;
    mbuild->add_option("--scene", mb_scene, "scene JSON")->required();
    mbuild->add_option("--gmm", mb_gmm, "gmm JSON")->required();
    mbuild->add_option("--fx", mb_fx, "localization extractor JSON")->required();
    mbuild->add_option("--pd", mb_pd, "passage detector JSON")->required();
    mbuild->add_option("--min-per-room", mb_min, "nodes per room");
    mbuild->add_option("--connect-radius", mb_radius, "edge radius, meters");
    mbuild->add_option("--domain", mb_domain, "sim | real");
    auto* mdata = map->add_subcommand("from-dataset", "Build a map from collected data")->fallthrough();
    std::string md_data, md_adj, md_fx, md_pd, md_name = "real";
    mdata->add_option("--data", md_data, "collection JSON (positions + observations)")->required();
    mdata->add_option("--adjacency", md_adj, "JSON [[i,j],...] node adjacency")->required();
    mdata->add_option("--fx", md_fx, "localization extractor JSON")->required();
    mdata->add_option("--pd", md_pd, "passage detector JSON")->required();
    mdata->add_option("--name", md_name, "map name");

    // nav
    auto* nav_cmd = app.add_subcommand("nav", "Navigation runtime")->fallthrough();
    nav_cmd->require_subcommand(1);
    auto* nrun = nav_cmd->add_subcommand("run", "Run one navigation episode")->fallthrough();
    std::string nr_scene, nr_map, nr_models, nr_fx, nr_pd, nr_policy, nr_start, nr_goal,
        nr_domain = "sim";
    nrun->add_option("--scene", nr_scene, "scene JSON")->required();
    nrun->add_option("--map", nr_map, "map JSON")->required();
    nrun->add_option("--models", nr_models, "directory with model JSONs");
    nrun->add_option("--fx", nr_fx, "localization extractor JSON");
    nrun->add_option("--pd", nr_pd, "passage detector JSON");
    nrun->add_option("--policy", nr_policy, "policy JSON");
    nrun->add_option("--start", nr_start, "start pose X,Y,DEG")->required();
    nrun->add_option("--goal", nr_goal, "goal position X,Y[,DEG]")->required();
    nrun->add_option("--domain", nr_domain, "sim | real");

    // adapt
    auto* adapt_cmd = app.add_subcommand("adapt", "Domain adaptation")->fallthrough();
    adapt_cmd->require_subcommand(1);
    auto* arun = adapt_cmd->add_subcommand("run", "Adversarial feature adaptation")->fallthrough();
    std::string ar_fx, ar_pool, ar_col;
    int ar_epochs = 200;
    arun->add_option("--fx", ar_fx, "source extractor or room classifier JSON")->required();
    arun->add_option("--sim-pool", ar_pool, "sim observations JSONL")->required();
    arun->add_option("--collection", ar_col, "real collection JSON")->required();
    arun->add_option("--epochs", ar_epochs, "adaptation epochs");
    auto* aft = adapt_cmd->add_subcommand("finetune", "Finetune the passage detector")->fallthrough();
    std::string af_col, af_pd, af_setup = "D";
    int af_epochs = 10, af_batch = 5;
    aft->add_option("--collection", af_col, "real collection JSON")->required();
    aft->add_option("--pd", af_pd, "sim-trained passage detector JSON")->required();
    aft->add_option("--setup", af_setup, "A | B | C | D");
    aft->add_option("--epochs", af_epochs, "finetune epochs");
    aft->add_option("--batch", af_batch, "batch size");

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Benchmarks")->fallthrough();
    bench_cmd->require_subcommand(1);
    auto* brun = bench_cmd->add_subcommand("run", "Run the navigation benchmark")->fallthrough();
    std::vector<std::string> br_scenes, br_gmms, br_maps;
    std::string br_fx, br_pd, br_policy, br_domain = "sim";
    int br_episodes = 25;
    brun->add_option("--scene", br_scenes, "scene JSON (repeatable)")->required();
    brun->add_option("--gmm", br_gmms, "gmm JSON (repeatable, same order)")->required();
    brun->add_option("--map", br_maps, "map JSON (repeatable, same order)")->required();
    brun->add_option("--fx", br_fx, "localization extractor JSON")->required();
    brun->add_option("--pd", br_pd, "passage detector JSON")->required();
    brun->add_option("--policy", br_policy, "policy JSON")->required();
    brun->add_option("--episodes", br_episodes, "episodes per scene");
    brun->add_option("--domain", br_domain, "sim | real");

    // pipeline
    auto* pipeline = app.add_subcommand("pipeline", "End-to-end recipes")->fallthrough();
    pipeline->require_subcommand(1);
    auto* pall = pipeline->add_subcommand("all", "Run every stage with caching")->fallthrough();
    std::string cfg_path;
    pall->add_option("--config", cfg_path, "pipeline config JSON")->required();
    auto* pval = pipeline->add_subcommand("validate", "Validate and print a config")->fallthrough();
    std::string val_path;
    pval->add_option("--config", val_path, "pipeline config JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_scene_gen(size, rooms, clutter, name, g);
        if (segment->parsed()) return cmd_segment(seg_scene, seg_points, seg_k, g);
        if (prooms->parsed()) return cmd_perceive_rooms(pr_scenes, pr_gmms, pr_positions, pr_epochs, g);
        if (ppass->parsed())
            return cmd_perceive_passages(pp_scenes, pp_sources, pp_targets, pp_radius, pp_epochs,
                                         pp_trunk, pp_rc, g);
        if (pcollect->parsed()) return cmd_policy_collect(pc_scene, pc_episodes, g);
        if (ptrain->parsed())
            return cmd_policy_train(pt_traj, pt_fx, pt_pd, pt_epochs, pt_alpha, pt_lambda, pt_lr, g);
        if (proll->parsed())
            return cmd_policy_rollout(pl_scene, pl_policy, pl_fx, pl_pd, pl_start, pl_steps,
                                      pl_domain, g);
        if (mbuild->parsed())
            return cmd_map_build(mb_scene, mb_gmm, mb_fx, mb_pd, mb_min, mb_radius, mb_domain, g);
        if (mdata->parsed()) return cmd_map_from_dataset(md_data, md_adj, md_fx, md_pd, md_name, g);
        if (nrun->parsed())
            return cmd_nav_run(nr_scene, nr_map, nr_models, nr_fx, nr_pd, nr_policy, nr_start,
                               nr_goal, nr_domain, g);
        if (arun->parsed()) return cmd_adapt_run(ar_fx, ar_pool, ar_col, ar_epochs, g);
        if (aft->parsed()) return cmd_adapt_finetune(af_col, af_pd, af_setup, af_epochs, af_batch, g);
        if (brun->parsed())
            return cmd_bench_run(br_scenes, br_gmms, br_maps, br_fx, br_pd, br_policy, br_episodes,
                                 br_domain, g);
        if (pall->parsed())
            return cmd_pipeline_all(cfg_path, seed_opt->count() > 0, jobs_opt->count() > 0, g);
        if (pval->parsed()) return cmd_pipeline_validate(val_path);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
