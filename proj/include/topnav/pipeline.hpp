#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "topnav/adaptation.hpp"
#include "topnav/evaluation.hpp"
#include "topnav/gmm.hpp"
#include "topnav/navruntime.hpp"
#include "topnav/perception.hpp"
#include "topnav/policy.hpp"
#include "topnav/rng.hpp"
#include "topnav/scene.hpp"
#include "topnav/sim.hpp"
#include "topnav/topomap.hpp"

namespace topnav::pipe {

// --- configuration ---------------------------------------------------------------

struct ScenePlan {
    std::string name = "scene";
    int rooms = 4;
    int width = 64;
    int height = 48;
    double clutter = 0.0;
    int episodes = 20;  // benchmark episodes on this scene
    bool train = true;  // contributes to training pools
};

/// Fully resolved pipeline configuration. Two named profiles exist:
/// desk_defaults() is sized for minutes on one core; paper_defaults() keeps
/// the source procedure's counts where they are defined (adaptation schedule,
/// finetune schedule, episode counts) and desk-scale stand-ins elsewhere.
struct PipelineConfig {
    int version = 1;
    std::string profile = "desk";
    std::uint64_t seed = 1;
    std::vector<ScenePlan> scenes;

    // segmentation
    int seg_points = 300;

    // perception
    percep::FxConfig fx;
    int room_positions = 60;  // sampled per scene for the room dataset
    int room_epochs = 30;
    int passage_sources = 8;  // per room
    int passage_targets = 12; // probes per source
    double passage_radius = 1.2;
    int passage_epochs = 30;
    std::string passage_trunk = "fresh";  // "fresh" | "room"

    // expert + policy
    int expert_episodes = 24;  // per training scene
    int policy_epochs = 20;
    int policy_hidden = 64;
    std::vector<int> fm_hidden = {128};
    double policy_alpha = 10.0;
    double policy_lambda = 0.1;
    double policy_lr = 1e-4;

    // map
    int map_min_per_room = 2;
    double map_connect_radius = tmap::kConnectRadius;

    // real-domain collection
    int real_positions = 30;  // per training scene

    // adaptation + finetune
    adapt::AdaptConfig adapt;
    int finetune_epochs = 10;
    int finetune_batch = 5;

    // navigation + benchmarking
    nav::NavConfig nav;
    int bench_jobs = 1;

    pol::PolicyConfig policy_config() const {
        pol::PolicyConfig pc;
        pc.du = 2 * fx.descriptor_dim();
        pc.hidden = policy_hidden;
        pc.fm_hidden = fm_hidden;
        pc.alpha = policy_alpha;
        pc.lambda = policy_lambda;
        return pc;
    }

    void validate() const {
        if (version != 1) throw std::invalid_argument("config: version must be 1");
        if (profile != "desk" && profile != "paper")
            throw std::invalid_argument("config: profile must be desk or paper");
        if (scenes.empty()) throw std::invalid_argument("config: scenes must be non-empty");
        for (const ScenePlan& s : scenes) {
            if (s.name.empty()) throw std::invalid_argument("config: scenes[].name empty");
            if (s.rooms < 1) throw std::invalid_argument("config: scenes[].rooms must be >= 1");
            if (s.width < 8 || s.height < 8)
                throw std::invalid_argument("config: scenes[].width/height must be >= 8");
            if (s.clutter < 0.0 || s.clutter > 1.0)
                throw std::invalid_argument("config: scenes[].clutter must be in [0,1]");
            if (s.episodes < 1) throw std::invalid_argument("config: scenes[].episodes must be >= 1");
        }
        bool any_train = false;
        for (const ScenePlan& s : scenes) any_train = any_train || s.train;
        if (!any_train) throw std::invalid_argument("config: at least one scene must train");
        if (seg_points < 10) throw std::invalid_argument("config: segmentation.points must be >= 10");
        fx.validate();
        if (room_positions < 6) throw std::invalid_argument("config: perception.room_positions must be >= 6");
        if (room_epochs < 1) throw std::invalid_argument("config: perception.room_epochs must be >= 1");
        if (passage_sources < 1) throw std::invalid_argument("config: perception.passage_sources must be >= 1");
        if (passage_targets < 1) throw std::invalid_argument("config: perception.passage_targets must be >= 1");
        if (passage_radius <= 0.0) throw std::invalid_argument("config: perception.passage_radius must be > 0");
        if (passage_epochs < 1) throw std::invalid_argument("config: perception.passage_epochs must be >= 1");
        if (passage_trunk != "fresh" && passage_trunk != "room")
            throw std::invalid_argument("config: perception.passage_trunk must be fresh or room");
        if (expert_episodes < 1) throw std::invalid_argument("config: expert.episodes must be >= 1");
        if (policy_epochs < 1) throw std::invalid_argument("config: policy.epochs must be >= 1");
        if (policy_hidden < 1) throw std::invalid_argument("config: policy.hidden must be >= 1");
        if (policy_lr <= 0.0) throw std::invalid_argument("config: policy.lr must be > 0");
        if (policy_alpha < 0.0) throw std::invalid_argument("config: policy.alpha must be >= 0");
        if (policy_lambda < 0.0) throw std::invalid_argument("config: policy.lambda must be >= 0");
        if (map_min_per_room < 1) throw std::invalid_argument("config: map.min_per_room must be >= 1");
        if (map_connect_radius <= 0.0) throw std::invalid_argument("config: map.connect_radius must be > 0");
        if (real_positions < 4) throw std::invalid_argument("config: real.positions must be >= 4");
        adapt.validate();
        if (adapt.lr <= 0.0) throw std::invalid_argument("config: adapt.lr must be > 0");
        if (finetune_epochs < 1) throw std::invalid_argument("config: finetune.epochs must be >= 1");
        if (finetune_batch < 1) throw std::invalid_argument("config: finetune.batch must be >= 1");
        nav.validate();
        if (bench_jobs < 1) throw std::invalid_argument("config: bench.jobs must be >= 1");
    }
};

inline PipelineConfig desk_defaults() {
    PipelineConfig c;
    c.scenes.push_back(ScenePlan{});
    c.scenes.back().name = "main";
    return c;
}

inline PipelineConfig paper_defaults() {
    PipelineConfig c = desk_defaults();
    c.profile = "paper";
    c.adapt.epochs = 200;       // adaptation schedule as published
    c.adapt.pool_size = 250;
    c.adapt.resample_interval = 20;
    c.finetune_epochs = 10;     // finetune schedule as published
    c.finetune_batch = 5;
    for (ScenePlan& s : c.scenes) s.episodes = 25;  // lower end of the published range
    c.room_epochs = 60;
    c.passage_epochs = 60;
    c.policy_epochs = 40;
    c.expert_episodes = 40;
    return c;
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& allowed,
                           const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const std::string& k : allowed) ok = ok || it.key() == k;
        if (!ok)
            throw std::invalid_argument("config: unknown key " +
                                        (where.empty() ? it.key() : where + "." + it.key()));
    }
}

template <typename T>
void take(const nlohmann::json& j, const char* key, T& dst) {
    if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace detail

/// Parse and resolve a config: profile defaults first, explicit keys override,
/// unknown keys and out-of-range values rejected with their field path.
inline PipelineConfig config_from_json(const nlohmann::json& j) {
    using detail::reject_unknown;
    using detail::take;
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    reject_unknown(j, {"version", "profile", "seed", "scenes", "segmentation", "perception",
                       "expert", "policy", "map", "real", "adapt", "finetune", "nav", "bench"},
                   "");

    PipelineConfig c = j.value("profile", std::string("desk")) == std::string("paper")
                           ? paper_defaults()
                           : desk_defaults();
    take(j, "version", c.version);
    take(j, "profile", c.profile);
    take(j, "seed", c.seed);

    if (j.contains("scenes")) {
        c.scenes.clear();
        if (!j.at("scenes").is_array()) throw std::invalid_argument("config: scenes must be an array");
        int idx = 0;
        for (const auto& js : j.at("scenes")) {
            reject_unknown(js, {"name", "rooms", "width", "height", "clutter", "episodes", "train"},
                           "scenes[" + std::to_string(idx) + "]");
            ScenePlan s;
            take(js, "name", s.name);
            take(js, "rooms", s.rooms);
            take(js, "width", s.width);
            take(js, "height", s.height);
            take(js, "clutter", s.clutter);
            take(js, "episodes", s.episodes);
            take(js, "train", s.train);
            c.scenes.push_back(std::move(s));
            ++idx;
        }
    }
    if (c.scenes.empty()) {
        ScenePlan s;
        s.name = "main";
        c.scenes.push_back(s);
    }

    if (j.contains("segmentation")) {
        const auto& js = j.at("segmentation");
        reject_unknown(js, {"points"}, "segmentation");
        take(js, "points", c.seg_points);
    }
    if (j.contains("perception")) {
        const auto& js = j.at("perception");
        reject_unknown(js, {"rays", "window", "coarse_group", "feat", "trunk_hidden", "max_range",
                            "room_positions", "room_epochs", "passage_sources", "passage_targets",
                            "passage_radius", "passage_epochs", "passage_trunk"},
                       "perception");
        take(js, "rays", c.fx.rays);
        take(js, "window", c.fx.window);
        take(js, "coarse_group", c.fx.coarse_group);
        take(js, "feat", c.fx.feat);
        take(js, "trunk_hidden", c.fx.trunk_hidden);
        take(js, "max_range", c.fx.max_range);
        take(js, "room_positions", c.room_positions);
        take(js, "room_epochs", c.room_epochs);
        take(js, "passage_sources", c.passage_sources);
        take(js, "passage_targets", c.passage_targets);
        take(js, "passage_radius", c.passage_radius);
        take(js, "passage_epochs", c.passage_epochs);
        take(js, "passage_trunk", c.passage_trunk);
    }
    if (j.contains("expert")) {
        const auto& js = j.at("expert");
        reject_unknown(js, {"episodes"}, "expert");
        take(js, "episodes", c.expert_episodes);
    }
    if (j.contains("policy")) {
        const auto& js = j.at("policy");
        reject_unknown(js, {"epochs", "hidden", "fm_hidden", "alpha", "lambda", "lr"}, "policy");
        take(js, "epochs", c.policy_epochs);
        take(js, "hidden", c.policy_hidden);
        take(js, "fm_hidden", c.fm_hidden);
        take(js, "alpha", c.policy_alpha);
        take(js, "lambda", c.policy_lambda);
        take(js, "lr", c.policy_lr);
    }
    if (j.contains("map")) {
        const auto& js = j.at("map");
        reject_unknown(js, {"min_per_room", "connect_radius"}, "map");
        take(js, "min_per_room", c.map_min_per_room);
        take(js, "connect_radius", c.map_connect_radius);
    }
    if (j.contains("real")) {
        const auto& js = j.at("real");
        reject_unknown(js, {"positions"}, "real");
        take(js, "positions", c.real_positions);
    }
    if (j.contains("adapt")) {
        const auto& js = j.at("adapt");
        reject_unknown(js, {"epochs", "batch", "resample_interval", "pool_size", "k_disc",
                            "probe_size", "lr"},
                       "adapt");
        take(js, "epochs", c.adapt.epochs);
        take(js, "batch", c.adapt.batch);
        take(js, "resample_interval", c.adapt.resample_interval);
        take(js, "pool_size", c.adapt.pool_size);
        take(js, "k_disc", c.adapt.k_disc);
        take(js, "probe_size", c.adapt.probe_size);
        take(js, "lr", c.adapt.lr);
    }
    if (j.contains("finetune")) {
        const auto& js = j.at("finetune");
        reject_unknown(js, {"epochs", "batch"}, "finetune");
        take(js, "epochs", c.finetune_epochs);
        take(js, "batch", c.finetune_batch);
    }
    if (j.contains("nav")) {
        const auto& js = j.at("nav");
        reject_unknown(js, {"segment_seconds", "segments_per_waypoint", "control_rate_hz",
                            "sweep_increment_deg", "max_episode_seconds", "goal_similarity",
                            "success_radius"},
                       "nav");
        take(js, "segment_seconds", c.nav.segment_seconds);
        take(js, "segments_per_waypoint", c.nav.segments_per_waypoint);
        take(js, "control_rate_hz", c.nav.control_rate_hz);
        if (js.contains("sweep_increment_deg"))
            c.nav.sweep_increment = deg2rad(js.at("sweep_increment_deg").get<double>());
        take(js, "max_episode_seconds", c.nav.max_episode_seconds);
        take(js, "goal_similarity", c.nav.goal_similarity);
        take(js, "success_radius", c.nav.success_radius);
    }
    if (j.contains("bench")) {
        const auto& js = j.at("bench");
        reject_unknown(js, {"jobs"}, "bench");
        take(js, "jobs", c.bench_jobs);
    }
    c.validate();
    return c;
}

/// Emit the fully resolved form; config_from_json(config_to_json(c)) == c.
inline nlohmann::json config_to_json(const PipelineConfig& c) {
    nlohmann::json scenes = nlohmann::json::array();
    for (const ScenePlan& s : c.scenes)
        scenes.push_back({{"name", s.name},
                          {"rooms", s.rooms},
                          {"width", s.width},
                          {"height", s.height},
                          {"clutter", s.clutter},
                          {"episodes", s.episodes},
                          {"train", s.train}});
    return {
        {"version", c.version},
        {"profile", c.profile},
        {"seed", c.seed},
        {"scenes", scenes},
        {"segmentation", {{"points", c.seg_points}}},
        {"perception",
         {{"rays", c.fx.rays},
          {"window", c.fx.window},
          {"coarse_group", c.fx.coarse_group},
          {"feat", c.fx.feat},
          {"trunk_hidden", c.fx.trunk_hidden},
          {"max_range", c.fx.max_range},
          {"room_positions", c.room_positions},
          {"room_epochs", c.room_epochs},
          {"passage_sources", c.passage_sources},
          {"passage_targets", c.passage_targets},
          {"passage_radius", c.passage_radius},
          {"passage_epochs", c.passage_epochs},
          {"passage_trunk", c.passage_trunk}}},
        {"expert", {{"episodes", c.expert_episodes}}},
        {"policy",
         {{"epochs", c.policy_epochs},
          {"hidden", c.policy_hidden},
          {"fm_hidden", c.fm_hidden},
          {"alpha", c.policy_alpha},
          {"lambda", c.policy_lambda},
          {"lr", c.policy_lr}}},
        {"map", {{"min_per_room", c.map_min_per_room}, {"connect_radius", c.map_connect_radius}}},
        {"real", {{"positions", c.real_positions}}},
        {"adapt",
         {{"epochs", c.adapt.epochs},
          {"batch", c.adapt.batch},
          {"resample_interval", c.adapt.resample_interval},
          {"pool_size", c.adapt.pool_size},
          {"k_disc", c.adapt.k_disc},
          {"probe_size", c.adapt.probe_size},
          {"lr", c.adapt.lr}}},
        {"finetune", {{"epochs", c.finetune_epochs}, {"batch", c.finetune_batch}}},
        {"nav",
         {{"segment_seconds", c.nav.segment_seconds},
          {"segments_per_waypoint", c.nav.segments_per_waypoint},
          {"control_rate_hz", c.nav.control_rate_hz},
          {"sweep_increment_deg", rad2deg(c.nav.sweep_increment)},
          {"max_episode_seconds", c.nav.max_episode_seconds},
          {"goal_similarity", c.nav.goal_similarity},
          {"success_radius", c.nav.success_radius}}},
        {"bench", {{"jobs", c.bench_jobs}}},
    };
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config: parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

// --- real-domain collection artifact ----------------------------------------------

inline nlohmann::json collection_to_json(const adapt::RealCollection& col) {
    nlohmann::json positions = nlohmann::json::array();
    for (const Vec2& p : col.positions) positions.push_back({p.x, p.y});
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& group : col.per_position) {
        nlohmann::json g = nlohmann::json::array();
        for (const auto& ex : group) g.push_back(percep::example_to_json(ex));
        groups.push_back(std::move(g));
    }
    return {{"version", 1}, {"positions", positions}, {"per_position", groups}};
}

inline adapt::RealCollection collection_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != 1)
        throw std::runtime_error("collection file: unsupported version");
    adapt::RealCollection col;
    for (const auto& p : j.at("positions"))
        col.positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    for (const auto& g : j.at("per_position")) {
        std::vector<percep::LabeledExample> group;
        for (const auto& e : g) group.push_back(percep::example_from_json(e));
        col.per_position.push_back(std::move(group));
    }
    if (col.positions.size() != col.per_position.size())
        throw std::runtime_error("collection file: positions/groups mismatch");
    return col;
}

// --- stage framework ----------------------------------------------------------------

struct StageStatus {
    std::string name;
    bool skipped = false;
    double seconds = 0.0;
    std::vector<std::string> outputs;
};

/// Orchestrates the full recipe over an artifact directory. Every stage is
/// keyed by a content hash of its config slice plus its input artifacts;
/// reruns skip stages whose key matches the manifest and whose outputs still
/// exist, so deleting an artifact reruns exactly the stages that cannot prove
/// themselves current.
class Pipeline {
  public:
    Pipeline(PipelineConfig cfg, std::filesystem::path out_dir)
        : cfg_(std::move(cfg)), out_(std::move(out_dir)) {
        cfg_.validate();
        namespace fs = std::filesystem;
        fs::create_directories(out_);
        fs::create_directories(out_ / "logs");
        manifest_path_ = out_ / "manifest.json";
        if (fs::exists(manifest_path_)) {
            std::ifstream f(manifest_path_);
            try {
                f >> manifest_;
            } catch (const nlohmann::json::exception&) {
                manifest_ = nlohmann::json::object();  // corrupt manifest: rebuild everything
            }
        }
        if (!manifest_.is_object()) manifest_ = nlohmann::json::object();
    }

    const PipelineConfig& config() const { return cfg_; }
    const std::filesystem::path& out_dir() const { return out_; }

    std::vector<StageStatus> run_all() {
        std::vector<StageStatus> log;
        log.push_back(stage_scenes());
        log.push_back(stage_segment());
        log.push_back(stage_perception());
        log.push_back(stage_expert());
        log.push_back(stage_policy());
        log.push_back(stage_maps("map_sim"));
        log.push_back(stage_bench("bench_sim"));
        log.push_back(stage_real_collect());
        log.push_back(stage_adapt());
        log.push_back(stage_finetune());
        log.push_back(stage_maps("map_real"));
        log.push_back(stage_bench("bench_real"));
        return log;
    }

    // --- paths (public so tests and the CLI can locate artifacts) -------------

    std::string scene_path(const std::string& name) const { return p("scenes/" + name + ".json"); }
    std::string gmm_path(const std::string& name) const { return p("segmentation/" + name + ".json"); }
    std::string rc_path() const { return p("perception/room_classifier.json"); }
    std::string pd_path() const { return p("perception/passage_detector.json"); }
    std::string trajectories_path() const { return p("expert/trajectories.jsonl"); }
    std::string policy_path() const { return p("policy/policy.json"); }
    std::string fm_path() const { return p("policy/forward_model.json"); }
    std::string map_path(const std::string& stage, const std::string& name) const {
        return p(stage + "/" + name + ".json");
    }
    std::string collection_path() const { return p("real/collection.json"); }
    std::string sim_pool_path() const { return p("real/sim_pool.jsonl"); }
    std::string fx_t_path() const { return p("adapt/extractor_target.json"); }
    std::string adapt_diag_path() const { return p("adapt/diagnostics.csv"); }
    std::string finetune_path(const std::string& setup) const {
        return p("finetune/setup_" + setup + ".json");
    }
    std::string finetune_summary_path() const { return p("finetune/summary.csv"); }
    std::string bench_dir(const std::string& stage) const { return p(stage); }

  private:
    std::string p(const std::string& rel) const { return (out_ / rel).string(); }

    static std::uint64_t file_hash(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("missing input artifact: " + path);
        std::uint64_t h = 0xCBF29CE484222325ULL;
        char buf[1 << 14];
        while (f.read(buf, sizeof buf) || f.gcount() > 0) {
            const std::streamsize n = f.gcount();
            for (std::streamsize i = 0; i < n; ++i) {
                h ^= static_cast<unsigned char>(buf[i]);
                h *= 0x100000001B3ULL;
            }
        }
        return h;
    }

    std::uint64_t stage_key(const std::string& name, const nlohmann::json& cfg_slice,
                            const std::vector<std::string>& inputs) const {
        std::ostringstream os;
        os << name << '|' << cfg_slice.dump() << '|' << cfg_.seed;
        for (const std::string& in : inputs) os << '|' << std::hex << file_hash(in);
        return Rng::fnv1a64(os.str());
    }

    bool up_to_date(const std::string& name, std::uint64_t key,
                    const std::vector<std::string>& outputs) const {
        if (!manifest_.contains(name)) return false;
        if (manifest_.at(name).value("key", std::string()) != key_hex(key)) return false;
        for (const std::string& o : outputs)
            if (!std::filesystem::exists(o)) return false;
        return true;
    }

    static std::string key_hex(std::uint64_t key) {
        std::ostringstream os;
        os << std::hex << key;
        return os.str();
    }

    void record(const std::string& name, std::uint64_t key,
                const std::vector<std::string>& outputs) {
        nlohmann::json entry;
        entry["key"] = key_hex(key);
        std::vector<std::string> rel;
        for (const std::string& o : outputs)
            rel.push_back(std::filesystem::relative(o, out_).generic_string());
        entry["outputs"] = rel;
        manifest_[name] = entry;
        std::ofstream f(manifest_path_);
        if (!f) throw std::runtime_error("cannot write manifest: " + manifest_path_.string());
        f << manifest_.dump(2) << "\n";
    }

    template <typename Fn>
    StageStatus run_stage(const std::string& name, const nlohmann::json& cfg_slice,
                          const std::vector<std::string>& inputs,
                          const std::vector<std::string>& outputs, Fn&& fn) {
        StageStatus st;
        st.name = name;
        st.outputs = outputs;
        const std::uint64_t key = stage_key(name, cfg_slice, inputs);
        if (up_to_date(name, key, outputs)) {
            st.skipped = true;
            return st;
        }
        const std::string log_path = p("logs/" + name + ".log");
        std::ofstream log(log_path);
        log << "stage " << name << " key " << key_hex(key) << "\n";
        for (const std::string& in : inputs) log << "input " << in << "\n";
        const auto t0 = std::chrono::steady_clock::now();
        for (const std::string& o : outputs)
            std::filesystem::create_directories(std::filesystem::path(o).parent_path());
        try {
            fn(log);
        } catch (const std::exception& e) {
            log << "error: " << e.what() << "\n";
            throw std::runtime_error("stage " + name + " failed (log: " + log_path + "): " +
                                     e.what());
        }
        for (const std::string& o : outputs)
            if (!std::filesystem::exists(o))
                throw std::runtime_error("stage " + name + " did not produce " + o);
        st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log << "done in " << st.seconds << " s\n";
        record(name, key, outputs);
        return st;
    }

    nlohmann::json scenes_slice() const {
        nlohmann::json a = nlohmann::json::array();
        for (const ScenePlan& s : cfg_.scenes)
            a.push_back({{"name", s.name},
                         {"rooms", s.rooms},
                         {"width", s.width},
                         {"height", s.height},
                         {"clutter", s.clutter},
                         {"train", s.train}});
        return a;
    }

    nlohmann::json fx_slice() const {
        return {{"rays", cfg_.fx.rays},           {"window", cfg_.fx.window},
                {"coarse_group", cfg_.fx.coarse_group}, {"feat", cfg_.fx.feat},
                {"trunk_hidden", cfg_.fx.trunk_hidden}, {"max_range", cfg_.fx.max_range}};
    }

    std::vector<const ScenePlan*> train_plans() const {
        std::vector<const ScenePlan*> v;
        for (const ScenePlan& s : cfg_.scenes)
            if (s.train) v.push_back(&s);
        return v;
    }

    // --- stages -----------------------------------------------------------------

    StageStatus stage_scenes() {
        std::vector<std::string> outputs;
        for (const ScenePlan& s : cfg_.scenes) outputs.push_back(scene_path(s.name));
        return run_stage("scenes", scenes_slice(), {}, outputs, [&](std::ofstream& log) {
            for (const ScenePlan& sp : cfg_.scenes) {
                sim::SceneSpec spec;
                spec.name = sp.name;
                spec.rooms = sp.rooms;
                spec.width = sp.width;
                spec.height = sp.height;
                spec.clutter = sp.clutter;
                const sim::Scene s =
                    sim::generate_scene(spec, Rng(cfg_.seed).fork("scene:" + sp.name).seed());
                sim::save_scene(s, scene_path(sp.name));
                log << "scene " << sp.name << ": " << s.width << "x" << s.height << ", rooms "
                    << s.num_rooms() << "\n";
            }
        });
    }

    StageStatus stage_segment() {
        std::vector<std::string> inputs, outputs;
        for (const ScenePlan& s : cfg_.scenes) {
            inputs.push_back(scene_path(s.name));
            outputs.push_back(gmm_path(s.name));
        }
        const nlohmann::json slice = {{"points", cfg_.seg_points}};
        return run_stage("segment", slice, inputs, outputs, [&](std::ofstream& log) {
            for (const ScenePlan& sp : cfg_.scenes) {
                const sim::Scene s = sim::load_scene(scene_path(sp.name));
                // one-room arenas still get two clusters so episode sampling
                // can demand cluster-distinct endpoints
                const int k = std::max(2, s.num_rooms());
                const seg::SegmentationResult res = seg::segment_scene(
                    s, cfg_.seg_points, Rng(cfg_.seed).fork("segment:" + sp.name).seed(), k);
                seg::save_gmm(res.model, gmm_path(sp.name));
                log << "scene " << sp.name << ": K=" << k << ", agreement " << res.agreement
                    << "\n";
            }
        });
    }

    StageStatus stage_perception() {
        std::vector<std::string> inputs;
        for (const ScenePlan* s : train_plans()) {
            inputs.push_back(scene_path(s->name));
            inputs.push_back(gmm_path(s->name));
        }
        nlohmann::json slice = fx_slice();
        slice["room_positions"] = cfg_.room_positions;
        slice["room_epochs"] = cfg_.room_epochs;
        slice["passage_sources"] = cfg_.passage_sources;
        slice["passage_targets"] = cfg_.passage_targets;
        slice["passage_radius"] = cfg_.passage_radius;
        slice["passage_epochs"] = cfg_.passage_epochs;
        slice["passage_trunk"] = cfg_.passage_trunk;
        return run_stage(
            "perception", slice, inputs, {rc_path(), pd_path()}, [&](std::ofstream& log) {
                std::vector<sim::Scene> scenes;
                std::vector<seg::GmmModel> gmms;
                for (const ScenePlan* s : train_plans()) {
                    scenes.push_back(sim::load_scene(scene_path(s->name)));
                    gmms.push_back(seg::load_gmm(gmm_path(s->name)));
                }
                std::vector<const sim::Scene*> sps;
                std::vector<const seg::GmmModel*> gps;
                for (std::size_t i = 0; i < scenes.size(); ++i) {
                    sps.push_back(&scenes[i]);
                    gps.push_back(&gmms[i]);
                }
                const percep::SplitDataset rooms = percep::build_room_dataset(
                    sps, gps, cfg_.room_positions, Rng(cfg_.seed).fork("rooms").seed());
                const percep::RoomClassifier rc = percep::train_room_classifier(
                    rooms, cfg_.fx, cfg_.room_epochs, Rng(cfg_.seed).fork("rc").seed());
                log << "room classifier: test accuracy " << rc.test.accuracy << ", macro f1 "
                    << rc.test.macro_f1 << "\n";

                const percep::SplitDataset passages = percep::build_passage_dataset(
                    sps, cfg_.passage_sources, cfg_.passage_targets, cfg_.passage_radius,
                    Rng(cfg_.seed).fork("passages").seed());
                const bool fresh = cfg_.passage_trunk == "fresh";
                const percep::PassageDetector pd = percep::train_passage_detector(
                    passages, cfg_.fx,
                    fresh ? percep::TrunkMode::Fresh : percep::TrunkMode::FrozenRoomTrunk,
                    fresh ? nullptr : &rc.fx, cfg_.passage_epochs,
                    Rng(cfg_.seed).fork("pd").seed());
                log << "passage detector: test accuracy " << pd.test.accuracy << "\n";

                std::ofstream rf(rc_path());
                rf << percep::rc_to_json(rc).dump() << "\n";
                std::ofstream pf(pd_path());
                pf << percep::pd_to_json(pd).dump() << "\n";
            });
    }

    StageStatus stage_expert() {
        std::vector<std::string> inputs;
        for (const ScenePlan* s : train_plans()) inputs.push_back(scene_path(s->name));
        const nlohmann::json slice = {{"episodes", cfg_.expert_episodes}};
        return run_stage("expert", slice, inputs, {trajectories_path()}, [&](std::ofstream& log) {
            std::vector<pol::ExpertTrajectory> all;
            for (const ScenePlan* sp : train_plans()) {
                const sim::Scene s = sim::load_scene(scene_path(sp->name));
                Rng rng = Rng(cfg_.seed).fork("expert:" + sp->name);
                int kept = 0;
                for (int e = 0; e < cfg_.expert_episodes; ++e) {
                    const Vec2 a = sim::sample_free_position(s, rng, 0.3);
                    Vec2 b = sim::sample_free_position(s, rng, 0.3);
                    for (int tries = 0; tries < 50 && (b - a).norm() < 2.0; ++tries)
                        b = sim::sample_free_position(s, rng, 0.3);
                    try {
                        pol::ExpertTrajectory tr = pol::expert_drive(
                            s, sim::Pose(a.x, a.y, rng.uniform(-kPi, kPi)), b,
                            rng.fork(e).seed());
                        kept += tr.note.empty() ? 1 : 0;
                        all.push_back(std::move(tr));
                    } catch (const std::runtime_error&) {
                        // unreachable goal draw: skip, the episode budget is a cap
                    }
                }
                log << "scene " << sp->name << ": " << kept << " clean trajectories\n";
            }
            if (all.empty()) throw std::runtime_error("no expert trajectories were collected");
            pol::save_trajectories(all, trajectories_path());
        });
    }

    StageStatus stage_policy() {
        const std::vector<std::string> inputs = {trajectories_path(), rc_path(), pd_path()};
        const nlohmann::json slice = {{"epochs", cfg_.policy_epochs},
                                      {"hidden", cfg_.policy_hidden},
                                      {"fm_hidden", cfg_.fm_hidden},
                                      {"alpha", cfg_.policy_alpha},
                                      {"lambda", cfg_.policy_lambda},
                                      {"lr", cfg_.policy_lr}};
        return run_stage("policy", slice, inputs, {policy_path(), fm_path()},
                         [&](std::ofstream& log) {
                             const auto trajs = pol::load_trajectories(trajectories_path());
                             const percep::RoomClassifier rc = load_rc();
                             const percep::PassageDetector pd = load_pd();
                             const pol::BcDataset ds = pol::build_bc_dataset(
                                 trajs, rc.fx, pd.fx, Rng(cfg_.seed).fork("bc").seed());
                             log << "sequences: " << ds.train.size() << " train, "
                                 << ds.test.size() << " test\n";
                             Rng init = Rng(cfg_.seed).fork("policy_init");
                             pol::LocalPolicy policy = pol::LocalPolicy::make(cfg_.policy_config(), init);
                             pol::ForwardModel fm = pol::ForwardModel::make(cfg_.policy_config(), init);
                             const nn::TrainMeta meta = pol::joint_train(
                                 policy, fm, ds.train, cfg_.policy_epochs,
                                 Rng(cfg_.seed).fork("policy_train").seed(), cfg_.policy_alpha,
                                 cfg_.policy_lambda, pol::kBcBatch, cfg_.policy_lr);
                             log << "final loss " << (meta.loss_curve.empty() ? 0.0 : meta.loss_curve.back())
                                 << "\n";
                             std::ofstream pf(policy_path());
                             pf << pol::policy_to_json(policy, meta).dump() << "\n";
                             std::ofstream ff(fm_path());
                             ff << pol::fm_to_json(fm, meta).dump() << "\n";
                         });
    }

    StageStatus stage_maps(const std::string& stage) {
        const bool real = stage == "map_real";
        std::vector<std::string> inputs;
        for (const ScenePlan& s : cfg_.scenes) {
            inputs.push_back(scene_path(s.name));
            inputs.push_back(gmm_path(s.name));
        }
        inputs.push_back(real ? fx_t_path() : rc_path());
        inputs.push_back(real ? finetune_path("D") : pd_path());
        std::vector<std::string> outputs;
        for (const ScenePlan& s : cfg_.scenes) outputs.push_back(map_path(stage, s.name));
        const nlohmann::json slice = {{"min_per_room", cfg_.map_min_per_room},
                                      {"connect_radius", cfg_.map_connect_radius},
                                      {"domain", real ? "real" : "sim"}};
        return run_stage(stage, slice, inputs, outputs, [&](std::ofstream& log) {
            const percep::FeatureExtractor fx = real ? load_fx_t() : load_rc().fx;
            const percep::PassageDetector pd = real ? load_finetuned("D") : load_pd();
            const sim::DomainParams dom =
                real ? sim::DomainParams::real() : sim::DomainParams::sim();
            for (const ScenePlan& sp : cfg_.scenes) {
                const sim::Scene s = sim::load_scene(scene_path(sp.name));
                const seg::GmmModel gmm = seg::load_gmm(gmm_path(sp.name));
                // Greedy packing at the default node spacing can miss the
                // per-cluster quota when a GMM cluster covers only a sliver
                // of free space; densify in bounded steps before giving up.
                std::vector<Vec2> nodes;
                double spacing = tmap::kSpacingMin;
                for (int attempt = 0;; ++attempt, spacing *= 0.7) {
                    try {
                        nodes = tmap::sample_node_positions(
                            s, gmm, cfg_.map_min_per_room,
                            Rng(cfg_.seed).fork(stage + ":nodes:" + sp.name).fork(attempt).seed(),
                            spacing);
                        break;
                    } catch (const std::runtime_error& e) {
                        log << "scene " << sp.name << ": " << e.what() << " at spacing "
                            << spacing << "\n";
                        if (attempt >= 4) throw;
                    }
                }
                Rng mrng = Rng(cfg_.seed).fork(stage + ":obs:" + sp.name);
                const tmap::TopoMap m =
                    tmap::build_map(s, nodes, fx, pd, dom, mrng, cfg_.map_connect_radius);
                tmap::save_map(m, map_path(stage, sp.name));
                int edges = 0;
                for (const auto& a : m.adj) edges += static_cast<int>(a.size());
                log << "scene " << sp.name << ": " << m.size() << " nodes, " << edges
                    << " edges\n";
            }
        });
    }

    StageStatus stage_bench(const std::string& stage) {
        const bool real = stage == "bench_real";
        const std::string map_stage = real ? "map_real" : "map_sim";
        std::vector<std::string> inputs;
        for (const ScenePlan& s : cfg_.scenes) {
            inputs.push_back(scene_path(s.name));
            inputs.push_back(gmm_path(s.name));
            inputs.push_back(map_path(map_stage, s.name));
        }
        inputs.push_back(real ? fx_t_path() : rc_path());
        inputs.push_back(real ? finetune_path("D") : pd_path());
        inputs.push_back(policy_path());
        nlohmann::json slice = {{"domain", real ? "real" : "sim"}, {"jobs", cfg_.bench_jobs}};
        slice["episodes"] = nlohmann::json::array();
        for (const ScenePlan& s : cfg_.scenes) slice["episodes"].push_back(s.episodes);
        slice["nav"] = config_to_json(cfg_).at("nav");
        const std::string dir = bench_dir(stage);
        const std::vector<std::string> outputs = {dir + "/metrics.csv", dir + "/per-episode.csv",
                                                  dir + "/report.md"};
        return run_stage(stage, slice, inputs, outputs, [&](std::ofstream& log) {
            const percep::FeatureExtractor fx = real ? load_fx_t() : load_rc().fx;
            const percep::PassageDetector pd = real ? load_finetuned("D") : load_pd();
            nn::TrainMeta pmeta;
            const pol::LocalPolicy policy = load_policy(&pmeta);
            nav::NavModels models;
            models.fx_loc = &fx;
            models.pd = &pd;
            models.policy = &policy;

            std::vector<sim::Scene> scenes;
            std::vector<seg::GmmModel> gmms;
            std::vector<tmap::TopoMap> maps;
            for (const ScenePlan& sp : cfg_.scenes) {
                scenes.push_back(sim::load_scene(scene_path(sp.name)));
                gmms.push_back(seg::load_gmm(gmm_path(sp.name)));
                maps.push_back(tmap::load_map(map_path(map_stage, sp.name)));
            }
            std::vector<eval::BenchScene> bench(cfg_.scenes.size());
            for (std::size_t i = 0; i < cfg_.scenes.size(); ++i) {
                bench[i].name = cfg_.scenes[i].name;
                bench[i].scene = &scenes[i];
                bench[i].gmm = &gmms[i];
                bench[i].map = &maps[i];
                bench[i].episodes = cfg_.scenes[i].episodes;
                bench[i].seed = Rng(cfg_.seed).fork(stage + ":" + cfg_.scenes[i].name).seed();
            }
            eval::BenchConfig bc;
            bc.nav = cfg_.nav;
            bc.dom = real ? sim::DomainParams::real() : sim::DomainParams::sim();
            bc.jobs = cfg_.bench_jobs;
            const eval::BenchOutput out = eval::run_benchmark(bench, models, bc);
            eval::write_metrics_csv(out.report, dir + "/metrics.csv");
            eval::write_per_episode_csv(out.rows, dir + "/per-episode.csv");
            eval::write_report_md(out.report, dir + "/report.md");
            log << "overall SR " << out.report.sr << ", SPL " << out.report.spl << "\n";
        });
    }

    StageStatus stage_real_collect() {
        std::vector<std::string> inputs;
        for (const ScenePlan* s : train_plans()) inputs.push_back(scene_path(s->name));
        const nlohmann::json slice = {{"positions", cfg_.real_positions},
                                      {"radius", cfg_.passage_radius}};
        return run_stage(
            "real_collect", slice, inputs, {collection_path(), sim_pool_path()},
            [&](std::ofstream& log) {
                adapt::RealCollection merged;
                std::vector<percep::LabeledExample> sim_pool;
                for (const ScenePlan* sp : train_plans()) {
                    const sim::Scene s = sim::load_scene(scene_path(sp->name));
                    Rng rng = Rng(cfg_.seed).fork("real:" + sp->name);
                    std::vector<Vec2> positions;
                    for (int i = 0; i < cfg_.real_positions; ++i)
                        positions.push_back(sim::sample_free_position(s, rng, 0.25));
                    const adapt::RealCollection col = adapt::build_real_collection(
                        s, positions, cfg_.passage_radius, rng.fork("obs").seed());
                    merged.positions.insert(merged.positions.end(), col.positions.begin(),
                                            col.positions.end());
                    merged.per_position.insert(merged.per_position.end(),
                                               col.per_position.begin(), col.per_position.end());
                    // matched SIM-domain pool at independently drawn positions
                    Rng srng = rng.fork("simpool");
                    for (int i = 0; i < cfg_.real_positions; ++i) {
                        const Vec2 p = sim::sample_free_position(s, srng, 0.25);
                        for (int h = 0; h < percep::kHeadings; ++h) {
                            percep::LabeledExample ex;
                            ex.pose = sim::Pose(
                                p.x, p.y, wrap_angle(2.0 * kPi * h / percep::kHeadings));
                            ex.obs = sim::observe(s, ex.pose, {}, sim::DomainParams::sim(), srng);
                            ex.label = 0;
                            sim_pool.push_back(std::move(ex));
                        }
                    }
                    log << "scene " << sp->name << ": " << col.positions.size()
                        << " real positions\n";
                }
                std::ofstream cf(collection_path());
                cf << collection_to_json(merged).dump() << "\n";
                percep::save_examples(sim_pool, sim_pool_path());
            });
    }

    StageStatus stage_adapt() {
        const std::vector<std::string> inputs = {rc_path(), collection_path(), sim_pool_path()};
        const nlohmann::json slice = {
            {"epochs", cfg_.adapt.epochs},       {"batch", cfg_.adapt.batch},
            {"resample_interval", cfg_.adapt.resample_interval},
            {"pool_size", cfg_.adapt.pool_size}, {"k_disc", cfg_.adapt.k_disc},
            {"probe_size", cfg_.adapt.probe_size}, {"lr", cfg_.adapt.lr}};
        return run_stage(
            "adapt", slice, inputs, {fx_t_path(), adapt_diag_path()}, [&](std::ofstream& log) {
                const percep::RoomClassifier rc = load_rc();
                const adapt::RealCollection col =
                    collection_from_json(load_json(collection_path()));
                std::vector<sim::RayObservation> real_obs;
                for (const auto& ex : col.flatten()) real_obs.push_back(ex.obs);
                std::vector<sim::RayObservation> sim_obs;
                for (const auto& ex : percep::load_examples(sim_pool_path()))
                    sim_obs.push_back(ex.obs);
                adapt::AdaptConfig ac = cfg_.adapt;
                ac.seed = Rng(cfg_.seed).fork("adapt").seed();
                const adapt::AdaptResult res = adapt::adapt_extractor(rc.fx, sim_obs, real_obs, ac);
                std::ofstream tf(fx_t_path());
                nn::TrainMeta meta;
                meta.seed = ac.seed;
                meta.epochs = ac.epochs;
                tf << percep::fx_to_json(res.fx_t, meta).dump() << "\n";
                adapt::save_diagnostics_csv(res.diag, adapt_diag_path());
                log << "final probe accuracy "
                    << (res.diag.disc_accuracy.empty() ? 0.0 : res.diag.disc_accuracy.back())
                    << "\n";
            });
    }

    StageStatus stage_finetune() {
        const std::vector<std::string> inputs = {collection_path(), pd_path()};
        const nlohmann::json slice = {{"epochs", cfg_.finetune_epochs},
                                      {"batch", cfg_.finetune_batch}};
        std::vector<std::string> outputs = {finetune_path("A"), finetune_path("B"),
                                            finetune_path("C"), finetune_path("D"),
                                            finetune_summary_path()};
        return run_stage("finetune", slice, inputs, outputs, [&](std::ofstream& log) {
            const adapt::RealCollection col = collection_from_json(load_json(collection_path()));
            const percep::SplitDataset split =
                adapt::split_collection(col, Rng(cfg_.seed).fork("ft_split").seed());
            const percep::PassageDetector sim_pd = load_pd();
            std::ofstream sf(finetune_summary_path());
            sf << "setup,accuracy,f1,tn,fp,fn,tp\n";
            for (const char* name : {"A", "B", "C", "D"}) {
                const adapt::FinetuneSetup setup = adapt::setup_from_name(name);
                const adapt::FinetuneOutcome out = adapt::finetune_passage(
                    split, setup, &sim_pd, cfg_.fx, Rng(cfg_.seed).fork("ft").fork(name).seed(),
                    cfg_.finetune_epochs, cfg_.finetune_batch);
                std::ofstream f(finetune_path(name));
                f << percep::pd_to_json(out.pd).dump() << "\n";
                sf << name << ',' << out.accuracy << ',' << out.f1 << ',' << out.tn << ','
                   << out.fp << ',' << out.fn << ',' << out.tp << "\n";
                log << "setup " << name << ": accuracy " << out.accuracy << ", f1 " << out.f1
                    << "\n";
            }
        });
    }

    // --- artifact loads ------------------------------------------------------------

    static nlohmann::json load_json(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("missing artifact: " + path);
        nlohmann::json j;
        f >> j;
        return j;
    }

    percep::RoomClassifier load_rc() const { return percep::rc_from_json(load_json(rc_path())); }
    percep::PassageDetector load_pd() const { return percep::pd_from_json(load_json(pd_path())); }
    percep::FeatureExtractor load_fx_t() const {
        return percep::fx_from_json(load_json(fx_t_path()));
    }
    percep::PassageDetector load_finetuned(const std::string& setup) const {
        return percep::pd_from_json(load_json(finetune_path(setup)));
    }
    pol::LocalPolicy load_policy(nn::TrainMeta* meta) const {
        return pol::policy_from_json(load_json(policy_path()), meta);
    }

    PipelineConfig cfg_;
    std::filesystem::path out_;
    std::filesystem::path manifest_path_;
    nlohmann::json manifest_;
};

}  // namespace topnav::pipe
