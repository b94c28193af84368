// Pipeline orchestration: config schema (defaults, overrides, field-path
// errors, idempotent resolution), artifact caching (skip on hash match,
// minimal rerun after artifact loss or config edits, failure wrapping), and
// cross-run determinism of the generated artifact tree.

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "topnav/pipeline.hpp"

using namespace topnav;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

/// Two-scene tiny config: one training scene, one bench-only scene. Small
/// enough that a full run takes about a second.
pipe::PipelineConfig tiny_config() {
    pipe::PipelineConfig c = pipe::desk_defaults();
    c.seed = 7;
    c.scenes.clear();
    pipe::ScenePlan a;
    a.name = "tiny";
    a.rooms = 2;
    a.width = 40;
    a.height = 30;
    a.episodes = 2;
    pipe::ScenePlan b = a;
    b.name = "side";
    b.rooms = 1;
    b.width = 40;
    b.height = 40;
    b.train = false;
    c.scenes = {a, b};
    c.seg_points = 120;
    c.room_positions = 12;
    c.room_epochs = 2;
    c.passage_sources = 2;
    c.passage_targets = 4;
    c.passage_epochs = 2;
    c.expert_episodes = 4;
    c.policy_epochs = 1;
    c.real_positions = 6;
    c.adapt.epochs = 3;
    c.adapt.pool_size = 30;
    c.adapt.probe_size = 10;
    c.adapt.batch = 10;
    c.finetune_epochs = 1;
    c.nav.max_episode_seconds = 10.0;
    c.nav.segments_per_waypoint = 2;
    return c;
}

std::vector<std::string> ran_stages(const std::vector<pipe::StageStatus>& log) {
    std::vector<std::string> v;
    for (const auto& st : log)
        if (!st.skipped) v.push_back(st.name);
    return v;
}

fs::path fresh_dir(const std::string& leaf) {
    const fs::path d = fs::temp_directory_path() / leaf;
    fs::remove_all(d);
    return d;
}

}  // namespace

TEST_CASE("config: minimal input fills documented defaults") {
    const pipe::PipelineConfig c = pipe::config_from_json({{"version", 1}});
    const pipe::PipelineConfig d = pipe::desk_defaults();
    CHECK(c.profile == "desk");
    CHECK(c.seed == d.seed);
    REQUIRE(c.scenes.size() == 1);
    CHECK(c.scenes[0].name == "main");
    CHECK(c.scenes[0].rooms == d.scenes[0].rooms);
    CHECK(c.seg_points == d.seg_points);
    CHECK(c.room_epochs == d.room_epochs);
    CHECK(c.passage_trunk == "fresh");
    CHECK(c.adapt.epochs == d.adapt.epochs);
    CHECK(c.finetune_epochs == d.finetune_epochs);
    CHECK(c.nav.segments_per_waypoint == d.nav.segments_per_waypoint);
    CHECK(c.bench_jobs == 1);
    // the resolved form equals the factory's resolved form exactly
    CHECK(pipe::config_to_json(c) == pipe::config_to_json(d));
}

TEST_CASE("config: profile selects defaults, explicit keys override them") {
    const auto desk = pipe::config_from_json({{"version", 1}});
    const auto paper = pipe::config_from_json({{"version", 1}, {"profile", "paper"}});
    CHECK(desk.room_epochs == 30);
    CHECK(paper.room_epochs == 60);
    CHECK(paper.expert_episodes > desk.expert_episodes);
    CHECK(paper.scenes[0].episodes == 25);
    // schedules defined by the source procedure are identical in both profiles
    CHECK(desk.adapt.epochs == 200);
    CHECK(paper.adapt.epochs == 200);
    CHECK(paper.adapt.pool_size == 250);
    CHECK(paper.finetune_epochs == 10);
    CHECK(paper.finetune_batch == 5);

    const auto mixed = pipe::config_from_json(
        {{"version", 1}, {"profile", "paper"}, {"perception", {{"room_epochs", 7}}}});
    CHECK(mixed.room_epochs == 7);
    CHECK(mixed.passage_epochs == 60);  // untouched paper default survives
}

TEST_CASE("config: errors name the offending field") {
    using pipe::config_from_json;
    CHECK_THROWS_WITH(config_from_json({{"version", 1}, {"policy", {{"lr", -1.0}}}}),
                      ContainsSubstring("policy.lr"));
    CHECK_THROWS_WITH(config_from_json({{"version", 1}, {"bogus", 3}}),
                      ContainsSubstring("unknown key bogus"));
    CHECK_THROWS_WITH(config_from_json({{"version", 1}, {"perception", {{"bogus", 3}}}}),
                      ContainsSubstring("unknown key perception.bogus"));
    CHECK_THROWS_WITH(
        config_from_json({{"version", 1}, {"scenes", {{{"name", "x"}, {"bogus", 1}}}}}),
        ContainsSubstring("unknown key scenes[0].bogus"));
    CHECK_THROWS_WITH(config_from_json({{"version", 2}}), ContainsSubstring("version"));
    CHECK_THROWS_WITH(config_from_json({{"version", 1}, {"profile", "huge"}}),
                      ContainsSubstring("profile"));
    CHECK_THROWS_WITH(
        config_from_json({{"version", 1}, {"perception", {{"passage_trunk", "frozen"}}}}),
        ContainsSubstring("passage_trunk"));
    CHECK_THROWS_WITH(config_from_json({{"version", 1}, {"scenes", nlohmann::json::array()}}),
                      ContainsSubstring("scenes"));
    CHECK_THROWS_WITH(config_from_json({{"version", 1}, {"adapt", {{"epochs", 0}}}}),
                      ContainsSubstring("AdaptConfig"));
    CHECK_THROWS_WITH(config_from_json({{"version", 1}, {"nav", {{"control_rate_hz", -5.0}}}}),
                      ContainsSubstring("NavConfig"));
    CHECK_THROWS_WITH(config_from_json(nlohmann::json::array()),
                      ContainsSubstring("top level"));
    // a scene list where no scene trains cannot feed the training stages
    nlohmann::json no_train = {{"version", 1}};
    no_train["scenes"] = {{{"name", "a"}, {"train", false}}};
    CHECK_THROWS_WITH(config_from_json(no_train), ContainsSubstring("train"));
}

TEST_CASE("config: resolution is idempotent") {
    for (const std::string profile : {"desk", "paper"}) {
        const auto c = pipe::config_from_json({{"version", 1}, {"profile", profile}});
        const nlohmann::json j = pipe::config_to_json(c);
        const auto c2 = pipe::config_from_json(j);
        CHECK(pipe::config_to_json(c2) == j);
    }
    // a customized config survives the round trip unchanged too
    const auto c = tiny_config();
    const nlohmann::json j = pipe::config_to_json(c);
    CHECK(pipe::config_to_json(pipe::config_from_json(j)) == j);
}

TEST_CASE("real collection JSON preserves per-position grouping") {
    adapt::RealCollection col;
    col.positions = {{1.0, 2.0}, {3.5, 0.25}};
    Rng rng(4);
    for (int g = 0; g < 2; ++g) {
        std::vector<percep::LabeledExample> group;
        for (int i = 0; i < 2 + g; ++i) {
            percep::LabeledExample ex;
            ex.pose = sim::Pose(1.0 + g, 2.0 - g, 0.5 * i);
            ex.obs.domain = sim::Domain::REAL;
            for (int r = 0; r < 4; ++r) {
                ex.obs.depths.push_back(rng.uniform(0.1, 5.0));
                ex.obs.textures.push_back(rng.uniform(0.0, 1.0));
            }
            ex.label = i % 2;
            group.push_back(ex);
        }
        col.per_position.push_back(group);
    }

    const nlohmann::json j = pipe::collection_to_json(col);
    const adapt::RealCollection back = pipe::collection_from_json(j);
    REQUIRE(back.positions.size() == 2);
    REQUIRE(back.per_position.size() == 2);
    CHECK(back.positions[1].x == 3.5);
    CHECK(back.per_position[0].size() == 2);
    CHECK(back.per_position[1].size() == 3);
    CHECK(back.per_position[1][2].obs.depths == col.per_position[1][2].obs.depths);
    CHECK(back.per_position[1][2].label == col.per_position[1][2].label);
    CHECK(back.per_position[0][1].obs.domain == sim::Domain::REAL);

    nlohmann::json bad = j;
    bad["version"] = 2;
    CHECK_THROWS_WITH(pipe::collection_from_json(bad), ContainsSubstring("version"));
    bad = j;
    bad["positions"].push_back({9.0, 9.0});
    CHECK_THROWS_WITH(pipe::collection_from_json(bad), ContainsSubstring("mismatch"));
}

TEST_CASE("pipeline: caching, minimal rerun, failure wrapping, determinism") {
    const pipe::PipelineConfig cfg = tiny_config();
    const fs::path dir_a = fresh_dir("topnav_pipe_a");

    const std::vector<std::string> all_stages = {
        "scenes",  "segment", "perception", "expert", "policy",   "map_sim",
        "bench_sim", "real_collect", "adapt", "finetune", "map_real", "bench_real"};

    // first run: every stage executes, in recipe order, and all outputs exist
    pipe::Pipeline p(cfg, dir_a);
    const auto log1 = p.run_all();
    REQUIRE(log1.size() == all_stages.size());
    for (std::size_t i = 0; i < log1.size(); ++i) {
        CHECK(log1[i].name == all_stages[i]);
        CHECK_FALSE(log1[i].skipped);
        for (const std::string& out : log1[i].outputs) CHECK(fs::exists(out));
        CHECK(fs::exists(dir_a / "logs" / (log1[i].name + ".log")));
    }

    // rerun with the same config: every stage skips (hash match)
    CHECK(ran_stages(pipe::Pipeline(cfg, dir_a).run_all()).empty());

    // deleting one artifact reruns exactly its producer; consumers skip
    // because the regenerated bytes hash identically
    const std::string pd_file = p.pd_path();
    const std::string pd_bytes = slurp(pd_file);
    fs::remove(pd_file);
    CHECK(ran_stages(pipe::Pipeline(cfg, dir_a).run_all()) ==
          std::vector<std::string>{"perception"});
    CHECK(slurp(pd_file) == pd_bytes);

    // corrupting an input artifact: its producer skips (key still matches),
    // the consumer fails, and the error names the stage and its log
    const std::string scene_file = p.scene_path("tiny");
    const std::string scene_bytes = slurp(scene_file);
    {
        std::ofstream f(scene_file, std::ios::binary);
        f << "{\"not\": \"a scene\"}";
    }
    CHECK_THROWS_WITH(pipe::Pipeline(cfg, dir_a).run_all(),
                      ContainsSubstring("stage segment failed") &&
                          ContainsSubstring("segment.log"));

    // repairing by deleting the artifact: the producer reruns, regenerates
    // identical bytes, and the rest of the recipe proves itself current
    fs::remove(scene_file);
    CHECK(ran_stages(pipe::Pipeline(cfg, dir_a).run_all()) == std::vector<std::string>{"scenes"});
    CHECK(slurp(scene_file) == scene_bytes);

    // fresh directory, same config: the artifact trees agree byte for byte
    const fs::path dir_b = fresh_dir("topnav_pipe_b");
    pipe::Pipeline pb(cfg, dir_b);
    pb.run_all();
    for (const std::string rel :
         {"bench_sim/metrics.csv", "bench_real/metrics.csv", "bench_sim/per-episode.csv",
          "finetune/summary.csv", "adapt/diagnostics.csv", "policy/policy.json",
          "manifest.json"}) {
        CHECK(slurp((dir_a / rel).string()) == slurp((dir_b / rel).string()));
    }

    // editing a bench-only scene reruns the scene-dependent stages but leaves
    // every training stage cached (training reads only train=true scenes)
    pipe::PipelineConfig cfg2 = cfg;
    cfg2.scenes[1].clutter = 0.05;
    CHECK(ran_stages(pipe::Pipeline(cfg2, dir_a).run_all()) ==
          std::vector<std::string>{"scenes", "segment", "map_sim", "bench_sim", "map_real",
                                   "bench_real"});

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}
