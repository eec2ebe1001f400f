#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "flowlab/harness.hpp"

using namespace flowlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("flowlab_test_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing file ", p.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

json skew_invert_config(int n = 10) {
    return json{{"kind", "invert"},
                {"seed", 42},
                {"field", {{"kind", "linear_skew"}, {"omega", 1.0}}},
                {"z0", {1.0, 0.0}},
                {"solver", {{"method", "euler"}, {"n_steps", n}}}};
}

}  // namespace

TEST_CASE("invert run writes manifest, result and trajectory") {
    fs::path dir = fresh_dir("invert");
    RunOutcome out = run(skew_invert_config(), dir.string());
    CHECK(out.exit_code == 0);
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(fs::exists(dir / "trajectory.jsonl"));
    json result = json::parse(slurp(dir / "result.json"));
    CHECK(result.at("nfe") == 10);
    CHECK(result.at("seed") == 42);
    json manifest = json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest.at("config").at("kind") == "invert");
    CHECK(manifest.contains("timestamp"));
    CHECK(!result.contains("timestamp"));
    fs::remove_all(dir);
}

TEST_CASE("identical config and seed produce byte-identical results") {
    json config{{"kind", "edit"},
                {"seed", 7},
                {"field",
                 {{"kind", "linear_skew"},
                  {"omega", 1.0},
                  {"label_offsets", {{0.6, 0.0}, {0.0, -0.5}}}}},
                {"source_condition", {{"kind", "label"}, {"id", 0}}},
                {"target_condition", {{"kind", "label"}, {"id", 1}}},
                {"edit", {{"n_steps", 12}, {"w", 2.0}, {"gamma", 4.5}}}};
    fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
    CHECK(run(config, a.string()).exit_code == 0);
    CHECK(run(config, b.string()).exit_code == 0);
    CHECK(slurp(a / "result.json") == slurp(b / "result.json"));
    CHECK(slurp(a / "edit_trajectory.jsonl") == slurp(b / "edit_trajectory.jsonl"));
    CHECK(slurp(a / "source_trajectory.jsonl") == slurp(b / "source_trajectory.jsonl"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("invalid configs exit with code 2 and an error record") {
    fs::path dir = fresh_dir("bad");
    RunOutcome missing_kind = run(json{{"seed", 1}}, dir.string());
    CHECK(missing_kind.exit_code == 2);
    CHECK(fs::exists(dir / "error.json"));
    fs::remove_all(dir);

    json bad_field = skew_invert_config();
    bad_field["field"]["kind"] = "warp";
    RunOutcome unknown = run(bad_field, fresh_dir("bad2").string());
    CHECK(unknown.exit_code == 2);

    json bad_solver = skew_invert_config();
    bad_solver["solver"]["method"] = "leapfrog";
    CHECK(run(bad_solver, fresh_dir("bad3").string()).exit_code == 2);
}

TEST_CASE("numerical blow-ups exit with code 3") {
    json config{{"kind", "invert"},
                {"seed", 1},
                {"field", {{"kind", "constant"}, {"constant", {1e308, 0.0}}}},
                {"z0", {1e308, 0.0}},
                {"solver", {{"method", "euler"}, {"n_steps", 5}}}};
    fs::path dir = fresh_dir("blowup");
    RunOutcome out = run(config, dir.string());
    CHECK(out.exit_code == 3);
    json err = json::parse(slurp(dir / "error.json"));
    CHECK(err.at("exit_code") == 3);
    CHECK(err.at("error").get<std::string>().find("step") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("compare trajectories") {
    fs::path a = fresh_dir("cmp_a"), b = fresh_dir("cmp_b");
    run(skew_invert_config(), a.string());
    run(skew_invert_config(), b.string());
    CHECK(compare_trajectories((a / "trajectory.jsonl").string(),
                               (b / "trajectory.jsonl").string()) == 0.0);

    json afp = skew_invert_config();
    afp["solver"] = {{"method", "afp"}, {"n_steps", 10}, {"k", 4}};
    fs::path c = fresh_dir("cmp_c");
    run(afp, c.string());
    const double dev = compare_trajectories((a / "trajectory.jsonl").string(),
                                            (c / "trajectory.jsonl").string());
    CHECK(dev == doctest::Approx(0.100724).epsilon(1e-4));  // reference-run pin

    json shorter = skew_invert_config(8);
    fs::path d = fresh_dir("cmp_d");
    run(shorter, d.string());
    CHECK_THROWS_AS(compare_trajectories((a / "trajectory.jsonl").string(),
                                         (d / "trajectory.jsonl").string()),
                    std::invalid_argument);
    for (const auto& p : {a, b, c, d})
        fs::remove_all(p);
}

TEST_CASE("bench emits the documented csv and passing rows") {
    json config{{"kind", "bench"}, {"seed", 3}};
    fs::path dir = fresh_dir("bench");
    RunOutcome out = run(config, dir.string());
    CHECK(out.exit_code == 0);
    std::string csv = slurp(dir / "bench.csv");
    CHECK(csv.rfind("method,K,N,nfe,error,bound,pass\n", 0) == 0);
    json result = json::parse(slurp(dir / "result.json"));
    // per N: euler + midpoint + 4 fixed_point + 4 afp
    CHECK(result.at("rows").size() == 4 * 10);
    for (const auto& row : result.at("rows")) {
        CHECK(row.at("pass") == true);
        CHECK(row.at("error").get<double>() <= row.at("bound").get<double>() + 1e-9);
    }
    fs::remove_all(dir);
}

TEST_CASE("verify-bounds passes every row") {
    json config{{"kind", "verify-bounds"}, {"seed", 5}, {"decomposition_runs", 4}};
    fs::path dir = fresh_dir("bounds");
    RunOutcome out = run(config, dir.string());
    CHECK(out.exit_code == 0);
    json result = json::parse(slurp(dir / "result.json"));
    CHECK(result.at("report").at("all_pass") == true);
    std::string csv = slurp(dir / "verify_bounds.csv");
    CHECK(csv.rfind("prop,label,measured,bound,pass\n", 0) == 0);
    CHECK(csv.find("false") == std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("alpha scheduler sweep produces the six documented variants") {
    json config{{"kind", "sweep"}, {"seed", 9}, {"edit", {{"n_steps", 20}, {"w", 2.0}}}};
    fs::path dir = fresh_dir("sweep");
    CHECK(run(config, dir.string()).exit_code == 0);
    json result = json::parse(slurp(dir / "result.json"));
    REQUIRE(result.at("rows").size() == 6);
    std::vector<std::string> expected{"fixed_0.1",       "fixed_0.5",   "fixed_0.9",
                                      "time_decay_only", "cosine_only", "time_decay_x_cosine"};
    for (size_t i = 0; i < expected.size(); ++i)
        CHECK(result.at("rows")[i].at("variant") == expected[i]);
    std::string csv = slurp(dir / "sweep.csv");
    CHECK(csv.rfind("variant,dev_source,dev_target\n", 0) == 0);
    fs::remove_all(dir);
}

TEST_CASE("gamma-w sweep covers the grid") {
    json config{{"kind", "sweep"},
                {"seed", 9},
                {"sweep_kind", "gamma_w"},
                {"edit", {{"n_steps", 16}}},
                {"gammas", {2.0, 4.5}},
                {"ws", {1.5, 3.5, 6.5}}};
    fs::path dir = fresh_dir("sweep_gw");
    CHECK(run(config, dir.string()).exit_code == 0);
    json result = json::parse(slurp(dir / "result.json"));
    CHECK(result.at("rows").size() == 6);
    std::string csv = slurp(dir / "sweep.csv");
    CHECK(csv.rfind("gamma,w,dev_source,dev_target\n", 0) == 0);
    fs::remove_all(dir);
}

TEST_CASE("train and grad-check round trip through the harness") {
    json dataset{{"components",
                  {{{"mean", {-2.0, 0.0}}, {"sigma", 0.5}, {"weight", 1.0}},
                   {{"mean", {2.0, 0.0}}, {"sigma", 0.5}, {"weight", 1.0}}}}};
    json train_config{{"kind", "train"},
                      {"seed", 11},
                      {"dataset", dataset},
                      {"train", {{"steps", 150}, {"batch_size", 32}, {"seed", 11}}}};
    fs::path dir = fresh_dir("train");
    CHECK(run(train_config, dir.string()).exit_code == 0);
    json result = json::parse(slurp(dir / "result.json"));
    CHECK(result.at("final_heldout_loss").get<double>() <
          result.at("initial_heldout_loss").get<double>());
    CHECK(fs::exists(dir / "checkpoint.json"));

    json gc{{"kind", "grad-check"},
            {"seed", 13},
            {"checkpoint", (dir / "checkpoint.json").string()}};
    fs::path dir2 = fresh_dir("gradcheck");
    CHECK(run(gc, dir2.string()).exit_code == 0);
    json gc_result = json::parse(slurp(dir2 / "result.json"));
    CHECK(gc_result.at("max_rel_error").get<double>() < 1e-4);

    // the trained checkpoint drives the field zoo through the config
    json invert_cfg{{"kind", "invert"},
                    {"seed", 17},
                    {"field", {{"kind", "trained"}, {"checkpoint", (dir / "checkpoint.json").string()}}},
                    {"z0", {-2.0, 0.1}},
                    {"solver",
                     {{"method", "afp"},
                      {"n_steps", 12},
                      {"k", 1},
                      {"condition", {{"kind", "label"}, {"id", 0}}}}}};
    fs::path dir3 = fresh_dir("trained_invert");
    CHECK(run(invert_cfg, dir3.string()).exit_code == 0);
    CHECK(json::parse(slurp(dir3 / "result.json")).at("nfe") == 13);
    for (const auto& p : {dir, dir2, dir3})
        fs::remove_all(p);
}

TEST_CASE("multiturn run writes per-turn trajectories") {
    json config{{"kind", "multiturn"},
                {"seed", 21},
                {"field",
                 {{"kind", "linear_skew"},
                  {"omega", 1.0},
                  {"label_offsets", {{0.6, 0.0}, {0.0, -0.5}}}}},
                {"source_condition", {{"kind", "label"}, {"id", 0}}},
                {"z0", {0.7, -0.1}},
                {"edit", {{"n_steps", 14}, {"w", 2.0}}},
                {"turns",
                 {{{"target_condition", {{"kind", "label"}, {"id", 1}}}, {"gamma", 4.5}},
                  {{"target_condition", {{"kind", "label"}, {"id", 0}}}, {"gamma", 3.0}}}}};
    fs::path dir = fresh_dir("multiturn");
    RunOutcome out = run(config, dir.string());
    CHECK(out.exit_code == 0);
    json result = json::parse(slurp(dir / "result.json"));
    REQUIRE(result.at("turns").size() == 2);
    CHECK(result.at("turns")[1].at("dev_from_source").is_number());

    // backward trajectories reload and validate through the jsonl format
    Trajectory turn0 = load_trajectory((dir / "turn_0_trajectory.jsonl").string());
    CHECK(turn0.direction == Direction::Backward);
    turn0.validate();
    fs::remove_all(dir);
}

TEST_CASE("initial state resolution") {
    json explicit_cfg{{"z0", {1.0, 2.0, 3.0}}};
    LatentState z = resolve_initial_state(explicit_cfg, 1);
    CHECK(z.layout.size() == 3);
    CHECK(z.values[2] == 3.0);

    json mismatch{{"z0", {1.0, 2.0}}, {"layout", {{"kind", "grid"}, {"h", 2}, {"w", 2}, {"c", 1}}}};
    CHECK_THROWS_AS(resolve_initial_state(mismatch, 1), std::invalid_argument);

    json sphere{{"z0", {{"kind", "sphere"}, {"scale", 2.0}}},
                {"layout", {{"kind", "flat"}, {"d", 4}}}};
    LatentState s = resolve_initial_state(sphere, 5);
    CHECK(norm(s) == doctest::Approx(2.0).epsilon(1e-12));
    LatentState s2 = resolve_initial_state(sphere, 5);
    CHECK(s.values == s2.values);  // seed-deterministic

    json unknown{{"z0", {{"kind", "donut"}}}};
    CHECK_THROWS_AS(resolve_initial_state(unknown, 1), std::invalid_argument);
}

TEST_CASE("csv numbers are shortest exact decimals") {
    CHECK(csv_number(0.5) == "0.5");
    CHECK(csv_number(1.0) == "1.0");
    const double v = 0.1 + 0.2;
    CHECK(json::parse(csv_number(v)).get<double>() == v);
}
