#include <cstdio>
#include <fstream>
#include <string>

#include "CLI11.hpp"
#include "flowlab/harness.hpp"
#include "json.hpp"

namespace {

struct VerbArgs {
    std::string config_path;
    std::string out_dir;
};

int execute(const std::string& kind, const VerbArgs& args) {
    nlohmann::json config;
    try {
        std::ifstream in(args.config_path);
        if (!in) {
            std::fprintf(stderr, "error: cannot open config '%s'\n", args.config_path.c_str());
            return 2;
        }
        in >> config;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: config parse failed: %s\n", e.what());
        return 2;
    }
    if (!config.is_object()) {
        std::fprintf(stderr, "error: config must be a JSON object\n");
        return 2;
    }
    if (config.contains("kind") && config.at("kind").get<std::string>() != kind) {
        std::fprintf(stderr, "error: config kind '%s' does not match verb '%s'\n",
                     config.at("kind").get<std::string>().c_str(), kind.c_str());
        return 2;
    }
    config["kind"] = kind;

    std::string out_dir = args.out_dir;
    if (out_dir.empty())
        out_dir = config.value("out_dir", "runs/" + kind);

    flowlab::RunOutcome outcome = flowlab::run(config, out_dir);
    if (outcome.exit_code != 0) {
        std::fprintf(stderr, "error: %s\n", outcome.error.c_str());
        return outcome.exit_code;
    }
    std::printf("ok: results in %s\n", out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale laboratory for rectified-flow inversion and editing"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(flowlab::kVersion));

    const std::vector<std::string> kinds = {"train", "invert",        "reconstruct",
                                            "edit",  "multiturn",     "bench",
                                            "sweep", "verify-bounds", "grad-check"};
    std::map<std::string, VerbArgs> verb_args;
    for (const auto& kind : kinds) {
        auto* sub = app.add_subcommand(kind, "Run a '" + kind + "' experiment");
        auto& args = verb_args[kind];
        sub->add_option("-c,--config", args.config_path, "JSON config file")->required();
        sub->add_option("-o,--out", args.out_dir, "output directory (default: config out_dir)");
    }

    std::string cmp_a, cmp_b;
    auto* cmp = app.add_subcommand("compare", "Max per-step deviation between two trajectories");
    cmp->add_option("a", cmp_a, "first trajectory .jsonl")->required();
    cmp->add_option("b", cmp_b, "second trajectory .jsonl")->required();

    CLI11_PARSE(app, argc, argv);

    if (cmp->parsed()) {
        try {
            std::printf("%s\n", flowlab::csv_number(flowlab::compare_trajectories(cmp_a, cmp_b)).c_str());
            return 0;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return 2;
        }
    }
    for (const auto& kind : kinds)
        if (app.get_subcommand(kind)->parsed())
            return execute(kind, verb_args.at(kind));
    return 2;
}
