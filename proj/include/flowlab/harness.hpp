#pragma once

#include <string>

#include "flowlab/bounds.hpp"
#include "flowlab/core.hpp"
#include "flowlab/edit.hpp"
#include "flowlab/fields.hpp"
#include "flowlab/solvers.hpp"
#include "json.hpp"

namespace flowlab {

inline constexpr const char* kVersion = "0.1.0";

struct RunOutcome {
    int exit_code = 0;  // 0 ok, 2 invalid config, 3 numerical failure
    std::string error;
    std::string out_dir;
};

/// Executes one experiment described by a self-contained JSON config and
/// writes manifest.json, result.json and kind-specific artifacts (CSV tables,
/// trajectory .jsonl files, checkpoints) into out_dir. result.json is fully
/// determined by (config, seed); wall-clock data lives only in the manifest.
///
/// Kinds: invert, reconstruct, edit, multiturn, bench, verify-bounds, sweep,
/// train, grad-check.
RunOutcome run(const nlohmann::json& config, const std::string& out_dir);

/// Max over steps of the state deviation between two stored trajectories.
double compare_trajectories(const std::string& path_a, const std::string& path_b);

/// Shortest exact decimal for a double (what the CSV tables use).
std::string csv_number(double v);

// Config fragments shared with tests.
SolverConfig solver_from_json(const nlohmann::json& j);
nlohmann::json solver_to_json(const SolverConfig& cfg);
LatentState resolve_initial_state(const nlohmann::json& config, std::uint64_t seed);

}  // namespace flowlab
