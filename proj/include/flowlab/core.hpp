#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace flowlab {

/// Shape of a latent state: either a flat D-vector or an H x W grid of
/// C-channel vectors (row-major sites, channels contiguous per site).
struct Layout {
    enum class Kind { Flat, Grid };

    Kind kind = Kind::Flat;
    int d = 0;            // Flat only
    int h = 0, w = 0, c = 0;  // Grid only

    static Layout flat(int d);
    static Layout grid(int h, int w, int c);

    int size() const { return kind == Kind::Flat ? d : h * w * c; }
    int sites() const { return kind == Kind::Flat ? 1 : h * w; }
    int channels() const { return kind == Kind::Flat ? d : c; }

    bool operator==(const Layout&) const = default;
    std::string str() const;
};

/// A point Z_t of the flow. Value semantics; treated as immutable once built.
struct LatentState {
    Layout layout;
    std::vector<double> values;

    static LatentState flat(std::vector<double> v);
    static LatentState grid(int h, int w, int c, std::vector<double> v);
    static LatentState zeros(const Layout& layout);

    int size() const { return static_cast<int>(values.size()); }
};

bool all_finite(const LatentState& z);
void ensure_finite(const LatentState& z, const std::string& what);
void ensure_same_layout(const LatentState& a, const LatentState& b, const std::string& what);

/// a + s * b (layouts must match)
LatentState add_scaled(const LatentState& a, double s, const LatentState& b);
LatentState subtract(const LatentState& a, const LatentState& b);
LatentState scale(const LatentState& a, double s);
double dot(const LatentState& a, const LatentState& b);
double norm(const LatentState& a);
double distance(const LatentState& a, const LatentState& b);

/// Uniform grid t_i = i/N over [0, 1].
struct TimeGrid {
    int n_steps = 1;

    TimeGrid() = default;
    explicit TimeGrid(int n);
    double dt() const { return 1.0 / n_steps; }
    double t(int i) const;

    bool operator==(const TimeGrid&) const = default;
};

/// Conditioning token: the unconditional token, a class label, or a raw
/// embedding vector.
struct Condition {
    enum class Kind { Null, Label, Embedding };

    Kind kind = Kind::Null;
    int label_id = 0;
    std::vector<double> embedding;

    static Condition null();
    static Condition label(int id);
    static Condition embed(std::vector<double> v);

    bool is_null() const { return kind == Kind::Null; }
    bool operator==(const Condition&) const = default;
};

enum class Direction { Forward, Backward };

/// Record of one ODE solve over a uniform grid. states[i] lives at t_i;
/// velocities[i] is the velocity applied on [t_i, t_{i+1}], so
/// states[i+1] = states[i] + dt * velocities[i] for both directions.
struct Trajectory {
    TimeGrid grid;
    std::vector<LatentState> states;      // N+1 entries
    std::vector<LatentState> velocities;  // N entries
    Condition condition;
    Direction direction = Direction::Forward;

    void validate() const;
};

/// Mean over grid sites of the cosine between the C-channel vectors at each
/// site; plain cosine for flat layouts. Near-zero vectors contribute 0.
double spatial_cosine(const LatentState& a, const LatentState& b);

/// (states[i] - states[i-1]) / dt for 1 <= i <= N.
LatentState finite_diff_velocity(const Trajectory& traj, int i);

nlohmann::json layout_to_json(const Layout& l);
Layout layout_from_json(const nlohmann::json& j);
nlohmann::json condition_to_json(const Condition& c);
Condition condition_from_json(const nlohmann::json& j);

// JSON-lines trajectory file: header line, then one line per step.
std::string trajectory_to_jsonl(const Trajectory& traj);
Trajectory trajectory_from_jsonl(const std::string& text);
void save_trajectory(const Trajectory& traj, const std::string& path);
Trajectory load_trajectory(const std::string& path);

}  // namespace flowlab
