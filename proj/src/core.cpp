#include "flowlab/core.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace flowlab {

Layout Layout::flat(int d) {
    if (d <= 0)
        throw std::invalid_argument("Layout::flat: d must be positive, got " + std::to_string(d));
    Layout l;
    l.kind = Kind::Flat;
    l.d = d;
    return l;
}

Layout Layout::grid(int h, int w, int c) {
    if (h <= 0 || w <= 0 || c <= 0)
        throw std::invalid_argument("Layout::grid: all dimensions must be positive");
    Layout l;
    l.kind = Kind::Grid;
    l.h = h;
    l.w = w;
    l.c = c;
    return l;
}

std::string Layout::str() const {
    if (kind == Kind::Flat)
        return "flat(" + std::to_string(d) + ")";
    return "grid(" + std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c) + ")";
}

LatentState LatentState::flat(std::vector<double> v) {
    LatentState z;
    z.layout = Layout::flat(static_cast<int>(v.size()));
    z.values = std::move(v);
    return z;
}

LatentState LatentState::grid(int h, int w, int c, std::vector<double> v) {
    Layout l = Layout::grid(h, w, c);
    if (static_cast<int>(v.size()) != l.size())
        throw std::invalid_argument("LatentState::grid: value count " + std::to_string(v.size()) +
                                    " does not match " + l.str());
    LatentState z;
    z.layout = l;
    z.values = std::move(v);
    return z;
}

LatentState LatentState::zeros(const Layout& layout) {
    LatentState z;
    z.layout = layout;
    z.values.assign(layout.size(), 0.0);
    return z;
}

bool all_finite(const LatentState& z) {
    for (double v : z.values)
        if (!std::isfinite(v))
            return false;
    return true;
}

void ensure_finite(const LatentState& z, const std::string& what) {
    if (!all_finite(z))
        throw std::runtime_error("non-finite value in " + what);
}

void ensure_same_layout(const LatentState& a, const LatentState& b, const std::string& what) {
    if (!(a.layout == b.layout))
        throw std::invalid_argument(what + ": layout mismatch, " + a.layout.str() + " vs " +
                                    b.layout.str());
}

LatentState add_scaled(const LatentState& a, double s, const LatentState& b) {
    ensure_same_layout(a, b, "add_scaled");
    LatentState out = a;
    for (size_t i = 0; i < out.values.size(); ++i)
        out.values[i] += s * b.values[i];
    return out;
}

LatentState subtract(const LatentState& a, const LatentState& b) {
    ensure_same_layout(a, b, "subtract");
    LatentState out = a;
    for (size_t i = 0; i < out.values.size(); ++i)
        out.values[i] -= b.values[i];
    return out;
}

LatentState scale(const LatentState& a, double s) {
    LatentState out = a;
    for (double& v : out.values)
        v *= s;
    return out;
}

double dot(const LatentState& a, const LatentState& b) {
    ensure_same_layout(a, b, "dot");
    double acc = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i)
        acc += a.values[i] * b.values[i];
    return acc;
}

double norm(const LatentState& a) {
    return std::sqrt(dot(a, a));
}

double distance(const LatentState& a, const LatentState& b) {
    ensure_same_layout(a, b, "distance");
    double acc = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        double d = a.values[i] - b.values[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

TimeGrid::TimeGrid(int n) : n_steps(n) {
    if (n < 1)
        throw std::invalid_argument("TimeGrid: n_steps must be >= 1, got " + std::to_string(n));
}

double TimeGrid::t(int i) const {
    if (i < 0 || i > n_steps)
        throw std::invalid_argument("TimeGrid::t: index " + std::to_string(i) + " out of [0, " +
                                    std::to_string(n_steps) + "]");
    return static_cast<double>(i) / n_steps;
}

Condition Condition::null() {
    return Condition{};
}

Condition Condition::label(int id) {
    Condition c;
    c.kind = Kind::Label;
    c.label_id = id;
    return c;
}

Condition Condition::embed(std::vector<double> v) {
    Condition c;
    c.kind = Kind::Embedding;
    c.embedding = std::move(v);
    return c;
}

void Trajectory::validate() const {
    const int n = grid.n_steps;
    if (static_cast<int>(states.size()) != n + 1)
        throw std::invalid_argument("Trajectory: expected " + std::to_string(n + 1) +
                                    " states, got " + std::to_string(states.size()));
    if (static_cast<int>(velocities.size()) != n)
        throw std::invalid_argument("Trajectory: expected " + std::to_string(n) +
                                    " velocities, got " + std::to_string(velocities.size()));
    const Layout& layout = states[0].layout;
    for (const auto& z : states) {
        if (!(z.layout == layout))
            throw std::invalid_argument("Trajectory: states do not share one layout");
        ensure_finite(z, "trajectory state");
    }
    for (const auto& v : velocities) {
        if (!(v.layout == layout))
            throw std::invalid_argument("Trajectory: velocities do not share the state layout");
        ensure_finite(v, "trajectory velocity");
    }
    const double dt = grid.dt();
    for (int i = 0; i < n; ++i) {
        LatentState pred = add_scaled(states[i], dt, velocities[i]);
        double resid = distance(pred, states[i + 1]);
        double scale_ref = std::max(1.0, norm(states[i + 1]));
        if (resid > 1e-12 * scale_ref)
            throw std::invalid_argument("Trajectory: Euler step relation violated at step " +
                                        std::to_string(i) + " (residual " + std::to_string(resid) +
                                        ")");
    }
}

namespace {

double site_cosine(const double* a, const double* b, int c) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (int j = 0; j < c; ++j) {
        ab += a[j] * b[j];
        aa += a[j] * a[j];
        bb += b[j] * b[j];
    }
    double na = std::sqrt(aa), nb = std::sqrt(bb);
    if (na < 1e-12 || nb < 1e-12)
        return 0.0;
    return ab / (na * nb);
}

}  // namespace

double spatial_cosine(const LatentState& a, const LatentState& b) {
    ensure_same_layout(a, b, "spatial_cosine");
    if (a.values.empty())
        throw std::invalid_argument("spatial_cosine: empty state");
    if (a.layout.kind == Layout::Kind::Flat)
        return site_cosine(a.values.data(), b.values.data(), a.layout.d);
    const int sites = a.layout.sites();
    const int c = a.layout.c;
    double acc = 0.0;
    for (int s = 0; s < sites; ++s)
        acc += site_cosine(a.values.data() + s * c, b.values.data() + s * c, c);
    return acc / sites;
}

LatentState finite_diff_velocity(const Trajectory& traj, int i) {
    const int n = traj.grid.n_steps;
    if (i < 1 || i > n)
        throw std::invalid_argument("finite_diff_velocity: step index " + std::to_string(i) +
                                    " out of [1, " + std::to_string(n) + "]");
    LatentState out = traj.states[i];
    const double inv_dt = static_cast<double>(n);
    for (size_t j = 0; j < out.values.size(); ++j)
        out.values[j] = (traj.states[i].values[j] - traj.states[i - 1].values[j]) * inv_dt;
    return out;
}

using nlohmann::json;

json layout_to_json(const Layout& l) {
    if (l.kind == Layout::Kind::Flat)
        return json{{"kind", "flat"}, {"d", l.d}};
    return json{{"kind", "grid"}, {"h", l.h}, {"w", l.w}, {"c", l.c}};
}

Layout layout_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "flat")
        return Layout::flat(j.at("d").get<int>());
    if (kind == "grid")
        return Layout::grid(j.at("h").get<int>(), j.at("w").get<int>(), j.at("c").get<int>());
    throw std::invalid_argument("unknown layout kind '" + kind + "'");
}

json condition_to_json(const Condition& c) {
    switch (c.kind) {
        case Condition::Kind::Null:
            return json{{"kind", "null"}};
        case Condition::Kind::Label:
            return json{{"kind", "label"}, {"id", c.label_id}};
        case Condition::Kind::Embedding:
            return json{{"kind", "embedding"}, {"values", c.embedding}};
    }
    throw std::logic_error("condition_to_json: bad kind");
}

Condition condition_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "null")
        return Condition::null();
    if (kind == "label")
        return Condition::label(j.at("id").get<int>());
    if (kind == "embedding")
        return Condition::embed(j.at("values").get<std::vector<double>>());
    throw std::invalid_argument("unknown condition kind '" + kind + "'");
}

std::string trajectory_to_jsonl(const Trajectory& traj) {
    json header{{"n_steps", traj.grid.n_steps},
                {"layout", layout_to_json(traj.states.at(0).layout)},
                {"condition", condition_to_json(traj.condition)},
                {"direction", traj.direction == Direction::Forward ? "forward" : "backward"}};
    std::string out = header.dump();
    out += '\n';
    const int n = traj.grid.n_steps;
    for (int i = 0; i <= n; ++i) {
        json line{{"i", i}, {"t", traj.grid.t(i)}, {"state", traj.states[i].values}};
        if (i < n)
            line["velocity"] = traj.velocities[i].values;
        else
            line["velocity"] = nullptr;
        out += line.dump();
        out += '\n';
    }
    return out;
}

Trajectory trajectory_from_jsonl(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line))
        throw std::invalid_argument("trajectory_from_jsonl: empty input");
    json header = json::parse(line);
    const int n = header.at("n_steps").get<int>();
    Layout layout = layout_from_json(header.at("layout"));

    Trajectory traj{TimeGrid(n), {}, {}, condition_from_json(header.at("condition")),
                    header.at("direction").get<std::string>() == "forward" ? Direction::Forward
                                                                           : Direction::Backward};
    traj.states.reserve(n + 1);
    traj.velocities.reserve(n);
    for (int i = 0; i <= n; ++i) {
        if (!std::getline(in, line))
            throw std::invalid_argument("trajectory_from_jsonl: missing step line " +
                                        std::to_string(i));
        json step = json::parse(line);
        if (step.at("i").get<int>() != i)
            throw std::invalid_argument("trajectory_from_jsonl: step index mismatch at line " +
                                        std::to_string(i + 2));
        LatentState z;
        z.layout = layout;
        z.values = step.at("state").get<std::vector<double>>();
        if (z.size() != layout.size())
            throw std::invalid_argument("trajectory_from_jsonl: state size mismatch at step " +
                                        std::to_string(i));
        traj.states.push_back(std::move(z));
        const json& vel = step.at("velocity");
        if (i < n) {
            LatentState v;
            v.layout = layout;
            v.values = vel.get<std::vector<double>>();
            if (v.size() != layout.size())
                throw std::invalid_argument(
                    "trajectory_from_jsonl: velocity size mismatch at step " + std::to_string(i));
            traj.velocities.push_back(std::move(v));
        } else if (!vel.is_null()) {
            throw std::invalid_argument("trajectory_from_jsonl: final step must carry null velocity");
        }
    }
    return traj;
}

void save_trajectory(const Trajectory& traj, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    out << trajectory_to_jsonl(traj);
}

Trajectory load_trajectory(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open '" + path + "' for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    return trajectory_from_jsonl(buf.str());
}

}  // namespace flowlab
