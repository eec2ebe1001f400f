#include "flowlab/harness.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "flowlab/cfm.hpp"
#include "flowlab/rng.hpp"

namespace flowlab {

namespace fs = std::filesystem;
using nlohmann::json;

std::string csv_number(double v) {
    return json(v).dump();
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << text;
}

void write_csv(const fs::path& path, const std::string& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::string text = header + "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i)
                text += ',';
            text += row[i];
        }
        text += '\n';
    }
    write_text(path, text);
}

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&tt, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

struct RunContext {
    const json& config;
    fs::path out;
    std::uint64_t seed = 0;
};

FieldPtr field_from_config(const json& config) {
    if (!config.contains("field"))
        throw std::invalid_argument("config needs a 'field' section");
    return make_field(FieldSpec::from_json(config.at("field")));
}

Condition condition_or_null(const json& config, const char* key) {
    if (!config.contains(key) || config.at(key).is_null())
        return Condition::null();
    return condition_from_json(config.at(key));
}

}  // namespace

SolverConfig solver_from_json(const json& j) {
    SolverConfig cfg;
    const std::string method = j.value("method", std::string("euler"));
    if (method == "euler")
        cfg.method = SolverConfig::Method::Euler;
    else if (method == "fixed_point")
        cfg.method = SolverConfig::Method::FixedPoint;
    else if (method == "afp")
        cfg.method = SolverConfig::Method::Afp;
    else if (method == "midpoint")
        cfg.method = SolverConfig::Method::Midpoint;
    else
        throw std::invalid_argument("unknown solver method '" + method + "'");
    cfg.n_steps = j.value("n_steps", cfg.n_steps);
    cfg.k = j.value("k", cfg.k);
    if (j.contains("condition"))
        cfg.condition = condition_from_json(j.at("condition"));
    if (cfg.n_steps < 1)
        throw std::invalid_argument("solver n_steps must be >= 1");
    if ((cfg.method == SolverConfig::Method::FixedPoint ||
         cfg.method == SolverConfig::Method::Afp) &&
        cfg.k < 1)
        throw std::invalid_argument("solver K must be >= 1");
    return cfg;
}

json solver_to_json(const SolverConfig& cfg) {
    std::string method;
    switch (cfg.method) {
        case SolverConfig::Method::Euler: method = "euler"; break;
        case SolverConfig::Method::FixedPoint: method = "fixed_point"; break;
        case SolverConfig::Method::Afp: method = "afp"; break;
        case SolverConfig::Method::Midpoint: method = "midpoint"; break;
    }
    return json{{"method", method},
                {"n_steps", cfg.n_steps},
                {"k", cfg.k},
                {"condition", condition_to_json(cfg.condition)}};
}

LatentState resolve_initial_state(const json& config, std::uint64_t seed) {
    Layout layout = Layout::flat(2);
    if (config.contains("layout"))
        layout = layout_from_json(config.at("layout"));

    if (config.contains("z0") && config.at("z0").is_array()) {
        auto values = config.at("z0").get<std::vector<double>>();
        if (!config.contains("layout"))
            layout = Layout::flat(static_cast<int>(values.size()));
        if (static_cast<int>(values.size()) != layout.size())
            throw std::invalid_argument("z0 has " + std::to_string(values.size()) +
                                        " values but layout is " + layout.str());
        LatentState z{layout, std::move(values)};
        ensure_finite(z, "z0");
        return z;
    }

    std::string sample = "gaussian";
    double amp = 1.0;
    if (config.contains("z0")) {
        const json& jz = config.at("z0");
        sample = jz.value("kind", sample);
        amp = jz.value("scale", amp);
    }
    if (sample != "gaussian" && sample != "sphere")
        throw std::invalid_argument("unknown z0 sampling kind '" + sample + "'");
    Rng rng(seed ^ 0x5EEDFACE12345678ULL);
    LatentState z = LatentState::zeros(layout);
    for (double& v : z.values)
        v = rng.normal();
    if (sample == "sphere") {
        const double n = norm(z);
        if (n > 1e-12)
            amp /= n;
    }
    return scale(z, amp);
}

namespace {

json latent_json(const LatentState& z) {
    return json{{"layout", layout_to_json(z.layout)}, {"values", z.values}};
}

json run_invert(const RunContext& ctx) {
    FieldPtr field = field_from_config(ctx.config);
    SolverConfig solver = solver_from_json(ctx.config.value("solver", json::object()));
    LatentState z0 = resolve_initial_state(ctx.config, ctx.seed);

    InvertResult result = invert(*field, z0, solver);
    if (result.nfe != forward_nfe(solver.method, solver.n_steps, solver.k))
        throw std::runtime_error("invert: NFE accounting mismatch");
    save_trajectory(result.traj, (ctx.out / "trajectory.jsonl").string());

    return json{{"kind", "invert"},
                {"solver", solver_to_json(solver)},
                {"nfe", result.nfe},
                {"endpoint", latent_json(result.traj.states.back())}};
}

json run_reconstruct(const RunContext& ctx) {
    FieldPtr field = field_from_config(ctx.config);
    SolverConfig solver = solver_from_json(ctx.config.value("solver", json::object()));
    LatentState z0 = resolve_initial_state(ctx.config, ctx.seed);

    InvertResult fwd = invert(*field, z0, solver);
    save_trajectory(fwd.traj, (ctx.out / "forward_trajectory.jsonl").string());
    ReconReport recon =
        reconstruct(*field, fwd.traj.states.back(), solver.condition, solver.n_steps, &z0);

    return json{{"kind", "reconstruct"},
                {"solver", solver_to_json(solver)},
                {"error", recon.error},
                {"forward_nfe", fwd.nfe},
                {"backward_nfe", recon.nfe},
                {"z0_hat", latent_json(recon.z0_hat)}};
}

EditConfig edit_config_from(const json& config) {
    json base = json::object();
    if (config.contains("edit_preset")) {
        const std::string preset = config.at("edit_preset").get<std::string>();
        if (preset == "high-cfg")
            base = preset_high_cfg().to_json();
        else if (preset == "low-cfg")
            base = preset_low_cfg().to_json();
        else
            throw std::invalid_argument("unknown edit preset '" + preset + "'");
    }
    if (config.contains("edit"))
        base.update(config.at("edit"));
    return EditConfig::from_json(base);
}

json run_edit(const RunContext& ctx) {
    FieldPtr field = field_from_config(ctx.config);
    EditConfig edit_cfg = edit_config_from(ctx.config);
    const Condition c_src = condition_or_null(ctx.config, "source_condition");
    const Condition c_tar = condition_or_null(ctx.config, "target_condition");
    LatentState z0 = resolve_initial_state(ctx.config, ctx.seed);

    SolverConfig solver{SolverConfig::Method::Afp, edit_cfg.n_steps, 1, c_src};
    if (ctx.config.contains("solver")) {
        solver = solver_from_json(ctx.config.at("solver"));
        solver.condition = c_src;
        solver.n_steps = edit_cfg.n_steps;
    }

    InvertResult fwd = invert(*field, z0, solver);
    save_trajectory(fwd.traj, (ctx.out / "source_trajectory.jsonl").string());
    EditReport report = backward_edit(*field, fwd.traj, c_tar, edit_cfg);
    save_trajectory(report.edit_traj, (ctx.out / "edit_trajectory.jsonl").string());
    write_text(ctx.out / "edit_report.json", report.to_json().dump(2) + "\n");

    return json{{"kind", "edit"},
                {"solver", solver_to_json(solver)},
                {"forward_nfe", fwd.nfe},
                {"report", report.to_json()},
                {"dev_source", distance(report.edited, fwd.traj.states[0])}};
}

json run_multiturn(const RunContext& ctx) {
    FieldPtr field = field_from_config(ctx.config);
    EditConfig base_cfg = edit_config_from(ctx.config);
    const Condition c_src = condition_or_null(ctx.config, "source_condition");
    LatentState z0 = resolve_initial_state(ctx.config, ctx.seed);

    if (!ctx.config.contains("turns") || !ctx.config.at("turns").is_array() ||
        ctx.config.at("turns").empty())
        throw std::invalid_argument("multiturn config needs a nonempty 'turns' array");
    std::vector<EditTurn> turns;
    for (const auto& tj : ctx.config.at("turns")) {
        EditTurn turn;
        turn.c_tar = condition_from_json(tj.at("target_condition"));
        turn.gamma = tj.value("gamma", base_cfg.gamma);
        if (tj.contains("mask") && !tj.at("mask").is_null())
            turn.mask = MaskConfig::from_json(tj.at("mask"));
        turns.push_back(std::move(turn));
    }
    const int afp_k = ctx.config.value("afp_k", 1);

    auto reports = multi_turn_edit(*field, z0, c_src, turns, base_cfg, afp_k);

    json turn_rows = json::array();
    const LatentState* prev = &z0;
    for (size_t k = 0; k < reports.size(); ++k) {
        save_trajectory(reports[k].edit_traj,
                        (ctx.out / ("turn_" + std::to_string(k) + "_trajectory.jsonl")).string());
        turn_rows.push_back(json{{"turn", k},
                                 {"final_state", latent_json(reports[k].edited)},
                                 {"dev_from_prev", distance(reports[k].edited, *prev)},
                                 {"dev_from_source", distance(reports[k].edited, z0)},
                                 {"nfe", reports[k].nfe}});
        prev = &reports[k].edited;
    }
    return json{{"kind", "multiturn"}, {"turns", turn_rows}};
}

struct BenchDefaults {
    FieldSpec spec;
    LatentState z0;
    Condition condition;
};

BenchDefaults bench_defaults(const RunContext& ctx) {
    BenchDefaults d{FieldSpec{}, LatentState::flat({1.0, 0.0}), Condition::null()};
    d.spec.kind = FieldSpec::Kind::LinearSkew;
    d.spec.omega = 1.0;
    d.spec.radius = 1.0;
    if (ctx.config.contains("field"))
        d.spec = FieldSpec::from_json(ctx.config.at("field"));
    if (ctx.config.contains("z0") || ctx.config.contains("layout"))
        d.z0 = resolve_initial_state(ctx.config, ctx.seed);
    d.condition = condition_or_null(ctx.config, "condition");
    return d;
}

json run_bench(const RunContext& ctx) {
    BenchDefaults d = bench_defaults(ctx);
    FieldPtr field = make_field(d.spec);
    const auto n_values = ctx.config.value("n_values", std::vector<int>{5, 10, 20, 40});
    const auto k_values = ctx.config.value("k_values", std::vector<int>{1, 2, 4, 8});

    const auto lips = field->lipschitz_bound();
    const auto curv = field->curvature_bound();

    std::vector<std::vector<std::string>> rows;
    json row_json = json::array();
    auto add_row = [&](const std::string& method, SolverConfig::Method m, int k, int n) {
        SolverConfig cfg{m, n, k, d.condition};
        InvertResult fwd = invert(*field, d.z0, cfg);
        if (fwd.nfe != forward_nfe(m, n, k))
            throw std::runtime_error("bench: NFE accounting mismatch for " + method);
        ReconReport recon = reconstruct(*field, fwd.traj.states.back(), d.condition, n, &d.z0);
        std::string bound_str, pass_str = "na";
        json jrow{{"method", method}, {"k", k}, {"n", n}, {"nfe", fwd.nfe},
                  {"error", recon.error}};
        if (lips && curv) {
            const InversionBound b = inversion_bound(*lips, *curv, n);
            bound_str = csv_number(b.finite);
            const bool pass = recon.error <= b.finite + 1e-9;
            pass_str = pass ? "true" : "false";
            jrow["bound"] = b.finite;
            jrow["pass"] = pass;
        }
        rows.push_back({method, std::to_string(k), std::to_string(n),
                        std::to_string(fwd.nfe), csv_number(recon.error), bound_str, pass_str});
        row_json.push_back(std::move(jrow));
    };

    for (int n : n_values) {
        add_row("euler", SolverConfig::Method::Euler, 0, n);
        for (int k : k_values)
            add_row("fixed_point", SolverConfig::Method::FixedPoint, k, n);
        for (int k : k_values)
            add_row("afp", SolverConfig::Method::Afp, k, n);
        add_row("midpoint", SolverConfig::Method::Midpoint, 0, n);
    }
    write_csv(ctx.out / "bench.csv", "method,K,N,nfe,error,bound,pass", rows);
    return json{{"kind", "bench"}, {"field", d.spec.to_json()}, {"rows", row_json}};
}

// Analytic zoo used by the bound-verification suite.
struct CertifiedCase {
    std::string label;
    FieldSpec spec;
    LatentState z0;
};

std::vector<CertifiedCase> certified_zoo_cases() {
    std::vector<CertifiedCase> cases;
    {
        CertifiedCase c{"constant", FieldSpec{}, LatentState::flat({0.3, 0.2})};
        c.spec.kind = FieldSpec::Kind::Constant;
        c.spec.constant = {0.7, -0.4};
        cases.push_back(std::move(c));
    }
    for (double omega : {0.5, 1.0, 2.0}) {
        CertifiedCase c{"linear_skew_w" + csv_number(omega), FieldSpec{}, LatentState::flat({1.0, 0.0})};
        c.spec.kind = FieldSpec::Kind::LinearSkew;
        c.spec.omega = omega;
        c.spec.radius = 1.0;
        cases.push_back(std::move(c));
    }
    {
        CertifiedCase c{"time_curved_pure", FieldSpec{}, LatentState::flat({0.6, -0.8})};
        c.spec.kind = FieldSpec::Kind::TimeCurved;
        c.spec.amplitude = 1.0;
        c.spec.frequency = 0.25;
        c.spec.radius = 1.0;
        cases.push_back(std::move(c));
    }
    {
        CertifiedCase c{"time_curved_mixed", FieldSpec{}, LatentState::flat({0.6, -0.8})};
        c.spec.kind = FieldSpec::Kind::TimeCurved;
        c.spec.rot_rate = 1.0;
        c.spec.amplitude = 0.5;
        c.spec.frequency = 0.5;
        c.spec.radius = 1.0;
        cases.push_back(std::move(c));
    }
    return cases;
}

// Two-condition fields for the Prop 2/3 suites: a base field plus constant
// per-label offsets, so the guided-vs-source deviation is exactly
// w * b_tar - b_src at every state.
FieldSpec two_condition_spec(FieldSpec::Kind base_kind, double omega) {
    FieldSpec spec;
    spec.kind = base_kind;
    if (base_kind == FieldSpec::Kind::Constant)
        spec.constant = {0.5, 0.2};
    spec.omega = omega;
    spec.radius = 2.0;
    spec.label_offsets = {{0.6, 0.0}, {0.0, -0.5}};
    return spec;
}

double analytic_delta_max(const FieldSpec& spec, double w) {
    const auto& b_src = spec.label_offsets.at(0);
    const auto& b_tar = spec.label_offsets.at(1);
    double acc = 0.0;
    for (size_t j = 0; j < b_src.size(); ++j) {
        const double d = w * b_tar[j] - b_src[j];
        acc += d * d;
    }
    return std::sqrt(acc);
}

json run_verify_bounds(const RunContext& ctx) {
    BoundsReport report;

    // Euler reconstruction error vs. the finite-N inversion bound.
    for (const auto& c : certified_zoo_cases()) {
        FieldPtr field = make_field(c.spec);
        const double lips = field->lipschitz_bound().value();
        const double curv = field->curvature_bound().value();
        for (int n : {5, 10, 20, 40}) {
            SolverConfig cfg{SolverConfig::Method::Euler, n, 0, Condition::null()};
            InvertResult fwd = invert_euler(*field, c.z0, cfg);
            ReconReport recon =
                reconstruct(*field, fwd.traj.states.back(), Condition::null(), n, &c.z0);
            const InversionBound b = inversion_bound(lips, curv, n);
            report.rows.push_back({"inversion_bound", c.label + " N=" + std::to_string(n), recon.error,
                                   b.finite, recon.error <= b.finite + 1e-9});
            report.rows.push_back({"inversion_bound_form", c.label + " N=" + std::to_string(n), b.finite,
                                   b.exp, b.finite <= b.exp + 1e-12});
        }
    }

    // Deviation decomposition on randomized uncontrolled edits (alpha = 1).
    const int decomposition_runs = ctx.config.value("decomposition_runs", 10);
    Rng rng(ctx.seed ^ 0xB0741234ABCD5678ULL);
    for (int r = 0; r < decomposition_runs; ++r) {
        FieldSpec spec;
        const int pick = rng.uniform_int(3);
        if (pick == 0) {
            spec.kind = FieldSpec::Kind::Constant;
            spec.constant = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        } else if (pick == 1) {
            spec.kind = FieldSpec::Kind::LinearSkew;
            spec.omega = rng.uniform(0.3, 1.5);
        } else {
            spec.kind = FieldSpec::Kind::TimeCurved;
            spec.rot_rate = rng.uniform(0.0, 1.0);
            spec.amplitude = rng.uniform(0.0, 1.0);
            spec.frequency = rng.uniform(0.1, 1.0);
        }
        spec.label_offsets = {{rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)},
                              {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)}};
        FieldPtr field = make_field(spec);
        LatentState z0 = LatentState::flat({rng.uniform(-1, 1), rng.uniform(-1, 1)});
        const int n = 8 * (1 + rng.uniform_int(3));
        const double w = rng.uniform(1.0, 5.0);

        SolverConfig fwd_cfg{SolverConfig::Method::Euler, n, 0, Condition::label(0)};
        InvertResult fwd = invert_euler(*field, z0, fwd_cfg);
        EditConfig edit_cfg;
        edit_cfg.w = w;
        edit_cfg.n_steps = n;
        edit_cfg.alpha_override = 1.0;
        EditReport run = backward_edit(*field, fwd.traj, Condition::label(1), edit_cfg);
        Decomposition dec = decomposition_accumulate(run, *field, w);
        report.rows.push_back({"edit_decomposition", "run" + std::to_string(r), dec.lhs, dec.rhs,
                               dec.lhs <= dec.rhs + 1e-9});
    }

    // Constant-alpha edits vs. B(alpha) with analytic delta_max.
    const double w3 = 2.0;
    for (auto base : {FieldSpec::Kind::Constant, FieldSpec::Kind::LinearSkew}) {
        FieldSpec spec = two_condition_spec(base, 1.0);
        FieldPtr field = make_field(spec);
        const double lips = field->lipschitz_bound().value();
        const std::string label_base =
            base == FieldSpec::Kind::Constant ? "constant_base" : "skew_base";
        LatentState z0 = LatentState::flat({0.5, 0.0});
        const int n = 50;
        SolverConfig fwd_cfg{SolverConfig::Method::Euler, n, 0, Condition::label(0)};
        InvertResult fwd = invert_euler(*field, z0, fwd_cfg);
        const double delta = analytic_delta_max(spec, w3);
        const double measured_delta =
            delta_max_hat(*field, fwd.traj, Condition::label(0), Condition::label(1), w3,
                          EditConfig::CfgMode::Standard);
        report.rows.push_back({"editing_delta_max", label_base, measured_delta, delta + 1e-9,
                               std::abs(measured_delta - delta) <= 1e-9});
        for (double alpha : {0.1, 0.25, 0.5, 0.75, 0.9}) {
            EditConfig edit_cfg;
            edit_cfg.w = w3;
            edit_cfg.n_steps = n;
            edit_cfg.alpha_override = alpha;
            EditReport run = backward_edit(*field, fwd.traj, Condition::label(1), edit_cfg);
            const double measured = distance(run.edited, fwd.traj.states[0]);
            const double bound = editing_bound(delta, lips, alpha);
            report.rows.push_back({"editing_bound", label_base + " alpha=" + csv_number(alpha), measured,
                                   bound, measured <= bound + 1e-6});
        }
        if (base == FieldSpec::Kind::LinearSkew) {
            report.delta_max = delta;
            for (int i = 1; i <= 99; ++i)
                report.editing_curve.emplace_back(i / 100.0,
                                                editing_bound(delta, lips, i / 100.0));
        }
    }

    // Convexity gap B(alpha) < alpha * B(1) on a dense grid across L values.
    {
        bool pass = true;
        double worst_gap = -1.0;
        for (double lips : {0.25, 1.0, 2.0, 4.0}) {
            const double b1 = editing_bound(1.0, lips, 1.0);
            for (int i = 1; i <= 99; ++i) {
                const double alpha = i / 100.0;
                const double gap = editing_bound(1.0, lips, alpha) - alpha * b1;
                worst_gap = std::max(worst_gap, gap);
                pass = pass && gap < 0.0;
            }
        }
        report.rows.push_back({"editing_bound_convexity", "grid99", worst_gap, 0.0, pass});
    }

    // Headline estimates for the skew field.
    {
        FieldSpec spec;
        spec.kind = FieldSpec::Kind::LinearSkew;
        spec.omega = 1.0;
        spec.radius = 1.0;
        FieldPtr field = make_field(spec);
        Region region{LatentState::flat({0.0, 0.0}), 1.0};
        report.l_hat = estimate_lipschitz(*field, Condition::null(), region, 2000, ctx.seed + 1);
        SolverConfig cfg{SolverConfig::Method::Euler, 40, 0, Condition::null()};
        InvertResult fwd = invert_euler(*field, LatentState::flat({1.0, 0.0}), cfg);
        report.m_hat = estimate_curvature(*field, fwd.traj, 2000);
        const InversionBound b = inversion_bound(1.0, 1.0, 20);
        report.inversion_finite = b.finite;
        report.inversion_exp = b.exp;
    }

    std::vector<std::vector<std::string>> rows;
    for (const auto& row : report.rows)
        rows.push_back({row.prop, row.label, csv_number(row.measured), csv_number(row.bound),
                        row.pass ? "true" : "false"});
    write_csv(ctx.out / "verify_bounds.csv", "prop,label,measured,bound,pass", rows);
    write_text(ctx.out / "bounds_report.json", report.to_json().dump(2) + "\n");
    return json{{"kind", "verify-bounds"}, {"report", report.to_json()}};
}

json run_sweep(const RunContext& ctx) {
    const std::string sweep_kind = ctx.config.value("sweep_kind", std::string("alpha_schedulers"));

    // default sweep field: offsets chosen so source and guided target
    // velocities stay mildly aligned and the cosine-gated variants engage
    FieldSpec spec = two_condition_spec(FieldSpec::Kind::LinearSkew, 1.0);
    spec.label_offsets = {{0.6, 0.0}, {0.3, -0.45}};
    if (ctx.config.contains("field"))
        spec = FieldSpec::from_json(ctx.config.at("field"));
    FieldPtr field = make_field(spec);
    const Condition c_src = ctx.config.contains("source_condition")
                                ? condition_from_json(ctx.config.at("source_condition"))
                                : Condition::label(0);
    const Condition c_tar = ctx.config.contains("target_condition")
                                ? condition_from_json(ctx.config.at("target_condition"))
                                : Condition::label(1);
    LatentState z0 = ctx.config.contains("z0") || ctx.config.contains("layout")
                         ? resolve_initial_state(ctx.config, ctx.seed)
                         : LatentState::flat({0.5, 0.0});

    EditConfig base = edit_config_from(ctx.config);
    SolverConfig fwd_cfg{SolverConfig::Method::Afp, base.n_steps, 1, c_src};
    InvertResult fwd = invert(*field, z0, fwd_cfg);

    auto run_variant = [&](EditConfig cfg) {
        EditReport rep = backward_edit(*field, fwd.traj, c_tar, cfg);
        return rep.edited;
    };
    EditConfig uncontrolled = base;
    uncontrolled.alpha_override = 1.0;
    const LatentState target_attractor = run_variant(uncontrolled);
    const LatentState& source = fwd.traj.states[0];

    std::vector<std::vector<std::string>> rows;
    json row_json = json::array();
    auto add_row = [&](const std::string& name, const EditConfig& cfg, double g, double w) {
        const LatentState edited = run_variant(cfg);
        const double dev_source = distance(edited, source);
        const double dev_target = distance(edited, target_attractor);
        if (sweep_kind == "gamma_w")
            rows.push_back({csv_number(g), csv_number(w), csv_number(dev_source),
                            csv_number(dev_target)});
        else
            rows.push_back({name, csv_number(dev_source), csv_number(dev_target)});
        row_json.push_back(json{{"variant", name},
                                {"gamma", g},
                                {"w", w},
                                {"dev_source", dev_source},
                                {"dev_target", dev_target}});
    };

    if (sweep_kind == "alpha_schedulers") {
        for (double a : {0.1, 0.5, 0.9}) {
            EditConfig cfg = base;
            cfg.alpha_override = a;
            add_row("fixed_" + csv_number(a), cfg, base.gamma, base.w);
        }
        for (auto [name, sched] :
             std::vector<std::pair<std::string, EditConfig::AlphaScheduler>>{
                 {"time_decay_only", EditConfig::AlphaScheduler::TimeDecayOnly},
                 {"cosine_only", EditConfig::AlphaScheduler::CosineOnly},
                 {"time_decay_x_cosine", EditConfig::AlphaScheduler::CosineTimeDecay}}) {
            EditConfig cfg = base;
            cfg.scheduler = sched;
            add_row(name, cfg, base.gamma, base.w);
        }
        write_csv(ctx.out / "sweep.csv", "variant,dev_source,dev_target", rows);
    } else if (sweep_kind == "gamma_w") {
        const auto gammas = ctx.config.value("gammas", std::vector<double>{2.0, 4.5, 6.5});
        const auto ws = ctx.config.value("ws", std::vector<double>{1.5, 3.5, 6.5});
        for (double g : gammas)
            for (double w : ws) {
                EditConfig cfg = base;
                cfg.gamma = g;
                cfg.w = w;
                add_row("gamma_w", cfg, g, w);
            }
        write_csv(ctx.out / "sweep.csv", "gamma,w,dev_source,dev_target", rows);
    } else {
        throw std::invalid_argument("unknown sweep_kind '" + sweep_kind + "'");
    }
    return json{{"kind", "sweep"}, {"sweep_kind", sweep_kind}, {"rows", row_json}};
}

json run_train(const RunContext& ctx) {
    if (!ctx.config.contains("dataset"))
        throw std::invalid_argument("train config needs a 'dataset' section");
    DatasetSpec dataset = DatasetSpec::from_json(ctx.config.at("dataset"));
    TrainConfig train_cfg = TrainConfig::from_json(ctx.config.value("train", json::object()));

    TrainResult result = cfm_train(dataset, train_cfg);
    save_cfm_checkpoint(result.model, (ctx.out / "checkpoint.json").string());
    return json{{"kind", "train"},
                {"initial_heldout_loss", result.initial_heldout_loss},
                {"final_heldout_loss", result.final_heldout_loss},
                {"param_count", result.model.param_count()},
                {"dim", result.model.dim},
                {"n_labels", result.model.n_labels}};
}

json run_grad_check(const RunContext& ctx) {
    CfmModel model;
    if (ctx.config.contains("checkpoint")) {
        model = load_cfm_checkpoint(ctx.config.at("checkpoint").get<std::string>());
    } else if (ctx.config.contains("dataset")) {
        DatasetSpec dataset = DatasetSpec::from_json(ctx.config.at("dataset"));
        TrainConfig cfg = TrainConfig::from_json(ctx.config.value("train", json::object()));
        model = CfmModel::init(dataset.dim(), static_cast<int>(dataset.components.size()), cfg);
        model.dataset = dataset;
    } else {
        throw std::invalid_argument("grad-check config needs 'checkpoint' or 'dataset'");
    }
    Rng rng(ctx.seed ^ 0x6D4DC4EC12345678ULL);
    const int batch_size = std::min(8, ctx.config.value("batch_size", 4));
    const auto batch = sample_batch(model.dataset, batch_size, rng);
    const int entries = ctx.config.value("entries", 64);
    const double err = cfm_grad_check(model, batch, entries, ctx.seed + 7);
    return json{{"kind", "grad-check"}, {"max_rel_error", err}, {"entries", entries},
                {"batch_size", batch_size}};
}

}  // namespace

RunOutcome run(const json& config, const std::string& out_dir) {
    RunOutcome outcome{0, "", out_dir};
    fs::path out(out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) {
        outcome.exit_code = 2;
        outcome.error = "cannot create output directory '" + out_dir + "'";
        return outcome;
    }

    std::uint64_t seed = 0;
    std::string kind;
    try {
        seed = config.value("seed", 0);
        kind = config.at("kind").get<std::string>();
    } catch (const std::exception& e) {
        outcome.exit_code = 2;
        outcome.error = std::string("invalid config: ") + e.what();
        write_text(out / "error.json",
                   json{{"error", outcome.error}, {"exit_code", 2}}.dump(2) + "\n");
        return outcome;
    }

    write_text(out / "manifest.json", json{{"version", kVersion},
                                           {"kind", kind},
                                           {"seed", seed},
                                           {"timestamp", now_iso8601()},
                                           {"config", config}}
                                          .dump(2) +
                                          "\n");

    RunContext ctx{config, out, seed};
    json result;
    try {
        if (kind == "invert")
            result = run_invert(ctx);
        else if (kind == "reconstruct")
            result = run_reconstruct(ctx);
        else if (kind == "edit")
            result = run_edit(ctx);
        else if (kind == "multiturn")
            result = run_multiturn(ctx);
        else if (kind == "bench")
            result = run_bench(ctx);
        else if (kind == "verify-bounds")
            result = run_verify_bounds(ctx);
        else if (kind == "sweep")
            result = run_sweep(ctx);
        else if (kind == "train")
            result = run_train(ctx);
        else if (kind == "grad-check")
            result = run_grad_check(ctx);
        else
            throw std::invalid_argument("unknown run kind '" + kind + "'");
    } catch (const json::exception& e) {
        outcome.exit_code = 2;
        outcome.error = std::string("invalid config: ") + e.what();
    } catch (const std::invalid_argument& e) {
        outcome.exit_code = 2;
        outcome.error = std::string("invalid config: ") + e.what();
    } catch (const std::exception& e) {
        outcome.exit_code = 3;
        outcome.error = std::string("numerical failure: ") + e.what();
    }

    if (outcome.exit_code != 0) {
        write_text(out / "error.json",
                   json{{"error", outcome.error}, {"exit_code", outcome.exit_code}}.dump(2) +
                       "\n");
        return outcome;
    }
    result["seed"] = seed;
    write_text(out / "result.json", result.dump(2) + "\n");
    return outcome;
}

double compare_trajectories(const std::string& path_a, const std::string& path_b) {
    Trajectory a = load_trajectory(path_a);
    Trajectory b = load_trajectory(path_b);
    if (a.grid.n_steps != b.grid.n_steps)
        throw std::invalid_argument("compare_trajectories: step count mismatch");
    if (!(a.states[0].layout == b.states[0].layout))
        throw std::invalid_argument("compare_trajectories: layout mismatch");
    double worst = 0.0;
    for (int i = 0; i <= a.grid.n_steps; ++i)
        worst = std::max(worst, distance(a.states[i], b.states[i]));
    return worst;
}

}  // namespace flowlab
