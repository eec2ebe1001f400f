#include <cmath>

#include "doctest.h"
#include "flowlab/bounds.hpp"
#include "flowlab/rng.hpp"
#include "flowlab/solvers.hpp"
#include "trained_fixture.hpp"

using namespace flowlab;

namespace {

FieldPtr simple_field(FieldSpec::Kind kind, double omega = 1.0) {
    FieldSpec s;
    s.kind = kind;
    s.omega = omega;
    if (kind == FieldSpec::Kind::Constant)
        s.constant = {0.4, -0.9};
    return make_field(s);
}

FieldPtr two_condition_field(FieldSpec::Kind base) {
    FieldSpec s;
    s.kind = base;
    if (base == FieldSpec::Kind::Constant)
        s.constant = {0.5, 0.2};
    s.omega = 1.0;
    s.radius = 2.0;
    s.label_offsets = {{0.6, 0.0}, {0.0, -0.5}};
    return make_field(s);
}

Region unit_region() {
    return Region{LatentState::flat({0.0, 0.0}), 1.0};
}

}  // namespace

TEST_CASE("lipschitz estimate on constant and skew fields") {
    FieldPtr c = simple_field(FieldSpec::Kind::Constant);
    CHECK(estimate_lipschitz(*c, Condition::null(), unit_region(), 1000, 1) == 0.0);

    FieldPtr skew = simple_field(FieldSpec::Kind::LinearSkew);
    const double a = estimate_lipschitz(*skew, Condition::null(), unit_region(), 10000, 11);
    const double b = estimate_lipschitz(*skew, Condition::null(), unit_region(), 10000, 77);
    CHECK(a >= 0.99);
    CHECK(a <= 1.0 + 1e-9);
    CHECK(std::abs(a - b) <= 0.02 * std::max(a, b));

    CHECK_THROWS_AS(estimate_lipschitz(*skew, Condition::null(), unit_region(), 100, 1),
                    std::invalid_argument);
}

TEST_CASE("curvature estimate matches closed forms") {
    FieldPtr c = simple_field(FieldSpec::Kind::Constant);
    SolverConfig cfg{SolverConfig::Method::Euler, 20, 0, Condition::null()};
    InvertResult cf = invert_euler(*c, LatentState::flat({0.2, 0.1}), cfg);
    CHECK(estimate_curvature(*c, cf.traj, 1000) == 0.0);

    FieldPtr skew = simple_field(FieldSpec::Kind::LinearSkew);
    InvertResult sf = invert_euler(*skew, LatentState::flat({1.0, 0.0}), cfg);
    CHECK(estimate_curvature(*skew, sf.traj, 2000) == doctest::Approx(1.0).epsilon(0.02));

    FieldSpec t;
    t.kind = FieldSpec::Kind::TimeCurved;
    t.amplitude = 0.7;
    t.frequency = 0.25;
    FieldPtr tc = make_field(t);
    InvertResult tf = invert_euler(*tc, LatentState::flat({0.3, 0.1}), cfg);
    const double closed = 2.0 * 3.14159265358979323846 * 0.25 * 0.7;
    CHECK(estimate_curvature(*tc, tf.traj, 4000) == doctest::Approx(closed).epsilon(0.05));

    Trajectory too_short = invert_euler(*skew, LatentState::flat({1, 0}),
                                        SolverConfig{SolverConfig::Method::Euler, 3, 0,
                                                     Condition::null()})
                               .traj;
    CHECK_THROWS_AS(estimate_curvature(*skew, too_short, 2000), std::invalid_argument);
}

TEST_CASE("estimates never exceed analytic certificates") {
    for (double omega : {0.5, 1.0, 2.0}) {
        FieldPtr skew = simple_field(FieldSpec::Kind::LinearSkew, omega);
        const double l_hat =
            estimate_lipschitz(*skew, Condition::null(), unit_region(), 4000, 13);
        CHECK(l_hat <= skew->lipschitz_bound().value() + 1e-6);
        SolverConfig cfg{SolverConfig::Method::Euler, 20, 0, Condition::null()};
        InvertResult fwd = invert_euler(*skew, LatentState::flat({1.0, 0.0}), cfg);
        CHECK(estimate_curvature(*skew, fwd.traj, 2000) <=
              skew->curvature_bound().value() + 1e-6);
    }
}

TEST_CASE("inversion bound values") {
    InversionBound zero = inversion_bound(1.0, 0.0, 10);
    CHECK(zero.finite == 0.0);
    CHECK(zero.exp == 0.0);

    InversionBound b = inversion_bound(1.0, 1.0, 10);
    CHECK(b.finite == doctest::Approx(0.1 * (std::pow(1.1, 10) - 1.0)).epsilon(1e-14));
    CHECK(b.finite == doctest::Approx(0.15937424601).epsilon(1e-9));
    CHECK(b.exp == doctest::Approx(0.1 * (std::exp(1.0) - 1.0)).epsilon(1e-14));
    CHECK(b.exp == doctest::Approx(0.171828182845).epsilon(1e-9));

    CHECK(inversion_bound(1.0, 1.0, 20).finite < inversion_bound(1.0, 1.0, 10).finite);

    InversionBound ext = inversion_bound(0.0, 2.0, 8);
    CHECK(ext.finite == doctest::Approx(2.0 / 8).epsilon(1e-15));
    CHECK(ext.exp == doctest::Approx(2.0 / 8).epsilon(1e-15));

    CHECK_THROWS_AS(inversion_bound(-1.0, 1.0, 10), std::invalid_argument);
    CHECK_THROWS_AS(inversion_bound(1.0, 1.0, 0), std::invalid_argument);

    Rng rng(15);
    for (int i = 0; i < 200; ++i) {
        InversionBound p = inversion_bound(rng.uniform(0.01, 5.0), rng.uniform(0.0, 5.0),
                                   1 + rng.uniform_int(60));
        CHECK(p.finite <= p.exp + 1e-12);
    }
}

TEST_CASE("editing bound values and convexity") {
    CHECK(editing_bound(1.0, 1.0, 0.0) == 0.0);
    CHECK(editing_bound(1.0, 1.0, 0.5) == doctest::Approx(std::exp(0.5) - 1.0).epsilon(1e-14));
    CHECK(editing_bound(1.0, 1.0, 0.5) == doctest::Approx(0.648721270700).epsilon(1e-9));
    CHECK(0.5 * (std::exp(1.0) - 1.0) == doctest::Approx(0.859140914230).epsilon(1e-9));
    CHECK(editing_bound(1.0, 1.0, 0.5) < 0.5 * editing_bound(1.0, 1.0, 1.0));
    CHECK(editing_bound(2.0, 1.5, 1.0) ==
          doctest::Approx(2.0 / 1.5 * (std::exp(1.5) - 1.0)).epsilon(1e-14));
    CHECK(editing_bound(3.0, 0.0, 0.25) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK_THROWS_AS(editing_bound(1.0, 1.0, 1.5), std::invalid_argument);

    for (double lips : {0.25, 1.0, 2.0, 4.0}) {
        const double b1 = editing_bound(1.0, lips, 1.0);
        for (int i = 1; i <= 99; ++i) {
            const double alpha = i / 100.0;
            CHECK(editing_bound(1.0, lips, alpha) < alpha * b1);
        }
    }
}

TEST_CASE("delta max vanishes for the identity edit") {
    FieldPtr f = two_condition_field(FieldSpec::Kind::LinearSkew);
    SolverConfig cfg{SolverConfig::Method::Euler, 20, 0, Condition::label(0)};
    InvertResult fwd = invert_euler(*f, LatentState::flat({0.5, 0.0}), cfg);
    CHECK(delta_max_hat(*f, fwd.traj, Condition::label(0), Condition::label(0), 1.0,
                        EditConfig::CfgMode::Standard) == 0.0);
}

TEST_CASE("delta max matches the constant-offset closed form and grows with w") {
    FieldPtr f = two_condition_field(FieldSpec::Kind::LinearSkew);
    SolverConfig cfg{SolverConfig::Method::Euler, 20, 0, Condition::label(0)};
    InvertResult fwd = invert_euler(*f, LatentState::flat({0.5, 0.0}), cfg);
    double prev = -1.0;
    for (double w : {1.0, 2.0, 3.0, 4.0}) {
        const double measured = delta_max_hat(*f, fwd.traj, Condition::label(0),
                                              Condition::label(1), w,
                                              EditConfig::CfgMode::Standard);
        // guided - source deviation is exactly w*b_tar - b_src at every state
        const double expected = std::hypot(-0.6, -0.5 * w);
        CHECK(measured == doctest::Approx(expected).epsilon(1e-12));
        CHECK(measured >= prev);
        prev = measured;
    }
}

TEST_CASE("delta max on the trained reference model is pinned") {
    const auto& ref = testfix::two_mixture_model();
    FieldPtr field = make_trained_field(ref.model);
    SolverConfig cfg{SolverConfig::Method::Afp, 50, 1, Condition::label(0)};
    InvertResult fwd = invert_afp(*field, LatentState::flat({-2.0, 0.2}), cfg);
    const double d = delta_max_hat(*field, fwd.traj, Condition::label(0), Condition::label(1),
                                   1.0, EditConfig::CfgMode::Standard);
    CHECK(d > 0.0);
    CHECK(d == doctest::Approx(7.348561).epsilon(0.10));  // reference-run regression pin
}

TEST_CASE("decomposition for the degenerate edit telescopes") {
    FieldPtr f = two_condition_field(FieldSpec::Kind::Constant);
    SolverConfig cfg{SolverConfig::Method::Euler, 16, 0, Condition::label(0)};
    InvertResult fwd = invert_euler(*f, LatentState::flat({0.3, 0.3}), cfg);
    EditConfig ec;
    ec.n_steps = 16;
    ec.w = 1.0;
    ec.alpha_override = 1.0;
    EditReport run = backward_edit(*f, fwd.traj, Condition::label(0), ec);
    Decomposition d = decomposition_accumulate(run, *f, 1.0);
    CHECK(d.lhs <= d.rhs + 1e-9);
    CHECK(d.lhs <= 1e-10);  // same condition, straight field: exact reconstruction
    // w = 1 removes the guidance term entirely
    CHECK(d.rhs == doctest::Approx(run.edit_traj.grid.dt() * d.v_delta_norm).epsilon(1e-14));
}

TEST_CASE("decomposition inequality holds on randomized uncontrolled edits") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        FieldSpec s;
        s.kind = trial % 2 == 0 ? FieldSpec::Kind::LinearSkew : FieldSpec::Kind::TimeCurved;
        s.omega = rng.uniform(0.3, 1.5);
        s.rot_rate = rng.uniform(0.0, 1.0);
        s.amplitude = rng.uniform(0.0, 1.0);
        s.frequency = rng.uniform(0.1, 1.0);
        s.label_offsets = {{rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)},
                           {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)}};
        FieldPtr f = make_field(s);
        const int n = 8 + 4 * rng.uniform_int(5);
        const double w = rng.uniform(1.0, 5.0);
        SolverConfig cfg{SolverConfig::Method::Euler, n, 0, Condition::label(0)};
        InvertResult fwd =
            invert_euler(*f, LatentState::flat({rng.uniform(-1, 1), rng.uniform(-1, 1)}), cfg);
        EditConfig ec;
        ec.n_steps = n;
        ec.w = w;
        ec.alpha_override = 1.0;
        EditReport run = backward_edit(*f, fwd.traj, Condition::label(1), ec);
        Decomposition d = decomposition_accumulate(run, *f, w);
        CHECK(d.lhs <= d.rhs + 1e-9);
    }
}

TEST_CASE("decomposition on the trained model is pinned") {
    const auto& ref = testfix::two_mixture_model();
    FieldPtr field = make_trained_field(ref.model);
    SolverConfig cfg{SolverConfig::Method::Afp, 50, 1, Condition::label(0)};
    InvertResult fwd = invert_afp(*field, LatentState::flat({-2.0, 0.2}), cfg);
    EditConfig ec;
    ec.n_steps = 50;
    ec.w = 3.0;
    ec.alpha_override = 1.0;
    EditReport run = backward_edit(*field, fwd.traj, Condition::label(1), ec);
    Decomposition d = decomposition_accumulate(run, *field, 3.0);
    CHECK(d.lhs <= d.rhs + 1e-9);
    CHECK(d.lhs == doctest::Approx(11.193928).epsilon(0.10));  // reference-run regression pin
    CHECK(d.rhs == doctest::Approx(11.196587).epsilon(0.10));
}

TEST_CASE("decomposition rejects runs without standard guidance or records") {
    FieldPtr f = two_condition_field(FieldSpec::Kind::LinearSkew);
    SolverConfig cfg{SolverConfig::Method::Euler, 10, 0, Condition::label(0)};
    InvertResult fwd = invert_euler(*f, LatentState::flat({0.5, 0.0}), cfg);
    EditConfig ec;
    ec.n_steps = 10;
    ec.cfg_mode = EditConfig::CfgMode::SourceAnchored;
    EditReport run = backward_edit(*f, fwd.traj, Condition::label(1), ec);
    CHECK_THROWS_AS(decomposition_accumulate(run, *f, ec.w), std::invalid_argument);

    EditReport empty;
    CHECK_THROWS_AS(decomposition_accumulate(empty, *f, 1.0), std::invalid_argument);
}

TEST_CASE("constant-alpha edits respect the editing bound") {
    for (auto base : {FieldSpec::Kind::Constant, FieldSpec::Kind::LinearSkew}) {
        FieldPtr f = two_condition_field(base);
        const double lips = f->lipschitz_bound().value();
        const int n = 50;
        const double w = 2.0;
        SolverConfig cfg{SolverConfig::Method::Euler, n, 0, Condition::label(0)};
        InvertResult fwd = invert_euler(*f, LatentState::flat({0.5, 0.0}), cfg);
        const double delta = delta_max_hat(*f, fwd.traj, Condition::label(0),
                                           Condition::label(1), w,
                                           EditConfig::CfgMode::Standard);
        for (double alpha : {0.1, 0.25, 0.5, 0.75, 0.9}) {
            EditConfig ec;
            ec.n_steps = n;
            ec.w = w;
            ec.alpha_override = alpha;
            EditReport run = backward_edit(*f, fwd.traj, Condition::label(1), ec);
            const double measured = distance(run.edited, fwd.traj.states[0]);
            CHECK(measured <= editing_bound(delta, lips, alpha) + 1e-6);
        }
    }
}

TEST_CASE("bounds report aggregates rows") {
    BoundsReport report;
    report.rows.push_back({"inversion_bound", "case", 0.1, 0.2, true});
    CHECK(report.all_pass());
    report.rows.push_back({"edit_decomposition", "case", 0.3, 0.2, false});
    CHECK(!report.all_pass());
    nlohmann::json j = report.to_json();
    CHECK(j.at("rows").size() == 2);
    CHECK(j.at("all_pass") == false);
}
