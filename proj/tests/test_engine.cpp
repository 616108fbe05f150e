#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vsdr/control.hpp"
#include "vsdr/engine.hpp"
#include "vsdr/errors.hpp"
#include "vsdr/grid.hpp"
#include "vsdr/plant.hpp"

#include <cmath>
#include <sstream>

using namespace vsdr;

namespace {
const ModelParameters P;

engine::OperatingPoint nominal() {
    static engine::OperatingPoint op = engine::solve_operating_point(P);
    return op;
}
} // namespace

TEST_CASE("nominal equilibrium anchors") {
    auto op = nominal();
    // the thermal balance pins the speed: a2 w^2 + a1 w + a0 = (T_a - T_f*)/r_th
    double target = (32.0 - 3.0) / 55.0;
    double disc = 1.583 * 1.583 - 4.0 * -0.295 * (-0.075 - target);
    double w_ref = (-1.583 + std::sqrt(disc)) / (2.0 * -0.295);
    CHECK(op.x[ix::w_m] == doctest::Approx(w_ref).epsilon(1e-12));
    CHECK(op.x[ix::w_m] == doctest::Approx(0.41211285).epsilon(1e-7));
    CHECK(op.x[ix::T_f] == doctest::Approx(3.0).epsilon(1e-10));
    CHECK(op.x[ix::v_dc] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(op.x[ix::i_q] == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(op.x[ix::dw_g] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(op.u[ix::p_t0] == doctest::Approx(0.086959534).epsilon(1e-7));
    CHECK(op.u[ix::p_m0] == doctest::Approx(1.0043479767).epsilon(1e-9));
    CHECK(op.u[ix::p_m0] == doctest::Approx(1.0 + 0.05 * op.u[ix::p_t0]).epsilon(1e-12));
    CHECK(engine::equilibrium_residual(op.x, op.u, P) < 1e-8);

    // motor-side balance recomputed by hand
    auto ss = plant::compressor_steady_state(op.x[ix::w_m], P.thermal);
    double i_m = (ss.t_c0 + 0.0987 * op.x[ix::w_m]) / 0.7398;
    CHECK(op.x[ix::i_m] == doctest::Approx(i_m).epsilon(1e-9));
    CHECK(op.x[ix::i_m] == doctest::Approx(0.8358).epsilon(1e-3));
}

TEST_CASE("equilibrium under the reduced rectifier in-feed factor") {
    ModelParameters q = P;
    q.opts.dc_link_factor = 0.5;
    auto op = engine::solve_operating_point(q);
    CHECK(op.x[ix::i_d] == doctest::Approx(0.3708224081577782).epsilon(1e-10));
    CHECK(op.u[ix::p_t0] == doctest::Approx(0.26142979775123365).epsilon(1e-10));
    CHECK(engine::equilibrium_residual(op.x, op.u, q) < 1e-8);
}

TEST_CASE("derivative structure at the equilibrium") {
    auto op = nominal();
    Vec21 dx = engine::assemble_derivative(op.x, op.u, P);
    // every slot except the freely advancing angles vanishes
    for (int i = 0; i < 21; ++i) {
        if (i == ix::th_g || i == ix::th_hat) continue;
        CHECK(std::abs(dx[i]) < 1e-8);
    }
    // both angles advance at the nominal electrical speed
    CHECK(dx[ix::th_g] == doctest::Approx(314.16).epsilon(1e-9));
    CHECK(dx[ix::th_hat] == doctest::Approx(314.16).epsilon(1e-6));

    // single-state sensitivities with everything else untouched
    Vec21 x = op.x;
    x[ix::T_f] += 1.0;
    Vec21 d2 = engine::assemble_derivative(x, op.u, P);
    CHECK(d2[ix::T_f] - dx[ix::T_f] == doctest::Approx(-1.0 / (55.0 * 454.6)).epsilon(1e-9));
    CHECK(d2[ix::q_th] == doctest::Approx(dx[ix::q_th]).epsilon(1e-12)); // map is speed-only
    CHECK(d2[ix::mu_T] - dx[ix::mu_T] == doctest::Approx(-1.0).epsilon(1e-12));

    x = op.x;
    x[ix::q_th] += 0.01;
    Vec21 d3 = engine::assemble_derivative(x, op.u, P);
    CHECK(d3[ix::T_f] - dx[ix::T_f] == doctest::Approx(-0.01 / 454.6).epsilon(1e-9));
    CHECK(d3[ix::q_th] - dx[ix::q_th] == doctest::Approx(-0.01 / 100.0).epsilon(1e-9));
}

TEST_CASE("derived outputs at the equilibrium") {
    auto op = nominal();
    auto out = engine::derived_outputs(op.x, op.u, P);
    CHECK(out.p_t == doctest::Approx(op.u[ix::p_t0]).epsilon(1e-9));
    CHECK(out.p_t_ref == doctest::Approx(op.u[ix::p_t0]).epsilon(1e-9));
    CHECK(out.w_m_ref == doctest::Approx(op.x[ix::w_m]).epsilon(1e-9));
    CHECK(out.w_hat == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(out.p_t_agg == doctest::Approx(0.05 * out.p_t).epsilon(1e-12));
    CHECK(out.i_m_ref == doctest::Approx(op.x[ix::i_m]).epsilon(1e-9));
    CHECK(out.i_d_ref == doctest::Approx(op.x[ix::i_d]).epsilon(1e-9));
    CHECK(out.v_m2 ==
          doctest::Approx(0.0081 * op.x[ix::i_m] + 0.7398 * op.x[ix::w_m]).epsilon(1e-9));
}

TEST_CASE("pinned-speed equilibria across the operating range") {
    for (double w : {0.3, 0.5, 0.7, 0.9, 1.1, 1.35}) {
        CAPTURE(w);
        auto op = engine::solve_operating_point(P, w);
        CHECK(op.x[ix::w_m] == doctest::Approx(w).epsilon(1e-9));
        // floated temperature balances the pinned extraction rate
        auto ss = plant::compressor_steady_state(w, P.thermal);
        CHECK(op.x[ix::T_f] == doctest::Approx(32.0 - 55.0 * ss.q_th0).epsilon(1e-8));
        CHECK(op.u[ix::T_f_ref] == doctest::Approx(op.x[ix::T_f]).epsilon(1e-10));
        CHECK(engine::equilibrium_residual(op.x, op.u, P) < 1e-8);
    }
}

TEST_CASE("equilibrium persists under integration") {
    auto op = nominal();
    engine::Scenario sc;
    sc.duration = 1.0;
    sc.dt_out = 0.1;
    sc.u0 = op.u;
    auto tr = engine::integrate(op.x, sc, P);
    Eigen::Index last = tr.states.rows() - 1;
    for (int i = 0; i < 21; ++i) {
        if (i == ix::th_g || i == ix::th_hat) continue;
        CAPTURE(i);
        CHECK(std::abs(tr.states(last, i) - op.x[i]) < 1e-7);
    }
    // the angle difference is stationary even though both angles advance
    double delta0 = op.x[ix::th_g] - op.x[ix::th_hat];
    double delta1 = tr.states(last, ix::th_g) - tr.states(last, ix::th_hat);
    CHECK(delta1 == doctest::Approx(delta0).epsilon(1e-7));
    CHECK(tr.states(last, ix::th_g) == doctest::Approx(314.16).epsilon(1e-6));
}

TEST_CASE("load decrease settles on the combined-droop frequency") {
    auto op = nominal();
    engine::Scenario sc;
    sc.duration = 20.0;
    sc.dt_out = 0.01;
    sc.u0 = op.u;
    sc.events.push_back({0.0, ix::p_l, 0.9});
    auto tr = engine::integrate(op.x, sc, P);
    Eigen::Index last = tr.states.rows() - 1;

    double dw_expected = grid::steady_state_frequency(-0.1, P.kappa(), 20.0, 0.02);
    CHECK(tr.states(last, ix::dw_g) == doctest::Approx(dw_expected).epsilon(3e-4));
    CHECK(std::abs(tr.states(last, ix::dw_g) - 0.0019608) < 2e-5);

    // damped: past the swing peak the envelope decays
    double peak = 0.0;
    Eigen::Index peak_at = 0;
    for (Eigen::Index r = 0; r <= last; ++r) {
        double a = std::abs(tr.states(r, ix::dw_g));
        if (a > peak) {
            peak = a;
            peak_at = r;
        }
    }
    CHECK(peak < 0.01);
    CHECK(peak_at < last / 2);

    // the compartment barely notices on this timescale
    double worst = 0.0;
    for (Eigen::Index r = 0; r <= last && tr.t[r] <= 1.0; ++r)
        worst = std::max(worst, std::abs(tr.states(r, ix::T_f) - 3.0));
    CHECK(worst < 0.01);
    CHECK(worst < 1e-4);

    // device power rises with the frequency under the stabilizing droop
    CHECK(tr.outputs(last, 0) > op.u[ix::p_t0] + 0.02);
}

TEST_CASE("held grid frequency drives power to the droop target") {
    auto op = nominal();
    engine::EngineMode m;
    m.hold_grid_frequency = true;
    m.held_dw_g = 0.01;
    engine::Scenario sc;
    sc.duration = 3.0;
    sc.dt_out = 0.01;
    sc.u0 = op.u;
    auto tr = engine::integrate(op.x, sc, P, m);
    Eigen::Index last = tr.states.rows() - 1;
    // frozen grid states
    CHECK(tr.states(last, ix::dw_g) == op.x[ix::dw_g]);
    CHECK(tr.states(last, ix::p_m) == op.x[ix::p_m]);
    // terminal power tracks p_t0 + d_f * 0.01
    CHECK(tr.outputs(last, 0) == doctest::Approx(op.u[ix::p_t0] + 0.2).epsilon(2e-3));
    CHECK(tr.states(last, ix::w_m) > op.x[ix::w_m] + 0.3);
    CHECK(tr.states(last, ix::w_m) < control::kSpeedRefMax);
}

TEST_CASE("integration reproducibility and tolerance convergence") {
    auto op = nominal();
    engine::Scenario sc;
    sc.duration = 2.0;
    sc.dt_out = 0.01;
    sc.u0 = op.u;
    sc.events.push_back({0.25, ix::p_l, 0.9});
    sc.events.push_back({1.0, ix::p_l, 1.05});

    auto tr1 = engine::integrate(op.x, sc, P);
    auto tr2 = engine::integrate(op.x, sc, P);
    // identical runs are bit-identical
    CHECK(tr1.states == tr2.states);
    CHECK(tr1.outputs == tr2.outputs);

    // halving both tolerances moves the result by less than 1e-6
    engine::IntegratorOptions tight;
    tight.rtol = 0.5e-8;
    tight.atol = 0.5e-10;
    auto tr3 = engine::integrate(op.x, sc, P, {}, tight);
    double worst = 0.0;
    Eigen::Index last = tr1.states.rows() - 1;
    for (int i = 0; i < 21; ++i)
        if (i != ix::th_g && i != ix::th_hat)
            worst = std::max(worst, std::abs(tr1.states(last, i) - tr3.states(last, i)));
    CHECK(worst < 1e-6);
}

TEST_CASE("event timing is honored exactly") {
    auto op = nominal();
    engine::Scenario sc;
    sc.duration = 0.1;
    sc.dt_out = 0.001;
    sc.u0 = op.u;
    sc.events.push_back({0.0333, ix::p_l, 0.9}); // off the sample grid
    auto tr = engine::integrate(op.x, sc, P);
    // before the event nothing moves
    Eigen::Index k_pre = 33; // t = 0.033
    CHECK(std::abs(tr.states(k_pre, ix::dw_g)) < 1e-9);
    // shortly after, the swing responds at 0.1/(2 H_g) pu/s
    Eigen::Index k_post = 40; // t = 0.040
    double expect = 0.1 / (2.0 * 0.5) * (0.040 - 0.0333);
    CHECK(tr.states(k_post, ix::dw_g) == doctest::Approx(expect).epsilon(0.05));
}

TEST_CASE("engine mode validation") {
    auto op = nominal();
    engine::EngineMode m;
    m.power_loop = false; // direct reference required but not given
    CHECK_THROWS_AS(engine::assemble_derivative(op.x, op.u, P, m), ValidationError);

    engine::Scenario sc;
    sc.u0 = op.u;
    engine::IntegratorOptions bad;
    bad.max_step = 0.0;
    CHECK_THROWS_AS(engine::integrate(op.x, sc, P, {}, bad), ValidationError);
}

TEST_CASE("newton refinement reports failure honestly") {
    auto op = nominal();
    Vec21 silly = Vec21::Zero();
    silly[ix::v_dc] = 1.0; // keep the converter balance defined
    CHECK_THROWS_AS(engine::find_equilibrium(op.u, silly, P, 1e-10, 1), ConvergenceError);
}

TEST_CASE("scenario validation and round-trip") {
    engine::Scenario sc;
    sc.duration = 45.0;
    sc.dt_out = 0.001;
    sc.u0[ix::p_l] = 1.0;
    sc.u0[ix::w_0] = 1.0;
    sc.events.push_back({0.5, ix::p_l, 0.9});
    sc.events.push_back({10.0, ix::p_m0, 1.01});
    CHECK_NOTHROW(sc.validate());

    std::string doc = engine::serialize_scenario(sc);
    std::istringstream in(doc);
    auto rt = engine::load_scenario(in);
    CHECK(rt.duration == sc.duration);
    CHECK(rt.dt_out == sc.dt_out);
    CHECK(rt.u0 == sc.u0);
    REQUIRE(rt.events.size() == 2);
    CHECK(rt.events[0].t == 0.5);
    CHECK(rt.events[0].input == ix::p_l);
    CHECK(rt.events[0].value == 0.9);
    CHECK(rt.events[1].input == ix::p_m0);

    SUBCASE("events sorted on load") {
        std::istringstream shuffled("duration = 1\n0.8, p_l, 1.0\n0.2, p_l, 0.9\n");
        auto s = engine::load_scenario(shuffled);
        CHECK(s.events[0].t == 0.2);
    }
    SUBCASE("index addressing") {
        std::istringstream byidx("duration = 1\n0.5, 0, 0.9\n");
        auto s = engine::load_scenario(byidx);
        CHECK(s.events[0].input == ix::p_l);
    }
    SUBCASE("rejects bad inputs") {
        auto fails = [](const std::string& text) {
            std::istringstream in2(text);
            CHECK_THROWS_AS(engine::load_scenario(in2), ValidationError);
        };
        fails("duration = 0\n");
        fails("duration = 1\n2.0, p_l, 0.9\n");          // beyond duration
        fails("duration = 1\n0.5, p_zz, 0.9\n");         // unknown input
        fails("duration = 1\n0.5, p_l, 0.9\n0.5, p_l, 1.0\n"); // duplicate time
        fails("duration = 1\nmystery = 3\n");
    }
}

TEST_CASE("trajectory table layout") {
    auto op = nominal();
    engine::Scenario sc;
    sc.duration = 0.05;
    sc.dt_out = 0.01;
    sc.u0 = op.u;
    auto tr = engine::integrate(op.x, sc, P);
    REQUIRE(tr.t.size() == 6);
    CHECK(tr.t.front() == 0.0);
    CHECK(tr.t.back() == doctest::Approx(0.05).epsilon(1e-12));
    auto header = tr.csv_header();
    CHECK(header.size() == 1 + 21 + 8);
    CHECK(header[0] == "t");
    CHECK(header[1 + ix::w_m] == "w_m");
    CHECK(header[22] == "p_t");
    auto m = tr.csv_matrix();
    CHECK(m.rows() == 6);
    CHECK(m.cols() == 30);
    CHECK(m(0, 1 + ix::w_m) == op.x[ix::w_m]);
}
