#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vsdr/engine.hpp"
#include "vsdr/errors.hpp"
#include "vsdr/plant.hpp"
#include "vsdr/smallsignal.hpp"

#include <cmath>
#include <complex>
#include <numbers>

using namespace vsdr;
namespace ss = vsdr::smallsignal;

namespace {
const ModelParameters P;

const ss::LinearModel& nominal_linear() {
    static ss::LinearModel lm = ss::linearize(engine::solve_operating_point(P), P);
    return lm;
}
} // namespace

TEST_CASE("eigenanalysis on a known diagonal system") {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 2);
    A(0, 0) = -1.0;
    A(1, 1) = -2.0;
    auto m = ss::eigenanalysis(A);
    CHECK(m.eigenvalues[0].real() == doctest::Approx(-1.0));
    CHECK(m.eigenvalues[1].real() == doctest::Approx(-2.0));
    CHECK(m.max_real() == doctest::Approx(-1.0));
    CHECK(m.stable());
    CHECK(m.damping[0] == doctest::Approx(1.0));
    CHECK(m.frequency_hz[0] == doctest::Approx(0.0));
    // decoupled states participate exclusively in their own modes
    CHECK(m.participation(0, 0) == doctest::Approx(1.0));
    CHECK(m.participation(1, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m.participation(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("eigenanalysis on a known oscillator") {
    // [[-1, 2], [-2, -1]] has eigenvalues -1 +- 2i
    Eigen::MatrixXd A(2, 2);
    A << -1.0, 2.0, -2.0, -1.0;
    auto m = ss::eigenanalysis(A);
    CHECK(m.eigenvalues[0].real() == doctest::Approx(-1.0));
    CHECK(std::abs(m.eigenvalues[0].imag()) == doctest::Approx(2.0));
    // conjugate pair, positive imaginary part sorted first
    CHECK(m.eigenvalues[0].imag() == doctest::Approx(2.0));
    CHECK(m.eigenvalues[1].imag() == doctest::Approx(-2.0));
    CHECK(m.damping[0] == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-12));
    CHECK(m.frequency_hz[0] == doctest::Approx(2.0 / (2.0 * std::numbers::pi)).epsilon(1e-12));
}

TEST_CASE("linearization rejects non-equilibrium points") {
    auto op = engine::solve_operating_point(P);
    op.x[ix::w_m] += 0.05;
    CHECK_THROWS_AS(ss::linearize(op, P), ValidationError);
}

TEST_CASE("linearization rejects saturated endpoints") {
    // at the pinned lower endpoint the unclamped reference sits on the corner
    auto op = engine::solve_operating_point(P, 0.3);
    CHECK_THROWS_AS(ss::linearize(op, P), ValidationError);
    // interior pins are fine
    auto op2 = engine::solve_operating_point(P, 0.5);
    CHECK_NOTHROW(ss::linearize(op2, P));
}

TEST_CASE("linear model structure at the nominal point") {
    const auto& lm = nominal_linear();
    REQUIRE(lm.A.rows() == 21);
    REQUIRE(lm.A.cols() == 21);
    REQUIRE(lm.B.rows() == 21);
    REQUIRE(lm.B.cols() == 9);
    CHECK(lm.state_labels[ix::th_hat] == "delta");
    CHECK(lm.state_labels[ix::w_m] == "w_m");
    CHECK(lm.input_labels[ix::p_l] == "p_l");

    // compressor lag rows, recomputed from the map slopes
    const auto& th = P.thermal;
    double w = lm.x0[ix::w_m];
    double dq_dw = 2.0 * th.a2 * w + th.a1;
    double dt_dw = th.b1 * th.b2 * std::exp(th.b2 * w) + th.b3 * th.b4 * std::exp(th.b4 * w);
    CHECK(lm.A(ix::q_th, ix::q_th) == doctest::Approx(-1.0 / th.tau_q).epsilon(1e-7));
    CHECK(lm.A(ix::t_c, ix::t_c) == doctest::Approx(-1.0 / th.tau_c).epsilon(1e-7));
    CHECK(lm.A(ix::q_th, ix::w_m) == doctest::Approx(dq_dw / th.tau_q).epsilon(1e-6));
    CHECK(lm.A(ix::t_c, ix::w_m) == doctest::Approx(dt_dw / th.tau_c).epsilon(1e-6));
    CHECK(lm.A(ix::T_f, ix::T_f) == doctest::Approx(-1.0 / (th.r_th * th.c_th)).epsilon(1e-7));
    CHECK(lm.A(ix::T_f, ix::q_th) == doctest::Approx(-1.0 / th.c_th).epsilon(1e-7));

    // delta row: d(delta) = (w_g - w_hat) w_b, so the PLL proportional path
    // enters as -k_ppll w_b and the swing deviation as +w_b
    CHECK(lm.A(ix::th_hat, ix::v_pll_q) == doctest::Approx(-0.4 * 314.16).epsilon(1e-7));
    CHECK(lm.A(ix::th_hat, ix::mu_pll) == doctest::Approx(-4.69 * 314.16).epsilon(1e-7));
    CHECK(lm.A(ix::th_hat, ix::dw_g) == doctest::Approx(314.16).epsilon(1e-7));
    // the free grid angle influences nothing in delta form
    CHECK(lm.A.col(ix::th_g).cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-12));

    // swing row and load input
    CHECK(lm.A(ix::dw_g, ix::p_m) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(lm.B(ix::dw_g, ix::p_l) == doctest::Approx(-1.0).epsilon(1e-7));
    CHECK(lm.B(ix::p_m, ix::p_l) == doctest::Approx(2.1 / (2.0 * 0.5 * 0.02 * 7.0)).epsilon(1e-7));
}

TEST_CASE("linear model predicts nearby derivatives") {
    const auto& lm = nominal_linear();
    engine::EngineMode m;
    m.delta_form = true;
    Vec21 x0;
    Vec9 u0;
    for (int i = 0; i < 21; ++i) x0[i] = lm.x0[i];
    for (int i = 0; i < 9; ++i) u0[i] = lm.u0[i];

    Vec21 dx = Vec21::Zero();
    dx[ix::w_m] = 1e-5;
    dx[ix::i_d] = -2e-5;
    dx[ix::dw_g] = 1e-5;
    dx[ix::T_f] = 3e-5;
    Vec21 f1 = engine::assemble_derivative(x0 + dx, u0, P, m);
    Vec21 f0 = engine::assemble_derivative(x0, u0, P, m);
    Eigen::VectorXd lin = lm.A * Eigen::Map<Eigen::VectorXd>(dx.data(), 21);
    double scale = lin.cwiseAbs().maxCoeff();
    double err = (Eigen::Map<Vec21>(f1.data()) - Eigen::Map<Vec21>(f0.data()) - lin)
                     .cwiseAbs()
                     .maxCoeff();
    CHECK(err < 1e-6 * std::max(1.0, scale));

    Vec9 du = Vec9::Zero();
    du[ix::p_l] = 1e-5;
    du[ix::v_dc_ref] = -1e-5;
    Vec21 f2 = engine::assemble_derivative(x0, u0 + du, P, m);
    Eigen::VectorXd linu = lm.B * Eigen::Map<Eigen::VectorXd>(du.data(), 9);
    double erru =
        (Eigen::Map<Vec21>(f2.data()) - Eigen::Map<Vec21>(f0.data()) - linu).cwiseAbs().maxCoeff();
    CHECK(erru < 1e-6 * std::max(1.0, linu.cwiseAbs().maxCoeff()));
}

TEST_CASE("full model spectrum") {
    const auto& lm = nominal_linear();
    auto full = ss::eigenanalysis(lm.A);

    // conjugate closure: every complex eigenvalue has its mirror
    for (int k = 0; k < full.eigenvalues.size(); ++k) {
        if (std::abs(full.eigenvalues[k].imag()) < 1e-9) continue;
        std::complex<double> want = std::conj(full.eigenvalues[k]);
        double best = 1e9;
        for (int j = 0; j < full.eigenvalues.size(); ++j)
            best = std::min(best, std::abs(full.eigenvalues[j] - want));
        CHECK(best < 1e-6 * (1.0 + std::abs(want)));
    }

    // sorted by descending real part
    for (int k = 1; k < full.eigenvalues.size(); ++k)
        CHECK(full.eigenvalues[k - 1].real() >= full.eigenvalues[k].real() - 1e-12);

    // participation columns are normalized
    for (int k = 0; k < full.participation.cols(); ++k)
        CHECK(full.participation.col(k).sum() == doctest::Approx(1.0).epsilon(1e-9));

    // two structural zero modes: the free angle and the reference split between
    // the temperature and power integrators (the latter carries finite-difference
    // noise of order 1e-6); the slowest genuine mode, the compartment time
    // constant 1/(r_th c_th) = 4e-5, stays clear of the threshold
    int zeros = 0;
    for (int k = 0; k < full.eigenvalues.size(); ++k)
        if (std::abs(full.eigenvalues[k]) < 1e-5) ++zeros;
    CHECK(zeros == 2);

    // the reference-split direction is a null vector of A
    Eigen::VectorXd split = Eigen::VectorXd::Zero(21);
    split[ix::mu_T] = P.gains.k_ip;
    split[ix::mu_pt] = -P.gains.k_iT;
    split.normalize();
    CHECK((lm.A * split).norm() < 1e-7);
    CHECK((lm.A * Eigen::VectorXd::Unit(21, ix::th_g)).norm() == 0.0);

    // after deflation the zero modes are gone; the compartment mode leads
    Eigen::MatrixXd Ad = ss::deflate(lm.A, P);
    REQUIRE(Ad.rows() == 19);
    auto red = ss::eigenanalysis(Ad);
    CHECK(red.max_real() == doctest::Approx(-1.0 / (55.0 * 454.6)).epsilon(1e-3));
    CHECK(red.stable());
    for (int k = 0; k < red.eigenvalues.size(); ++k)
        CHECK(std::abs(red.eigenvalues[k]) > 1e-5);

    // deflation preserves the genuine spectrum
    double worst = 0.0;
    for (int k = 0; k < red.eigenvalues.size(); ++k) {
        double best = 1e18;
        for (int j = 0; j < full.eigenvalues.size(); ++j)
            best = std::min(best, std::abs(full.eigenvalues[j] - red.eigenvalues[k]));
        worst = std::max(worst, best / (1.0 + std::abs(red.eigenvalues[k])));
    }
    CHECK(worst < 1e-4);

    // the stiff end of the spectrum sits far left, as the step-size behavior shows
    CHECK(red.eigenvalues[red.eigenvalues.size() - 1].real() < -1e5);
}

TEST_CASE("deflated spectrum matches across equivalent operating points") {
    ModelParameters q = P;
    q.opts.cascade = CascadeForm::conventional;
    auto m1 = ss::full_model_matrix(q);
    REQUIRE(m1.has_value());
    auto e1 = ss::eigenanalysis(*m1);
    CHECK(e1.stable());
}

TEST_CASE("parameter sensitivity sweep with mode tracking") {
    auto factory = ss::full_model_factory(P, "grid.H_g");
    std::vector<double> values = {0.3, 0.5, 0.8, 1.2, 2.0};
    auto sweep = ss::parameter_sensitivity(factory, values, 2);
    REQUIRE(sweep.values.size() == 5);
    CHECK(sweep.gap_count == 0);
    REQUIRE(sweep.loci.rows() == 19);
    REQUIRE(sweep.loci.cols() == 5);
    for (size_t v = 0; v < values.size(); ++v) {
        CHECK(sweep.ok[v]);
        CHECK(sweep.analyses[v].stable());
        // column v of the loci is a permutation-tracked copy of the analysis spectrum
        double col_max = -1e18;
        for (int r = 0; r < sweep.loci.rows(); ++r)
            col_max = std::max(col_max, sweep.loci(r, v).real());
        CHECK(col_max == doctest::Approx(sweep.analyses[v].max_real()).epsilon(1e-9));
    }
    // tracked rows evolve continuously: no row jumps by more than the mode spacing
    for (int r = 0; r < sweep.loci.rows(); ++r) {
        for (size_t v = 1; v < values.size(); ++v) {
            double jump = std::abs(sweep.loci(r, v) - sweep.loci(r, v - 1));
            double mag = 1.0 + std::abs(sweep.loci(r, v - 1));
            CHECK(jump / mag < 1.5);
        }
    }
}

TEST_CASE("sweep records gaps instead of crashing") {
    ss::ModelFactory1 factory = [](double v) -> std::optional<Eigen::MatrixXd> {
        if (v == 2.0) return std::nullopt;
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 2);
        A(0, 0) = -v;
        A(1, 1) = -2.0 * v;
        return A;
    };
    auto sweep = ss::parameter_sensitivity(factory, {1.0, 2.0, 3.0});
    CHECK(sweep.gap_count == 1);
    CHECK(sweep.ok[0]);
    CHECK(!sweep.ok[1]);
    CHECK(sweep.ok[2]);
    CHECK(std::isnan(sweep.loci(0, 1).real()));
    CHECK(sweep.loci(0, 0).real() == doctest::Approx(-1.0));
    // tracking resumes after the gap
    CHECK(sweep.loci(0, 2).real() + sweep.loci(1, 2).real() == doctest::Approx(-9.0));
}

TEST_CASE("stability map classifies cells without throwing") {
    auto factory = ss::full_model_factory(P, "control.k_pp", "T_ip");
    // k_pp = 0 fails validation and must surface as a missing-equilibrium cell
    auto map = ss::stability_map(factory, {0.0, 4.5}, {0.05, 0.2}, 2);
    REQUIRE(map.verdicts.size() == 4);
    CHECK(map.at(0, 0) == ss::Verdict::no_equilibrium);
    CHECK(map.at(0, 1) == ss::Verdict::no_equilibrium);
    CHECK(map.at(1, 0) == ss::Verdict::stable);
    CHECK(map.at(1, 1) == ss::Verdict::stable);
    CHECK(std::isnan(map.max_re[0]));
    CHECK(map.max_re[2] < 0.0);
    CHECK(std::string(ss::verdict_name(ss::Verdict::stable)) == "stable");
    CHECK(std::string(ss::verdict_name(ss::Verdict::no_equilibrium)) == "no-equilibrium");
}

TEST_CASE("inertia insensitivity of the critical mode") {
    auto factory = ss::full_model_factory(P, "grid.H_g");
    auto sweep = ss::parameter_sensitivity(factory, {0.1, 1.0, 5.0});
    for (size_t v = 0; v < 3; ++v) {
        REQUIRE(sweep.ok[v]);
        CHECK(sweep.analyses[v].max_real() < 0.0);
    }
}
