#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vsdr/control.hpp"
#include "vsdr/params.hpp"

#include <cmath>

using namespace vsdr;
using plant::DqPair;

namespace {
const ModelParameters P;
const ControlGains& G = P.gains;
}

TEST_CASE("speed and current cascade, feedthrough form") {
    // at zero tracking error the references collapse onto the measurements
    auto c = control::inverter_control(0.5, 0.5, 0.8, 0.0, 0.0, 1.0, G, CascadeForm::literal);
    CHECK(c.i_m_ref == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(c.v_m2 == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(c.dmu_wm == doctest::Approx(0.0));
    CHECK(c.dmu_im == doctest::Approx(0.0));

    // speed error enters the current reference through k_ps on (w - w_ref)
    auto c2 = control::inverter_control(0.51, 0.5, 0.8, 0.0, 0.0, 1.0, G, CascadeForm::literal);
    CHECK(c2.i_m_ref == doctest::Approx(0.8 + 43.76 * 0.01).epsilon(1e-12));
    CHECK(c2.dmu_wm == doctest::Approx(0.01));
    CHECK(c2.dmu_im == doctest::Approx(0.8 - c2.i_m_ref).epsilon(1e-12));
    // the feedthrough cancels the current feedback in the applied voltage
    CHECK(c2.v_m2 == doctest::Approx(1.0 - 0.019 * 43.76 * 0.01).epsilon(1e-12));
}

TEST_CASE("speed and current cascade, conventional form") {
    auto c = control::inverter_control(0.5, 0.51, 0.0, 0.0, 0.0, 1.0, G,
                                       CascadeForm::conventional);
    CHECK(c.i_m_ref == doctest::Approx(43.76 * 0.01).epsilon(1e-12)); // 0.4376
    CHECK(c.i_m_ref == doctest::Approx(0.4376).epsilon(1e-12));
    CHECK(c.dmu_wm == doctest::Approx(0.01));
    CHECK(c.dmu_im == doctest::Approx(c.i_m_ref));
    CHECK(c.v_m2 == doctest::Approx(1.0 + 0.019 * c.i_m_ref).epsilon(1e-12));

    // integrator states feed both loops
    auto c2 = control::inverter_control(0.5, 0.5, 0.2, 0.01, 0.002, 1.0, G,
                                        CascadeForm::conventional);
    CHECK(c2.i_m_ref == doctest::Approx(700.0 * 0.01).epsilon(1e-12));
    CHECK(c2.v_m2 ==
          doctest::Approx(1.0 + 0.019 * (7.0 - 0.2) + 3.226 * 0.002).epsilon(1e-12));
}

TEST_CASE("both cascade forms are affine in their arguments") {
    // superpose two argument sets; PI laws must superpose exactly around a base
    for (auto form : {CascadeForm::literal, CascadeForm::conventional}) {
        auto f = [&](double a, double b, double c, double d, double e) {
            return control::inverter_control(a, b, c, d, e, 0.0, G, form);
        };
        auto r1 = f(0.1, 0.2, 0.3, 0.4, 0.5);
        auto r2 = f(0.01, -0.02, 0.05, -0.03, 0.02);
        auto rs = f(0.11, 0.18, 0.35, 0.37, 0.52);
        CHECK(rs.i_m_ref == doctest::Approx(r1.i_m_ref + r2.i_m_ref).epsilon(1e-12));
        CHECK(rs.v_m2 == doctest::Approx(r1.v_m2 + r2.v_m2).epsilon(1e-12));
        CHECK(rs.dmu_wm == doctest::Approx(r1.dmu_wm + r2.dmu_wm).epsilon(1e-12));
        CHECK(rs.dmu_im == doctest::Approx(r1.dmu_im + r2.dmu_im).epsilon(1e-12));
    }
}

TEST_CASE("DC-voltage loop") {
    auto r = control::rectifier_voltage_control(0.99, 1.0, 0.0, G);
    CHECK(r.i_d_ref == doctest::Approx(4.973 * 0.01).epsilon(1e-12)); // 0.04973
    CHECK(r.dmu_v == doctest::Approx(0.01));
    auto r2 = control::rectifier_voltage_control(1.0, 1.0, 0.1, G);
    CHECK(r2.i_d_ref == doctest::Approx(239.7 * 0.1).epsilon(1e-12));
}

TEST_CASE("terminal current control with decoupling") {
    // zero error, zero integrators: modulation is the pure cross term
    DqPair i{0.5, -0.2};
    auto c = control::dq_current_control(i, i, 0.0, 0.0, 1.0, 1.0, G, P.elec.l_s);
    CHECK(c.m.d == doctest::Approx(0.038 * -0.2).epsilon(1e-12));
    CHECK(c.m.q == doctest::Approx(-0.038 * 0.5).epsilon(1e-12));
    CHECK(c.dmu_cd == doctest::Approx(0.0));
    CHECK(c.dmu_cq == doctest::Approx(0.0));

    // the PLL estimate scales the decoupling
    auto c2 = control::dq_current_control(i, i, 0.0, 0.0, 1.0, 1.02, G, P.elec.l_s);
    CHECK(c2.m.d == doctest::Approx(0.038 * 1.02 * -0.2).epsilon(1e-12));

    // error path: proportional on (ref - i) with inverted sign into m
    auto c3 = control::dq_current_control({0.0, 0.0}, {0.01, 0.0}, 0.0, 0.0, 1.0, 1.0, G,
                                          P.elec.l_s);
    CHECK(c3.m.d == doctest::Approx(-20.59 * 0.01).epsilon(1e-12));
    CHECK(c3.dmu_cd == doctest::Approx(0.01));
}

TEST_CASE("quadrature extraction and frequency estimate") {
    // frequency estimate at anchor values
    auto s = control::sogi_pll_step(0.0, 0.01, 0.0, 1.0, 1.0, G, P.bases.w_b);
    CHECK(s.w_hat == doctest::Approx(1.0 + 0.4 * 0.01).epsilon(1e-12)); // 1.004
    CHECK(s.dmu_pll == doctest::Approx(0.01));
    CHECK(s.dth_hat == doctest::Approx(s.w_hat * 314.16).epsilon(1e-12));

    // quadrature state relaxes toward the angle error with gain k w_g w_b / 2
    auto s2 = control::sogi_pll_step(0.01, 0.0, 0.0, 1.0, 1.0, G, P.bases.w_b);
    CHECK(s2.dv_pll_q == doctest::Approx(1.63 * 314.16 / 2.0 * 0.01).epsilon(1e-12));
    CHECK(s2.dv_pll_q == doctest::Approx(2.5604).epsilon(1e-4));

    // time constant of the quadrature lag: 2/(k w_g,rad) = 3.91 ms
    double tau = 2.0 / (1.63 * 314.16);
    CHECK(tau == doctest::Approx(3.905e-3).epsilon(1e-3));
    auto s3 = control::sogi_pll_step(0.0, 1.0, 0.0, 1.0, 1.0, G, P.bases.w_b);
    CHECK(s3.dv_pll_q == doctest::Approx(-1.0 / tau).epsilon(1e-12));

    // integral branch
    auto s4 = control::sogi_pll_step(0.0, 0.0, 0.002, 1.0, 1.0, G, P.bases.w_b);
    CHECK(s4.w_hat == doctest::Approx(1.0 + 4.69 * 0.002).epsilon(1e-12));
}

TEST_CASE("temperature loop") {
    // warm compartment (error negative with negative gains raises the reference)
    auto t = control::temperature_reference(4.0, 3.0, 0.0, G);
    CHECK(t.w_mT_ref == doctest::Approx(-0.159 * -1.0).epsilon(1e-12)); // 0.159
    CHECK(t.dmu_T == doctest::Approx(-1.0));
    // equilibrium integrator value reproducing a 0.412 pu reference at zero error
    double mu = 0.412 / -3.18e-5;
    CHECK(mu == doctest::Approx(-1.2956e4).epsilon(1e-4));
    auto t2 = control::temperature_reference(3.0, 3.0, mu, G);
    CHECK(t2.w_mT_ref == doctest::Approx(0.412).epsilon(1e-12));
}

TEST_CASE("droop and outer power loop") {
    // stabilizing orientation: high estimated frequency raises the power reference
    auto r = control::power_droop_from_power(0.0869, 1.0019608, 0.0869, 0.0, 1.0, G,
                                             DroopSign::stabilizing);
    CHECK(r.p_t_ref == doctest::Approx(0.0869 + 20.0 * 0.0019608).epsilon(1e-12));
    CHECK(r.p_t_ref - r.p_t == doctest::Approx(0.0392160).epsilon(1e-6));
    CHECK(r.dmu_pt == doctest::Approx(20.0 * 0.0019608).epsilon(1e-12));
    CHECK(r.dw_m_ref == doctest::Approx(4.5 * 20.0 * 0.0019608).epsilon(1e-12));

    // opposite orientation flips the droop term only
    auto q = control::power_droop_from_power(0.0869, 1.0019608, 0.0869, 0.0, 1.0, G,
                                             DroopSign::paper);
    CHECK(q.p_t_ref == doctest::Approx(0.0869 - 20.0 * 0.0019608).epsilon(1e-12));

    // measurement path: p_t = (v d i d + v q i q)/2
    DqPair v{1.4, 0.1};
    DqPair i{0.12, -0.03};
    auto m = control::power_droop_reference(v, i, 1.0, 0.0869, 0.0, 1.0, G,
                                            DroopSign::stabilizing);
    CHECK(m.p_t == doctest::Approx(0.5 * (1.4 * 0.12 + 0.1 * -0.03)).epsilon(1e-12));
    // equivalence with the direct-power form
    auto m2 = control::power_droop_from_power(m.p_t, 1.0, 0.0869, 0.0, 1.0, G,
                                              DroopSign::stabilizing);
    CHECK(m.p_t_ref == m2.p_t_ref);
    CHECK(m.dw_m_ref == m2.dw_m_ref);
    CHECK(m.dmu_pt == m2.dmu_pt);
}

TEST_CASE("speed reference composition and saturation") {
    CHECK(control::speed_reference(0.4, 0.1, true) == doctest::Approx(0.5));
    CHECK(control::speed_reference(0.4, 0.1, false) == doctest::Approx(0.5));
    CHECK(control::speed_reference(0.2, 0.0, true) == doctest::Approx(0.3));
    CHECK(control::speed_reference(2.0, 0.0, true) == doctest::Approx(1.35));
    CHECK(control::speed_reference(2.0, 0.0, false) == doctest::Approx(2.0));
    CHECK(control::speed_reference(0.0, -1.0, true) == doctest::Approx(0.3));
    CHECK(control::kSpeedRefMin == 0.3);
    CHECK(control::kSpeedRefMax == 1.35);
}
