#include "vsdr/control.hpp"

#include <algorithm>

namespace vsdr::control {

InverterControl inverter_control(double w_m, double w_m_ref, double i_m, double mu_wm,
                                 double mu_im, double v_dc, const ControlGains& g,
                                 CascadeForm form) {
    InverterControl c;
    if (form == CascadeForm::literal) {
        c.i_m_ref = i_m + g.k_ps * (w_m - w_m_ref) + g.k_is * mu_wm;
        c.v_m2 = v_dc + g.k_pc2 * (i_m - c.i_m_ref) + g.k_ic2 * mu_im;
        c.dmu_wm = w_m - w_m_ref;
        c.dmu_im = i_m - c.i_m_ref;
    } else {
        c.i_m_ref = g.k_ps * (w_m_ref - w_m) + g.k_is * mu_wm;
        c.v_m2 = v_dc + g.k_pc2 * (c.i_m_ref - i_m) + g.k_ic2 * mu_im;
        c.dmu_wm = w_m_ref - w_m;
        c.dmu_im = c.i_m_ref - i_m;
    }
    return c;
}

RectifierVoltageControl rectifier_voltage_control(double v_dc, double v_dc_ref, double mu_v,
                                                  const ControlGains& g) {
    RectifierVoltageControl c;
    c.i_d_ref = g.k_pv * (v_dc_ref - v_dc) + g.k_iv * mu_v;
    c.dmu_v = v_dc_ref - v_dc;
    return c;
}

DqCurrentControl dq_current_control(DqPair i, DqPair i_ref, double mu_cd, double mu_cq,
                                    double v_dc_ref, double w_hat, const ControlGains& g,
                                    double l_s) {
    DqCurrentControl c;
    double x = l_s * w_hat / v_dc_ref;
    c.m.d = -g.k_pc1 * (i_ref.d - i.d) - g.k_ic1 * mu_cd + x * i.q;
    c.m.q = -g.k_pc1 * (i_ref.q - i.q) - g.k_ic1 * mu_cq - x * i.d;
    c.dmu_cd = i_ref.d - i.d;
    c.dmu_cq = i_ref.q - i.q;
    return c;
}

SogiPllStep sogi_pll_step(double delta, double v_pll_q, double mu_pll, double w_g_pu,
                          double w_0, const ControlGains& g, double w_b) {
    SogiPllStep s;
    s.dv_pll_q = (g.k_sogi * w_g_pu * w_b / 2.0) * (delta - v_pll_q);
    s.w_hat = g.k_ppll * v_pll_q + g.k_ipll * mu_pll + w_0;
    s.dmu_pll = v_pll_q;
    s.dth_hat = s.w_hat * w_b;
    return s;
}

TemperatureReference temperature_reference(double T_f, double T_f_ref, double mu_T,
                                           const ControlGains& g) {
    TemperatureReference t;
    t.w_mT_ref = g.k_pT * (T_f_ref - T_f) + g.k_iT * mu_T;
    t.dmu_T = T_f_ref - T_f;
    return t;
}

PowerDroopReference power_droop_from_power(double p_t, double w_hat, double p_t0,
                                           double mu_pt, double w_0, const ControlGains& g,
                                           DroopSign sign) {
    PowerDroopReference r;
    r.p_t = p_t;
    double droop = (sign == DroopSign::stabilizing) ? (w_hat - w_0) : (w_0 - w_hat);
    r.p_t_ref = p_t0 + g.d_f * droop;
    r.dw_m_ref = g.k_pp * (r.p_t_ref - r.p_t) + g.k_ip * mu_pt;
    r.dmu_pt = r.p_t_ref - r.p_t;
    return r;
}

PowerDroopReference power_droop_reference(DqPair v, DqPair i, double w_hat, double p_t0,
                                          double mu_pt, double w_0, const ControlGains& g,
                                          DroopSign sign) {
    return power_droop_from_power(0.5 * (v.d * i.d + v.q * i.q), w_hat, p_t0, mu_pt, w_0, g,
                                  sign);
}

double speed_reference(double w_mT_ref, double dw_m_ref, bool saturate) {
    double w = w_mT_ref + dw_m_ref;
    if (saturate) w = std::clamp(w, kSpeedRefMin, kSpeedRefMax);
    return w;
}

} // namespace vsdr::control
