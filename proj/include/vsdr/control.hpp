#pragma once
#include "vsdr/params.hpp"
#include "vsdr/plant.hpp"

namespace vsdr::control {

using plant::DqPair;

struct InverterControl {
    double i_m_ref;
    double v_m2;   // applied motor voltage (ideal PWM)
    double dmu_wm;
    double dmu_im;
};

// Speed and motor-current loops composing the applied motor voltage.
InverterControl inverter_control(double w_m, double w_m_ref, double i_m, double mu_wm,
                                 double mu_im, double v_dc, const ControlGains& g,
                                 CascadeForm form);

struct RectifierVoltageControl {
    double i_d_ref;
    double dmu_v;
};

RectifierVoltageControl rectifier_voltage_control(double v_dc, double v_dc_ref, double mu_v,
                                                  const ControlGains& g);

struct DqCurrentControl {
    DqPair m; // modulation signals
    double dmu_cd;
    double dmu_cq;
};

// Decoupling terminal current control; the cross terms use the PLL frequency estimate.
DqCurrentControl dq_current_control(DqPair i, DqPair i_ref, double mu_cd, double mu_cq,
                                    double v_dc_ref, double w_hat, const ControlGains& g,
                                    double l_s);

struct SogiPllStep {
    double dv_pll_q;
    double w_hat;
    double dmu_pll;
    double dth_hat;
};

// Quadrature extraction plus loop filter. delta is the angle error th_g - th_hat;
// the SOGI gain scales with the grid frequency in rad/s.
SogiPllStep sogi_pll_step(double delta, double v_pll_q, double mu_pll, double w_g_pu,
                          double w_0, const ControlGains& g, double w_b);

struct TemperatureReference {
    double w_mT_ref;
    double dmu_T;
};

TemperatureReference temperature_reference(double T_f, double T_f_ref, double mu_T,
                                           const ControlGains& g);

struct PowerDroopReference {
    double p_t;       // instantaneous terminal power, pu
    double p_t_ref;
    double dw_m_ref;  // speed-reference contribution of the power loop
    double dmu_pt;
};

// Terminal power measurement, frequency droop, and the outer power PI.
PowerDroopReference power_droop_reference(DqPair v, DqPair i, double w_hat, double p_t0,
                                          double mu_pt, double w_0, const ControlGains& g,
                                          DroopSign sign);

// Same droop law with the power supplied directly; used by reduced models whose
// power comes from a fitted map rather than terminal measurements.
PowerDroopReference power_droop_from_power(double p_t, double w_hat, double p_t0,
                                           double mu_pt, double w_0, const ControlGains& g,
                                           DroopSign sign);

// Sum of temperature and power contributions, optionally clamped to [0.3, 1.35] pu.
double speed_reference(double w_mT_ref, double dw_m_ref, bool saturate);

inline constexpr double kSpeedRefMin = 0.3;
inline constexpr double kSpeedRefMax = 1.35;

} // namespace vsdr::control
