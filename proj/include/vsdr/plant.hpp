#pragma once
#include "vsdr/params.hpp"

namespace vsdr::plant {

struct CompressorSteadyState {
    double q_th0; // heat extraction at speed w, pu
    double t_c0;  // counter torque at speed w, pu
};

// Steady-state compressor maps evaluated at rotor speed w (pu of rated).
CompressorSteadyState compressor_steady_state(double w_m, const ThermalParams& th);

struct CompressorDerivatives {
    double dq_th;
    double dt_c;
};

// First-order lags toward the steady-state maps.
CompressorDerivatives compressor_derivatives(double q_th, double t_c, double w_m,
                                             const ThermalParams& th);

// Compartment heat balance, K/s.
double compartment_derivative(double T_f, double q_th, const ThermalParams& th);

struct BldcDerivatives {
    double di_m;
    double dw_m;
};

// Armature current and swing equation of the motor.
BldcDerivatives bldc_derivatives(double i_m, double w_m, double v_m2, double t_c,
                                 const BldcParams& m, double w_b);

struct DqPair {
    double d;
    double q;
};

// AC-side current dynamics in the rotating frame; w_g in pu, angles folded into v.
DqPair electrical_derivatives(DqPair i, DqPair v, DqPair m, double v_dc, double w_g,
                              const ElectricalParams& e, double w_b);

// Converter power balance: i_dc2 = v_m2 i_m / v_dc.
// Throws NumericalError when v_dc is below the configured singularity threshold.
double inverter_dc_current(double v_m2, double i_m, double v_dc, double v_dc_min);

// DC-link voltage derivative. factor is the in-feed factor on the rectifier side.
double dclink_derivative(DqPair m, DqPair i, double i_dc2, const ElectricalParams& e,
                         double w_b, double factor);

} // namespace vsdr::plant
