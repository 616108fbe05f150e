#include "vsdr/plant.hpp"
#include "vsdr/errors.hpp"

#include <cmath>
#include <string>

namespace vsdr::plant {

CompressorSteadyState compressor_steady_state(double w_m, const ThermalParams& th) {
    CompressorSteadyState s;
    s.q_th0 = th.a2 * w_m * w_m + th.a1 * w_m + th.a0;
    s.t_c0 = th.b1 * std::exp(th.b2 * w_m) + th.b3 * std::exp(th.b4 * w_m);
    return s;
}

CompressorDerivatives compressor_derivatives(double q_th, double t_c, double w_m,
                                             const ThermalParams& th) {
    auto ss = compressor_steady_state(w_m, th);
    return {(ss.q_th0 - q_th) / th.tau_q, (ss.t_c0 - t_c) / th.tau_c};
}

double compartment_derivative(double T_f, double q_th, const ThermalParams& th) {
    return (th.T_a - T_f) / (th.r_th * th.c_th) - q_th / th.c_th;
}

BldcDerivatives bldc_derivatives(double i_m, double w_m, double v_m2, double t_c,
                                 const BldcParams& m, double w_b) {
    BldcDerivatives d;
    d.di_m = (w_b / m.l_a) * (v_m2 - m.r_a * i_m - m.k_e * w_m);
    d.dw_m = (m.k_t * i_m - t_c - m.b * w_m) / (2.0 * m.H_m);
    return d;
}

DqPair electrical_derivatives(DqPair i, DqPair v, DqPair m, double v_dc, double w_g,
                              const ElectricalParams& e, double w_b) {
    DqPair d;
    d.d = w_g * w_b * i.q + (w_b / e.l_s) * (v.d - m.d * v_dc - e.r_s * i.d);
    d.q = -w_g * w_b * i.d + (w_b / e.l_s) * (v.q - m.q * v_dc - e.r_s * i.q);
    return d;
}

double inverter_dc_current(double v_m2, double i_m, double v_dc, double v_dc_min) {
    if (!(v_dc > v_dc_min))
        throw NumericalError("inverter_dc_current: v_dc = " + std::to_string(v_dc) +
                             " below singularity threshold " + std::to_string(v_dc_min));
    return v_m2 * i_m / v_dc;
}

double dclink_derivative(DqPair m, DqPair i, double i_dc2, const ElectricalParams& e,
                         double w_b, double factor) {
    return factor * (w_b / e.c_dc) * (m.d * i.d + m.q * i.q) - (w_b / e.c_dc) * i_dc2;
}

} // namespace vsdr::plant
