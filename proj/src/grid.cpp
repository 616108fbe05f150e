#include "vsdr/grid.hpp"
#include "vsdr/errors.hpp"

#include <cmath>

namespace vsdr::grid {

GridDerivatives grid_derivatives(double p_m, double dw_g, double p_l, double p_tld,
                                 double p_m0, const GridParams& g, double w_b) {
    GridDerivatives d;
    d.dp_m = -(p_m - p_m0) / g.T_p - dw_g / (g.d_p * g.T_p) -
             (g.T_z / (2.0 * g.H_g * g.d_p * g.T_p)) * (p_m - p_l - p_tld);
    d.ddw_g = (p_m - p_tld - p_l) / (2.0 * g.H_g);
    d.dth_g = (g.w_0 + dw_g) * w_b;
    return d;
}

DqPair terminal_voltage(DqPair i, double delta, const ElectricalParams& e) {
    DqPair v;
    v.d = e.x_g * i.q + e.v_g * std::cos(delta);
    v.q = -e.x_g * i.d + e.v_g * std::sin(delta);
    return v;
}

double steady_state_frequency(double dp_l, double kappa, double d_f, double d_p) {
    if (!(d_p > 0.0)) throw ValidationError("steady_state_frequency: d_p must be > 0");
    double denom = 1.0 / d_p + kappa * d_f;
    if (std::abs(denom) < 1e-12)
        throw ValidationError("steady_state_frequency: degenerate combined droop");
    return -dp_l / denom;
}

} // namespace vsdr::grid
