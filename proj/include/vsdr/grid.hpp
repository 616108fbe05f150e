#pragma once
#include "vsdr/params.hpp"
#include "vsdr/plant.hpp"

namespace vsdr::grid {

using plant::DqPair;

struct GridDerivatives {
    double dp_m;
    double ddw_g;
    double dth_g; // rad/s
};

// Governor and swing dynamics of the center-of-inertia equivalent.
// p_tld is the aggregated device power in grid pu.
GridDerivatives grid_derivatives(double p_m, double dw_g, double p_l, double p_tld,
                                 double p_m0, const GridParams& g, double w_b);

// Stiff source seen through the grid reactance, expressed in the PLL frame.
DqPair terminal_voltage(DqPair i, double delta, const ElectricalParams& e);

// Closed-form post-disturbance frequency deviation from the combined droops.
// Throws ValidationError when the combined droop denominator degenerates.
double steady_state_frequency(double dp_l, double kappa, double d_f, double d_p);

} // namespace vsdr::grid
