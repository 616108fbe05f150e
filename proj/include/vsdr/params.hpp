#pragma once
#include <array>
#include <cstddef>
#include <iosfwd>
#include <string>

#include <Eigen/Dense>

namespace vsdr {

using Vec21 = Eigen::Matrix<double, 21, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;

// State vector layout. Fixed order; every module indexes through these names.
namespace ix {
enum State : int {
    T_f = 0,   // compartment temperature, degC
    w_m,       // rotor speed, pu of rated
    i_m,       // motor peak current, pu
    t_c,       // compressor counter torque, pu
    q_th,      // heat extraction, pu
    i_d,       // terminal current d, pu
    i_q,       // terminal current q, pu
    v_dc,      // DC-link voltage, pu
    th_hat,    // PLL angle estimate, rad (delta = th_g - th_hat in delta form)
    th_g,      // grid voltage angle, rad
    v_pll_q,   // SOGI quadrature output, rad
    p_m,       // governor mechanical power, grid pu
    dw_g,      // grid frequency deviation, pu
    mu_cd,     // terminal current PI integrator, d axis
    mu_cq,     // terminal current PI integrator, q axis
    mu_T,      // temperature PI integrator, K*s
    mu_v,      // DC-voltage PI integrator
    mu_wm,     // speed PI integrator
    mu_im,     // motor current PI integrator
    mu_pll,    // PLL frequency integrator
    mu_pt,     // power PI integrator
    N_STATES
};

enum Input : int {
    p_l = 0,   // background load power, grid pu
    T_f_ref,   // compartment temperature setpoint, degC
    v_dc_ref,  // DC-link voltage setpoint, pu
    i_q_ref,   // q-axis current setpoint, pu (0 for unity power factor)
    T_a,       // ambient temperature, degC
    p_t0,      // terminal power base for the droop, pu
    p_m0,      // governor power setpoint, grid pu
    w_0,       // nominal frequency, pu
    v_g,       // stiff source peak magnitude, pu
    N_INPUTS
};
} // namespace ix

const std::array<std::string, ix::N_STATES>& state_names();
const std::array<std::string, ix::N_INPUTS>& input_names();
// Index of a state/input by name; returns -1 if unknown.
int state_index(const std::string& name);
int input_index(const std::string& name);

struct PerUnitBases {
    double P_b = 100.0;        // device power base, W
    double P_g = 200e6;        // grid power base, W
    double w_b = 314.16;       // angular base, rad/s
    double rated_rpm = 3000.0; // speed base
};

struct ThermalParams {
    // steady-state heat map q_th0(w) = a2 w^2 + a1 w + a0, pu
    double a2 = -0.295, a1 = 1.583, a0 = -0.075;
    // steady-state torque map t_c0(w) = b1 exp(b2 w) + b3 exp(b4 w), pu
    double b1 = -1.64e-5, b2 = 5.909, b3 = 0.558, b4 = 0.086;
    double tau_q = 100.0; // heat-extraction lag, s
    double tau_c = 1.0;   // torque lag, s
    double r_th = 55.0;   // compartment thermal resistance, K/pu
    double c_th = 454.6;  // compartment thermal capacitance, K*s/pu
    double T_a = 32.0;    // ambient, degC
    double T_f_ref = 3.0; // setpoint, degC
};

struct BldcParams {
    double r_a = 0.0081; // armature resistance, pu
    double l_a = 0.015;  // armature inductance, pu
    double H_m = 0.2023; // inertia constant, s
    double b = 0.0987;   // viscous friction, pu
    double k_t = 0.7398; // torque constant, pu
    double k_e = 0.7398; // EMF constant, pu (equals k_t)
};

struct ElectricalParams {
    double c_dc = 11.43; // DC-link capacitance, pu
    double r_s = 0.012;  // grid-connection resistance, pu
    double l_s = 0.038;  // grid-connection inductance, pu
    double x_g = 0.15;   // grid internal reactance, pu
    double v_g = 1.41;   // stiff source peak magnitude, pu
};

struct ControlGains {
    double k_ps = 43.76, k_is = 700.0;    // speed loop
    double k_pc2 = 0.019, k_ic2 = 3.226;  // motor current loop
    double k_pv = 4.973, k_iv = 239.7;    // DC-voltage loop
    double k_pc1 = 20.59, k_ic1 = 1672.0; // terminal current loop
    double k_pT = -0.159, k_iT = -3.18e-5; // temperature loop, 1/K and 1/(K*s)
    double k_pp = 4.5, k_ip = 90.0;       // power loop
    double d_f = 20.0;                    // frequency droop, pu power per pu frequency
    double k_ppll = 0.4, k_ipll = 4.69;   // PLL loop filter
    double k_sogi = 1.63;                 // SOGI gain
    double T_ip() const { return k_pp / k_ip; } // power-loop time constant, s
};

struct GridParams {
    double H_g = 0.5;  // grid inertia constant, s
    double T_p = 7.0;  // governor time constant, s
    double T_z = 2.1;  // governor zero time constant, s
    double d_p = 0.02; // governor droop, pu
    double p_l0 = 1.0; // nominal background load, grid pu
    double p_m0 = 1.0; // governor setpoint; overwritten by equilibrium-built scenarios
    double n_units = 100000.0;
    double w_0 = 1.0;  // nominal frequency, pu
};

enum class DroopSign {
    stabilizing, // consumption rises when the estimated frequency is high (default)
    paper        // opposite orientation, kept selectable for comparison
};

enum class CascadeForm {
    literal,     // speed/current references composed with the feedthrough term (default)
    conventional // textbook cascade without the current feedthrough
};

struct ModelOptions {
    DroopSign droop_sign = DroopSign::stabilizing;
    bool speed_saturation = true;      // clamp the speed reference to [0.3, 1.35] pu
    double dc_link_factor = 1.5;       // in-feed factor on the rectifier side of the DC link
    CascadeForm cascade = CascadeForm::literal;
    CascadeForm battery_cascade = CascadeForm::conventional; // cascade used for step-battery data
    double v_dc_min = 0.1;             // singularity threshold for the converter power balance
    bool rmse_conventional = false;    // false: literal absolute-deviation metrics
    bool fit_score_concatenated = false; // false: fit score averaged per segment
};

struct ModelParameters {
    PerUnitBases bases;
    ThermalParams thermal;
    BldcParams bldc;
    ElectricalParams elec;
    ControlGains gains;
    GridParams grid;
    ModelOptions opts;

    // aggregation scale: grid-pu power contributed per device-pu power
    double kappa() const { return grid.n_units * bases.P_b / bases.P_g; }

    // Throws ValidationError naming the offending field.
    void validate() const;
};

// kappa for explicit arguments (n >= 1 required)
double aggregation_scale(double n_units, const PerUnitBases& bases);

// Structured-text config: "[section]" headers, "key = value" lines, '#' comments.
// With use_defaults, absent keys fall back to the built-in set; otherwise every
// key must be present. Unknown keys are always an error.
ModelParameters load_parameters(std::istream& doc, bool use_defaults = true);
ModelParameters load_parameters_file(const std::string& path, bool use_defaults = true);

// Emits a config document that parses back to exactly the given set.
std::string serialize_parameters(const ModelParameters& p);

// Assigns a numeric parameter by name: "section.key", a bare key when unique
// across sections, or "T_ip" which adjusts k_ip using the current k_pp.
// Does not re-validate; callers decide when to check invariants.
void set_parameter(ModelParameters& p, const std::string& name, double value);

} // namespace vsdr
