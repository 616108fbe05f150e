#pragma once
#include <array>
#include <complex>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vsdr/engine.hpp"
#include "vsdr/params.hpp"
#include "vsdr/smallsignal.hpp"

namespace vsdr::reduction {

// Reduced structures: Pi poles, Zj zeros, j < i.
enum class Structure { P1Z0, P2Z0, P2Z1, P3Z0, P3Z1, P3Z2 };

const char* structure_name(Structure s);
Structure structure_from_name(const std::string& name);
int pole_count(Structure s);
int zero_count(Structure s);
const std::vector<Structure>& all_structures();

// Speed-reference-to-terminal-power map in the printed monic-cubic layout:
// numerator n2 s^2 + n1 s + n0 over the implicit-leading denominator. Lower
// orders keep the published zero-padding: second-order models carry their monic
// s^2 as d2 = 1, the first-order model its monic s as d1 = 1.
struct TransferFunctionModel {
    Structure structure = Structure::P2Z1;
    double n2 = 0, n1 = 0, n0 = 0;
    double d2 = 0, d1 = 0, d0 = 0;
    double fit_score = std::numeric_limits<double>::quiet_NaN(); // percent

    // minimal-form coefficients, highest power first; den is monic of length
    // pole_count + 1
    std::vector<double> minimal_num() const;
    std::vector<double> minimal_den() const;
    // padded to the cubic layout by multiplying both polynomials by s^(3 - order)
    std::array<double, 3> padded_num() const;
    std::array<double, 3> padded_den() const;

    double dc_gain() const; // of the minimal form
    std::complex<double> frequency_response(double w) const;

    // zero-pattern consistency with the structure tag and a Hurwitz minimal
    // denominator; throws ValidationError on violation
    void check() const;
};

// Published coefficient sets.
TransferFunctionModel table2(Structure s);

// Config-style round trip for coefficient sets ("structure = P2Z1", "n2 = ...").
TransferFunctionModel load_tf(std::istream& in);
TransferFunctionModel load_tf_file(const std::string& path);
std::string serialize_tf(const TransferFunctionModel& tf);

// Fixed-size companion realization of the padded cubic: top row -(d2, d1, d0),
// B = e1, C = (n2, n1, n0).
struct StateSpace3 {
    Eigen::Matrix3d A;
    Eigen::Vector3d B;
    Eigen::RowVector3d C;
};
StateSpace3 tf_to_state_space(const TransferFunctionModel& tf);

// Minimal companion realization (pole_count states).
struct StateSpace {
    Eigen::MatrixXd A;
    Eigen::VectorXd B;
    Eigen::RowVectorXd C;
};
StateSpace minimal_realization(const TransferFunctionModel& tf);

// Unit-step response of the minimal form on a uniform grid, exact zero-order
// hold discretization.
std::vector<double> step_response(const TransferFunctionModel& tf,
                                  const std::vector<double>& t);

// ---------------- step battery ----------------

struct StepSegment {
    double w_start = 0, w_end = 0; // pu speed references
    std::vector<double> t;
    std::vector<double> p_t_deviation; // response minus its pre-step value
    double step = 0;                   // w_end - w_start
};

struct StepBattery {
    std::vector<StepSegment> segments;
    double dt = 1e-3;
    double duration = 2.0;
    std::string schedule_note; // deterministic schedule documentation

    void check() const; // 10 segments spanning [1/3, 4/3] endpoints
};

// The deterministic schedule: 10 equal partitions of [1/3, 4/3] pu, alternating
// up/down steps.
std::vector<std::pair<double, double>> battery_schedule();

// Runs the full model in identification mode (power loop off, speed reference
// driven directly, grid frequency held) from the pinned equilibrium of each
// segment start. The cascade selected by options.battery_cascade is used for
// both the equilibria and the runs.
StepBattery generate_step_battery(const ModelParameters& p, double duration = 2.0);

// CSV round trip: columns t, seg00 ... seg09 plus a header-embedded schedule.
void write_battery_csv(const StepBattery& bat, const std::string& path);
StepBattery read_battery_csv(const std::string& path);

// ---------------- fitting ----------------

struct FitOptions {
    int restarts = 40;
    std::uint64_t seed = 0;
    int max_iterations = 60; // Levenberg-Marquardt iterations per restart
};

// Separable output-error fit: stable-by-construction denominator search with
// the numerator eliminated by linear least squares on the concatenated
// deviation responses. Throws ConvergenceError when every restart fails.
TransferFunctionModel fit_transfer_function(const StepBattery& bat, Structure s,
                                            const ModelParameters& p,
                                            const FitOptions& opt = {});

// ---------------- reduced closed loop ----------------

// Analytic LTI closed loop of a reduced model with the retained PLL, droop,
// power PI, and grid equivalent. Delta form; states
// [v1..v_np, delta, v_pll_q, p_m, dw_g, mu_pll, mu_pt]; inputs
// [p_l, p_t0, p_m0, w_0]. Operating-point independent by construction.
smallsignal::LinearModel reduced_closed_loop(const TransferFunctionModel& tf,
                                             const ModelParameters& p);

// Variant with explicit droop/PI gains, for maps over (k_pp, T_ip).
smallsignal::LinearModel reduced_closed_loop_gains(const TransferFunctionModel& tf,
                                                   const ModelParameters& p, double d_f,
                                                   double k_pp, double k_ip);

struct ReducedTrajectory {
    std::vector<double> t;
    Eigen::MatrixXd states; // columns labeled by labels
    std::vector<std::string> labels;
    Eigen::VectorXd p_t;      // absolute terminal power, pu
    Eigen::VectorXd w_m_ref;  // clamped speed reference, the reduced speed proxy
};

// Nonlinear reduced engine: same states as the LTI form with the speed
// reference clamp and the speed-dependent SOGI gain retained; p_m is carried as
// an absolute state. w_base is the operating speed the fitted deviations refer
// to. Reads inputs p_l, p_t0, p_m0, w_0 from the scenario; other channels are
// ignored.
ReducedTrajectory simulate_reduced(const TransferFunctionModel& tf, const ModelParameters& p,
                                   double w_base, const engine::Scenario& sc,
                                   const engine::IntegratorOptions& opt = {});

// ---------------- accuracy metrics ----------------

struct RmseMetrics {
    double rmse_x0; // disturbance-instant deviation
    double rmse_xt; // transient deviation over the window
};

// Printed-formula metrics on a shared 1 ms grid spanning at least 1 s; the
// conventional flag switches the transient metric to a true root mean square.
RmseMetrics rmse_metrics(const std::vector<double>& t_full, const Eigen::VectorXd& y_full,
                         const std::vector<double>& t_red, const Eigen::VectorXd& y_red,
                         bool conventional);

} // namespace vsdr::reduction
