#pragma once
#include "vsdr/params.hpp"

#include <optional>
#include <string>
#include <vector>

namespace vsdr::engine {

// How the speed reference and the grid side are driven during a run.
struct EngineMode {
    bool power_loop = true;                 // false: speed reference applied directly
    std::optional<double> speed_ref_direct; // required when power_loop is false
    bool hold_grid_frequency = false;       // freeze dw_g and p_m (identification runs)
    double held_dw_g = 0.0;
    bool delta_form = false;                // x[th_hat] carries delta = th_g - th_hat
    std::optional<CascadeForm> cascade_override; // defaults to the configured cascade
};

// Full 21-slot derivative. The algebraic chain is evaluated in dependency order:
// PLL estimate, terminal voltage, control laws, plant dynamics.
Vec21 assemble_derivative(const Vec21& x, const Vec9& u, const ModelParameters& p,
                          const EngineMode& mode = {});

struct DerivedOutputs {
    double p_t, p_t_ref, w_m_ref, w_hat, p_t_agg, v_m2, i_m_ref, i_d_ref;
};
DerivedOutputs derived_outputs(const Vec21& x, const Vec9& u, const ModelParameters& p,
                               const EngineMode& mode = {});

// ---------------- equilibrium ----------------

struct OperatingPoint {
    Vec21 x;
    Vec9 u;
};

// Infinity norm of the derivative excluding the freely integrating grid angle.
double equilibrium_residual(const Vec21& x, const Vec9& u, const ModelParameters& p,
                            const EngineMode& mode = {});

// Damped Newton refinement from a guess, working in the reduced angle coordinate
// with the grid angle pinned and the power integrator fixed at its seed value.
// Throws ConvergenceError (carrying the last residual) when the budget runs out.
Vec21 find_equilibrium(const Vec9& u, const Vec21& guess, const ModelParameters& p,
                       double tol = 1e-10, int max_iter = 50);

// Closed-form seed plus Newton polish. Without w_m0 the nominal point is returned
// (compartment temperature at its setpoint). With w_m0 the speed is pinned, the
// temperature floats, and the setpoint input is moved onto the floated temperature
// so the returned point is a true equilibrium.
OperatingPoint solve_operating_point(const ModelParameters& p,
                                     std::optional<double> w_m0 = {}, double w_0 = 1.0);

// ---------------- scenarios ----------------

struct Event {
    double t;
    int input;    // index into the input vector
    double value; // new absolute value
};

struct Scenario {
    Vec9 u0 = Vec9::Zero();
    std::vector<Event> events; // times strictly increasing, within [0, duration]
    double duration = 1.0;
    double dt_out = 1e-3;
    void validate() const;
};

// Line format: "duration = 45", "dt_out = 0.001", optional "input NAME = value"
// overrides, and event rows "t, input, value" (input by name or index).
Scenario load_scenario(std::istream& in);
Scenario load_scenario_file(const std::string& path);
std::string serialize_scenario(const Scenario& sc);

// ---------------- integration ----------------

struct Trajectory {
    std::vector<double> t;
    Eigen::MatrixXd states;  // samples x 21
    Eigen::MatrixXd outputs; // samples x 8 derived quantities
    static const std::vector<std::string>& output_names();
    std::vector<std::string> csv_header() const;
    Eigen::MatrixXd csv_matrix() const; // t column + states + outputs
};

struct IntegratorOptions {
    double rtol = 1e-8;
    double atol = 1e-10;
    double max_step = 1e-2; // safeguard for the stiff stepper
};

// Stiff-capable adaptive integration with events applied by stopping exactly at
// the event time and restarting. Angles are integrated in the reduced delta
// coordinate internally and converted back for output.
Trajectory integrate(const Vec21& x0, const Scenario& sc, const ModelParameters& p,
                     const EngineMode& mode = {}, const IntegratorOptions& opt = {});

} // namespace vsdr::engine
