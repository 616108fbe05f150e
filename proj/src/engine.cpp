#include "vsdr/engine.hpp"
#include "vsdr/control.hpp"
#include "vsdr/csvio.hpp"
#include "vsdr/errors.hpp"
#include "vsdr/grid.hpp"
#include "vsdr/plant.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace vsdr::engine {

namespace {

using plant::DqPair;

// Single evaluation of the full right-hand side. Each state slot is produced by
// exactly one module operation; the algebraic quantities are evaluated in
// dependency order so no implicit loop remains.
void derivative_core(const double* x, const double* u, const ModelParameters& p,
                     const EngineMode& mode, double* dx) {
    using namespace ix;
    const CascadeForm cascade = mode.cascade_override.value_or(p.opts.cascade);

    const double dw_g = mode.hold_grid_frequency ? mode.held_dw_g : x[ix::dw_g];
    const double w_g = u[w_0] + dw_g;
    const double delta = mode.delta_form ? x[th_hat] : x[th_g] - x[th_hat];

    // PLL estimate
    auto pll = control::sogi_pll_step(delta, x[v_pll_q], x[mu_pll], w_g, u[w_0], p.gains,
                                      p.bases.w_b);

    // terminal voltage in the PLL frame
    DqPair i_t{x[i_d], x[i_q]};
    DqPair v_t = grid::terminal_voltage(i_t, delta, p.elec);

    // outer power/droop loop and speed reference
    auto pd = control::power_droop_reference(v_t, i_t, pll.w_hat, u[p_t0], x[mu_pt], u[w_0],
                                             p.gains, p.opts.droop_sign);
    auto tr = control::temperature_reference(x[T_f], u[T_f_ref], x[mu_T], p.gains);
    double w_m_ref;
    if (mode.power_loop) {
        w_m_ref = control::speed_reference(tr.w_mT_ref, pd.dw_m_ref, p.opts.speed_saturation);
    } else {
        if (!mode.speed_ref_direct)
            throw ValidationError("engine mode: direct speed reference required when the power loop is off");
        w_m_ref = control::speed_reference(*mode.speed_ref_direct, 0.0, p.opts.speed_saturation);
    }

    // inverter side
    auto inv = control::inverter_control(x[w_m], w_m_ref, x[i_m], x[mu_wm], x[mu_im],
                                         x[v_dc], p.gains, cascade);
    double i_dc2 = plant::inverter_dc_current(inv.v_m2, x[i_m], x[v_dc], p.opts.v_dc_min);

    // rectifier side
    auto rv = control::rectifier_voltage_control(x[v_dc], u[v_dc_ref], x[mu_v], p.gains);
    auto cc = control::dq_current_control(i_t, DqPair{rv.i_d_ref, u[i_q_ref]}, x[mu_cd],
                                          x[mu_cq], u[v_dc_ref], pll.w_hat, p.gains,
                                          p.elec.l_s);

    // plant dynamics
    auto comp = plant::compressor_derivatives(x[q_th], x[t_c], x[w_m], p.thermal);
    dx[q_th] = comp.dq_th;
    dx[t_c] = comp.dt_c;
    dx[T_f] = plant::compartment_derivative(x[T_f], x[q_th], p.thermal);
    auto bl = plant::bldc_derivatives(x[i_m], x[w_m], inv.v_m2, x[t_c], p.bldc, p.bases.w_b);
    dx[i_m] = bl.di_m;
    dx[w_m] = bl.dw_m;
    auto el = plant::electrical_derivatives(i_t, v_t, cc.m, x[v_dc], w_g, p.elec, p.bases.w_b);
    dx[i_d] = el.d;
    dx[i_q] = el.q;
    dx[v_dc] = plant::dclink_derivative(cc.m, i_t, i_dc2, p.elec, p.bases.w_b,
                                        p.opts.dc_link_factor);

    // PLL and angles
    dx[v_pll_q] = pll.dv_pll_q;
    dx[mu_pll] = pll.dmu_pll;
    if (mode.delta_form) {
        dx[th_hat] = (w_g - pll.w_hat) * p.bases.w_b; // d(delta)
    } else {
        dx[th_hat] = pll.dth_hat;
    }

    // grid equivalent
    double p_tld = p.kappa() * pd.p_t;
    auto gd = grid::grid_derivatives(x[p_m], dw_g, u[p_l], p_tld, u[p_m0], p.grid,
                                     p.bases.w_b);
    dx[th_g] = gd.dth_g;
    if (mode.hold_grid_frequency) {
        dx[p_m] = 0.0;
        dx[ix::dw_g] = 0.0;
    } else {
        dx[p_m] = gd.dp_m;
        dx[ix::dw_g] = gd.ddw_g;
    }

    // integrators
    dx[mu_cd] = cc.dmu_cd;
    dx[mu_cq] = cc.dmu_cq;
    dx[mu_T] = tr.dmu_T;
    dx[mu_v] = rv.dmu_v;
    dx[mu_wm] = inv.dmu_wm;
    dx[mu_im] = inv.dmu_im;
    dx[mu_pt] = mode.power_loop ? pd.dmu_pt : 0.0;
}

} // namespace

Vec21 assemble_derivative(const Vec21& x, const Vec9& u, const ModelParameters& p,
                          const EngineMode& mode) {
    Vec21 dx;
    derivative_core(x.data(), u.data(), p, mode, dx.data());
    return dx;
}

DerivedOutputs derived_outputs(const Vec21& x, const Vec9& u, const ModelParameters& p,
                               const EngineMode& mode) {
    using namespace ix;
    const CascadeForm cascade = mode.cascade_override.value_or(p.opts.cascade);
    const double dw = mode.hold_grid_frequency ? mode.held_dw_g : x[ix::dw_g];
    const double w_g = u[w_0] + dw;
    const double delta = mode.delta_form ? x[th_hat] : x[th_g] - x[th_hat];

    auto pll = control::sogi_pll_step(delta, x[v_pll_q], x[mu_pll], w_g, u[w_0], p.gains,
                                      p.bases.w_b);
    DqPair i_t{x[i_d], x[i_q]};
    DqPair v_t = grid::terminal_voltage(i_t, delta, p.elec);
    auto pd = control::power_droop_reference(v_t, i_t, pll.w_hat, u[p_t0], x[mu_pt], u[w_0],
                                             p.gains, p.opts.droop_sign);
    auto tr = control::temperature_reference(x[T_f], u[T_f_ref], x[mu_T], p.gains);
    double w_ref;
    if (mode.power_loop)
        w_ref = control::speed_reference(tr.w_mT_ref, pd.dw_m_ref, p.opts.speed_saturation);
    else
        w_ref = control::speed_reference(mode.speed_ref_direct.value_or(x[w_m]), 0.0,
                                         p.opts.speed_saturation);
    auto inv = control::inverter_control(x[w_m], w_ref, x[i_m], x[mu_wm], x[mu_im], x[v_dc],
                                         p.gains, cascade);
    auto rv = control::rectifier_voltage_control(x[v_dc], u[v_dc_ref], x[mu_v], p.gains);

    DerivedOutputs o;
    o.p_t = pd.p_t;
    o.p_t_ref = pd.p_t_ref;
    o.w_m_ref = w_ref;
    o.w_hat = pll.w_hat;
    o.p_t_agg = p.kappa() * pd.p_t;
    o.v_m2 = inv.v_m2;
    o.i_m_ref = inv.i_m_ref;
    o.i_d_ref = rv.i_d_ref;
    return o;
}

// ---------------- equilibrium ----------------

double equilibrium_residual(const Vec21& x, const Vec9& u, const ModelParameters& p,
                            const EngineMode& mode) {
    EngineMode m = mode;
    m.delta_form = true;
    Vec21 z = x;
    if (!mode.delta_form) z[ix::th_hat] = x[ix::th_g] - x[ix::th_hat];
    z[ix::th_g] = 0.0;
    Vec21 dx = assemble_derivative(z, u, p, m);
    dx[ix::th_g] = 0.0; // grid angle integrates freely
    return dx.cwiseAbs().maxCoeff();
}

namespace {

// Reduced residual: delta-form derivative without the grid-angle row.
Eigen::VectorXd newton_residual(const Vec21& z, const Vec9& u, const ModelParameters& p) {
    EngineMode m;
    m.delta_form = true;
    Vec21 dx = assemble_derivative(z, u, p, m);
    Eigen::VectorXd f(20);
    int k = 0;
    for (int i = 0; i < 21; ++i)
        if (i != ix::th_g) f[k++] = dx[i];
    return f;
}

} // namespace

Vec21 find_equilibrium(const Vec9& u, const Vec21& guess, const ModelParameters& p,
                       double tol, int max_iter) {
    // unknowns: every state except the pinned grid angle and the power integrator,
    // which is held at its seed value to normalize the redundant reference split
    std::vector<int> unknowns;
    for (int i = 0; i < 21; ++i)
        if (i != ix::th_g && i != ix::mu_pt) unknowns.push_back(i);

    Vec21 z = guess;
    z[ix::th_hat] = guess[ix::th_g] - guess[ix::th_hat]; // delta coordinate
    z[ix::th_g] = 0.0;

    Eigen::VectorXd f = newton_residual(z, u, p);
    double fn = f.lpNorm<Eigen::Infinity>();
    for (int it = 0; it < max_iter; ++it) {
        if (fn < tol) {
            Vec21 x = z;
            x[ix::th_g] = 0.0;
            x[ix::th_hat] = -z[ix::th_hat]; // absolute estimate from delta with th_g = 0
            return x;
        }
        // finite-difference Jacobian over the unknown set
        Eigen::MatrixXd J(20, static_cast<Eigen::Index>(unknowns.size()));
        for (size_t c = 0; c < unknowns.size(); ++c) {
            int j = unknowns[c];
            double h = 1e-7 * std::max(1.0, std::abs(z[j]));
            Vec21 zp = z, zm = z;
            zp[j] += h;
            zm[j] -= h;
            J.col(static_cast<Eigen::Index>(c)) =
                (newton_residual(zp, u, p) - newton_residual(zm, u, p)) / (2.0 * h);
        }
        Eigen::VectorXd step = J.colPivHouseholderQr().solve(-f);
        double alpha = 1.0;
        for (;;) {
            Vec21 zt = z;
            for (size_t c = 0; c < unknowns.size(); ++c)
                zt[unknowns[c]] += alpha * step[static_cast<Eigen::Index>(c)];
            Eigen::VectorXd ft = newton_residual(zt, u, p);
            double ftn = ft.lpNorm<Eigen::Infinity>();
            if (ftn <= (1.0 - 1e-4 * alpha) * fn || alpha < 1.0 / 64.0) {
                z = zt;
                f = ft;
                fn = ftn;
                break;
            }
            alpha *= 0.5;
        }
    }
    if (fn < tol) {
        Vec21 x = z;
        x[ix::th_g] = 0.0;
        x[ix::th_hat] = -z[ix::th_hat];
        return x;
    }
    throw ConvergenceError("find_equilibrium: no convergence, residual " + std::to_string(fn),
                           fn);
}

OperatingPoint solve_operating_point(const ModelParameters& p, std::optional<double> w_m0,
                                     double w_0_val) {
    const auto& th = p.thermal;
    double w_m, T_f_eq, T_f_ref_eff;
    if (!w_m0) {
        // nominal point: the heat map must balance the compartment losses at the setpoint
        double target = (th.T_a - th.T_f_ref) / th.r_th;
        double A = th.a2, B = th.a1, C = th.a0 - target;
        double disc = B * B - 4.0 * A * C;
        if (disc < 0.0)
            throw ConvergenceError("solve_operating_point: no speed satisfies the thermal balance");
        double r1 = (-B + std::sqrt(disc)) / (2.0 * A);
        double r2 = (-B - std::sqrt(disc)) / (2.0 * A);
        w_m = std::min(r1 > 0 ? r1 : r2, r2 > 0 ? r2 : r1);
        if (!(w_m > 0))
            throw ConvergenceError("solve_operating_point: no positive equilibrium speed");
        T_f_eq = th.T_f_ref;
        T_f_ref_eff = th.T_f_ref;
    } else {
        // pinned-speed mode: temperature floats; the setpoint input follows it so the
        // temperature loop is genuinely at rest
        w_m = *w_m0;
        auto ss = plant::compressor_steady_state(w_m, th);
        T_f_eq = th.T_a - th.r_th * ss.q_th0;
        T_f_ref_eff = T_f_eq;
    }

    auto ss = plant::compressor_steady_state(w_m, th);
    double i_m = (ss.t_c0 + p.bldc.b * w_m) / p.bldc.k_t;
    double v_m2 = p.bldc.r_a * i_m + p.bldc.k_e * w_m;
    double v_dc = 1.0;

    // DC balance with i_q = 0 and delta = 0: factor*(v_g - r_s i_d) i_d = v_m2 i_m
    double cc = v_m2 * i_m / p.opts.dc_link_factor;
    double disc = p.elec.v_g * p.elec.v_g - 4.0 * p.elec.r_s * cc;
    if (disc < 0.0)
        throw ConvergenceError("solve_operating_point: no feasible rectifier in-feed");
    double i_d = (p.elec.v_g - std::sqrt(disc)) / (2.0 * p.elec.r_s);
    double v_d = p.elec.v_g;
    double v_q = -p.elec.x_g * i_d;
    double m_d = (v_d - p.elec.r_s * i_d) / v_dc;
    double m_q = (v_q - p.elec.l_s * w_0_val * i_d) / v_dc;
    double p_t = 0.5 * v_d * i_d;

    Vec21 x = Vec21::Zero();
    x[ix::T_f] = T_f_eq;
    x[ix::w_m] = w_m;
    x[ix::i_m] = i_m;
    x[ix::t_c] = ss.t_c0;
    x[ix::q_th] = ss.q_th0;
    x[ix::i_d] = i_d;
    x[ix::i_q] = 0.0;
    x[ix::v_dc] = v_dc;
    x[ix::mu_cd] = -m_d / p.gains.k_ic1;
    x[ix::mu_cq] = -(m_q + (p.elec.l_s * w_0_val / v_dc) * i_d) / p.gains.k_ic1;
    x[ix::mu_T] = (w_m - p.gains.k_pT * (T_f_ref_eff - T_f_eq)) / p.gains.k_iT;
    x[ix::mu_v] = i_d / p.gains.k_iv;
    x[ix::mu_wm] = (p.opts.cascade == CascadeForm::conventional) ? i_m / p.gains.k_is : 0.0;
    x[ix::mu_im] = (v_m2 - v_dc) / p.gains.k_ic2;
    x[ix::p_m] = p.grid.p_l0 + p.kappa() * p_t;

    Vec9 u;
    u[ix::p_l] = p.grid.p_l0;
    u[ix::T_f_ref] = T_f_ref_eff;
    u[ix::v_dc_ref] = v_dc;
    u[ix::i_q_ref] = 0.0;
    u[ix::T_a] = th.T_a;
    u[ix::p_t0] = p_t;
    u[ix::p_m0] = x[ix::p_m];
    u[ix::w_0] = w_0_val;
    u[ix::v_g] = p.elec.v_g;

    Vec21 xe = find_equilibrium(u, x, p);
    if (xe[ix::w_m] < control::kSpeedRefMin - 1e-12 || xe[ix::w_m] > control::kSpeedRefMax + 1e-12)
        throw ValidationError("solve_operating_point: equilibrium speed " +
                              std::to_string(xe[ix::w_m]) + " outside the operating range");
    return {xe, u};
}

// ---------------- scenarios ----------------

void Scenario::validate() const {
    if (!(duration > 0.0)) throw ValidationError("scenario: duration must be > 0");
    if (!(dt_out > 0.0)) throw ValidationError("scenario: dt_out must be > 0");
    double prev = -1.0;
    for (const auto& e : events) {
        if (e.t < 0.0 || e.t > duration)
            throw ValidationError("scenario: event time outside [0, duration]");
        if (e.t <= prev) throw ValidationError("scenario: event times must be strictly increasing");
        if (e.input < 0 || e.input >= ix::N_INPUTS)
            throw ValidationError("scenario: event input index out of range");
        prev = e.t;
    }
}

Scenario load_scenario(std::istream& in) {
    Scenario sc;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto strip = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r\n");
            if (a == std::string::npos) return std::string();
            size_t b = s.find_last_not_of(" \t\r\n");
            return s.substr(a, b - a + 1);
        };
        std::string s = strip(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq != std::string::npos && s.find(',') == std::string::npos) {
            std::string key = strip(s.substr(0, eq));
            std::string val = strip(s.substr(eq + 1));
            if (key == "duration") sc.duration = std::stod(val);
            else if (key == "dt_out") sc.dt_out = std::stod(val);
            else if (key.rfind("input ", 0) == 0) {
                std::string name = strip(key.substr(6));
                int idx = input_index(name);
                if (idx < 0) throw ValidationError("scenario: unknown input " + name);
                sc.u0[idx] = std::stod(val);
            } else {
                throw ValidationError("scenario line " + std::to_string(lineno) +
                                      ": unknown directive " + key);
            }
            continue;
        }
        // event row: t, input, value
        std::stringstream ss(s);
        std::string a, b, c;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c))
            throw ValidationError("scenario line " + std::to_string(lineno) +
                                  ": expected 't, input, value'");
        Event e;
        e.t = std::stod(strip(a));
        std::string iname = strip(b);
        int idx = input_index(iname);
        if (idx < 0) {
            try {
                idx = std::stoi(iname);
            } catch (const std::exception&) {
                throw ValidationError("scenario line " + std::to_string(lineno) +
                                      ": unknown input " + iname);
            }
        }
        e.input = idx;
        e.value = std::stod(strip(c));
        sc.events.push_back(e);
    }
    std::sort(sc.events.begin(), sc.events.end(),
              [](const Event& a, const Event& b) { return a.t < b.t; });
    sc.validate();
    return sc;
}

Scenario load_scenario_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open scenario file: " + path);
    return load_scenario(f);
}

std::string serialize_scenario(const Scenario& sc) {
    std::ostringstream out;
    char buf[40];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    out << "duration = " << num(sc.duration) << "\n";
    out << "dt_out = " << num(sc.dt_out) << "\n";
    for (int i = 0; i < ix::N_INPUTS; ++i)
        if (sc.u0[i] != 0.0)
            out << "input " << input_names()[i] << " = " << num(sc.u0[i]) << "\n";
    for (const auto& e : sc.events)
        out << num(e.t) << ", " << input_names()[e.input] << ", " << num(e.value) << "\n";
    return out.str();
}

// ---------------- integration ----------------

const std::vector<std::string>& Trajectory::output_names() {
    static const std::vector<std::string> names = {"p_t",     "p_t_ref", "w_m_ref", "w_hat",
                                                   "p_t_agg", "v_m2",    "i_m_ref", "i_d_ref"};
    return names;
}

std::vector<std::string> Trajectory::csv_header() const {
    std::vector<std::string> h;
    h.push_back("t");
    for (const auto& n : state_names()) h.push_back(n);
    for (const auto& n : output_names()) h.push_back(n);
    return h;
}

Eigen::MatrixXd Trajectory::csv_matrix() const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(t.size()), 1 + states.cols() + outputs.cols());
    for (size_t r = 0; r < t.size(); ++r) {
        auto ri = static_cast<Eigen::Index>(r);
        m(ri, 0) = t[r];
        m.block(ri, 1, 1, states.cols()) = states.row(ri);
        m.block(ri, 1 + states.cols(), 1, outputs.cols()) = outputs.row(ri);
    }
    return m;
}

namespace {

using Mat21 = Eigen::Matrix<double, 21, 21>;

// Linearly implicit 4th-order stepper with an embedded 3rd-order error estimate
// (six stages, one matrix factorization per attempt, stiffly accurate). The
// right-hand side between events is autonomous, so the explicit time-derivative
// terms of the general method drop out. Step-size control follows the standard
// predictive scheme: accept when the weighted RMS error is at most one, and
// bias the next proposal by the previous accepted step's error ratio.
struct StiffStepper {
    const ModelParameters* p;
    const EngineMode* mode;
    Vec9 u;
    double atol;
    double rtol;

    bool first_step = true;
    double err_old = 0.0;
    double dt_old = 0.0;
    bool last_rejected = false;

    static constexpr double gamma = 0.25;
    static constexpr double a21 = 1.544;
    static constexpr double a31 = 0.9466785280815826, a32 = 0.2557011698983284;
    static constexpr double a41 = 3.314825187068521, a42 = 2.896124015972201,
                            a43 = 0.9986419139977817;
    static constexpr double a51 = 1.221224509226641, a52 = 6.019134481288629,
                            a53 = 12.53708332932087, a54 = -0.6878860361058950;
    static constexpr double c21 = -5.6688;
    static constexpr double c31 = -2.430093356833875, c32 = -0.2063599157091915;
    static constexpr double c41 = -0.1073529058151375, c42 = -9.594562251023355,
                            c43 = -20.47028614809616;
    static constexpr double c51 = 7.496443313967647, c52 = -10.24680431464352,
                            c53 = -33.99990352819905, c54 = 11.70890893206160;
    static constexpr double c61 = 8.083246795921522, c62 = -7.981132988064893,
                            c63 = -31.52159432874371, c64 = 16.31930543123136,
                            c65 = -6.058818238834054;

    Vec21 field(const Vec21& x) const {
        Vec21 dx;
        derivative_core(x.data(), u.data(), *p, *mode, dx.data());
        return dx;
    }

    // Central-difference Jacobian; the grid-angle column is structurally zero in
    // the delta form used for integration.
    Mat21 jacobian(const Vec21& x) const {
        Mat21 J;
        for (int j = 0; j < 21; ++j) {
            if (mode->delta_form && j == ix::th_g) {
                J.col(j).setZero();
                continue;
            }
            double h = 1e-7 * std::max(1.0, std::abs(x[j]));
            Vec21 xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            J.col(j) = (field(xp) - field(xm)) / (2.0 * h);
        }
        return J;
    }

    // One embedded attempt at step size dt. Writes the candidate state and
    // returns the weighted RMS error (large sentinel if anything went non-finite).
    double attempt(const Vec21& x, double dt, Vec21& xout) const {
        Mat21 W = Mat21::Identity() / (gamma * dt) - jacobian(x);
        Eigen::PartialPivLU<Mat21> lu(W);

        Vec21 g1 = lu.solve(field(x));
        Vec21 xt = x + a21 * g1;
        Vec21 g2 = lu.solve(field(xt) + (c21 * g1) / dt);
        xt = x + a31 * g1 + a32 * g2;
        Vec21 g3 = lu.solve(field(xt) + (c31 * g1 + c32 * g2) / dt);
        xt = x + a41 * g1 + a42 * g2 + a43 * g3;
        Vec21 g4 = lu.solve(field(xt) + (c41 * g1 + c42 * g2 + c43 * g3) / dt);
        xt = x + a51 * g1 + a52 * g2 + a53 * g3 + a54 * g4;
        Vec21 g5 = lu.solve(field(xt) + (c51 * g1 + c52 * g2 + c53 * g3 + c54 * g4) / dt);
        xt += g5;
        Vec21 xerr =
            lu.solve(field(xt) + (c61 * g1 + c62 * g2 + c63 * g3 + c64 * g4 + c65 * g5) / dt);
        xout = xt + xerr;

        double acc = 0.0;
        for (int i = 0; i < 21; ++i) {
            double sk = atol + rtol * std::max(std::abs(x[i]), std::abs(xout[i]));
            double w = xerr[i] / sk;
            acc += w * w;
        }
        double err = std::sqrt(acc / 21.0);
        if (!std::isfinite(err) || !xout.allFinite()) return 1e10;
        return err;
    }

    // On success updates x and t and leaves the next proposal in dt; on
    // rejection leaves the reduced retry size in dt.
    bool try_step(Vec21& x, double& t, double& dt) {
        constexpr double safe = 0.9, fac_max = 5.0, fac_min = 1.0 / 6.0;
        Vec21 xnew;
        double err = attempt(x, dt, xnew);
        double fac = std::max(fac_min, std::min(fac_max, std::pow(err, 0.25) / safe));
        double dt_new = dt / fac;
        if (err <= 1.0) {
            if (!first_step) {
                double fac_pred = (dt_old / dt) * std::pow(err * err / err_old, 0.25) / safe;
                fac_pred = std::max(fac_min, std::min(fac_max, fac_pred));
                fac = std::max(fac, fac_pred);
                dt_new = dt / fac;
            }
            first_step = false;
            dt_old = dt;
            err_old = std::max(0.01, err);
            if (last_rejected) dt_new = std::min(dt_new, dt);
            last_rejected = false;
            t += dt;
            x = xnew;
            dt = dt_new;
            return true;
        }
        dt = dt_new;
        last_rejected = true;
        return false;
    }
};

} // namespace

Trajectory integrate(const Vec21& x0, const Scenario& sc, const ModelParameters& p,
                     const EngineMode& mode, const IntegratorOptions& opt) {
    sc.validate();
    if (!(opt.max_step > 0.0)) throw ValidationError("integrate: max_step must be > 0");

    // integrate in the delta coordinate regardless of how the start was expressed
    EngineMode m = mode;
    const bool caller_delta = mode.delta_form;
    m.delta_form = true;
    Vec21 z0 = x0;
    if (!caller_delta) z0[ix::th_hat] = x0[ix::th_g] - x0[ix::th_hat];

    StiffStepper stepper{&p, &m, sc.u0, opt.atol, opt.rtol};
    Vec21 x = z0;

    size_t nsamp = static_cast<size_t>(std::floor(sc.duration / sc.dt_out + 1e-9)) + 1;
    Trajectory traj;
    traj.t.reserve(nsamp);
    traj.states.resize(static_cast<Eigen::Index>(nsamp), 21);
    traj.outputs.resize(static_cast<Eigen::Index>(nsamp), 8);

    size_t next_event = 0;
    auto apply_events_at = [&](double tnow) {
        while (next_event < sc.events.size() && sc.events[next_event].t <= tnow + 1e-12) {
            stepper.u[sc.events[next_event].input] = sc.events[next_event].value;
            ++next_event;
        }
    };

    double t = 0.0;
    double dt_carry = std::min(opt.max_step, sc.dt_out);
    auto advance_to = [&](double target) {
        long guard = 0;
        while (t < target - 1e-12) {
            double dt_try = std::min({dt_carry, opt.max_step, target - t});
            bool clamped = dt_try < dt_carry;
            if (stepper.try_step(x, t, dt_try)) {
                // keep the pre-clamp suggestion when the boundary shortened the step,
                // otherwise adopt the controller's new proposal
                if (!clamped) dt_carry = dt_try;
                for (int i = 0; i < 21; ++i)
                    if (!std::isfinite(x[i]))
                        throw NumericalError("integrate: non-finite state at t = " +
                                             std::to_string(t));
            } else {
                dt_carry = dt_try; // accuracy rejection: honor the reduction
                if (dt_carry < 1e-14)
                    throw NumericalError("integrate: step size collapse at t = " +
                                         std::to_string(t));
            }
            if (++guard > 50'000'000)
                throw NumericalError("integrate: step budget exhausted at t = " +
                                     std::to_string(t));
        }
        t = target;
    };

    auto sample = [&](size_t k, double ts) {
        Vec21 row = x;
        auto out = derived_outputs(row, stepper.u, p, m);
        if (!caller_delta) {
            double delta = row[ix::th_hat];
            row[ix::th_hat] = row[ix::th_g] - delta;
        }
        traj.t.push_back(ts);
        auto ri = static_cast<Eigen::Index>(k);
        traj.states.row(ri) = row.transpose();
        traj.outputs(ri, 0) = out.p_t;
        traj.outputs(ri, 1) = out.p_t_ref;
        traj.outputs(ri, 2) = out.w_m_ref;
        traj.outputs(ri, 3) = out.w_hat;
        traj.outputs(ri, 4) = out.p_t_agg;
        traj.outputs(ri, 5) = out.v_m2;
        traj.outputs(ri, 6) = out.i_m_ref;
        traj.outputs(ri, 7) = out.i_d_ref;
    };

    apply_events_at(0.0);
    sample(0, 0.0);
    for (size_t k = 1; k < nsamp; ++k) {
        double target = static_cast<double>(k) * sc.dt_out;
        while (next_event < sc.events.size() && sc.events[next_event].t < target - 1e-12) {
            advance_to(sc.events[next_event].t);
            apply_events_at(t);
        }
        advance_to(target);
        apply_events_at(target);
        sample(k, target);
    }
    return traj;
}

} // namespace vsdr::engine
