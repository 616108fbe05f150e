#include "vsdr/reduction.hpp"
#include "vsdr/control.hpp"
#include "vsdr/csvio.hpp"
#include "vsdr/errors.hpp"
#include "vsdr/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <boost/numeric/odeint.hpp>
#include <unsupported/Eigen/MatrixFunctions>

namespace vsdr::reduction {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

const char* structure_name(Structure s) {
    switch (s) {
    case Structure::P1Z0: return "P1Z0";
    case Structure::P2Z0: return "P2Z0";
    case Structure::P2Z1: return "P2Z1";
    case Structure::P3Z0: return "P3Z0";
    case Structure::P3Z1: return "P3Z1";
    default: return "P3Z2";
    }
}

Structure structure_from_name(const std::string& name) {
    for (Structure s : all_structures())
        if (name == structure_name(s)) return s;
    throw ValidationError("unknown reduced structure: " + name);
}

int pole_count(Structure s) {
    switch (s) {
    case Structure::P1Z0: return 1;
    case Structure::P2Z0:
    case Structure::P2Z1: return 2;
    default: return 3;
    }
}

int zero_count(Structure s) {
    switch (s) {
    case Structure::P2Z1:
    case Structure::P3Z1: return 1;
    case Structure::P3Z2: return 2;
    default: return 0;
    }
}

const std::vector<Structure>& all_structures() {
    static const std::vector<Structure> all = {Structure::P1Z0, Structure::P2Z0,
                                               Structure::P2Z1, Structure::P3Z0,
                                               Structure::P3Z1, Structure::P3Z2};
    return all;
}

std::vector<double> TransferFunctionModel::minimal_num() const {
    switch (pole_count(structure)) {
    case 1: return {n0};
    case 2: return {n1, n0};
    default: return {n2, n1, n0};
    }
}

std::vector<double> TransferFunctionModel::minimal_den() const {
    switch (pole_count(structure)) {
    case 1: return {1.0, d0};
    case 2: return {1.0, d1, d0};
    default: return {1.0, d2, d1, d0};
    }
}

std::array<double, 3> TransferFunctionModel::padded_num() const {
    switch (pole_count(structure)) {
    case 1: return {n0, 0.0, 0.0};
    case 2: return {n1, n0, 0.0};
    default: return {n2, n1, n0};
    }
}

std::array<double, 3> TransferFunctionModel::padded_den() const {
    switch (pole_count(structure)) {
    case 1: return {d0, 0.0, 0.0};
    case 2: return {d1, d0, 0.0};
    default: return {d2, d1, d0};
    }
}

double TransferFunctionModel::dc_gain() const {
    auto den = minimal_den();
    auto num = minimal_num();
    return num.back() / den.back();
}

std::complex<double> TransferFunctionModel::frequency_response(double w) const {
    std::complex<double> s(0.0, w);
    auto num = minimal_num();
    auto den = minimal_den();
    std::complex<double> nv = 0.0, dv = 0.0;
    for (double c : num) nv = nv * s + c;
    for (double c : den) dv = dv * s + c;
    return nv / dv;
}

void TransferFunctionModel::check() const {
    const int np = pole_count(structure);
    const int nz = zero_count(structure);
    auto bad = [&](const std::string& why) {
        throw ValidationError(std::string("transfer function ") + structure_name(structure) +
                              ": " + why);
    };
    if (np == 2 && d2 != 1.0) bad("second-order layout requires d2 = 1 (the monic s^2)");
    if (np == 1 && (d2 != 0.0 || d1 != 1.0)) bad("first-order layout requires d2 = 0, d1 = 1");
    if (nz < 2 && n2 != 0.0) bad("numerator order exceeds the zero count");
    if (nz < 1 && n1 != 0.0) bad("numerator order exceeds the zero count");
    if (nz == 2 && n2 == 0.0) bad("leading numerator coefficient vanishes");
    if (nz == 1 && n1 == 0.0) bad("leading numerator coefficient vanishes");
    if (nz == 0 && n0 == 0.0) bad("numerator vanishes");
    // Routh conditions for monic orders up to three; exact on coefficients,
    // no eigensolve roundoff near the imaginary axis
    bool hurwitz;
    if (np == 1)
        hurwitz = d0 > 0.0;
    else if (np == 2)
        hurwitz = d1 > 0.0 && d0 > 0.0;
    else
        hurwitz = d2 > 0.0 && d1 > 0.0 && d0 > 0.0 && d2 * d1 > d0;
    if (!hurwitz) bad("open-loop denominator is not Hurwitz");
}

TransferFunctionModel table2(Structure s) {
    TransferFunctionModel tf;
    tf.structure = s;
    switch (s) {
    case Structure::P3Z2:
        tf.n2 = -454.27; tf.n1 = 3.879e6; tf.n0 = 7.955e6;
        tf.d2 = 4.332e3; tf.d1 = 1.994e5; tf.d0 = 1.065e7;
        tf.fit_score = 77.0;
        break;
    case Structure::P3Z1:
        tf.n2 = 0.0; tf.n1 = 3.456e6; tf.n0 = 7.084e6;
        tf.d2 = 3.878e3; tf.d1 = 1.778e5; tf.d0 = 9.480e6;
        tf.fit_score = 77.0;
        break;
    case Structure::P3Z0:
        tf.n2 = 0.0; tf.n1 = 0.0; tf.n0 = 1.318e11;
        tf.d2 = 3.966e5; tf.d1 = 8.833e7; tf.d0 = 1.745e11;
        tf.fit_score = 22.0;
        break;
    case Structure::P2Z1:
        tf.n2 = 0.0; tf.n1 = 890.01; tf.n0 = 1.83e3;
        tf.d2 = 1.0; tf.d1 = 45.14; tf.d0 = 2.43e3;
        tf.fit_score = 77.0;
        break;
    case Structure::P2Z0:
        tf.n2 = 0.0; tf.n1 = 0.0; tf.n0 = 3.519e3;
        tf.d2 = 1.0; tf.d1 = 6.169; tf.d0 = 4.651e3;
        tf.fit_score = 23.0;
        break;
    default:
        tf.n2 = 0.0; tf.n1 = 0.0; tf.n0 = 731.36;
        tf.d2 = 0.0; tf.d1 = 1.0; tf.d0 = 964.8;
        tf.fit_score = 22.0;
        break;
    }
    return tf;
}

TransferFunctionModel load_tf(std::istream& in) {
    TransferFunctionModel tf;
    bool have_structure = false;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t a = line.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) continue;
        size_t b = line.find_last_not_of(" \t\r\n");
        std::string s = line.substr(a, b - a + 1);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ValidationError("tf line " + std::to_string(lineno) + ": expected key = value");
        auto strip = [](std::string x) {
            size_t p = x.find_first_not_of(" \t");
            size_t q = x.find_last_not_of(" \t");
            return p == std::string::npos ? std::string() : x.substr(p, q - p + 1);
        };
        std::string key = strip(s.substr(0, eq)), val = strip(s.substr(eq + 1));
        if (key == "structure") {
            tf.structure = structure_from_name(val);
            have_structure = true;
            continue;
        }
        double* slot = key == "n2"          ? &tf.n2
                       : key == "n1"        ? &tf.n1
                       : key == "n0"        ? &tf.n0
                       : key == "d2"        ? &tf.d2
                       : key == "d1"        ? &tf.d1
                       : key == "d0"        ? &tf.d0
                       : key == "fit_score" ? &tf.fit_score
                                            : nullptr;
        if (!slot) throw ValidationError("tf line " + std::to_string(lineno) + ": unknown key " + key);
        try {
            size_t pos = 0;
            *slot = std::stod(val, &pos);
            if (pos != val.size()) throw std::invalid_argument(val);
        } catch (const std::exception&) {
            throw ValidationError("tf line " + std::to_string(lineno) + ": bad number " + val);
        }
    }
    if (!have_structure) throw ValidationError("tf document: missing structure tag");
    tf.check();
    return tf;
}

TransferFunctionModel load_tf_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open tf file: " + path);
    return load_tf(f);
}

std::string serialize_tf(const TransferFunctionModel& tf) {
    std::ostringstream out;
    out << "structure = " << structure_name(tf.structure) << "\n";
    out << "n2 = " << fmt(tf.n2) << "\nn1 = " << fmt(tf.n1) << "\nn0 = " << fmt(tf.n0) << "\n";
    out << "d2 = " << fmt(tf.d2) << "\nd1 = " << fmt(tf.d1) << "\nd0 = " << fmt(tf.d0) << "\n";
    if (std::isfinite(tf.fit_score)) out << "fit_score = " << fmt(tf.fit_score) << "\n";
    return out.str();
}

StateSpace3 tf_to_state_space(const TransferFunctionModel& tf) {
    auto num = tf.padded_num();
    auto den = tf.padded_den();
    StateSpace3 ss;
    ss.A << -den[0], -den[1], -den[2], 1, 0, 0, 0, 1, 0;
    ss.B << 1, 0, 0;
    ss.C << num[0], num[1], num[2];
    return ss;
}

StateSpace minimal_realization(const TransferFunctionModel& tf) {
    auto den = tf.minimal_den();
    auto num = tf.minimal_num();
    const int n = static_cast<int>(den.size()) - 1;
    StateSpace ss;
    ss.A = Eigen::MatrixXd::Zero(n, n);
    for (int j = 0; j < n; ++j) ss.A(0, j) = -den[static_cast<size_t>(j) + 1];
    for (int i = 1; i < n; ++i) ss.A(i, i - 1) = 1.0;
    ss.B = Eigen::VectorXd::Zero(n);
    ss.B[0] = 1.0;
    ss.C = Eigen::RowVectorXd::Zero(n);
    // state v_j carries s^(n-1-j)/D; place the numerator coefficients accordingly
    const int nz = static_cast<int>(num.size()) - 1;
    for (int i = 0; i <= nz; ++i) ss.C[n - 1 - (nz - i)] = num[static_cast<size_t>(i)];
    return ss;
}

namespace {

// Exact zero-order-hold discretization of (A, B) over step h.
void zoh_discretize(const Eigen::MatrixXd& A, const Eigen::VectorXd& B, double h,
                    Eigen::MatrixXd& Ad, Eigen::VectorXd& Bd) {
    const Eigen::Index n = A.rows();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n + 1, n + 1);
    M.topLeftCorner(n, n) = A * h;
    M.topRightCorner(n, 1) = B * h;
    Eigen::MatrixXd E = M.exp();
    Ad = E.topLeftCorner(n, n);
    Bd = E.topRightCorner(n, 1);
}

// Unit-step responses of s^i/D(s), i = 0..nz, as columns, on a uniform grid of
// N points spaced h.
Eigen::MatrixXd step_basis(const std::vector<double>& den, int nz, size_t N, double h) {
    const int n = static_cast<int>(den.size()) - 1;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (int j = 0; j < n; ++j) A(0, j) = -den[static_cast<size_t>(j) + 1];
    for (int i = 1; i < n; ++i) A(i, i - 1) = 1.0;
    Eigen::VectorXd B = Eigen::VectorXd::Zero(n);
    B[0] = 1.0;
    Eigen::MatrixXd Ad;
    Eigen::VectorXd Bd;
    zoh_discretize(A, B, h, Ad, Bd);
    Eigen::MatrixXd states(static_cast<Eigen::Index>(N), n);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (size_t k = 0; k < N; ++k) {
        states.row(static_cast<Eigen::Index>(k)) = x.transpose();
        x = Ad * x + Bd;
    }
    // state v_j corresponds to s^(n-1-j)/D; basis for zero power i is column n-1-i
    Eigen::MatrixXd out(static_cast<Eigen::Index>(N), nz + 1);
    for (int i = 0; i <= nz; ++i) out.col(i) = states.col(n - 1 - i);
    return out;
}

} // namespace

std::vector<double> step_response(const TransferFunctionModel& tf,
                                  const std::vector<double>& t) {
    if (t.size() < 2) throw ValidationError("step_response: need at least two samples");
    double h = t[1] - t[0];
    for (size_t k = 1; k < t.size(); ++k)
        if (std::abs(t[k] - t[k - 1] - h) > 1e-9 * std::max(1.0, std::abs(t[k])))
            throw ValidationError("step_response: non-uniform grid");
    auto ss = minimal_realization(tf);
    Eigen::MatrixXd Ad;
    Eigen::VectorXd Bd;
    zoh_discretize(ss.A, ss.B, h, Ad, Bd);
    std::vector<double> y(t.size());
    Eigen::VectorXd x = Eigen::VectorXd::Zero(ss.A.rows());
    for (size_t k = 0; k < t.size(); ++k) {
        y[k] = ss.C * x;
        x = Ad * x + Bd;
    }
    return y;
}

// ---------------- step battery ----------------

void StepBattery::check() const {
    if (segments.size() != 10)
        throw ValidationError("step battery: expected 10 segments, have " +
                              std::to_string(segments.size()));
    double lo = 1e9, hi = -1e9;
    for (const auto& s : segments) {
        lo = std::min({lo, s.w_start, s.w_end});
        hi = std::max({hi, s.w_start, s.w_end});
        if (s.t.size() != s.p_t_deviation.size() || s.t.size() < 2)
            throw ValidationError("step battery: malformed segment sampling");
    }
    if (std::abs(lo - 1.0 / 3.0) > 1e-9 || std::abs(hi - 4.0 / 3.0) > 1e-9)
        throw ValidationError("step battery: schedule does not span [1/3, 4/3] pu");
}

std::vector<std::pair<double, double>> battery_schedule() {
    std::vector<double> w(11);
    for (int k = 0; k <= 10; ++k) w[static_cast<size_t>(k)] = 1.0 / 3.0 + 0.1 * k;
    std::vector<std::pair<double, double>> segs;
    for (int k = 0; k < 10; ++k) {
        if (k % 2 == 0)
            segs.emplace_back(w[static_cast<size_t>(k)], w[static_cast<size_t>(k) + 1]);
        else
            segs.emplace_back(w[static_cast<size_t>(k) + 1], w[static_cast<size_t>(k)]);
    }
    return segs;
}

StepBattery generate_step_battery(const ModelParameters& p, double duration) {
    ModelParameters q = p;
    q.opts.cascade = p.opts.battery_cascade; // identification runs use this cascade throughout
    StepBattery bat;
    bat.duration = duration;
    bat.dt = 1e-3;
    bat.schedule_note = "10 equal partitions of [1/3, 4/3] pu, alternating up/down steps";
    for (auto [ws, we] : battery_schedule()) {
        engine::OperatingPoint op;
        try {
            op = engine::solve_operating_point(q, ws);
        } catch (const std::exception& e) {
            throw ConvergenceError("step battery: no equilibrium at w = " + fmt(ws) + ": " +
                                   e.what());
        }
        engine::EngineMode mode;
        mode.power_loop = false;
        mode.speed_ref_direct = we;
        mode.hold_grid_frequency = true;
        mode.held_dw_g = 0.0;
        engine::Scenario sc;
        sc.u0 = op.u;
        sc.duration = duration;
        sc.dt_out = bat.dt;
        auto traj = engine::integrate(op.x, sc, q, mode);
        StepSegment seg;
        seg.w_start = ws;
        seg.w_end = we;
        seg.step = we - ws;
        seg.t = traj.t;
        double base = traj.outputs(0, 0);
        seg.p_t_deviation.resize(traj.t.size());
        for (size_t k = 0; k < traj.t.size(); ++k)
            seg.p_t_deviation[k] = traj.outputs(static_cast<Eigen::Index>(k), 0) - base;
        bat.segments.push_back(std::move(seg));
    }
    bat.check();
    return bat;
}

void write_battery_csv(const StepBattery& bat, const std::string& path) {
    bat.check();
    size_t N = bat.segments.front().t.size();
    std::vector<std::string> header;
    header.push_back("t");
    for (size_t k = 0; k < bat.segments.size(); ++k)
        header.push_back("seg" + std::to_string(k) + " " + fmt(bat.segments[k].w_start) + " " +
                         fmt(bat.segments[k].w_end));
    Eigen::MatrixXd m(static_cast<Eigen::Index>(N), 1 + static_cast<Eigen::Index>(bat.segments.size()));
    for (size_t r = 0; r < N; ++r) {
        m(static_cast<Eigen::Index>(r), 0) = bat.segments.front().t[r];
        for (size_t k = 0; k < bat.segments.size(); ++k)
            m(static_cast<Eigen::Index>(r), 1 + static_cast<Eigen::Index>(k)) =
                bat.segments[k].p_t_deviation[r];
    }
    csv::write_file(path, header, m);
}

StepBattery read_battery_csv(const std::string& path) {
    auto tab = csv::read_file(path);
    if (tab.header.size() < 2 || tab.header[0] != "t")
        throw ValidationError("battery csv: unexpected schema");
    StepBattery bat;
    bat.schedule_note = "10 equal partitions of [1/3, 4/3] pu, alternating up/down steps";
    size_t N = static_cast<size_t>(tab.data.rows());
    if (N < 2) throw ValidationError("battery csv: too few rows");
    std::vector<double> t(N);
    for (size_t r = 0; r < N; ++r) t[r] = tab.data(static_cast<Eigen::Index>(r), 0);
    bat.dt = t[1] - t[0];
    bat.duration = t.back();
    for (size_t c = 1; c < tab.header.size(); ++c) {
        std::istringstream hs(tab.header[c]);
        std::string tag;
        StepSegment seg;
        if (!(hs >> tag >> seg.w_start >> seg.w_end))
            throw ValidationError("battery csv: bad segment header " + tab.header[c]);
        seg.step = seg.w_end - seg.w_start;
        seg.t = t;
        seg.p_t_deviation.resize(N);
        for (size_t r = 0; r < N; ++r)
            seg.p_t_deviation[r] = tab.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        bat.segments.push_back(std::move(seg));
    }
    bat.check();
    return bat;
}

// ---------------- fitting ----------------

namespace {

// theta -> stable monic denominator, descending coefficients; exponents are
// clamped so the search cannot reach denominators that are degenerate in
// floating point (near-zero damping, overflowing pole products)
std::vector<double> den_from_theta(const Eigen::VectorXd& th, int np) {
    auto ex = [](double v) { return std::exp(std::clamp(v, -8.0, 16.0)); };
    if (np == 1) {
        double p1 = ex(th[0]);
        return {1.0, p1};
    }
    if (np == 2) {
        double wn = ex(th[0]), z = ex(th[1]);
        return {1.0, 2.0 * z * wn, wn * wn};
    }
    double p1 = ex(th[0]), wn = ex(th[1]), z = ex(th[2]);
    return {1.0, p1 + 2.0 * z * wn, wn * wn + 2.0 * z * wn * p1, p1 * wn * wn};
}

struct FitEval {
    Eigen::VectorXd residual;
    Eigen::VectorXd c; // numerator coefficients, ascending powers
    std::vector<double> den;
    bool finite = true;
};

constexpr double kDivergedResidual = 1e6;

} // namespace

TransferFunctionModel fit_transfer_function(const StepBattery& bat, Structure s,
                                            const ModelParameters& p, const FitOptions& opt) {
    bat.check();
    const int np = pole_count(s);
    const int nz = zero_count(s);
    const size_t N = bat.segments.front().t.size();
    const double h = bat.dt;
    const size_t nseg = bat.segments.size();

    for (const auto& seg : bat.segments)
        if (seg.t.size() != N)
            throw ValidationError("fit: segments must share one sampling grid");

    Eigen::VectorXd ycat(static_cast<Eigen::Index>(N * nseg));
    for (size_t k = 0; k < nseg; ++k)
        for (size_t r = 0; r < N; ++r)
            ycat[static_cast<Eigen::Index>(k * N + r)] = bat.segments[k].p_t_deviation[r];

    auto evaluate = [&](const Eigen::VectorXd& th) {
        FitEval ev;
        ev.den = den_from_theta(th, np);
        Eigen::MatrixXd Phi1 = step_basis(ev.den, nz, N, h);
        if (!Phi1.allFinite()) {
            ev.finite = false;
            ev.residual = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(N * nseg),
                                                    kDivergedResidual);
            ev.c = Eigen::VectorXd::Zero(nz + 1);
            return ev;
        }
        Eigen::MatrixXd Phi(static_cast<Eigen::Index>(N * nseg), nz + 1);
        for (size_t k = 0; k < nseg; ++k)
            Phi.middleRows(static_cast<Eigen::Index>(k * N), static_cast<Eigen::Index>(N)) =
                bat.segments[k].step * Phi1;
        ev.c = Phi.colPivHouseholderQr().solve(ycat);
        ev.residual = ycat - Phi * ev.c;
        return ev;
    };

    auto cost_of = [](const Eigen::VectorXd& r) { return 0.5 * r.squaredNorm(); };

    const int dim = np; // theta dimension equals the pole count
    std::mt19937_64 rng(opt.seed);
    auto draw_start = [&](int restart) {
        Eigen::VectorXd th(dim);
        if (restart == 0) {
            if (np == 1) th << std::log(50.0);
            else if (np == 2) th << std::log(50.0), std::log(0.5);
            else th << std::log(300.0), std::log(50.0), std::log(0.5);
            return th;
        }
        auto uni = [&](double lo, double hi) {
            return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        };
        if (np == 1) th << uni(0.0, 9.0);
        else if (np == 2) th << uni(1.0, 9.0), uni(-2.5, 1.5);
        else th << uni(2.0, 10.0), uni(1.0, 9.0), uni(-2.5, 1.5);
        return th;
    };

    bool have_best = false;
    double best_cost = 0.0;
    Eigen::VectorXd best_theta;

    for (int restart = 0; restart < opt.restarts; ++restart) {
        Eigen::VectorXd x = draw_start(restart);
        FitEval ev = evaluate(x);
        double cost = cost_of(ev.residual);
        double lambda = 1e-3;
        for (int iter = 0; iter < opt.max_iterations; ++iter) {
            Eigen::MatrixXd J(ev.residual.size(), dim);
            for (int j = 0; j < dim; ++j) {
                double hj = 1e-6 * std::max(1.0, std::abs(x[j]));
                Eigen::VectorXd xj = x;
                xj[j] += hj;
                J.col(j) = (evaluate(xj).residual - ev.residual) / hj;
            }
            Eigen::VectorXd g = J.transpose() * ev.residual;
            Eigen::MatrixXd H = J.transpose() * J;
            if (g.lpNorm<Eigen::Infinity>() < 1e-12) break;
            bool accepted = false;
            Eigen::VectorXd step(dim);
            for (int trial = 0; trial < 12; ++trial) {
                Eigen::MatrixXd Hs = H;
                for (int j = 0; j < dim; ++j)
                    Hs(j, j) += lambda * std::max(H(j, j), 1e-12);
                step = Hs.ldlt().solve(-g);
                Eigen::VectorXd xn = x + step;
                FitEval en = evaluate(xn);
                double cn = cost_of(en.residual);
                if (std::isfinite(cn) && cn < cost) {
                    x = xn;
                    ev = std::move(en);
                    cost = cn;
                    lambda = std::max(lambda / 3.0, 1e-12);
                    accepted = true;
                    break;
                }
                lambda *= 10.0;
                if (lambda > 1e14) break;
            }
            if (!accepted) break;
            if (step.norm() < 1e-12 * (1.0 + x.norm())) break;
        }
        if (!have_best || cost < best_cost) {
            have_best = true;
            best_cost = cost;
            best_theta = x;
        }
    }

    double diverged_cost = 0.5 * kDivergedResidual * kDivergedResidual *
                           static_cast<double>(N * nseg) * 0.5;
    if (!have_best || best_cost > diverged_cost)
        throw ConvergenceError("fit: all restarts diverged", std::sqrt(2.0 * best_cost));

    FitEval best = evaluate(best_theta);

    // per-segment and concatenated fit scores
    Eigen::MatrixXd Phi1 = step_basis(best.den, nz, N, h);
    Eigen::VectorXd unit = Phi1 * best.c;
    std::vector<double> scores;
    double cat_num = 0.0;
    for (size_t k = 0; k < nseg; ++k) {
        Eigen::Map<const Eigen::VectorXd> yk(bat.segments[k].p_t_deviation.data(),
                                             static_cast<Eigen::Index>(N));
        Eigen::VectorXd yhat = bat.segments[k].step * unit;
        double err = (yk - yhat).norm();
        double spread = (yk.array() - yk.mean()).matrix().norm();
        scores.push_back(100.0 * (1.0 - err / spread));
        cat_num += (yk - yhat).squaredNorm();
    }
    double score;
    if (p.opts.fit_score_concatenated) {
        double spread_cat = (ycat.array() - ycat.mean()).matrix().norm();
        score = 100.0 * (1.0 - std::sqrt(cat_num) / spread_cat);
    } else {
        double sum = 0.0;
        for (double v : scores) sum += v;
        score = sum / static_cast<double>(scores.size());
    }

    TransferFunctionModel tf;
    tf.structure = s;
    tf.fit_score = score;
    // numerator ascending c -> printed layout
    tf.n0 = best.c[0];
    tf.n1 = nz >= 1 ? best.c[1] : 0.0;
    tf.n2 = nz >= 2 ? best.c[2] : 0.0;
    if (np == 3) {
        tf.d2 = best.den[1];
        tf.d1 = best.den[2];
        tf.d0 = best.den[3];
    } else if (np == 2) {
        tf.d2 = 1.0;
        tf.d1 = best.den[1];
        tf.d0 = best.den[2];
    } else {
        tf.d2 = 0.0;
        tf.d1 = 1.0;
        tf.d0 = best.den[1];
    }
    tf.check();
    return tf;
}

// ---------------- reduced closed loop ----------------

smallsignal::LinearModel reduced_closed_loop_gains(const TransferFunctionModel& tf,
                                                   const ModelParameters& p, double d_f,
                                                   double k_pp, double k_ip) {
    auto ss = minimal_realization(tf);
    const int nv = static_cast<int>(ss.A.rows());
    const int n = nv + 6;
    const int iD = nv, iV = nv + 1, iPM = nv + 2, iDW = nv + 3, iMP = nv + 4, iMT = nv + 5;
    const auto& g = p.gains;
    const double wb = p.bases.w_b;
    const double w0 = p.grid.w_0;
    const double sgn = p.opts.droop_sign == DroopSign::stabilizing ? 1.0 : -1.0;
    const double kap = p.kappa();

    // frequency-estimate and power rows as functionals on the state
    Eigen::RowVectorXd wh = Eigen::RowVectorXd::Zero(n);
    wh[iV] = g.k_ppll;
    wh[iMP] = g.k_ipll;
    Eigen::RowVectorXd pt = Eigen::RowVectorXd::Zero(n);
    pt.head(nv) = ss.C;
    Eigen::RowVectorXd win = k_pp * (sgn * d_f * wh - pt);
    win[iMT] += k_ip;

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    A.topLeftCorner(nv, nv) = ss.A;
    A.topRows(nv) += ss.B * win;
    A.row(iD) -= wb * wh;
    A(iD, iDW) += wb;
    double sg = g.k_sogi * w0 * wb / 2.0;
    A(iV, iD) += sg;
    A(iV, iV) -= sg;
    double gov = p.grid.T_z / (2.0 * p.grid.H_g * p.grid.d_p * p.grid.T_p);
    A(iPM, iPM) += -1.0 / p.grid.T_p - gov;
    A(iPM, iDW) += -1.0 / (p.grid.d_p * p.grid.T_p);
    A.row(iPM) += gov * kap * pt;
    A(iDW, iPM) += 1.0 / (2.0 * p.grid.H_g);
    A.row(iDW) -= kap * pt / (2.0 * p.grid.H_g);
    A(iMP, iV) += 1.0;
    A.row(iMT) = sgn * d_f * wh - pt;

    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n, 4); // p_l, p_t0, p_m0, w_0
    B(iPM, 0) = gov;
    B(iDW, 0) = -1.0 / (2.0 * p.grid.H_g);
    B.col(1).head(nv) = ss.B * k_pp;
    B(iMT, 1) = 1.0;
    B(iPM, 2) = 1.0 / p.grid.T_p;

    smallsignal::LinearModel lm;
    lm.A = A;
    lm.B = B;
    for (int i = 1; i <= nv; ++i) lm.state_labels.push_back("v" + std::to_string(i));
    lm.state_labels.insert(lm.state_labels.end(),
                           {"delta", "v_pll_q", "p_m", "dw_g", "mu_pll", "mu_pt"});
    lm.input_labels = {"p_l", "p_t0", "p_m0", "w_0"};
    lm.x0 = Eigen::VectorXd::Zero(n);
    lm.u0 = Eigen::VectorXd::Zero(4);
    return lm;
}

smallsignal::LinearModel reduced_closed_loop(const TransferFunctionModel& tf,
                                             const ModelParameters& p) {
    return reduced_closed_loop_gains(tf, p, p.gains.d_f, p.gains.k_pp, p.gains.k_ip);
}

ReducedTrajectory simulate_reduced(const TransferFunctionModel& tf, const ModelParameters& p,
                                   double w_base, const engine::Scenario& sc,
                                   const engine::IntegratorOptions& opt) {
    namespace ode = boost::numeric::odeint;
    sc.validate();
    auto ss = minimal_realization(tf);
    const int nv = static_cast<int>(ss.A.rows());
    const int n = nv + 6;
    const int iD = nv, iV = nv + 1, iPM = nv + 2, iDW = nv + 3, iMP = nv + 4, iMT = nv + 5;
    const double p_t_base = sc.u0[ix::p_t0];

    Vec9 u = sc.u0;
    using state_t = std::vector<double>;
    auto rhs = [&](const state_t& z, state_t& dz, double) {
        double wg = u[ix::w_0] + z[static_cast<size_t>(iDW)];
        auto pll = control::sogi_pll_step(z[static_cast<size_t>(iD)], z[static_cast<size_t>(iV)],
                                          z[static_cast<size_t>(iMP)], wg, u[ix::w_0], p.gains,
                                          p.bases.w_b);
        double p_t = p_t_base;
        for (int j = 0; j < nv; ++j) p_t += ss.C[j] * z[static_cast<size_t>(j)];
        auto pd = control::power_droop_from_power(p_t, pll.w_hat, u[ix::p_t0],
                                                  z[static_cast<size_t>(iMT)], u[ix::w_0],
                                                  p.gains, p.opts.droop_sign);
        double w_ref = control::speed_reference(w_base, pd.dw_m_ref, p.opts.speed_saturation);
        double w_in = w_ref - w_base;
        for (int i = 0; i < nv; ++i) {
            double acc = ss.B[i] * w_in;
            for (int j = 0; j < nv; ++j) acc += ss.A(i, j) * z[static_cast<size_t>(j)];
            dz[static_cast<size_t>(i)] = acc;
        }
        dz[static_cast<size_t>(iD)] = (wg - pll.w_hat) * p.bases.w_b;
        dz[static_cast<size_t>(iV)] = pll.dv_pll_q;
        dz[static_cast<size_t>(iMP)] = pll.dmu_pll;
        auto gd = grid::grid_derivatives(z[static_cast<size_t>(iPM)], z[static_cast<size_t>(iDW)],
                                        u[ix::p_l], p.kappa() * p_t, u[ix::p_m0], p.grid,
                                        p.bases.w_b);
        dz[static_cast<size_t>(iPM)] = gd.dp_m;
        dz[static_cast<size_t>(iDW)] = gd.ddw_g;
        dz[static_cast<size_t>(iMT)] = pd.dmu_pt;
    };

    state_t z(static_cast<size_t>(n), 0.0);
    z[static_cast<size_t>(iPM)] = sc.u0[ix::p_m0];

    auto stepper = ode::make_controlled<ode::runge_kutta_dopri5<state_t>>(opt.atol, opt.rtol);

    size_t nsamp = static_cast<size_t>(std::floor(sc.duration / sc.dt_out + 1e-9)) + 1;
    ReducedTrajectory traj;
    traj.t.reserve(nsamp);
    traj.states.resize(static_cast<Eigen::Index>(nsamp), n);
    traj.p_t.resize(static_cast<Eigen::Index>(nsamp));
    traj.w_m_ref.resize(static_cast<Eigen::Index>(nsamp));
    for (int i = 1; i <= nv; ++i) traj.labels.push_back("v" + std::to_string(i));
    traj.labels.insert(traj.labels.end(),
                       {"delta", "v_pll_q", "p_m", "dw_g", "mu_pll", "mu_pt"});

    size_t next_event = 0;
    auto apply_events_at = [&](double tnow) {
        while (next_event < sc.events.size() && sc.events[next_event].t <= tnow + 1e-12) {
            u[sc.events[next_event].input] = sc.events[next_event].value;
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
            auto res = stepper.try_step(rhs, z, t, dt_try);
            if (res == ode::success) {
                if (!clamped) dt_carry = dt_try;
                for (double v : z)
                    if (!std::isfinite(v))
                        throw NumericalError("simulate_reduced: non-finite state at t = " +
                                             std::to_string(t));
            } else {
                dt_carry = dt_try;
                if (dt_carry < 1e-14)
                    throw NumericalError("simulate_reduced: step size collapse at t = " +
                                         std::to_string(t));
            }
            if (++guard > 50'000'000)
                throw NumericalError("simulate_reduced: step budget exhausted at t = " +
                                     std::to_string(t));
        }
        t = target;
    };

    auto sample = [&](size_t k, double ts) {
        traj.t.push_back(ts);
        auto ri = static_cast<Eigen::Index>(k);
        for (int j = 0; j < n; ++j) traj.states(ri, j) = z[static_cast<size_t>(j)];
        double wg = u[ix::w_0] + z[static_cast<size_t>(iDW)];
        auto pll = control::sogi_pll_step(z[static_cast<size_t>(iD)], z[static_cast<size_t>(iV)],
                                          z[static_cast<size_t>(iMP)], wg, u[ix::w_0], p.gains,
                                          p.bases.w_b);
        double p_t = p_t_base;
        for (int j = 0; j < nv; ++j) p_t += ss.C[j] * z[static_cast<size_t>(j)];
        auto pd = control::power_droop_from_power(p_t, pll.w_hat, u[ix::p_t0],
                                                  z[static_cast<size_t>(iMT)], u[ix::w_0],
                                                  p.gains, p.opts.droop_sign);
        traj.p_t[ri] = p_t;
        traj.w_m_ref[ri] = control::speed_reference(w_base, pd.dw_m_ref, p.opts.speed_saturation);
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

// ---------------- accuracy metrics ----------------

RmseMetrics rmse_metrics(const std::vector<double>& t_full, const Eigen::VectorXd& y_full,
                         const std::vector<double>& t_red, const Eigen::VectorXd& y_red,
                         bool conventional) {
    if (t_full.size() != t_red.size() ||
        t_full.size() != static_cast<size_t>(y_full.size()) ||
        t_red.size() != static_cast<size_t>(y_red.size()))
        throw ValidationError("rmse_metrics: sampling grids differ in length");
    size_t N = t_full.size();
    if (N < 2) throw ValidationError("rmse_metrics: need at least two samples");
    for (size_t k = 0; k < N; ++k)
        if (std::abs(t_full[k] - t_red[k]) > 1e-9)
            throw ValidationError("rmse_metrics: sampling grids differ");
    for (size_t k = 1; k < N; ++k)
        if (std::abs(t_full[k] - t_full[k - 1] - 1e-3) > 1e-9)
            throw ValidationError("rmse_metrics: expected a 1 ms grid");
    if (t_full.back() - t_full.front() < 1.0 - 1e-9)
        throw ValidationError("rmse_metrics: window must span at least 1 s");

    RmseMetrics m;
    m.rmse_x0 = std::abs(y_full[0] - y_red[0]);
    if (conventional) {
        m.rmse_xt = std::sqrt((y_full - y_red).squaredNorm() / static_cast<double>(N));
    } else {
        m.rmse_xt = (y_full - y_red).cwiseAbs().mean();
    }
    return m;
}

} // namespace vsdr::reduction
