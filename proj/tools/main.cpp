// Command-line surface for the refrigeration fleet frequency-response toolkit:
// scenario simulation, equilibria, linearization, eigen reports, transfer
// function fitting, parameter sweeps, and stability maps. Every command that
// produces an output set writes CSV files plus a manifest.json describing the
// run; reruns with identical settings are bit-identical except the manifest
// timestamp.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vsdr/csvio.hpp"
#include "vsdr/engine.hpp"
#include "vsdr/errors.hpp"
#include "vsdr/manifest.hpp"
#include "vsdr/params.hpp"
#include "vsdr/reduction.hpp"
#include "vsdr/smallsignal.hpp"

namespace fs = std::filesystem;
using namespace vsdr;
namespace rd = vsdr::reduction;
namespace ss = vsdr::smallsignal;

namespace {

// A reduced run is flagged unstable when it leaves the model's validity region:
// terminal power beyond this deviation from its start (legitimate responses stay
// an order of magnitude below), or any state past the overflow guard.
constexpr double kPowerDeviationBound = 0.5;
constexpr double kDivergenceNorm = 1e6;

struct CommonOpts {
    std::string config;
    std::string out;
};

ModelParameters load_params(const CommonOpts& c) {
    if (c.config.empty()) {
        ModelParameters p;
        p.validate();
        return p;
    }
    return load_parameters_file(c.config);
}

// --out beats the environment override; both beat the working directory
fs::path resolve_out(const CommonOpts& c) {
    std::string dir = c.out;
    if (dir.empty()) {
        if (const char* env = std::getenv("VSDR_OUT_DIR")) dir = env;
        if (dir.empty()) dir = ".";
    }
    fs::path path(dir);
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw ValidationError("cannot create output directory " + path.string());
    return path;
}

RunManifest base_manifest(const std::string& command, const CommonOpts& c,
                          const fs::path& out) {
    RunManifest m;
    m.command = command;
    m.config_path = c.config;
    m.output_dir = out.string();
    return m;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<double> linspace(double lo, double hi, int n) {
    if (n < 1) throw ValidationError("grid must have at least one point");
    std::vector<double> v;
    if (n == 1) {
        v.push_back(lo);
        return v;
    }
    for (int k = 0; k < n; ++k)
        v.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1));
    return v;
}

struct GridSpec {
    std::string name;
    double lo = 0, hi = 0;
    int n = 0;
};

// "name:lo:hi:n" -> inclusive linear grid description
GridSpec parse_grid_spec(const std::string& text) {
    GridSpec g;
    std::istringstream in(text);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(in, cell, ':')) cells.push_back(cell);
    if (cells.size() != 4) throw ValidationError("bad grid spec '" + text +
                                                 "': expected name:lo:hi:n");
    g.name = cells[0];
    try {
        g.lo = std::stod(cells[1]);
        g.hi = std::stod(cells[2]);
        g.n = std::stoi(cells[3]);
    } catch (const std::exception&) {
        throw ValidationError("bad grid spec '" + text + "': non-numeric bounds");
    }
    if (g.name.empty() || g.n < 1)
        throw ValidationError("bad grid spec '" + text + "'");
    return g;
}

// model selector: the full plant or one of the reduced structures
bool is_full_model(const std::string& model) { return model == "full"; }

rd::TransferFunctionModel resolve_reduced(const std::string& model,
                                          const std::string& tf_file) {
    auto s = rd::structure_from_name(model);
    if (tf_file.empty()) return rd::table2(s);
    auto tf = rd::load_tf_file(tf_file);
    if (tf.structure != s)
        throw ValidationError("coefficient file " + tf_file + " holds " +
                              rd::structure_name(tf.structure) + ", not " + model);
    return tf;
}

// indices of inputs a scenario file sets explicitly via "input NAME = value"
std::vector<int> scenario_explicit_inputs(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open scenario file: " + path);
    std::vector<int> out;
    std::string line;
    auto strip = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return std::string();
        size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    };
    while (std::getline(f, line)) {
        std::string s = strip(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos || s.find(',') != std::string::npos) continue;
        std::string key = strip(s.substr(0, eq));
        if (key.rfind("input ", 0) != 0) continue;
        int idx = input_index(strip(key.substr(6)));
        if (idx >= 0) out.push_back(idx);
    }
    return out;
}

// Loads the scenario and fills every input the file does not set from the
// configured equilibrium, so scenarios only need to name what they change.
engine::Scenario prepare_scenario(const std::string& path, const engine::OperatingPoint& op) {
    engine::Scenario sc = engine::load_scenario_file(path);
    Vec9 u = op.u;
    for (int idx : scenario_explicit_inputs(path)) u[idx] = sc.u0[idx];
    sc.u0 = u;
    return sc;
}

// ---------------- simulate ----------------

struct SimulateOpts {
    CommonOpts common;
    std::string scenario;
    std::string model = "full";
    std::string tf_file;
};

void cmd_simulate(const SimulateOpts& o) {
    auto p = load_params(o.common);
    auto out = resolve_out(o.common);
    auto op = engine::solve_operating_point(p);
    auto sc = prepare_scenario(o.scenario, op);

    RunManifest man = base_manifest("simulate", o.common, out);
    man.scenario_path = o.scenario;
    man.set("model", o.model);
    fs::path csv_path = out / "trajectory.csv";

    if (is_full_model(o.model)) {
        auto traj = engine::integrate(op.x, sc, p);
        csv::write_file(csv_path.string(), traj.csv_header(), traj.csv_matrix());
        man.set("csv_schema", "trajectory-full/1");
        man.set("rows", traj.t.size());
        man.set("unstable", false);
    } else {
        auto tf = resolve_reduced(o.model, o.tf_file);
        if (!o.tf_file.empty()) man.set("coefficients", o.tf_file);
        double w_base = op.x[ix::w_m];

        // An unstable loop can overflow before the scheduled end; shorten the
        // window until integration survives, then report the divergence.
        engine::Scenario run = sc;
        rd::ReducedTrajectory tr;
        for (;;) {
            try {
                tr = rd::simulate_reduced(tf, p, w_base, run);
                break;
            } catch (const NumericalError&) {
                if (run.duration <= 8.0 * run.dt_out) throw;
                run.duration /= 2.0;
                std::erase_if(run.events,
                              [&](const engine::Event& e) { return e.t >= run.duration; });
            }
        }

        // overflowing states truncate the output; a power excursion past the
        // validity bound keeps the full (finite) trajectory but flags the run
        Eigen::Index keep = tr.states.rows();
        std::string divergence = "none";
        for (Eigen::Index r = 0; r < tr.states.rows(); ++r) {
            if (tr.states.row(r).cwiseAbs().maxCoeff() > kDivergenceNorm) {
                keep = r + 1;
                divergence = "state-overflow";
                break;
            }
        }
        if (divergence == "none") {
            for (Eigen::Index r = 0; r < keep; ++r) {
                if (std::abs(tr.p_t[r] - tr.p_t[0]) > kPowerDeviationBound) {
                    divergence = "power-deviation";
                    break;
                }
            }
        }
        if (run.duration < sc.duration && divergence == "none") divergence = "early-overflow";
        bool unstable = divergence != "none";

        std::vector<std::string> header;
        header.push_back("t");
        for (const auto& l : tr.labels) header.push_back(l);
        header.push_back("p_t");
        header.push_back("w_m_ref");
        Eigen::MatrixXd m(keep, static_cast<Eigen::Index>(header.size()));
        for (Eigen::Index r = 0; r < keep; ++r) {
            m(r, 0) = tr.t[static_cast<size_t>(r)];
            m.block(r, 1, 1, tr.states.cols()) = tr.states.row(r);
            m(r, tr.states.cols() + 1) = tr.p_t[r];
            m(r, tr.states.cols() + 2) = tr.w_m_ref[r];
        }
        csv::write_file(csv_path.string(), header, m);
        man.set("csv_schema", "trajectory-reduced/1");
        man.set("rows", static_cast<std::uint64_t>(keep));
        man.set("states", tr.labels.size());
        man.set("unstable", unstable);
        man.set("divergence", divergence);
        man.set("power_deviation_bound", kPowerDeviationBound);
        man.set("state_overflow_bound", kDivergenceNorm);
    }
    man.write((out / "manifest.json").string());
    std::cout << "wrote " << csv_path.string() << "\n";
}

// ---------------- equilibrium ----------------

struct EquilibriumOpts {
    CommonOpts common;
    double w_m0 = std::numeric_limits<double>::quiet_NaN(); // NaN: nominal point
};

void cmd_equilibrium(const EquilibriumOpts& o) {
    auto p = load_params(o.common);
    auto out = resolve_out(o.common);
    std::optional<double> pin;
    if (!std::isnan(o.w_m0)) pin = o.w_m0;
    auto op = engine::solve_operating_point(p, pin);

    std::vector<std::string> header;
    Eigen::MatrixXd m(1, static_cast<int>(ix::N_STATES) + static_cast<int>(ix::N_INPUTS));
    for (int i = 0; i < ix::N_STATES; ++i) {
        header.push_back(state_names()[static_cast<size_t>(i)]);
        m(0, i) = op.x[i];
    }
    for (int i = 0; i < ix::N_INPUTS; ++i) {
        header.push_back("input " + input_names()[static_cast<size_t>(i)]);
        m(0, ix::N_STATES + i) = op.u[i];
    }
    fs::path csv_path = out / "equilibrium.csv";
    csv::write_file(csv_path.string(), header, m);

    RunManifest man = base_manifest("equilibrium", o.common, out);
    man.set("csv_schema", "equilibrium/1");
    if (pin) man.set("w_m0", *pin);
    man.set("w_m", op.x[ix::w_m]);
    man.set("residual", engine::equilibrium_residual(op.x, op.u, p));
    man.write((out / "manifest.json").string());
    std::cout << "w_m = " << fmt17(op.x[ix::w_m]) << "\nwrote " << csv_path.string() << "\n";
}

// ---------------- linearize ----------------

void cmd_linearize(const EquilibriumOpts& o) {
    auto p = load_params(o.common);
    auto out = resolve_out(o.common);
    std::optional<double> pin;
    if (!std::isnan(o.w_m0)) pin = o.w_m0;
    auto op = engine::solve_operating_point(p, pin);
    auto lm = ss::linearize(op, p);

    csv::write_file((out / "A.csv").string(), lm.state_labels, lm.A);
    csv::write_file((out / "B.csv").string(), lm.input_labels, lm.B);

    RunManifest man = base_manifest("linearize", o.common, out);
    man.set("csv_schema", "linear-model/1");
    if (pin) man.set("w_m0", *pin);
    man.set("states", lm.state_labels.size());
    man.set("inputs", lm.input_labels.size());
    man.set("note", "rows of A.csv and B.csv follow the state order in the headers of A.csv");
    man.write((out / "manifest.json").string());
    std::cout << "wrote " << (out / "A.csv").string() << " and " << (out / "B.csv").string()
              << "\n";
}

// ---------------- eigs ----------------

struct EigsOpts {
    CommonOpts common;
    std::string model = "full";
    std::string tf_file;
};

void cmd_eigs(const EigsOpts& o) {
    auto p = load_params(o.common);
    auto out = resolve_out(o.common);

    Eigen::MatrixXd A;
    std::vector<std::string> labels;
    RunManifest man = base_manifest("eigs", o.common, out);
    man.set("model", o.model);
    if (is_full_model(o.model)) {
        auto op = engine::solve_operating_point(p);
        auto lm = ss::linearize(op, p);
        A = lm.A;
        labels = lm.state_labels;
        man.set("max_re_deflated", ss::eigenanalysis(ss::deflate(lm.A, p)).max_real());
    } else {
        auto tf = resolve_reduced(o.model, o.tf_file);
        auto lm = rd::reduced_closed_loop(tf, p);
        A = lm.A;
        labels = lm.state_labels;
    }
    auto modal = ss::eigenanalysis(A);

    fs::path csv_path = out / "eigs.csv";
    std::ofstream f(csv_path);
    if (!f) throw ValidationError("cannot open " + csv_path.string());
    f << "mode,re,im,damping_ratio,freq_hz,top_states\n";
    const Eigen::Index n = modal.eigenvalues.size();
    for (Eigen::Index k = 0; k < n; ++k) {
        std::vector<Eigen::Index> order(static_cast<size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
            return modal.participation(a, k) > modal.participation(b, k);
        });
        std::string top;
        for (Eigen::Index j = 0; j < std::min<Eigen::Index>(3, n); ++j) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%s:%.4f",
                          labels[static_cast<size_t>(order[static_cast<size_t>(j)])].c_str(),
                          modal.participation(order[static_cast<size_t>(j)], k));
            if (j) top += ';';
            top += buf;
        }
        f << k << ',' << fmt17(modal.eigenvalues[k].real()) << ','
          << fmt17(modal.eigenvalues[k].imag()) << ',' << fmt17(modal.damping[k]) << ','
          << fmt17(modal.frequency_hz[k]) << ',' << top << "\n";
    }
    f.close();

    man.set("csv_schema", "eigs/1");
    man.set("modes", static_cast<std::uint64_t>(n));
    man.set("max_re", modal.max_real());
    man.set("stable", modal.stable());
    man.write((out / "manifest.json").string());
    std::cout << "wrote " << csv_path.string() << " (" << n << " modes)\n";
}

// ---------------- fit ----------------

struct FitOptsCli {
    CommonOpts common;
    std::string structure;
    std::string battery;
    int restarts = 40;
    std::uint64_t seed = 0;
};

void cmd_fit(const FitOptsCli& o) {
    auto p = load_params(o.common);
    auto out = resolve_out(o.common);
    auto s = rd::structure_from_name(o.structure);

    rd::StepBattery bat;
    if (o.battery.empty()) {
        bat = rd::generate_step_battery(p);
        rd::write_battery_csv(bat, (out / "battery.csv").string());
    } else {
        bat = rd::read_battery_csv(o.battery);
    }

    rd::FitOptions fo;
    fo.restarts = o.restarts;
    fo.seed = o.seed;
    auto tf = rd::fit_transfer_function(bat, s, p, fo);

    fs::path tf_path = out / ("model_" + o.structure + ".tf");
    {
        std::ofstream f(tf_path);
        if (!f) throw ValidationError("cannot open " + tf_path.string());
        f << rd::serialize_tf(tf);
    }

    RunManifest man = base_manifest("fit", o.common, out);
    man.seed = o.seed;
    man.set("structure", o.structure);
    man.set("restarts", o.restarts);
    man.set("battery", o.battery.empty() ? (out / "battery.csv").string() : o.battery);
    man.set("battery_generated", o.battery.empty());
    man.set("fit_score", tf.fit_score);
    man.write((out / "manifest.json").string());

    std::cout << rd::serialize_tf(tf) << "wrote " << tf_path.string() << "\n";
}

// ---------------- sweep ----------------

struct SweepOpts {
    CommonOpts common;
    std::string param;
    double from = 0, to = 0;
    int points = 21;
    int jobs = 1;
};

void cmd_sweep(const SweepOpts& o) {
    auto p = load_params(o.common);
    auto out = resolve_out(o.common);
    auto values = linspace(o.from, o.to, o.points);

    ss::ModelFactory1 factory;
    if (o.param == "w_m0") {
        // operating-speed sweep: pin the speed and let the temperature float
        factory = [p](double v) -> std::optional<Eigen::MatrixXd> {
            try {
                auto op = engine::solve_operating_point(p, v);
                auto lm = ss::linearize(op, p);
                return ss::deflate(lm.A, p);
            } catch (const std::exception&) {
                return std::nullopt;
            }
        };
    } else {
        factory = ss::full_model_factory(p, o.param);
    }
    auto res = ss::parameter_sensitivity(factory, values, o.jobs);

    const Eigen::Index nm = res.loci.rows();
    std::vector<std::string> header{o.param, "ok", "max_re"};
    for (Eigen::Index k = 0; k < nm; ++k) {
        char buf[24];
        std::snprintf(buf, sizeof buf, "m%02d", static_cast<int>(k) + 1);
        header.push_back(std::string(buf) + "_re");
        header.push_back(std::string(buf) + "_im");
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(values.size()),
                      static_cast<Eigen::Index>(header.size()));
    for (size_t i = 0; i < values.size(); ++i) {
        auto r = static_cast<Eigen::Index>(i);
        m(r, 0) = values[i];
        m(r, 1) = res.ok[i] ? 1.0 : 0.0;
        m(r, 2) = res.ok[i] ? res.analyses[i].max_real()
                            : std::numeric_limits<double>::quiet_NaN();
        for (Eigen::Index k = 0; k < nm; ++k) {
            m(r, 3 + 2 * k) = res.loci(k, r).real();
            m(r, 4 + 2 * k) = res.loci(k, r).imag();
        }
    }
    fs::path csv_path = out / "sweep.csv";
    csv::write_file(csv_path.string(), header, m);

    RunManifest man = base_manifest("sweep", o.common, out);
    man.set("csv_schema", "sweep/1");
    man.set("param", o.param);
    man.set("from", o.from);
    man.set("to", o.to);
    man.set("points", o.points);
    man.set("jobs", o.jobs);
    man.set("gap_count", res.gap_count);
    man.write((out / "manifest.json").string());
    std::cout << "wrote " << csv_path.string() << " (" << values.size() << " points, "
              << res.gap_count << " gaps)\n";
}

// ---------------- stabmap ----------------

struct StabmapOpts {
    CommonOpts common;
    std::string p1, p2;
    std::string model = "full";
    std::string tf_file;
    int jobs = 1;
};

void cmd_stabmap(const StabmapOpts& o) {
    auto p = load_params(o.common);
    auto out = resolve_out(o.common);
    GridSpec g1 = parse_grid_spec(o.p1);
    GridSpec g2 = parse_grid_spec(o.p2);
    auto v1 = linspace(g1.lo, g1.hi, g1.n);
    auto v2 = linspace(g2.lo, g2.hi, g2.n);

    ss::ModelFactory2 factory;
    if (is_full_model(o.model)) {
        factory = ss::full_model_factory(p, g1.name, g2.name);
    } else {
        auto tf = resolve_reduced(o.model, o.tf_file);
        std::string n1 = g1.name, n2 = g2.name;
        factory = [p, tf, n1, n2](double a, double b) -> std::optional<Eigen::MatrixXd> {
            ModelParameters q = p;
            try {
                // apply T_ip after the other assignment so it sees the final k_pp
                if (n1 != "T_ip") set_parameter(q, n1, a);
                if (n2 != "T_ip") set_parameter(q, n2, b);
                if (n1 == "T_ip") set_parameter(q, n1, a);
                if (n2 == "T_ip") set_parameter(q, n2, b);
                q.validate();
                return rd::reduced_closed_loop(tf, q).A;
            } catch (const std::exception&) {
                return std::nullopt;
            }
        };
    }
    auto map = ss::stability_map(factory, v1, v2, o.jobs);

    std::vector<std::string> header{g1.name, g2.name, "max_re", "verdict"};
    Eigen::MatrixXd m(static_cast<Eigen::Index>(v1.size() * v2.size()), 4);
    size_t counts[3] = {0, 0, 0};
    for (size_t i1 = 0; i1 < v1.size(); ++i1) {
        for (size_t i2 = 0; i2 < v2.size(); ++i2) {
            auto r = static_cast<Eigen::Index>(i1 * v2.size() + i2);
            auto verdict = map.at(i1, i2);
            m(r, 0) = v1[i1];
            m(r, 1) = v2[i2];
            m(r, 2) = map.max_re[static_cast<size_t>(r)];
            m(r, 3) = static_cast<double>(verdict);
            ++counts[static_cast<size_t>(verdict)];
        }
    }
    fs::path csv_path = out / "stabmap.csv";
    csv::write_file(csv_path.string(), header, m);

    RunManifest man = base_manifest("stabmap", o.common, out);
    man.set("csv_schema", "stabmap/1");
    man.set("model", o.model);
    man.set("p1", o.p1);
    man.set("p2", o.p2);
    man.set("jobs", o.jobs);
    man.set("verdict_legend", "0=stable, 1=unstable, 2=no-equilibrium");
    man.set("stable_cells", counts[0]);
    man.set("unstable_cells", counts[1]);
    man.set("no_equilibrium_cells", counts[2]);
    man.write((out / "manifest.json").string());
    std::cout << "wrote " << csv_path.string() << " (" << counts[0] << " stable, " << counts[1]
              << " unstable, " << counts[2] << " without equilibrium)\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simulation and analysis toolkit for droop-controlled refrigeration fleets "
                 "providing fast frequency response"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolkitVersion);

    auto add_common = [](CLI::App* cmd, CommonOpts& c) {
        cmd->add_option("--config", c.config, "parameter file (built-in defaults if omitted)");
        cmd->add_option("--out", c.out,
                        "output directory (default: $VSDR_OUT_DIR, then the working directory)");
    };

    SimulateOpts sim;
    auto* c_sim = app.add_subcommand("simulate", "integrate a scenario and write the trajectory");
    add_common(c_sim, sim.common);
    c_sim->add_option("--scenario", sim.scenario, "scenario file")->required();
    c_sim->add_option("--model", sim.model, "full, P1Z0, P2Z0, P2Z1, P3Z0, P3Z1 or P3Z2");
    c_sim->add_option("--tf", sim.tf_file, "fitted coefficient file for a reduced model");

    EquilibriumOpts eq;
    auto* c_eq = app.add_subcommand("equilibrium", "solve and write an operating point");
    add_common(c_eq, eq.common);
    c_eq->add_option("--w-m0", eq.w_m0, "pin the compressor speed instead of the nominal point");

    EquilibriumOpts lin;
    auto* c_lin = app.add_subcommand("linearize", "write the A and B matrices about a point");
    add_common(c_lin, lin.common);
    c_lin->add_option("--w-m0", lin.w_m0, "pin the compressor speed instead of the nominal point");

    EigsOpts eig;
    auto* c_eig = app.add_subcommand("eigs", "eigenvalue table with damping and participation");
    add_common(c_eig, eig.common);
    c_eig->add_option("--model", eig.model, "full or a reduced structure");
    c_eig->add_option("--tf", eig.tf_file, "fitted coefficient file for a reduced model");

    FitOptsCli fit;
    auto* c_fit = app.add_subcommand("fit", "fit a reduced transfer function to step responses");
    add_common(c_fit, fit.common);
    c_fit->add_option("--structure", fit.structure, "P1Z0, P2Z0, P2Z1, P3Z0, P3Z1 or P3Z2")
        ->required();
    c_fit->add_option("--battery", fit.battery,
                      "existing step-battery CSV (generated and saved if omitted)");
    c_fit->add_option("--restarts", fit.restarts, "search restarts");
    c_fit->add_option("--seed", fit.seed, "restart seed");

    SweepOpts swp;
    auto* c_swp = app.add_subcommand("sweep", "eigenvalue loci along one parameter");
    add_common(c_swp, swp.common);
    c_swp->add_option("--param", swp.param, "parameter name, or w_m0 for the operating speed")
        ->required();
    c_swp->add_option("--from", swp.from, "first value")->required();
    c_swp->add_option("--to", swp.to, "last value")->required();
    c_swp->add_option("--points", swp.points, "grid size");
    c_swp->add_option("--jobs", swp.jobs, "worker threads");

    StabmapOpts smap;
    auto* c_map = app.add_subcommand("stabmap", "stability verdicts over a parameter grid");
    add_common(c_map, smap.common);
    c_map->add_option("--p1", smap.p1, "first axis as name:lo:hi:n")->required();
    c_map->add_option("--p2", smap.p2, "second axis as name:lo:hi:n")->required();
    c_map->add_option("--model", smap.model, "full or a reduced structure");
    c_map->add_option("--tf", smap.tf_file, "fitted coefficient file for a reduced model");
    c_map->add_option("--jobs", smap.jobs, "worker threads");

    auto* c_def = app.add_subcommand("print-defaults", "write the built-in parameter set");

    c_sim->callback([&] { cmd_simulate(sim); });
    c_eq->callback([&] { cmd_equilibrium(eq); });
    c_lin->callback([&] { cmd_linearize(lin); });
    c_eig->callback([&] { cmd_eigs(eig); });
    c_fit->callback([&] { cmd_fit(fit); });
    c_swp->callback([&] { cmd_sweep(swp); });
    c_map->callback([&] { cmd_stabmap(smap); });
    c_def->callback([] {
        ModelParameters p;
        std::cout << serialize_parameters(p);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
