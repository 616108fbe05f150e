#include "vsdr/params.hpp"
#include "vsdr/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace vsdr {

const std::array<std::string, ix::N_STATES>& state_names() {
    static const std::array<std::string, ix::N_STATES> names = {
        "T_f", "w_m", "i_m", "t_c", "q_th", "i_d", "i_q", "v_dc", "th_hat", "th_g",
        "v_pll_q", "p_m", "dw_g", "mu_cd", "mu_cq", "mu_T", "mu_v", "mu_wm", "mu_im",
        "mu_pll", "mu_pt"};
    return names;
}

const std::array<std::string, ix::N_INPUTS>& input_names() {
    static const std::array<std::string, ix::N_INPUTS> names = {
        "p_l", "T_f_ref", "v_dc_ref", "i_q_ref", "T_a", "p_t0", "p_m0", "w_0", "v_g"};
    return names;
}

int state_index(const std::string& name) {
    const auto& n = state_names();
    for (int i = 0; i < ix::N_STATES; ++i)
        if (n[i] == name) return i;
    return -1;
}

int input_index(const std::string& name) {
    const auto& n = input_names();
    for (int i = 0; i < ix::N_INPUTS; ++i)
        if (n[i] == name) return i;
    return -1;
}

double aggregation_scale(double n_units, const PerUnitBases& bases) {
    if (n_units < 1.0) throw ValidationError("aggregation_scale: n_units must be >= 1");
    return n_units * bases.P_b / bases.P_g;
}

namespace {

struct FieldRef {
    const char* section;
    const char* key;
    double* val;
};

// Registry mapping "section.key" to the numeric fields of a parameter set.
std::vector<FieldRef> numeric_fields(ModelParameters& p) {
    return {
        {"bases", "P_b", &p.bases.P_b},
        {"bases", "P_g", &p.bases.P_g},
        {"bases", "w_b", &p.bases.w_b},
        {"bases", "rated_rpm", &p.bases.rated_rpm},
        {"thermal", "a2", &p.thermal.a2},
        {"thermal", "a1", &p.thermal.a1},
        {"thermal", "a0", &p.thermal.a0},
        {"thermal", "b1", &p.thermal.b1},
        {"thermal", "b2", &p.thermal.b2},
        {"thermal", "b3", &p.thermal.b3},
        {"thermal", "b4", &p.thermal.b4},
        {"thermal", "tau_q", &p.thermal.tau_q},
        {"thermal", "tau_c", &p.thermal.tau_c},
        {"thermal", "r_th", &p.thermal.r_th},
        {"thermal", "c_th", &p.thermal.c_th},
        {"thermal", "T_a", &p.thermal.T_a},
        {"thermal", "T_f_ref", &p.thermal.T_f_ref},
        {"bldc", "r_a", &p.bldc.r_a},
        {"bldc", "l_a", &p.bldc.l_a},
        {"bldc", "H_m", &p.bldc.H_m},
        {"bldc", "b", &p.bldc.b},
        {"bldc", "k_t", &p.bldc.k_t},
        {"bldc", "k_e", &p.bldc.k_e},
        {"electrical", "c_dc", &p.elec.c_dc},
        {"electrical", "r_s", &p.elec.r_s},
        {"electrical", "l_s", &p.elec.l_s},
        {"electrical", "x_g", &p.elec.x_g},
        {"electrical", "v_g", &p.elec.v_g},
        {"control", "k_ps", &p.gains.k_ps},
        {"control", "k_is", &p.gains.k_is},
        {"control", "k_pc2", &p.gains.k_pc2},
        {"control", "k_ic2", &p.gains.k_ic2},
        {"control", "k_pv", &p.gains.k_pv},
        {"control", "k_iv", &p.gains.k_iv},
        {"control", "k_pc1", &p.gains.k_pc1},
        {"control", "k_ic1", &p.gains.k_ic1},
        {"control", "k_pT", &p.gains.k_pT},
        {"control", "k_iT", &p.gains.k_iT},
        {"control", "k_pp", &p.gains.k_pp},
        {"control", "k_ip", &p.gains.k_ip},
        {"control", "d_f", &p.gains.d_f},
        {"control", "k_ppll", &p.gains.k_ppll},
        {"control", "k_ipll", &p.gains.k_ipll},
        {"control", "k_sogi", &p.gains.k_sogi},
        {"grid", "H_g", &p.grid.H_g},
        {"grid", "T_p", &p.grid.T_p},
        {"grid", "T_z", &p.grid.T_z},
        {"grid", "d_p", &p.grid.d_p},
        {"grid", "p_l0", &p.grid.p_l0},
        {"grid", "p_m0", &p.grid.p_m0},
        {"grid", "n_units", &p.grid.n_units},
        {"grid", "w_0", &p.grid.w_0},
    };
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ValidationError("config: bad boolean for " + key + ": " + v);
}

CascadeForm parse_cascade(const std::string& v, const std::string& key) {
    if (v == "literal") return CascadeForm::literal;
    if (v == "conventional") return CascadeForm::conventional;
    throw ValidationError("config: bad cascade form for " + key + ": " + v);
}

const char* cascade_str(CascadeForm c) {
    return c == CascadeForm::literal ? "literal" : "conventional";
}

void require_positive(double v, const char* field) {
    if (!(v > 0.0)) throw ValidationError(std::string("parameter invariant violated: ") + field + " must be > 0");
}

} // namespace

void ModelParameters::validate() const {
    require_positive(bases.P_b, "bases.P_b");
    require_positive(bases.P_g, "bases.P_g");
    require_positive(bases.w_b, "bases.w_b");
    require_positive(bases.rated_rpm, "bases.rated_rpm");
    double k = kappa();
    if (!(k > 0.0 && k <= 1.0))
        throw ValidationError("parameter invariant violated: aggregation scale kappa must lie in (0, 1]");

    require_positive(thermal.tau_q, "thermal.tau_q");
    require_positive(thermal.tau_c, "thermal.tau_c");
    require_positive(thermal.r_th, "thermal.r_th");
    require_positive(thermal.c_th, "thermal.c_th");
    // heat map must stay positive on the operating range; a2 < 0 makes it concave,
    // so the endpoints are the minima
    for (double w : {0.3, 1.35}) {
        double q = thermal.a2 * w * w + thermal.a1 * w + thermal.a0;
        if (!(q > 0.0))
            throw ValidationError("parameter invariant violated: thermal heat map non-positive at w = " + fmt_double(w));
    }

    require_positive(bldc.r_a, "bldc.r_a");
    require_positive(bldc.l_a, "bldc.l_a");
    require_positive(bldc.H_m, "bldc.H_m");
    require_positive(bldc.b, "bldc.b");
    require_positive(bldc.k_t, "bldc.k_t");
    require_positive(bldc.k_e, "bldc.k_e");
    if (bldc.k_t != bldc.k_e)
        throw ValidationError("parameter invariant violated: bldc.k_t must equal bldc.k_e");

    require_positive(elec.c_dc, "electrical.c_dc");
    require_positive(elec.r_s, "electrical.r_s");
    require_positive(elec.l_s, "electrical.l_s");
    require_positive(elec.x_g, "electrical.x_g");
    require_positive(elec.v_g, "electrical.v_g");

    if (!(gains.k_pT < 0.0)) throw ValidationError("parameter invariant violated: control.k_pT must be < 0");
    if (!(gains.k_iT < 0.0)) throw ValidationError("parameter invariant violated: control.k_iT must be < 0");
    require_positive(gains.k_ps, "control.k_ps");
    require_positive(gains.k_is, "control.k_is");
    require_positive(gains.k_pc2, "control.k_pc2");
    require_positive(gains.k_ic2, "control.k_ic2");
    require_positive(gains.k_pv, "control.k_pv");
    require_positive(gains.k_iv, "control.k_iv");
    require_positive(gains.k_pc1, "control.k_pc1");
    require_positive(gains.k_ic1, "control.k_ic1");
    require_positive(gains.k_pp, "control.k_pp");
    require_positive(gains.k_ip, "control.k_ip");
    require_positive(gains.d_f, "control.d_f");
    require_positive(gains.k_ppll, "control.k_ppll");
    require_positive(gains.k_ipll, "control.k_ipll");
    require_positive(gains.k_sogi, "control.k_sogi");
    require_positive(gains.T_ip(), "control.T_ip");

    require_positive(grid.H_g, "grid.H_g");
    if (!(grid.T_p > grid.T_z && grid.T_z > 0.0))
        throw ValidationError("parameter invariant violated: grid requires T_p > T_z > 0");
    require_positive(grid.d_p, "grid.d_p");
    if (!(grid.n_units >= 1.0))
        throw ValidationError("parameter invariant violated: grid.n_units must be >= 1");
    require_positive(grid.w_0, "grid.w_0");

    require_positive(opts.dc_link_factor, "options.dc_link_factor");
    require_positive(opts.v_dc_min, "options.v_dc_min");
}

ModelParameters load_parameters(std::istream& doc, bool use_defaults) {
    ModelParameters p; // defaults
    auto fields = numeric_fields(p);
    std::map<std::string, bool> seen;
    for (auto& f : fields) seen[std::string(f.section) + "." + f.key] = false;
    for (const char* k : {"options.droop_sign", "options.speed_saturation", "options.cascade",
                          "options.battery_cascade", "options.rmse_conventional",
                          "options.fit_score_concatenated", "options.dc_link_factor",
                          "options.v_dc_min"})
        seen[k] = false;

    std::string line, section;
    int lineno = 0;
    while (std::getline(doc, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ValidationError("config line " + std::to_string(lineno) + ": malformed section header");
            section = trim(s.substr(1, s.size() - 2));
            continue;
        }
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        std::string full = section + "." + key;

        if (full == "options.droop_sign") {
            if (val == "stabilizing") p.opts.droop_sign = DroopSign::stabilizing;
            else if (val == "paper") p.opts.droop_sign = DroopSign::paper;
            else throw ValidationError("config: droop_sign must be 'stabilizing' or 'paper'");
            seen[full] = true;
            continue;
        }
        if (full == "options.speed_saturation") { p.opts.speed_saturation = parse_bool(val, full); seen[full] = true; continue; }
        if (full == "options.cascade") { p.opts.cascade = parse_cascade(val, full); seen[full] = true; continue; }
        if (full == "options.battery_cascade") { p.opts.battery_cascade = parse_cascade(val, full); seen[full] = true; continue; }
        if (full == "options.rmse_conventional") { p.opts.rmse_conventional = parse_bool(val, full); seen[full] = true; continue; }
        if (full == "options.dc_link_factor" || full == "options.v_dc_min") {
            try {
                size_t pos = 0;
                double v = std::stod(val, &pos);
                if (pos != val.size()) throw std::invalid_argument(val);
                (full == "options.dc_link_factor" ? p.opts.dc_link_factor : p.opts.v_dc_min) = v;
            } catch (const std::exception&) {
                throw ValidationError("config: bad numeric value for " + full + ": " + val);
            }
            seen[full] = true;
            continue;
        }
        if (full == "options.fit_score_concatenated") { p.opts.fit_score_concatenated = parse_bool(val, full); seen[full] = true; continue; }

        bool matched = false;
        for (auto& f : fields) {
            if (full == std::string(f.section) + "." + f.key) {
                try {
                    size_t pos = 0;
                    *f.val = std::stod(val, &pos);
                    if (pos != val.size()) throw std::invalid_argument(val);
                } catch (const std::exception&) {
                    throw ValidationError("config: bad numeric value for " + full + ": " + val);
                }
                seen[full] = true;
                matched = true;
                break;
            }
        }
        if (!matched)
            throw ValidationError("config line " + std::to_string(lineno) + ": unknown key " + full);
    }

    if (!use_defaults) {
        for (auto& [k, was_set] : seen)
            if (!was_set) throw ValidationError("config: missing required key " + k);
    }
    p.validate();
    return p;
}

ModelParameters load_parameters_file(const std::string& path, bool use_defaults) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open config file: " + path);
    return load_parameters(f, use_defaults);
}

void set_parameter(ModelParameters& p, const std::string& name, double value) {
    if (name == "T_ip" || name == "control.T_ip") {
        if (!(value > 0.0)) throw ValidationError("set_parameter: T_ip must be > 0");
        p.gains.k_ip = p.gains.k_pp / value;
        return;
    }
    if (name == "dc_link_factor" || name == "options.dc_link_factor") {
        p.opts.dc_link_factor = value;
        return;
    }
    if (name == "v_dc_min" || name == "options.v_dc_min") {
        p.opts.v_dc_min = value;
        return;
    }
    auto fields = numeric_fields(p);
    double* hit = nullptr;
    bool dotted = name.find('.') != std::string::npos;
    for (auto& f : fields) {
        std::string full = std::string(f.section) + "." + f.key;
        if (dotted ? (full == name) : (name == f.key)) {
            if (hit) throw ValidationError("set_parameter: ambiguous key " + name);
            hit = f.val;
        }
    }
    if (!hit) throw ValidationError("set_parameter: unknown key " + name);
    *hit = value;
}

std::string serialize_parameters(const ModelParameters& p) {
    ModelParameters copy = p;
    auto fields = numeric_fields(copy);
    std::ostringstream out;
    std::string cur;
    for (auto& f : fields) {
        if (cur != f.section) {
            if (!cur.empty()) out << "\n";
            cur = f.section;
            out << "[" << cur << "]\n";
        }
        out << f.key << " = " << fmt_double(*f.val) << "\n";
    }
    out << "\n[options]\n";
    out << "droop_sign = " << (p.opts.droop_sign == DroopSign::stabilizing ? "stabilizing" : "paper") << "\n";
    out << "speed_saturation = " << (p.opts.speed_saturation ? "true" : "false") << "\n";
    out << "dc_link_factor = " << fmt_double(p.opts.dc_link_factor) << "\n";
    out << "cascade = " << cascade_str(p.opts.cascade) << "\n";
    out << "battery_cascade = " << cascade_str(p.opts.battery_cascade) << "\n";
    out << "v_dc_min = " << fmt_double(p.opts.v_dc_min) << "\n";
    out << "rmse_conventional = " << (p.opts.rmse_conventional ? "true" : "false") << "\n";
    out << "fit_score_concatenated = " << (p.opts.fit_score_concatenated ? "true" : "false") << "\n";
    return out.str();
}

} // namespace vsdr
