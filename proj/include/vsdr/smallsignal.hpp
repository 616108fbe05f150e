#pragma once
#include <complex>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vsdr/engine.hpp"
#include "vsdr/params.hpp"

namespace vsdr::smallsignal {

// Linear state-space model about an operating point. Angle states are carried in
// the delta coordinate so the only structural zero modes are the genuine grid
// angle and the redundant reference split between the two speed-setting
// integrators.
struct LinearModel {
    Eigen::MatrixXd A;
    Eigen::MatrixXd B;
    std::vector<std::string> state_labels;
    std::vector<std::string> input_labels;
    Eigen::VectorXd x0; // delta form
    Eigen::VectorXd u0;
};

// Central finite differences of the assembled derivative in delta form.
// Requires the point to be an equilibrium (residual < 1e-8) with the speed
// reference clamp inactive; throws ValidationError otherwise.
LinearModel linearize(const engine::OperatingPoint& op, const ModelParameters& p,
                      const engine::EngineMode& mode = {});

// Projects out the free grid angle and the reference-split direction
// k_ip * e_muT - k_iT * e_mupt, returning the 19x19 restriction of A to the
// orthogonal complement.
Eigen::MatrixXd deflate(const Eigen::MatrixXd& A, const ModelParameters& p);

struct ModalAnalysis {
    Eigen::VectorXcd eigenvalues;  // sorted by descending real part, then descending imag
    Eigen::VectorXd damping;       // zeta = -Re / |lambda|
    Eigen::VectorXd frequency_hz;  // |Im| / (2 pi)
    Eigen::MatrixXcd right;        // columns aligned with eigenvalues
    Eigen::MatrixXcd left;         // rows aligned with eigenvalues
    Eigen::MatrixXd participation; // states x modes, each column sums to 1 in abs value

    double max_real() const;
    bool stable() const; // max_real() < -1e-9
};

ModalAnalysis eigenanalysis(const Eigen::MatrixXd& A);

// Factory abstraction for sweeps and maps: produce the system matrix for given
// parameter values, or nothing when that point has no usable equilibrium.
using ModelFactory1 = std::function<std::optional<Eigen::MatrixXd>(double)>;
using ModelFactory2 = std::function<std::optional<Eigen::MatrixXd>(double, double)>;

struct SweepResult {
    std::vector<double> values;
    std::vector<bool> ok;           // factory produced a matrix at this value
    Eigen::MatrixXcd loci;          // modes x values; NaN column where ok is false
    std::vector<ModalAnalysis> analyses; // empty entries where ok is false
    int gap_count = 0;
};

// Evaluates the factory across the grid and pairs modes between neighboring
// values by greedy eigenvector overlap; ties fall back to nearest eigenvalue.
SweepResult parameter_sensitivity(const ModelFactory1& factory,
                                  const std::vector<double>& values, int jobs = 1);

enum class Verdict { stable, unstable, no_equilibrium };

const char* verdict_name(Verdict v);

struct StabilityMap {
    std::vector<double> p1_values;
    std::vector<double> p2_values;
    // row-major over (i1, i2); max_re is NaN for no_equilibrium cells
    std::vector<Verdict> verdicts;
    std::vector<double> max_re;

    Verdict at(size_t i1, size_t i2) const { return verdicts[i1 * p2_values.size() + i2]; }
};

// Classifies every grid cell; factory failures (including invalid parameter
// combinations) are recorded as no_equilibrium, never thrown.
StabilityMap stability_map(const ModelFactory2& factory, const std::vector<double>& p1,
                           const std::vector<double>& p2, int jobs = 1);

// Full-model factory helper: copies the base set, assigns the named parameters,
// re-solves the operating point, linearizes and deflates. "T_ip" maps to
// k_ip = k_pp / T_ip and is applied after the other assignment.
std::optional<Eigen::MatrixXd> full_model_matrix(const ModelParameters& p);
ModelFactory2 full_model_factory(const ModelParameters& base, const std::string& p1_name,
                                 const std::string& p2_name);
ModelFactory1 full_model_factory(const ModelParameters& base, const std::string& name);

} // namespace vsdr::smallsignal
