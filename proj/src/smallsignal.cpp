#include "vsdr/smallsignal.hpp"
#include "vsdr/control.hpp"
#include "vsdr/errors.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <thread>

namespace vsdr::smallsignal {

namespace {

void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn) {
    jobs = std::max(1, jobs);
    size_t nw = std::min(static_cast<size_t>(jobs), n);
    if (nw <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mutex;
    std::vector<std::thread> workers;
    workers.reserve(nw);
    for (size_t w = 0; w < nw; ++w) {
        workers.emplace_back([&] {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

double max_real_of(const Eigen::MatrixXd& A) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(A, false);
    if (es.info() != Eigen::Success)
        throw NumericalError("eigenanalysis: eigenvalue iteration failed");
    return es.eigenvalues().real().maxCoeff();
}

} // namespace

LinearModel linearize(const engine::OperatingPoint& op, const ModelParameters& p,
                      const engine::EngineMode& mode) {
    double res = engine::equilibrium_residual(op.x, op.u, p, mode);
    if (!(res < 1e-8))
        throw ValidationError("linearize: point is not an equilibrium, residual " +
                              std::to_string(res));

    engine::EngineMode m = mode;
    m.delta_form = true;
    Vec21 z = op.x;
    if (!mode.delta_form) z[ix::th_hat] = op.x[ix::th_g] - op.x[ix::th_hat];
    z[ix::th_g] = 0.0;

    // the clamp on the speed reference must not be active or at its corner,
    // otherwise central differences straddle the kink
    if (p.opts.speed_saturation && m.power_loop) {
        auto out = engine::derived_outputs(z, op.u, p, m);
        double margin = 1e-6;
        if (out.w_m_ref < control::kSpeedRefMin + margin ||
            out.w_m_ref > control::kSpeedRefMax - margin)
            throw ValidationError("linearize: speed reference saturation active or at its corner");
    }

    LinearModel lm;
    lm.A.resize(21, 21);
    lm.B.resize(21, ix::N_INPUTS);
    for (int j = 0; j < 21; ++j) {
        double h = 1e-7 * std::max(1.0, std::abs(z[j]));
        Vec21 zp = z, zm = z;
        zp[j] += h;
        zm[j] -= h;
        lm.A.col(j) = (engine::assemble_derivative(zp, op.u, p, m) -
                       engine::assemble_derivative(zm, op.u, p, m)) /
                      (2.0 * h);
    }
    for (int j = 0; j < ix::N_INPUTS; ++j) {
        double h = 1e-7 * std::max(1.0, std::abs(op.u[j]));
        Vec9 up = op.u, um = op.u;
        up[j] += h;
        um[j] -= h;
        lm.B.col(j) = (engine::assemble_derivative(z, up, p, m) -
                       engine::assemble_derivative(z, um, p, m)) /
                      (2.0 * h);
    }

    for (const auto& n : state_names()) lm.state_labels.push_back(n == "th_hat" ? "delta" : n);
    for (const auto& n : input_names()) lm.input_labels.push_back(n);
    lm.x0 = z;
    lm.u0 = op.u;
    return lm;
}

Eigen::MatrixXd deflate(const Eigen::MatrixXd& A, const ModelParameters& p) {
    if (A.rows() != 21 || A.cols() != 21)
        throw ValidationError("deflate: expected the 21-state matrix");
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(21, 2);
    M(ix::th_g, 0) = 1.0;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(21);
    v[ix::mu_T] = p.gains.k_ip;
    v[ix::mu_pt] = -p.gains.k_iT;
    M.col(1) = v.normalized();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(M);
    Eigen::MatrixXd Q = qr.householderQ();
    Eigen::MatrixXd C = Q.rightCols(19); // orthogonal complement of the two directions
    return C.transpose() * A * C;
}

double ModalAnalysis::max_real() const { return eigenvalues.real().maxCoeff(); }
bool ModalAnalysis::stable() const { return max_real() < -1e-9; }

ModalAnalysis eigenanalysis(const Eigen::MatrixXd& A) {
    if (!A.allFinite()) throw ValidationError("eigenanalysis: matrix has non-finite entries");
    Eigen::EigenSolver<Eigen::MatrixXd> es(A);
    if (es.info() != Eigen::Success)
        throw NumericalError("eigenanalysis: eigenvalue iteration failed");

    const Eigen::Index n = A.rows();
    Eigen::VectorXcd vals = es.eigenvalues();
    Eigen::MatrixXcd vecs = es.eigenvectors();

    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (vals[a].real() != vals[b].real()) return vals[a].real() > vals[b].real();
        return vals[a].imag() > vals[b].imag();
    });

    ModalAnalysis ma;
    ma.eigenvalues.resize(n);
    ma.right.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        ma.eigenvalues[k] = vals[order[static_cast<size_t>(k)]];
        ma.right.col(k) = vecs.col(order[static_cast<size_t>(k)]);
    }
    ma.left = ma.right.inverse();

    ma.damping.resize(n);
    ma.frequency_hz.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        double mag = std::abs(ma.eigenvalues[k]);
        ma.damping[k] = mag > 0.0 ? -ma.eigenvalues[k].real() / mag : 0.0;
        ma.frequency_hz[k] = std::abs(ma.eigenvalues[k].imag()) / (2.0 * std::numbers::pi);
    }

    ma.participation.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        for (Eigen::Index i = 0; i < n; ++i)
            ma.participation(i, k) = std::abs(ma.right(i, k) * ma.left(k, i));
        double s = ma.participation.col(k).sum();
        if (s > 0.0) ma.participation.col(k) /= s;
    }
    return ma;
}

SweepResult parameter_sensitivity(const ModelFactory1& factory,
                                  const std::vector<double>& values, int jobs) {
    const size_t nv = values.size();
    std::vector<std::optional<Eigen::MatrixXd>> mats(nv);
    parallel_for(nv, jobs, [&](size_t i) { mats[i] = factory(values[i]); });

    SweepResult r;
    r.values = values;
    r.ok.assign(nv, false);
    r.analyses.resize(nv);

    Eigen::Index n = -1;
    for (size_t i = 0; i < nv; ++i) {
        if (!mats[i]) {
            ++r.gap_count;
            continue;
        }
        if (n < 0) n = mats[i]->rows();
        if (mats[i]->rows() != n)
            throw ValidationError("parameter_sensitivity: model dimension changed across the grid");
        r.ok[i] = true;
        r.analyses[i] = eigenanalysis(*mats[i]);
    }
    if (n < 0) {
        r.loci.resize(0, static_cast<Eigen::Index>(nv));
        return r;
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.loci = Eigen::MatrixXcd::Constant(n, static_cast<Eigen::Index>(nv),
                                        std::complex<double>(nan, nan));

    Eigen::MatrixXcd prev_vecs;  // tracked basis, columns in locus order
    Eigen::VectorXcd prev_vals;
    for (size_t i = 0; i < nv; ++i) {
        if (!r.ok[i]) continue;
        const ModalAnalysis& ma = r.analyses[i];
        if (prev_vecs.size() == 0) {
            prev_vecs = ma.right;
            prev_vals = ma.eigenvalues;
            r.loci.col(static_cast<Eigen::Index>(i)) = ma.eigenvalues;
            continue;
        }
        // overlap of normalized eigenvectors, greedy pairing
        Eigen::MatrixXd overlap(n, n);
        for (Eigen::Index a = 0; a < n; ++a)
            for (Eigen::Index b = 0; b < n; ++b) {
                double na = prev_vecs.col(a).norm(), nb = ma.right.col(b).norm();
                overlap(a, b) =
                    (na > 0 && nb > 0)
                        ? std::abs(prev_vecs.col(a).dot(ma.right.col(b))) / (na * nb)
                        : 0.0;
            }
        std::vector<bool> row_used(static_cast<size_t>(n), false),
            col_used(static_cast<size_t>(n), false);
        std::vector<Eigen::Index> match(static_cast<size_t>(n), -1);
        for (Eigen::Index pick = 0; pick < n; ++pick) {
            double best = -1.0;
            Eigen::Index ba = -1, bb = -1;
            for (Eigen::Index a = 0; a < n; ++a) {
                if (row_used[static_cast<size_t>(a)]) continue;
                for (Eigen::Index b = 0; b < n; ++b) {
                    if (col_used[static_cast<size_t>(b)]) continue;
                    double o = overlap(a, b);
                    if (o > best + 1e-12) {
                        best = o;
                        ba = a;
                        bb = b;
                    } else if (std::abs(o - best) <= 1e-12 && ba >= 0) {
                        // tie: prefer the nearest eigenvalue continuation
                        double dn = std::abs(ma.eigenvalues[b] - prev_vals[a]);
                        double dc = std::abs(ma.eigenvalues[bb] - prev_vals[ba]);
                        if (dn < dc) {
                            ba = a;
                            bb = b;
                        }
                    }
                }
            }
            row_used[static_cast<size_t>(ba)] = true;
            col_used[static_cast<size_t>(bb)] = true;
            match[static_cast<size_t>(ba)] = bb;
        }
        for (Eigen::Index a = 0; a < n; ++a) {
            Eigen::Index b = match[static_cast<size_t>(a)];
            r.loci(a, static_cast<Eigen::Index>(i)) = ma.eigenvalues[b];
            prev_vecs.col(a) = ma.right.col(b);
            prev_vals[a] = ma.eigenvalues[b];
        }
    }
    return r;
}

const char* verdict_name(Verdict v) {
    switch (v) {
    case Verdict::stable: return "stable";
    case Verdict::unstable: return "unstable";
    default: return "no-equilibrium";
    }
}

StabilityMap stability_map(const ModelFactory2& factory, const std::vector<double>& p1,
                           const std::vector<double>& p2, int jobs) {
    if (p1.empty() || p2.empty())
        throw ValidationError("stability_map: parameter grids must be non-empty");
    StabilityMap map;
    map.p1_values = p1;
    map.p2_values = p2;
    size_t n = p1.size() * p2.size();
    map.verdicts.assign(n, Verdict::no_equilibrium);
    map.max_re.assign(n, std::numeric_limits<double>::quiet_NaN());
    parallel_for(n, jobs, [&](size_t idx) {
        size_t i1 = idx / p2.size(), i2 = idx % p2.size();
        std::optional<Eigen::MatrixXd> A;
        try {
            A = factory(p1[i1], p2[i2]);
        } catch (const std::exception&) {
            A.reset();
        }
        if (!A) return; // stays no_equilibrium
        double mr = max_real_of(*A);
        map.max_re[idx] = mr;
        map.verdicts[idx] = mr < -1e-9 ? Verdict::stable : Verdict::unstable;
    });
    return map;
}

std::optional<Eigen::MatrixXd> full_model_matrix(const ModelParameters& p) {
    try {
        p.validate();
        auto op = engine::solve_operating_point(p);
        auto lm = linearize(op, p);
        return deflate(lm.A, p);
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

ModelFactory2 full_model_factory(const ModelParameters& base, const std::string& p1_name,
                                 const std::string& p2_name) {
    return [base, p1_name, p2_name](double v1, double v2) -> std::optional<Eigen::MatrixXd> {
        ModelParameters q = base;
        try {
            set_parameter(q, p1_name, v1);
            set_parameter(q, p2_name, v2);
        } catch (const std::exception&) {
            return std::nullopt;
        }
        return full_model_matrix(q);
    };
}

ModelFactory1 full_model_factory(const ModelParameters& base, const std::string& name) {
    return [base, name](double v) -> std::optional<Eigen::MatrixXd> {
        ModelParameters q = base;
        try {
            set_parameter(q, name, v);
        } catch (const std::exception&) {
            return std::nullopt;
        }
        return full_model_matrix(q);
    };
}

} // namespace vsdr::smallsignal
