#pragma once

#include <wzapprox/approximant.hpp>
#include <wzapprox/coefficients.hpp>
#include <wzapprox/errors.hpp>
#include <wzapprox/finite_solver.hpp>
#include <wzapprox/galerkin.hpp>
#include <wzapprox/paths.hpp>
#include <wzapprox/summation.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace wz {

struct WeakOptions {
    /// Enforced bound on sum_i ||X^i||^2 for every solver state.
    double bound = 1e6;
    /// Explicit-step guard for systems with a diffusion matrix:
    /// step * lambda_{m-1} * rho(A) must not exceed this.
    double stability_limit = 2.0;
};

/// Coefficient trajectory of a Galerkin field; states are (n_nodes x d x m).
struct FieldTrajectory {
    TimeGrid grid;
    SpacePtr space;
    std::size_t dim = 0;
    std::vector<double> states;
    Scheme scheme = Scheme::approx_ode;
    std::uint64_t seed = 0;

    std::size_t state_size() const noexcept { return dim * space->size(); }
    std::span<const double> coeffs(std::size_t k) const noexcept {
        return std::span<const double>(states).subspan(k * state_size(), state_size());
    }
    FieldState state(std::size_t k) const {
        const auto c = coeffs(k);
        return FieldState(space, dim, std::vector<double>(c.begin(), c.end()));
    }
    /// State at a grid time.
    FieldState state_at(double t) const { return state(grid.index_of(t)); }
};

/// Galerkin discretization of the pointwise (Nemytskii) coefficient maps:
/// nonlinear terms are evaluated at quadrature nodes and projected back.
///
/// Holds scratch buffers, so one instance per thread.
class NemytskiiOperator {
public:
    NemytskiiOperator(const CoefficientSystem& sys, SpacePtr space)
        : sys_(sys), space_(std::move(space)), d_(sys.state_dim()), r_(sys.noise_dim()), m_(space_->size()),
          nq_(space_->n_nodes()), scratch_(sys), nodal_(d_ * nq_), nodal_dx_(d_ * nq_), x_(d_), sig_(d_ * r_), b_(d_),
          corr_(d_), amat_(d_ * d_), sig_nodal_(d_ * r_ * nq_), b_nodal_(d_ * nq_), flux_nodal_(d_ * nq_) {}

    const CoefficientSystem& system() const noexcept { return sys_; }
    const SpacePtr& space() const noexcept { return space_; }
    std::size_t state_size() const noexcept { return d_ * m_; }

    /// P[sigma^i_n(X)] into out[(i * r + n) * m + k], and P[b^i(X)] (plus the
    /// Galerkin div(A grad X) term when the system has one) into drift[i * m + k].
    void project_sigma_and_drift(std::span<const double> coeffs, std::span<double> sigma_out, std::span<double> drift) {
        load_nodal(coeffs);
        for (std::size_t q = 0; q < nq_; ++q) {
            gather(q);
            sys_.sigma(x_, sig_);
            sys_.drift(x_, b_);
            for (std::size_t e = 0; e < d_ * r_; ++e) sig_nodal_[e * nq_ + q] = sig_[e];
            for (std::size_t i = 0; i < d_; ++i) b_nodal_[i * nq_ + q] = b_[i];
        }
        for (std::size_t e = 0; e < d_ * r_; ++e) {
            space_->project_nodal(std::span<const double>(sig_nodal_).subspan(e * nq_, nq_), sigma_out.subspan(e * m_, m_));
        }
        for (std::size_t i = 0; i < d_; ++i) {
            space_->project_nodal(std::span<const double>(b_nodal_).subspan(i * nq_, nq_), drift.subspan(i * m_, m_));
        }
        if (sys_.has_diffusion_matrix()) add_divergence(coeffs, drift);
    }

    /// P[sum c_jn sigma^a_j d_a sigma^i_n (X)] into out[i * m + k].
    void project_correction(std::span<const double> coeffs, std::span<double> out) {
        load_nodal(coeffs);
        for (std::size_t q = 0; q < nq_; ++q) {
            gather(q);
            correction_field(sys_, x_, corr_, scratch_);
            for (std::size_t i = 0; i < d_; ++i) b_nodal_[i * nq_ + q] = corr_[i];
        }
        for (std::size_t i = 0; i < d_; ++i) {
            space_->project_nodal(std::span<const double>(b_nodal_).subspan(i * nq_, nq_), out.subspan(i * m_, m_));
        }
    }

    /// max over nodes of the largest absolute row sum of A(X): a bound on its spectral radius.
    double diffusion_radius(std::span<const double> coeffs) {
        if (!sys_.has_diffusion_matrix()) return 0.0;
        load_nodal(coeffs);
        double rho = 0.0;
        for (std::size_t q = 0; q < nq_; ++q) {
            gather(q);
            sys_.diffusion_matrix(x_, amat_);
            for (std::size_t i = 0; i < d_; ++i) {
                double row = 0.0;
                for (std::size_t n = 0; n < d_; ++n) row += std::abs(amat_[i * d_ + n]);
                rho = std::max(rho, row);
            }
        }
        return rho;
    }

private:
    void load_nodal(std::span<const double> coeffs) {
        for (std::size_t i = 0; i < d_; ++i) {
            space_->reconstruct_nodal(coeffs.subspan(i * m_, m_), std::span<double>(nodal_).subspan(i * nq_, nq_));
        }
    }

    void gather(std::size_t q) {
        for (std::size_t i = 0; i < d_; ++i) x_[i] = nodal_[i * nq_ + q];
    }

    // Weak form with no-flux boundaries: <div(A grad X)^i, phi_k> = -int sum_n A^in d_x X^n phi_k'.
    void add_divergence(std::span<const double> coeffs, std::span<double> drift) {
        for (std::size_t i = 0; i < d_; ++i) {
            space_->reconstruct_nodal_derivative(coeffs.subspan(i * m_, m_),
                                                 std::span<double>(nodal_dx_).subspan(i * nq_, nq_));
        }
        for (std::size_t q = 0; q < nq_; ++q) {
            gather(q);
            sys_.diffusion_matrix(x_, amat_);
            for (std::size_t i = 0; i < d_; ++i) {
                double f = 0.0;
                for (std::size_t n = 0; n < d_; ++n) f += amat_[i * d_ + n] * nodal_dx_[n * nq_ + q];
                flux_nodal_[i * nq_ + q] = f;
            }
        }
        const auto w = space_->weights();
        for (std::size_t i = 0; i < d_; ++i) {
            for (std::size_t k = 1; k < m_; ++k) {
                double acc = 0.0;
                for (std::size_t q = 0; q < nq_; ++q) acc += w[q] * flux_nodal_[i * nq_ + q] * space_->basis_derivative(k, q);
                drift[i * m_ + k] -= acc;
            }
        }
    }

    const CoefficientSystem& sys_;
    SpacePtr space_;
    std::size_t d_, r_, m_, nq_;
    CoefficientScratch scratch_;
    std::vector<double> nodal_, nodal_dx_, x_, sig_, b_, corr_, amat_, sig_nodal_, b_nodal_, flux_nodal_;
};

/// One classical RK4 step of c' = P[sigma(X)] v + P[b(X)] with the increment split
/// into its noise part and its drift part; the solver advances by their sum.
class SplitRk4 {
public:
    explicit SplitRk4(NemytskiiOperator& op)
        : op_(op), n_(op.state_size()), r_(op.system().noise_dim()), sig_(n_ * r_), drift_(n_), stage_(n_),
          noise_k_(4 * n_), drift_k_(4 * n_) {}

    void step(std::span<const double> y, std::span<const double> slope, double h, std::span<double> noise_part,
              std::span<double> drift_part) {
        static constexpr double kNodeFraction[4] = {0.0, 0.5, 0.5, 1.0};
        static constexpr double kWeight[4] = {1.0, 2.0, 2.0, 1.0};
        const std::size_t m = op_.space()->size();
        const std::size_t d = n_ / m;
        for (int s = 0; s < 4; ++s) {
            if (s == 0) {
                std::copy(y.begin(), y.end(), stage_.begin());
            } else {
                const double a = kNodeFraction[s] * h;
                for (std::size_t e = 0; e < n_; ++e) {
                    stage_[e] = y[e] + a * (noise_k_[(s - 1) * n_ + e] + drift_k_[(s - 1) * n_ + e]);
                }
            }
            op_.project_sigma_and_drift(stage_, sig_, drift_);
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t k = 0; k < m; ++k) {
                    double acc = 0.0;
                    for (std::size_t n = 0; n < r_; ++n) acc += sig_[(i * r_ + n) * m + k] * slope[n];
                    noise_k_[s * n_ + i * m + k] = acc;
                    drift_k_[s * n_ + i * m + k] = drift_[i * m + k];
                }
            }
        }
        for (std::size_t e = 0; e < n_; ++e) {
            double ns = 0.0;
            double ds = 0.0;
            for (int s = 0; s < 4; ++s) {
                ns += kWeight[s] * noise_k_[s * n_ + e];
                ds += kWeight[s] * drift_k_[s * n_ + e];
            }
            noise_part[e] = (h / 6.0) * ns;
            drift_part[e] = (h / 6.0) * ds;
        }
    }

private:
    NemytskiiOperator& op_;
    std::size_t n_, r_;
    std::vector<double> sig_, drift_, stage_, noise_k_, drift_k_;
};

/// The three pieces of one Euler-Maruyama step in coefficient space.
class SplitEuler {
public:
    explicit SplitEuler(NemytskiiOperator& op)
        : op_(op), n_(op.state_size()), r_(op.system().noise_dim()), sig_(n_ * r_) {}

    void step(std::span<const double> y, std::span<const double> dw, double dt, std::span<double> noise_part,
              std::span<double> drift_part, std::span<double> correction_part) {
        const std::size_t m = op_.space()->size();
        const std::size_t d = n_ / m;
        op_.project_sigma_and_drift(y, sig_, drift_part);
        op_.project_correction(y, correction_part);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t k = 0; k < m; ++k) {
                double acc = 0.0;
                for (std::size_t n = 0; n < r_; ++n) acc += sig_[(i * r_ + n) * m + k] * dw[n];
                noise_part[i * m + k] = acc;
            }
        }
        for (std::size_t e = 0; e < n_; ++e) {
            drift_part[e] *= dt;
            correction_part[e] *= dt;
        }
    }

private:
    NemytskiiOperator& op_;
    std::size_t n_, r_;
    std::vector<double> sig_;
};

namespace detail {

inline void check_field_initial(const CoefficientSystem& sys, const FieldState& x0, const char* op) {
    if (!x0.space) throw ValidationError(std::string(op) + ": initial field has no space");
    if (x0.dim != sys.state_dim()) throw ValidationError(std::string(op) + ": initial field has wrong dimension");
    if (!all_finite(x0.coeffs)) throw ValidationError(std::string(op) + ": initial field is not finite");
}

inline void check_field_state(std::span<const double> c, double t, const WeakOptions& opt, const char* op) {
    if (!all_finite(c)) throw BlowUp(fmt::format("{}: non-finite field at t = {}", op, t), t);
    double norm2 = 0.0;
    for (double v : c) norm2 += v * v;
    if (norm2 > opt.bound) {
        throw BoundViolation(fmt::format("{}: sum_i ||X^i||^2 = {} exceeds the bound {} at t = {}", op, norm2,
                                         opt.bound, t),
                             t);
    }
}

inline void check_stability(NemytskiiOperator& op, std::span<const double> c0, double step, const WeakOptions& opt,
                            const char* name) {
    if (!op.system().has_diffusion_matrix()) return;
    const double lambda = op.space()->eigenvalue(op.space()->size() - 1);
    const double rho = op.diffusion_radius(c0);
    if (step * lambda * rho > opt.stability_limit) {
        throw ValidationError(fmt::format("{}: step {} too large for the diffusion term (step * lambda * rho = {} > {})",
                                          name, step, step * lambda * rho, opt.stability_limit));
    }
}

/// Runs `fn`, turning a pointwise-domain failure of the coefficient maps (for example a
/// state leaving the simplex of a diffusion matrix) into a numerical abort at time t.
template <class Fn>
void guarded(double t, const char* op, Fn&& fn) {
    try {
        fn();
    } catch (const NumericalAbort&) {
        throw;
    } catch (const ValidationError& e) {
        throw BoundViolation(fmt::format("{}: coefficient evaluation failed at t = {}: {}", op, t, e.what()), t);
    }
}

}  // namespace detail

/// Galerkin system c' = P[sigma(X) B'_delta + b(X)] by RK4 on `grid`, steps aligned to knots.
inline FieldTrajectory solve_weak_approx(const CoefficientSystem& sys, const PolygonalPath& drive, const FieldState& x0,
                                         const TimeGrid& grid, const WeakOptions& opt = {}) {
    static constexpr const char* kName = "solve_weak_approx";
    detail::check_field_initial(sys, x0, kName);
    const std::size_t r = sys.noise_dim();
    if (drive.dims() != r) throw ValidationError("solve_weak_approx: drive dimension differs from noise dimension");
    const std::size_t per_segment = detail::exact_multiple(drive.knot_step(), grid.step(), "solve_weak_approx knot step");
    if (per_segment == 0 || per_segment * drive.segments() != grid.n_steps()) {
        throw ValidationError("solve_weak_approx: grid must cover the drive with whole steps per segment");
    }
    NemytskiiOperator op(sys, x0.space);
    SplitRk4 rk4(op);
    const std::size_t n = op.state_size();
    detail::check_stability(op, x0.coeffs, grid.step(), opt, kName);
    detail::check_field_state(x0.coeffs, 0.0, opt, kName);

    FieldTrajectory traj{grid, x0.space, x0.dim, std::vector<double>(grid.n_nodes() * n), Scheme::approx_ode,
                         drive.source_seed()};
    std::copy(x0.coeffs.begin(), x0.coeffs.end(), traj.states.begin());
    std::vector<double> slope(r), noise(n), drift(n);
    for (std::size_t seg = 0; seg < drive.segments(); ++seg) {
        for (std::size_t j = 0; j < r; ++j) slope[j] = drive.slope(j, seg);
        for (std::size_t s = 0; s < per_segment; ++s) {
            const std::size_t k = seg * per_segment + s;
            const auto y = traj.coeffs(k);
            detail::guarded(grid.time(k), kName, [&] { rk4.step(y, slope, grid.step(), noise, drift); });
            double* next = traj.states.data() + (k + 1) * n;
            for (std::size_t e = 0; e < n; ++e) next[e] = y[e] + (noise[e] + drift[e]);
            detail::check_field_state(std::span<const double>(next, n), grid.time(k + 1), opt, kName);
        }
    }
    return traj;
}

/// Euler-Maruyama in coefficient space for dX = sigma(X) dw + [b(X) + correction] dt,
/// step `scheme_step`, on the increments of `path`.
inline FieldTrajectory solve_weak_ito(const CoefficientSystem& sys, const WienerPath& path, const FieldState& x0,
                                      double scheme_step, const WeakOptions& opt = {}) {
    static constexpr const char* kName = "solve_weak_ito";
    detail::check_field_initial(sys, x0, kName);
    const std::size_t r = sys.noise_dim();
    if (path.dims() != r) throw ValidationError("solve_weak_ito: path dimension differs from noise dimension");
    const std::size_t stride = path.grid().steps_in(scheme_step);
    const TimeGrid grid = path.grid().coarsen(stride);
    NemytskiiOperator op(sys, x0.space);
    SplitEuler euler(op);
    const std::size_t n = op.state_size();
    detail::check_stability(op, x0.coeffs, grid.step(), opt, kName);
    detail::check_field_state(x0.coeffs, 0.0, opt, kName);

    FieldTrajectory traj{grid, x0.space, x0.dim, std::vector<double>(grid.n_nodes() * n), Scheme::ito_corrected,
                         path.seed()};
    std::copy(x0.coeffs.begin(), x0.coeffs.end(), traj.states.begin());
    std::vector<double> dw(r), noise(n), drift(n), corr(n);
    for (std::size_t k = 0; k < grid.n_steps(); ++k) {
        for (std::size_t j = 0; j < r; ++j) dw[j] = path.value(j, (k + 1) * stride) - path.value(j, k * stride);
        const auto y = traj.coeffs(k);
        detail::guarded(grid.time(k), kName, [&] { euler.step(y, dw, grid.step(), noise, drift, corr); });
        double* next = traj.states.data() + (k + 1) * n;
        for (std::size_t e = 0; e < n; ++e) next[e] = y[e] + (noise[e] + (drift[e] + corr[e]));
        detail::check_field_state(std::span<const double>(next, n), grid.time(k + 1), opt, kName);
    }
    return traj;
}

/// sup over the nodes of `coarse` of ||a - b||^p_{L2}, both trajectories sampled there.
inline double field_sup_error(const FieldTrajectory& a, const FieldTrajectory& b, const TimeGrid& coarse, double p) {
    if (a.space != b.space || a.dim != b.dim) throw ValidationError("field_sup_error: fields live in different spaces");
    const std::size_t sa = a.grid.steps_in(coarse.step());
    const std::size_t sb = b.grid.steps_in(coarse.step());
    if (coarse.n_steps() * sa != a.grid.n_steps() || coarse.n_steps() * sb != b.grid.n_steps()) {
        throw ValidationError("field_sup_error: horizons differ");
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < coarse.n_nodes(); ++k) {
        const auto x = a.coeffs(k * sa);
        const auto y = b.coeffs(k * sb);
        double sq = 0.0;
        for (std::size_t e = 0; e < x.size(); ++e) sq += (x[e] - y[e]) * (x[e] - y[e]);
        worst = std::max(worst, sq);
    }
    return detail::norm_sq_power(worst, p);
}

/// Piecewise-constant-in-time test function phi(t) = X_delta(k w) - X(k w) for
/// k w <= t < (k + 1) w, where w = window = n(delta) delta.
class StepTestFunction {
public:
    StepTestFunction(double window, std::vector<FieldState> snapshots)
        : window_(window), snapshots_(std::move(snapshots)) {
        if (!(window_ > 0.0) || snapshots_.empty()) throw ValidationError("StepTestFunction: invalid window");
    }

    double window() const noexcept { return window_; }
    std::size_t size() const noexcept { return snapshots_.size(); }
    const FieldState& snapshot(std::size_t k) const { return snapshots_.at(k); }

    /// Index k with k w <= t < (k + 1) w (window starts snapped exactly).
    std::size_t window_index(double t) const {
        if (!(t >= 0.0)) throw ValidationError("StepTestFunction: negative time");
        const double q = t / window_;
        const double r = std::round(q);
        const double k = std::abs(q - r) <= detail::kAlignTolerance * std::max(1.0, r) ? r : std::floor(q);
        const auto idx = static_cast<std::size_t>(k);
        if (idx >= snapshots_.size()) throw ValidationError("StepTestFunction: time beyond the last window");
        return idx;
    }

    const FieldState& operator()(double t) const { return snapshots_[window_index(t)]; }

private:
    double window_;
    std::vector<FieldState> snapshots_;
};

/// Snapshots of X_delta - X at every window start k * window <= T. Each snapshot
/// reads only the states at its own window start.
inline StepTestFunction build_test_function(const FieldTrajectory& approx, const FieldTrajectory& ito, double window) {
    if (approx.space != ito.space || approx.dim != ito.dim) {
        throw ValidationError("build_test_function: trajectories live in different spaces");
    }
    if (approx.grid.horizon() != ito.grid.horizon()) throw ValidationError("build_test_function: horizons differ");
    const std::size_t wa = approx.grid.steps_in(window);
    const std::size_t wb = ito.grid.steps_in(window);
    const std::size_t count = approx.grid.n_steps() / wa + 1;
    std::vector<FieldState> snaps;
    snaps.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const auto a = approx.coeffs(k * wa);
        const auto b = ito.coeffs(k * wb);
        std::vector<double> diff(a.size());
        for (std::size_t e = 0; e < a.size(); ++e) diff[e] = a[e] - b[e];
        snaps.emplace_back(approx.space, approx.dim, std::move(diff));
    }
    return StepTestFunction(window, std::move(snaps));
}

/// Terms of <X_delta(t) - X(t), phi> = H1 + H2 + H3 + H4, with phi = phi(t).
struct DecompositionTerms {
    double t = 0.0;
    double lhs = 0.0;
    double h1 = 0.0;
    double h2 = 0.0;
    double h3 = 0.0;
    double h4 = 0.0;
    double residual = 0.0;
};

/// Re-assembles the per-step increments of a coupled (approx, Ito) replica and
/// evaluates the H-term decomposition at any grid-aligned time.
///
/// The increments are recomputed with the same split steps the solvers used, so
/// the identity is algebraic: the residual measures only rounding.
/// Windows: H3 on [0, a], H2 on [a, [t]-], H1 on [[t]-, t] with a = min(window, [t]-);
/// H4 is the drift difference over [0, t].
class DecompositionAssembler {
public:
    DecompositionAssembler(const CoefficientSystem& sys, const FieldTrajectory& approx, const FieldTrajectory& ito,
                           const PolygonalPath& drive, const WienerPath& path)
        : approx_(approx), ito_(ito), n_(approx.state_size()) {
        if (approx.seed != ito.seed || approx.seed != drive.source_seed() || approx.seed != path.seed()) {
            throw ValidationError("decomposition: inputs come from different replicas (seed mismatch)");
        }
        if (approx.space != ito.space || approx.dim != ito.dim) {
            throw ValidationError("decomposition: trajectories live in different spaces");
        }
        NemytskiiOperator op(sys, approx.space);
        {
            SplitRk4 rk4(op);
            const std::size_t per_segment = approx.grid.steps_in(drive.knot_step());
            approx_noise_.resize(approx.grid.n_steps() * n_);
            approx_drift_.resize(approx.grid.n_steps() * n_);
            std::vector<double> slope(sys.noise_dim());
            for (std::size_t k = 0; k < approx.grid.n_steps(); ++k) {
                const std::size_t seg = k / per_segment;
                for (std::size_t j = 0; j < slope.size(); ++j) slope[j] = drive.slope(j, seg);
                rk4.step(approx.coeffs(k), slope, approx.grid.step(), std::span<double>(approx_noise_).subspan(k * n_, n_),
                         std::span<double>(approx_drift_).subspan(k * n_, n_));
            }
        }
        {
            SplitEuler euler(op);
            const std::size_t stride = path.grid().steps_in(ito.grid.step());
            const std::size_t steps = ito.grid.n_steps();
            ito_noise_.resize(steps * n_);
            ito_drift_.resize(steps * n_);
            ito_corr_.resize(steps * n_);
            std::vector<double> dw(sys.noise_dim());
            for (std::size_t k = 0; k < steps; ++k) {
                for (std::size_t j = 0; j < dw.size(); ++j) {
                    dw[j] = path.value(j, (k + 1) * stride) - path.value(j, k * stride);
                }
                euler.step(ito.coeffs(k), dw, ito.grid.step(), std::span<double>(ito_noise_).subspan(k * n_, n_),
                           std::span<double>(ito_drift_).subspan(k * n_, n_),
                           std::span<double>(ito_corr_).subspan(k * n_, n_));
            }
        }
    }

    DecompositionTerms terms_at(const StepTestFunction& phi_fn, double t) const {
        const std::size_t ka = approx_.grid.index_of(t);
        const std::size_t kb = ito_.grid.index_of(t);
        const FieldState& phi = phi_fn(t);
        const double window = phi_fn.window();
        const double lower = window * static_cast<double>(phi_fn.window_index(t));  // [t]-
        const double first = std::min(window, lower);
        const std::size_t a_first = approx_.grid.index_of(first), a_lower = approx_.grid.index_of(lower);
        const std::size_t b_first = ito_.grid.index_of(first), b_lower = ito_.grid.index_of(lower);

        // Bucket 0: H3 window, 1: H2 window, 2: H1 window.
        CompensatedSum h[3], h4, lhs;
        auto bucket = [](std::size_t end_node, std::size_t first_node, std::size_t lower_node) {
            return end_node <= first_node ? 0 : (end_node <= lower_node ? 1 : 2);
        };
        for (std::size_t k = 0; k < ka; ++k) {
            const int b = bucket(k + 1, a_first, a_lower);
            h[b] += dot(approx_noise_, k, phi);
            h4 += dot(approx_drift_, k, phi);
        }
        for (std::size_t k = 0; k < kb; ++k) {
            const int b = bucket(k + 1, b_first, b_lower);
            h[b] -= dot(ito_noise_, k, phi);
            h[b] -= dot(ito_corr_, k, phi);
            h4 -= dot(ito_drift_, k, phi);
        }
        const auto xa = approx_.coeffs(ka);
        const auto xb = ito_.coeffs(kb);
        for (std::size_t e = 0; e < n_; ++e) lhs += (xa[e] - xb[e]) * phi.coeffs[e];

        DecompositionTerms out;
        out.t = t;
        out.lhs = lhs.value();
        out.h1 = h[2].value();
        out.h2 = h[1].value();
        out.h3 = h[0].value();
        out.h4 = h4.value();
        CompensatedSum rhs;
        rhs += out.h1;
        rhs += out.h2;
        rhs += out.h3;
        rhs += out.h4;
        out.residual = std::abs(out.lhs - rhs.value());
        return out;
    }

private:
    double dot(const std::vector<double>& rows, std::size_t k, const FieldState& phi) const {
        const double* v = rows.data() + k * n_;
        double s = 0.0;
        for (std::size_t e = 0; e < n_; ++e) s += v[e] * phi.coeffs[e];
        return s;
    }

    const FieldTrajectory& approx_;
    const FieldTrajectory& ito_;
    std::size_t n_;
    std::vector<double> approx_noise_, approx_drift_, ito_noise_, ito_drift_, ito_corr_;
};

/// Single-time convenience wrapper around DecompositionAssembler.
inline DecompositionTerms decomposition_residual(const CoefficientSystem& sys, const FieldTrajectory& approx,
                                                 const FieldTrajectory& ito, const StepTestFunction& phi,
                                                 const PolygonalPath& drive, const WienerPath& path, double t) {
    return DecompositionAssembler(sys, approx, ito, drive, path).terms_at(phi, t);
}

/// n(delta) = ceil(delta^-exponent).
inline std::size_t window_multiplier(double delta, double exponent) { return ceil_power_schedule(delta, exponent); }

/// Checks that a schedule n(delta) = ceil(delta^-e) on a halving grid satisfies
/// n -> infinity and n^4 delta -> 0.
///
/// Requires e in (0, 1/4), a strictly halving grid and n non-decreasing along it.
/// n^4 delta itself is not monotone under the ceiling, so the decay is checked on
/// the envelope (delta^-e + 1)^4 delta >= n^4 delta, which must strictly decrease.
inline void validate_schedule(std::span<const double> deltas, double exponent) {
    if (!(exponent > 0.0 && exponent < 0.25)) throw ValidationError("schedule exponent must lie in (0, 1/4)");
    if (deltas.empty()) throw ValidationError("schedule: empty delta grid");
    double prev_envelope = std::numeric_limits<double>::infinity();
    std::size_t prev_n = 0;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        const double delta = deltas[i];
        if (i > 0 && delta != 0.5 * deltas[i - 1]) throw ValidationError("schedule: delta grid must halve at each level");
        const std::size_t n = window_multiplier(delta, exponent);
        if (n < prev_n) throw ValidationError("schedule: n(delta) must not decrease as delta shrinks");
        const double envelope = std::pow(std::pow(delta, -exponent) + 1.0, 4.0) * delta;
        if (!(envelope < prev_envelope)) throw ValidationError("schedule: n(delta)^4 delta envelope does not decrease");
        prev_n = n;
        prev_envelope = envelope;
    }
}

/// Increment quantities of one coupled replica at one pair s < t.
struct IncrementSample {
    /// ||X_delta(t) - X_delta(s)|| / (sum_n int_s^t |B'^n| + (t - s)); 0 when s == t.
    double approx_ratio = 0.0;
    /// ||X_delta(t) - X_delta(s)||^2
    double approx_sq = 0.0;
    /// ||X(t) - X(s)||^2
    double ito_sq = 0.0;
};

inline IncrementSample increment_sample(const FieldTrajectory& approx, const FieldTrajectory& ito,
                                        const PolygonalPath& drive, double s, double t) {
    IncrementSample out;
    if (t < s) throw ValidationError("increment_sample: need s <= t");
    if (t == s) return out;
    const auto a0 = approx.coeffs(approx.grid.index_of(s));
    const auto a1 = approx.coeffs(approx.grid.index_of(t));
    const auto b0 = ito.coeffs(ito.grid.index_of(s));
    const auto b1 = ito.coeffs(ito.grid.index_of(t));
    for (std::size_t e = 0; e < a0.size(); ++e) {
        out.approx_sq += (a1[e] - a0[e]) * (a1[e] - a0[e]);
        out.ito_sq += (b1[e] - b0[e]) * (b1[e] - b0[e]);
    }
    double variation = t - s;
    for (std::size_t n = 0; n < drive.dims(); ++n) variation += drive.abs_variation(n, s, t);
    out.approx_ratio = std::sqrt(out.approx_sq) / variation;
    return out;
}

/// Time pairs probed by the increment-bound diagnostics.
struct LemmaPairs {
    /// Pairs of window starts (k w, l w): used for the whole-interval bounds.
    std::vector<std::pair<double, double>> spanning;
    /// Knot pairs inside one window: k w <= s < t <= (k + 1) w.
    std::vector<std::pair<double, double>> within;
};

inline LemmaPairs lemma_pairs(double horizon, double delta, std::size_t n_delta) {
    LemmaPairs out;
    const double window = delta * static_cast<double>(n_delta);
    const std::size_t knots = detail::exact_multiple(horizon, delta, "lemma_pairs horizon");
    const std::size_t windows = knots / n_delta;
    for (std::size_t a = 0; a <= windows; ++a)
        for (std::size_t b = a + 1; b <= windows; ++b)
            out.spanning.emplace_back(window * static_cast<double>(a), window * static_cast<double>(b));
    for (std::size_t k = 0; k * n_delta < knots; ++k) {
        for (std::size_t a = 0; a <= n_delta; ++a) {
            for (std::size_t b = a + 1; b <= n_delta; ++b) {
                if (k * n_delta + b > knots) break;
                out.within.emplace_back(delta * static_cast<double>(k * n_delta + a),
                                        delta * static_cast<double>(k * n_delta + b));
            }
        }
    }
    return out;
}

/// CSV with columns t, component, basis_index, coeff.
inline void write_field_trajectory_csv(std::ostream& os, const FieldTrajectory& traj) {
    os << "t,component,basis_index,coeff\n";
    const std::size_t m = traj.space->size();
    for (std::size_t k = 0; k < traj.grid.n_nodes(); ++k) {
        const auto c = traj.coeffs(k);
        for (std::size_t i = 0; i < traj.dim; ++i)
            for (std::size_t j = 0; j < m; ++j) fmt::print(os, "{},{},{},{}\n", traj.grid.time(k), i + 1, j, c[i * m + j]);
    }
}

}  // namespace wz
