#pragma once

#include <wzapprox/errors.hpp>
#include <wzapprox/rng.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace wz {

/// Pointwise map R^d -> R^k written into a caller-provided buffer. Must be pure and reentrant.
using PointMap = std::function<void(std::span<const double> x, std::span<double> out)>;

/// Everything needed to build a CoefficientSystem.
///
/// Layouts (row-major): sigma is d x r with sigma[i * r + n] = sigma^i_n;
/// sigma_jacobian is d x r x d with entry [(i * r + n) * d + alpha] = d_alpha sigma^i_n;
/// correction is r x r with correction[j * r + n] = c_jn.
struct SystemDefinition {
    std::string name;
    std::size_t state_dim = 0;
    std::size_t noise_dim = 0;
    PointMap sigma;
    PointMap drift;
    PointMap sigma_jacobian;
    std::vector<double> correction;

    /// Optional d x d matrix A(x) of a div(A grad X) term. Only the Galerkin
    /// solvers use it; finite-dimensional solvers reject systems that carry one.
    PointMap diffusion_matrix;

    /// The caller's assertion that sigma is C^2_b and b is C^1_b inside probe_radius.
    bool sigma_c2b = false;
    bool drift_c1b = false;

    /// Set when part of the system is known to sit outside the Lipschitz assumption.
    bool lipschitz_exempt = false;
    std::string exemption_note;

    /// Region where the Jacobian cross-check probes (cube [-R, R]^d).
    double probe_radius = 1.0;
};

/// c_jn = 1/2 on the diagonal, 0 elsewhere.
inline std::vector<double> wong_zakai_correction(std::size_t r) {
    std::vector<double> c(r * r, 0.0);
    for (std::size_t j = 0; j < r; ++j) c[j * r + j] = 0.5;
    return c;
}

/// Forward-difference Jacobian cross-check result. The analytic Jacobian is
/// accepted when shrinking epsilon tenfold shrinks the discrepancy at least
/// fivefold (first-order convergence) or the discrepancy is at rounding level.
struct JacobianCheck {
    double coarse_epsilon = 1e-4;
    double fine_epsilon = 1e-5;
    double max_coarse_error = 0.0;
    double max_fine_error = 0.0;
    /// Largest fine/coarse error ratio among probes above the rounding floor.
    double worst_ratio = 0.0;
    std::size_t probes = 0;
    bool passed = true;
};

namespace detail {

inline bool all_finite(std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

inline JacobianCheck check_jacobian(const SystemDefinition& def, std::size_t probes, std::uint64_t seed) {
    const std::size_t d = def.state_dim;
    const std::size_t r = def.noise_dim;
    JacobianCheck out;
    out.probes = probes;
    NormalStream rng(seed);
    std::vector<double> x(d), xp(d), s0(d * r), s1(d * r), jac(d * r * d);
    for (std::size_t p = 0; p < probes; ++p) {
        for (auto& v : x) v = rng.uniform(-def.probe_radius, def.probe_radius);
        def.sigma(x, s0);
        def.sigma_jacobian(x, jac);
        double scale = 1.0;
        for (double v : jac) scale = std::max(scale, std::abs(v));
        for (double v : s0) scale = std::max(scale, std::abs(v));
        double err[2] = {0.0, 0.0};
        const double eps[2] = {out.coarse_epsilon, out.fine_epsilon};
        for (int e = 0; e < 2; ++e) {
            for (std::size_t a = 0; a < d; ++a) {
                xp = x;
                xp[a] += eps[e];
                def.sigma(xp, s1);
                for (std::size_t in = 0; in < d * r; ++in) {
                    const double fd = (s1[in] - s0[in]) / eps[e];
                    err[e] = std::max(err[e], std::abs(fd - jac[in * d + a]));
                }
            }
        }
        out.max_coarse_error = std::max(out.max_coarse_error, err[0]);
        out.max_fine_error = std::max(out.max_fine_error, err[1]);
        // Below this, forward differences are dominated by cancellation.
        const double floor = 1e-8 * scale;
        if (err[1] > floor) {
            const double ratio = err[0] > 0.0 ? err[1] / err[0] : 1.0;
            out.worst_ratio = std::max(out.worst_ratio, ratio);
            if (ratio > 0.2) out.passed = false;
        }
    }
    return out;
}

}  // namespace detail

/// Coefficients sigma^i_n, b^i, their Jacobians and the correction tensor c_jn.
///
/// Immutable once built. Construction validates shapes, the smoothness
/// assertion and the analytic Jacobian against forward differences.
class CoefficientSystem {
public:
    explicit CoefficientSystem(SystemDefinition def, std::size_t jacobian_probes = 100, std::uint64_t probe_seed = 17)
        : def_(std::move(def)) {
        if (def_.state_dim == 0 || def_.noise_dim == 0) throw ValidationError("CoefficientSystem: d and r must be >= 1");
        if (!def_.sigma || !def_.drift || !def_.sigma_jacobian) {
            throw ValidationError("CoefficientSystem '" + def_.name + "': sigma, drift and jacobian are required");
        }
        if (def_.correction.size() != def_.noise_dim * def_.noise_dim) {
            throw ValidationError("CoefficientSystem '" + def_.name + "': correction tensor must be r x r");
        }
        if (!def_.sigma_c2b || !def_.drift_c1b) {
            throw ValidationError("CoefficientSystem '" + def_.name +
                                  "': sigma must be declared C^2_b and the drift C^1_b");
        }
        if (!(def_.probe_radius > 0.0)) throw ValidationError("CoefficientSystem: probe radius must be positive");
        jacobian_check_ = detail::check_jacobian(def_, jacobian_probes, probe_seed);
        if (!jacobian_check_.passed) {
            throw ValidationError("CoefficientSystem '" + def_.name +
                                  "': analytic sigma Jacobian disagrees with finite differences (fine/coarse ratio " +
                                  std::to_string(jacobian_check_.worst_ratio) + ")");
        }
    }

    const std::string& name() const noexcept { return def_.name; }
    std::size_t state_dim() const noexcept { return def_.state_dim; }
    std::size_t noise_dim() const noexcept { return def_.noise_dim; }
    const std::vector<double>& correction() const noexcept { return def_.correction; }
    double correction(std::size_t j, std::size_t n) const { return def_.correction[j * def_.noise_dim + n]; }
    bool has_diffusion_matrix() const noexcept { return static_cast<bool>(def_.diffusion_matrix); }
    bool lipschitz_exempt() const noexcept { return def_.lipschitz_exempt; }
    const std::string& exemption_note() const noexcept { return def_.exemption_note; }
    double probe_radius() const noexcept { return def_.probe_radius; }
    const JacobianCheck& jacobian_check() const noexcept { return jacobian_check_; }
    const SystemDefinition& definition() const noexcept { return def_; }

    void sigma(std::span<const double> x, std::span<double> out) const { def_.sigma(x, out); }
    void drift(std::span<const double> x, std::span<double> out) const { def_.drift(x, out); }
    void sigma_jacobian(std::span<const double> x, std::span<double> out) const { def_.sigma_jacobian(x, out); }
    void diffusion_matrix(std::span<const double> x, std::span<double> out) const {
        if (!def_.diffusion_matrix) throw ValidationError("system '" + def_.name + "' has no diffusion matrix");
        def_.diffusion_matrix(x, out);
    }

    /// Same maps with a different correction tensor.
    CoefficientSystem with_correction(std::vector<double> c) const {
        SystemDefinition def = def_;
        def.correction = std::move(c);
        return CoefficientSystem(std::move(def));
    }

private:
    SystemDefinition def_;
    JacobianCheck jacobian_check_;
};

/// Scratch buffers for allocation-free evaluation in solver inner loops.
struct CoefficientScratch {
    explicit CoefficientScratch(const CoefficientSystem& sys)
        : sigma(sys.state_dim() * sys.noise_dim()),
          jacobian(sys.state_dim() * sys.noise_dim() * sys.state_dim()) {}
    std::vector<double> sigma;
    std::vector<double> jacobian;
};

/// out^i = sum_{j,n} sum_alpha c_jn sigma^alpha_j(x) d_alpha sigma^i_n(x), using caller scratch.
inline void correction_field(const CoefficientSystem& sys, std::span<const double> x, std::span<double> out,
                             CoefficientScratch& scratch) {
    const std::size_t d = sys.state_dim();
    const std::size_t r = sys.noise_dim();
    sys.sigma(x, scratch.sigma);
    sys.sigma_jacobian(x, scratch.jacobian);
    const auto& c = sys.correction();
    for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < r; ++j) {
            for (std::size_t n = 0; n < r; ++n) {
                const double cjn = c[j * r + n];
                if (cjn == 0.0) continue;
                double inner = 0.0;
                for (std::size_t a = 0; a < d; ++a) {
                    inner += scratch.sigma[a * r + j] * scratch.jacobian[(i * r + n) * d + a];
                }
                acc += cjn * inner;
            }
        }
        out[i] = acc;
    }
}

/// Correction drift at x; rejects non-finite input.
inline std::vector<double> correction_field(const CoefficientSystem& sys, std::span<const double> x) {
    if (x.size() != sys.state_dim()) throw ValidationError("correction_field: state has wrong dimension");
    if (!detail::all_finite(x)) throw ValidationError("correction_field: non-finite state");
    CoefficientScratch scratch(sys);
    std::vector<double> out(sys.state_dim());
    correction_field(sys, x, out, scratch);
    return out;
}

/// Pointwise surrogate for the linear-growth and Lipschitz assumptions.
struct RegularityReport {
    /// max_x (sum |sigma|^2 + |b|^2 + sum |sigma^a_j d_a sigma^i_n|^2) / (1 + |x|^2)
    double growth_ratio = 0.0;
    /// max over probe pairs of the same sum of squared differences over |x - y|^2
    double lipschitz_ratio = 0.0;
    std::size_t n_probes = 0;
    double max_probe_norm = 0.0;
    /// Copied from the system: the Lipschitz figure does not cover a spatial operator.
    bool lipschitz_exempt = false;
};

namespace detail {

// sigma (d*r), b (d), then the d*r*r*d correction pieces sigma^alpha_j d_alpha sigma^i_n.
inline void regularity_features(const CoefficientSystem& sys, std::span<const double> x, std::vector<double>& out,
                                CoefficientScratch& scratch) {
    const std::size_t d = sys.state_dim();
    const std::size_t r = sys.noise_dim();
    out.assign(d * r + d + d * r * r * d, 0.0);
    sys.sigma(x, scratch.sigma);
    sys.sigma_jacobian(x, scratch.jacobian);
    std::copy(scratch.sigma.begin(), scratch.sigma.end(), out.begin());
    sys.drift(x, std::span<double>(out).subspan(d * r, d));
    std::size_t at = d * r + d;
    for (std::size_t j = 0; j < r; ++j)
        for (std::size_t n = 0; n < r; ++n)
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t a = 0; a < d; ++a)
                    out[at++] = scratch.sigma[a * r + j] * scratch.jacobian[(i * r + n) * d + a];
}

}  // namespace detail

/// Probes uniformly in [-radius, radius]^d; Lipschitz ratios over all probe pairs.
inline RegularityReport check_regularity(const CoefficientSystem& sys, std::size_t probe_count, double probe_radius,
                                         std::uint64_t seed = 1) {
    if (probe_count < 2) throw ValidationError("check_regularity: need at least 2 probes");
    if (!(probe_radius > 0.0)) throw ValidationError("check_regularity: radius must be positive");
    const std::size_t d = sys.state_dim();
    NormalStream rng(seed);
    CoefficientScratch scratch(sys);
    std::vector<std::vector<double>> xs(probe_count, std::vector<double>(d));
    std::vector<std::vector<double>> fs(probe_count);
    RegularityReport rep;
    rep.n_probes = probe_count;
    rep.lipschitz_exempt = sys.lipschitz_exempt();
    for (std::size_t p = 0; p < probe_count; ++p) {
        for (auto& v : xs[p]) v = rng.uniform(-probe_radius, probe_radius);
        detail::regularity_features(sys, xs[p], fs[p], scratch);
        double norm2 = 0.0;
        for (double v : xs[p]) norm2 += v * v;
        double feat2 = 0.0;
        for (double v : fs[p]) feat2 += v * v;
        rep.growth_ratio = std::max(rep.growth_ratio, feat2 / (1.0 + norm2));
        rep.max_probe_norm = std::max(rep.max_probe_norm, std::sqrt(norm2));
    }
    for (std::size_t p = 0; p < probe_count; ++p) {
        for (std::size_t q = p + 1; q < probe_count; ++q) {
            double dx2 = 0.0;
            for (std::size_t a = 0; a < d; ++a) dx2 += (xs[p][a] - xs[q][a]) * (xs[p][a] - xs[q][a]);
            if (dx2 == 0.0) continue;
            double df2 = 0.0;
            for (std::size_t e = 0; e < fs[p].size(); ++e) df2 += (fs[p][e] - fs[q][e]) * (fs[p][e] - fs[q][e]);
            rep.lipschitz_ratio = std::max(rep.lipschitz_ratio, df2 / dx2);
        }
    }
    return rep;
}

}  // namespace wz
