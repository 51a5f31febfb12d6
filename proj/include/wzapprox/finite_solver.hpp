#pragma once

#include <wzapprox/approximant.hpp>
#include <wzapprox/coefficients.hpp>
#include <wzapprox/errors.hpp>
#include <wzapprox/paths.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace wz {

enum class Scheme { approx_ode, ito_corrected };

inline const char* scheme_name(Scheme s) noexcept {
    return s == Scheme::approx_ode ? "approx-ode" : "ito-corrected";
}

/// States X(t_k) on the nodes of a grid, row-major (n_nodes x d).
struct Trajectory {
    TimeGrid grid;
    std::size_t dim = 0;
    std::vector<double> states;
    Scheme scheme = Scheme::approx_ode;
    std::uint64_t seed = 0;

    std::span<const double> at(std::size_t k) const noexcept {
        return std::span<const double>(states).subspan(k * dim, dim);
    }
};

namespace detail {

inline void require_pointwise(const CoefficientSystem& sys, const char* op) {
    if (sys.has_diffusion_matrix()) {
        throw ValidationError(std::string(op) + ": system '" + sys.name() +
                              "' has a spatial diffusion operator; use the Galerkin solvers");
    }
}

inline void check_initial(std::span<const double> x0, std::size_t d, const char* op) {
    if (x0.size() != d) throw ValidationError(std::string(op) + ": initial state has wrong dimension");
    if (!all_finite(x0)) throw ValidationError(std::string(op) + ": initial state is not finite");
}

/// (|v|^2)^(p/2), exact for the common exponents 2 and 4.
inline double norm_sq_power(double norm_sq, double p) {
    if (p == 2.0) return norm_sq;
    if (p == 4.0) return norm_sq * norm_sq;
    return std::pow(norm_sq, 0.5 * p);
}

inline void check_state(std::span<const double> x, double t, const char* op) {
    if (!all_finite(x)) {
        throw BlowUp(fmt::format("{}: non-finite state at t = {}", op, t), t);
    }
}

}  // namespace detail

/// Solves x' = sigma(x) B'_delta(t) + b(x) by classical RK4 on `grid`.
///
/// The grid step must divide the knot spacing so no step straddles a knot;
/// within a step the driving slope is constant and the vector field is smooth.
inline Trajectory solve_approx_ode(const CoefficientSystem& sys, const PolygonalPath& drive,
                                   std::span<const double> x0, const TimeGrid& grid) {
    detail::require_pointwise(sys, "solve_approx_ode");
    const std::size_t d = sys.state_dim();
    const std::size_t r = sys.noise_dim();
    detail::check_initial(x0, d, "solve_approx_ode");
    if (drive.dims() != r) throw ValidationError("solve_approx_ode: drive dimension differs from noise dimension");
    const std::size_t per_segment = detail::exact_multiple(drive.knot_step(), grid.step(), "solve_approx_ode knot step");
    if (per_segment == 0 || per_segment * drive.segments() != grid.n_steps()) {
        throw ValidationError("solve_approx_ode: grid must cover the drive with whole steps per segment");
    }

    Trajectory traj{grid, d, std::vector<double>(grid.n_nodes() * d), Scheme::approx_ode, drive.source_seed()};
    std::copy(x0.begin(), x0.end(), traj.states.begin());

    const double h = grid.step();
    std::vector<double> y(x0.begin(), x0.end()), tmp(d), k1(d), k2(d), k3(d), k4(d), sig(d * r), bx(d), slope(r);
    auto rhs = [&](std::span<const double> x, std::vector<double>& out) {
        sys.sigma(x, sig);
        sys.drift(x, bx);
        for (std::size_t i = 0; i < d; ++i) {
            double acc = bx[i];
            for (std::size_t n = 0; n < r; ++n) acc += sig[i * r + n] * slope[n];
            out[i] = acc;
        }
    };

    for (std::size_t seg = 0; seg < drive.segments(); ++seg) {
        for (std::size_t n = 0; n < r; ++n) slope[n] = drive.slope(n, seg);
        for (std::size_t s = 0; s < per_segment; ++s) {
            rhs(y, k1);
            for (std::size_t i = 0; i < d; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
            rhs(tmp, k2);
            for (std::size_t i = 0; i < d; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
            rhs(tmp, k3);
            for (std::size_t i = 0; i < d; ++i) tmp[i] = y[i] + h * k3[i];
            rhs(tmp, k4);
            for (std::size_t i = 0; i < d; ++i) y[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            const std::size_t node = seg * per_segment + s + 1;
            detail::check_state(y, grid.time(node), "solve_approx_ode");
            std::copy(y.begin(), y.end(), traj.states.begin() + static_cast<std::ptrdiff_t>(node * d));
        }
    }
    return traj;
}

/// Euler-Maruyama for dX = sigma(X) dw + [b(X) + correction_field(X)] dt with step
/// `scheme_step`, using the increments of `path` (common-noise coupling).
inline Trajectory solve_ito_corrected(const CoefficientSystem& sys, const WienerPath& path,
                                      std::span<const double> x0, double scheme_step) {
    detail::require_pointwise(sys, "solve_ito_corrected");
    const std::size_t d = sys.state_dim();
    const std::size_t r = sys.noise_dim();
    detail::check_initial(x0, d, "solve_ito_corrected");
    if (path.dims() != r) throw ValidationError("solve_ito_corrected: path dimension differs from noise dimension");
    const std::size_t stride = path.grid().steps_in(scheme_step);
    const TimeGrid grid = path.grid().coarsen(stride);

    Trajectory traj{grid, d, std::vector<double>(grid.n_nodes() * d), Scheme::ito_corrected, path.seed()};
    std::copy(x0.begin(), x0.end(), traj.states.begin());

    const double dt = grid.step();
    CoefficientScratch scratch(sys);
    std::vector<double> y(x0.begin(), x0.end()), sig(d * r), bx(d), corr(d), dw(r);
    for (std::size_t k = 0; k < grid.n_steps(); ++k) {
        for (std::size_t n = 0; n < r; ++n) dw[n] = path.value(n, (k + 1) * stride) - path.value(n, k * stride);
        sys.sigma(y, sig);
        sys.drift(y, bx);
        correction_field(sys, y, corr, scratch);
        for (std::size_t i = 0; i < d; ++i) {
            double noise = 0.0;
            for (std::size_t n = 0; n < r; ++n) noise += sig[i * r + n] * dw[n];
            y[i] += noise + (bx[i] + corr[i]) * dt;
        }
        detail::check_state(y, grid.time(k + 1), "solve_ito_corrected");
        std::copy(y.begin(), y.end(), traj.states.begin() + static_cast<std::ptrdiff_t>((k + 1) * d));
    }
    return traj;
}

/// Every `stride`-th node of a trajectory.
inline Trajectory subsample(const Trajectory& traj, std::size_t stride) {
    const TimeGrid coarse = traj.grid.coarsen(stride);
    Trajectory out{coarse, traj.dim, std::vector<double>(coarse.n_nodes() * traj.dim), traj.scheme, traj.seed};
    for (std::size_t k = 0; k < coarse.n_nodes(); ++k) {
        const auto src = traj.at(k * stride);
        std::copy(src.begin(), src.end(), out.states.begin() + static_cast<std::ptrdiff_t>(k * traj.dim));
    }
    return out;
}

/// max_k |a(t_k) - b(t_k)|^p with the Euclidean norm.
inline double sup_error(const Trajectory& a, const Trajectory& b, double p) {
    if (!(a.grid == b.grid) || a.dim != b.dim) throw ValidationError("sup_error: trajectories are on different grids");
    if (!(p > 0.0)) throw ValidationError("sup_error: exponent must be positive");
    double worst = 0.0;
    for (std::size_t k = 0; k < a.grid.n_nodes(); ++k) {
        const auto x = a.at(k);
        const auto y = b.at(k);
        double sq = 0.0;
        for (std::size_t i = 0; i < a.dim; ++i) sq += (x[i] - y[i]) * (x[i] - y[i]);
        worst = std::max(worst, sq);
    }
    return detail::norm_sq_power(worst, p);
}

/// CSV with columns t, x_1..x_d.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    os << "t";
    for (std::size_t i = 0; i < traj.dim; ++i) os << ",x_" << (i + 1);
    os << '\n';
    for (std::size_t k = 0; k < traj.grid.n_nodes(); ++k) {
        fmt::print(os, "{}", traj.grid.time(k));
        for (double v : traj.at(k)) fmt::print(os, ",{}", v);
        os << '\n';
    }
}

}  // namespace wz
