#pragma once

#include <wzapprox/errors.hpp>
#include <wzapprox/parallel.hpp>
#include <wzapprox/paths.hpp>
#include <wzapprox/rng.hpp>
#include <wzapprox/summation.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace wz {

/// Piecewise-linear path with knots at multiples of `knot_step`.
///
/// knots are component-major, K + 1 values per component. The derivative is
/// constant on each open segment; at an interior knot deriv() returns the
/// right-hand value and at the final knot the left-hand one.
class PolygonalPath {
public:
    PolygonalPath(std::size_t dims, double knot_step, std::size_t segments, std::vector<double> knots,
                  std::uint64_t source_seed = 0)
        : dims_(dims), knot_step_(knot_step), segments_(segments), knots_(std::move(knots)), seed_(source_seed) {
        if (dims_ == 0 || segments_ == 0) throw ValidationError("PolygonalPath: needs >= 1 component and segment");
        if (!(knot_step_ > 0.0)) throw ValidationError("PolygonalPath: knot step must be positive");
        if (knots_.size() != dims_ * (segments_ + 1)) throw ValidationError("PolygonalPath: knot array has wrong size");
    }

    std::size_t dims() const noexcept { return dims_; }
    double knot_step() const noexcept { return knot_step_; }
    std::size_t segments() const noexcept { return segments_; }
    double horizon() const noexcept { return knot_step_ * static_cast<double>(segments_); }
    std::uint64_t source_seed() const noexcept { return seed_; }

    double knot(std::size_t n, std::size_t k) const noexcept { return knots_[n * (segments_ + 1) + k]; }
    /// B(t_{k+1}) - B(t_k).
    double increment(std::size_t n, std::size_t k) const noexcept { return knot(n, k + 1) - knot(n, k); }
    /// Derivative on the open segment (t_k, t_{k+1}).
    double slope(std::size_t n, std::size_t k) const noexcept { return increment(n, k) / knot_step_; }

    /// Segment containing t, with knots snapped exactly. The last knot belongs to the last segment.
    std::size_t segment_of(double t) const {
        check_time(t);
        const double q = t / knot_step_;
        double k = std::floor(q);
        const double r = std::round(q);
        if (std::abs(q - r) <= detail::kAlignTolerance * std::max(1.0, r)) k = r;
        return std::min(static_cast<std::size_t>(k), segments_ - 1);
    }

    double eval(std::size_t n, double t) const {
        const std::size_t k = segment_of(t);
        const double frac = (t - knot_step_ * static_cast<double>(k)) / knot_step_;
        if (frac == 0.0) return knot(n, k);
        if (frac == 1.0) return knot(n, k + 1);
        return knot(n, k) + frac * increment(n, k);
    }

    double deriv(std::size_t n, double t) const { return slope(n, segment_of(t)); }

    /// Exact integral of |dB^n/ds| over [a, b].
    double abs_variation(std::size_t n, double a, double b) const {
        check_time(a);
        check_time(b);
        if (b <= a) return 0.0;
        CompensatedSum total;
        const std::size_t ka = segment_of(a);
        const std::size_t kb = segment_of(b);
        for (std::size_t k = ka; k <= kb; ++k) {
            const double lo = std::max(a, knot_step_ * static_cast<double>(k));
            const double hi = std::min(b, knot_step_ * static_cast<double>(k + 1));
            if (hi > lo) total += std::abs(slope(n, k)) * (hi - lo);
        }
        return total.value();
    }

private:
    void check_time(double t) const {
        if (!(t >= 0.0) || t > horizon() * (1.0 + detail::kAlignTolerance)) {
            throw ValidationError("PolygonalPath: time " + std::to_string(t) + " outside [0, " +
                                  std::to_string(horizon()) + "]");
        }
    }

    std::size_t dims_;
    double knot_step_;
    std::size_t segments_;
    std::vector<double> knots_;
    std::uint64_t seed_;
};

/// Wong-Zakai polygonal interpolation of a Wiener path with knot spacing delta.
///
/// delta must be a multiple of the path's grid step and divide its horizon.
inline PolygonalPath wong_zakai(const WienerPath& path, double delta) {
    const TimeGrid& g = path.grid();
    if (!(delta > 0.0) || delta > g.horizon() * (1.0 + detail::kAlignTolerance)) {
        throw ValidationError("wong_zakai: delta must lie in (0, T]");
    }
    const std::size_t stride = g.steps_in(delta);
    if (g.n_steps() % stride != 0) throw ValidationError("wong_zakai: delta must divide the horizon");
    const std::size_t segments = g.n_steps() / stride;
    std::vector<double> knots(path.dims() * (segments + 1));
    for (std::size_t n = 0; n < path.dims(); ++n) {
        for (std::size_t k = 0; k <= segments; ++k) knots[n * (segments + 1) + k] = path.value(n, k * stride);
    }
    return PolygonalPath(path.dims(), g.step() * static_cast<double>(stride), segments, std::move(knots), path.seed());
}

/// Builds an approximation of the Wiener path at knot spacing delta.
/// Diagnostics are written against this so other piecewise-linear families can be plugged in.
using ApproximantFamily = std::function<PolygonalPath(const WienerPath&, double)>;

inline ApproximantFamily wong_zakai_family() {
    return [](const WienerPath& p, double delta) { return wong_zakai(p, delta); };
}

/// One line of a diagnostic table; serialized as {delta, statistic, estimate, std_err, n_paths}.
struct DiagnosticRow {
    double delta = 0.0;
    std::string statistic;
    double estimate = 0.0;
    double std_err = 0.0;
    std::size_t n_paths = 0;
};

using DiagnosticTable = std::vector<DiagnosticRow>;

/// Shared Monte Carlo knobs for the approximant diagnostics.
struct SamplingOptions {
    std::uint64_t seed = 0;
    std::size_t dims = 1;
    /// Fine-grid steps per knot interval used when sampling the underlying path.
    std::size_t substeps = 64;
    unsigned threads = 1;
};

namespace detail {

inline void require_paths(std::size_t m, std::size_t minimum, const char* op) {
    if (m < minimum) throw ValidationError(std::string(op) + ": need at least " + std::to_string(minimum) + " paths");
}

inline double pow6(double x) noexcept {
    const double x2 = x * x;
    return x2 * x2 * x2;
}

}  // namespace detail

/// Empirical moment checks on [0, delta]: E[B(0)], E|B(0)|^6 / delta^3 and
/// E[(int_0^delta |B'|)^6] / delta^3, pooled over components.
///
/// Each (delta, path) pair gets its own stream; paths cover [0, delta] only.
inline DiagnosticTable check_moment_axioms(const ApproximantFamily& family, std::span<const double> deltas,
                                           std::size_t m, const SamplingOptions& opt) {
    detail::require_paths(m, 1000, "check_moment_axioms");
    if (opt.dims == 0 || opt.substeps == 0) throw ValidationError("check_moment_axioms: invalid sampling options");
    DiagnosticTable table;
    for (std::size_t di = 0; di < deltas.size(); ++di) {
        const double delta = deltas[di];
        const TimeGrid grid(delta / static_cast<double>(opt.substeps), opt.substeps);
        const std::size_t samples = m * opt.dims;
        std::vector<double> b0(samples), b0_6(samples), var6(samples);
        const std::uint64_t level_seed = stream_seed(opt.seed, di);
        parallel_for(m, opt.threads, [&](std::size_t j) {
            const WienerPath path = sample_wiener(grid, opt.dims, stream_seed(level_seed, j));
            const PolygonalPath approx = family(path, delta);
            for (std::size_t n = 0; n < opt.dims; ++n) {
                const std::size_t slot = j * opt.dims + n;
                const double start = approx.eval(n, 0.0);
                b0[slot] = start;
                b0_6[slot] = detail::pow6(start) / (delta * delta * delta);
                var6[slot] = detail::pow6(approx.abs_variation(n, 0.0, delta)) / (delta * delta * delta);
            }
        });
        const auto push = [&](const char* name, const std::vector<double>& xs) {
            const SampleStats s = summarize(xs);
            table.push_back({delta, name, s.mean, s.std_err, m});
        };
        push("mean_B0", b0);
        push("abs_B0_pow6_over_delta3", b0_6);
        push("abs_variation_pow6_over_delta3", var6);
    }
    return table;
}

/// E[max over grid nodes |w - B_delta|^2] on [0, horizon] for each delta, with
/// all delta levels sharing one path per replica.
inline DiagnosticTable check_sup_convergence(const ApproximantFamily& family, std::span<const double> deltas,
                                             std::size_t m, double horizon, double step,
                                             const SamplingOptions& opt) {
    detail::require_paths(m, 1000, "check_sup_convergence");
    const TimeGrid grid = TimeGrid::from_horizon(horizon, step);
    for (double d : deltas) (void)grid.steps_in(d);
    std::vector<double> errors(deltas.size() * m);
    parallel_for(m, opt.threads, [&](std::size_t j) {
        const WienerPath path = sample_wiener(grid, opt.dims, stream_seed(opt.seed, j));
        for (std::size_t di = 0; di < deltas.size(); ++di) {
            const PolygonalPath approx = family(path, deltas[di]);
            double worst = 0.0;
            for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
                const double t = grid.time(k);
                double sq = 0.0;
                for (std::size_t n = 0; n < opt.dims; ++n) {
                    const double e = path.value(n, k) - approx.eval(n, t);
                    sq += e * e;
                }
                worst = std::max(worst, sq);
            }
            errors[di * m + j] = worst;
        }
    });
    DiagnosticTable table;
    for (std::size_t di = 0; di < deltas.size(); ++di) {
        const SampleStats s = summarize(std::span<const double>(errors).subspan(di * m, m));
        table.push_back({deltas[di], "sup_sq_error", s.mean, s.std_err, m});
    }
    return table;
}

/// Pathwise integral int_0^t B'^j(s) [B^n(t) - B^n(s)] ds, exact per segment.
///
/// On a segment [a, b] with slopes v^j, v^n the integrand is linear in s, so the
/// piece equals v^j [(b - a)(B^n(t) - B^n(a)) - v^n (b - a)^2 / 2].
inline double cjn_integrand(const PolygonalPath& approx, std::size_t j, std::size_t n, double t) {
    if (j >= approx.dims() || n >= approx.dims()) throw ValidationError("cjn_integrand: component out of range");
    const double end_value = approx.eval(n, t);
    const double delta = approx.knot_step();
    CompensatedSum total;
    const std::size_t last = approx.segment_of(t);
    for (std::size_t k = 0; k <= last; ++k) {
        const double a = delta * static_cast<double>(k);
        const double b = std::min(t, delta * static_cast<double>(k + 1));
        if (!(b > a)) continue;
        const double len = b - a;
        total += approx.slope(j, k) * (len * (end_value - approx.knot(n, k)) - approx.slope(n, k) * len * len * 0.5);
    }
    return total.value();
}

/// Monte Carlo estimate of c_jn(t, delta) with standard errors.
struct CorrectionEstimate {
    std::size_t dims = 0;
    std::vector<double> matrix;   // r x r, row j, column n
    std::vector<double> std_err;  // r x r
    double at_time = 0.0;
    double at_delta = 0.0;
    std::size_t n_paths = 0;

    double operator()(std::size_t j, std::size_t n) const { return matrix[j * dims + n]; }
    double error(std::size_t j, std::size_t n) const { return std_err[j * dims + n]; }
};

/// Estimates c_jn(t, delta) = (1/t) E[int_0^t B'^j (B^n(t) - B^n(s)) ds].
inline CorrectionEstimate estimate_cjn(const ApproximantFamily& family, double t, double delta, std::size_t m,
                                       const SamplingOptions& opt) {
    if (m < 2) throw ValidationError("estimate_cjn: need at least 2 paths");
    if (opt.dims == 0 || opt.substeps == 0) throw ValidationError("estimate_cjn: invalid sampling options");
    if (!(delta > 0.0)) throw ValidationError("estimate_cjn: delta must be positive");
    if (t < delta * (1.0 - detail::kAlignTolerance)) {
        throw ValidationError("estimate_cjn: t must be at least one knot interval");
    }
    const double h = delta / static_cast<double>(opt.substeps);
    // t only needs to sit on the fine grid; the path runs to the next knot so a
    // trailing partial segment is integrated exactly.
    const std::size_t fine_steps = detail::exact_multiple(t, h, "estimate_cjn time");
    const std::size_t segments = (fine_steps + opt.substeps - 1) / opt.substeps;
    const TimeGrid grid(h, segments * opt.substeps);
    const std::size_t r = opt.dims;
    std::vector<double> samples(r * r * m);
    parallel_for(m, opt.threads, [&](std::size_t p) {
        const WienerPath path = sample_wiener(grid, r, stream_seed(opt.seed, p));
        const PolygonalPath approx = family(path, delta);
        for (std::size_t j = 0; j < r; ++j) {
            for (std::size_t n = 0; n < r; ++n) samples[(j * r + n) * m + p] = cjn_integrand(approx, j, n, t) / t;
        }
    });
    CorrectionEstimate est;
    est.dims = r;
    est.matrix.resize(r * r);
    est.std_err.resize(r * r);
    est.at_time = t;
    est.at_delta = delta;
    est.n_paths = m;
    for (std::size_t e = 0; e < r * r; ++e) {
        const SampleStats s = summarize(std::span<const double>(samples).subspan(e * m, m));
        est.matrix[e] = s.mean;
        est.std_err[e] = s.std_err;
    }
    return est;
}

/// k(delta) = ceil(delta^-exponent), robust to rounding when delta^-exponent is an integer.
inline std::size_t ceil_power_schedule(double delta, double exponent) {
    if (!(delta > 0.0) || delta > 1.0) throw ValidationError("schedule: delta must lie in (0, 1]");
    const double x = std::pow(delta, -exponent);
    const double r = std::round(x);
    if (std::abs(x - r) <= 1e-12 * std::max(1.0, r)) return std::max<std::size_t>(1, static_cast<std::size_t>(r));
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(x)));
}

}  // namespace wz
