#pragma once

#include <wzapprox/errors.hpp>
#include <wzapprox/rng.hpp>

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace wz {

namespace detail {

// Relative slack used when snapping a real time onto an integer number of steps.
inline constexpr double kAlignTolerance = 1e-9;

/// Returns k with k * unit == value (up to kAlignTolerance), or throws.
inline std::size_t exact_multiple(double value, double unit, const char* what) {
    if (!(unit > 0.0) || !std::isfinite(unit)) throw ValidationError(std::string(what) + ": unit must be positive");
    if (!(value >= 0.0) || !std::isfinite(value)) throw ValidationError(std::string(what) + ": value must be finite and >= 0");
    const double q = value / unit;
    const double k = std::round(q);
    if (std::abs(q - k) > kAlignTolerance * std::max(1.0, k)) {
        throw ValidationError(std::string(what) + ": " + std::to_string(value) + " is not an integer multiple of " +
                              std::to_string(unit));
    }
    return static_cast<std::size_t>(k);
}

}  // namespace detail

/// Uniform grid t_k = k * step, k = 0..n_steps.
class TimeGrid {
public:
    TimeGrid(double step, std::size_t n_steps) : step_(step), n_steps_(n_steps) {
        if (!(step > 0.0) || !std::isfinite(step)) throw ValidationError("TimeGrid: step must be positive and finite");
    }

    /// Grid covering [0, horizon]; horizon must be a whole number of steps.
    static TimeGrid from_horizon(double horizon, double step) {
        if (!(horizon > 0.0)) throw ValidationError("TimeGrid: horizon must be positive");
        return TimeGrid(step, detail::exact_multiple(horizon, step, "TimeGrid horizon"));
    }

    double step() const noexcept { return step_; }
    std::size_t n_steps() const noexcept { return n_steps_; }
    std::size_t n_nodes() const noexcept { return n_steps_ + 1; }
    double horizon() const noexcept { return step_ * static_cast<double>(n_steps_); }
    double time(std::size_t k) const noexcept { return step_ * static_cast<double>(k); }

    /// Node index of t; throws if t is off-grid or beyond the horizon.
    std::size_t index_of(double t) const {
        const std::size_t k = detail::exact_multiple(t, step_, "grid time");
        if (k > n_steps_) throw ValidationError("grid time " + std::to_string(t) + " exceeds horizon");
        return k;
    }

    /// Number of grid steps in `span_length`, which must be a positive multiple of step.
    std::size_t steps_in(double span_length) const {
        const std::size_t k = detail::exact_multiple(span_length, step_, "step size");
        if (k == 0) throw ValidationError("step size must be a positive multiple of the grid step");
        return k;
    }

    /// The grid with `stride` times the step over the same horizon.
    TimeGrid coarsen(std::size_t stride) const {
        if (stride == 0 || n_steps_ % stride != 0) {
            throw ValidationError("coarsening stride must divide the number of grid steps");
        }
        return TimeGrid(step_ * static_cast<double>(stride), n_steps_ / stride);
    }

    friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

private:
    double step_;
    std::size_t n_steps_;
};

/// Path values are stored in fixed point: every node value is an integer multiple
/// of kPathQuantum. Differences and sums of node values (increments, shifts,
/// telescoping sums, midpoints) are then exact in double precision as long as
/// magnitudes stay below kPathRange.
inline constexpr double kPathQuantum = 0x1p-32;
inline constexpr double kPathRange = 0x1p+16;

inline double quantize_path_value(double x) noexcept { return std::nearbyint(x / kPathQuantum) * kPathQuantum; }

/// Sampled r-dimensional Wiener path on the nodes of a TimeGrid.
///
/// Immutable after construction. values are component-major:
/// value(n, k) = values[n * n_nodes + k].
class WienerPath {
public:
    WienerPath(TimeGrid grid, std::size_t dims, std::uint64_t seed, std::vector<double> values)
        : grid_(grid), dims_(dims), seed_(seed), values_(std::move(values)) {
        if (dims_ == 0) throw ValidationError("WienerPath: dimension must be >= 1");
        if (values_.size() != dims_ * grid_.n_nodes()) throw ValidationError("WienerPath: value array has wrong size");
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t dims() const noexcept { return dims_; }
    std::uint64_t seed() const noexcept { return seed_; }

    double value(std::size_t n, std::size_t k) const noexcept { return values_[n * grid_.n_nodes() + k]; }
    std::span<const double> component(std::size_t n) const noexcept {
        return std::span<const double>(values_).subspan(n * grid_.n_nodes(), grid_.n_nodes());
    }
    std::span<const double> raw() const noexcept { return values_; }

    /// w(t_{k+1}) - w(t_k) for component n.
    double increment(std::size_t n, std::size_t k) const noexcept { return value(n, k + 1) - value(n, k); }

    /// Value at a grid time; off-grid times are rejected.
    double at_time(std::size_t n, double t) const { return value(n, grid_.index_of(t)); }

    friend bool operator==(const WienerPath&, const WienerPath&) = default;

private:
    TimeGrid grid_;
    std::size_t dims_;
    std::uint64_t seed_;
    std::vector<double> values_;
};

/// Samples an r-dimensional Wiener path with independent N(0, h) increments.
///
/// Components are drawn one after another from a single stream seeded by `seed`.
inline WienerPath sample_wiener(const TimeGrid& grid, std::size_t r, std::uint64_t seed) {
    if (r == 0) throw ValidationError("sample_wiener: r must be >= 1");
    if (grid.n_steps() == 0) throw ValidationError("sample_wiener: degenerate grid with zero steps");
    const std::size_t nodes = grid.n_nodes();
    const double scale = std::sqrt(grid.step());
    std::vector<double> values(r * nodes);
    NormalStream normal(seed);
    for (std::size_t n = 0; n < r; ++n) {
        double* row = values.data() + n * nodes;
        row[0] = 0.0;
        for (std::size_t k = 1; k < nodes; ++k) {
            const double next = quantize_path_value(row[k - 1] + scale * normal());
            if (!(std::abs(next) < kPathRange)) {
                throw NumericalAbort("sample_wiener: path left the fixed-point range");
            }
            row[k] = next;
        }
    }
    return WienerPath(grid, r, seed, std::move(values));
}

/// Shift operator: (theta_t w)(s) = w(t + s) - w(t), on the grid of horizon T - t.
///
/// t must be a grid node. Shifting by T yields a single-node path at 0.
inline WienerPath shift(const WienerPath& path, double t) {
    const TimeGrid& g = path.grid();
    const std::size_t k0 = g.index_of(t);
    const std::size_t remaining = g.n_steps() - k0;
    const TimeGrid out_grid(g.step(), remaining);
    std::vector<double> values(path.dims() * out_grid.n_nodes());
    for (std::size_t n = 0; n < path.dims(); ++n) {
        const double origin = path.value(n, k0);
        for (std::size_t s = 0; s <= remaining; ++s) {
            values[n * out_grid.n_nodes() + s] = path.value(n, k0 + s) - origin;
        }
    }
    return WienerPath(out_grid, path.dims(), path.seed(), std::move(values));
}

// Binary dump: little-endian u64 r, u64 n_steps, f64 h, u64 seed, then r * (n_steps + 1) f64 values.

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    os.write(bytes, 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw ValidationError("path dump: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline void write_path(const WienerPath& path, const std::filesystem::path& file) {
    std::ofstream os(file, std::ios::binary | std::ios::trunc);
    if (!os) throw ValidationError("cannot open path dump for writing: " + file.string());
    detail::put_u64(os, path.dims());
    detail::put_u64(os, path.grid().n_steps());
    detail::put_u64(os, std::bit_cast<std::uint64_t>(path.grid().step()));
    detail::put_u64(os, path.seed());
    for (double v : path.raw()) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
    if (!os) throw ValidationError("failed writing path dump: " + file.string());
}

inline WienerPath read_path(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw ValidationError("cannot open path dump: " + file.string());
    const auto r = detail::get_u64(is);
    const auto n_steps = detail::get_u64(is);
    const double h = std::bit_cast<double>(detail::get_u64(is));
    const auto seed = detail::get_u64(is);
    if (r == 0 || r > 4096 || n_steps > (std::uint64_t{1} << 32)) throw ValidationError("path dump: implausible header");
    std::vector<double> values(r * (n_steps + 1));
    for (auto& v : values) v = std::bit_cast<double>(detail::get_u64(is));
    return WienerPath(TimeGrid(h, n_steps), r, seed, std::move(values));
}

}  // namespace wz
