#pragma once

#include <wzapprox/approximant.hpp>
#include <wzapprox/errors.hpp>
#include <wzapprox/finite_solver.hpp>
#include <wzapprox/galerkin.hpp>
#include <wzapprox/parallel.hpp>
#include <wzapprox/paths.hpp>
#include <wzapprox/rng.hpp>
#include <wzapprox/summation.hpp>
#include <wzapprox/systems.hpp>
#include <wzapprox/weak_spde.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

namespace wz {

enum class Mode { finite, weak };

inline const char* mode_name(Mode m) noexcept { return m == Mode::finite ? "finite" : "weak"; }

struct ExperimentConfig {
    Mode mode = Mode::finite;
    std::string system = "gbm";
    SystemParams params;
    double horizon = 1.0;
    /// Path resolution; 0 means delta_ref.
    double path_step = 0.0;
    /// Descending and halving.
    std::vector<double> deltas{0x1p-4, 0x1p-5, 0x1p-6, 0x1p-7, 0x1p-8, 0x1p-9};
    double n_exponent = 0.2;
    std::size_t replicas = 1000;
    std::uint64_t seed = 0;
    /// Galerkin basis size (weak mode).
    std::size_t basis_size = 8;
    double domain_length = 1.0;
    double error_exponent = 2.0;
    /// delta_ref = min(deltas) / ref_divisor; both solvers step at delta_ref.
    std::size_t ref_divisor = 16;
    /// Initial state: finite mode x0^i = x0[i]; weak mode
    /// X^i(x) = x0[i] + x0_amplitude cos((i + 1) pi x / L). A single value is broadcast.
    std::vector<double> x0{1.0};
    double x0_amplitude = 0.0;
    WeakOptions weak;
    unsigned threads = 1;
    /// Directory for binary path files; empty disables the cache.
    std::filesystem::path path_cache;

    double delta_min() const { return *std::min_element(deltas.begin(), deltas.end()); }
    double delta_ref() const { return delta_min() / static_cast<double>(ref_divisor); }
    double resolved_path_step() const { return path_step > 0.0 ? path_step : delta_ref(); }
};

struct ConvergenceRow {
    double delta = 0.0;
    std::size_t n_delta = 0;
    double error_mean = 0.0;
    double error_stderr = 0.0;
    std::size_t replicas = 0;
};

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t n_rows = 0;
};

struct ConvergenceReport {
    std::vector<ConvergenceRow> rows;
    std::optional<SlopeFit> slope;
    double delta_ref = 0.0;
    double runtime_seconds = 0.0;
    /// Per-replica errors, samples[level * M + replica].
    std::vector<double> samples;

    std::span<const double> level_samples(std::size_t level) const {
        const std::size_t m = rows.at(level).replicas;
        return std::span<const double>(samples).subspan(level * m, m);
    }
};

/// Statistics of the paired difference error[level + 1] - error[level] over replicas.
inline SampleStats paired_difference(const ConvergenceReport& rep, std::size_t level) {
    const auto a = rep.level_samples(level);
    const auto b = rep.level_samples(level + 1);
    std::vector<double> diff(a.size());
    for (std::size_t j = 0; j < a.size(); ++j) diff[j] = b[j] - a[j];
    return summarize(diff);
}

/// OLS fit of log(error) on log(delta), with a 95% Student-t interval for the slope.
/// Rows with non-positive error are unusable.
inline SlopeFit fit_slope(std::span<const ConvergenceRow> rows, double confidence = 0.95) {
    std::vector<double> x, y;
    for (const auto& r : rows) {
        if (r.error_mean > 0.0 && r.delta > 0.0 && std::isfinite(r.error_mean)) {
            x.push_back(std::log(r.delta));
            y.push_back(std::log(r.error_mean));
        }
    }
    const std::size_t n = x.size();
    if (n < 3) throw ValidationError("fit_slope: need at least 3 rows with positive error");
    const double mx = compensated_sum(x) / static_cast<double>(n);
    const double my = compensated_sum(y) / static_cast<double>(n);
    CompensatedSum sxx, sxy;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx.value() > 0.0)) throw ValidationError("fit_slope: deltas must not all coincide");
    SlopeFit fit;
    fit.n_rows = n;
    fit.slope = sxy.value() / sxx.value();
    fit.intercept = my - fit.slope * mx;
    CompensatedSum rss;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = y[i] - (fit.intercept + fit.slope * x[i]);
        rss += e * e;
    }
    const double dof = static_cast<double>(n - 2);
    const double se = std::sqrt(rss.value() / dof / sxx.value());
    const boost::math::students_t dist(dof);
    const double q = boost::math::quantile(boost::math::complement(dist, 0.5 * (1.0 - confidence)));
    fit.ci_low = fit.slope - q * se;
    fit.ci_high = fit.slope + q * se;
    return fit;
}

namespace detail {

inline void validate_config(const ExperimentConfig& cfg) {
    if (cfg.deltas.empty()) throw ValidationError("config: empty delta list");
    for (std::size_t i = 0; i < cfg.deltas.size(); ++i) {
        if (!(cfg.deltas[i] > 0.0)) throw ValidationError("config: deltas must be positive");
        if (i > 0 && !(cfg.deltas[i] < cfg.deltas[i - 1])) throw ValidationError("config: deltas must be descending");
    }
    if (cfg.replicas < 2) throw ValidationError("config: need at least 2 replicas");
    if (!(cfg.horizon > 0.0)) throw ValidationError("config: horizon must be positive");
    if (cfg.ref_divisor == 0) throw ValidationError("config: ref_divisor must be >= 1");
    if (cfg.error_exponent != 2.0 && cfg.error_exponent != 4.0) throw ValidationError("config: p must be 2 or 4");
    if (cfg.x0.empty()) throw ValidationError("config: empty initial state");
    if (cfg.mode == Mode::weak && cfg.basis_size == 0) throw ValidationError("config: basis size must be >= 1");
    validate_schedule(cfg.deltas, cfg.n_exponent);
    const double h = cfg.resolved_path_step();
    const TimeGrid grid = TimeGrid::from_horizon(cfg.horizon, h);
    (void)grid.steps_in(cfg.delta_ref());
    for (double d : cfg.deltas) {
        (void)grid.steps_in(d);
        (void)detail::exact_multiple(cfg.horizon, d, "config horizon / delta");
    }
}

inline std::vector<double> broadcast(const std::vector<double>& v, std::size_t d, const char* what) {
    if (v.size() == d) return v;
    if (v.size() == 1) return std::vector<double>(d, v[0]);
    throw ValidationError(std::string("config: ") + what + " needs 1 or " + std::to_string(d) + " values");
}

inline FieldState initial_field(const ExperimentConfig& cfg, const SpacePtr& space, std::size_t d) {
    const auto base = broadcast(cfg.x0, d, "x0");
    const double amp = cfg.x0_amplitude;
    const double len = cfg.domain_length;
    return project(space, d, [&](double x, std::span<double> out) {
        for (std::size_t i = 0; i < d; ++i) {
            out[i] = base[i] + amp * std::cos(static_cast<double>(i + 1) * std::numbers::pi * x / len);
        }
    });
}

/// Replica path, through the binary cache when one is configured.
inline WienerPath replica_path(const ExperimentConfig& cfg, const TimeGrid& grid, std::size_t r, std::size_t replica) {
    const std::uint64_t seed = stream_seed(cfg.seed, replica);
    if (cfg.path_cache.empty()) return sample_wiener(grid, r, seed);
    const auto file = cfg.path_cache / fmt::format("path_{:016x}.bin", seed);
    if (std::filesystem::exists(file)) {
        WienerPath cached = read_path(file);
        if (cached.seed() == seed && cached.dims() == r && cached.grid() == grid) return cached;
    }
    WienerPath path = sample_wiener(grid, r, seed);
    const auto tmp = file.string() + fmt::format(".tmp{}", replica);
    write_path(path, tmp);
    std::filesystem::rename(tmp, file);
    return path;
}

/// Re-throws a numerical abort with replica and delta provenance.
template <class Fn>
auto with_provenance(std::size_t replica, double delta, Fn&& fn) {
    try {
        return fn();
    } catch (const BlowUp& e) {
        throw BlowUp(fmt::format("replica {}, delta {}: {}", replica, delta, e.what()), e.time());
    } catch (const BoundViolation& e) {
        throw BoundViolation(fmt::format("replica {}, delta {}: {}", replica, delta, e.what()), e.time());
    }
}

}  // namespace detail

/// Monte Carlo estimate of E[sup over delta_ref nodes of |X - X_delta|^p] for each
/// delta. Each replica samples one path; every delta level and the Ito-corrected
/// reference are driven by it.
inline ConvergenceReport run_convergence(const ExperimentConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    detail::validate_config(cfg);
    const CoefficientSystem sys = make_named_system(cfg.system, cfg.params);
    const std::size_t d = sys.state_dim();
    const std::size_t r = sys.noise_dim();
    const TimeGrid path_grid = TimeGrid::from_horizon(cfg.horizon, cfg.resolved_path_step());
    const double dref = cfg.delta_ref();
    const TimeGrid ref_grid = path_grid.coarsen(path_grid.steps_in(dref));
    const std::size_t levels = cfg.deltas.size();
    const std::size_t m = cfg.replicas;
    const double p = cfg.error_exponent;

    SpacePtr space;
    FieldState x0_field;
    std::vector<double> x0;
    if (cfg.mode == Mode::weak) {
        space = GalerkinSpace::create(cfg.basis_size, cfg.domain_length);
        x0_field = detail::initial_field(cfg, space, d);
    } else {
        if (cfg.x0_amplitude != 0.0) throw ValidationError("config: x0_amplitude applies to weak mode only");
        x0 = detail::broadcast(cfg.x0, d, "x0");
    }

    std::vector<double> errors(levels * m);
    parallel_for(m, cfg.threads, [&](std::size_t j) {
        const WienerPath path = detail::replica_path(cfg, path_grid, r, j);
        if (cfg.mode == Mode::finite) {
            const Trajectory ref = detail::with_provenance(j, dref, [&] { return solve_ito_corrected(sys, path, x0, dref); });
            for (std::size_t l = 0; l < levels; ++l) {
                detail::with_provenance(j, cfg.deltas[l], [&] {
                    const Trajectory approx = solve_approx_ode(sys, wong_zakai(path, cfg.deltas[l]), x0, ref_grid);
                    errors[l * m + j] = sup_error(approx, ref, p);
                });
            }
        } else {
            const FieldTrajectory ref =
                detail::with_provenance(j, dref, [&] { return solve_weak_ito(sys, path, x0_field, dref, cfg.weak); });
            for (std::size_t l = 0; l < levels; ++l) {
                detail::with_provenance(j, cfg.deltas[l], [&] {
                    const FieldTrajectory approx =
                        solve_weak_approx(sys, wong_zakai(path, cfg.deltas[l]), x0_field, ref_grid, cfg.weak);
                    errors[l * m + j] = field_sup_error(approx, ref, ref_grid, p);
                });
            }
        }
    });

    ConvergenceReport rep;
    rep.delta_ref = dref;
    rep.samples = std::move(errors);
    for (std::size_t l = 0; l < levels; ++l) {
        const SampleStats s = summarize(std::span<const double>(rep.samples).subspan(l * m, m));
        rep.rows.push_back({cfg.deltas[l], window_multiplier(cfg.deltas[l], cfg.n_exponent), s.mean, s.std_err, m});
    }
    const auto usable = std::count_if(rep.rows.begin(), rep.rows.end(), [](const auto& row) { return row.error_mean > 0.0; });
    if (usable >= 3) rep.slope = fit_slope(rep.rows);
    rep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

/// Coupled weak-mode replica at one delta: path, drive and both field trajectories.
struct CoupledReplica {
    WienerPath path;
    PolygonalPath drive;
    FieldTrajectory approx;
    FieldTrajectory ito;
};

inline CoupledReplica solve_coupled(const CoefficientSystem& sys, const ExperimentConfig& cfg, const SpacePtr& space,
                                    std::size_t replica, double delta) {
    const TimeGrid path_grid = TimeGrid::from_horizon(cfg.horizon, cfg.resolved_path_step());
    const double dref = cfg.delta_ref();
    WienerPath path = detail::replica_path(cfg, path_grid, sys.noise_dim(), replica);
    PolygonalPath drive = wong_zakai(path, delta);
    const FieldState x0 = detail::initial_field(cfg, space, sys.state_dim());
    FieldTrajectory approx = detail::with_provenance(replica, delta, [&] {
        return solve_weak_approx(sys, drive, x0, path_grid.coarsen(path_grid.steps_in(dref)), cfg.weak);
    });
    FieldTrajectory ito =
        detail::with_provenance(replica, delta, [&] { return solve_weak_ito(sys, path, x0, dref, cfg.weak); });
    return {std::move(path), std::move(drive), std::move(approx), std::move(ito)};
}

/// One decomposition evaluation.
struct DecompositionRow {
    std::size_t replica = 0;
    DecompositionTerms terms;
    /// residual / (|lhs| + 1)
    double relative = 0.0;
};

/// Knot times floor(i K / count) delta for i = 1..count, K = T / delta.
inline std::vector<double> decomposition_times(double horizon, double delta, std::size_t count) {
    const std::size_t knots = detail::exact_multiple(horizon, delta, "decomposition horizon");
    std::vector<double> ts;
    for (std::size_t i = 1; i <= count; ++i) ts.push_back(delta * static_cast<double>(i * knots / count));
    return ts;
}

/// Evaluates the H-term identity at `times_per_replica` knot times for every replica
/// at the first delta of the config.
inline std::vector<DecompositionRow> run_decomposition(const ExperimentConfig& cfg, std::size_t times_per_replica) {
    if (cfg.mode != Mode::weak) throw ValidationError("decompose: weak mode only");
    detail::validate_config(cfg);
    if (times_per_replica == 0) throw ValidationError("decompose: need at least one time per replica");
    const CoefficientSystem sys = make_named_system(cfg.system, cfg.params);
    const SpacePtr space = GalerkinSpace::create(cfg.basis_size, cfg.domain_length);
    const double delta = cfg.deltas.front();
    const double window = delta * static_cast<double>(window_multiplier(delta, cfg.n_exponent));
    const auto times = decomposition_times(cfg.horizon, delta, times_per_replica);
    std::vector<DecompositionRow> rows(cfg.replicas * times.size());
    parallel_for(cfg.replicas, cfg.threads, [&](std::size_t j) {
        const CoupledReplica rep = solve_coupled(sys, cfg, space, j, delta);
        const StepTestFunction phi = build_test_function(rep.approx, rep.ito, window);
        const DecompositionAssembler assembler(sys, rep.approx, rep.ito, rep.drive, rep.path);
        for (std::size_t i = 0; i < times.size(); ++i) {
            DecompositionRow& row = rows[j * times.size() + i];
            row.replica = j;
            row.terms = assembler.terms_at(phi, times[i]);
            row.relative = row.terms.residual / (std::abs(row.terms.lhs) + 1.0);
        }
    });
    return rows;
}

/// Increment-bound ratios per delta. Statistics:
///   path_increment_max_ratio max over paths and pairs of |X_d(t) - X_d(s)| / (sum int |B'| + t - s)
///   ito_increment_max_ratio   max over window-start pairs of E|X(t) - X(s)|^2 / ((t - s)(t - s + 1))
///   window_increment_max_ratio max over within-window knot pairs of E|X_d(t) - X_d(s)|^2 / (n^2 delta)
/// Max-type statistics over pairs carry the standard error of the maximizing pair;
/// the pathwise maximum carries none (NaN).
inline DiagnosticTable run_increment_lemmas(const ExperimentConfig& cfg) {
    if (cfg.mode != Mode::weak) throw ValidationError("lemmas: weak mode only");
    detail::validate_config(cfg);
    const CoefficientSystem sys = make_named_system(cfg.system, cfg.params);
    const SpacePtr space = GalerkinSpace::create(cfg.basis_size, cfg.domain_length);
    const std::size_t m = cfg.replicas;
    const std::size_t levels = cfg.deltas.size();
    const TimeGrid path_grid = TimeGrid::from_horizon(cfg.horizon, cfg.resolved_path_step());
    const double dref = cfg.delta_ref();
    const TimeGrid ref_grid = path_grid.coarsen(path_grid.steps_in(dref));
    const FieldState x0 = detail::initial_field(cfg, space, sys.state_dim());

    std::vector<LemmaPairs> pairs;
    for (double delta : cfg.deltas) pairs.push_back(lemma_pairs(cfg.horizon, delta, window_multiplier(delta, cfg.n_exponent)));

    // Per level: det max per replica, ito sq per (spanning pair, replica), approx sq per (within pair, replica).
    std::vector<std::vector<double>> det(levels, std::vector<double>(m));
    std::vector<std::vector<double>> ito_sq(levels), approx_sq(levels);
    for (std::size_t l = 0; l < levels; ++l) {
        ito_sq[l].resize(pairs[l].spanning.size() * m);
        approx_sq[l].resize(pairs[l].within.size() * m);
    }
    parallel_for(m, cfg.threads, [&](std::size_t j) {
        const WienerPath path = detail::replica_path(cfg, path_grid, sys.noise_dim(), j);
        const FieldTrajectory ito =
            detail::with_provenance(j, dref, [&] { return solve_weak_ito(sys, path, x0, dref, cfg.weak); });
        for (std::size_t l = 0; l < levels; ++l) {
            const PolygonalPath drive = wong_zakai(path, cfg.deltas[l]);
            const FieldTrajectory approx = detail::with_provenance(
                j, cfg.deltas[l], [&] { return solve_weak_approx(sys, drive, x0, ref_grid, cfg.weak); });
            double worst = 0.0;
            for (std::size_t q = 0; q < pairs[l].spanning.size(); ++q) {
                const auto [s, t] = pairs[l].spanning[q];
                const IncrementSample smp = increment_sample(approx, ito, drive, s, t);
                worst = std::max(worst, smp.approx_ratio);
                ito_sq[l][q * m + j] = smp.ito_sq;
            }
            for (std::size_t q = 0; q < pairs[l].within.size(); ++q) {
                const auto [s, t] = pairs[l].within[q];
                const IncrementSample smp = increment_sample(approx, ito, drive, s, t);
                worst = std::max(worst, smp.approx_ratio);
                approx_sq[l][q * m + j] = smp.approx_sq;
            }
            det[l][j] = worst;
        }
    });

    const double nan = std::numeric_limits<double>::quiet_NaN();
    DiagnosticTable table;
    for (std::size_t l = 0; l < levels; ++l) {
        const double delta = cfg.deltas[l];
        table.push_back({delta, "path_increment_max_ratio", *std::max_element(det[l].begin(), det[l].end()), nan, m});

        auto max_ratio = [&](const std::vector<std::pair<double, double>>& ps, const std::vector<double>& xs,
                             auto&& normalizer) {
            double best = 0.0, best_se = nan;
            for (std::size_t q = 0; q < ps.size(); ++q) {
                const SampleStats s = summarize(std::span<const double>(xs).subspan(q * m, m));
                const double norm = normalizer(ps[q].first, ps[q].second);
                if (s.mean / norm > best || q == 0) {
                    best = s.mean / norm;
                    best_se = s.std_err / norm;
                }
            }
            return std::pair{best, best_se};
        };
        const auto [r1, r1_se] = max_ratio(pairs[l].spanning, ito_sq[l],
                                           [](double s, double t) { return (t - s) * (t - s + 1.0); });
        table.push_back({delta, "ito_increment_max_ratio", r1, r1_se, m});
        const double n = static_cast<double>(window_multiplier(delta, cfg.n_exponent));
        const auto [r2, r2_se] = max_ratio(pairs[l].within, approx_sq[l], [&](double, double) { return n * n * delta; });
        table.push_back({delta, "window_increment_max_ratio", r2, r2_se, m});
    }
    return table;
}

// ---- serialization -------------------------------------------------------

inline void write_report_csv(std::ostream& os, const ConvergenceReport& rep) {
    os << "delta,n_delta,error_mean,error_stderr,M\n";
    for (const auto& r : rep.rows) fmt::print(os, "{},{},{},{},{}\n", r.delta, r.n_delta, r.error_mean, r.error_stderr, r.replicas);
}

inline nlohmann::json report_summary(const ConvergenceReport& rep, const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["mode"] = mode_name(cfg.mode);
    j["system"] = cfg.system;
    j["horizon"] = cfg.horizon;
    j["error_exponent"] = cfg.error_exponent;
    j["replicas"] = cfg.replicas;
    j["seed"] = cfg.seed;
    j["delta_ref"] = rep.delta_ref;
    j["runtime_seconds"] = rep.runtime_seconds;
    if (rep.slope) {
        j["slope"] = {{"value", rep.slope->slope},
                      {"ci_low", rep.slope->ci_low},
                      {"ci_high", rep.slope->ci_high},
                      {"rows", rep.slope->n_rows}};
    } else {
        j["slope"] = nullptr;
    }
    auto& rows = j["rows"] = nlohmann::json::array();
    for (const auto& r : rep.rows) {
        rows.push_back({{"delta", r.delta},
                        {"n_delta", r.n_delta},
                        {"error_mean", r.error_mean},
                        {"error_stderr", r.error_stderr},
                        {"M", r.replicas}});
    }
    return j;
}

inline void write_diagnostic_csv(std::ostream& os, const DiagnosticTable& table) {
    os << "delta,statistic,estimate,std_err,n_paths\n";
    for (const auto& r : table) fmt::print(os, "{},{},{},{},{}\n", r.delta, r.statistic, r.estimate, r.std_err, r.n_paths);
}

inline void write_correction_csv(std::ostream& os, const CorrectionEstimate& est) {
    os << "t,delta,j,n,estimate,std_err,n_paths\n";
    for (std::size_t j = 0; j < est.dims; ++j)
        for (std::size_t n = 0; n < est.dims; ++n)
            fmt::print(os, "{},{},{},{},{},{},{}\n", est.at_time, est.at_delta, j + 1, n + 1, est(j, n), est.error(j, n),
                       est.n_paths);
}

inline void write_decomposition_csv(std::ostream& os, std::span<const DecompositionRow> rows) {
    os << "replica,t,lhs,h1,h2,h3,h4,residual,relative_residual\n";
    for (const auto& r : rows) {
        const auto& x = r.terms;
        fmt::print(os, "{},{},{},{},{},{},{},{},{}\n", r.replica, x.t, x.lhs, x.h1, x.h2, x.h3, x.h4, x.residual,
                   r.relative);
    }
}

}  // namespace wz
