#include <catch_amalgamated.hpp>

#include <wzapprox/approximant.hpp>

#include <cmath>
#include <vector>

using namespace wz;

namespace {

// Sup of |w(t) - t w(1)|^2 over a 256-step grid of [0, 1] (Brownian bridge).
// Independent NumPy Monte Carlo with 2e6 bridges: 0.76040 +- 0.00035.
// The continuous-time value pi^2 / 12 = 0.8225 is an upper bound.
constexpr double kBridgeSupSq256 = 0.76040;
constexpr double kBridgeSupSq256Err = 0.00035;

const TimeGrid kGrid = TimeGrid::from_horizon(1.0, 0x1p-10);

}  // namespace

TEST_CASE("wong_zakai interpolates the path at the knots", "[approximant]") {
    const WienerPath p = sample_wiener(kGrid, 2, 11);
    const PolygonalPath b = wong_zakai(p, 0x1p-4);
    CHECK(b.segments() == 16);
    CHECK(b.source_seed() == 11);
    for (std::size_t n = 0; n < 2; ++n) {
        CHECK(b.eval(n, 0.0) == 0.0);
        for (std::size_t k = 0; k <= 16; ++k) CHECK(b.eval(n, k * 0x1p-4) == p.value(n, k * 64));
        for (std::size_t k = 0; k < 16; ++k) {
            // Midpoints are exact on the fixed-point lattice.
            CHECK(b.eval(n, (k + 0.5) * 0x1p-4) == 0.5 * (p.value(n, k * 64) + p.value(n, (k + 1) * 64)));
            CHECK(b.slope(n, k) * 0x1p-4 == p.value(n, (k + 1) * 64) - p.value(n, k * 64));
        }
    }
}

TEST_CASE("derivative is piecewise constant with right-hand value at knots", "[approximant]") {
    const PolygonalPath b = wong_zakai(sample_wiener(kGrid, 1, 3), 0x1p-3);
    CHECK(b.deriv(0, 0.13) == b.deriv(0, 0.2));
    CHECK(b.deriv(0, 0.125) == b.slope(0, 1));
    CHECK(b.deriv(0, 1.0) == b.slope(0, 7));
    CHECK_THROWS_AS(b.eval(0, 1.5), ValidationError);
    CHECK_THROWS_AS(b.deriv(0, -0.1), ValidationError);
}

TEST_CASE("first-segment variation equals |w(delta)|", "[approximant]") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const WienerPath p = sample_wiener(kGrid, 1, seed);
        const PolygonalPath b = wong_zakai(p, 0x1p-5);
        CHECK(b.abs_variation(0, 0.0, 0x1p-5) == Catch::Approx(std::abs(p.value(0, 32))).epsilon(1e-15));
    }
}

TEST_CASE("telescoping and shift compatibility", "[approximant]") {
    const WienerPath p = sample_wiener(kGrid, 2, 21);
    const double delta = 0x1p-5;
    const PolygonalPath b = wong_zakai(p, delta);
    for (std::size_t n = 0; n < 2; ++n) {
        double sum = 0.0;
        for (std::size_t k = 0; k < b.segments(); ++k) sum += b.increment(n, k);
        CHECK(sum == b.eval(n, 1.0) - b.eval(n, 0.0));
    }
    for (std::size_t kk : {1u, 5u, 16u}) {
        const double shift_t = delta * static_cast<double>(kk);
        const PolygonalPath shifted = wong_zakai(shift(p, shift_t), delta);
        for (std::size_t node = 0; node + kk * 32 <= kGrid.n_steps(); ++node) {
            const double t = kGrid.time(node);
            for (std::size_t n = 0; n < 2; ++n) {
                CHECK(b.eval(n, t + shift_t) == shifted.eval(n, t) + p.at_time(n, shift_t));
            }
        }
    }
}

TEST_CASE("wong_zakai rejects misaligned delta", "[approximant]") {
    const WienerPath p = sample_wiener(kGrid, 1, 1);
    CHECK_THROWS_AS(wong_zakai(p, 0x1p-11), ValidationError);
    CHECK_THROWS_AS(wong_zakai(p, 2.0), ValidationError);
    CHECK_THROWS_AS(wong_zakai(p, 3 * 0x1p-4), ValidationError);
}

TEST_CASE("moment axioms for Wong-Zakai", "[approximant][statistics]") {
    const std::vector<double> deltas{0x1p-4, 0x1p-6};
    SamplingOptions opt;
    opt.seed = 5;
    opt.substeps = 8;
    const DiagnosticTable t = check_moment_axioms(wong_zakai_family(), deltas, 20000, opt);
    REQUIRE(t.size() == 6);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(t[3 * i].statistic == "mean_B0");
        CHECK(t[3 * i].estimate == 0.0);
        CHECK(t[3 * i + 1].estimate == 0.0);
        // E|N(0, delta)|^6 / delta^3 = 15.
        CHECK(std::abs(t[3 * i + 2].estimate - 15.0) < 4.0 * t[3 * i + 2].std_err);
    }
    CHECK_THROWS_AS(check_moment_axioms(wong_zakai_family(), deltas, 999, opt), ValidationError);
}

TEST_CASE("sup convergence: exact at delta = h, bridge oracle at delta = T", "[approximant][statistics]") {
    SamplingOptions opt;
    opt.seed = 8;
    const std::vector<double> deltas{1.0, 0.25, 0x1p-8};
    const DiagnosticTable t = check_sup_convergence(wong_zakai_family(), deltas, 10000, 1.0, 0x1p-8, opt);
    REQUIRE(t.size() == 3);
    CHECK(t[2].estimate == 0.0);
    const double tol = 2.0 * std::hypot(t[0].std_err, kBridgeSupSq256Err);
    CHECK(std::abs(t[0].estimate - kBridgeSupSq256) < tol);
    CHECK(t[1].estimate < t[0].estimate);
}

TEST_CASE("sup error decreases when delta halves", "[approximant][statistics]") {
    SamplingOptions opt;
    opt.seed = 9;
    const std::vector<double> deltas{0x1p-2, 0x1p-3, 0x1p-4, 0x1p-5, 0x1p-6};
    const DiagnosticTable t = check_sup_convergence(wong_zakai_family(), deltas, 10000, 1.0, 0x1p-10, opt);
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
        CHECK(t[i + 1].estimate < t[i].estimate + 2.0 * std::hypot(t[i].std_err, t[i + 1].std_err));
    }
}

TEST_CASE("c integrand at t = delta equals w(delta)^2 / 2", "[approximant]") {
    const TimeGrid g(0x1p-12, 64);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const WienerPath p = sample_wiener(g, 1, seed);
        const PolygonalPath b = wong_zakai(p, g.horizon());
        const double w = p.value(0, 64);
        CHECK(std::abs(cjn_integrand(b, 0, 0, g.horizon()) - 0.5 * w * w) <= 1e-12);
    }
}

TEST_CASE("c integrand against midpoint quadrature", "[approximant]") {
    const WienerPath p = sample_wiener(TimeGrid::from_horizon(1.0, 0x1p-8), 2, 4);
    const PolygonalPath b = wong_zakai(p, 0x1p-3);
    const double t = 0.6875;  // inside a segment
    for (std::size_t j = 0; j < 2; ++j) {
        for (std::size_t n = 0; n < 2; ++n) {
            // Midpoint rule on knot-aligned cells; the integrand is linear on each cell.
            const double ds = 0x1p-16;
            const auto steps = static_cast<std::size_t>(t / ds);
            double sum = 0.0;
            for (std::size_t k = 0; k < steps; ++k) {
                const double s = (k + 0.5) * ds;
                sum += b.deriv(j, s) * (b.eval(n, t) - b.eval(n, s)) * ds;
            }
            CHECK(cjn_integrand(b, j, n, t) == Catch::Approx(sum).margin(1e-10));
        }
    }
}

TEST_CASE("estimate_cjn at t = delta converges to one half", "[approximant][statistics]") {
    SamplingOptions opt;
    opt.seed = 10;
    opt.dims = 2;
    opt.substeps = 4;
    const std::size_t m = 20000;
    const CorrectionEstimate est = estimate_cjn(wong_zakai_family(), 0x1p-6, 0x1p-6, m, opt);
    CHECK(std::abs(est(0, 0) - 0.5) < 3.0 / std::sqrt(m / 2.0));
    CHECK(std::abs(est(1, 1) - 0.5) < 3.0 / std::sqrt(m / 2.0));
    for (std::size_t e = 0; e < 4; ++e) CHECK(est.std_err[e] > 0.0);
}

TEST_CASE("estimate_cjn off-diagonal vanishes at t = k(delta) delta", "[approximant][statistics]") {
    SamplingOptions opt;
    opt.seed = 12;
    opt.dims = 2;
    opt.substeps = 4;
    const double delta = 0x1p-6;
    const double t = delta * static_cast<double>(ceil_power_schedule(delta, 0.5));
    const CorrectionEstimate est = estimate_cjn(wong_zakai_family(), t, delta, 20000, opt);
    CHECK(std::abs(est(0, 1)) < 3.0 * est.error(0, 1));
    CHECK(std::abs(est(1, 0)) < 3.0 * est.error(1, 0));
    CHECK(std::abs(est(0, 0) - 0.5) < 4.0 * est.error(0, 0));
}

TEST_CASE("estimate_cjn rejects t below one knot interval", "[approximant]") {
    SamplingOptions opt;
    CHECK_THROWS_AS(estimate_cjn(wong_zakai_family(), 0x1p-7, 0x1p-6, 100, opt), ValidationError);
}

TEST_CASE("ceil power schedule", "[approximant]") {
    CHECK(ceil_power_schedule(0x1p-8, 0.5) == 16);
    CHECK(ceil_power_schedule(0x1p-4, 0.5) == 4);
    CHECK(ceil_power_schedule(0x1p-6, 0.2) == 3);
    CHECK(ceil_power_schedule(0x1p-5, 0.2) == 2);
    CHECK_THROWS_AS(ceil_power_schedule(2.0, 0.5), ValidationError);
}

TEST_CASE("diagnostics are independent of thread count", "[approximant][determinism]") {
    const std::vector<double> deltas{0x1p-3, 0x1p-5};
    SamplingOptions one, four;
    one.seed = four.seed = 99;
    one.substeps = four.substeps = 8;
    four.threads = 4;
    const auto a = check_moment_axioms(wong_zakai_family(), deltas, 2000, one);
    const auto b = check_moment_axioms(wong_zakai_family(), deltas, 2000, four);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].estimate == b[i].estimate);
        CHECK(a[i].std_err == b[i].std_err);
    }
}
