#include <catch_amalgamated.hpp>

#include <wzapprox/coefficients.hpp>
#include <wzapprox/systems.hpp>

#include <cmath>
#include <vector>

using namespace wz;

namespace {

SystemDefinition scalar_definition(double a) {
    SystemDefinition def;
    def.name = "linear";
    def.state_dim = 1;
    def.noise_dim = 1;
    def.sigma = [a](std::span<const double> x, std::span<double> out) { out[0] = a * x[0]; };
    def.drift = [](std::span<const double>, std::span<double> out) { out[0] = 0.0; };
    def.sigma_jacobian = [a](std::span<const double>, std::span<double> out) { out[0] = a; };
    def.correction = wong_zakai_correction(1);
    def.sigma_c2b = def.drift_c1b = true;
    return def;
}

// Coupled 2x2 system with non-diagonal sigma for the sparsity and linearity checks.
SystemDefinition coupled_definition() {
    SystemDefinition def;
    def.name = "coupled";
    def.state_dim = 2;
    def.noise_dim = 2;
    def.sigma = [](std::span<const double> x, std::span<double> s) {
        s[0] = std::sin(x[0]) + 0.3 * x[1];
        s[1] = 0.2 * std::cos(x[1]);
        s[2] = 0.5 * x[0] * x[1];
        s[3] = std::tanh(x[1]);
    };
    def.drift = [](std::span<const double> x, std::span<double> b) {
        b[0] = -x[0];
        b[1] = std::sin(x[0]);
    };
    def.sigma_jacobian = [](std::span<const double> x, std::span<double> j) {
        // [(i * r + n) * d + alpha]
        j[0] = std::cos(x[0]);
        j[1] = 0.3;
        j[2] = 0.0;
        j[3] = -0.2 * std::sin(x[1]);
        j[4] = 0.5 * x[1];
        j[5] = 0.5 * x[0];
        j[6] = 0.0;
        j[7] = 1.0 - std::tanh(x[1]) * std::tanh(x[1]);
    };
    def.correction = {0.5, 0.1, -0.2, 0.5};
    def.sigma_c2b = def.drift_c1b = true;
    return def;
}

}  // namespace

TEST_CASE("Wong-Zakai tensor is half the identity", "[coefficients]") {
    const auto c = wong_zakai_correction(3);
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t n = 0; n < 3; ++n) CHECK(c[j * 3 + n] == (j == n ? 0.5 : 0.0));
}

TEST_CASE("correction field of sigma = a x is a^2 x / 2", "[coefficients]") {
    for (double a : {1.0, 0.5, -2.0}) {
        const CoefficientSystem sys(scalar_definition(a));
        for (double x : {-1.5, 0.0, 2.0, 7.25}) {
            CHECK(correction_field(sys, std::vector<double>{x})[0] == Catch::Approx(0.5 * a * a * x).epsilon(1e-15));
        }
    }
    const CoefficientSystem gbm = make_named_system("gbm");
    CHECK(correction_field(gbm, std::vector<double>{2.0})[0] == 1.0);
}

TEST_CASE("correction field against a finite-difference oracle", "[coefficients]") {
    const CoefficientSystem sys(coupled_definition());
    const double eps = 1e-6;
    NormalStream rng(4);
    for (int probe = 0; probe < 20; ++probe) {
        std::vector<double> x{rng.uniform(-1, 1), rng.uniform(-1, 1)};
        std::vector<double> s(4), sp(4), sm(4);
        sys.sigma(x, s);
        std::vector<double> expect(2, 0.0);
        for (std::size_t a = 0; a < 2; ++a) {
            auto xp = x, xm = x;
            xp[a] += eps;
            xm[a] -= eps;
            sys.sigma(xp, sp);
            sys.sigma(xm, sm);
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t j = 0; j < 2; ++j)
                    for (std::size_t n = 0; n < 2; ++n)
                        expect[i] += sys.correction(j, n) * s[a * 2 + j] * (sp[i * 2 + n] - sm[i * 2 + n]) / (2 * eps);
        }
        const auto got = correction_field(sys, x);
        for (std::size_t i = 0; i < 2; ++i) CHECK(got[i] == Catch::Approx(expect[i]).margin(1e-8));
    }
}

TEST_CASE("correction field is linear in the tensor", "[coefficients]") {
    const CoefficientSystem sys(coupled_definition());
    std::vector<double> doubled = sys.correction();
    for (double& c : doubled) c *= 2.0;
    const CoefficientSystem twice = sys.with_correction(doubled);
    const CoefficientSystem zero = sys.with_correction(std::vector<double>(4, 0.0));
    const std::vector<double> x{0.3, -0.7};
    const auto a = correction_field(sys, x);
    const auto b = correction_field(twice, x);
    const auto z = correction_field(zero, x);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(b[i] == 2.0 * a[i]);
        CHECK(z[i] == 0.0);
    }
}

TEST_CASE("additive noise has no correction", "[coefficients]") {
    const CoefficientSystem sys = make_named_system("additive", {{"s0", 1.7}, {"dim", 3}});
    const auto c = correction_field(sys, std::vector<double>{1.0, -2.0, 3.0});
    for (double v : c) CHECK(v == 0.0);
}

TEST_CASE("diagonal sigma gives a componentwise correction", "[coefficients]") {
    const CoefficientSystem sys = make_named_system("diagonal-nemytskii", {{"dim", 3}, {"a", 0.8}});
    std::vector<double> x{0.2, -1.1, 2.5};
    const auto base = correction_field(sys, x);
    for (std::size_t i = 0; i < 3; ++i) CHECK(base[i] == Catch::Approx(0.5 * 0.64 * std::sin(x[i]) * std::cos(x[i])));
    x[1] = 0.9;
    const auto moved = correction_field(sys, x);
    CHECK(moved[0] == base[0]);
    CHECK(moved[2] == base[2]);
}

TEST_CASE("correction field rejects non-finite input", "[coefficients]") {
    const CoefficientSystem sys(scalar_definition(1.0));
    CHECK_THROWS_AS(correction_field(sys, std::vector<double>{NAN}), ValidationError);
    CHECK_THROWS_AS(correction_field(sys, std::vector<double>{1.0, 2.0}), ValidationError);
}

TEST_CASE("construction validates the Jacobian and smoothness flags", "[coefficients]") {
    CHECK(CoefficientSystem(coupled_definition()).jacobian_check().passed);

    auto wrong = coupled_definition();
    wrong.sigma_jacobian = [](std::span<const double> x, std::span<double> j) {
        for (double& v : j) v = 0.0;
        j[0] = std::cos(x[0]) + 0.01;
    };
    CHECK_THROWS_AS(CoefficientSystem(wrong), ValidationError);

    auto unflagged = coupled_definition();
    unflagged.sigma_c2b = false;
    CHECK_THROWS_AS(CoefficientSystem(unflagged), ValidationError);

    auto bad_shape = coupled_definition();
    bad_shape.correction = {0.5};
    CHECK_THROWS_AS(CoefficientSystem(bad_shape), ValidationError);
}

TEST_CASE("regularity report", "[coefficients]") {
    SECTION("zero system") {
        const CoefficientSystem zero = make_named_system("additive", {{"s0", 0.0}});
        const RegularityReport rep = check_regularity(zero, 50, 1.0);
        CHECK(rep.growth_ratio == 0.0);
        CHECK(rep.lipschitz_ratio == 0.0);
    }
    SECTION("sigma = x against a dense-grid oracle") {
        // Features sigma = x and sigma sigma' = x; the difference quotient of both
        // squared sums to 2 at every pair. Dense-grid oracle over [-1, 1]:
        const CoefficientSystem sys(scalar_definition(1.0));
        double oracle = 0.0;
        for (int i = 0; i <= 400; ++i) {
            for (int j = i + 1; j <= 400; ++j) {
                const double x = -1.0 + i / 200.0, y = -1.0 + j / 200.0;
                const double df = (x - y) * (x - y) + (x - y) * (x - y);
                oracle = std::max(oracle, df / ((x - y) * (x - y)));
            }
        }
        const RegularityReport rep = check_regularity(sys, 200, 1.0);
        CHECK(std::abs(rep.lipschitz_ratio - oracle) <= 0.1 * oracle);
        CHECK(rep.max_probe_norm <= 1.0);
    }
    SECTION("drift with derivative bound c") {
        // b = c sin(x), sigma = 0: the ratio is bounded by c^2.
        const double c = 0.7;
        SystemDefinition def = scalar_definition(0.0);
        def.drift = [c](std::span<const double> x, std::span<double> out) { out[0] = c * std::sin(x[0]); };
        const RegularityReport rep = check_regularity(CoefficientSystem(def), 300, 2.0);
        CHECK(rep.lipschitz_ratio <= c * c + 1e-12);
        CHECK(rep.lipschitz_ratio > 0.5 * c * c);
    }
    SECTION("all named systems have finite ratios") {
        for (const auto& name : named_systems()) {
            const CoefficientSystem sys = make_named_system(name);
            const RegularityReport rep = check_regularity(sys, 100, name == "ion-transport" ? 0.5 : 1.0);
            CHECK(std::isfinite(rep.growth_ratio));
            CHECK(std::isfinite(rep.lipschitz_ratio));
            CHECK(rep.lipschitz_exempt == (name == "ion-transport"));
        }
    }
    CHECK_THROWS_AS(check_regularity(make_named_system("gbm"), 1, 1.0), ValidationError);
}
