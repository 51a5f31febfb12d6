#include <catch_amalgamated.hpp>

#include <wzapprox/systems.hpp>

#include <cmath>
#include <vector>

using namespace wz;

namespace {

// Second, loop-free transcription of A(x) used as the cross-check.
std::vector<double> ion_matrix_oracle(const std::vector<double>& D, const std::vector<double>& x) {
    const std::size_t d = x.size();
    double solvent = 1.0;
    for (double v : x) solvent -= v;
    std::vector<double> a(d * d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t n = 0; n < d; ++n) a[i * d + n] = i == n ? D[i] * (x[i] + solvent) : D[i] * x[i];
    return a;
}

}  // namespace

TEST_CASE("ion diffusion matrix, hand-substituted d = 2 case", "[systems]") {
    IonTransportSpec spec;
    spec.species = 2;
    spec.diffusion = {1.0, 2.0};
    const std::vector<double> x{0.3, 0.4};
    const auto a = ion_diffusion_matrix(spec, x);
    const double expect[4] = {0.6, 0.3, 0.8, 1.4};
    for (int e = 0; e < 4; ++e) CHECK(std::abs(a[e] - expect[e]) <= 1e-14);
    const auto o = ion_matrix_oracle(spec.diffusion, x);
    for (int e = 0; e < 4; ++e) CHECK(std::abs(a[e] - o[e]) <= 1e-14);
}

TEST_CASE("ion diffusion matrix, single species is constant", "[systems]") {
    IonTransportSpec spec;
    spec.species = 1;
    spec.diffusion = {2.5};
    for (double x : {0.0, 0.1, 0.5, 0.75, 1.0}) CHECK(ion_diffusion_matrix(spec, std::vector<double>{x})[0] == 2.5);
}

TEST_CASE("ion diffusion matrix at the vacuum state", "[systems]") {
    IonTransportSpec spec;
    spec.species = 3;
    spec.diffusion = {1.0, 2.0, 3.0};
    const auto a = ion_diffusion_matrix(spec, std::vector<double>(3, 0.0));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t n = 0; n < 3; ++n) CHECK(a[i * 3 + n] == (i == n ? spec.diffusion[i] : 0.0));
}

TEST_CASE("ion diffusion matrix against the oracle on random simplex points", "[systems]") {
    IonTransportSpec spec;
    spec.species = 3;
    spec.diffusion = {0.5, 1.5, 4.0};
    NormalStream rng(2);
    for (int k = 0; k < 200; ++k) {
        std::vector<double> x(3);
        double total = 0.0;
        for (auto& v : x) total += v = rng.uniform(0.0, 1.0);
        const double scale = rng.uniform(0.0, 1.0) / total;
        for (auto& v : x) v *= scale;
        const auto a = ion_diffusion_matrix(spec, x);
        const auto o = ion_matrix_oracle(spec.diffusion, x);
        for (std::size_t e = 0; e < 9; ++e) CHECK(a[e] == Catch::Approx(o[e]).margin(1e-14));
    }
}

TEST_CASE("ion diffusion matrix rejects states outside the simplex", "[systems]") {
    IonTransportSpec spec;
    CHECK_THROWS_AS(ion_diffusion_matrix(spec, std::vector<double>{0.7, 0.4}), ValidationError);
    CHECK_THROWS_AS(ion_diffusion_matrix(spec, std::vector<double>{-0.1, 0.4}), ValidationError);
    CHECK_NOTHROW(ion_diffusion_matrix(spec, std::vector<double>{0.6, 0.4 + 1e-13}));
    IonTransportSpec bad;
    bad.diffusion = {1.0, -1.0};
    CHECK_THROWS_AS(make_ion_transport(bad), ValidationError);
}

TEST_CASE("named systems", "[systems]") {
    for (const auto& name : named_systems()) {
        const CoefficientSystem sys = make_named_system(name);
        CHECK(sys.name() == name);
        CHECK(sys.jacobian_check().passed);
        CHECK(sys.correction() == wong_zakai_correction(sys.noise_dim()));
    }
    CHECK(make_named_system("ion-transport").has_diffusion_matrix());
    CHECK(make_named_system("ion-transport").lipschitz_exempt());
    CHECK_FALSE(make_named_system("ion-transport").exemption_note().empty());
}

TEST_CASE("named system parameters", "[systems]") {
    const CoefficientSystem gbm = make_named_system("gbm", {{"a", 0.5}, {"dim", 2}});
    CHECK(gbm.state_dim() == 2);
    std::vector<double> s(4);
    gbm.sigma(std::vector<double>{2.0, 4.0}, s);
    CHECK(s == std::vector<double>{1.0, 0.0, 0.0, 2.0});

    const CoefficientSystem dn = make_named_system("diagonal-nemytskii", {{"mu", 0.25}});
    std::vector<double> b(2);
    dn.drift(std::vector<double>{0.0, 0.0}, b);
    CHECK(b == std::vector<double>{0.25, 0.25});

    const CoefficientSystem ion = make_named_system("ion-transport", {{"dim", 3}, {"D3", 7.0}, {"eps", 0.2}});
    std::vector<double> a(9);
    ion.diffusion_matrix(std::vector<double>{0.0, 0.0, 0.0}, a);
    CHECK(a[0] == 1.0);
    CHECK(a[4] == 2.0);
    CHECK(a[8] == 7.0);

    CHECK_THROWS_AS(make_named_system("sktt"), ValidationError);
    CHECK_THROWS_AS(make_named_system("gbm", {{"b", 1.0}}), ValidationError);
    CHECK_THROWS_AS(make_named_system("gbm", {{"dim", 1.5}}), ValidationError);
    CHECK_THROWS_AS(make_named_system("ion-transport", {{"D1", 0.0}}), ValidationError);
}
