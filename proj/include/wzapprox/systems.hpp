#pragma once

#include <wzapprox/coefficients.hpp>
#include <wzapprox/errors.hpp>

#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace wz {

/// Multi-species ion transport with volume filling: species 1..d plus the
/// solvent fraction x^{d+1} = 1 - sum x^i.
struct IonTransportSpec {
    std::size_t species = 2;
    std::vector<double> diffusion{1.0, 2.0};
    /// Noise amplitude of sigma^i_i(u) = eps u^i (1 - u^i).
    double noise_scale = 0.1;

    void validate() const {
        if (species == 0) throw ValidationError("ion-transport: need at least one species");
        if (diffusion.size() != species) throw ValidationError("ion-transport: one diffusion constant per species");
        for (double D : diffusion) {
            if (!(D > 0.0) || !std::isfinite(D)) throw ValidationError("ion-transport: diffusion constants must be > 0");
        }
        if (!std::isfinite(noise_scale)) throw ValidationError("ion-transport: noise scale must be finite");
    }
};

inline constexpr double kSimplexTolerance = 1e-12;

/// A(x) into out (d x d, row-major): A^ii = D^i x^i + D^i x^{d+1}, A^in = D^i x^i.
inline void ion_diffusion_matrix(const IonTransportSpec& spec, std::span<const double> x, std::span<double> out) {
    const std::size_t d = spec.species;
    if (x.size() != d || out.size() != d * d) throw ValidationError("ion_diffusion_matrix: wrong dimensions");
    double total = 0.0;
    for (double v : x) {
        if (!(v >= -kSimplexTolerance && v <= 1.0 + kSimplexTolerance)) {
            throw ValidationError("ion_diffusion_matrix: state outside the simplex (component " + std::to_string(v) + ")");
        }
        total += v;
    }
    if (total > 1.0 + kSimplexTolerance) {
        throw ValidationError("ion_diffusion_matrix: state outside the simplex (sum " + std::to_string(total) + ")");
    }
    const double solvent = 1.0 - total;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t n = 0; n < d; ++n) out[i * d + n] = spec.diffusion[i] * x[i];
        out[i * d + i] += spec.diffusion[i] * solvent;
    }
}

inline std::vector<double> ion_diffusion_matrix(const IonTransportSpec& spec, std::span<const double> x) {
    std::vector<double> a(spec.species * spec.species);
    ion_diffusion_matrix(spec, x, a);
    return a;
}

/// Named-system parameters, key = value.
using SystemParams = std::map<std::string, double>;

namespace detail {

class ParamReader {
public:
    ParamReader(std::string system, const SystemParams& params) : system_(std::move(system)), params_(params) {}

    double get(const std::string& key, double fallback) {
        used_.insert(key);
        const auto it = params_.find(key);
        if (it == params_.end()) return fallback;
        if (!std::isfinite(it->second)) throw ValidationError(system_ + ": parameter '" + key + "' is not finite");
        return it->second;
    }

    std::size_t get_count(const std::string& key, std::size_t fallback) {
        const double v = get(key, static_cast<double>(fallback));
        if (!(v >= 1.0) || v != std::floor(v)) {
            throw ValidationError(system_ + ": parameter '" + key + "' must be a positive integer");
        }
        return static_cast<std::size_t>(v);
    }

    void finish() const {
        for (const auto& [key, value] : params_) {
            if (!used_.count(key)) throw ValidationError(system_ + ": unknown parameter '" + key + "'");
        }
    }

private:
    std::string system_;
    const SystemParams& params_;
    std::set<std::string> used_;
};

inline SystemDefinition diagonal_definition(std::string name, std::size_t d) {
    SystemDefinition def;
    def.name = std::move(name);
    def.state_dim = d;
    def.noise_dim = d;
    def.correction = wong_zakai_correction(d);
    def.sigma_c2b = true;
    def.drift_c1b = true;
    return def;
}

}  // namespace detail

/// sigma^i_i(u) = a u^i, b = 0.
inline CoefficientSystem make_gbm(double a, std::size_t d = 1) {
    auto def = detail::diagonal_definition("gbm", d);
    def.sigma = [a, d](std::span<const double> x, std::span<double> out) {
        for (std::size_t e = 0; e < d * d; ++e) out[e] = 0.0;
        for (std::size_t i = 0; i < d; ++i) out[i * d + i] = a * x[i];
    };
    def.drift = [](std::span<const double>, std::span<double> out) {
        for (double& v : out) v = 0.0;
    };
    def.sigma_jacobian = [a, d](std::span<const double>, std::span<double> out) {
        for (double& v : out) v = 0.0;
        for (std::size_t i = 0; i < d; ++i) out[(i * d + i) * d + i] = a;
    };
    return CoefficientSystem(std::move(def));
}

/// sigma^i_i = s0, b^i = mu.
inline CoefficientSystem make_additive(double s0, double mu, std::size_t d = 1) {
    auto def = detail::diagonal_definition("additive", d);
    def.sigma = [s0, d](std::span<const double>, std::span<double> out) {
        for (std::size_t e = 0; e < d * d; ++e) out[e] = 0.0;
        for (std::size_t i = 0; i < d; ++i) out[i * d + i] = s0;
    };
    def.drift = [mu](std::span<const double>, std::span<double> out) {
        for (double& v : out) v = mu;
    };
    def.sigma_jacobian = [](std::span<const double>, std::span<double> out) {
        for (double& v : out) v = 0.0;
    };
    return CoefficientSystem(std::move(def));
}

/// sigma^i_i(u) = a sin(u^i), b^i(u) = mu cos(u^i).
inline CoefficientSystem make_diagonal_nemytskii(double a, double mu, std::size_t d = 2) {
    auto def = detail::diagonal_definition("diagonal-nemytskii", d);
    def.sigma = [a, d](std::span<const double> x, std::span<double> out) {
        for (std::size_t e = 0; e < d * d; ++e) out[e] = 0.0;
        for (std::size_t i = 0; i < d; ++i) out[i * d + i] = a * std::sin(x[i]);
    };
    def.drift = [mu, d](std::span<const double> x, std::span<double> out) {
        for (std::size_t i = 0; i < d; ++i) out[i] = mu * std::cos(x[i]);
    };
    def.sigma_jacobian = [a, d](std::span<const double> x, std::span<double> out) {
        for (double& v : out) v = 0.0;
        for (std::size_t i = 0; i < d; ++i) out[(i * d + i) * d + i] = a * std::cos(x[i]);
    };
    return CoefficientSystem(std::move(def));
}

/// Ion transport: sigma^i_i(u) = eps u^i (1 - u^i), b = 0, plus div(A(X) grad X).
inline CoefficientSystem make_ion_transport(const IonTransportSpec& spec) {
    spec.validate();
    const std::size_t d = spec.species;
    const double eps = spec.noise_scale;
    auto def = detail::diagonal_definition("ion-transport", d);
    def.sigma = [eps, d](std::span<const double> x, std::span<double> out) {
        for (std::size_t e = 0; e < d * d; ++e) out[e] = 0.0;
        for (std::size_t i = 0; i < d; ++i) out[i * d + i] = eps * x[i] * (1.0 - x[i]);
    };
    def.drift = [](std::span<const double>, std::span<double> out) {
        for (double& v : out) v = 0.0;
    };
    def.sigma_jacobian = [eps, d](std::span<const double> x, std::span<double> out) {
        for (double& v : out) v = 0.0;
        for (std::size_t i = 0; i < d; ++i) out[(i * d + i) * d + i] = eps * (1.0 - 2.0 * x[i]);
    };
    def.diffusion_matrix = [spec](std::span<const double> x, std::span<double> out) {
        ion_diffusion_matrix(spec, x, out);
    };
    def.lipschitz_exempt = true;
    def.exemption_note =
        "div(A(X) grad X) is a quasilinear spatial operator; pointwise Lipschitz bounds on sigma and b do not cover it";
    return CoefficientSystem(std::move(def));
}

inline const std::vector<std::string>& named_systems() {
    static const std::vector<std::string> names{"gbm", "additive", "diagonal-nemytskii", "ion-transport"};
    return names;
}

/// Builds a named system from key-value parameters.
///
///   gbm:                dim (1), a (1)
///   additive:           dim (1), s0 (1), mu (0)
///   diagonal-nemytskii: dim (2), a (1), mu (0.5)
///   ion-transport:      dim (2), D1..Ddim (D_i = i), eps (0.1)
inline CoefficientSystem make_named_system(const std::string& name, const SystemParams& params = {}) {
    detail::ParamReader p(name, params);
    if (name == "gbm") {
        const std::size_t d = p.get_count("dim", 1);
        const double a = p.get("a", 1.0);
        p.finish();
        return make_gbm(a, d);
    }
    if (name == "additive") {
        const std::size_t d = p.get_count("dim", 1);
        const double s0 = p.get("s0", 1.0);
        const double mu = p.get("mu", 0.0);
        p.finish();
        return make_additive(s0, mu, d);
    }
    if (name == "diagonal-nemytskii") {
        const std::size_t d = p.get_count("dim", 2);
        const double a = p.get("a", 1.0);
        const double mu = p.get("mu", 0.5);
        p.finish();
        return make_diagonal_nemytskii(a, mu, d);
    }
    if (name == "ion-transport") {
        IonTransportSpec spec;
        spec.species = p.get_count("dim", 2);
        spec.diffusion.resize(spec.species);
        for (std::size_t i = 0; i < spec.species; ++i) {
            spec.diffusion[i] = p.get("D" + std::to_string(i + 1), static_cast<double>(i + 1));
        }
        spec.noise_scale = p.get("eps", 0.1);
        p.finish();
        return make_ion_transport(spec);
    }
    throw ValidationError("unknown system '" + name + "'");
}

}  // namespace wz
