#pragma once

#include <wzapprox/errors.hpp>
#include <wzapprox/summation.hpp>

#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

namespace wz {

/// Finite cosine basis on O = [0, L] with a composite Gauss-Legendre rule.
///
/// basis_0 = 1/sqrt(L), basis_k = sqrt(2/L) cos(k pi x / L). The rule uses
/// kGaussPoints nodes on each of `cells` equal cells; the default of one cell
/// per basis function gives several nodes per oscillation of the highest mode.
class GalerkinSpace {
public:
    static constexpr std::size_t kGaussPoints = 8;

    static std::shared_ptr<const GalerkinSpace> create(std::size_t basis_size, double length = 1.0,
                                                       std::size_t cells = 0) {
        return std::shared_ptr<const GalerkinSpace>(new GalerkinSpace(basis_size, length, cells));
    }

    std::size_t size() const noexcept { return m_; }
    double length() const noexcept { return length_; }
    std::size_t n_nodes() const noexcept { return nodes_.size(); }
    std::span<const double> nodes() const noexcept { return nodes_; }
    std::span<const double> weights() const noexcept { return weights_; }

    /// basis_k at quadrature node q.
    double basis(std::size_t k, std::size_t q) const noexcept { return basis_[k * nodes_.size() + q]; }
    /// d/dx basis_k at quadrature node q.
    double basis_derivative(std::size_t k, std::size_t q) const noexcept { return dbasis_[k * nodes_.size() + q]; }

    /// (k pi / L)^2: eigenvalue of -d^2/dx^2 with Neumann conditions for basis_k.
    double eigenvalue(std::size_t k) const noexcept {
        const double w = static_cast<double>(k) * std::numbers::pi / length_;
        return w * w;
    }

    /// Evaluates basis_k anywhere on [0, L].
    double basis_at(std::size_t k, double x) const noexcept {
        if (k == 0) return 1.0 / std::sqrt(length_);
        return std::sqrt(2.0 / length_) * std::cos(static_cast<double>(k) * std::numbers::pi * x / length_);
    }

    /// sum_q w_q f(x_q) basis_k(x_q) for every k, into out[0..m).
    void project_nodal(std::span<const double> nodal, std::span<double> out) const noexcept {
        const std::size_t nq = nodes_.size();
        for (std::size_t k = 0; k < m_; ++k) {
            const double* phi = basis_.data() + k * nq;
            double acc = 0.0;
            for (std::size_t q = 0; q < nq; ++q) acc += weights_[q] * nodal[q] * phi[q];
            out[k] = acc;
        }
    }

    /// sum_k c_k basis_k(x_q) at every node.
    void reconstruct_nodal(std::span<const double> coeffs, std::span<double> nodal) const noexcept {
        const std::size_t nq = nodes_.size();
        for (std::size_t q = 0; q < nq; ++q) nodal[q] = 0.0;
        for (std::size_t k = 0; k < m_; ++k) {
            const double c = coeffs[k];
            if (c == 0.0) continue;
            const double* phi = basis_.data() + k * nq;
            for (std::size_t q = 0; q < nq; ++q) nodal[q] += c * phi[q];
        }
    }

    /// Same for the spatial derivative.
    void reconstruct_nodal_derivative(std::span<const double> coeffs, std::span<double> nodal) const noexcept {
        const std::size_t nq = nodes_.size();
        for (std::size_t q = 0; q < nq; ++q) nodal[q] = 0.0;
        for (std::size_t k = 1; k < m_; ++k) {
            const double c = coeffs[k];
            if (c == 0.0) continue;
            const double* dphi = dbasis_.data() + k * nq;
            for (std::size_t q = 0; q < nq; ++q) nodal[q] += c * dphi[q];
        }
    }

private:
    GalerkinSpace(std::size_t m, double length, std::size_t cells) : m_(m), length_(length) {
        if (m_ == 0) throw ValidationError("GalerkinSpace: basis size must be >= 1");
        if (!(length_ > 0.0)) throw ValidationError("GalerkinSpace: domain length must be positive");
        if (cells == 0) cells = std::max<std::size_t>(m_, 2);
        using Rule = boost::math::quadrature::gauss<double, kGaussPoints>;
        // Boost stores the non-negative half of the symmetric rule.
        std::vector<double> ref_x, ref_w;
        for (std::size_t i = 0; i < Rule::abscissa().size(); ++i) {
            const double a = Rule::abscissa()[i];
            const double w = Rule::weights()[i];
            ref_x.push_back(a);
            ref_w.push_back(w);
            if (a != 0.0) {
                ref_x.push_back(-a);
                ref_w.push_back(w);
            }
        }
        const double cell = length_ / static_cast<double>(cells);
        for (std::size_t c = 0; c < cells; ++c) {
            const double mid = cell * (static_cast<double>(c) + 0.5);
            for (std::size_t i = 0; i < ref_x.size(); ++i) {
                nodes_.push_back(mid + 0.5 * cell * ref_x[i]);
                weights_.push_back(0.5 * cell * ref_w[i]);
            }
        }
        const std::size_t nq = nodes_.size();
        basis_.resize(m_ * nq);
        dbasis_.resize(m_ * nq);
        for (std::size_t k = 0; k < m_; ++k) {
            const double w = static_cast<double>(k) * std::numbers::pi / length_;
            for (std::size_t q = 0; q < nq; ++q) {
                basis_[k * nq + q] = basis_at(k, nodes_[q]);
                dbasis_[k * nq + q] = k == 0 ? 0.0 : -std::sqrt(2.0 / length_) * w * std::sin(w * nodes_[q]);
            }
        }
    }

    std::size_t m_;
    double length_;
    std::vector<double> nodes_;
    std::vector<double> weights_;
    std::vector<double> basis_;
    std::vector<double> dbasis_;
};

using SpacePtr = std::shared_ptr<const GalerkinSpace>;

/// d-component field in a GalerkinSpace; coeffs[i * m + k] multiplies basis_k in component i.
struct FieldState {
    SpacePtr space;
    std::size_t dim = 0;
    std::vector<double> coeffs;

    FieldState() = default;
    FieldState(SpacePtr s, std::size_t d) : space(std::move(s)), dim(d), coeffs(d * space->size(), 0.0) {}
    FieldState(SpacePtr s, std::size_t d, std::vector<double> c) : space(std::move(s)), dim(d), coeffs(std::move(c)) {
        if (coeffs.size() != dim * space->size()) throw ValidationError("FieldState: coefficient array has wrong size");
    }

    std::span<const double> component(std::size_t i) const noexcept {
        return std::span<const double>(coeffs).subspan(i * space->size(), space->size());
    }

    /// ||X^i||^2 via Parseval.
    double norm_sq(std::size_t i) const noexcept {
        double s = 0.0;
        for (double c : component(i)) s += c * c;
        return s;
    }

    /// sum_i ||X^i||^2.
    double total_norm_sq() const noexcept {
        double s = 0.0;
        for (double c : coeffs) s += c * c;
        return s;
    }

    /// Field value of component i at x.
    double value_at(std::size_t i, double x) const noexcept {
        double s = 0.0;
        const auto c = component(i);
        for (std::size_t k = 0; k < c.size(); ++k) s += c[k] * space->basis_at(k, x);
        return s;
    }
};

/// Component-wise function on O: f(x, out) fills out[0..d).
using FieldFunction = std::function<void(double x, std::span<double> out)>;

/// Galerkin projection: coeffs[i][k] = <f^i, basis_k> under the space's quadrature.
inline FieldState project(const SpacePtr& space, std::size_t d, const FieldFunction& f) {
    if (d == 0) throw ValidationError("project: dimension must be >= 1");
    const std::size_t nq = space->n_nodes();
    std::vector<double> nodal(d * nq), value(d), coeffs(d * space->size());
    for (std::size_t q = 0; q < nq; ++q) {
        f(space->nodes()[q], value);
        for (std::size_t i = 0; i < d; ++i) nodal[i * nq + q] = value[i];
    }
    for (std::size_t i = 0; i < d; ++i) {
        space->project_nodal(std::span<const double>(nodal).subspan(i * nq, nq),
                             std::span<double>(coeffs).subspan(i * space->size(), space->size()));
    }
    return FieldState(space, d, std::move(coeffs));
}

/// sum_i <a^i, b^i>.
inline double pair(const FieldState& a, const FieldState& b) {
    if (a.space != b.space || a.dim != b.dim) throw ValidationError("pair: fields live in different spaces");
    CompensatedSum s;
    for (std::size_t e = 0; e < a.coeffs.size(); ++e) s += a.coeffs[e] * b.coeffs[e];
    return s.value();
}

/// sum_i ||X^i||^2 computed by quadrature of the reconstructed field, for Parseval checks.
inline double quadrature_norm_sq(const FieldState& x) {
    const auto& sp = *x.space;
    std::vector<double> nodal(sp.n_nodes());
    CompensatedSum s;
    for (std::size_t i = 0; i < x.dim; ++i) {
        sp.reconstruct_nodal(x.component(i), nodal);
        for (std::size_t q = 0; q < sp.n_nodes(); ++q) s += sp.weights()[q] * nodal[q] * nodal[q];
    }
    return s.value();
}

}  // namespace wz
