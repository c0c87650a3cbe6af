#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qhd/errors.hpp"
#include "qhd/geometry.hpp"

namespace qhd {

/// Model constants in Hartree atomic units. The composite system couples a
/// free mode x of mass m0 to one harmonic bath mode y of mass m through a
/// bilinear term c*x*y.
struct PhysicalParams {
    double m0 = 2000.0;      // mass of the system mode x
    double m = 2000.0;       // mass of the bath mode y
    double omega = 0.004556; // bath angular frequency
    double c = 0.015;        // bilinear coupling constant
    double hbar = 1.0;       // fixed; everything is in atomic units

    /// Bath stiffness k = m * omega^2.
    double stiffness() const { return m * omega * omega; }

    void validate() const {
        if (!(m0 > 0.0)) throw ConfigError("physical.m0 must be > 0");
        if (!(m > 0.0)) throw ConfigError("physical.m must be > 0");
        if (!(omega > 0.0)) throw ConfigError("physical.omega must be > 0");
        if (hbar != 1.0) throw ConfigError("hbar is fixed at 1 atomic unit");
        if (!std::isfinite(c)) throw ConfigError("physical.c must be finite");
    }
};

/// Two-Gaussian initial superposition along x, ground-state bath along y.
struct SuperpositionParams {
    double a = 0.8;    // half separation of the Gaussian centers
    double beta = 4.5; // Gaussian width exponent

    /// Per-Gaussian normalization factor N, chosen so the full 2-D initial
    /// wavefunction has unit L2 norm. Closed form for two Gaussians,
    /// including the cross-term overlap exp(-2 beta a^2).
    double norm() const {
        return std::pow(2.0 * beta / std::numbers::pi, 0.25) /
               std::sqrt(1.0 + std::exp(-2.0 * beta * a * a));
    }

    void validate() const {
        if (!(a > 0.0)) throw ConfigError("superposition.a must be > 0");
        if (!(beta > 0.0)) throw ConfigError("superposition.beta must be > 0");
    }
};

/// Selects whether the system-bath coupling is active.
struct CaseSelector {
    bool coupled = false;

    double effective_coupling(const PhysicalParams& p) const {
        return coupled ? p.c : 0.0;
    }
    const char* name() const { return coupled ? "coupled" : "uncoupled"; }
};

/// Classical potential V(x,y) = 1/2 k y^2 + c x y (c = 0 when uncoupled).
inline double potential(const PhysicalParams& p, const CaseSelector& cs, const Vec2& r) {
    const double k = p.stiffness();
    return 0.5 * k * r.y * r.y + cs.effective_coupling(p) * r.x * r.y;
}

/// Classical force f_c = -grad V = (-c y, -k y - c x), analytically exact.
inline Vec2 potential_gradient_force(const PhysicalParams& p, const CaseSelector& cs,
                                     const Vec2& r) {
    const double k = p.stiffness();
    const double c = cs.effective_coupling(p);
    return {-c * r.y, -k * r.y - c * r.x};
}

/// Polar form of a wavefunction value: psi = R exp(i S / hbar).
struct PolarValue {
    double R = 0.0; // amplitude, >= 0
    double S = 0.0; // action / phase
};

/// ln of the amplitude of the initial state, evaluated without underflow in
/// the far wings (log-sum-exp over the two Gaussians).
inline double initial_log_amplitude(const PhysicalParams& p, const SuperpositionParams& sup,
                                    const Vec2& r) {
    const double alpha = p.m * p.omega / p.hbar;
    const double e1 = -sup.beta * (r.x - sup.a) * (r.x - sup.a);
    const double e2 = -sup.beta * (r.x + sup.a) * (r.x + sup.a);
    const double hi = std::max(e1, e2);
    const double lo = std::min(e1, e2);
    const double log_sum = hi + std::log1p(std::exp(lo - hi));
    const double log_phi0 = 0.25 * std::log(alpha / std::numbers::pi) - 0.5 * alpha * r.y * r.y;
    return std::log(sup.norm() / std::sqrt(2.0)) + log_sum + log_phi0;
}

/// Initial wavefunction in polar form: real everywhere (S = 0), amplitude the
/// symmetric two-Gaussian superposition times the bath ground state.
inline PolarValue initial_wavefunction(const PhysicalParams& p, const SuperpositionParams& sup,
                                       const Vec2& r) {
    return {std::exp(initial_log_amplitude(p, sup, r)), 0.0};
}

/// Probability density of the initial state.
inline double initial_density(const PhysicalParams& p, const SuperpositionParams& sup,
                              const Vec2& r) {
    return std::exp(2.0 * initial_log_amplitude(p, sup, r));
}

/// Peak of the initial probability density. The maximum sits on the y = 0
/// line near x = +-a; found by a fine deterministic scan.
inline double initial_peak_density(const PhysicalParams& p, const SuperpositionParams& sup) {
    double peak = 0.0;
    for (int i = 0; i <= 30000; ++i) {
        const double x = -1.5 * sup.a + i * (3.0 * sup.a / 30000.0);
        peak = std::max(peak, initial_density(p, sup, {x, 0.0}));
    }
    return peak;
}

/// Slope angle of the coupled potential's valley floor y*(x) = -(c/k) x,
/// in degrees. Undefined (error) for the uncoupled case.
inline double valley_direction(const PhysicalParams& p, const CaseSelector& cs) {
    if (!cs.coupled)
        throw ConfigError("valley_direction: undefined for the uncoupled case");
    const double k = p.stiffness();
    if (!(k > 0.0)) throw ConfigError("valley_direction: requires k > 0");
    return std::atan(-p.c / k) * 180.0 / std::numbers::pi;
}

}  // namespace qhd
