#pragma once

// Resonant two-level-system end formulas: power/temperature saturation of the
// loss, the dispersive temperature shift, participation-weighted loss tangents and
// the dissipative/reactive variance ratio.

#include <cmath>
#include <complex>
#include <span>

#include "hbar/constants.hpp"
#include "hbar/digamma.hpp"
#include "hbar/error.hpp"

namespace hbar {

struct TlsParams {
    double q_tls_inv = 0.0;  // effective zero-temperature TLS loss tangent
    double n_c = 1.0;        // critical phonon number
    double omega_max = 0.0;  // rad/s, TLS cutoff (variance ratio only)
};

inline void validate(const TlsParams& p) {
    if (!(p.q_tls_inv >= 0.0)) throw ValidationError("tls: q_tls_inv must be >= 0");
    if (!(p.n_c > 0.0)) throw ValidationError("tls: n_c must be > 0");
    if (!(p.omega_max >= 0.0)) throw ValidationError("tls: omega_max must be >= 0");
}

// tanh(h f / 2 k_B T), with T = 0 taken as the limit 1.
inline double tls_thermal_factor(double temperature, double f, const PhysicalConstants& c = kCodata) {
    if (temperature <= 0.0) return 1.0;
    return std::tanh(c.planck * f / (2.0 * c.boltzmann * temperature));
}

// TLS part only: q_tls_inv tanh(hf/2k_BT) / sqrt(1 + n/n_c).
inline double tls_saturated_loss(const TlsParams& p, double phonon_number, double temperature, double f,
                                 const PhysicalConstants& c = kCodata) {
    validate(p);
    if (!(phonon_number >= 0.0)) throw ValidationError("tls: phonon number must be >= 0");
    if (!(f > 0.0)) throw ValidationError("tls: frequency must be > 0");
    if (std::isinf(phonon_number)) return 0.0;
    return p.q_tls_inv * tls_thermal_factor(temperature, f, c) / std::sqrt(1.0 + phonon_number / p.n_c);
}

inline double tls_q_inv(const TlsParams& p, double phonon_number, double temperature, double f,
                        double background_q_inv, const PhysicalConstants& c = kCodata) {
    return tls_saturated_loss(p, phonon_number, temperature, f, c) + background_q_inv;
}

// Re psi(1/2 + y/i) - ln y, y = h f / (2 pi k_B T). Tends to 1/(24 y^2) for T -> 0.
inline double tls_shift_kernel(double temperature, double f, const PhysicalConstants& c = kCodata) {
    if (!(temperature > 0.0)) throw ValidationError("tls_fractional_shift: temperature must be > 0");
    if (!(f > 0.0)) throw ValidationError("tls_fractional_shift: frequency must be > 0");
    const double y = c.planck * f / (kTwoPi * c.boltzmann * temperature);
    return digamma(std::complex<double>(0.5, -y)).real() - std::log(y);
}

inline double tls_fractional_shift(double q_tls_inv, double temperature, double f,
                                   const PhysicalConstants& c = kCodata) {
    return q_tls_inv / kPi * tls_shift_kernel(temperature, f, c);
}

// Loss tangent from the shift measured between two temperatures.
inline double invert_tls_shift(double shift_difference, double t_low, double t_high, double f,
                               const PhysicalConstants& c = kCodata) {
    const double span = tls_shift_kernel(t_high, f, c) - tls_shift_kernel(t_low, f, c);
    if (span == 0.0) throw DegenerateEvaluation("invert_tls_shift: temperatures give identical kernels");
    return kPi * shift_difference / span;
}

inline double tls_tangent_composite(std::span<const double> p_pot, std::span<const double> tangents) {
    if (p_pot.size() != tangents.size())
        throw ValidationError("tls_tangent_composite: participation and tangent sizes differ");
    double sum = 0.0;
    for (std::size_t i = 0; i < p_pot.size(); ++i) sum += p_pot[i] * tangents[i];
    return sum;
}

inline double variance_ratio(double omega_max, double omega_r) {
    if (!(omega_r > 0.0) || !(omega_max > omega_r))
        throw ValidationError("variance_ratio: requires omega_max > omega_r > 0");
    const double l = std::log(omega_max / omega_r);
    return 4.0 / (kPi * kPi) * l * l;
}

// Inverse of variance_ratio on the branch omega_max > omega_r.
inline double omega_max_from_variance_ratio(double ratio, double omega_r) {
    if (!(ratio > 0.0) || !(omega_r > 0.0))
        throw ValidationError("omega_max_from_variance_ratio: ratio and omega_r must be > 0");
    return omega_r * std::exp(0.5 * kPi * std::sqrt(ratio));
}

}  // namespace hbar
