#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hbar/constants.hpp"
#include "hbar/error.hpp"

namespace hbar {

// Angular frequency in rad/s. Construct from hertz with from_hz; 2 pi appears only here.
struct AngularRate {
    double value = 0.0;

    static constexpr AngularRate from_hz(double hz) { return {kTwoPi * hz}; }
    constexpr double hz() const { return value / kTwoPi; }
};

struct CqadParams {
    AngularRate g0;
    AngularRate detuning;
    AngularRate kappa_qubit;
    double t1_qubit = 0.0;       // s
    double t2_star_qubit = 0.0;  // s
    double t1_phonon = 0.0;      // s
    double t2_star_phonon = 0.0; // s
};

struct PurcellResult {
    AngularRate rate;
    bool dispersive = true;  // |Delta| > 3 g0
};

inline PurcellResult inverse_purcell(AngularRate g0, AngularRate detuning, AngularRate kappa_qubit) {
    if (detuning.value == 0.0) throw ValidationError("inverse_purcell: detuning must be non-zero");
    if (!(g0.value >= 0.0) || !(kappa_qubit.value >= 0.0))
        throw ValidationError("inverse_purcell: g0 and kappa_qubit must be >= 0");
    const double r = g0.value / detuning.value;
    return {{r * r * kappa_qubit.value}, std::abs(detuning.value) > 3.0 * g0.value};
}

struct Cooperativities {
    double c_t1 = 0.0;
    double c_t2 = 0.0;
};

inline Cooperativities cooperativities(const CqadParams& p) {
    if (!(p.g0.value >= 0.0) || !(p.t1_qubit >= 0.0) || !(p.t1_phonon >= 0.0) || !(p.t2_star_qubit >= 0.0) ||
        !(p.t2_star_phonon >= 0.0))
        throw ValidationError("cooperativities: g0 and all times must be >= 0");
    const double g2 = p.g0.value * p.g0.value;
    return {4.0 * g2 * p.t1_qubit * p.t1_phonon, g2 * p.t2_star_qubit * p.t2_star_phonon};
}

inline double q_from_t1(double frequency_hz, double t1) {
    if (!(frequency_hz > 0.0) || !(t1 > 0.0)) throw ValidationError("q_from_t1: f and T1 must be > 0");
    return AngularRate::from_hz(frequency_hz).value * t1;
}

inline double t1_from_q(double frequency_hz, double q) {
    if (!(frequency_hz > 0.0) || !(q > 0.0)) throw ValidationError("t1_from_q: f and Q must be > 0");
    return q / AngularRate::from_hz(frequency_hz).value;
}

}  // namespace hbar
