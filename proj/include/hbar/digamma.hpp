#pragma once

#include <array>
#include <cmath>
#include <complex>

#include "hbar/error.hpp"

namespace hbar {

// Complex digamma: upward recurrence psi(z) = psi(z + 1) - 1/z until Re z >= 10,
// then the Stirling series ln z - 1/(2z) - sum B_2k / (2k z^2k) with 8 terms.
inline std::complex<double> digamma(std::complex<double> z) {
    // B_2k / (2k) for k = 1..8
    static constexpr std::array<double, 8> kCoeff = {
        1.0 / 12.0,        -1.0 / 120.0,     1.0 / 252.0,    -1.0 / 240.0,
        1.0 / 132.0,       -691.0 / 32760.0, 1.0 / 12.0,     -3617.0 / 8160.0,
    };
    if (z.imag() == 0.0 && z.real() <= 0.0 && z.real() == std::floor(z.real()))
        throw DegenerateEvaluation("digamma: pole at non-positive integer");

    std::complex<double> shift{0.0, 0.0};
    while (z.real() < 10.0) {
        shift -= 1.0 / z;
        z += 1.0;
    }
    const std::complex<double> inv = 1.0 / z;
    const std::complex<double> inv2 = inv * inv;
    std::complex<double> series{0.0, 0.0};
    std::complex<double> power = inv2;
    for (double c : kCoeff) {
        series += c * power;
        power *= inv2;
    }
    return shift + std::log(z) - 0.5 * inv - series;
}

inline double digamma(double x) { return digamma(std::complex<double>(x, 0.0)).real(); }

}  // namespace hbar
