#pragma once

#include <numbers>

namespace hbar {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// CODATA 2018 exact values.
struct PhysicalConstants {
    double planck = 6.62607015e-34;    // J s
    double boltzmann = 1.380649e-23;   // J/K

    constexpr double reduced_planck() const { return planck / kTwoPi; }
};

inline constexpr PhysicalConstants kCodata{};

// Unit conversions used by the configuration loader.
namespace units {
inline constexpr double um = 1e-6;
inline constexpr double nm = 1e-9;
inline constexpr double mm = 1e-3;
inline constexpr double km_per_s = 1e3;
inline constexpr double g_per_cm3 = 1e3;
}  // namespace units

}  // namespace hbar
