#pragma once

// Per-layer potential/kinetic energies of a solved standing wave, normalized to a
// unit piezo stress amplitude, and the participation ratios built from them.

#include <cmath>
#include <string>
#include <vector>

#include "hbar/constants.hpp"
#include "hbar/error.hpp"
#include "hbar/stack_model.hpp"

namespace hbar {

struct LayerEnergy {
    double potential = 0.0;
    double kinetic = 0.0;
    double total() const { return potential + kinetic; }
};

struct ParticipationRecord {
    std::vector<std::string> names;
    std::vector<LayerEnergy> energies;
    std::vector<double> p_pot;
    std::vector<double> p_kin;
    std::vector<double> p_tot;

    std::size_t size() const { return p_tot.size(); }
};

// Closed-form layer integrals of T^2/(2 v Z) and Z u'^2/(2 v). Each layer contributes
// A^2 beta/Z -/+ A^2 S / (4 pi f Z) where S is the sine bracket of its phase span.
inline std::vector<LayerEnergy> layer_energies(const AcousticLine& line, const ModeSolution& mode) {
    if (mode.amplitudes.size() != line.count)
        throw ValidationError("layer_energies: mode amplitudes do not match the stack layer count");
    if (!(mode.frequency > 0.0)) throw ValidationError("layer_energies: mode frequency must be > 0");
    for (double a : mode.amplitudes)
        if (!std::isfinite(a)) throw DegenerateEvaluation("layer_energies: non-finite mode amplitude");

    const double f = mode.frequency;
    const double four_pi_f = 2.0 * kTwoPi * f;
    const InterfaceState s = interface_state(line, f);

    std::vector<double> brackets(line.count);
    brackets[0] = std::sin(2.0 * s.piezo_phase);
    if (line.count == 3) {
        // Product form of sin(2 delta) - sin(2 gamma); the difference cancels for thin defects.
        const double span = kTwoPi * f * line.transit[1];
        brackets[1] = 2.0 * std::cos(s.defect_phase + s.gamma) * std::sin(span);
        brackets[2] = std::sin(2.0 * s.bulk_phase);
    } else if (line.count == 2) {
        brackets[1] = std::sin(2.0 * s.bulk_phase);
    }

    std::vector<LayerEnergy> out(line.count);
    for (std::size_t i = 0; i < line.count; ++i) {
        const double a2 = mode.amplitudes[i] * mode.amplitudes[i];
        const double z = line.impedance[i];
        const double first = a2 * line.transit[i] / z;
        const double second = a2 * brackets[i] / (z * four_pi_f);
        out[i].potential = first - second;
        out[i].kinetic = first + second;
    }
    return out;
}

inline std::vector<LayerEnergy> layer_energies(const StackModel& stack, const ModeSolution& mode) {
    return layer_energies(stack.line(), mode);
}

namespace detail {
inline std::vector<double> normalized(const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    if (!(sum > 0.0)) throw DegenerateEvaluation("participation: total energy is not positive");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / sum;
    return out;
}
}  // namespace detail

inline ParticipationRecord participation_ratios(const AcousticLine& line, const ModeSolution& mode,
                                                std::vector<std::string> names = {}) {
    ParticipationRecord rec;
    rec.energies = layer_energies(line, mode);
    if (names.size() != line.count) {
        static const char* kDefault[3][3] = {{"P", "", ""}, {"P", "B", ""}, {"P", "D", "B"}};
        names.clear();
        for (std::size_t i = 0; i < line.count; ++i) names.emplace_back(kDefault[line.count - 1][i]);
    }
    rec.names = std::move(names);
    std::vector<double> pot, kin, tot;
    for (const auto& e : rec.energies) {
        pot.push_back(e.potential);
        kin.push_back(e.kinetic);
        tot.push_back(e.total());
    }
    rec.p_pot = detail::normalized(pot);
    rec.p_kin = detail::normalized(kin);
    rec.p_tot = detail::normalized(tot);
    return rec;
}

inline ParticipationRecord participation_ratios(const StackModel& stack, const ModeSolution& mode) {
    std::vector<std::string> names;
    for (const auto& layer : stack.layers()) names.push_back(layer.name);
    return participation_ratios(stack.line(), mode, std::move(names));
}

}  // namespace hbar
