#pragma once

// Analytic loss channels of a layered HBAR mode and their additive composition.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hbar/constants.hpp"
#include "hbar/error.hpp"
#include "hbar/participation.hpp"
#include "hbar/stack_model.hpp"
#include "hbar/tls.hpp"

namespace hbar {

struct DomeGeometry {
    double radius_of_curvature = 0.0;  // R, m
    double dome_radius = 0.0;          // r_d, m
    double total_thickness = 0.0;      // L, m
    double anisotropy = 1.5;           // chi, sapphire
};

inline void validate(const DomeGeometry& g) {
    if (!(g.total_thickness > 0.0)) throw ValidationError("dome: total_thickness must be > 0");
    if (!(g.radius_of_curvature > g.total_thickness))
        throw ValidationError("dome: radius_of_curvature must exceed total_thickness");
    if (!(g.dome_radius > 0.0)) throw ValidationError("dome: dome_radius must be > 0");
    if (!(g.anisotropy > 0.0)) throw ValidationError("dome: anisotropy must be > 0");
}

struct ThermalLossParams {
    double akhiezer_product = 0.0;  // C_v gamma^2 tau_th
    double grueneisen = 0.0;
};

inline double specularity(double sigma, double wavelength, double incidence = 0.0) {
    if (!(sigma >= 0.0)) throw ValidationError("specularity: sigma must be >= 0");
    if (!(wavelength > 0.0)) throw ValidationError("specularity: wavelength must be > 0");
    const double x = 4.0 * kPi * sigma * std::cos(incidence) / wavelength;
    return std::exp(-x * x);
}

// Fill layer roughnesses from the three measured surfaces. The piezo-defect
// boundary is treated as smooth and the interface roughness sits on the
// defect-bulk boundary (both of its faces). Two-layer stacks carry the interface
// once, on the piezo bottom.
inline std::vector<Layer> assign_roughness(std::vector<Layer> layers, double top, double interface,
                                           double back) {
    switch (layers.size()) {
    case 1:
        layers[0].roughness_top = top;
        layers[0].roughness_bottom = back;
        break;
    case 2:
        layers[0].roughness_top = top;
        layers[0].roughness_bottom = interface;
        layers[1].roughness_top = 0.0;
        layers[1].roughness_bottom = back;
        break;
    case 3:
        layers[0].roughness_top = top;
        layers[0].roughness_bottom = 0.0;
        layers[1].roughness_top = 0.0;
        layers[1].roughness_bottom = interface;
        layers[2].roughness_top = interface;
        layers[2].roughness_bottom = back;
        break;
    default:
        throw ValidationError("assign_roughness: stack must have 1 to 3 layers");
    }
    return layers;
}

// 1/Q_{X,sigma} = 4 pi f (sigma_1^2 + sigma_2^2) / (t v); zero roughness gives zero loss.
inline double layer_scatter_q_inv(const Layer& layer, double f) {
    const double s2 = layer.roughness_top * layer.roughness_top + layer.roughness_bottom * layer.roughness_bottom;
    return 2.0 * kTwoPi * f * s2 / (layer.thickness * layer.velocity);
}

struct ScatterLoss {
    std::vector<double> per_layer_q_inv;  // 1/Q_{X,sigma}
    std::vector<double> weighted;         // p_X / Q_{X,sigma}
    double total = 0.0;
};

inline ScatterLoss q_scatter(const StackModel& stack, const ModeSolution& mode,
                             const ParticipationRecord& participation) {
    if (participation.size() != stack.size())
        throw ValidationError("q_scatter: participation record does not match the stack");
    ScatterLoss out;
    for (std::size_t i = 0; i < stack.size(); ++i) {
        const double q_inv = layer_scatter_q_inv(stack.layers()[i], mode.frequency);
        out.per_layer_q_inv.push_back(q_inv);
        out.weighted.push_back(participation.p_tot[i] * q_inv);
        out.total += out.weighted.back();
    }
    return out;
}

inline double q_absorption(const ParticipationRecord& participation, const std::vector<Layer>& layers) {
    if (participation.size() != layers.size())
        throw ValidationError("q_absorption: participation record does not match the layers");
    double sum = 0.0;
    for (std::size_t i = 0; i < layers.size(); ++i) sum += participation.p_tot[i] * layers[i].q_mech_inv;
    return sum;
}

struct ModeWaist {
    double waist = 0.0;           // w0, m
    double rayleigh_length = 0.0; // z_R, m
    bool paraxial_ok = true;      // R >= 5 L
};

inline ModeWaist mode_waist(const DomeGeometry& g, double velocity, double f) {
    validate(g);
    if (!(f > 0.0) || !(velocity > 0.0)) throw ValidationError("mode_waist: f and v must be > 0");
    ModeWaist out;
    const double L = g.total_thickness;
    const double R = g.radius_of_curvature;
    out.waist = std::pow(L * R * velocity * velocity / (g.anisotropy * kPi * kPi * f * f), 0.25);
    out.rayleigh_length = kPi * out.waist * out.waist * g.anisotropy * f / velocity;
    out.paraxial_ok = R >= 5.0 * L;
    return out;
}

// Values at or above this are "negligible"; overflow is reported as the cap.
inline constexpr double kNegligibleQ = 1e30;
inline constexpr double kQCap = 1e300;

inline double q_diffraction(const DomeGeometry& g, double velocity, double f) {
    const ModeWaist w = mode_waist(g, velocity, f);
    const double exponent = 2.0 * g.dome_radius * g.dome_radius / (w.waist * w.waist);
    const double prefactor = 2.0 * kTwoPi * f * g.total_thickness / velocity;
    const double log_q = std::log(prefactor) + exponent;
    if (log_q >= std::log(kQCap)) return kQCap;
    return prefactor * std::exp(exponent);
}

inline double transverse_mode_spacing(double length, double velocity, double rayleigh_length) {
    if (!(length > 0.0) || !(velocity > 0.0) || !(rayleigh_length > 0.0))
        throw ValidationError("transverse_mode_spacing: inputs must be > 0");
    return velocity / (kTwoPi * length) * std::atan(length / rayleigh_length);
}

struct PhononPhononLoss {
    double akhiezer = 0.0;
    double landau_rumer = 0.0;
    double total() const { return akhiezer + landau_rumer; }
};

inline PhononPhononLoss q_phonon_phonon(double temperature, double f, double density, double velocity,
                                        const ThermalLossParams& params,
                                        const PhysicalConstants& c = kCodata) {
    if (!(temperature >= 0.0)) throw ValidationError("q_phonon_phonon: temperature must be >= 0");
    if (!(density > 0.0) || !(velocity > 0.0)) throw ValidationError("q_phonon_phonon: rho and v must be > 0");
    if (!(params.akhiezer_product >= 0.0) || !(params.grueneisen >= 0.0))
        throw ValidationError("q_phonon_phonon: thermal parameters must be >= 0");
    PhononPhononLoss out;
    out.akhiezer = params.akhiezer_product * kTwoPi * f * temperature / (density * velocity * velocity);
    const double kt = c.boltzmann * temperature;
    const double pi5 = kPi * kPi * kPi * kPi * kPi;
    const double g2 = params.grueneisen * params.grueneisen;
    out.landau_rumer = pi5 * g2 * kt * kt * kt * kt /
                       (15.0 * density * std::pow(velocity, 5) * c.planck * c.planck * c.planck);
    return out;
}

struct Environment {
    double temperature = 0.0;                   // K
    std::optional<double> phonon_number;        // mean phonon number; nullopt with input_power set
    std::optional<double> input_power;          // W, used with external_q to derive n
    std::optional<double> external_q;           // Q_e for the phonon-number estimate
};

struct BudgetOptions {
    std::optional<DomeGeometry> geometry;
    bool include_diffraction = false;  // negligible above 2 GHz for domed samples
    std::optional<double> n_c;         // TLS channel is off without it
    std::optional<ThermalLossParams> thermal;
    double external_q_inv = 0.0;       // fixed extra loss, e.g. antenna metal
    PhysicalConstants constants = kCodata;
};

struct LayerBudget {
    std::string name;
    double scatter = 0.0;
    double absorption = 0.0;
    double tls = 0.0;
};

struct LossBudget {
    long index = 0;
    double frequency = 0.0;
    double scatter = 0.0;
    double absorption = 0.0;
    double tls = 0.0;
    double diffraction = 0.0;
    double phonon_phonon = 0.0;
    double external = 0.0;
    double total = 0.0;
    double phonon_number = std::numeric_limits<double>::infinity();
    std::vector<LayerBudget> per_layer;

    double channel_sum() const { return scatter + absorption + tls + diffraction + phonon_phonon + external; }
};

namespace detail {
inline double mean_phonon_number(double q_i, double q_e, double f, double power, const PhysicalConstants& c) {
    const double w = kTwoPi * f;
    const double ke = w / q_e;
    const double kt = ke + w / q_i;
    return 4.0 * ke / (kt * kt * c.reduced_planck() * w) * power;
}
}  // namespace detail

inline LossBudget compose_budget(const StackModel& stack, const ModeSolution& mode,
                                 const ParticipationRecord& participation, const Environment& env,
                                 const BudgetOptions& opt = {}) {
    if (participation.size() != stack.size())
        throw ValidationError("compose_budget: participation record does not match the stack");
    LossBudget b;
    b.index = mode.index;
    b.frequency = mode.frequency;

    const ScatterLoss scatter = q_scatter(stack, mode, participation);
    b.scatter = scatter.total;
    b.absorption = q_absorption(participation, stack.layers());
    b.external = opt.external_q_inv;

    if (opt.include_diffraction) {
        if (!opt.geometry) throw ValidationError("compose_budget: diffraction requested without dome geometry");
        const double q = q_diffraction(*opt.geometry, stack.bulk().velocity, mode.frequency);
        b.diffraction = q >= kQCap ? 0.0 : 1.0 / q;
    }
    if (opt.thermal) {
        const auto& bulk = stack.bulk();
        b.phonon_phonon =
            q_phonon_phonon(env.temperature, mode.frequency, bulk.density, bulk.velocity, *opt.thermal, opt.constants)
                .total();
    }

    std::vector<double> tangents;
    for (const auto& layer : stack.layers()) tangents.push_back(layer.q_tls_inv);
    const double tls_tangent = tls_tangent_composite(participation.p_pot, tangents);

    double tls_scale = 0.0;  // tanh / sqrt(1 + n/n_c)
    if (env.phonon_number) b.phonon_number = *env.phonon_number;
    if (opt.n_c && tls_tangent > 0.0) {
        TlsParams unit{1.0, *opt.n_c, 0.0};
        const double other = b.scatter + b.absorption + b.diffraction + b.phonon_phonon + b.external;
        if (env.phonon_number) {
            b.phonon_number = *env.phonon_number;
            tls_scale = tls_saturated_loss(unit, b.phonon_number, env.temperature, mode.frequency, opt.constants);
        } else if (env.input_power && env.external_q) {
            // n depends on Q_i, which depends on the TLS loss; the map is a contraction.
            double n = 0.0;
            for (int it = 0; it < 200; ++it) {
                tls_scale = tls_saturated_loss(unit, n, env.temperature, mode.frequency, opt.constants);
                const double q_inv = other + tls_tangent * tls_scale;
                const double next = detail::mean_phonon_number(1.0 / q_inv, *env.external_q, mode.frequency,
                                                               *env.input_power, opt.constants);
                if (std::abs(next - n) <= 1e-12 * std::max(1.0, next)) {
                    n = next;
                    break;
                }
                n = next;
            }
            b.phonon_number = n;
            tls_scale = tls_saturated_loss(unit, n, env.temperature, mode.frequency, opt.constants);
        } else {
            b.phonon_number = 0.0;
            tls_scale = tls_thermal_factor(env.temperature, mode.frequency, opt.constants);
        }
        b.tls = tls_tangent * tls_scale;
    }

    for (std::size_t i = 0; i < stack.size(); ++i) {
        LayerBudget lb;
        lb.name = stack.layers()[i].name;
        lb.scatter = scatter.weighted[i];
        lb.absorption = participation.p_tot[i] * stack.layers()[i].q_mech_inv;
        lb.tls = participation.p_pot[i] * stack.layers()[i].q_tls_inv * tls_scale;
        b.per_layer.push_back(lb);
    }
    b.total = b.channel_sum();
    return b;
}

}  // namespace hbar
