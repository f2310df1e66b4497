#pragma once

// Layered bulk acoustic resonator modeled as a free-free one-dimensional
// acoustic transmission line (piezo -> optional defect -> bulk, top to bottom).
//
// Coordinates follow the standing-wave convention T_X(z) = 2 T_X sin(k_X (z + delta_X)),
// v_X(z) = 2 (T_X / Z_X) cos(k_X (z + delta_X)) with the origin on the defect-bulk
// interface. Every quantity the mode condition needs is a transit time
// beta_X = t_X / v_X or an impedance ratio, so the solver works on an AcousticLine
// that carries only those numbers.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hbar/constants.hpp"
#include "hbar/error.hpp"

namespace hbar {

struct Layer {
    std::string name;
    double thickness = 0.0;         // m
    double velocity = 0.0;          // m/s
    double density = 0.0;           // kg/m^3
    double roughness_top = 0.0;     // m, RMS
    double roughness_bottom = 0.0;  // m, RMS
    double q_mech_inv = 0.0;        // intrinsic absorption loss tangent
    double q_tls_inv = 0.0;         // TLS loss tangent

    double impedance() const { return density * velocity; }
    double transit_time() const { return thickness / velocity; }
};

inline void validate(const Layer& layer) {
    auto fail = [&](const char* field) {
        throw ValidationError("layer '" + layer.name + "': invalid " + field);
    };
    if (!(layer.thickness > 0.0) || !std::isfinite(layer.thickness)) fail("thickness");
    if (!(layer.velocity > 0.0) || !std::isfinite(layer.velocity)) fail("velocity");
    if (!(layer.density > 0.0) || !std::isfinite(layer.density)) fail("density");
    if (!(layer.roughness_top >= 0.0)) fail("roughness_top");
    if (!(layer.roughness_bottom >= 0.0)) fail("roughness_bottom");
    if (!(layer.q_mech_inv >= 0.0)) fail("q_mech_inv");
    if (!(layer.q_tls_inv >= 0.0)) fail("q_tls_inv");
}

inline double acoustic_impedance(const Layer& layer) { return layer.density * layer.velocity; }

// Transit times and impedances of a 1-3 layer line. Impedances only matter up to
// a common scale.
struct AcousticLine {
    std::size_t count = 0;
    std::array<double, 3> transit{};
    std::array<double, 3> impedance{};

    double round_trip() const {
        double sum = 0.0;
        for (std::size_t i = 0; i < count; ++i) sum += 2.0 * transit[i];
        return sum;
    }
    double fsr_mean() const { return 1.0 / round_trip(); }
    bool has_defect() const { return count == 3; }
};

inline void validate(const AcousticLine& line) {
    if (line.count < 1 || line.count > 3)
        throw ValidationError("acoustic line must have 1 to 3 layers");
    for (std::size_t i = 0; i < line.count; ++i) {
        if (!(line.transit[i] >= 0.0) || !(line.impedance[i] > 0.0))
            throw ValidationError("acoustic line layer " + std::to_string(i) +
                                  ": transit time must be >= 0 and impedance > 0");
    }
    if (!(line.round_trip() > 0.0)) throw ValidationError("acoustic line has zero total transit time");
}

class StackModel {
public:
    StackModel() = default;

    explicit StackModel(std::vector<Layer> layers, double gouy_shift = 0.0)
        : layers_(std::move(layers)), gouy_shift_(gouy_shift) {
        if (layers_.empty() || layers_.size() > 3)
            throw ValidationError("stack must have between 1 and 3 layers, got " +
                                  std::to_string(layers_.size()));
        for (const auto& layer : layers_) validate(layer);
        if (!std::isfinite(gouy_shift_)) throw ValidationError("gouy_shift must be finite");
        fsr_mean_ = line().fsr_mean();
    }

    const std::vector<Layer>& layers() const { return layers_; }
    std::size_t size() const { return layers_.size(); }
    bool has_defect() const { return layers_.size() == 3; }
    double gouy_shift() const { return gouy_shift_; }
    double fsr_mean() const { return fsr_mean_; }

    const Layer& piezo() const { return layers_.front(); }
    const Layer& bulk() const { return layers_.back(); }
    const Layer& defect() const {
        if (!has_defect()) throw ValidationError("stack has no defect layer");
        return layers_[1];
    }

    double total_thickness() const {
        double sum = 0.0;
        for (const auto& layer : layers_) sum += layer.thickness;
        return sum;
    }

    AcousticLine line() const {
        AcousticLine line;
        line.count = layers_.size();
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            line.transit[i] = layers_[i].transit_time();
            line.impedance[i] = layers_[i].impedance();
        }
        return line;
    }

private:
    std::vector<Layer> layers_;
    double gouy_shift_ = 0.0;
    double fsr_mean_ = 0.0;
};

// Phases of the standing wave at frequency f. For two layers the "defect" is the
// bulk itself at the interface, so gamma = -theta and eta = 1.
struct InterfaceState {
    double piezo_phase = 0.0;   // alpha = 2 pi f beta_P
    double bulk_phase = 0.0;    // theta = 2 pi f beta_B
    double defect_phase = 0.0;  // k_D delta_D, continuous in f
    double gamma = 0.0;         // k_D (delta_D - t_D)
    double eta = 1.0;           // T_D / T_B
    double reference_impedance = 1.0;  // Z_D (3 layers) or Z_B (2 layers)
};

namespace detail {

// k_D delta_D on the branch that is continuous in f and starts at 0 for f -> 0.
// Principal arctan plus the multiple of pi picked by the nearest half-period of
// the bulk phase; the result keeps T_D = +eta T_B.
inline double continuous_defect_phase(double bulk_phase, double z_defect, double z_bulk) {
    const double m = std::nearbyint(bulk_phase / kPi);
    const double reduced = bulk_phase - m * kPi;
    return -m * kPi + std::atan2(-z_bulk * std::sin(reduced), z_defect * std::cos(reduced));
}

}  // namespace detail

inline InterfaceState interface_state(const AcousticLine& line, double f) {
    InterfaceState s;
    const double w = kTwoPi * f;
    if (line.count == 1) {
        s.piezo_phase = w * line.transit[0];
        s.reference_impedance = line.impedance[0];
        return s;
    }
    const std::size_t b = line.count - 1;
    s.piezo_phase = w * line.transit[0];
    s.bulk_phase = w * line.transit[b];
    if (line.count == 2) {
        s.defect_phase = -s.bulk_phase;
        s.gamma = -s.bulk_phase;
        s.eta = 1.0;
        s.reference_impedance = line.impedance[1];
        return s;
    }
    const double zd = line.impedance[1];
    const double zb = line.impedance[2];
    s.defect_phase = detail::continuous_defect_phase(s.bulk_phase, zd, zb);
    s.gamma = s.defect_phase - w * line.transit[1];
    s.eta = std::hypot(zd * std::cos(s.bulk_phase), zb * std::sin(s.bulk_phase)) / zb;
    s.reference_impedance = zd;
    return s;
}

// Pole-free form of the mode condition: the tangent equation multiplied through
// by the cosines, (Z_P/Z_ref) sin(alpha) cos(gamma) - cos(alpha) sin(gamma).
// Zeros are exactly the free-free longitudinal modes.
inline double characteristic_residual(const AcousticLine& line, double f) {
    if (!(f > 0.0)) throw ValidationError("characteristic_residual: frequency must be > 0");
    const InterfaceState s = interface_state(line, f);
    if (line.count == 1) return std::sin(s.piezo_phase);
    const double ratio = line.impedance[0] / s.reference_impedance;
    return ratio * std::sin(s.piezo_phase) * std::cos(s.gamma) -
           std::cos(s.piezo_phase) * std::sin(s.gamma);
}

inline double characteristic_residual(const StackModel& stack, double f) {
    return characteristic_residual(stack.line(), f);
}

struct DefectModeParams {
    double delta_d = 0.0;  // m
    double eta = 1.0;
    double xi = 0.0;
};

inline DefectModeParams defect_mode_params(const StackModel& stack, double f) {
    if (!stack.has_defect()) throw ValidationError("defect_mode_params requires a 3-layer stack");
    if (!(f > 0.0)) throw ValidationError("defect_mode_params: frequency must be > 0");
    const InterfaceState s = interface_state(stack.line(), f);
    const double sin_gamma = std::sin(s.gamma);
    if (std::abs(sin_gamma) < 1e-12) {
        std::ostringstream msg;
        msg << "xi is undefined at f = " << f << " Hz (sin(k_D (delta_D - t_D)) = 0)";
        throw DegenerateEvaluation(msg.str());
    }
    DefectModeParams out;
    out.delta_d = s.defect_phase * stack.defect().velocity / (kTwoPi * f);
    out.eta = s.eta;
    out.xi = std::sin(s.piezo_phase) / sin_gamma;
    return out;
}

struct ModeSolution {
    double frequency = 0.0;     // Hz
    long index = 0;
    double defect_phase = 0.0;  // k_D delta_D
    double delta_d = std::numeric_limits<double>::quiet_NaN();  // m, 3-layer stacks only
    double eta = 1.0;
    double xi = 1.0;
    std::vector<double> amplitudes;  // T_X / T_P per layer
};

inline long assign_mode_index(double f, double fsr) {
    return static_cast<long>(std::floor((f + 0.5 * fsr) / fsr));
}

inline std::vector<long> assign_mode_index(std::span<const double> frequencies, double fsr) {
    if (!(fsr > 0.0)) throw ValidationError("assign_mode_index: FSR must be > 0");
    std::vector<long> out;
    out.reserve(frequencies.size());
    for (double f : frequencies) {
        if (!(f >= 0.0)) throw ValidationError("assign_mode_index: frequencies must be >= 0");
        out.push_back(assign_mode_index(f, fsr));
    }
    return out;
}

// Mode record at a frequency that is already a root. xi comes from whichever of
// the two boundary-condition forms has the better-conditioned denominator.
inline ModeSolution make_mode(const AcousticLine& line, double f, double index_fsr) {
    ModeSolution m;
    m.frequency = f;
    m.index = assign_mode_index(f, index_fsr);
    if (line.count == 1) {
        m.amplitudes = {1.0};
        return m;
    }
    const InterfaceState s = interface_state(line, f);
    const double sg = std::sin(s.gamma);
    const double cg = std::cos(s.gamma);
    if (std::abs(sg) >= std::abs(cg)) {
        m.xi = std::sin(s.piezo_phase) / sg;
    } else {
        m.xi = (s.reference_impedance / line.impedance[0]) * std::cos(s.piezo_phase) / cg;
    }
    m.eta = s.eta;
    m.defect_phase = s.defect_phase;
    if (line.count == 2) {
        m.amplitudes = {1.0, m.xi};
    } else {
        m.amplitudes = {1.0, m.xi, m.xi / m.eta};
    }
    return m;
}

struct SolveOptions {
    double scan_fraction = 1.0 / 20.0;    // scan step as a fraction of the mean FSR
    double merge_fraction = 1.0 / 100.0;  // roots closer than this * FSR are merged
    double relative_tolerance = 1e-15;
    int max_iterations = 200;
    double index_fsr = 0.0;  // FSR used for indexing; 0 selects the line's mean FSR
};

// Bisection on a sign-changing bracket.
template <class Residual>
double bisect_root(Residual&& residual, double a, double b, double fa, double relative_tolerance,
                   int max_iterations) {
    for (int it = 0; it < max_iterations; ++it) {
        const double mid = 0.5 * (a + b);
        if (b - a <= relative_tolerance * std::abs(mid)) return mid;
        const double fm = residual(mid);
        if (fm == 0.0) return mid;
        if ((fm < 0.0) == (fa < 0.0)) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    std::ostringstream msg;
    msg.precision(15);
    msg << "root refinement did not converge in bracket [" << a << ", " << b << "] Hz";
    throw ConvergenceError(msg.str());
}

inline std::vector<double> find_roots(const AcousticLine& line, double f_min, double f_max,
                                      const SolveOptions& opt = {}) {
    validate(line);
    if (!(f_min > 0.0)) throw ValidationError("solve_modes: f_min must be > 0");
    std::vector<double> roots;
    if (!(f_max > f_min)) return roots;

    const double fsr = line.fsr_mean();
    const double step = fsr * opt.scan_fraction;
    const auto n_steps = static_cast<std::size_t>(std::ceil((f_max - f_min) / step));
    const double h = (f_max - f_min) / static_cast<double>(n_steps);
    auto residual = [&](double f) { return characteristic_residual(line, f); };

    auto push = [&](double r) {
        if (!roots.empty() && r - roots.back() < fsr * opt.merge_fraction) return;
        roots.push_back(r);
    };

    double fa = f_min;
    double ra = residual(fa);
    if (ra == 0.0) push(fa);
    for (std::size_t i = 1; i <= n_steps; ++i) {
        const double fb = (i == n_steps) ? f_max : f_min + static_cast<double>(i) * h;
        const double rb = residual(fb);
        if (rb == 0.0) {
            push(fb);
        } else if (ra != 0.0 && ((ra < 0.0) != (rb < 0.0))) {
            push(bisect_root(residual, fa, fb, ra, opt.relative_tolerance, opt.max_iterations));
        }
        fa = fb;
        ra = rb;
    }
    return roots;
}

inline std::vector<ModeSolution> solve_modes(const AcousticLine& line, double f_min, double f_max,
                                             const SolveOptions& opt = {}) {
    const double index_fsr = opt.index_fsr > 0.0 ? opt.index_fsr : line.fsr_mean();
    std::vector<ModeSolution> modes;
    for (double f : find_roots(line, f_min, f_max, opt)) modes.push_back(make_mode(line, f, index_fsr));
    return modes;
}

inline std::vector<ModeSolution> solve_modes(const StackModel& stack, double f_min, double f_max,
                                             const SolveOptions& opt = {}) {
    auto modes = solve_modes(stack.line(), f_min, f_max, opt);
    if (stack.has_defect()) {
        const double vd = stack.defect().velocity;
        for (auto& m : modes) m.delta_d = m.defect_phase * vd / (kTwoPi * m.frequency);
    }
    return modes;
}

}  // namespace hbar
