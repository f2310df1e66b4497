#pragma once

// Reflection-trace fitting for a single mechanical mode seen through the antenna:
// background removal, the asymmetric (Fano) reflection model and the mean phonon
// number at a given drive power.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include "hbar/constants.hpp"
#include "hbar/error.hpp"
#include "hbar/optim.hpp"

namespace hbar {

using Complex = std::complex<double>;

struct ComplexTrace {
    std::vector<double> frequency;  // Hz, strictly increasing
    std::vector<Complex> response;
    double input_power = 0.0;       // W at the antenna port
};

inline void validate(const ComplexTrace& t) {
    if (t.frequency.size() != t.response.size())
        throw ValidationError("trace: frequency and response lengths differ");
    if (t.frequency.size() < 16)
        throw ValidationError("trace: need at least 16 samples, got " + std::to_string(t.frequency.size()));
    for (std::size_t i = 0; i < t.frequency.size(); ++i) {
        if (!std::isfinite(t.frequency[i]) || !std::isfinite(t.response[i].real()) ||
            !std::isfinite(t.response[i].imag()))
            throw ValidationError("trace: non-finite sample at row " + std::to_string(i));
        if (i > 0 && !(t.frequency[i] > t.frequency[i - 1]))
            throw ValidationError("trace: frequencies must be strictly increasing (row " + std::to_string(i) + ")");
    }
    if (!(t.frequency.front() > 0.0)) throw ValidationError("trace: frequencies must be > 0");
    if (!(t.input_power >= 0.0)) throw ValidationError("trace: input_power must be >= 0");
}

inline Complex s11_model(double f, double f_n, double q_i, double q_e, double phi) {
    if (!(f_n > 0.0) || !(q_i > 0.0) || !(q_e > 0.0))
        throw ValidationError("s11_model: f_n, Q_i and Q_e must be > 0");
    const Complex denom(1.0 + q_e / q_i, 2.0 * q_e * (f / f_n - 1.0));
    return 1.0 - 2.0 * std::polar(1.0, phi) / denom;
}

// (A + B x + C x^2) exp(i (a + b x + c x^2)) with x = f - reference_frequency.
struct BackgroundCoefficients {
    double A = 1.0, B = 0.0, C = 0.0;
    double a = 0.0, b = 0.0, c = 0.0;
    double reference_frequency = 0.0;

    Complex operator()(double f) const {
        const double x = f - reference_frequency;
        return (A + x * (B + x * C)) * std::polar(1.0, a + x * (b + x * c));
    }
};

struct BackgroundRemoval {
    ComplexTrace normalized;
    BackgroundCoefficients background;
    std::vector<std::string> warnings;
};

namespace detail {

// Quadratic least squares in u = x / scale, returned in x units.
inline std::array<double, 3> fit_quadratic(const std::vector<double>& x, const std::vector<double>& y, double scale) {
    optim::Matrix M(static_cast<Eigen::Index>(x.size()), 3);
    optim::Vector v(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double u = x[i] / scale;
        M(static_cast<Eigen::Index>(i), 0) = 1.0;
        M(static_cast<Eigen::Index>(i), 1) = u;
        M(static_cast<Eigen::Index>(i), 2) = u * u;
        v[static_cast<Eigen::Index>(i)] = y[i];
    }
    Eigen::ColPivHouseholderQR<optim::Matrix> qr(M);
    qr.setThreshold(1e-10);
    if (qr.rank() < 3) throw DegenerateEvaluation("background fit is degenerate (samples are collinear)");
    const optim::Vector p = qr.solve(v);
    return {p[0], p[1] / scale, p[2] / (scale * scale)};
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    double m = *mid;
    if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
    return m;
}

// Per-component noise RMS from the median absolute deviation of consecutive
// differences, which is insensitive to the smooth resonance itself.
inline double noise_rms(const std::vector<Complex>& s) {
    std::vector<double> d;
    d.reserve(2 * s.size());
    for (std::size_t i = 1; i < s.size(); ++i) {
        const Complex diff = s[i] - s[i - 1];
        d.push_back(std::abs(diff.real()));
        d.push_back(std::abs(diff.imag()));
    }
    return 1.482602218505602 * median(std::move(d)) / std::sqrt(2.0);
}

inline double wrap_phase(double p) {
    p = std::remainder(p, kTwoPi);
    if (p <= -kPi) p += kTwoPi;
    return p;
}

}  // namespace detail

inline BackgroundRemoval remove_background(const ComplexTrace& trace) {
    validate(trace);
    const double f0 = trace.frequency.front();
    const double f1 = trace.frequency.back();
    const double span = f1 - f0;
    const double ref = 0.5 * (f0 + f1);

    std::vector<double> x, mag, phase;
    for (std::size_t i = 0; i < trace.frequency.size(); ++i) {
        const double dx = trace.frequency[i] - ref;
        if (std::abs(dx) < 0.2 * span) continue;
        x.push_back(dx);
        mag.push_back(std::abs(trace.response[i]));
        phase.push_back(std::arg(trace.response[i]));
    }
    if (x.size() < 3) throw DegenerateEvaluation("background fit needs at least 3 samples outside the central 40%");
    for (std::size_t i = 1; i < phase.size(); ++i) {
        const double jump = phase[i] - phase[i - 1];
        phase[i] -= kTwoPi * std::nearbyint(jump / kTwoPi);
    }

    BackgroundRemoval out;
    const double scale = 0.5 * span;
    const auto m = detail::fit_quadratic(x, mag, scale);
    const auto p = detail::fit_quadratic(x, phase, scale);
    out.background = {m[0], m[1], m[2], p[0], p[1], p[2], ref};
    if (!(out.background.A > 0.0)) throw DegenerateEvaluation("background magnitude is not positive at the span centre");

    out.normalized = trace;
    for (std::size_t i = 0; i < trace.frequency.size(); ++i)
        out.normalized.response[i] = trace.response[i] / out.background(trace.frequency[i]);

    double worst = 0.0;
    for (std::size_t i = 0; i < trace.frequency.size(); ++i) {
        if (std::abs(trace.frequency[i] - ref) < 0.2 * span) continue;
        worst = std::max(worst, std::abs(std::abs(out.normalized.response[i]) - 1.0));
    }
    if (worst > 0.05) out.warnings.push_back("normalized off-resonant magnitude deviates from 1 by more than 0.05");
    return out;
}

struct ResonanceSigma {
    double f_n = 0.0, q_i = 0.0, q_e = 0.0, phi = 0.0;
    double A = 0.0, B = 0.0, C = 0.0, a = 0.0, b = 0.0, c = 0.0;
};

struct ResonanceFit {
    double f_n = 0.0;
    double q_i = 0.0;
    double q_e = 0.0;
    double phi = 0.0;
    BackgroundCoefficients background;
    ResonanceSigma sigma;
    double residual_norm = 0.0;
    double residual_rms = 0.0;
    double noise_rms = 0.0;
    int evaluations = 0;
    bool converged = false;
    std::vector<std::string> warnings;

    double linewidth() const { return f_n * (1.0 / q_i + 1.0 / q_e); }
};

class ResonanceConvergenceError : public ConvergenceError {
public:
    ResonanceConvergenceError(const std::string& what, ResonanceFit best)
        : ConvergenceError(what), best_(std::move(best)) {}
    const ResonanceFit& best_iterate() const { return best_; }

private:
    ResonanceFit best_;
};

struct ResonanceGuess {
    double f_n = 0.0;
    double q_i = 0.0;
    double q_e = 0.0;
    double phi = 0.0;
    double depth = 0.0;  // peak of |1 - S| above its median
};

// Initial values from the Lorentzian |1 - S|^2 = 4 / ((1 + r)^2 + 4 Q_e^2 x^2) of a
// background-free trace, which does not depend on phi. The peak gives f_n and
// r = Q_e / Q_i, the half-height width gives the total linewidth.
inline ResonanceGuess initial_guess(const ComplexTrace& normalized) {
    const auto& f = normalized.frequency;
    const auto& s = normalized.response;
    const std::size_t n = f.size();
    std::vector<double> l(n), smooth(n);
    for (std::size_t i = 0; i < n; ++i) l[i] = std::norm(1.0 - s[i]);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= 2 ? i - 2 : 0;
        const std::size_t hi = std::min(n - 1, i + 2);
        double sum = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) sum += l[j];
        smooth[i] = sum / static_cast<double>(hi - lo + 1);
    }
    const std::size_t k = static_cast<std::size_t>(std::max_element(smooth.begin(), smooth.end()) - smooth.begin());
    const double base = detail::median(smooth);
    const double height = std::max(smooth[k] - base, std::numeric_limits<double>::min());
    const double half = base + 0.5 * height;

    auto crossing = [&](std::size_t a, std::size_t b) {
        const double t = (smooth[a] - half) / (smooth[a] - smooth[b]);
        return f[a] + t * (f[b] - f[a]);
    };
    double left = std::numeric_limits<double>::quiet_NaN();
    double right = left;
    for (std::size_t i = k; i > 0; --i)
        if (smooth[i - 1] < half) {
            left = crossing(i, i - 1);
            break;
        }
    for (std::size_t i = k; i + 1 < n; ++i)
        if (smooth[i + 1] < half) {
            right = crossing(i, i + 1);
            break;
        }
    double fwhm;
    if (std::isfinite(left) && std::isfinite(right)) fwhm = right - left;
    else if (std::isfinite(left)) fwhm = 2.0 * (f[k] - left);
    else if (std::isfinite(right)) fwhm = 2.0 * (right - f[k]);
    else fwhm = 0.5 * (f.back() - f.front());
    fwhm = std::max(fwhm, 2.0 * (f.back() - f.front()) / static_cast<double>(n));

    ResonanceGuess g;
    g.f_n = f[k];
    g.depth = std::sqrt(height);
    const double r = std::max(2.0 / std::min(std::sqrt(l[k]), 1.999) - 1.0, 1e-3);
    g.q_e = (1.0 + r) * g.f_n / fwhm;
    g.q_i = g.q_e / r;
    g.phi = std::arg(1.0 - s[k]);
    return g;
}

struct ResonanceFitOptions {
    double step_tolerance = 1e-10;
    int max_evaluations = 20000;
    double detection_threshold = 3.0;  // depth in units of the noise RMS
};

inline ResonanceFit fit_resonance(const ComplexTrace& trace, const ResonanceFitOptions& opt = {}) {
    BackgroundRemoval removed = remove_background(trace);
    const ResonanceGuess guess = initial_guess(removed.normalized);
    const double noise = detail::noise_rms(removed.normalized.response);
    if (!(guess.depth > opt.detection_threshold * noise)) {
        throw NoResonanceError("no resonance dip found: depth " + std::to_string(guess.depth) + " is below " +
                               std::to_string(opt.detection_threshold) + " x noise RMS " + std::to_string(noise));
    }

    const auto& freq = trace.frequency;
    const double span = freq.back() - freq.front();
    const double ref = removed.background.reference_frequency;
    const double hs = 0.5 * span;
    const double lw0 = guess.f_n * (1.0 / guess.q_i + 1.0 / guess.q_e);
    std::vector<std::string> warnings = removed.warnings;
    if (guess.f_n - 3.0 * lw0 < freq.front() || guess.f_n + 3.0 * lw0 > freq.back())
        warnings.push_back("trace spans fewer than 3 linewidths beyond the dip");
    if (6.0 * lw0 > 0.6 * span) warnings.push_back("resonance occupies more than 60% of the span");

    // u = [(f_n - f_guess)/lw0, ln Q_i, ln Q_e, phi, A, B hs, C hs^2, a, b hs, c hs^2]
    const auto& bg0 = removed.background;
    optim::Vector u0(10);
    u0 << 0.0, std::log(guess.q_i), std::log(guess.q_e), guess.phi, bg0.A, bg0.B * hs, bg0.C * hs * hs, bg0.a,
        bg0.b * hs, bg0.c * hs * hs;
    const int m = static_cast<int>(2 * freq.size());

    auto unpack_bg = [&](const optim::Vector& u) {
        return BackgroundCoefficients{u[4], u[5] / hs, u[6] / (hs * hs), u[7], u[8] / hs, u[9] / (hs * hs), ref};
    };
    optim::ResidualFn residual = [&](const optim::Vector& u, optim::Vector& r) {
        const double shift = u[0] * lw0;
        const double f_n = guess.f_n + shift;
        const double q_i = std::exp(u[1]);
        const double q_e = std::exp(u[2]);
        const BackgroundCoefficients bg = unpack_bg(u);
        const Complex e = std::polar(2.0, u[3]);
        for (std::size_t i = 0; i < freq.size(); ++i) {
            // Detuning from offsets keeps sub-millihertz shifts of f_n resolvable.
            const double detuning = ((freq[i] - guess.f_n) - shift) / f_n;
            const Complex denom(1.0 + q_e / q_i, 2.0 * q_e * detuning);
            const Complex d = bg(freq[i]) * (1.0 - e / denom) - trace.response[i];
            r[static_cast<Eigen::Index>(2 * i)] = d.real();
            r[static_cast<Eigen::Index>(2 * i + 1)] = d.imag();
        }
    };

    optim::LeastSquaresOptions lso;
    lso.step_tolerance = opt.step_tolerance;
    lso.max_evaluations = opt.max_evaluations;
    optim::LeastSquaresResult best = optim::levenberg_marquardt(residual, u0, m, lso);
    int evaluations = best.evaluations;
    if (!best.converged && evaluations < opt.max_evaluations) {
        auto cost = [&](const optim::Vector& u) {
            optim::Vector r(m);
            residual(u, r);
            return r.squaredNorm();
        };
        optim::Vector steps(10);
        steps << 0.1, 0.05, 0.05, 0.05, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3;
        optim::NelderMeadOptions nmo;
        nmo.max_evaluations = opt.max_evaluations - evaluations;
        const auto nm = optim::nelder_mead(cost, best.x, steps, nmo);
        evaluations += nm.evaluations;
        lso.max_evaluations = std::max(1, opt.max_evaluations - evaluations);
        const optim::LeastSquaresResult polished = optim::levenberg_marquardt(residual, nm.x, m, lso);
        evaluations += polished.evaluations;
        if (polished.cost <= best.cost) best = polished;
    }

    ResonanceFit fit;
    const optim::Vector& u = best.x;
    fit.f_n = guess.f_n + u[0] * lw0;
    fit.q_i = std::exp(u[1]);
    fit.q_e = std::exp(u[2]);
    fit.phi = detail::wrap_phase(u[3]);
    fit.background = unpack_bg(u);
    fit.residual_norm = std::sqrt(best.cost);
    fit.residual_rms = std::sqrt(best.cost / static_cast<double>(freq.size()));
    fit.noise_rms = noise;
    fit.evaluations = evaluations;
    fit.converged = best.converged;
    fit.warnings = std::move(warnings);

    const double dof = std::max(1, m - 10);
    const optim::Matrix J = optim::numeric_jacobian(residual, u, m);
    const optim::Covariance cov = optim::covariance_from_jacobian(J, best.cost / dof);
    const optim::Vector& su = cov.sigma;
    fit.sigma.f_n = su[0] * lw0;
    fit.sigma.q_i = su[1] * fit.q_i;
    fit.sigma.q_e = su[2] * fit.q_e;
    fit.sigma.phi = su[3];
    fit.sigma.A = su[4];
    fit.sigma.B = su[5] / hs;
    fit.sigma.C = su[6] / (hs * hs);
    fit.sigma.a = su[7];
    fit.sigma.b = su[8] / hs;
    fit.sigma.c = su[9] / (hs * hs);

    if (!fit.converged || !(fit.q_i > 0.0) || !(fit.q_e > 0.0) || !std::isfinite(fit.f_n)) {
        throw ResonanceConvergenceError("resonance fit did not converge (residual RMS " +
                                            std::to_string(fit.residual_rms) + ")",
                                        fit);
    }
    return fit;
}

// Mean intracavity phonon number for drive power P_in at the antenna.
inline double phonon_number(double f_n, double q_i, double q_e, double input_power,
                            const PhysicalConstants& c = kCodata) {
    if (!(input_power >= 0.0)) throw ValidationError("phonon_number: P_in must be >= 0");
    if (!(f_n > 0.0) || !(q_i > 0.0) || !(q_e > 0.0)) throw ValidationError("phonon_number: f_n, Q_i, Q_e must be > 0");
    if (input_power == 0.0 || std::isinf(q_e)) return 0.0;
    const double w = kTwoPi * f_n;
    const double ke = w / q_e;
    const double kt = ke + w / q_i;
    return 4.0 * ke / (kt * kt * c.reduced_planck() * w) * input_power;
}

inline double phonon_number(const ResonanceFit& fit, double input_power, const PhysicalConstants& c = kCodata) {
    return phonon_number(fit.f_n, fit.q_i, fit.q_e, input_power, c);
}

}  // namespace hbar
