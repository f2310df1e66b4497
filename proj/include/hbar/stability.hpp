#pragma once

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "hbar/constants.hpp"
#include "hbar/error.hpp"
#include "hbar/optim.hpp"

namespace hbar {

struct FrequencySeries {
    std::vector<double> time;  // s, uniform
    std::vector<double> y;     // fractional shift df/f

    std::size_t size() const { return y.size(); }
    double dt() const { return (time.back() - time.front()) / static_cast<double>(time.size() - 1); }
};

inline void validate(const FrequencySeries& s) {
    if (s.time.size() != s.y.size()) throw ValidationError("series: time and value lengths differ");
    if (s.y.size() < 32) throw ValidationError("series: need at least 32 samples, got " + std::to_string(s.y.size()));
    const double dt = s.dt();
    if (!(dt > 0.0)) throw ValidationError("series: timestamps must increase");
    for (std::size_t i = 1; i < s.time.size(); ++i) {
        const double step = s.time[i] - s.time[i - 1];
        if (std::abs(step - dt) > 0.01 * dt)
            throw ValidationError("series: non-uniform sampling at row " + std::to_string(i));
    }
    for (std::size_t i = 0; i < s.y.size(); ++i)
        if (!std::isfinite(s.y[i])) throw ValidationError("series: non-finite value at row " + std::to_string(i));
}

inline FrequencySeries fractional_series(std::vector<double> time, const std::vector<double>& frequency,
                                         double reference) {
    if (!(reference > 0.0)) throw ValidationError("fractional_series: reference frequency must be > 0");
    FrequencySeries s;
    s.time = std::move(time);
    s.y.reserve(frequency.size());
    for (double f : frequency) s.y.push_back((f - reference) / reference);
    return s;
}

struct Spectrum {
    std::vector<double> frequency;  // Hz, DC excluded
    std::vector<double> density;    // 1/Hz
};

// One-sided Hann-windowed periodogram of the mean-removed series. The window's
// power loss is corrected by sum(w^2), then the whole spectrum is scaled so that
// sum(density) * df equals the sample variance.
inline Spectrum psd(const FrequencySeries& series) {
    validate(series);
    const std::size_t n = series.size();
    const double dt = series.dt();
    double mean = 0.0;
    for (double v : series.y) mean += v;
    mean /= static_cast<double>(n);
    double variance = 0.0, spread = 0.0;
    for (double v : series.y) {
        variance += (v - mean) * (v - mean);
        spread = std::max(spread, std::abs(v - mean));
    }
    variance /= static_cast<double>(n);
    // A constant series leaves only rounding noise after mean removal.
    if (spread <= 16.0 * std::numeric_limits<double>::epsilon() * std::abs(mean)) variance = 0.0;

    std::vector<double> x(n);
    double w2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double w = 0.5 * (1.0 - std::cos(kTwoPi * static_cast<double>(k) / static_cast<double>(n - 1)));
        x[k] = w * (series.y[k] - mean);
        w2 += w * w;
    }
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> spectrum;
    fft.fwd(spectrum, x);

    Spectrum out;
    const double df = 1.0 / (static_cast<double>(n) * dt);
    const std::size_t half = n / 2;
    double total = 0.0;
    for (std::size_t j = 1; j <= half; ++j) {
        const bool nyquist = (n % 2 == 0) && j == half;
        const double d = (nyquist ? 1.0 : 2.0) * dt * std::norm(spectrum[j]) / w2;
        out.frequency.push_back(static_cast<double>(j) * df);
        out.density.push_back(d);
        total += d * df;
    }
    if (total > 0.0 && variance > 0.0) {
        const double scale = variance / total;
        for (double& d : out.density) d *= scale;
    } else {
        std::fill(out.density.begin(), out.density.end(), 0.0);
    }
    return out;
}

struct PowerLawFit {
    double amplitude = 0.0;
    double exponent = 0.0;  // y = amplitude * x^exponent
    double sigma_exponent = 0.0;
};

inline PowerLawFit fit_power_law(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ValidationError("fit_power_law: x and y sizes differ");
    if (x.size() < 4) throw ValidationError("fit_power_law: need at least 4 points");
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ValidationError("fit_power_law: x and y must be > 0");
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
    }
    const auto r = optim::linear_regression(lx, ly);
    return {std::exp(r.intercept), r.slope, r.sigma_slope};
}

// Geometric-centre averages of a spectrum over logarithmic bins.
inline Spectrum log_bin(const Spectrum& s, int bins_per_decade = 10) {
    if (bins_per_decade <= 0) throw ValidationError("log_bin: bins_per_decade must be > 0");
    Spectrum out;
    if (s.frequency.empty()) return out;
    const double width = 1.0 / static_cast<double>(bins_per_decade);
    std::size_t i = 0;
    while (i < s.frequency.size()) {
        const double edge = std::pow(10.0, (std::floor(std::log10(s.frequency[i]) / width) + 1.0) * width);
        double lf = 0.0, sum = 0.0;
        std::size_t count = 0;
        while (i < s.frequency.size() && s.frequency[i] < edge) {
            lf += std::log(s.frequency[i]);
            sum += s.density[i];
            ++count;
            ++i;
        }
        if (count == 0) {
            ++i;
            continue;
        }
        out.frequency.push_back(std::exp(lf / static_cast<double>(count)));
        out.density.push_back(sum / static_cast<double>(count));
    }
    return out;
}

struct AllanPoint {
    double tau = 0.0;
    double deviation = 0.0;
    std::size_t averaging_factor = 0;
    std::size_t terms = 0;
};

struct AllanResult {
    std::vector<AllanPoint> points;
    std::vector<double> omitted;  // taus dropped for exceeding span/3
};

// Overlapping estimator over windows of m = tau/dt samples.
inline AllanResult allan_deviation(const FrequencySeries& series, const std::vector<double>& taus) {
    validate(series);
    const std::size_t n = series.size();
    const double dt = series.dt();
    const double span = static_cast<double>(n) * dt;
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + series.y[i];

    AllanResult out;
    for (double tau : taus) {
        const double ratio = tau / dt;
        const double m_real = std::nearbyint(ratio);
        if (!(m_real >= 1.0) || std::abs(ratio - m_real) > 1e-6 * std::max(1.0, ratio))
            throw ValidationError("allan_deviation: tau " + std::to_string(tau) + " s is not a multiple of dt");
        if (tau > span / 3.0) {
            out.omitted.push_back(tau);
            continue;
        }
        const auto m = static_cast<std::size_t>(m_real);
        const std::size_t terms = n - 2 * m + 1;
        double sum = 0.0;
        for (std::size_t j = 0; j < terms; ++j) {
            const double d = (prefix[j + 2 * m] - 2.0 * prefix[j + m] + prefix[j]) / static_cast<double>(m);
            sum += d * d;
        }
        out.points.push_back({static_cast<double>(m) * dt, std::sqrt(sum / (2.0 * static_cast<double>(terms))), m, terms});
    }
    return out;
}

// Distinct averaging times on a logarithmic grid up to span/3.
inline std::vector<double> log_tau_grid(const FrequencySeries& series, int points_per_decade = 10) {
    validate(series);
    const double dt = series.dt();
    const double max_m = std::floor(static_cast<double>(series.size()) / 3.0);
    std::vector<double> taus;
    double last = 0.0;
    for (int k = 0;; ++k) {
        const double m = std::nearbyint(std::pow(10.0, static_cast<double>(k) / points_per_decade));
        if (m > max_m) break;
        if (m != last) taus.push_back(m * dt);
        last = m;
    }
    return taus;
}

struct TcfResult {
    std::vector<double> temperature;  // interior points
    std::vector<double> tcf;          // 1/K
    std::optional<PowerLawFit> fit;   // of |TCF| against T
};

// (1/f) df/dT by the three-point non-uniform centred difference.
inline TcfResult tcf(std::vector<double> temperature, std::vector<double> frequency, bool fit_power = true) {
    const std::size_t n = temperature.size();
    if (frequency.size() != n) throw ValidationError("tcf: temperature and frequency sizes differ");
    if (n < 5) throw ValidationError("tcf: need at least 5 temperature points");
    const bool increasing = temperature[1] > temperature[0];
    for (std::size_t i = 1; i < n; ++i) {
        if ((temperature[i] > temperature[i - 1]) != increasing || temperature[i] == temperature[i - 1])
            throw ValidationError("tcf: temperatures must be strictly monotone (row " + std::to_string(i) + ")");
    }
    if (!increasing) {
        std::reverse(temperature.begin(), temperature.end());
        std::reverse(frequency.begin(), frequency.end());
    }
    TcfResult out;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double h1 = temperature[i] - temperature[i - 1];
        const double h2 = temperature[i + 1] - temperature[i];
        const double d = -h2 / (h1 * (h1 + h2)) * frequency[i - 1] + (h2 - h1) / (h1 * h2) * frequency[i] +
                         h1 / (h2 * (h1 + h2)) * frequency[i + 1];
        out.temperature.push_back(temperature[i]);
        out.tcf.push_back(d / frequency[i]);
    }
    if (fit_power) {
        std::vector<double> t, a;
        for (std::size_t i = 0; i < out.tcf.size(); ++i) {
            if (out.temperature[i] > 0.0 && out.tcf[i] != 0.0) {
                t.push_back(out.temperature[i]);
                a.push_back(std::abs(out.tcf[i]));
            }
        }
        if (t.size() >= 4) out.fit = fit_power_law(t, a);
    }
    return out;
}

// TCF = -(1/t) dt/dT + (1/2c) dc/dT for a bulk-dominated overtone.
inline double tcf_from_expansion(double linear_expansion, double elastic_coefficient) {
    return -linear_expansion + 0.5 * elastic_coefficient;
}

}  // namespace hbar
