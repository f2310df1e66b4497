#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "hbar/stability.hpp"

using namespace hbar;

namespace {

FrequencySeries series_of(std::vector<double> y, double dt) {
    FrequencySeries s;
    for (std::size_t i = 0; i < y.size(); ++i) s.time.push_back(dt * static_cast<double>(i));
    s.y = std::move(y);
    return s;
}

std::vector<double> white(std::size_t n, double sigma, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, sigma);
    std::vector<double> y(n);
    for (auto& v : y) v = g(rng);
    return y;
}

std::vector<double> walk(std::size_t n, double sigma, unsigned seed) {
    auto y = white(n, sigma, seed);
    std::partial_sum(y.begin(), y.end(), y.begin());
    return y;
}

double allan_slope(const FrequencySeries& s) {
    const auto a = allan_deviation(s, log_tau_grid(s));
    std::vector<double> t, d;
    for (const auto& p : a.points) {
        t.push_back(p.tau);
        d.push_back(p.deviation);
    }
    return fit_power_law(t, d).exponent;
}

}  // namespace

TEST(Series, FractionalShiftsAndValidation) {
    std::vector<double> t, f;
    for (int i = 0; i < 40; ++i) {
        t.push_back(0.5 * i);
        f.push_back(5e9 + 50.0 * i);
    }
    const auto s = fractional_series(t, f, 5e9);
    EXPECT_NEAR(s.y[10], 500.0 / 5e9, 1e-20);
    EXPECT_NEAR(s.dt(), 0.5, 1e-15);
    auto bad = series_of(std::vector<double>(40, 0.0), 1.0);
    bad.time[20] += 0.3;
    EXPECT_THROW(psd(bad), ValidationError);
    EXPECT_THROW(psd(series_of(std::vector<double>(20, 0.0), 1.0)), ValidationError);
}

TEST(Psd, ConstantSeriesHasNoPower) {
    const auto s = psd(series_of(std::vector<double>(256, 3e-9), 0.1));
    ASSERT_FALSE(s.density.empty());
    for (double d : s.density) EXPECT_EQ(d, 0.0);
}

TEST(Psd, WhiteNoiseIsFlatAtTwiceSigmaSquaredDt) {
    const double sigma = 2e-9, dt = 0.25;
    const int realizations = 8;
    Spectrum mean;
    for (int r = 0; r < realizations; ++r) {
        const auto s = log_bin(psd(series_of(white(1 << 15, sigma, 100 + r), dt)), 10);
        if (mean.density.empty()) mean = Spectrum{s.frequency, std::vector<double>(s.density.size(), 0.0)};
        for (std::size_t i = 0; i < s.density.size(); ++i) mean.density[i] += s.density[i] / realizations;
    }
    const double level = 2.0 * sigma * sigma * dt;
    for (std::size_t i = 0; i < mean.density.size(); ++i) {
        if (mean.frequency[i] < 1e-2) continue;  // the first bins average only a handful of periodogram points
        EXPECT_NEAR(mean.density[i] / level, 1.0, 0.2) << mean.frequency[i];
    }
}

TEST(Psd, RandomWalkFallsAsInverseSquare) {
    const std::size_t n = 1 << 15;
    const auto s = psd(series_of(walk(n, 1e-10, 2), 1.0));
    // Sampled walks follow 1/sin^2(pi f dt), and the taper smears the lowest bins.
    std::vector<double> f, d;
    for (std::size_t i = 0; i < s.frequency.size(); ++i)
        if (s.frequency[i] >= 10.0 / n && s.frequency[i] <= 0.1) {
            f.push_back(s.frequency[i]);
            d.push_back(s.density[i]);
        }
    const auto fit = fit_power_law(f, d);
    EXPECT_NEAR(-fit.exponent, 2.0, 0.1);
}

TEST(Psd, ParsevalHolds) {
    for (unsigned seed : {3u, 4u}) {
        const auto y = seed == 3 ? white(4096, 1.0, seed) : walk(4095, 1.0, seed);
        const double dt = 0.3;
        const auto s = psd(series_of(y, dt));
        const double df = 1.0 / (static_cast<double>(y.size()) * dt);
        double total = 0.0;
        for (double d : s.density) total += d * df;
        const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
        double var = 0.0;
        for (double v : y) var += (v - mean) * (v - mean) / static_cast<double>(y.size());
        EXPECT_NEAR(total / var, 1.0, 0.01);
    }
}

TEST(Allan, LinearDrift) {
    const double c = 3e-12, dt = 2.0;
    std::vector<double> y(600);
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = c * static_cast<double>(k) * dt;
    const auto s = series_of(y, dt);
    for (const auto& p : allan_deviation(s, {2.0, 20.0, 100.0, 400.0}).points)
        EXPECT_NEAR(p.deviation / (c * p.tau / std::sqrt(2.0)), 1.0, 1e-9) << p.tau;
}

TEST(Allan, TooLongTausAreOmitted) {
    const auto s = series_of(white(300, 1.0, 5), 1.0);
    const auto a = allan_deviation(s, {10.0, 100.0, 101.0, 500.0});
    EXPECT_EQ(a.points.size(), 2u);
    EXPECT_EQ(a.omitted, (std::vector<double>{101.0, 500.0}));
}

TEST(Allan, WhiteFrequencyNoiseSlope) {
    EXPECT_NEAR(allan_slope(series_of(white(1 << 14, 1e-9, 6), 1.0)), -0.5, 0.1);
}

TEST(Allan, RandomWalkSlope) { EXPECT_NEAR(allan_slope(series_of(walk(1 << 14, 1e-9, 7), 1.0)), 0.5, 0.15); }

TEST(Allan, SinusoidPeaksAtHalfPeriodAveraging) {
    // Continuous result: sigma(tau) = A sin^2(pi f0 tau) / (pi f0 tau).
    const double amp = 1e-9, f0 = 0.01, dt = 0.5;
    std::vector<double> y(20000);
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = amp * std::sin(2.0 * kPi * f0 * static_cast<double>(k) * dt);
    const auto a = allan_deviation(series_of(y, dt), {0.5 / f0});
    ASSERT_EQ(a.points.size(), 1u);
    EXPECT_NEAR(a.points[0].deviation / (2.0 * amp / kPi), 1.0, 0.01);
}

TEST(PowerLaw, ExactLawAndConstant) {
    std::vector<double> x, y, flat;
    for (int i = 1; i <= 12; ++i) {
        x.push_back(0.3 * i);
        y.push_back(4.2e-7 * std::pow(0.3 * i, 2.26));
        flat.push_back(7.0);
    }
    const auto f = fit_power_law(x, y);
    EXPECT_NEAR(f.exponent, 2.26, 1e-12);
    EXPECT_NEAR(f.amplitude / 4.2e-7, 1.0, 1e-12);
    EXPECT_NEAR(fit_power_law(x, flat).exponent, 0.0, 1e-14);
    EXPECT_THROW(fit_power_law({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}), ValidationError);
    EXPECT_THROW(fit_power_law({1.0, 2.0, 3.0, -4.0}, {1.0, 2.0, 3.0, 4.0}), ValidationError);
}

TEST(PowerLaw, ScaleEquivariant) {
    std::mt19937_64 rng(9);
    std::lognormal_distribution<double> noise(0.0, 0.1);
    std::vector<double> x, y, scaled;
    for (int i = 1; i <= 30; ++i) {
        x.push_back(i);
        y.push_back(std::pow(i, -1.7) * noise(rng));
        scaled.push_back(8.0 * y.back());
    }
    const auto a = fit_power_law(x, y), b = fit_power_law(x, scaled);
    EXPECT_NEAR(a.exponent, b.exponent, 1e-12);
    EXPECT_NEAR(b.amplitude / a.amplitude, 8.0, 1e-10);
    EXPECT_NEAR(a.sigma_exponent, b.sigma_exponent, 1e-12);
}

TEST(Tcf, QuarticLawGivesCubicCoefficient) {
    const double f0 = 5e9, a = 2e-8;
    std::vector<double> t, f;
    for (int i = 0; i <= 200; ++i) {
        t.push_back(0.5 + 0.02 * i);
        f.push_back(f0 * (1.0 - a * std::pow(t.back(), 4) / 4.0));
    }
    const auto r = tcf(t, f);
    const double h = 0.02;
    for (std::size_t i = 0; i < r.tcf.size(); ++i) {
        const double x = r.temperature[i];
        // The centred difference of T^4 carries an exact T h^2 term.
        const double expected = -a * (x * x * x + x * h * h) / (1.0 - a * std::pow(x, 4) / 4.0);
        EXPECT_NEAR(r.tcf[i] / expected, 1.0, 1e-6) << x;
        EXPECT_LT(r.tcf[i], 0.0);
    }
    ASSERT_TRUE(r.fit.has_value());
    EXPECT_NEAR(r.fit->exponent, 3.0, 1e-3);
}

TEST(Tcf, NoisyPowerLawExponent) {
    std::mt19937_64 rng(10);
    std::normal_distribution<double> g(0.0, 1e-11);
    const double alpha = 3.18, c = 1e-7;
    std::vector<double> t, f;
    for (int i = 0; i < 40; ++i) {
        t.push_back(0.5 * std::pow(8.0, i / 39.0));
        f.push_back(5e9 * (1.0 + c * std::pow(t.back(), alpha + 1.0) / (alpha + 1.0) + g(rng)));
    }
    const auto r = tcf(t, f);
    ASSERT_TRUE(r.fit.has_value());
    EXPECT_NEAR(r.fit->exponent, alpha, 0.05);
    for (double v : r.tcf) EXPECT_GT(v, 0.0);
}

TEST(Tcf, OrderAndMonotonicity) {
    std::vector<double> t{0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, f{6, 5, 4, 3, 2, 1};
    const auto up = tcf(t, f, false);
    std::reverse(t.begin(), t.end());
    std::reverse(f.begin(), f.end());
    const auto down = tcf(t, f, false);
    EXPECT_EQ(up.tcf, down.tcf);
    std::swap(t[2], t[3]);
    EXPECT_THROW(tcf(t, f), ValidationError);
    EXPECT_THROW(tcf({1, 2, 3, 4}, {1, 1, 1, 1}), ValidationError);
}

TEST(Tcf, FromExpansion) {
    EXPECT_NEAR(tcf_from_expansion(2e-9, 6e-9), 1e-9, 1e-24);
    EXPECT_LT(tcf_from_expansion(5e-9, 0.0), 0.0);
}
