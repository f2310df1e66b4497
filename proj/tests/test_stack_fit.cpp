#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hbar/participation.hpp"
#include "hbar/stack_fit.hpp"
#include "oracle.hpp"

using namespace hbar;

namespace {

ReducedStackParams b1_params(double psi = 0.0) { return reduce(oracle::stack_of(oracle::b1(), psi)); }

ReducedStackParams perturbed(const ReducedStackParams& p, double fraction) {
    auto a = p.to_array();
    for (std::size_t i = 0; i < 5; ++i) a[i] *= 1.0 + (i % 2 == 0 ? fraction : -fraction);
    a[5] = 0.0;
    return ReducedStackParams::from_array(a);
}

std::vector<ParticipationRecord> b1_participations(double f0, double f1) {
    const StackModel s = oracle::stack_of(oracle::b1());
    std::vector<ParticipationRecord> out;
    for (const auto& m : solve_modes(s, f0, f1)) out.push_back(participation_ratios(s, m));
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST(MatchingError, SelfCombIsZero) {
    const auto p = b1_params();
    const ModeComb comb = synthesize_comb(p, 4e9, 6e9);
    ASSERT_GE(comb.modes.size(), 150u);
    const auto m = matching_error(comb, p);
    EXPECT_EQ(m.unmatched, 0u);
    EXPECT_EQ(m.matched, comb.modes.size());
    EXPECT_LT(m.epsilon, 1e-6);
}

TEST(MatchingError, RejectsShortCombs) {
    ModeComb comb = synthesize_comb(b1_params(), 5e9, 5.04e9);
    EXPECT_THROW(matching_error(comb, b1_params()), ValidationError);
}

TEST(MatchingError, GapsOnlyDropTheirOwnTerms) {
    const auto truth = b1_params();
    ModeComb full = synthesize_comb(truth, 4e9, 6e9);
    full.fsr = comb_fsr(full);
    const auto off = perturbed(truth, 2e-5);
    const auto all = matching_error(full, off);
    ModeComb thinned;
    thinned.fsr = full.fsr;
    double expected = 0.0;
    for (std::size_t i = 0; i < full.modes.size(); ++i) {
        if (i % 3 == 2) continue;
        thinned.modes.push_back(full.modes[i]);
        expected += all.residual[i] * all.residual[i];
    }
    const auto part = matching_error(thinned, off);
    EXPECT_GT(expected, 0.0);
    EXPECT_NEAR(part.epsilon / expected, 1.0, 1e-9);
}

TEST(MatchingError, InvariantAlongNullDirections) {
    // Scaling thickness and velocity together keeps every beta; scaling every density keeps the ratios.
    auto slabs = oracle::b1();
    const ModeComb comb = synthesize_comb(reduce(oracle::stack_of(slabs)), 4e9, 5e9);
    auto moved = slabs;
    const double scale[] = {1.3, 0.7, 1.1};
    for (std::size_t i = 0; i < moved.size(); ++i) {
        moved[i].thickness *= scale[i];
        moved[i].velocity *= scale[i];
        moved[i].density *= 2.5 / scale[i];
    }
    const auto perturb = [](ReducedStackParams p) {
        p.beta_d *= 1.01;
        return p;
    };
    const double a = matching_error(comb, perturb(reduce(oracle::stack_of(slabs)))).epsilon;
    const double b = matching_error(comb, perturb(reduce(oracle::stack_of(moved)))).epsilon;
    EXPECT_GT(a, 0.0);
    EXPECT_NEAR(b / a, 1.0, 1e-9);
}

TEST(FitStack, RecoversAGlobalShiftAlone) {
    const double psi0 = 23456.0;
    const auto truth = b1_params(psi0);
    const ModeComb comb = synthesize_comb(truth, 4e9, 6e9);
    StackFitConstraints c;
    c.pinned = {true, true, true, true, true, false};
    c.anchor_fsr = false;
    auto init = truth;
    init.psi = 0.0;
    const auto r = fit_stack(comb, init, c);
    EXPECT_NEAR(r.params.psi, psi0, 1.0);
}

TEST(FitStack, RoundTripFromFivePercentOff) {
    const auto truth = b1_params(15e3);
    const ModeComb comb = synthesize_comb(truth, 4e9, 6e9);
    const auto r = fit_stack(comb, perturbed(truth, 0.05));
    EXPECT_TRUE(r.converged);
    const auto got = r.params.to_array(), want = truth.to_array();
    for (std::size_t i = 0; i < got.size(); ++i)
        EXPECT_NEAR(got[i] / want[i], 1.0, 1e-3) << ReducedStackParams::kNames[i];
    EXPECT_EQ(r.unmatched, 0u);
}

TEST(FitStack, TwoLayerDataNeedsNoDefect) {
    const auto slabs = oracle::b1();
    const auto truth = reduce(oracle::stack_of({slabs[0], slabs[2]}));
    const ModeComb comb = synthesize_comb(truth, 4e9, 6e9);
    // Three-layer start: a sapphire-like defect with a 5% impedance step.
    ReducedStackParams init;
    init.beta_p = truth.beta_p * 1.02;
    init.beta_d = 10e-9 / 11059.0;
    init.beta_b = truth.beta_b;
    init.zb_over_zd = 1.05;
    init.zp_over_zd = truth.zp_over_zd * 1.05;
    const auto r = fit_stack(comb, init);
    const double zd_over_zb = 1.0 / r.params.zb_over_zd;
    const double sigma = r.sigma[4] / (r.params.zb_over_zd * r.params.zb_over_zd);
    EXPECT_LT(std::abs(zd_over_zb - 1.0), std::max(3.0 * sigma, 1e-3)) << zd_over_zb << " +- " << sigma;
    EXPECT_LT(r.rms_residual, 1.0);
}

TEST(FitStack, DefectMakesTheFsrRippleGrowWithFrequency) {
    const auto slabs = oracle::b1();
    // Peak-to-peak FSR deviation over one piezo ripple period starting at f0.
    const double period = 10920.0 / (2.0 * 1.1778e-6);
    const auto ripple = [&](const ReducedStackParams& p, double f0) {
        const auto r = fsr_residual(synthesize_comb(p, f0, f0 + period).frequencies());
        const auto [lo, hi] = std::minmax_element(r.deviation.begin(), r.deviation.end());
        return *hi - *lo;
    };
    const auto three = reduce(oracle::stack_of(slabs));
    const auto two = reduce(oracle::stack_of({slabs[0], slabs[2]}));
    EXPECT_GT(ripple(three, 30e9) / ripple(three, 1e9), 1.3);
    EXPECT_NEAR(ripple(two, 30e9) / ripple(two, 1e9), 1.0, 0.01);
}

TEST(ExpandToLayers, RebuildsSampleB1) {
    const auto slabs = oracle::b1();
    const auto e = expand_to_layers(reduce(oracle::stack_of(slabs)), {"P", 10920.0, 3306.0}, {"B", 11059.0, 3980.0},
                                    10e-9);
    ASSERT_EQ(e.layers.size(), 3u);
    EXPECT_NEAR(e.impedance_consistency, 1.0, 1e-12);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(e.layers[i].thickness / slabs[i].thickness, 1.0, 1e-12);
        EXPECT_NEAR(e.layers[i].velocity / slabs[i].velocity, 1.0, 1e-12);
        EXPECT_NEAR(e.layers[i].density / slabs[i].density, 1.0, 1e-12);
    }
}

TEST(AbsorptionTangents, RoundTrip) {
    const auto parts = b1_participations(3e9, 12e9);
    const std::vector<double> truth{1.0 / 7.9e4, 1.0 / 1.33e3, 1.0 / 3e7};
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<AbsorptionSample> samples;
    for (const auto& p : parts) {
        const double q = dot(p.p_tot, truth);
        const double scatter = 1.0 / 1.8e7;
        samples.push_back({p, q + scatter + 1e-3 * q * g(rng), scatter, 1e-3 * q});
    }
    const auto fit = fit_absorption_tangents(samples);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(fit.tangent[i] / truth[i], 1.0, 0.05) << fit.names[i];
    EXPECT_EQ(fit.names, (std::vector<std::string>{"P", "D", "B"}));
}

TEST(AbsorptionTangents, ZeroResidualGivesZeroTangents) {
    std::vector<AbsorptionSample> samples;
    for (const auto& p : b1_participations(4e9, 4.5e9)) samples.push_back({p, 2e-7, 2e-7, 0.0});
    const auto fit = fit_absorption_tangents(samples);
    for (double t : fit.tangent) EXPECT_EQ(t, 0.0);
    for (double q : fit.lower_bound_q) EXPECT_TRUE(std::isinf(q));
}

TEST(AbsorptionTangents, LowerBoundsFollowSingleLayerAttribution) {
    const auto parts = b1_participations(4e9, 6e9);
    const double q_min[] = {3.02e4, 244.0, 1.14e7};
    for (std::size_t layer = 0; layer < 3; ++layer) {
        std::vector<AbsorptionSample> samples;
        for (const auto& p : parts) samples.push_back({p, p.p_tot[layer] / q_min[layer], 0.0, 0.0});
        const auto fit = fit_absorption_tangents(samples);
        EXPECT_NEAR(fit.lower_bound_q[layer] / q_min[layer], 1.0, 1e-9) << layer;
    }
}

TEST(AbsorptionTangents, NeverNegative) {
    const auto parts = b1_participations(4e9, 5e9);
    std::mt19937_64 rng(21);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const std::vector<double> truth{1e-5 * g(rng), 1e-3 * g(rng), 1e-7 * g(rng)};
        std::vector<AbsorptionSample> samples;
        for (const auto& p : parts) samples.push_back({p, dot(p.p_tot, truth) + 1e-6, 1e-6, 0.0});
        for (double t : fit_absorption_tangents(samples).tangent) EXPECT_GE(t, 0.0);
    }
}

TEST(AbsorptionTangents, NeedsEnoughModes) {
    std::vector<AbsorptionSample> samples;
    for (const auto& p : b1_participations(5e9, 5.05e9)) samples.push_back({p, 1e-6, 0.0, 0.0});
    ASSERT_LT(samples.size(), 9u);
    EXPECT_THROW(fit_absorption_tangents(samples), ValidationError);
}

TEST(TlsTangents, RoundTripWithBulkPinned) {
    const auto parts = b1_participations(3e9, 12e9);
    const std::vector<double> truth{5.9e-5, 7.5e-4, 0.0};
    std::vector<TlsSample> samples;
    for (const auto& p : parts) samples.push_back({p.p_pot, dot(p.p_pot, truth), 0.0});
    const auto fit = fit_tls_tangents(samples);
    EXPECT_NEAR(fit.tangent[0] / truth[0], 1.0, 0.02);
    EXPECT_NEAR(fit.tangent[1] / truth[1], 1.0, 0.02);
    EXPECT_EQ(fit.tangent[2], 0.0);
}

TEST(TlsTangents, KineticColumnsFitWorse) {
    const auto parts = b1_participations(3e9, 12e9);
    const std::vector<double> truth{5.9e-5, 7.5e-4, 0.0};
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<TlsSample> pot, kin;
    for (const auto& p : parts) {
        const double q = dot(p.p_pot, truth) * (1.0 + 0.01 * g(rng));
        pot.push_back({p.p_pot, q, 0.0});
        kin.push_back({p.p_kin, q, 0.0});
    }
    EXPECT_GT(fit_tls_tangents(kin).residual_norm, 3.0 * fit_tls_tangents(pot).residual_norm);
}

TEST(DissipativeTangent, Examples) {
    EXPECT_EQ(tls_dissipative_tangent(2e-7, 2e-7).value, 0.0);
    const auto d = tls_dissipative_tangent(3e-7, 1.1e-7);
    EXPECT_NEAR(d.value, 1.9e-7, 1e-20);
    EXPECT_FALSE(d.floored);
    const auto n = tls_dissipative_tangent(1e-7, 1.2e-7);
    EXPECT_EQ(n.value, 0.0);
    EXPECT_TRUE(n.floored);
    EXPECT_THROW(tls_dissipative_tangent(-1.0, 0.0), ValidationError);
}

TEST(DissipativeTangent, SinglePhononAgainstHighPowerHasUnitSlope) {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> u(1e-7, 1e-6);
    std::normal_distribution<double> g(0.0, 2e-9);
    std::vector<double> x, y;
    for (int i = 0; i < 40; ++i) {
        x.push_back(u(rng));
        y.push_back(1.9e-7 + x.back() + g(rng));
    }
    const auto fit = optim::linear_regression(x, y);
    EXPECT_LT(std::abs(fit.slope - 1.0), 3.0 * fit.sigma_slope);
    EXPECT_NEAR(fit.intercept, 1.9e-7, 5e-9);
}
