#include <gtest/gtest.h>

#include <random>

#include "hbar/participation.hpp"
#include "oracle.hpp"

using namespace hbar;

namespace {

void expect_matches_quadrature(const std::vector<oracle::Slab>& slabs, const ModeSolution& m, double tol) {
    const auto rec = participation_ratios(oracle::stack_of(slabs), m);
    const auto w = oracle::standing_wave(slabs, m.frequency);
    std::vector<double> tot(w.potential.size());
    for (std::size_t i = 0; i < tot.size(); ++i) tot[i] = w.potential[i] + w.kinetic[i];
    const auto pot = oracle::normalize(w.potential), kin = oracle::normalize(w.kinetic), all = oracle::normalize(tot);
    for (std::size_t i = 0; i < slabs.size(); ++i) {
        EXPECT_LT(oracle::relative(rec.p_pot[i], pot[i]), tol) << "layer " << i << " f " << m.frequency;
        EXPECT_LT(oracle::relative(rec.p_kin[i], kin[i]), tol) << "layer " << i << " f " << m.frequency;
        EXPECT_LT(oracle::relative(rec.p_tot[i], all[i]), tol) << "layer " << i << " f " << m.frequency;
    }
}

}  // namespace

TEST(Participation, SumsToOneAndStaysInRange) {
    const StackModel s = oracle::stack_of(oracle::b1());
    for (const auto& m : solve_modes(s, 4e9, 4.5e9)) {
        const auto p = participation_ratios(s, m);
        double a = 0.0, b = 0.0, c = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            a += p.p_pot[i];
            b += p.p_kin[i];
            c += p.p_tot[i];
            for (double x : {p.p_pot[i], p.p_kin[i], p.p_tot[i]}) {
                EXPECT_GE(x, 0.0);
                EXPECT_LE(x, 1.0);
            }
        }
        EXPECT_NEAR(a, 1.0, 1e-12);
        EXPECT_NEAR(b, 1.0, 1e-12);
        EXPECT_NEAR(c, 1.0, 1e-12);
    }
}

TEST(Participation, NamesFollowTheStack) {
    const StackModel s = oracle::stack_of(oracle::b1());
    const auto m = solve_modes(s, 5e9, 5.02e9).front();
    EXPECT_EQ(participation_ratios(s, m).names, (std::vector<std::string>{"P", "D", "B"}));
}

TEST(Participation, SingleLayerOwnsEverything) {
    const StackModel s = oracle::stack_of({{100e-6, 9000.0, 3000.0}});
    for (const auto& m : solve_modes(s, 1e8, 1e9)) {
        const auto p = participation_ratios(s, m);
        ASSERT_EQ(p.size(), 1u);
        EXPECT_DOUBLE_EQ(p.p_tot[0], 1.0);
    }
}

TEST(LayerEnergies, UniformBarHalvesAreInEquipartition) {
    const StackModel s = oracle::stack_of({{50e-6, 9000.0, 3000.0}, {50e-6, 9000.0, 3000.0}});
    for (const auto& m : solve_modes(s, 1e7, 1e9)) {
        const auto e = layer_energies(s, m);
        for (const auto& layer : e) EXPECT_NEAR(layer.potential / layer.kinetic, 1.0, 1e-10) << m.frequency;
    }
}

TEST(LayerEnergies, MatchQuadratureOnSampleB1) {
    const auto slabs = oracle::b1();
    for (const auto& m : solve_modes(oracle::stack_of(slabs), 4e9, 4.2e9)) expect_matches_quadrature(slabs, m, 1e-8);
}

TEST(LayerEnergies, MatchQuadratureOnRandomStacks) {
    std::mt19937_64 rng(31337);
    for (int trial = 0; trial < 40; ++trial) {
        const auto slabs = oracle::random_stack(rng, trial % 4 == 0 ? 2 : 3);
        const double f = std::uniform_real_distribution<double>(1e9, 6e9)(rng);
        const auto modes = solve_modes(oracle::stack_of(slabs), f, f + 3.0 * oracle::stack_of(slabs).fsr_mean());
        ASSERT_FALSE(modes.empty());
        expect_matches_quadrature(slabs, modes.front(), 1e-8);
    }
}

TEST(LayerEnergies, RejectMismatchedAmplitudes) {
    const StackModel s = oracle::stack_of(oracle::b1());
    ModeSolution m = solve_modes(s, 5e9, 5.02e9).front();
    m.amplitudes.pop_back();
    EXPECT_THROW(layer_energies(s, m), ValidationError);
}

TEST(Participation, SampleB1PeriodAverages) {
    const auto slabs = oracle::b1();
    const StackModel s = oracle::stack_of(slabs);
    const double period = 10920.0 / (2.0 * 1.1778e-6);
    double piezo = 0.0, bulk_min = 1.0, reference = 0.0;
    const auto modes = solve_modes(s, 5e9 - 0.5 * period, 5e9 + 0.5 * period);
    for (const auto& m : modes) {
        const auto p = participation_ratios(s, m);
        piezo += p.p_tot[0];
        bulk_min = std::min(bulk_min, p.p_tot[2]);
        const auto w = oracle::standing_wave(slabs, m.frequency);
        std::vector<double> tot;
        for (std::size_t k = 0; k < 3; ++k) tot.push_back(w.potential[k] + w.kinetic[k]);
        reference += oracle::normalize(tot)[0];
    }
    piezo /= static_cast<double>(modes.size());
    reference /= static_cast<double>(modes.size());
    EXPECT_LT(oracle::relative(piezo, reference), 1e-8);
    // Equal stress amplitudes in piezo and bulk would give beta_P Z_B / (beta_B Z_P) = 3.35e-3;
    // the impedance step lowers the true average to about 2.75e-3.
    EXPECT_NEAR(piezo, 3.3e-3, 0.25 * 3.3e-3);
    EXPECT_GT(bulk_min, 0.99);
}

TEST(Participation, DefectNotProportionalToPiezo) {
    const StackModel s = oracle::stack_of(oracle::b1());
    const double period = 10920.0 / (2.0 * 1.1778e-6);
    double lo = 1e300, hi = 0.0;
    for (const auto& m : solve_modes(s, 5e9, 5e9 + period)) {
        const auto p = participation_ratios(s, m);
        const double r = p.p_pot[1] / p.p_pot[0];
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    EXPECT_GT(hi / lo, 2.0);
}

TEST(Participation, DefectPotentialAndKineticExtremaInterleave) {
    const StackModel s = oracle::stack_of(oracle::b1());
    const auto modes = solve_modes(s, 3e9, 12e9);
    std::vector<double> pot, kin, f;
    for (const auto& m : modes) {
        const auto p = participation_ratios(s, m);
        pot.push_back(p.p_pot[1]);
        kin.push_back(p.p_kin[1]);
        f.push_back(m.frequency);
    }
    // Maxima of each curve over a window of +-40 modes; merge and check alternation.
    auto maxima = [&](const std::vector<double>& y) {
        std::vector<double> out;
        for (std::size_t i = 40; i + 40 < y.size(); ++i) {
            bool top = true;
            for (std::size_t j = i - 40; j <= i + 40 && top; ++j) top = y[j] <= y[i];
            if (top) out.push_back(f[i]);
        }
        return out;
    };
    const auto a = maxima(pot), b = maxima(kin);
    ASSERT_GE(a.size(), 2u);
    ASSERT_GE(b.size(), 2u);
    std::vector<std::pair<double, int>> merged;
    for (double x : a) merged.emplace_back(x, 0);
    for (double x : b) merged.emplace_back(x, 1);
    std::sort(merged.begin(), merged.end());
    for (std::size_t i = 1; i < merged.size(); ++i) EXPECT_NE(merged[i].second, merged[i - 1].second) << merged[i].first;
}

TEST(Participation, ThinningThePiezoDrainsItsShare) {
    double prev = 1.0;
    for (double tp : {2.0e-6, 1.0e-6, 0.5e-6, 0.25e-6, 0.1e-6}) {
        const StackModel s = oracle::stack_of({{tp, 10920.0, 3306.0}, {434.57e-6, 11059.0, 3980.0}});
        const auto m = solve_modes(s, 1e9, 1e9 + s.fsr_mean()).front();
        const double p = participation_ratios(s, m).p_tot[0];
        EXPECT_LT(p, prev) << tp;
        prev = p;
    }
}
