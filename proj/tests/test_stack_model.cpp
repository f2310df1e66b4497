#include <gtest/gtest.h>

#include <random>

#include "hbar/stack_model.hpp"
#include "oracle.hpp"

using namespace hbar;

namespace {

Layer layer(const char* name, double t, double v, double rho) {
    Layer l;
    l.name = name;
    l.thickness = t;
    l.velocity = v;
    l.density = rho;
    return l;
}

// Number of sign changes of the back-face stress on a uniform grid.
std::vector<std::pair<double, double>> oracle_brackets(const std::vector<oracle::Slab>& s, double f1, double f2,
                                                      double step) {
    std::vector<std::pair<double, double>> out;
    double fa = f1, ra = oracle::back_stress(s, fa);
    const auto n = static_cast<int>(std::ceil((f2 - f1) / step));
    for (int i = 1; i <= n; ++i) {
        const double fb = f1 + (f2 - f1) * i / n;
        const double rb = oracle::back_stress(s, fb);
        if ((ra < 0.0) != (rb < 0.0)) out.emplace_back(fa, fb);
        fa = fb;
        ra = rb;
    }
    return out;
}

}  // namespace

TEST(AcousticImpedance, SampleMaterials) {
    EXPECT_NEAR(acoustic_impedance(layer("B", 1e-3, 11059.0, 3980.0)), 4.4015e7, 1e3);
    EXPECT_NEAR(acoustic_impedance(layer("P", 1e-6, 10920.0, 3306.0)), 3.610e7, 1e4);
    EXPECT_DOUBLE_EQ(acoustic_impedance(layer("U", 1.0, 1.0, 1.0)), 1.0);
}

TEST(StackModel, RejectsInvalidLayers) {
    EXPECT_THROW(StackModel({layer("P", 0.0, 1.0, 1.0)}), ValidationError);
    EXPECT_THROW(StackModel({layer("P", 1.0, -1.0, 1.0)}), ValidationError);
    EXPECT_THROW(StackModel({layer("P", 1.0, 1.0, 0.0)}), ValidationError);
    EXPECT_THROW(StackModel(std::vector<Layer>{}), ValidationError);
    Layer l = layer("P", 1.0, 1.0, 1.0);
    l.roughness_top = -1e-9;
    EXPECT_THROW(StackModel({l}), ValidationError);
    EXPECT_THROW(StackModel({l, l, l, l}), ValidationError);
}

TEST(StackModel, MeanFsrApproximatesBulkSpacing) {
    const StackModel s = oracle::stack_of(oracle::b1());
    const double bulk = 11059.0 / (2.0 * 434.57e-6);
    EXPECT_NEAR(s.fsr_mean() / bulk, 1.0, 0.2);
    EXPECT_NEAR(bulk, 12.724e6, 1e3);
}

TEST(CharacteristicResidual, UniformBarZerosAtHarmonics) {
    const double v = 10000.0, rho = 3000.0;
    const StackModel s({layer("P", 20e-6, v, rho), layer("B", 80e-6, v, rho)});
    const double f1 = v / (2.0 * 100e-6);
    for (int n = 1; n <= 20; ++n) EXPECT_NEAR(characteristic_residual(s, n * f1), 0.0, 1e-12) << n;
    EXPECT_GT(std::abs(characteristic_residual(s, 1.5 * f1)), 0.1);
}

TEST(CharacteristicResidual, MatchedDefectEqualsTwoLayerResidual) {
    const StackModel three({layer("P", 1.2e-6, 10920.0, 3306.0), layer("D", 10e-9, 11059.0, 3980.0),
                            layer("B", 434.57e-6, 11059.0, 3980.0)});
    const StackModel two({layer("P", 1.2e-6, 10920.0, 3306.0), layer("B", 434.58e-6, 11059.0, 3980.0)});
    for (double f = 4e9; f < 4.1e9; f += 0.37e6) {
        const double r3 = characteristic_residual(three, f);
        const double r2 = characteristic_residual(two, f);
        EXPECT_NEAR(r3, r2, 1e-12 * std::max(1.0, std::abs(r2))) << f;
    }
}

TEST(DefectModeParams, MatchedDefectLimit) {
    const StackModel s({layer("P", 1.2e-6, 10920.0, 3306.0), layer("D", 10e-9, 11059.0, 3980.0),
                        layer("B", 434.57e-6, 11059.0, 3980.0)});
    for (double f : {4.0013e9, 5.0021e9, 5.5037e9}) {
        const DefectModeParams p = defect_mode_params(s, f);
        EXPECT_NEAR(p.delta_d, -434.57e-6, 1e-12 * 434.57e-6);
        EXPECT_NEAR(p.eta, 1.0, 1e-12);
    }
}

TEST(DefectModeParams, QuarterWaveBulkGivesUnitEta) {
    const StackModel s = oracle::stack_of(oracle::b1());
    const double vb = 11059.0, tb = 434.57e-6;
    const double f = (1000.0 + 0.25) * vb / tb;  // 2 pi f t_B / v_B = pi/2 mod 2 pi
    EXPECT_NEAR(defect_mode_params(s, f).eta, 1.0, 1e-9);
}

TEST(DefectModeParams, RejectsTwoLayerStacks) {
    const StackModel s({layer("P", 1e-6, 1e4, 3e3), layer("B", 1e-4, 1e4, 3e3)});
    EXPECT_THROW(defect_mode_params(s, 5e9), ValidationError);
}

TEST(DefectModeParams, AmplitudesMatchDirectBoundarySolve) {
    const auto slabs = oracle::b1();
    const StackModel s = oracle::stack_of(slabs);
    const auto modes = solve_modes(s, 4.99e9, 5.01e9);
    ASSERT_FALSE(modes.empty());
    for (const auto& m : modes) {
        const auto w = oracle::standing_wave(slabs, m.frequency);
        EXPECT_LT(w.back_stress_relative, 1e-9);
        const double eta_direct = w.amplitude[1] / w.amplitude[2];
        EXPECT_LT(oracle::relative(m.eta, eta_direct), 1e-10) << m.frequency;
        EXPECT_LT(oracle::relative(std::abs(m.amplitudes[1]), w.amplitude[1] / w.amplitude[0]), 1e-10);
        EXPECT_LT(oracle::relative(std::abs(m.amplitudes[2]), w.amplitude[2] / w.amplitude[0]), 1e-10);
    }
}

TEST(DefectModeParams, DefectPhaseIsContinuous) {
    const StackModel s = oracle::stack_of(oracle::b1());
    const AcousticLine line = s.line();
    const double fsr = s.fsr_mean();
    const double vd = s.defect().velocity;
    double prev = interface_state(line, 5e9).defect_phase * vd / (kTwoPi * 5e9);
    const int n = 30000;  // three FSRs at 10^4 points each
    double worst = 0.0;
    for (int i = 1; i <= n; ++i) {
        const double f = 5e9 + 3.0 * fsr * i / n;
        const double d = interface_state(line, f).defect_phase * vd / (kTwoPi * f);
        worst = std::max(worst, std::abs(d - prev));
        prev = d;
    }
    const double branch_jump = vd / (2.0 * 5e9);
    EXPECT_LT(worst, 1e-3 * branch_jump);
}

TEST(AssignModeIndex, Examples) {
    const double d0 = 12.724e6;
    EXPECT_EQ(assign_mode_index(d0, d0), 1);
    EXPECT_EQ(assign_mode_index(5.000e9, d0), 393);
    const std::vector<double> comb{d0, 2 * d0, 4 * d0};
    EXPECT_EQ(assign_mode_index(comb, d0), (std::vector<long>{1, 2, 4}));
    EXPECT_THROW(assign_mode_index(comb, 0.0), ValidationError);
}

TEST(AssignModeIndex, NonDecreasingOnSortedInput) {
    std::mt19937_64 rng(7);
    std::vector<double> f(500);
    for (auto& x : f) x = std::uniform_real_distribution<double>(1e9, 2e9)(rng);
    std::sort(f.begin(), f.end());
    const auto n = assign_mode_index(f, 12.7e6);
    EXPECT_TRUE(std::is_sorted(n.begin(), n.end()));
}

TEST(SolveModes, UniformBarHasFiveRoots) {
    const double v = 8000.0, length = 250e-6, f1 = v / (2.0 * length);
    const StackModel one({layer("B", length, v, 2500.0)});
    const StackModel two({layer("P", 50e-6, v, 2500.0), layer("B", 200e-6, v, 2500.0)});
    for (const StackModel* s : {&one, &two}) {
        const auto modes = solve_modes(*s, 0.9 * f1, 5.1 * f1);
        ASSERT_EQ(modes.size(), 5u);
        for (int n = 1; n <= 5; ++n) {
            EXPECT_NEAR(modes[n - 1].frequency, n * f1, 1e-11 * n * f1);
            EXPECT_EQ(modes[n - 1].index, n);
        }
    }
}

TEST(SolveModes, EmptyIntervalAndBadBounds) {
    const StackModel s = oracle::stack_of(oracle::b1());
    EXPECT_TRUE(solve_modes(s, 5e9, 5e9).empty());
    EXPECT_TRUE(solve_modes(s, 5e9, 4e9).empty());
    EXPECT_THROW(solve_modes(s, 0.0, 1e9), ValidationError);
}

TEST(SolveModes, SampleB1Spectrum) {
    const StackModel s = oracle::stack_of(oracle::b1());
    const auto modes = solve_modes(s, 4e9, 6e9);
    EXPECT_NEAR(static_cast<double>(modes.size()), 157.0, 1.0);
    const double fsr = (modes.back().frequency - modes.front().frequency) / (modes.size() - 1);
    EXPECT_NEAR(fsr / 12.724e6, 1.0, 0.005);
    for (std::size_t i = 1; i < modes.size(); ++i) {
        EXPECT_GT(modes[i].frequency, modes[i - 1].frequency);
        EXPECT_EQ(modes[i].index, modes[i - 1].index + 1);
    }
}

TEST(SolveModes, FsrOscillatesWithPiezoPeriod) {
    const StackModel s = oracle::stack_of(oracle::b1());
    const auto modes = solve_modes(s, 1e9, 40e9);
    std::vector<double> fsr, mid;
    for (std::size_t i = 1; i < modes.size(); ++i) {
        fsr.push_back(modes[i].frequency - modes[i - 1].frequency);
        mid.push_back(0.5 * (modes[i].frequency + modes[i - 1].frequency));
    }
    std::vector<double> peaks;
    for (std::size_t i = 5; i + 5 < fsr.size(); ++i) {
        bool top = true;
        for (std::size_t j = i - 5; j <= i + 5; ++j) top = top && fsr[j] <= fsr[i];
        if (top) peaks.push_back(mid[i]);
    }
    ASSERT_GE(peaks.size(), 4u);
    const double period = (peaks.back() - peaks.front()) / (peaks.size() - 1);
    EXPECT_NEAR(period / (10920.0 / (2.0 * 1.1778e-6)), 1.0, 0.05);
}

TEST(SolveModes, RootsAreZerosOfTheDirectBoundaryProblem) {
    const auto slabs = oracle::b1();
    for (const auto& m : solve_modes(oracle::stack_of(slabs), 5e9, 5.2e9))
        EXPECT_LT(oracle::standing_wave(slabs, m.frequency).back_stress_relative, 1e-9);
}

TEST(SolveModes, CompleteAgainstDenseScan) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 30; ++trial) {
        const auto slabs = oracle::random_stack(rng, trial % 2 == 0 ? 3 : 2);
        const StackModel s = oracle::stack_of(slabs);
        const double fsr = s.fsr_mean();
        const double f1 = std::uniform_real_distribution<double>(1e9, 6e9)(rng);
        const double f2 = f1 + 60.0 * fsr;
        const auto roots = solve_modes(s, f1, f2);
        const auto brackets = oracle_brackets(slabs, f1, f2, fsr / 200.0);
        ASSERT_EQ(roots.size(), brackets.size()) << "trial " << trial;
        for (std::size_t i = 0; i < roots.size(); ++i) {
            EXPECT_GE(roots[i].frequency, brackets[i].first);
            EXPECT_LE(roots[i].frequency, brackets[i].second);
        }
    }
}

TEST(SolveModes, ThreeLayerWithMatchedDefectReproducesTwoLayerRoots) {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        auto slabs = oracle::random_stack(rng, 2);
        const double td = std::uniform_real_distribution<double>(5e-9, 100e-9)(rng);
        const std::vector<oracle::Slab> three{slabs[0], {td, slabs[1].velocity, slabs[1].density},
                                              {slabs[1].thickness - td, slabs[1].velocity, slabs[1].density}};
        const auto a = solve_modes(oracle::stack_of(slabs), 3e9, 3.5e9);
        const auto b = solve_modes(oracle::stack_of(three), 3e9, 3.5e9);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i)
            EXPECT_LT(oracle::relative(b[i].frequency, a[i].frequency), 1e-9);
    }
}
