#pragma once

#include <glob.h>

#include <algorithm>
#include <atomic>
#include <iostream>
#include <mutex>
#include <thread>

#include "cli/config.hpp"
#include "cli/io.hpp"

namespace hbar::cli {

enum ExitCode : int { kOk = 0, kValidation = 2, kNonConvergence = 3 };

struct Window {
    double f_min = 0.0;
    double f_max = 0.0;
};

inline Window resolve_window(const ProjectConfig& cfg, std::optional<double> f_min, std::optional<double> f_max) {
    Window w;
    if (f_min) w.f_min = *f_min;
    else if (cfg.spectrum.f_min) w.f_min = *cfg.spectrum.f_min;
    else throw ValidationError("--fmin not given and spectrum.fmin_hz missing from " + cfg.source.string());
    if (f_max) w.f_max = *f_max;
    else if (cfg.spectrum.f_max) w.f_max = *cfg.spectrum.f_max;
    else throw ValidationError("--fmax not given and spectrum.fmax_hz missing from " + cfg.source.string());
    if (!(w.f_min > 0.0) || !(w.f_max > w.f_min)) throw ValidationError("--fmin/--fmax: need 0 < fmin < fmax");
    return w;
}

// Runs work(i) for i in [0, n) on up to `jobs` threads; results stay in input order.
template <class Result, class Work>
std::vector<Result> run_pool(std::size_t n, int jobs, Work work) {
    std::vector<Result> out(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) out[i] = work(i);
    };
    const auto count = static_cast<std::size_t>(std::clamp(jobs, 1, 256));
    std::vector<std::thread> threads;
    for (std::size_t t = 1; t < std::min(count, n); ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    return out;
}

inline std::vector<std::string> expand_globs(const std::vector<std::string>& patterns) {
    std::vector<std::string> files;
    for (const auto& p : patterns) {
        glob_t g{};
        const int rc = ::glob(p.c_str(), GLOB_NOCHECK, nullptr, &g);
        if (rc == 0)
            for (std::size_t i = 0; i < g.gl_pathc; ++i) files.emplace_back(g.gl_pathv[i]);
        globfree(&g);
    }
    return files;
}

// ---------------------------------------------------------------- spectrum

inline Json mode_json(const ModeSolution& m) {
    Json j;
    j["n"] = m.index;
    j["f_hz"] = num(m.frequency);
    j["delta_d_m"] = num(m.delta_d);
    j["eta"] = num(m.eta);
    j["xi"] = num(m.xi);
    j["amplitudes"] = num_array(m.amplitudes);
    return j;
}

inline Json participation_json(const ModeSolution& m, const ParticipationRecord& p) {
    Json j;
    j["n"] = m.index;
    j["f_hz"] = num(m.frequency);
    Json pot, kin, tot;
    for (std::size_t k = 0; k < p.size(); ++k) {
        pot[p.names[k]] = num(p.p_pot[k]);
        kin[p.names[k]] = num(p.p_kin[k]);
        tot[p.names[k]] = num(p.p_tot[k]);
    }
    j["p_pot"] = pot;
    j["p_kin"] = kin;
    j["p_tot"] = tot;
    return j;
}

inline Json budget_json(const LossBudget& b) {
    Json j;
    j["n"] = b.index;
    j["f_hz"] = num(b.frequency);
    Json q;
    q["scatter"] = num(b.scatter);
    q["absorption"] = num(b.absorption);
    q["tls"] = num(b.tls);
    q["diffraction"] = num(b.diffraction);
    q["phonon_phonon"] = num(b.phonon_phonon);
    q["external"] = num(b.external);
    q["total"] = num(b.total);
    j["q_inv"] = q;
    j["q_total"] = num(b.total > 0.0 ? 1.0 / b.total : std::numeric_limits<double>::infinity());
    j["phonon_number"] = num(b.phonon_number);
    Json layers;
    for (const auto& l : b.per_layer) {
        Json e;
        e["scatter"] = num(l.scatter);
        e["absorption"] = num(l.absorption);
        e["tls"] = num(l.tls);
        layers[l.name] = e;
    }
    j["per_layer_q_inv"] = layers;
    return j;
}

inline Json modes_section(const ProjectConfig& cfg, const Window& w) {
    const StackModel stack = cfg.stack();
    const auto modes = solve_modes(stack, w.f_min, w.f_max);
    Json j;
    j["fmin_hz"] = num(w.f_min);
    j["fmax_hz"] = num(w.f_max);
    j["fsr_mean_hz"] = num(stack.fsr_mean());
    j["gouy_shift_hz"] = num(stack.gouy_shift());
    j["count"] = modes.size();
    Json list = Json::array();
    for (const auto& m : modes) list.push_back(mode_json(m));
    j["modes"] = list;
    return j;
}

inline Json participation_section(const ProjectConfig& cfg, const Window& w) {
    const StackModel stack = cfg.stack();
    Json list = Json::array();
    for (const auto& m : solve_modes(stack, w.f_min, w.f_max))
        list.push_back(participation_json(m, participation_ratios(stack, m)));
    Json j;
    j["fmin_hz"] = num(w.f_min);
    j["fmax_hz"] = num(w.f_max);
    j["modes"] = list;
    return j;
}

inline Json budget_section(const ProjectConfig& cfg, const Window& w) {
    const StackModel stack = cfg.stack();
    const BudgetOptions opt = cfg.budget_options();
    Json list = Json::array();
    for (const auto& m : solve_modes(stack, w.f_min, w.f_max))
        list.push_back(budget_json(compose_budget(stack, m, participation_ratios(stack, m), cfg.environment, opt)));
    Json j;
    j["fmin_hz"] = num(w.f_min);
    j["fmax_hz"] = num(w.f_max);
    j["temperature_k"] = num(cfg.environment.temperature);
    j["tls_channel"] = cfg.tls.has_value();
    j["diffraction_channel"] = cfg.include_diffraction;
    if (auto g = cfg.geometry()) {
        const auto waist = mode_waist(*g, stack.bulk().velocity, 0.5 * (w.f_min + w.f_max));
        Json d;
        d["waist_m_at_centre"] = num(waist.waist);
        d["rayleigh_length_m"] = num(waist.rayleigh_length);
        d["transverse_spacing_hz"] =
            num(transverse_mode_spacing(g->total_thickness, stack.bulk().velocity, waist.rayleigh_length));
        j["dome"] = d;
    }
    j["modes"] = list;
    return j;
}

// ---------------------------------------------------------------- resonance traces

struct TraceMeta {
    std::optional<double> power_dbm;
    std::optional<double> temperature_k;
    std::optional<long> mode_index;
};

inline TraceMeta read_sidecar(const fs::path& csv) {
    TraceMeta meta;
    fs::path side = csv;
    side.replace_extension(".json");
    if (!fs::exists(side)) return meta;
    std::ifstream in(side);
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw ValidationError(side.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ValidationError(side.string() + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (!it.value().is_number()) throw ValidationError(side.string() + ": '" + k + "' must be a number");
        if (k == "power_dbm") meta.power_dbm = it.value().get<double>();
        else if (k == "temperature_K") meta.temperature_k = it.value().get<double>();
        else if (k == "mode_index") meta.mode_index = it.value().get<long>();
        else throw ValidationError(side.string() + ": unknown key '" + k + "'");
    }
    return meta;
}

inline ComplexTrace read_trace(const fs::path& file) {
    const CsvTable t = read_csv(file);
    const std::size_t cf = require_column(t, "freq_hz"), cr = require_column(t, "re"), ci = require_column(t, "im");
    ComplexTrace trace;
    for (const auto& r : t.rows) {
        trace.frequency.push_back(r[cf]);
        trace.response.emplace_back(r[cr], r[ci]);
    }
    try {
        validate(trace);
    } catch (const ValidationError& e) {
        throw ValidationError(file.string() + ": " + e.what());
    }
    return trace;
}

inline Json resonance_json(const ResonanceFit& f, const TraceMeta& meta, const PhysicalConstants& c) {
    Json j;
    j["f_n_hz"] = num(f.f_n);
    j["q_i"] = num(f.q_i);
    j["q_e"] = num(f.q_e);
    j["phi_rad"] = num(f.phi);
    j["linewidth_hz"] = num(f.linewidth());
    Json s;
    s["f_n_hz"] = num(f.sigma.f_n);
    s["q_i"] = num(f.sigma.q_i);
    s["q_e"] = num(f.sigma.q_e);
    s["phi_rad"] = num(f.sigma.phi);
    j["sigma"] = s;
    Json b;
    b["reference_frequency_hz"] = num(f.background.reference_frequency);
    b["A"] = num(f.background.A);
    b["B_per_hz"] = num(f.background.B);
    b["C_per_hz2"] = num(f.background.C);
    b["a_rad"] = num(f.background.a);
    b["b_rad_per_hz"] = num(f.background.b);
    b["c_rad_per_hz2"] = num(f.background.c);
    j["background"] = b;
    j["residual_rms"] = num(f.residual_rms);
    j["noise_rms"] = num(f.noise_rms);
    j["converged"] = f.converged;
    if (meta.power_dbm) {
        const double watt = detail::dbm_to_watt(*meta.power_dbm);
        j["power_dbm"] = num(*meta.power_dbm);
        j["phonon_number"] = num(phonon_number(f, watt, c));
    }
    if (meta.temperature_k) j["temperature_k"] = num(*meta.temperature_k);
    if (meta.mode_index) j["mode_index"] = *meta.mode_index;
    Json w = Json::array();
    for (const auto& s2 : f.warnings) w.push_back(s2);
    j["warnings"] = w;
    return j;
}

struct TraceOutcome {
    Json entry;
    int code = kOk;
};

inline TraceOutcome fit_one_trace(const std::string& file, const PhysicalConstants& c) {
    TraceOutcome o;
    o.entry["file"] = file;
    try {
        const TraceMeta meta = read_sidecar(file);
        ComplexTrace trace = read_trace(file);
        if (meta.power_dbm) trace.input_power = detail::dbm_to_watt(*meta.power_dbm);
        const ResonanceFit fit = fit_resonance(trace);
        o.entry["status"] = "ok";
        o.entry["fit"] = resonance_json(fit, meta, c);
    } catch (const ResonanceConvergenceError& e) {
        o.code = kNonConvergence;
        o.entry["status"] = "not_converged";
        o.entry["error"] = e.what();
        o.entry["best_iterate"] = resonance_json(e.best_iterate(), {}, c);
    } catch (const NoResonanceError& e) {
        o.code = kValidation;
        o.entry["status"] = "no_resonance";
        o.entry["error"] = e.what();
    } catch (const ConvergenceError& e) {
        o.code = kNonConvergence;
        o.entry["status"] = "not_converged";
        o.entry["error"] = e.what();
    } catch (const std::exception& e) {
        o.code = kValidation;
        o.entry["status"] = "invalid";
        o.entry["error"] = e.what();
    }
    return o;
}

// Partial failure: failed files are reported and the run succeeds while at least one
// trace was fitted.
inline std::pair<Json, int> fit_traces(const std::vector<std::string>& patterns, int jobs,
                                       const PhysicalConstants& c) {
    const auto files = expand_globs(patterns);
    if (files.empty()) throw ValidationError("fit-s11: no trace files given");
    const auto outcomes = run_pool<TraceOutcome>(files.size(), jobs, [&](std::size_t i) { return fit_one_trace(files[i], c); });
    Json list = Json::array();
    std::size_t ok = 0;
    int worst = kOk;
    for (const auto& o : outcomes) {
        list.push_back(o.entry);
        if (o.code == kOk) ++ok;
        else worst = std::max(worst, o.code);
    }
    Json j;
    j["fitted"] = ok;
    j["failed"] = files.size() - ok;
    j["traces"] = list;
    return {j, ok > 0 ? kOk : worst};
}

// ---------------------------------------------------------------- combs and stack fits

inline ModeComb read_comb(const fs::path& file) {
    const CsvTable t = read_csv(file);
    const std::size_t cf = require_column(t, "f_hz");
    const auto cq = t.column("q_i");
    const auto cs = t.column("q_i_sigma");
    ModeComb comb;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        CombMode m;
        m.frequency = t.rows[i][cf];
        if (cq && std::isfinite(t.rows[i][*cq])) m.q_i = t.rows[i][*cq];
        if (cs && std::isfinite(t.rows[i][*cs])) m.q_i_sigma = t.rows[i][*cs];
        comb.modes.push_back(m);
    }
    try {
        validate(comb);
    } catch (const ValidationError& e) {
        throw ValidationError(file.string() + ": " + e.what());
    }
    return comb;
}

inline fs::path require_path(const std::optional<fs::path>& flag, const std::optional<fs::path>& configured,
                             const char* flag_name, const char* config_key) {
    if (flag) return *flag;
    if (configured) return *configured;
    throw ValidationError(std::string(flag_name) + " not given and " + config_key + " missing from the config");
}

struct StackFitRequest {
    std::vector<std::string> pinned;
    std::optional<double> psi_hz;
    int restarts = 4;
    unsigned seed = 12345;
    int jobs = 1;
};

struct StackFitOutcome {
    Json section;
    std::vector<Layer> layers;
    double psi = 0.0;
    bool converged = false;
};

inline StackFitOutcome fit_stack_section(const ProjectConfig& cfg, const ModeComb& comb, const StackFitRequest& req) {
    const StackModel stack = cfg.stack();
    ReducedStackParams init = reduce(stack);
    init.psi = req.psi_hz.value_or(cfg.gouy_shift);
    StackFitConstraints c;
    for (const auto& name : req.pinned) {
        const auto it = std::find(ReducedStackParams::kNames.begin(), ReducedStackParams::kNames.end(), name);
        if (it == ReducedStackParams::kNames.end())
            throw ValidationError("--pin: unknown parameter '" + name + "' (use beta_p, beta_d, beta_b, zp_over_zd, zb_over_zd, psi)");
        c.pinned[static_cast<std::size_t>(it - ReducedStackParams::kNames.begin())] = true;
    }
    c.restarts = req.restarts;
    c.seed = req.seed;
    c.jobs = req.jobs;
    const StackFitResult r = fit_stack(comb, init, c);

    Json p, s, i0;
    const auto v = r.params.to_array();
    const auto v0 = init.to_array();
    for (std::size_t k = 0; k < ReducedStackParams::kCount; ++k) {
        p[ReducedStackParams::kNames[k]] = num(v[k]);
        s[ReducedStackParams::kNames[k]] = num(r.sigma[k]);
        i0[ReducedStackParams::kNames[k]] = num(v0[k]);
    }
    Json j;
    j["initial"] = i0;
    j["params"] = p;
    j["sigma"] = s;
    Json deg = Json::array();
    for (const auto& d : r.degenerate_directions) deg.push_back(num_array({d.begin(), d.end()}));
    j["degenerate_directions"] = deg;
    j["epsilon_hz2"] = num(r.epsilon);
    j["rms_residual_hz"] = num(r.rms_residual);
    j["matched"] = r.matched;
    j["unmatched"] = r.unmatched;
    j["fsr_hz"] = num(r.fsr);
    j["evaluations"] = r.evaluations;
    j["converged"] = r.converged;
    j["residual_hz"] = num_array(r.residual);

    StackFitOutcome out;
    out.psi = r.params.psi;
    out.converged = r.converged;
    const auto& layers = stack.layers();
    const Layer& lp = layers.front();
    const Layer& lb = layers.back();
    const double t_d = stack.has_defect() ? stack.defect().thickness : 0.0;
    const std::string d_name = stack.has_defect() ? stack.defect().name : "D";
    const LayerExpansion ex = expand_to_layers(r.params, {lp.name, lp.velocity, lp.density},
                                               {lb.name, lb.velocity, lb.density}, t_d, d_name);
    out.layers = ex.layers;
    for (std::size_t k = 0; k < out.layers.size(); ++k) {
        const Layer* src = nullptr;
        for (const auto& l : layers)
            if (l.name == out.layers[k].name) src = &l;
        if (src) {
            out.layers[k].q_mech_inv = src->q_mech_inv;
            out.layers[k].q_tls_inv = src->q_tls_inv;
        }
    }
    Json layers_json = Json::array();
    for (const auto& l : out.layers) {
        Json e;
        e["name"] = l.name;
        e["thickness_um"] = num(l.thickness / units::um);
        e["velocity_km_s"] = num(l.velocity / units::km_per_s);
        e["density_g_cm3"] = num(l.density / units::g_per_cm3);
        layers_json.push_back(e);
    }
    j["expanded_layers"] = layers_json;
    j["impedance_consistency"] = num(ex.impedance_consistency);
    out.section = j;
    return out;
}

inline std::string regenerated_config(const ProjectConfig& cfg, const StackFitOutcome& fit) {
    YAML::Emitter out;
    out.SetDoublePrecision(12);
    out << YAML::BeginMap;
    if (!cfg.sample.empty()) out << YAML::Key << "sample" << YAML::Value << cfg.sample;
    emit_layers(out, fit.layers, cfg.roughness, fit.psi);
    if (cfg.dome) {
        out << YAML::Key << "dome" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "radius_of_curvature_mm" << YAML::Value << cfg.dome->radius_of_curvature / units::mm;
        out << YAML::Key << "dome_radius_um" << YAML::Value << cfg.dome->dome_radius / units::um;
        out << YAML::Key << "anisotropy" << YAML::Value << cfg.dome->anisotropy;
        out << YAML::EndMap;
    }
    if (cfg.spectrum.f_min || cfg.spectrum.f_max) {
        out << YAML::Key << "spectrum" << YAML::Value << YAML::BeginMap;
        if (cfg.spectrum.f_min) out << YAML::Key << "fmin_hz" << YAML::Value << *cfg.spectrum.f_min;
        if (cfg.spectrum.f_max) out << YAML::Key << "fmax_hz" << YAML::Value << *cfg.spectrum.f_max;
        out << YAML::EndMap;
    }
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

// Measured modes paired with the nearest model mode of the configured stack.
struct PairedMode {
    std::size_t row = 0;
    double measured = 0.0;
    ModeSolution model;
    ParticipationRecord participation;
};

inline std::vector<PairedMode> pair_with_model(const StackModel& stack, const std::vector<double>& measured,
                                               std::vector<std::string>& warnings) {
    if (measured.empty()) return {};
    const double fsr = stack.fsr_mean();
    const double shift = stack.gouy_shift();
    const double lo = std::max(0.5 * fsr, measured.front() - shift - 2.0 * fsr);
    const double hi = measured.back() - shift + 2.0 * fsr;
    const auto modes = solve_modes(stack, lo, hi);
    std::vector<PairedMode> out;
    for (std::size_t i = 0; i < measured.size(); ++i) {
        const double target = measured[i] - shift;
        auto it = std::min_element(modes.begin(), modes.end(), [&](const auto& a, const auto& b) {
            return std::abs(a.frequency - target) < std::abs(b.frequency - target);
        });
        if (it == modes.end() || std::abs(it->frequency - target) > 0.5 * fsr) {
            warnings.push_back("row " + std::to_string(i) + ": no model mode within FSR/2 of " +
                               std::to_string(measured[i]) + " Hz");
            continue;
        }
        out.push_back({i, measured[i], *it, participation_ratios(stack, *it)});
    }
    return out;
}

inline Json tangent_json(const TangentFit& t) {
    Json layers;
    for (std::size_t k = 0; k < t.names.size(); ++k) {
        Json e;
        e["tangent"] = num(t.tangent[k]);
        e["sigma"] = num(t.sigma[k]);
        e["at_bound"] = static_cast<bool>(t.at_bound[k]);
        e["min_q"] = num(t.lower_bound_q[k]);
        layers[t.names[k].empty() ? "layer" + std::to_string(k) : t.names[k]] = e;
    }
    Json j;
    j["layers"] = layers;
    j["condition_number"] = num(t.condition_number);
    j["ill_conditioned"] = t.ill_conditioned;
    j["residual_norm"] = num(t.residual_norm);
    j["chi2_reduced"] = num(t.chi2_reduced);
    return j;
}

inline std::vector<bool> pin_mask(const StackModel& stack, const std::vector<std::string>& names,
                                  std::vector<bool> mask) {
    if (names.empty()) return mask;
    mask.assign(stack.size(), false);
    for (const auto& n : names) {
        bool found = false;
        for (std::size_t k = 0; k < stack.size(); ++k)
            if (stack.layers()[k].name == n) {
                mask[k] = true;
                found = true;
            }
        if (!found) throw ValidationError("--pin-zero: no layer named '" + n + "' in the stack");
    }
    return mask;
}

inline Json fit_loss_section(const ProjectConfig& cfg, const ModeComb& comb, const std::vector<std::string>& pins) {
    const StackModel stack = cfg.stack();
    std::vector<double> f;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < comb.modes.size(); ++i)
        if (comb.modes[i].q_i) {
            f.push_back(comb.modes[i].frequency);
            rows.push_back(i);
        }
    if (f.empty()) throw ValidationError("fit-loss: the comb has no q_i values");
    std::vector<std::string> warnings;
    const auto paired = pair_with_model(stack, f, warnings);
    std::vector<AbsorptionSample> samples;
    Json modes = Json::array();
    for (const auto& pm : paired) {
        const CombMode& cm = comb.modes[rows[pm.row]];
        const double q = *cm.q_i;
        if (!(q > 0.0)) throw ValidationError("fit-loss: q_i must be > 0 (row " + std::to_string(rows[pm.row]) + ")");
        AbsorptionSample s;
        s.participation = pm.participation;
        s.q_inv_measured = 1.0 / q;
        s.q_inv_scatter = q_scatter(stack, pm.model, pm.participation).total;
        s.sigma = cm.q_i_sigma ? *cm.q_i_sigma / (q * q) : 0.0;
        samples.push_back(s);
        Json e;
        e["f_hz"] = num(pm.measured);
        e["model_index"] = pm.model.index;
        e["q_inv_measured"] = num(s.q_inv_measured);
        e["q_inv_scatter"] = num(s.q_inv_scatter);
        modes.push_back(e);
    }
    TangentFitOptions opt;
    opt.pinned_zero = pin_mask(stack, pins, {});
    const TangentFit t = fit_absorption_tangents(samples, opt);
    Json j = tangent_json(t);
    j["modes_used"] = samples.size();
    j["modes"] = modes;
    j["warnings"] = warnings;
    return j;
}

inline Json fit_tls_section(const ProjectConfig& cfg, const fs::path& file, const std::vector<std::string>& pins) {
    const StackModel stack = cfg.stack();
    const CsvTable t = read_csv(file);
    const std::size_t cf = require_column(t, "f_hz"), cq = require_column(t, "q_inv_tls");
    const auto cs = t.column("sigma");
    std::vector<double> f;
    for (const auto& r : t.rows) f.push_back(r[cf]);
    if (!std::is_sorted(f.begin(), f.end())) throw ValidationError(file.string() + ": f_hz must be increasing");
    std::vector<std::string> warnings;
    const auto paired = pair_with_model(stack, f, warnings);
    std::vector<TlsSample> samples;
    for (const auto& pm : paired) {
        const auto& r = t.rows[pm.row];
        samples.push_back({pm.participation.p_pot, r[cq], cs && std::isfinite(r[*cs]) ? r[*cs] : 0.0});
    }
    std::vector<std::string> names;
    for (const auto& l : stack.layers()) names.push_back(l.name);
    TangentFitOptions opt;
    std::vector<bool> def(stack.size(), false);
    def.back() = true;
    opt.pinned_zero = pin_mask(stack, pins, def);
    const TangentFit fit = fit_tls_tangents(samples, opt, names);
    Json j = tangent_json(fit);
    j["modes_used"] = samples.size();
    j["warnings"] = warnings;
    return j;
}

// ---------------------------------------------------------------- stability

inline FrequencySeries read_series(const fs::path& file, std::optional<double> reference) {
    const CsvTable t = read_csv(file);
    const std::size_t ct = require_column(t, "t_s");
    if (auto cy = t.column("df_over_f")) {
        FrequencySeries s{t.values(ct), t.values(*cy)};
        validate(s);
        return s;
    }
    if (auto cf = t.column("f_hz")) {
        if (!reference) throw ValidationError(file.string() + ": column f_hz needs --ref-freq-hz");
        FrequencySeries s = fractional_series(t.values(ct), t.values(*cf), *reference);
        validate(s);
        return s;
    }
    throw ValidationError(file.string() + ": need column df_over_f, or f_hz with --ref-freq-hz");
}

inline Json stability_section(const FrequencySeries& s) {
    const Spectrum raw = psd(s);
    const Spectrum binned = log_bin(raw);
    Json j;
    j["samples"] = s.size();
    j["dt_s"] = num(s.dt());
    Json p;
    p["frequency_hz"] = num_array(binned.frequency);
    p["density_per_hz"] = num_array(binned.density);
    if (binned.frequency.size() >= 4) {
        const PowerLawFit fit = fit_power_law(binned.frequency, binned.density);
        p["alpha"] = num(-fit.exponent);
        p["alpha_sigma"] = num(fit.sigma_exponent);
        p["amplitude"] = num(fit.amplitude);
    }
    j["psd"] = p;
    const AllanResult a = allan_deviation(s, log_tau_grid(s));
    std::vector<double> tau, dev;
    for (const auto& pt : a.points) {
        tau.push_back(pt.tau);
        dev.push_back(pt.deviation);
    }
    Json ad;
    ad["tau_s"] = num_array(tau);
    ad["deviation"] = num_array(dev);
    ad["omitted_tau_s"] = num_array(a.omitted);
    if (tau.size() >= 4) {
        const PowerLawFit fit = fit_power_law(tau, dev);
        ad["exponent"] = num(fit.exponent);
        ad["exponent_sigma"] = num(fit.sigma_exponent);
    }
    j["allan"] = ad;
    return j;
}

}  // namespace hbar::cli
