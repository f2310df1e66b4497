#include <CLI11.hpp>

#include <iostream>

#include "cli/commands.hpp"

using namespace hbar;
using namespace hbar::cli;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<double> f_min, f_max;
    int jobs = 1;
    unsigned seed = 12345;
};

void add_window(CLI::App* cmd, Common& c) {
    cmd->add_option("--fmin", c.f_min, "lower frequency bound, Hz");
    cmd->add_option("--fmax", c.f_max, "upper frequency bound, Hz");
}

int emit(const std::string& out, const Json& doc) {
    if (out.empty() || out == "-") {
        std::cout << doc.dump(2) << "\n";
    } else {
        write_json(out, doc);
    }
    return kOk;
}

Json with_sample(const std::string& kind, const ProjectConfig& cfg) {
    Json doc = document(kind);
    doc["sample"] = cfg.sample;
    doc["config"] = cfg.source.string();
    return doc;
}

void print_warnings(const Json& section) {
    if (section.contains("warnings"))
        for (const auto& w : section["warnings"]) std::cerr << "warning: " << w.get<std::string>() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layered HBAR spectrum, loss and stability analysis"};
    app.require_subcommand(1);
    Common c;
    std::vector<std::string> pins, traces;
    std::optional<std::string> comb_path, series_path, tls_path, out_config;
    std::optional<double> ref_freq, psi_hz;
    int restarts = 4;

    auto* modes = app.add_subcommand("modes", "solve the mode spectrum of a configured stack");
    auto* part = app.add_subcommand("participation", "per-layer energy participation of each mode");
    auto* budget = app.add_subcommand("budget", "per-mode loss budget");
    auto* s11 = app.add_subcommand("fit-s11", "fit reflection traces (freq_hz,re,im)");
    auto* stack = app.add_subcommand("fit-stack", "fit the reduced stack parameters to a measured comb");
    auto* loss = app.add_subcommand("fit-loss", "fit per-layer absorption tangents to measured Q_i");
    auto* tls = app.add_subcommand("fit-tls", "fit per-layer TLS tangents");
    auto* stab = app.add_subcommand("stability", "PSD and Allan deviation of a frequency series");
    auto* report = app.add_subcommand("report", "all configured analyses of one sample in a single JSON");

    for (auto* cmd : {modes, part, budget, stack, loss, tls, report})
        cmd->add_option("--config", c.config, "sample configuration (YAML)")->required();
    for (auto* cmd : {modes, part, budget, s11, stack, loss, tls, stab, report})
        cmd->add_option("--out", c.out, "output JSON path ('-' for stdout)");
    for (auto* cmd : {modes, part, budget, report}) add_window(cmd, c);
    for (auto* cmd : {s11, stack, report}) {
        cmd->add_option("--jobs", c.jobs, "worker threads")->check(CLI::Range(1, 256));
    }
    for (auto* cmd : {stack, report}) {
        cmd->add_option("--seed", c.seed, "seed for restart perturbations");
        cmd->add_option("--restarts", restarts, "restart rounds")->check(CLI::Range(0, 100));
    }
    s11->add_option("traces", traces, "trace files or glob patterns")->required();
    stack->add_option("--comb", comb_path, "comb CSV (f_hz[,q_i,q_i_sigma])");
    stack->add_option("--pin", pins, "reduced parameters held at their initial value");
    stack->add_option("--psi-hz", psi_hz, "initial Gouy offset, Hz");
    stack->add_option("--out-config", out_config, "write the fitted stack as a configuration file");
    loss->add_option("--comb", comb_path, "comb CSV with q_i and q_i_sigma");
    loss->add_option("--pin-zero", pins, "layers whose tangent is fixed at zero");
    tls->add_option("--data", tls_path, "CSV f_hz,q_inv_tls[,sigma]");
    tls->add_option("--pin-zero", pins, "layers fixed at zero (default: the bulk)");
    stab->add_option("--series", series_path, "CSV t_s,df_over_f or t_s,f_hz")->required();
    stab->add_option("--ref-freq-hz", ref_freq, "reference frequency for f_hz series");
    report->add_option("--ref-freq-hz", ref_freq, "reference frequency for f_hz series");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kValidation;
    }

    try {
        if (*modes) {
            const ProjectConfig cfg = load_config(c.config);
            Json doc = with_sample("modes", cfg);
            doc.update(modes_section(cfg, resolve_window(cfg, c.f_min, c.f_max)));
            return emit(c.out, doc);
        }
        if (*part) {
            const ProjectConfig cfg = load_config(c.config);
            Json doc = with_sample("participation", cfg);
            doc.update(participation_section(cfg, resolve_window(cfg, c.f_min, c.f_max)));
            return emit(c.out, doc);
        }
        if (*budget) {
            const ProjectConfig cfg = load_config(c.config);
            Json doc = with_sample("budget", cfg);
            doc.update(budget_section(cfg, resolve_window(cfg, c.f_min, c.f_max)));
            return emit(c.out, doc);
        }
        if (*s11) {
            auto [section, code] = fit_traces(traces, c.jobs, kCodata);
            for (const auto& t : section["traces"])
                if (t["status"] != "ok")
                    std::cerr << "warning: " << t["file"].get<std::string>() << ": " << t["error"].get<std::string>() << "\n";
            Json doc = document("fit-s11");
            doc.update(section);
            emit(c.out, doc);
            return code;
        }
        if (*stack) {
            const ProjectConfig cfg = load_config(c.config);
            const ModeComb comb = read_comb(require_path(comb_path ? std::optional<fs::path>(*comb_path) : std::nullopt,
                                                         cfg.paths.comb_csv, "--comb", "paths.comb_csv"));
            const StackFitOutcome fit = fit_stack_section(cfg, comb, {pins, psi_hz, restarts, c.seed, c.jobs});
            Json doc = with_sample("fit-stack", cfg);
            doc.update(fit.section);
            emit(c.out, doc);
            if (out_config) write_atomic(*out_config, regenerated_config(cfg, fit));
            if (!fit.converged) {
                std::cerr << "fit-stack: minimizer did not converge\n";
                return kNonConvergence;
            }
            return kOk;
        }
        if (*loss) {
            const ProjectConfig cfg = load_config(c.config);
            const ModeComb comb = read_comb(require_path(comb_path ? std::optional<fs::path>(*comb_path) : std::nullopt,
                                                         cfg.paths.comb_csv, "--comb", "paths.comb_csv"));
            const Json section = fit_loss_section(cfg, comb, pins);
            print_warnings(section);
            Json doc = with_sample("fit-loss", cfg);
            doc.update(section);
            return emit(c.out, doc);
        }
        if (*tls) {
            const ProjectConfig cfg = load_config(c.config);
            const fs::path data = require_path(tls_path ? std::optional<fs::path>(*tls_path) : std::nullopt,
                                               cfg.paths.tls_csv, "--data", "paths.tls_csv");
            const Json section = fit_tls_section(cfg, data, pins);
            print_warnings(section);
            Json doc = with_sample("fit-tls", cfg);
            doc.update(section);
            return emit(c.out, doc);
        }
        if (*stab) {
            Json doc = document("stability");
            doc["series"] = *series_path;
            doc.update(stability_section(read_series(*series_path, ref_freq)));
            return emit(c.out, doc);
        }
        if (*report) {
            const ProjectConfig cfg = load_config(c.config);
            const Window w = resolve_window(cfg, c.f_min, c.f_max);
            Json doc = with_sample("report", cfg);
            doc["modes"] = modes_section(cfg, w);
            doc["participation"] = participation_section(cfg, w)["modes"];
            doc["budget"] = budget_section(cfg, w);
            int code = kOk;
            Json errors = Json::array();
            auto attempt = [&](const char* name, auto&& body) {
                try {
                    doc[name] = body();
                } catch (const ConvergenceError& e) {
                    errors.push_back(std::string(name) + ": " + e.what());
                    code = std::max<int>(code, kNonConvergence);
                } catch (const std::exception& e) {
                    errors.push_back(std::string(name) + ": " + e.what());
                    code = std::max<int>(code, kValidation);
                }
            };
            if (cfg.paths.comb_csv) {
                const ModeComb comb = read_comb(*cfg.paths.comb_csv);
                attempt("fit_stack", [&] {
                    const StackFitOutcome fit = fit_stack_section(cfg, comb, {{}, std::nullopt, restarts, c.seed, c.jobs});
                    if (!fit.converged) throw ConvergenceError("minimizer did not converge");
                    return fit.section;
                });
                if (std::any_of(comb.modes.begin(), comb.modes.end(), [](const auto& m) { return m.q_i.has_value(); }))
                    attempt("fit_loss", [&] { return fit_loss_section(cfg, comb, {}); });
            }
            if (cfg.paths.tls_csv) attempt("fit_tls", [&] { return fit_tls_section(cfg, *cfg.paths.tls_csv, {}); });
            if (!cfg.paths.traces.empty())
                attempt("fit_s11", [&] { return fit_traces(cfg.paths.traces, c.jobs, cfg.constants).first; });
            if (cfg.paths.series_csv)
                attempt("stability", [&] { return stability_section(read_series(*cfg.paths.series_csv, ref_freq)); });
            doc["errors"] = errors;
            for (const auto& e : errors) std::cerr << "error: " << e.get<std::string>() << "\n";
            fs::path out = c.out;
            if (out.empty()) {
                const fs::path dir = cfg.paths.output_dir.value_or(".");
                out = dir / ((cfg.sample.empty() ? std::string("sample") : cfg.sample) + "_report.json");
            }
            emit(out.string(), doc);
            return code;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const DegenerateEvaluation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const NoResonanceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNonConvergence;
    } catch (const YAML::Exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    }
    return kOk;
}
