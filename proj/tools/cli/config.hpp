#pragma once

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hbar/hbar.hpp"

namespace hbar::cli {

namespace fs = std::filesystem;

struct Roughness {
    double top = 0.0;        // m
    double interface = 0.0;  // m
    double back = 0.0;       // m
};

struct SpectrumWindow {
    std::optional<double> f_min;
    std::optional<double> f_max;
};

struct Paths {
    std::optional<fs::path> comb_csv;
    std::vector<std::string> traces;
    std::optional<fs::path> series_csv;
    std::optional<fs::path> tls_csv;
    std::optional<fs::path> output_dir;
};

struct DomeInput {
    double radius_of_curvature = 0.0;  // m
    double dome_radius = 0.0;          // m
    double anisotropy = 1.5;
};

struct ProjectConfig {
    fs::path source;
    std::string sample;
    std::vector<Layer> layers;  // roughness already assigned
    Roughness roughness;
    double gouy_shift = 0.0;
    std::optional<DomeInput> dome;
    std::optional<TlsParams> tls;
    std::optional<ThermalLossParams> thermal;
    Environment environment;
    bool include_diffraction = false;
    double external_q_inv = 0.0;
    PhysicalConstants constants = kCodata;
    SpectrumWindow spectrum;
    Paths paths;

    StackModel stack() const { return StackModel(layers, gouy_shift); }

    std::optional<DomeGeometry> geometry() const {
        if (!dome) return std::nullopt;
        double total = 0.0;
        for (const auto& l : layers) total += l.thickness;
        DomeGeometry g{dome->radius_of_curvature, dome->dome_radius, total, dome->anisotropy};
        validate(g);
        return g;
    }

    BudgetOptions budget_options() const {
        BudgetOptions o;
        o.geometry = geometry();
        o.include_diffraction = include_diffraction;
        if (tls) o.n_c = tls->n_c;
        o.thermal = thermal;
        o.external_q_inv = external_q_inv;
        o.constants = constants;
        return o;
    }
};

namespace detail {

class Reader {
public:
    explicit Reader(std::string file) : file_(std::move(file)) {}

    [[noreturn]] void fail(const std::string& path, const std::string& what) const {
        throw ValidationError("config " + file_ + ": " + (path.empty() ? "" : "'" + path + "' ") + what);
    }

    void check_keys(const YAML::Node& node, const std::string& path, const std::set<std::string>& allowed) const {
        if (!node.IsMap()) fail(path, "must be a mapping");
        for (const auto& kv : node) {
            const auto key = kv.first.as<std::string>();
            if (!allowed.count(key)) fail(join(path, key), "is not a recognised key");
        }
    }

    double number(const YAML::Node& node, const std::string& path) const {
        if (!node || !node.IsScalar()) fail(path, "must be a number");
        try {
            return node.as<double>();
        } catch (const YAML::Exception&) {
            fail(path, "must be a number, got '" + node.Scalar() + "'");
        }
    }

    double required(const YAML::Node& parent, const std::string& path, const std::string& key) const {
        if (!parent[key]) fail(join(path, key), "is required");
        return number(parent[key], join(path, key));
    }

    std::optional<double> optional(const YAML::Node& parent, const std::string& path, const std::string& key) const {
        if (!parent[key]) return std::nullopt;
        return number(parent[key], join(path, key));
    }

    std::string text(const YAML::Node& node, const std::string& path) const {
        if (!node.IsScalar()) fail(path, "must be a string");
        return node.as<std::string>();
    }

    bool flag(const YAML::Node& node, const std::string& path) const {
        try {
            return node.as<bool>();
        } catch (const YAML::Exception&) {
            fail(path, "must be true or false");
        }
    }

    static std::string join(const std::string& path, const std::string& key) {
        return path.empty() ? key : path + "." + key;
    }

private:
    std::string file_;
};

inline double dbm_to_watt(double dbm) { return 1e-3 * std::pow(10.0, dbm / 10.0); }

}  // namespace detail

inline ProjectConfig parse_config(const YAML::Node& root, const fs::path& source) {
    detail::Reader r(source.string());
    ProjectConfig cfg;
    cfg.source = source;
    const fs::path base = source.has_parent_path() ? source.parent_path() : fs::path(".");

    r.check_keys(root, "", {"sample", "stack", "dome", "tls", "thermal", "environment", "budget", "constants",
                            "spectrum", "paths"});
    if (root["sample"]) cfg.sample = r.text(root["sample"], "sample");

    const YAML::Node stack = root["stack"];
    if (!stack) r.fail("stack", "is required");
    r.check_keys(stack, "stack", {"layers", "roughness", "gouy_shift_hz"});
    if (auto v = r.optional(stack, "stack", "gouy_shift_hz")) cfg.gouy_shift = *v;
    const YAML::Node layers = stack["layers"];
    if (!layers || !layers.IsSequence()) r.fail("stack.layers", "must be a list of layers");
    if (layers.size() < 1 || layers.size() > 3) r.fail("stack.layers", "must hold 1 to 3 layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "stack.layers[" + std::to_string(i) + "]";
        const YAML::Node l = layers[i];
        r.check_keys(l, p, {"name", "thickness_um", "velocity_km_s", "density_g_cm3", "q_mech_inv", "q_tls_inv"});
        Layer layer;
        if (l["name"]) {
            layer.name = r.text(l["name"], p + ".name");
        } else {
            layer.name = i == 0 ? "P" : (i + 1 == layers.size() ? "B" : "D");
        }
        layer.thickness = r.required(l, p, "thickness_um") * units::um;
        layer.velocity = r.required(l, p, "velocity_km_s") * units::km_per_s;
        layer.density = r.required(l, p, "density_g_cm3") * units::g_per_cm3;
        layer.q_mech_inv = r.optional(l, p, "q_mech_inv").value_or(0.0);
        layer.q_tls_inv = r.optional(l, p, "q_tls_inv").value_or(0.0);
        try {
            validate(layer);
        } catch (const ValidationError& e) {
            r.fail(p, e.what());
        }
        cfg.layers.push_back(layer);
    }
    if (const YAML::Node rough = stack["roughness"]) {
        r.check_keys(rough, "stack.roughness", {"top_nm", "interface_nm", "back_nm"});
        cfg.roughness.top = r.optional(rough, "stack.roughness", "top_nm").value_or(0.0) * units::nm;
        cfg.roughness.interface = r.optional(rough, "stack.roughness", "interface_nm").value_or(0.0) * units::nm;
        cfg.roughness.back = r.optional(rough, "stack.roughness", "back_nm").value_or(0.0) * units::nm;
    }
    try {
        cfg.layers = assign_roughness(cfg.layers, cfg.roughness.top, cfg.roughness.interface, cfg.roughness.back);
    } catch (const ValidationError& e) {
        r.fail("stack.roughness", e.what());
    }

    if (const YAML::Node dome = root["dome"]) {
        r.check_keys(dome, "dome", {"radius_of_curvature_mm", "dome_radius_um", "anisotropy"});
        DomeInput d;
        d.radius_of_curvature = r.required(dome, "dome", "radius_of_curvature_mm") * units::mm;
        d.dome_radius = r.required(dome, "dome", "dome_radius_um") * units::um;
        d.anisotropy = r.optional(dome, "dome", "anisotropy").value_or(1.5);
        cfg.dome = d;
    }
    if (const YAML::Node tls = root["tls"]) {
        r.check_keys(tls, "tls", {"n_c", "omega_max_rad_s"});
        TlsParams t;
        t.n_c = r.required(tls, "tls", "n_c");
        t.omega_max = r.optional(tls, "tls", "omega_max_rad_s").value_or(0.0);
        if (!(t.n_c > 0.0)) r.fail("tls.n_c", "must be > 0");
        cfg.tls = t;
    }
    if (const YAML::Node th = root["thermal"]) {
        r.check_keys(th, "thermal", {"akhiezer_product_j_s_per_m3_k", "grueneisen"});
        cfg.thermal = ThermalLossParams{r.required(th, "thermal", "akhiezer_product_j_s_per_m3_k"),
                                        r.required(th, "thermal", "grueneisen")};
    }
    if (const YAML::Node env = root["environment"]) {
        r.check_keys(env, "environment", {"temperature_k", "phonon_number", "input_power_dbm", "external_q"});
        cfg.environment.temperature = r.optional(env, "environment", "temperature_k").value_or(0.0);
        cfg.environment.phonon_number = r.optional(env, "environment", "phonon_number");
        if (auto dbm = r.optional(env, "environment", "input_power_dbm"))
            cfg.environment.input_power = detail::dbm_to_watt(*dbm);
        cfg.environment.external_q = r.optional(env, "environment", "external_q");
        if (cfg.environment.phonon_number && cfg.environment.input_power)
            r.fail("environment", "give either phonon_number or input_power_dbm, not both");
        if (cfg.environment.input_power && !cfg.environment.external_q)
            r.fail("environment.external_q", "is required with input_power_dbm");
        if (!(cfg.environment.temperature >= 0.0)) r.fail("environment.temperature_k", "must be >= 0");
    }
    if (const YAML::Node b = root["budget"]) {
        r.check_keys(b, "budget", {"include_diffraction", "external_q_inv"});
        if (b["include_diffraction"]) cfg.include_diffraction = r.flag(b["include_diffraction"], "budget.include_diffraction");
        cfg.external_q_inv = r.optional(b, "budget", "external_q_inv").value_or(0.0);
        if (cfg.include_diffraction && !cfg.dome) r.fail("budget.include_diffraction", "needs a dome section");
    }
    if (const YAML::Node c = root["constants"]) {
        r.check_keys(c, "constants", {"planck_j_s", "boltzmann_j_per_k"});
        cfg.constants.planck = r.optional(c, "constants", "planck_j_s").value_or(kCodata.planck);
        cfg.constants.boltzmann = r.optional(c, "constants", "boltzmann_j_per_k").value_or(kCodata.boltzmann);
        if (!(cfg.constants.planck > 0.0) || !(cfg.constants.boltzmann > 0.0))
            r.fail("constants", "values must be > 0");
    }
    if (const YAML::Node s = root["spectrum"]) {
        r.check_keys(s, "spectrum", {"fmin_hz", "fmax_hz"});
        cfg.spectrum.f_min = r.optional(s, "spectrum", "fmin_hz");
        cfg.spectrum.f_max = r.optional(s, "spectrum", "fmax_hz");
    }
    if (const YAML::Node p = root["paths"]) {
        r.check_keys(p, "paths", {"comb_csv", "traces", "series_csv", "tls_csv", "output_dir"});
        auto path_of = [&](const char* key) -> std::optional<fs::path> {
            if (!p[key]) return std::nullopt;
            const fs::path v = r.text(p[key], std::string("paths.") + key);
            return v.is_absolute() ? v : base / v;
        };
        cfg.paths.comb_csv = path_of("comb_csv");
        cfg.paths.series_csv = path_of("series_csv");
        cfg.paths.tls_csv = path_of("tls_csv");
        cfg.paths.output_dir = path_of("output_dir");
        if (const YAML::Node t = p["traces"]) {
            auto add = [&](const YAML::Node& n, const std::string& where) {
                const fs::path v = r.text(n, where);
                cfg.paths.traces.push_back((v.is_absolute() ? v : base / v).string());
            };
            if (t.IsSequence()) {
                for (std::size_t i = 0; i < t.size(); ++i) add(t[i], "paths.traces[" + std::to_string(i) + "]");
            } else {
                add(t, "paths.traces");
            }
        }
    }
    return cfg;
}

inline ProjectConfig load_config(const fs::path& file) {
    if (!fs::exists(file)) throw ValidationError("config file not found: " + file.string());
    YAML::Node root;
    try {
        root = YAML::LoadFile(file.string());
    } catch (const YAML::Exception& e) {
        throw ValidationError("config " + file.string() + ": parse error: " + e.what());
    }
    return parse_config(root, file);
}

// A stack section in the loader's own format, for regenerated configurations.
inline void emit_layers(YAML::Emitter& out, const std::vector<Layer>& layers, const Roughness& roughness,
                        double gouy_shift) {
    out << YAML::Key << "stack" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "gouy_shift_hz" << YAML::Value << gouy_shift;
    out << YAML::Key << "layers" << YAML::Value << YAML::BeginSeq;
    for (const auto& l : layers) {
        out << YAML::BeginMap;
        out << YAML::Key << "name" << YAML::Value << l.name;
        out << YAML::Key << "thickness_um" << YAML::Value << l.thickness / units::um;
        out << YAML::Key << "velocity_km_s" << YAML::Value << l.velocity / units::km_per_s;
        out << YAML::Key << "density_g_cm3" << YAML::Value << l.density / units::g_per_cm3;
        out << YAML::Key << "q_mech_inv" << YAML::Value << l.q_mech_inv;
        out << YAML::Key << "q_tls_inv" << YAML::Value << l.q_tls_inv;
        out << YAML::EndMap;
    }
    out << YAML::EndSeq;
    out << YAML::Key << "roughness" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "top_nm" << YAML::Value << roughness.top / units::nm;
    out << YAML::Key << "interface_nm" << YAML::Value << roughness.interface / units::nm;
    out << YAML::Key << "back_nm" << YAML::Value << roughness.back / units::nm;
    out << YAML::EndMap;
    out << YAML::EndMap;
}

}  // namespace hbar::cli
