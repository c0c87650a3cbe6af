#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "qhd/errors.hpp"
#include "qhd/hydro.hpp"
#include "qhd/model.hpp"
#include "qhd/mwls.hpp"
#include "qhd/oracle.hpp"

namespace qhd {

/// Complete run configuration. Every default equals the published model
/// parameters, so an empty config file reproduces the reference runs.
struct RunConfig {
    PhysicalParams physical{};
    SuperpositionParams superposition{};
    CaseSelector case_sel{};
    HydroConfig hydro{};
    int mwls_n_b = 0;               // 0 -> case default (35 uncoupled, 30 coupled)
    double mwls_weight_scale = 0.8;
    int oracle_nx = 256;
    int oracle_ny = 256;
    double oracle_dt = 0.5;
    std::string output_dir = "out";
    int trajectory_subsample = 200;
    int snapshot_stride = 1;
    int threads = 0; // 0 -> all cores

    MwlsConfig resolved_mwls() const {
        MwlsConfig m;
        m.n_b = mwls_n_b > 0 ? mwls_n_b : (case_sel.coupled ? 30 : 35);
        m.weight_scale = mwls_weight_scale;
        return m;
    }

    OracleGrid oracle_grid() const {
        OracleGrid g;
        g.nx = oracle_nx;
        g.ny = oracle_ny;
        g.domain = hydro.domain;
        return g;
    }

    void validate() const {
        physical.validate();
        superposition.validate();
        hydro.validate();
        resolved_mwls().validate();
        oracle_grid().validate();
        if (!(oracle_dt > 0.0)) throw ConfigError("oracle.dt must be > 0");
        if (trajectory_subsample < 1)
            throw ConfigError("output.trajectory_subsample must be >= 1");
        if (snapshot_stride < 1) throw ConfigError("output.snapshot_stride must be >= 1");
        if (threads < 0) throw ConfigError("run.threads must be >= 0");
        if (output_dir.empty()) throw ConfigError("output.directory must not be empty");
    }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

inline double parse_double(std::string_view v, const std::string& key, int line) {
    const std::string buf(v);
    char* end = nullptr;
    const double x = std::strtod(buf.c_str(), &end);
    if (end != buf.c_str() + buf.size() || buf.empty())
        throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                          "' expects a number, got '" + buf + "'");
    return x;
}

inline int parse_int(std::string_view v, const std::string& key, int line) {
    int x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                          "' expects an integer, got '" + std::string(v) + "'");
    return x;
}

inline bool parse_bool(std::string_view v, const std::string& key, int line) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                      "' expects true/false, got '" + std::string(v) + "'");
}

}  // namespace detail

/// Parses the flat key-path = value config format: optional [section]
/// headers prefix the keys that follow; '#' starts a comment; unknown keys
/// are errors. See the README for the full key table.
inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    using Setter = std::function<void(std::string_view, int)>;
    const std::map<std::string, Setter, std::less<>> keys = {
        {"physical.m0", [&](auto v, int l) { cfg.physical.m0 = detail::parse_double(v, "physical.m0", l); }},
        {"physical.m", [&](auto v, int l) { cfg.physical.m = detail::parse_double(v, "physical.m", l); }},
        {"physical.omega", [&](auto v, int l) { cfg.physical.omega = detail::parse_double(v, "physical.omega", l); }},
        {"physical.c", [&](auto v, int l) { cfg.physical.c = detail::parse_double(v, "physical.c", l); }},
        {"superposition.a", [&](auto v, int l) { cfg.superposition.a = detail::parse_double(v, "superposition.a", l); }},
        {"superposition.beta", [&](auto v, int l) { cfg.superposition.beta = detail::parse_double(v, "superposition.beta", l); }},
        {"case.coupled", [&](auto v, int l) { cfg.case_sel.coupled = detail::parse_bool(v, "case.coupled", l); }},
        {"hydro.n_elements_target", [&](auto v, int l) { cfg.hydro.n_elements_target = detail::parse_int(v, "hydro.n_elements_target", l); }},
        {"hydro.dt", [&](auto v, int l) { cfg.hydro.dt = detail::parse_double(v, "hydro.dt", l); }},
        {"hydro.regrid_interval", [&](auto v, int l) { cfg.hydro.regrid_interval = detail::parse_double(v, "hydro.regrid_interval", l); }},
        {"hydro.density_cutoff", [&](auto v, int l) { cfg.hydro.density_cutoff_rel = detail::parse_double(v, "hydro.density_cutoff", l); }},
        {"hydro.t_final", [&](auto v, int l) { cfg.hydro.t_final = detail::parse_double(v, "hydro.t_final", l); }},
        {"hydro.domain_x_min", [&](auto v, int l) { cfg.hydro.domain.x_min = detail::parse_double(v, "hydro.domain_x_min", l); }},
        {"hydro.domain_x_max", [&](auto v, int l) { cfg.hydro.domain.x_max = detail::parse_double(v, "hydro.domain_x_max", l); }},
        {"hydro.domain_y_min", [&](auto v, int l) { cfg.hydro.domain.y_min = detail::parse_double(v, "hydro.domain_y_min", l); }},
        {"hydro.domain_y_max", [&](auto v, int l) { cfg.hydro.domain.y_max = detail::parse_double(v, "hydro.domain_y_max", l); }},
        {"mwls.n_b", [&](auto v, int l) { cfg.mwls_n_b = detail::parse_int(v, "mwls.n_b", l); }},
        {"mwls.weight_scale", [&](auto v, int l) { cfg.mwls_weight_scale = detail::parse_double(v, "mwls.weight_scale", l); }},
        {"oracle.nx", [&](auto v, int l) { cfg.oracle_nx = detail::parse_int(v, "oracle.nx", l); }},
        {"oracle.ny", [&](auto v, int l) { cfg.oracle_ny = detail::parse_int(v, "oracle.ny", l); }},
        {"oracle.dt", [&](auto v, int l) { cfg.oracle_dt = detail::parse_double(v, "oracle.dt", l); }},
        {"output.directory", [&](auto v, int) { cfg.output_dir = std::string(v); }},
        {"output.trajectory_subsample", [&](auto v, int l) { cfg.trajectory_subsample = detail::parse_int(v, "output.trajectory_subsample", l); }},
        {"output.snapshot_stride", [&](auto v, int l) { cfg.snapshot_stride = detail::parse_int(v, "output.snapshot_stride", l); }},
        {"run.threads", [&](auto v, int l) { cfg.threads = detail::parse_int(v, "run.threads", l); }},
    };

    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line(raw);
        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) +
                                  ": malformed section header '" + std::string(line) + "'");
            section = std::string(detail::trim(line.substr(1, line.size() - 2)));
            if (section.empty())
                throw ConfigError("line " + std::to_string(line_no) + ": empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        std::string key(detail::trim(line.substr(0, eq)));
        const std::string_view value = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        if (key.find('.') == std::string::npos && !section.empty())
            key = section + "." + key;
        const auto it = keys.find(key);
        if (it == keys.end())
            throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key +
                              "'");
        it->second(value, line_no);
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Canonical echo of a config: every key with its current value, one per
/// line, in key order. Feeding it back through parse_config reproduces the
/// configuration.
inline std::map<std::string, std::string> config_echo(const RunConfig& cfg) {
    auto fmt = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    std::map<std::string, std::string> kv;
    kv["physical.m0"] = fmt(cfg.physical.m0);
    kv["physical.m"] = fmt(cfg.physical.m);
    kv["physical.omega"] = fmt(cfg.physical.omega);
    kv["physical.c"] = fmt(cfg.physical.c);
    kv["superposition.a"] = fmt(cfg.superposition.a);
    kv["superposition.beta"] = fmt(cfg.superposition.beta);
    kv["case.coupled"] = cfg.case_sel.coupled ? "true" : "false";
    kv["hydro.n_elements_target"] = std::to_string(cfg.hydro.n_elements_target);
    kv["hydro.dt"] = fmt(cfg.hydro.dt);
    kv["hydro.regrid_interval"] = fmt(cfg.hydro.regrid_interval);
    kv["hydro.density_cutoff"] = fmt(cfg.hydro.density_cutoff_rel);
    kv["hydro.t_final"] = fmt(cfg.hydro.t_final);
    kv["hydro.domain_x_min"] = fmt(cfg.hydro.domain.x_min);
    kv["hydro.domain_x_max"] = fmt(cfg.hydro.domain.x_max);
    kv["hydro.domain_y_min"] = fmt(cfg.hydro.domain.y_min);
    kv["hydro.domain_y_max"] = fmt(cfg.hydro.domain.y_max);
    kv["mwls.n_b"] = std::to_string(cfg.mwls_n_b);
    kv["mwls.weight_scale"] = fmt(cfg.mwls_weight_scale);
    kv["oracle.nx"] = std::to_string(cfg.oracle_nx);
    kv["oracle.ny"] = std::to_string(cfg.oracle_ny);
    kv["oracle.dt"] = fmt(cfg.oracle_dt);
    kv["output.directory"] = cfg.output_dir;
    kv["output.trajectory_subsample"] = std::to_string(cfg.trajectory_subsample);
    kv["output.snapshot_stride"] = std::to_string(cfg.snapshot_stride);
    kv["run.threads"] = std::to_string(cfg.threads);
    return kv;
}

}  // namespace qhd
