// qhd command-line driver: runs the trajectory engine or the spectral
// reference solver, post-processes snapshots into analysis field maps, and
// compares snapshot sets.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "qhd/qhd.hpp"

namespace fs = std::filesystem;
using namespace qhd;

namespace {

std::string time_tag(double t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%09.2f", t);
    return buf;
}

std::string snapshot_name(const std::string& source, double t) {
    return "snap_" + source + "_t" + time_tag(t) + ".dat";
}

std::string deterministic_run_id(const std::string& mode, const RunConfig& cfg) {
    std::string blob = mode;
    for (const auto& [k, v] : config_echo(cfg)) blob += k + "=" + v + ";";
    return mode + "-" + std::string(cfg.case_sel.name()) + "-" +
           fnv1a_hex(std::span<const char>(blob.data(), blob.size()));
}

/// Collects snapshot files from a mix of file and directory arguments.
std::vector<fs::path> collect_snapshot_files(const std::vector<std::string>& inputs) {
    std::vector<fs::path> files;
    for (const std::string& in : inputs) {
        fs::path p(in);
        if (fs::is_directory(p)) {
            for (const auto& e : fs::directory_iterator(p)) {
                const std::string name = e.path().filename().string();
                if (name.rfind("snap_", 0) == 0 && e.path().extension() == ".dat")
                    files.push_back(e.path());
            }
        } else if (fs::exists(p)) {
            files.push_back(p);
        } else {
            throw IoError("no such snapshot file or directory: " + in);
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("no snapshot files found");
    return files;
}

MwlsConfig mwls_for_snapshot(const RunConfig& cfg, const FieldSnapshot& snap) {
    MwlsConfig m;
    m.n_b = cfg.mwls_n_b > 0 ? cfg.mwls_n_b : (snap.coupled ? 30 : 35);
    m.weight_scale = cfg.mwls_weight_scale;
    return m;
}

int cmd_run(const RunConfig& cfg, const std::string& mode) {
    const fs::path out_dir(cfg.output_dir);
    fs::create_directories(out_dir);
    OutputManifest manifest;
    manifest.run_id = deterministic_run_id(mode, cfg);
    manifest.config = config_echo(cfg);

    const double cutoff =
        cfg.hydro.density_cutoff_rel * initial_peak_density(cfg.physical, cfg.superposition);

    if (mode == "qtm") {
        TrajectoryEngine engine(cfg.physical, cfg.superposition, cfg.case_sel, cfg.hydro,
                                cfg.resolved_mwls(), cfg.threads);
        std::vector<std::pair<std::string, double>> written;
        RunSummary summary;
        {
            // writer scope: the file must be closed before it is checksummed
            TrajectoryWriter traj(out_dir / "trajectories.dat");
            RunSinks sinks;
            sinks.snapshot = [&](const FieldSnapshot& snap) {
                const std::string name = snapshot_name("qtm", snap.time);
                write_snapshot(out_dir / name, snap);
                written.emplace_back(name, snap.time);
                std::printf("t = %8.2f  elements = %6zu  norm = %.6f\n", snap.time,
                            snap.masked_count(), snap.discrete_norm());
            };
            sinks.trajectory = [&](std::span<const TrajectoryPoint> pts) { traj.append(pts); };
            summary = engine.run(sinks, cfg.trajectory_subsample, cfg.snapshot_stride);
        }
        std::printf("run complete: %zu snapshots, max norm drift %.2e, "
                    "cumulative renorm %.6f, elements %zu..%zu\n",
                    summary.n_snapshots, summary.max_prenorm_drift,
                    summary.cumulative_renorm, summary.min_count, summary.max_count);
        for (const auto& [name, t] : written) manifest.add(out_dir, name, "snapshot", t);
        manifest.add(out_dir, "trajectories.dat", "trajectories", cfg.hydro.t_final);
    } else if (mode == "oracle") {
        OracleState st =
            oracle_init(cfg.physical, cfg.superposition, cfg.case_sel, cfg.oracle_grid());
        SplitOperatorSolver solver(cfg.physical, cfg.case_sel, cfg.oracle_grid(),
                                   cfg.oracle_dt);
        solver.set_state(st);
        const int n_outputs = cfg.hydro.output_steps();
        std::vector<std::pair<std::string, double>> written;
        auto emit = [&]() {
            const auto [edge, peak] = solver.boundary_density();
            if (edge > 1e-8 * peak)
                throw NumericalError("oracle boundary leakage " + std::to_string(edge) +
                                     " at t = " + std::to_string(solver.time()) +
                                     "; enlarge the domain");
            const FieldSnapshot snap =
                oracle_fields(solver.state(), cfg.physical, cutoff, cfg.case_sel.coupled);
            const std::string name = snapshot_name("oracle", snap.time);
            write_snapshot(out_dir / name, snap);
            written.emplace_back(name, snap.time);
        };
        emit();
        for (int out = 1; out <= n_outputs; ++out) {
            solver.run_until(out * cfg.hydro.regrid_interval);
            if (out % cfg.snapshot_stride == 0 || out == n_outputs) emit();
        }
        std::printf("oracle run complete: %zu snapshots, final norm %.12f\n",
                    written.size(), solver.norm());
        for (const auto& [name, t] : written) manifest.add(out_dir, name, "snapshot", t);
    } else {
        throw ConfigError("unknown mode '" + mode + "' (expected qtm or oracle)");
    }

    write_manifest(out_dir, manifest);
    std::printf("manifest: %s\n", (out_dir / "manifest.json").string().c_str());
    return 0;
}

int cmd_analyze(const RunConfig& cfg, const std::vector<std::string>& inputs,
                const std::vector<std::string>& fields) {
    const std::set<std::string> want(fields.begin(), fields.end());
    for (const std::string& f : want)
        if (f != "flux" && f != "stress" && f != "nsresidual" && f != "divergence" &&
            f != "metrics")
            throw ConfigError("unknown analysis field '" + f + "'");
    const fs::path out_dir(cfg.output_dir);
    fs::create_directories(out_dir);
    OutputManifest manifest;
    manifest.run_id = deterministic_run_id("analyze", cfg);
    manifest.config = config_echo(cfg);

    std::vector<FieldSnapshot> snaps;
    for (const fs::path& p : collect_snapshot_files(inputs))
        snaps.push_back(read_snapshot(p));
    std::sort(snaps.begin(), snaps.end(),
              [](const FieldSnapshot& a, const FieldSnapshot& b) { return a.time < b.time; });

    std::vector<MetricsRow> metrics;
    const int threads = resolve_threads(cfg.threads);
    for (const FieldSnapshot& snap : snaps) {
        AnalysisConfig acfg;
        acfg.mwls = mwls_for_snapshot(cfg, snap);
        acfg.threads = threads;
        const std::string tag = time_tag(snap.time);
        if (want.count("flux")) {
            const std::string name = "flux_t" + tag + ".dat";
            write_vector_map(out_dir / name, flux(snap, acfg), "x y jx jy");
            manifest.add(out_dir, name, "flux", snap.time);
        }
        if (want.count("stress")) {
            const std::string name = "stress_t" + tag + ".dat";
            write_stress(out_dir / name, stress_tensor(snap, cfg.physical, acfg));
            manifest.add(out_dir, name, "stress", snap.time);
        }
        if (want.count("divergence")) {
            const std::string name = "divj_t" + tag + ".dat";
            write_scalar_map(out_dir / name, flux_divergence(snap, acfg), "x y div_j");
            manifest.add(out_dir, name, "divergence", snap.time);
        }
        if (want.count("metrics")) metrics.push_back({snap.time, decoherence_metrics(snap)});
    }

    if (want.count("nsresidual")) {
        if (snaps.size() < 3)
            throw ConfigError("nsresidual needs at least 3 consecutive snapshots");
        for (std::size_t k = 1; k + 1 < snaps.size(); ++k) {
            AnalysisConfig acfg;
            acfg.mwls = mwls_for_snapshot(cfg, snaps[k]);
            acfg.threads = threads;
            const FieldSnapshot& mid = snaps[k];
            FieldSnapshot before = snaps[k - 1];
            FieldSnapshot after = snaps[k + 1];
            if (!before.mesh.same_lattice(mid.mesh))
                before = resample_snapshot(before, mid.mesh, acfg);
            if (!after.mesh.same_lattice(mid.mesh))
                after = resample_snapshot(after, mid.mesh, acfg);
            const StressFields stress = stress_tensor(mid, cfg.physical, acfg);
            const FieldSnapshot triplet[3] = {before, mid, after};
            CaseSelector snap_case{mid.coupled};
            const NsResidual res =
                ns_residual(std::span<const FieldSnapshot>(triplet, 3), stress, cfg.physical,
                            snap_case, acfg);
            const std::string tag = time_tag(mid.time);
            VectorFieldMap map;
            map.mesh = res.mesh;
            map.time = res.time;
            map.valid = res.valid;
            map.x = res.res_x;
            map.y = res.res_y;
            const std::string name = "nsres_t" + tag + ".dat";
            write_vector_map(out_dir / name, map, "x y residual_x residual_y");
            manifest.add(out_dir, name, "nsresidual", mid.time);
            std::printf("nsresidual t = %8.2f: relative_x %.3e relative_y %.3e\n", mid.time,
                        res.relative_x(), res.relative_y());
        }
    }

    if (want.count("metrics")) {
        write_metrics(out_dir / "metrics.dat", metrics);
        manifest.add(out_dir, "metrics.dat", "metrics",
                     metrics.empty() ? 0.0 : metrics.back().time);
    }
    write_manifest(out_dir, manifest);
    return 0;
}

int cmd_compare(const RunConfig& cfg, const std::vector<std::string>& qtm_inputs,
                const std::vector<std::string>& ref_inputs) {
    const fs::path out_dir(cfg.output_dir);
    fs::create_directories(out_dir);
    OutputManifest manifest;
    manifest.run_id = deterministic_run_id("compare", cfg);
    manifest.config = config_echo(cfg);

    auto load_by_time = [](const std::vector<std::string>& inputs) {
        std::map<long, FieldSnapshot> by_time;
        for (const fs::path& p : collect_snapshot_files(inputs)) {
            FieldSnapshot s = read_snapshot(p);
            by_time[std::lround(s.time * 1000.0)] = std::move(s);
        }
        return by_time;
    };
    const auto qtm = load_by_time(qtm_inputs);
    const auto ref = load_by_time(ref_inputs);

    std::vector<CompareRow> rows;
    for (const auto& [key, snap] : qtm) {
        const auto it = ref.find(key);
        if (it == ref.end()) continue;
        rows.push_back({snap.time, compare_snapshots(snap, it->second)});
    }
    if (rows.empty()) {
        std::string avail = "qtm times:";
        for (const auto& [key, s] : qtm) avail += " " + std::to_string(s.time);
        avail += "; ref times:";
        for (const auto& [key, s] : ref) avail += " " + std::to_string(s.time);
        throw AlignmentError("compare: no matching time stamps (" + avail + ")");
    }
    write_compare_report(out_dir / "compare.dat", rows);
    manifest.add(out_dir, "compare.dat", "compare", rows.back().time);
    write_manifest(out_dir, manifest);
    for (const CompareRow& r : rows)
        std::printf("t = %8.2f  L2 %.4e  Linf %.4e  vRMS %.4e\n", r.time, r.report.l2_rho,
                    r.report.linf_rho, r.report.v_rms_diff);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qhd: Lagrangian quantum trajectory simulator with a split-operator "
                 "reference solver and stress/flux analysis"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    int threads_override = -1;
    int stride_override = 0;
    bool flag_coupled = false, flag_uncoupled = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "config file (key = value format)");
        sub->add_option("--out", out_override, "output directory");
        sub->add_option("--threads", threads_override, "worker threads (0 = all cores)");
        sub->add_flag("--coupled", flag_coupled, "force the coupled case");
        sub->add_flag("--uncoupled", flag_uncoupled, "force the uncoupled case");
    };

    CLI::App* run = app.add_subcommand("run", "run the trajectory engine or the oracle");
    std::string mode = "qtm";
    run->add_option("--mode", mode, "qtm or oracle")->check(CLI::IsMember({"qtm", "oracle"}));
    run->add_option("--snapshot-stride", stride_override, "output stride in regrid steps");
    add_common(run);

    CLI::App* analyze = app.add_subcommand("analyze", "compute analysis fields on snapshots");
    std::vector<std::string> analyze_inputs;
    std::string fields_csv = "flux,stress,divergence,metrics";
    analyze->add_option("snapshots", analyze_inputs, "snapshot files or directories")
        ->required();
    analyze->add_option("--fields", fields_csv,
                        "comma list of flux,stress,nsresidual,divergence,metrics");
    add_common(analyze);

    CLI::App* compare = app.add_subcommand("compare", "compare qtm snapshots to a reference");
    std::vector<std::string> qtm_inputs, ref_inputs;
    compare->add_option("--qtm", qtm_inputs, "qtm snapshot files or directories")->required();
    compare->add_option("--ref", ref_inputs, "reference snapshot files or directories")
        ->required();
    add_common(compare);

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
        if (flag_coupled && flag_uncoupled)
            throw ConfigError("--coupled and --uncoupled are mutually exclusive");
        if (flag_coupled) cfg.case_sel.coupled = true;
        if (flag_uncoupled) cfg.case_sel.coupled = false;
        if (!out_override.empty()) cfg.output_dir = out_override;
        if (threads_override >= 0) cfg.threads = threads_override;
        if (stride_override > 0) cfg.snapshot_stride = stride_override;
        cfg.validate();

        if (run->parsed()) return cmd_run(cfg, mode);
        if (analyze->parsed()) {
            std::vector<std::string> fields;
            std::string cur;
            for (char c : fields_csv + ",") {
                if (c == ',') {
                    if (!cur.empty()) fields.push_back(cur);
                    cur.clear();
                } else {
                    cur += c;
                }
            }
            return cmd_analyze(cfg, analyze_inputs, fields);
        }
        if (compare->parsed()) return cmd_compare(cfg, qtm_inputs, ref_inputs);
        throw ConfigError("no subcommand selected");
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
