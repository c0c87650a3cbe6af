#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <random>

#include "qhd/config.hpp"
#include "qhd/snapshot_io.hpp"

using namespace qhd;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("qhd_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

FieldSnapshot random_snapshot(unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> val(1e-8, 2.0);
    std::uniform_real_distribution<double> vel(-0.01, 0.01);
    FieldSnapshot snap;
    snap.mesh.hx = 0.11;
    snap.mesh.hy = 0.07;
    snap.mesh.i0 = -9;
    snap.mesh.j0 = -5;
    snap.mesh.nx = 19;
    snap.mesh.ny = 11;
    snap.time = 42.0;
    snap.source = "qtm";
    snap.coupled = true;
    snap.density_cutoff = 1.5e-7;
    snap.dropped_mass = 3.25e-6;
    snap.renorm_factor = 1.0000321;
    snap.allocate();
    std::bernoulli_distribution keep(0.8);
    for (std::size_t q = 0; q < snap.mesh.size(); ++q) {
        if (!keep(rng)) continue;
        snap.mask[q] = 1;
        snap.rho[q] = val(rng);
        snap.vx[q] = vel(rng);
        snap.vy[q] = vel(rng);
        snap.S[q] = vel(rng) * 100.0;
    }
    return snap;
}

}  // namespace

TEST_CASE("empty config reproduces the reference defaults") {
    const RunConfig cfg = parse_config("");
    CHECK(cfg.physical.m0 == 2000.0);
    CHECK(cfg.physical.m == 2000.0);
    CHECK(cfg.physical.omega == 0.004556);
    CHECK(cfg.physical.c == 0.015);
    CHECK(cfg.superposition.a == 0.8);
    CHECK(cfg.superposition.beta == 4.5);
    CHECK(cfg.hydro.dt == 0.5);
    CHECK(cfg.hydro.regrid_interval == 2.0);
    CHECK(cfg.hydro.t_final == 450.0);
    CHECK(cfg.trajectory_subsample == 200);

    RunConfig uncoupled = cfg;
    uncoupled.case_sel.coupled = false;
    CHECK(uncoupled.resolved_mwls().n_b == 35);
    CHECK(uncoupled.hydro.resolved_target(uncoupled.case_sel) == 1215);
    RunConfig coupled = cfg;
    coupled.case_sel.coupled = true;
    CHECK(coupled.resolved_mwls().n_b == 30);
    CHECK(coupled.hydro.resolved_target(coupled.case_sel) == 1175);
}

TEST_CASE("config parsing: sections, flat keys, comments") {
    const RunConfig cfg = parse_config(
        "# a comment\n"
        "[hydro]\n"
        "dt = 0.25\n"
        "t_final = 10 # trailing comment\n"
        "\n"
        "mwls.n_b = 20\n"
        "[case]\n"
        "coupled = true\n");
    CHECK(cfg.hydro.dt == 0.25);
    CHECK(cfg.hydro.t_final == 10.0);
    CHECK(cfg.mwls_n_b == 20);
    CHECK(cfg.case_sel.coupled);
}

TEST_CASE("negative dt is a validation error") {
    CHECK_THROWS_AS(parse_config("hydro.dt = -1\n"), ConfigError);
}

TEST_CASE("unknown keys are parse errors") {
    CHECK_THROWS_MATCHES(parse_config("hydr.dt = 0.5\n"), ConfigError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("unknown key")));
}

TEST_CASE("malformed values and lines carry the line number") {
    CHECK_THROWS_MATCHES(
        parse_config("\nhydro.dt = fast\n"), ConfigError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("line 2")));
    CHECK_THROWS_AS(parse_config("just nonsense\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[unterminated\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("case.coupled = maybe\n"), ConfigError);
}

TEST_CASE("config echo round-trips through the parser") {
    RunConfig cfg = parse_config("hydro.dt = 0.125\nmwls.weight_scale = 0.77\n");
    const auto echo = config_echo(cfg);
    std::string text;
    for (const auto& [k, v] : echo) text += k + " = " + v + "\n";
    const RunConfig back = parse_config(text);
    CHECK(config_echo(back) == echo);
}

TEST_CASE("snapshot files round-trip bit-exactly") {
    const fs::path dir = temp_dir("snapshot_roundtrip");
    const FieldSnapshot snap = random_snapshot(77);
    write_snapshot(dir / "snap.dat", snap);
    const FieldSnapshot back = read_snapshot(dir / "snap.dat");

    CHECK(back.mesh.same_lattice(snap.mesh));
    CHECK(back.time == snap.time);
    CHECK(back.source == snap.source);
    CHECK(back.coupled == snap.coupled);
    CHECK(back.density_cutoff == snap.density_cutoff);
    CHECK(back.dropped_mass == snap.dropped_mass);
    CHECK(back.renorm_factor == snap.renorm_factor);
    REQUIRE(back.rho.size() == snap.rho.size());
    CHECK(std::memcmp(back.rho.data(), snap.rho.data(), snap.rho.size() * 8) == 0);
    CHECK(std::memcmp(back.vx.data(), snap.vx.data(), snap.vx.size() * 8) == 0);
    CHECK(std::memcmp(back.vy.data(), snap.vy.data(), snap.vy.size() * 8) == 0);
    CHECK(std::memcmp(back.S.data(), snap.S.data(), snap.S.size() * 8) == 0);
    CHECK(back.mask == snap.mask);
}

TEST_CASE("snapshot reader rejects malformed files") {
    const fs::path dir = temp_dir("snapshot_bad");
    {
        std::ofstream out(dir / "empty.dat");
        out << "# qhd snapshot\n";
    }
    CHECK_THROWS_AS(read_snapshot(dir / "empty.dat"), IoError);
    CHECK_THROWS_AS(read_snapshot(dir / "missing.dat"), IoError);

    const FieldSnapshot snap = random_snapshot(5);
    write_snapshot(dir / "trunc.dat", snap);
    // truncate the last line
    auto text = [&] {
        std::ifstream in(dir / "trunc.dat");
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }();
    text.resize(text.rfind('\n', text.size() - 2) + 1);
    {
        std::ofstream out(dir / "trunc.dat");
        out << text;
    }
    CHECK_THROWS_AS(read_snapshot(dir / "trunc.dat"), IoError);
}

TEST_CASE("trajectory files keep (t, id) order and round-trip") {
    const fs::path dir = temp_dir("trajectory");
    {
        TrajectoryWriter w(dir / "traj.dat");
        std::vector<TrajectoryPoint> batch1{{0.0, 3, {0.1, 0.2}, {0, 0}, 0.5, 0.0, 0.01, -0.01},
                                            {0.0, 7, {0.3, -0.2}, {0, 0}, 0.4, 0.0, 0.02, -0.02}};
        std::vector<TrajectoryPoint> batch2{{2.0, 3, {0.11, 0.21}, {1e-3, 0}, 0.49, 0.1, 0.011, -0.011},
                                            {2.0, 7, {0.31, -0.19}, {0, 1e-3}, 0.39, 0.1, 0.021, -0.021}};
        w.append(batch1);
        w.append(batch2);
    }
    const auto rows = read_trajectories(dir / "traj.dat");
    REQUIRE(rows.size() == 4);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const bool ordered = rows[i - 1].t < rows[i].t ||
                             (rows[i - 1].t == rows[i].t && rows[i - 1].id < rows[i].id);
        CHECK(ordered);
    }
    CHECK(rows[0].rho == 0.5);
    CHECK(rows[3].S == 0.1);
}

TEST_CASE("manifest lists every file once with matching checksums") {
    const fs::path dir = temp_dir("manifest");
    const FieldSnapshot snap = random_snapshot(9);
    write_snapshot(dir / "snap_a.dat", snap);
    write_snapshot(dir / "snap_b.dat", snap);

    OutputManifest manifest;
    manifest.run_id = "test-run";
    manifest.config = {{"hydro.dt", "0.5"}};
    manifest.add(dir, "snap_a.dat", "snapshot", 0.0);
    manifest.add(dir, "snap_b.dat", "snapshot", 2.0);
    write_manifest(dir, manifest);

    const auto j = read_manifest(dir);
    CHECK(j["run_id"] == "test-run");
    REQUIRE(j["files"].size() == 2);
    std::set<std::string> seen;
    for (const auto& f : j["files"]) {
        const std::string rel = f["path"];
        CHECK(seen.insert(rel).second); // exactly once
        CHECK(fnv1a_file(dir / rel) == f["checksum"].get<std::string>());
        CHECK(fs::file_size(dir / rel) == f["bytes"].get<std::uintmax_t>());
    }
}

TEST_CASE("full-precision formatting round-trips doubles") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double v = dist(rng) * std::pow(10.0, (i % 41) - 20);
        const std::string s = format_full(v);
        CHECK(std::strtod(s.c_str(), nullptr) == v);
    }
}
