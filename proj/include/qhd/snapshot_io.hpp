#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qhd/analysis.hpp"
#include "qhd/errors.hpp"
#include "qhd/hydro.hpp"
#include "qhd/mesh.hpp"
#include "qhd/oracle.hpp"

namespace qhd {

/// Shortest decimal that round-trips a double exactly.
inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// FNV-1a 64-bit hash of a byte stream, hex encoded. Used for manifest
/// integrity checks of emitted files.
inline std::string fnv1a_hex(std::span<const char> bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string fnv1a_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string s = ss.str();
    return fnv1a_hex(std::span<const char>(s.data(), s.size()));
}

namespace detail {

inline double header_double(const std::map<std::string, std::string>& h,
                            const std::string& key, const std::string& path) {
    const auto it = h.find(key);
    if (it == h.end()) throw IoError(path + ": missing header key '" + key + "'");
    char* end = nullptr;
    const double v = std::strtod(it->second.c_str(), &end);
    if (end != it->second.c_str() + it->second.size())
        throw IoError(path + ": malformed header value for '" + key + "'");
    return v;
}

inline long header_long(const std::map<std::string, std::string>& h, const std::string& key,
                        const std::string& path) {
    const double v = header_double(h, key, path);
    return static_cast<long>(v);
}

}  // namespace detail

/// Writes a snapshot file: '#'-prefixed 'key: value' header block, then one
/// row per mesh point, 'x y rho vx vy S' with full 17-significant-digit
/// floats, row-major in y then x. Sites outside the mask carry exact zeros;
/// the mask itself is recovered on read from the mask_rule header (qtm
/// snapshots mask rho > 0, oracle snapshots mask rho > density_cutoff).
inline void write_snapshot(const std::filesystem::path& path, const FieldSnapshot& snap) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    const UniformMesh& m = snap.mesh;
    out << "# qhd snapshot\n";
    out << "# format: snapshot-v1\n";
    out << "# source: " << snap.source << "\n";
    out << "# case: " << (snap.coupled ? "coupled" : "uncoupled") << "\n";
    out << "# time: " << format_full(snap.time) << "\n";
    out << "# nx: " << m.nx << "\n";
    out << "# ny: " << m.ny << "\n";
    out << "# i0: " << m.i0 << "\n";
    out << "# j0: " << m.j0 << "\n";
    out << "# hx: " << format_full(m.hx) << "\n";
    out << "# hy: " << format_full(m.hy) << "\n";
    out << "# density_cutoff: " << format_full(snap.density_cutoff) << "\n";
    out << "# dropped_mass: " << format_full(snap.dropped_mass) << "\n";
    out << "# renorm_factor: " << format_full(snap.renorm_factor) << "\n";
    out << "# mask_rule: " << (snap.source == "oracle" ? "rho_above_cutoff" : "positive_rho")
        << "\n";
    out << "# columns: x y rho vx vy S\n";
    for (int j = 0; j < m.ny; ++j)
        for (int i = 0; i < m.nx; ++i) {
            const std::size_t q = m.index(i, j);
            const Vec2 p = m.point(i, j);
            out << format_full(p.x) << ' ' << format_full(p.y) << ' '
                << format_full(snap.rho[q]) << ' ' << format_full(snap.vx[q]) << ' '
                << format_full(snap.vy[q]) << ' ' << format_full(snap.S[q]) << '\n';
        }
    if (!out) throw IoError("write failed for " + path.string());
}

inline FieldSnapshot read_snapshot(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::map<std::string, std::string> header;
    std::string line;
    long line_no = 0;
    FieldSnapshot snap;
    std::size_t row = 0;
    bool allocated = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.front() == '#') {
            const auto colon = line.find(':');
            if (colon != std::string::npos) {
                std::string key = line.substr(1, colon - 1);
                std::string value = line.substr(colon + 1);
                const auto strip = [](std::string& s) {
                    while (!s.empty() && s.front() == ' ') s.erase(s.begin());
                    while (!s.empty() && s.back() == ' ') s.pop_back();
                };
                strip(key);
                strip(value);
                header[key] = value;
            }
            continue;
        }
        if (!allocated) {
            snap.mesh.nx = static_cast<int>(detail::header_long(header, "nx", path.string()));
            snap.mesh.ny = static_cast<int>(detail::header_long(header, "ny", path.string()));
            snap.mesh.i0 = detail::header_long(header, "i0", path.string());
            snap.mesh.j0 = detail::header_long(header, "j0", path.string());
            snap.mesh.hx = detail::header_double(header, "hx", path.string());
            snap.mesh.hy = detail::header_double(header, "hy", path.string());
            snap.mesh.validate();
            snap.time = detail::header_double(header, "time", path.string());
            snap.density_cutoff = detail::header_double(header, "density_cutoff", path.string());
            snap.dropped_mass = detail::header_double(header, "dropped_mass", path.string());
            snap.renorm_factor = detail::header_double(header, "renorm_factor", path.string());
            if (const auto it = header.find("source"); it != header.end())
                snap.source = it->second;
            if (const auto it = header.find("case"); it != header.end())
                snap.coupled = it->second == "coupled";
            snap.allocate();
            allocated = true;
        }
        if (row >= snap.mesh.size())
            throw IoError(path.string() + ": more rows than nx*ny at line " +
                          std::to_string(line_no));
        double vals[6];
        const char* ptr = line.c_str();
        char* end = nullptr;
        for (int k = 0; k < 6; ++k) {
            vals[k] = std::strtod(ptr, &end);
            if (end == ptr)
                throw IoError(path.string() + ": malformed row at line " +
                              std::to_string(line_no));
            ptr = end;
        }
        snap.rho[row] = vals[2];
        snap.vx[row] = vals[3];
        snap.vy[row] = vals[4];
        snap.S[row] = vals[5];
        ++row;
    }
    if (!allocated) throw IoError(path.string() + ": no data rows");
    if (row != snap.mesh.size())
        throw IoError(path.string() + ": expected " + std::to_string(snap.mesh.size()) +
                      " rows, found " + std::to_string(row));
    const auto rule = header.count("mask_rule") ? header.at("mask_rule")
                                                : std::string("positive_rho");
    for (std::size_t q = 0; q < snap.mesh.size(); ++q) {
        snap.mask[q] = rule == "rho_above_cutoff" ? snap.rho[q] > snap.density_cutoff
                                                  : snap.rho[q] > 0.0;
    }
    return snap;
}

/// Appends trajectory rows 't id x y rho S Q Lq'; batches arrive in time
/// order with ids ascending, so the file is sorted by (t, id).
class TrajectoryWriter {
public:
    explicit TrajectoryWriter(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw IoError("cannot write " + path.string());
        out_ << "# qhd trajectories\n";
        out_ << "# format: trajectory-v1\n";
        out_ << "# columns: t id x y rho S Q Lq\n";
    }
    void append(std::span<const TrajectoryPoint> pts) {
        for (const TrajectoryPoint& p : pts)
            out_ << format_full(p.t) << ' ' << p.id << ' ' << format_full(p.pos.x) << ' '
                 << format_full(p.pos.y) << ' ' << format_full(p.rho) << ' '
                 << format_full(p.S) << ' ' << format_full(p.Q) << ' '
                 << format_full(p.L_q) << '\n';
        if (!out_) throw IoError("trajectory write failed");
    }

private:
    std::ofstream out_;
};

struct TrajectoryRow {
    double t;
    long id;
    Vec2 pos;
    double rho, S, Q, L_q;
};

inline std::vector<TrajectoryRow> read_trajectories(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<TrajectoryRow> rows;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        TrajectoryRow r{};
        std::istringstream ss(line);
        if (!(ss >> r.t >> r.id >> r.pos.x >> r.pos.y >> r.rho >> r.S >> r.Q >> r.L_q))
            throw IoError(path.string() + ": malformed row at line " + std::to_string(line_no));
        rows.push_back(r);
    }
    return rows;
}

namespace detail {

inline void write_field_header(std::ofstream& out, const char* kind, const UniformMesh& m,
                               double time, const std::string& columns) {
    out << "# qhd " << kind << "\n";
    out << "# format: " << kind << "-v1\n";
    out << "# time: " << format_full(time) << "\n";
    out << "# nx: " << m.nx << "\n";
    out << "# ny: " << m.ny << "\n";
    out << "# i0: " << m.i0 << "\n";
    out << "# j0: " << m.j0 << "\n";
    out << "# hx: " << format_full(m.hx) << "\n";
    out << "# hy: " << format_full(m.hy) << "\n";
    out << "# masked_value: nan\n";
    out << "# columns: " << columns << "\n";
}

inline std::string masked(double v, bool valid) {
    return valid ? format_full(v) : std::string("nan");
}

}  // namespace detail

/// Analysis field writers mirror the snapshot layout; not-evaluated points
/// carry an explicit nan marker.
inline void write_vector_map(const std::filesystem::path& path, const VectorFieldMap& map,
                             const std::string& columns = "x y jx jy") {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    detail::write_field_header(out, "fieldmap", map.mesh, map.time, columns);
    for (int j = 0; j < map.mesh.ny; ++j)
        for (int i = 0; i < map.mesh.nx; ++i) {
            const std::size_t q = map.mesh.index(i, j);
            const Vec2 p = map.mesh.point(i, j);
            out << format_full(p.x) << ' ' << format_full(p.y) << ' '
                << detail::masked(map.x[q], map.valid[q]) << ' '
                << detail::masked(map.y[q], map.valid[q]) << '\n';
        }
    if (!out) throw IoError("write failed for " + path.string());
}

inline void write_scalar_map(const std::filesystem::path& path, const ScalarFieldMap& map,
                             const std::string& columns = "x y value") {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    detail::write_field_header(out, "fieldmap", map.mesh, map.time, columns);
    for (int j = 0; j < map.mesh.ny; ++j)
        for (int i = 0; i < map.mesh.nx; ++i) {
            const std::size_t q = map.mesh.index(i, j);
            const Vec2 p = map.mesh.point(i, j);
            out << format_full(p.x) << ' ' << format_full(p.y) << ' '
                << detail::masked(map.value[q], map.valid[q]) << '\n';
        }
    if (!out) throw IoError("write failed for " + path.string());
}

inline void write_stress(const std::filesystem::path& path, const StressFields& s) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    detail::write_field_header(
        out, "stress", s.mesh, s.time,
        "x y P ux uy pi00 pi01 pi11 pi_c00 pi_c01 pi_c11 pi_sh00 pi_sh01 pi_sh11 wmag");
    for (int j = 0; j < s.mesh.ny; ++j)
        for (int i = 0; i < s.mesh.nx; ++i) {
            const std::size_t q = s.mesh.index(i, j);
            const Vec2 p = s.mesh.point(i, j);
            const bool ok = s.valid[q];
            out << format_full(p.x) << ' ' << format_full(p.y) << ' '
                << detail::masked(s.P[q], ok) << ' ' << detail::masked(s.ux[q], ok) << ' '
                << detail::masked(s.uy[q], ok) << ' ' << detail::masked(s.pi00[q], ok) << ' '
                << detail::masked(s.pi01[q], ok) << ' ' << detail::masked(s.pi11[q], ok) << ' '
                << detail::masked(s.pi_c00[q], ok) << ' ' << detail::masked(s.pi_c01[q], ok)
                << ' ' << detail::masked(s.pi_c11[q], ok) << ' '
                << detail::masked(s.pi_sh00[q], ok) << ' ' << detail::masked(s.pi_sh01[q], ok)
                << ' ' << detail::masked(s.pi_sh11[q], ok) << ' '
                << detail::masked(s.wmag[q], ok) << '\n';
        }
    if (!out) throw IoError("write failed for " + path.string());
}

struct MetricsRow {
    double time;
    DecoherenceMetrics metrics;
};

inline void write_metrics(const std::filesystem::path& path,
                          std::span<const MetricsRow> rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "# qhd metrics\n";
    out << "# format: metrics-v1\n";
    out << "# columns: t central_density fringe_visibility lobe_separation\n";
    for (const MetricsRow& r : rows)
        out << format_full(r.time) << ' ' << format_full(r.metrics.central_density) << ' '
            << format_full(r.metrics.fringe_visibility) << ' '
            << format_full(r.metrics.lobe_separation) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

struct CompareRow {
    double time;
    SnapshotErrorReport report;
};

inline void write_compare_report(const std::filesystem::path& path,
                                 std::span<const CompareRow> rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "# qhd compare\n";
    out << "# format: compare-v1\n";
    out << "# columns: t l2_rho linf_rho v_rms_diff n_rho n_vel\n";
    double worst_l2 = 0.0, worst_linf = 0.0, worst_v = 0.0;
    for (const CompareRow& r : rows) {
        out << format_full(r.time) << ' ' << format_full(r.report.l2_rho) << ' '
            << format_full(r.report.linf_rho) << ' ' << format_full(r.report.v_rms_diff)
            << ' ' << r.report.n_rho << ' ' << r.report.n_vel << '\n';
        worst_l2 = std::max(worst_l2, r.report.l2_rho);
        worst_linf = std::max(worst_linf, r.report.linf_rho);
        worst_v = std::max(worst_v, r.report.v_rms_diff);
    }
    out << "# summary: max_l2_rho " << format_full(worst_l2) << " max_linf_rho "
        << format_full(worst_linf) << " max_v_rms " << format_full(worst_v) << "\n";
    if (!out) throw IoError("write failed for " + path.string());
}

/// Run output manifest: run id, config echo, and every emitted file with its
/// role and checksum. Written last, after all listed files are on disk.
struct OutputManifest {
    std::string run_id;
    std::map<std::string, std::string> config;
    struct Entry {
        std::string path; // relative to the manifest directory
        std::string role;
        double time = 0.0;
        std::string checksum;
        std::uintmax_t bytes = 0;
    };
    std::vector<Entry> files;

    void add(const std::filesystem::path& dir, const std::string& rel_path,
             const std::string& role, double time) {
        Entry e;
        e.path = rel_path;
        e.role = role;
        e.time = time;
        e.checksum = fnv1a_file(dir / rel_path);
        e.bytes = std::filesystem::file_size(dir / rel_path);
        files.push_back(e);
    }
};

inline void write_manifest(const std::filesystem::path& dir, const OutputManifest& manifest) {
    nlohmann::json j;
    j["run_id"] = manifest.run_id;
    j["config"] = manifest.config;
    nlohmann::json files = nlohmann::json::array();
    for (const auto& e : manifest.files) {
        nlohmann::json f;
        f["path"] = e.path;
        f["role"] = e.role;
        f["time"] = e.time;
        f["checksum"] = e.checksum;
        f["bytes"] = e.bytes;
        files.push_back(f);
    }
    j["files"] = files;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("manifest write failed");
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot read manifest in " + dir.string());
    nlohmann::json j;
    in >> j;
    return j;
}

}  // namespace qhd
