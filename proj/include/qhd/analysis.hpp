#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "qhd/errors.hpp"
#include "qhd/mesh.hpp"
#include "qhd/model.hpp"
#include "qhd/mwls.hpp"
#include "qhd/point_cloud.hpp"

namespace qhd {

/// Analysis settings: MWLS stencil parameters plus the evaluation mask.
/// Fields are evaluated only where rho > mask_factor * density_cutoff;
/// masked-out sites carry valid = 0 in the result maps.
struct AnalysisConfig {
    MwlsConfig mwls{};
    double mask_factor = 10.0;
    int threads = 1;
};

struct ScalarFieldMap {
    UniformMesh mesh;
    double time = 0.0;
    std::vector<double> value;
    std::vector<std::uint8_t> valid;
};

struct VectorFieldMap {
    UniformMesh mesh;
    double time = 0.0;
    std::vector<double> x, y;
    std::vector<std::uint8_t> valid;
};

/// Quantum pressure, osmotic velocity and the full stress tensor on a
/// snapshot mesh. Index 0 is the system axis x, index 1 the bath axis y.
/// pi_* store the compact form P delta_ij + sqrt(m_i m_j) rho Re(w_i w_j*),
/// with the classical (rho v_i v_j) and shear (rho u_i u_j) decompositions
/// retained separately.
struct StressFields {
    UniformMesh mesh;
    double time = 0.0;
    std::vector<std::uint8_t> valid;
    std::vector<double> P;
    std::vector<double> ux, uy;
    std::vector<double> wmag;                      // |w| = sqrt(sum_i |v_i + i u_i|^2)
    std::vector<double> pi00, pi01, pi11;          // compact form
    std::vector<double> pi_c00, pi_c01, pi_c11;    // classical part
    std::vector<double> pi_sh00, pi_sh01, pi_sh11; // quantum shear part

    /// Max relative mismatch between the compact form and the decomposed
    /// sum P delta_ij + Pi^c + Pi^shear (pure algebra; ~machine epsilon).
    double identity_residual() const {
        double worst = 0.0;
        for (std::size_t q = 0; q < valid.size(); ++q) {
            if (!valid[q]) continue;
            const double d00 = pi00[q] - (P[q] + pi_c00[q] + pi_sh00[q]);
            const double d01 = pi01[q] - (pi_c01[q] + pi_sh01[q]);
            const double d11 = pi11[q] - (P[q] + pi_c11[q] + pi_sh11[q]);
            const double scale = std::max({std::abs(pi00[q]), std::abs(pi01[q]),
                                           std::abs(pi11[q]), 1e-300});
            worst = std::max(worst, std::max({std::abs(d00), std::abs(d01), std::abs(d11)}) /
                                        scale);
        }
        return worst;
    }
};

struct DecoherenceMetrics {
    double central_density = 0.0;  // rho(0,0)
    double fringe_visibility = 0.0; // (max-min)/(max+min), y = 0 cut, |x| < 0.5
    double lobe_separation = 0.0;  // distance between the two largest maxima
};

namespace detail {

struct SnapshotCloud {
    PointCloud cloud;
    std::vector<std::size_t> sites;   // cloud order -> mesh site
    std::vector<double> rho, log_rho, vx, vy;

    explicit SnapshotCloud(const FieldSnapshot& snap)
        : cloud(snap.masked_points()) {
        sites.reserve(cloud.size());
        for (int j = 0; j < snap.mesh.ny; ++j)
            for (int i = 0; i < snap.mesh.nx; ++i)
                if (snap.mask[snap.mesh.index(i, j)]) sites.push_back(snap.mesh.index(i, j));
        rho.reserve(sites.size());
        log_rho.reserve(sites.size());
        vx.reserve(sites.size());
        vy.reserve(sites.size());
        for (std::size_t q : sites) {
            rho.push_back(snap.rho[q]);
            log_rho.push_back(std::log(snap.rho[q]));
            vx.push_back(snap.vx[q]);
            vy.push_back(snap.vy[q]);
        }
    }
};

inline std::vector<std::uint8_t> analysis_mask(const FieldSnapshot& snap,
                                               const AnalysisConfig& cfg) {
    std::vector<std::uint8_t> m(snap.mesh.size(), 0);
    const double floor = cfg.mask_factor * snap.density_cutoff;
    for (std::size_t q = 0; q < m.size(); ++q)
        m[q] = snap.mask[q] && snap.rho[q] > floor;
    return m;
}

}  // namespace detail

/// Probability flux j = rho * v, pointwise.
inline VectorFieldMap flux(const FieldSnapshot& snap, const AnalysisConfig& cfg = {}) {
    VectorFieldMap map;
    map.mesh = snap.mesh;
    map.time = snap.time;
    map.valid = detail::analysis_mask(snap, cfg);
    map.x.assign(snap.mesh.size(), 0.0);
    map.y.assign(snap.mesh.size(), 0.0);
    for (std::size_t q = 0; q < map.valid.size(); ++q)
        if (map.valid[q]) {
            map.x[q] = snap.rho[q] * snap.vx[q];
            map.y[q] = snap.rho[q] * snap.vy[q];
        }
    return map;
}

/// Einstein osmotic velocity u_i = -(hbar/(2 m_i)) d(ln rho)/dx_i, from MWLS
/// derivatives of ln rho (stable in the low-density wings).
inline VectorFieldMap osmotic_velocity(const FieldSnapshot& snap, const PhysicalParams& phys,
                                       const AnalysisConfig& cfg = {}) {
    detail::SnapshotCloud sc(snap);
    VectorFieldMap map;
    map.mesh = snap.mesh;
    map.time = snap.time;
    map.valid = detail::analysis_mask(snap, cfg);
    map.x.assign(snap.mesh.size(), 0.0);
    map.y.assign(snap.mesh.size(), 0.0);
    parallel_for(sc.sites.size(), cfg.threads, [&](std::size_t k) {
        const std::size_t q = sc.sites[k];
        if (!map.valid[q]) return;
        FitStencil st(sc.cloud, sc.cloud.position(k), cfg.mwls, static_cast<long>(k));
        const LocalFit fit = st.fit_field(sc.log_rho);
        map.x[q] = -phys.hbar / (2.0 * phys.m0) * fit.dx();
        map.y[q] = -phys.hbar / (2.0 * phys.m) * fit.dy();
    });
    return map;
}

/// Quantum pressure P = -(hbar^2/4) [rho_xx/m0 + rho_yy/m].
inline ScalarFieldMap quantum_pressure(const FieldSnapshot& snap, const PhysicalParams& phys,
                                       const AnalysisConfig& cfg = {}) {
    detail::SnapshotCloud sc(snap);
    ScalarFieldMap map;
    map.mesh = snap.mesh;
    map.time = snap.time;
    map.valid = detail::analysis_mask(snap, cfg);
    map.value.assign(snap.mesh.size(), 0.0);
    const double hb2 = phys.hbar * phys.hbar;
    parallel_for(sc.sites.size(), cfg.threads, [&](std::size_t k) {
        const std::size_t q = sc.sites[k];
        if (!map.valid[q]) return;
        FitStencil st(sc.cloud, sc.cloud.position(k), cfg.mwls, static_cast<long>(k));
        const LocalFit fit = st.fit_field(sc.rho);
        map.value[q] = -0.25 * hb2 * (fit.dxx() / phys.m0 + fit.dyy() / phys.m);
    });
    return map;
}

/// Full stress tensor: compact complex-velocity form plus the classical and
/// shear decompositions. For unequal masses the dyadic terms carry the
/// symmetric sqrt(m_i m_j) weighting, which reduces to the single-mass form
/// when m0 = m.
inline StressFields stress_tensor(const FieldSnapshot& snap, const PhysicalParams& phys,
                                  const AnalysisConfig& cfg = {}) {
    detail::SnapshotCloud sc(snap);
    StressFields out;
    out.mesh = snap.mesh;
    out.time = snap.time;
    out.valid = detail::analysis_mask(snap, cfg);
    const std::size_t n = snap.mesh.size();
    for (auto* f : {&out.P, &out.ux, &out.uy, &out.wmag, &out.pi00, &out.pi01, &out.pi11,
                    &out.pi_c00, &out.pi_c01, &out.pi_c11, &out.pi_sh00, &out.pi_sh01,
                    &out.pi_sh11})
        f->assign(n, 0.0);

    const double hb2 = phys.hbar * phys.hbar;
    const double m00 = phys.m0;
    const double m11 = phys.m;
    const double m01 = std::sqrt(phys.m0 * phys.m);
    parallel_for(sc.sites.size(), cfg.threads, [&](std::size_t k) {
        const std::size_t q = sc.sites[k];
        if (!out.valid[q]) return;
        FitStencil st(sc.cloud, sc.cloud.position(k), cfg.mwls, static_cast<long>(k));
        const LocalFit flog = st.fit_field(sc.log_rho);
        const LocalFit frho = st.fit_field(sc.rho);
        const double rho = snap.rho[q];
        const double ux = -phys.hbar / (2.0 * phys.m0) * flog.dx();
        const double uy = -phys.hbar / (2.0 * phys.m) * flog.dy();
        const double P = -0.25 * hb2 * (frho.dxx() / phys.m0 + frho.dyy() / phys.m);
        const std::complex<double> wx(snap.vx[q], ux);
        const std::complex<double> wy(snap.vy[q], uy);
        out.P[q] = P;
        out.ux[q] = ux;
        out.uy[q] = uy;
        out.wmag[q] = std::sqrt(std::norm(wx) + std::norm(wy));
        out.pi00[q] = P + m00 * rho * (wx * std::conj(wx)).real();
        out.pi01[q] = m01 * rho * (wx * std::conj(wy)).real();
        out.pi11[q] = P + m11 * rho * (wy * std::conj(wy)).real();
        out.pi_c00[q] = m00 * rho * snap.vx[q] * snap.vx[q];
        out.pi_c01[q] = m01 * rho * snap.vx[q] * snap.vy[q];
        out.pi_c11[q] = m11 * rho * snap.vy[q] * snap.vy[q];
        out.pi_sh00[q] = m00 * rho * ux * ux;
        out.pi_sh01[q] = m01 * rho * ux * uy;
        out.pi_sh11[q] = m11 * rho * uy * uy;
    });
    return out;
}

/// Divergence of the probability flux via MWLS; positive regions mark
/// repeller-like flow, negative attractor-like. Equals -d rho/dt by
/// continuity.
inline ScalarFieldMap flux_divergence(const FieldSnapshot& snap,
                                      const AnalysisConfig& cfg = {}) {
    detail::SnapshotCloud sc(snap);
    std::vector<double> jx(sc.sites.size()), jy(sc.sites.size());
    for (std::size_t k = 0; k < sc.sites.size(); ++k) {
        jx[k] = sc.rho[k] * sc.vx[k];
        jy[k] = sc.rho[k] * sc.vy[k];
    }
    ScalarFieldMap map;
    map.mesh = snap.mesh;
    map.time = snap.time;
    map.valid = detail::analysis_mask(snap, cfg);
    map.value.assign(snap.mesh.size(), 0.0);
    parallel_for(sc.sites.size(), cfg.threads, [&](std::size_t k) {
        const std::size_t q = sc.sites[k];
        if (!map.valid[q]) return;
        FitStencil st(sc.cloud, sc.cloud.position(k), cfg.mwls, static_cast<long>(k));
        map.value[q] = st.fit_field(jx).dx() + st.fit_field(jy).dy();
    });
    return map;
}

/// Residual of the quantum Navier-Stokes momentum balance
///   d(rho m_i v_i)/dt + sum_j dPi_{j,i}/dx_j + rho dV/dx_i = 0
/// evaluated on two (forward difference) or three (centered difference)
/// consecutive snapshots sharing one lattice. The stress and force terms are
/// evaluated on the snapshot the time derivative is centered on.
struct NsResidual {
    UniformMesh mesh;
    double time = 0.0;
    std::vector<std::uint8_t> valid;
    std::vector<double> res_x, res_y;          // residual fields
    double norm_dt_x = 0.0, norm_dt_y = 0.0;   // rho-weighted L2 of each term
    double norm_div_x = 0.0, norm_div_y = 0.0;
    double norm_force_x = 0.0, norm_force_y = 0.0;
    double norm_res_x = 0.0, norm_res_y = 0.0;

    /// Largest individual term norm across both components.
    double largest_term() const {
        return std::max({norm_dt_x, norm_dt_y, norm_div_x, norm_div_y, norm_force_x,
                         norm_force_y, 1e-300});
    }
    double relative_x() const { return norm_res_x / largest_term(); }
    double relative_y() const { return norm_res_y / largest_term(); }
    double relative() const { return std::max(norm_res_x, norm_res_y) / largest_term(); }
};

inline NsResidual ns_residual(std::span<const FieldSnapshot> snaps, const StressFields& stress,
                              const PhysicalParams& phys, const CaseSelector& cs,
                              const AnalysisConfig& cfg = {}) {
    if (snaps.size() != 2 && snaps.size() != 3)
        throw ConfigError("ns_residual: needs 2 or 3 consecutive snapshots");
    for (std::size_t s = 1; s < snaps.size(); ++s)
        if (!snaps[s].mesh.same_lattice(snaps[0].mesh))
            throw AlignmentError("ns_residual: snapshots are on incompatible meshes");
    const FieldSnapshot& eval = snaps.size() == 3 ? snaps[1] : snaps[0];
    if (!stress.mesh.same_lattice(eval.mesh))
        throw AlignmentError("ns_residual: stress fields on an incompatible mesh");
    const FieldSnapshot& lo = snaps[0];
    const FieldSnapshot& hi = snaps[snaps.size() - 1];
    const double dt = hi.time - lo.time;
    if (!(dt > 0.0)) throw AlignmentError("ns_residual: snapshots not in time order");

    detail::SnapshotCloud sc(eval);
    NsResidual out;
    out.mesh = eval.mesh;
    out.time = eval.time;
    out.valid = detail::analysis_mask(eval, cfg);
    // Time differencing needs all participating snapshots unmasked.
    for (std::size_t q = 0; q < out.valid.size(); ++q)
        out.valid[q] = out.valid[q] && lo.mask[q] && hi.mask[q];
    out.res_x.assign(eval.mesh.size(), 0.0);
    out.res_y.assign(eval.mesh.size(), 0.0);

    // Gather stress components on the cloud for differentiation.
    const std::size_t nc = sc.sites.size();
    std::vector<double> pi00(nc), pi01(nc), pi11(nc);
    for (std::size_t k = 0; k < nc; ++k) {
        const std::size_t q = sc.sites[k];
        pi00[k] = stress.pi00[q];
        pi01[k] = stress.pi01[q];
        pi11[k] = stress.pi11[q];
    }

    std::vector<double> dt_term_x(eval.mesh.size(), 0.0), dt_term_y(eval.mesh.size(), 0.0);
    std::vector<double> div_term_x(eval.mesh.size(), 0.0), div_term_y(eval.mesh.size(), 0.0);
    std::vector<double> force_x(eval.mesh.size(), 0.0), force_y(eval.mesh.size(), 0.0);
    parallel_for(nc, cfg.threads, [&](std::size_t k) {
        const std::size_t q = sc.sites[k];
        if (!out.valid[q]) return;
        FitStencil st(sc.cloud, sc.cloud.position(k), cfg.mwls, static_cast<long>(k));
        const LocalFit f00 = st.fit_field(pi00);
        const LocalFit f01 = st.fit_field(pi01);
        const LocalFit f11 = st.fit_field(pi11);
        // stress is valid only on the analysis mask; stencils may touch
        // masked-out sites where the gathered components are zero, which is
        // harmless for interior points dominated by nearby unmasked data.
        div_term_x[q] = f00.dx() + f01.dy();
        div_term_y[q] = f01.dx() + f11.dy();
        dt_term_x[q] = phys.m0 * (hi.rho[q] * hi.vx[q] - lo.rho[q] * lo.vx[q]) / dt;
        dt_term_y[q] = phys.m * (hi.rho[q] * hi.vy[q] - lo.rho[q] * lo.vy[q]) / dt;
        const Vec2 grad_v = -1.0 * potential_gradient_force(phys, cs, sc.cloud.position(k));
        force_x[q] = eval.rho[q] * grad_v.x;
        force_y[q] = eval.rho[q] * grad_v.y;
        out.res_x[q] = dt_term_x[q] + div_term_x[q] + force_x[q];
        out.res_y[q] = dt_term_y[q] + div_term_y[q] + force_y[q];
    });

    auto weighted_norm = [&](const std::vector<double>& f) {
        double num = 0.0, den = 0.0;
        for (std::size_t q = 0; q < f.size(); ++q)
            if (out.valid[q]) {
                num += eval.rho[q] * f[q] * f[q];
                den += eval.rho[q];
            }
        return den > 0.0 ? std::sqrt(num / den) : 0.0;
    };
    out.norm_dt_x = weighted_norm(dt_term_x);
    out.norm_dt_y = weighted_norm(dt_term_y);
    out.norm_div_x = weighted_norm(div_term_x);
    out.norm_div_y = weighted_norm(div_term_y);
    out.norm_force_x = weighted_norm(force_x);
    out.norm_force_y = weighted_norm(force_y);
    out.norm_res_x = weighted_norm(out.res_x);
    out.norm_res_y = weighted_norm(out.res_y);
    return out;
}

/// Scalar decoherence diagnostics on the y = 0 cut and full mesh.
inline DecoherenceMetrics decoherence_metrics(const FieldSnapshot& snap) {
    DecoherenceMetrics m;
    const UniformMesh& mesh = snap.mesh;

    const long ic = -mesh.i0; // lattice index of x = 0
    const long jc = -mesh.j0; // lattice index of y = 0
    if (ic >= 0 && ic < mesh.nx && jc >= 0 && jc < mesh.ny &&
        snap.mask[mesh.index(static_cast<int>(ic), static_cast<int>(jc))]) {
        m.central_density = snap.rho[mesh.index(static_cast<int>(ic), static_cast<int>(jc))];
    } else {
        m.central_density = snap.bilinear(snap.rho, {0.0, 0.0}).value_or(0.0);
    }

    if (jc >= 0 && jc < mesh.ny) {
        double lo = 0.0, hi = 0.0;
        bool any = false;
        for (int i = 0; i < mesh.nx; ++i) {
            const Vec2 p = mesh.point(i, static_cast<int>(jc));
            if (std::abs(p.x) >= 0.5) continue;
            const std::size_t q = mesh.index(i, static_cast<int>(jc));
            if (!snap.mask[q]) continue;
            if (!any) {
                lo = hi = snap.rho[q];
                any = true;
            } else {
                lo = std::min(lo, snap.rho[q]);
                hi = std::max(hi, snap.rho[q]);
            }
        }
        if (any && hi + lo > 0.0) m.fringe_visibility = (hi - lo) / (hi + lo);
    }

    // Two largest local maxima over the masked mesh (8-neighborhood).
    struct Peak {
        double rho;
        Vec2 pos;
    };
    std::vector<Peak> peaks;
    for (int j = 0; j < mesh.ny; ++j)
        for (int i = 0; i < mesh.nx; ++i) {
            const std::size_t q = mesh.index(i, j);
            if (!snap.mask[q]) continue;
            bool is_max = true;
            for (int dj = -1; dj <= 1 && is_max; ++dj)
                for (int di = -1; di <= 1 && is_max; ++di) {
                    if (di == 0 && dj == 0) continue;
                    const int ii = i + di, jj = j + dj;
                    if (ii < 0 || jj < 0 || ii >= mesh.nx || jj >= mesh.ny) continue;
                    const std::size_t qq = mesh.index(ii, jj);
                    if (snap.mask[qq] && snap.rho[qq] > snap.rho[q]) is_max = false;
                }
            if (is_max) peaks.push_back({snap.rho[q], mesh.point(i, j)});
        }
    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
        return a.rho != b.rho ? a.rho > b.rho
                              : (a.pos.x != b.pos.x ? a.pos.x < b.pos.x : a.pos.y < b.pos.y);
    });
    if (peaks.size() >= 2) m.lobe_separation = norm(peaks[1].pos - peaks[0].pos);
    return m;
}

/// Interpolates a snapshot's fields onto another lattice with MWLS; sites
/// outside the source cloud's hull or below the cutoff are masked out.
inline FieldSnapshot resample_snapshot(const FieldSnapshot& src, const UniformMesh& mesh,
                                       const AnalysisConfig& cfg = {}) {
    detail::SnapshotCloud sc(src);
    FieldSnapshot out;
    out.mesh = mesh;
    out.time = src.time;
    out.source = src.source;
    out.coupled = src.coupled;
    out.density_cutoff = src.density_cutoff;
    out.allocate();
    const double log_cutoff = std::log(src.density_cutoff);
    std::vector<double> s_field;
    s_field.reserve(sc.sites.size());
    for (std::size_t q : sc.sites) s_field.push_back(src.S[q]);
    parallel_for(mesh.size(), cfg.threads, [&](std::size_t q) {
        const int i = static_cast<int>(q) % mesh.nx;
        const int j = static_cast<int>(q) / mesh.nx;
        const Vec2 p = mesh.point(i, j);
        FitStencil st(sc.cloud, p, cfg.mwls, static_cast<long>(q));
        if (st.extrapolating()) return;
        const double lr = st.fit_field(sc.log_rho).value();
        if (!(lr > log_cutoff)) return;
        out.rho[q] = std::exp(lr);
        out.vx[q] = st.fit_field(sc.vx).value();
        out.vy[q] = st.fit_field(sc.vy).value();
        out.S[q] = st.fit_field(s_field).value();
        out.mask[q] = 1;
    });
    return out;
}

}  // namespace qhd
