#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qhd/errors.hpp"
#include "qhd/geometry.hpp"
#include "qhd/mesh.hpp"
#include "qhd/model.hpp"
#include "qhd/mwls.hpp"
#include "qhd/parallel.hpp"
#include "qhd/point_cloud.hpp"

namespace qhd {

/// One Lagrangian fluid element. The two integrals accumulate div(v) and the
/// quantum Lagrangian along the trajectory since the last regrid; together
/// with the wavefunction value at the segment start they synthesize the
/// wavefunction at the segment end.
struct FluidElement {
    Vec2 pos{};
    Vec2 vel{};
    double log_rho = 0.0;       // ln of probability density
    double action = 0.0;        // S
    double amp_integral = 0.0;  // int div(v) dtau since segment start
    double phase_integral = 0.0; // int L_q dtau since segment start
    long id = 0;
};

struct Ensemble {
    std::vector<FluidElement> elements;
    double time = 0.0;
    Vec2 mesh_spacing{};
    double density_cutoff = 0.0; // absolute rho floor for mesh membership
    UniformMesh mesh;            // lattice the elements were last placed on
    std::vector<std::size_t> site; // element -> lattice site, valid right after (re)grid
    std::vector<long> lineage_parent; // element -> ancestor id across the last regrid
    long next_id = 0;

    double discrete_norm() const {
        double s = 0.0;
        for (const FluidElement& e : elements) s += std::exp(e.log_rho);
        return s * mesh_spacing.x * mesh_spacing.y;
    }
};

struct HydroConfig {
    int n_elements_target = 0; // 0 -> case default (1215 uncoupled, 1175 coupled)
    double dt = 0.5;
    double regrid_interval = 2.0; // one output step
    double density_cutoff_rel = 1e-7; // relative to the initial peak density
    Rect domain{-6.0, 6.0, -3.0, 3.0};
    double t_final = 450.0;

    int resolved_target(const CaseSelector& cs) const {
        if (n_elements_target > 0) return n_elements_target;
        return cs.coupled ? 1175 : 1215;
    }

    int substeps() const { return static_cast<int>(std::lround(regrid_interval / dt)); }
    int output_steps() const { return static_cast<int>(std::lround(t_final / regrid_interval)); }

    void validate() const {
        if (!(dt > 0.0)) throw ConfigError("hydro.dt must be > 0");
        if (!(regrid_interval > 0.0)) throw ConfigError("hydro.regrid_interval must be > 0");
        const double sub = regrid_interval / dt;
        if (std::abs(sub - std::lround(sub)) > 1e-9)
            throw ConfigError("hydro.regrid_interval must be an integer multiple of dt");
        if (t_final < 0.0) throw ConfigError("hydro.t_final must be >= 0");
        const double outs = t_final / regrid_interval;
        if (std::abs(outs - std::lround(outs)) > 1e-9)
            throw ConfigError("hydro.t_final must be a multiple of regrid_interval");
        if (!(density_cutoff_rel > 0.0))
            throw ConfigError("hydro.density_cutoff must be > 0");
        if (!(domain.width() > 0.0) || !(domain.height() > 0.0))
            throw ConfigError("hydro.domain is empty");
    }
};

/// Per-element hydrodynamic derivative data for one stage evaluation.
struct ElementDerivatives {
    double Q = 0.0;      // quantum potential
    Vec2 grad_Q{};       // MWLS gradient of the Q field
    double div_v = 0.0;  // velocity divergence
    double L_q = 0.0;    // quantum Lagrangian
    Vec2 f_c{};          // classical force
    double V = 0.0;      // classical potential
};

struct RegridInfo {
    double prenorm = 1.0;       // discrete norm before renormalization
    double renorm_factor = 1.0; // multiplicative density factor applied
    double dropped_mass = 0.0;  // estimated mass below the cutoff
    std::size_t count = 0;
    double spacing = 0.0;
};

struct TrajectoryPoint {
    double t = 0.0;
    long id = 0;
    Vec2 pos{};
    Vec2 vel{};
    double rho = 0.0;
    double S = 0.0;
    double Q = 0.0;
    double L_q = 0.0;
};

/// Trajectory integrals between two consecutive regrids for one tracked
/// lineage, plus the field values at both ends.
struct SynthesisSegment {
    long id = 0;
    double t0 = 0.0, t1 = 0.0;
    double rho0 = 0.0, rho1 = 0.0;
    double S0 = 0.0, S1 = 0.0;
    double amp_integral = 0.0;
    double phase_integral = 0.0;
};

/// Wavefunction synthesis along a trajectory: the first factor updates the
/// amplitude from the accumulated div(v), the second advances the phase by
/// the accumulated quantum Lagrangian over hbar.
inline std::complex<double> synthesize_wavefunction(double amp_integral,
                                                    double phase_integral,
                                                    std::complex<double> psi0,
                                                    double hbar = 1.0) {
    const std::complex<double> im(0.0, 1.0);
    return std::exp(-0.5 * amp_integral) * std::exp(im * phase_integral / hbar) * psi0;
}

struct RunSinks {
    std::function<void(const FieldSnapshot&)> snapshot;
    std::function<void(std::span<const TrajectoryPoint>)> trajectory;
    std::function<void(std::span<const SynthesisSegment>)> synthesis;
};

struct RunSummary {
    double max_prenorm_drift = 0.0; // max |norm - 1| before renormalization
    double cumulative_renorm = 1.0; // product of all renormalization factors
    std::size_t min_count = 0, max_count = 0;
    std::size_t n_snapshots = 0;
    double final_time = 0.0;
};

/// Lagrangian quantum trajectory engine: integrates the coupled continuity,
/// quantum-force Euler, and action equations along fluid elements, with all
/// spatial derivatives supplied by weighted moving least squares on the
/// evolving point cloud, and regrids onto a fresh uniform mesh every output
/// step.
class TrajectoryEngine {
public:
    TrajectoryEngine(const PhysicalParams& phys, const SuperpositionParams& sup,
                     const CaseSelector& cs, const HydroConfig& hydro,
                     const MwlsConfig& mwls, int threads = 1)
        : phys_(phys), sup_(sup), cs_(cs), hydro_(hydro), mwls_(mwls),
          threads_(resolve_threads(threads)) {
        phys_.validate();
        sup_.validate();
        hydro_.validate();
        mwls_.validate();
    }

    const HydroConfig& hydro_config() const { return hydro_; }
    const MwlsConfig& mwls_config() const { return mwls_; }

    /// Builds the ensemble from the model's initial superposition.
    Ensemble initialize_ensemble() const {
        const double peak = initial_peak_density(phys_, sup_);
        return initialize_from(
            [this](const Vec2& r) { return 2.0 * initial_log_amplitude(phys_, sup_, r); },
            peak);
    }

    /// Builds an ensemble from an arbitrary real initial state given by its
    /// log-density (S = 0, v = 0). Used for synthetic and closed-form states.
    Ensemble initialize_from(const std::function<double(const Vec2&)>& log_density,
                             double peak_density) const {
        const double cutoff = hydro_.density_cutoff_rel * peak_density;
        const double log_cutoff = std::log(cutoff);
        const int target = hydro_.resolved_target(cs_);

        // Mesh spacing: start from an area estimate on a fine lattice, then
        // adjust until the realized count is within 10% of the target.
        const double h_fine = 0.02;
        const std::size_t fine_count = count_sites(log_density, log_cutoff, h_fine);
        double area = static_cast<double>(fine_count) * h_fine * h_fine;
        if (area <= 0.0) throw ConfigError("initialize_ensemble: cutoff excludes everything");
        double h = std::sqrt(area / target);
        std::size_t count = 0;
        double best_h = h;
        double best_err = std::numeric_limits<double>::infinity();
        for (int iter = 0; iter < 24; ++iter) {
            count = count_sites(log_density, log_cutoff, h);
            const double err = std::abs(static_cast<double>(count) - target) / target;
            if (err < best_err) {
                best_err = err;
                best_h = h;
            }
            if (err <= 0.10) break;
            h *= std::sqrt(static_cast<double>(count) / target);
        }
        h = best_h;
        count = count_sites(log_density, log_cutoff, h);

        Ensemble ens;
        ens.time = 0.0;
        ens.mesh_spacing = {h, h};
        ens.density_cutoff = cutoff;
        fill_from_lattice(ens, log_density, log_cutoff, h);
        if (ens.elements.size() < 100)
            throw ConfigError("initialize_ensemble: cutoff leaves only " +
                              std::to_string(ens.elements.size()) + " elements");
        ens.next_id = static_cast<long>(ens.elements.size());
        return ens;
    }

    /// MWLS-supplied per-element derivative data: quantum potential through
    /// C = ln R, its gradient via a second differentiation pass over the Q
    /// samples, velocity divergence, quantum Lagrangian, classical force.
    std::vector<ElementDerivatives> hydrodynamic_derivatives(const Ensemble& ens) const {
        const std::size_t n = ens.elements.size();
        std::vector<Vec2> positions(n);
        std::vector<double> c_field(n), vx(n), vy(n);
        for (std::size_t i = 0; i < n; ++i) {
            const FluidElement& e = ens.elements[i];
            positions[i] = e.pos;
            c_field[i] = 0.5 * e.log_rho; // C = ln R
            vx[i] = e.vel.x;
            vy[i] = e.vel.y;
        }
        PointCloud cloud(std::move(positions));

        std::vector<FitStencil> stencils;
        stencils.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            stencils.emplace_back(cloud, ens.elements[i].pos, mwls_, static_cast<long>(i));

        std::vector<ElementDerivatives> out(n);
        std::vector<double> q_field(n);
        const double hb2 = phys_.hbar * phys_.hbar;
        parallel_for(n, threads_, [&](std::size_t i) {
            const FitStencil& st = stencils[i];
            const LocalFit fc = st.fit_field(c_field);
            const LocalFit fvx = st.fit_field(vx);
            const LocalFit fvy = st.fit_field(vy);
            ElementDerivatives d;
            d.Q = -0.5 * hb2 *
                  ((fc.dxx() + fc.dx() * fc.dx()) / phys_.m0 +
                   (fc.dyy() + fc.dy() * fc.dy()) / phys_.m);
            d.div_v = fvx.dx() + fvy.dy();
            d.V = potential(phys_, cs_, ens.elements[i].pos);
            d.f_c = potential_gradient_force(phys_, cs_, ens.elements[i].pos);
            const Vec2 v = ens.elements[i].vel;
            d.L_q = 0.5 * (phys_.m0 * v.x * v.x + phys_.m * v.y * v.y) - (d.V + d.Q);
            out[i] = d;
            q_field[i] = d.Q;
        });
        parallel_for(n, threads_, [&](std::size_t i) {
            const LocalFit fq = stencils[i].fit_field(q_field);
            out[i].grad_Q = {fq.dx(), fq.dy()};
            const ElementDerivatives& d = out[i];
            if (!std::isfinite(d.Q) || !std::isfinite(d.div_v) || !std::isfinite(d.L_q) ||
                !std::isfinite(d.grad_Q.x) || !std::isfinite(d.grad_Q.y))
                throw NumericalError("non-finite hydrodynamic field at element id " +
                                     std::to_string(ens.elements[i].id) + ", t = " +
                                     std::to_string(ens.time));
        });
        return out;
    }

    /// One Heun (predictor-corrector) substep of size dt, with the
    /// trajectory integrals advanced by the same trapezoidal quadrature as
    /// the state, so synthesized |psi|^2 and integrated rho agree to
    /// rounding.
    void step(Ensemble& ens) const {
        const double dt = hydro_.dt;
        const std::size_t n = ens.elements.size();
        const std::vector<ElementDerivatives> d1 = hydrodynamic_derivatives(ens);

        Ensemble pred = ens;
        pred.time = ens.time + dt;
        parallel_for(n, threads_, [&](std::size_t i) {
            const FluidElement& e = ens.elements[i];
            FluidElement& p = pred.elements[i];
            const Vec2 acc = acceleration(d1[i]);
            p.pos = e.pos + dt * e.vel;
            p.vel = e.vel + dt * acc;
            p.log_rho = e.log_rho - dt * d1[i].div_v;
            p.action = e.action + dt * d1[i].L_q;
            check_inside(p.pos, e.id, pred.time);
        });
        const std::vector<ElementDerivatives> d2 = hydrodynamic_derivatives(pred);

        parallel_for(n, threads_, [&](std::size_t i) {
            FluidElement& e = ens.elements[i];
            const FluidElement& p = pred.elements[i];
            const Vec2 acc1 = acceleration(d1[i]);
            const Vec2 acc2 = acceleration(d2[i]);
            e.pos = e.pos + 0.5 * dt * (e.vel + p.vel);
            e.vel = e.vel + 0.5 * dt * (acc1 + acc2);
            const double div_avg = 0.5 * (d1[i].div_v + d2[i].div_v);
            const double lq_avg = 0.5 * (d1[i].L_q + d2[i].L_q);
            e.log_rho -= dt * div_avg;
            e.action += dt * lq_avg;
            e.amp_integral += dt * div_avg;
            e.phase_integral += dt * lq_avg;
            check_inside(e.pos, e.id, ens.time + dt);
            if (!std::isfinite(e.log_rho) || !std::isfinite(e.action) ||
                !std::isfinite(e.vel.x) || !std::isfinite(e.vel.y))
                throw NumericalError("non-finite element state at id " +
                                     std::to_string(e.id) + ", t = " +
                                     std::to_string(ens.time + dt));
        });
        ens.time += dt;
        ens.site.clear(); // elements have left the lattice
    }

    /// Replaces the deformed cloud with a fresh uniform mesh over the region
    /// where the interpolated density exceeds the cutoff, interpolating
    /// ln rho, v and S across, renormalizing the discrete norm to exactly 1,
    /// and recording id lineage.
    RegridInfo regrid(Ensemble& ens) const {
        const std::size_t n = ens.elements.size();
        std::vector<Vec2> positions(n);
        std::vector<double> logr(n), vx(n), vy(n), s_field(n);
        std::vector<long> old_ids(n);
        for (std::size_t i = 0; i < n; ++i) {
            const FluidElement& e = ens.elements[i];
            positions[i] = e.pos;
            logr[i] = e.log_rho;
            vx[i] = e.vel.x;
            vy[i] = e.vel.y;
            s_field[i] = e.action;
            old_ids[i] = e.id;
        }
        PointCloud cloud(std::move(positions));
        const double log_cutoff = std::log(ens.density_cutoff);
        const int target = hydro_.resolved_target(cs_);

        Rect box = cloud.bounding_box();
        const double margin = ens.mesh_spacing.x;
        box.x_min = std::max(box.x_min - margin, hydro_.domain.x_min);
        box.x_max = std::min(box.x_max + margin, hydro_.domain.x_max);
        box.y_min = std::max(box.y_min - margin, hydro_.domain.y_min);
        box.y_max = std::min(box.y_max + margin, hydro_.domain.y_max);

        struct Pass {
            std::vector<std::pair<int, int>> kept; // lattice indices
            std::vector<double> lr, vx, vy, s;
            double dropped = 0.0;
        };
        auto run_pass = [&](double h) {
            Pass pass;
            const long i_lo = static_cast<long>(std::ceil(box.x_min / h));
            const long i_hi = static_cast<long>(std::floor(box.x_max / h));
            const long j_lo = static_cast<long>(std::ceil(box.y_min / h));
            const long j_hi = static_cast<long>(std::floor(box.y_max / h));
            const long ncols = i_hi - i_lo + 1;
            const long nrows = j_hi - j_lo + 1;
            if (ncols <= 0 || nrows <= 0)
                throw NumericalError("regrid: collapsed mesh box at t = " +
                                     std::to_string(ens.time));
            const std::size_t n_sites = static_cast<std::size_t>(ncols * nrows);
            std::vector<double> site_lr(n_sites), site_vx(n_sites), site_vy(n_sites),
                site_s(n_sites);
            parallel_for(n_sites, threads_, [&](std::size_t q) {
                const long i = i_lo + static_cast<long>(q) % ncols;
                const long j = j_lo + static_cast<long>(q) / ncols;
                const Vec2 p{i * h, j * h};
                FitStencil st(cloud, p, mwls_, static_cast<long>(q));
                site_lr[q] = st.fit_field(logr).value();
                if (site_lr[q] > log_cutoff) {
                    site_vx[q] = st.fit_field(vx).value();
                    site_vy[q] = st.fit_field(vy).value();
                    site_s[q] = st.fit_field(s_field).value();
                }
            });
            for (std::size_t q = 0; q < n_sites; ++q) {
                const long i = i_lo + static_cast<long>(q) % ncols;
                const long j = j_lo + static_cast<long>(q) / ncols;
                if (site_lr[q] > log_cutoff) {
                    pass.kept.emplace_back(static_cast<int>(i), static_cast<int>(j));
                    pass.lr.push_back(site_lr[q]);
                    pass.vx.push_back(site_vx[q]);
                    pass.vy.push_back(site_vy[q]);
                    pass.s.push_back(site_s[q]);
                } else if (std::isfinite(site_lr[q])) {
                    pass.dropped += std::exp(site_lr[q]) * h * h;
                }
            }
            return pass;
        };

        double h = ens.mesh_spacing.x;
        Pass pass = run_pass(h);
        for (int iter = 0; iter < 3; ++iter) {
            const double ratio = static_cast<double>(pass.kept.size()) / target;
            if (ratio >= 0.90 && ratio <= 1.10) break;
            h *= std::sqrt(ratio);
            pass = run_pass(h);
        }
        if (pass.kept.empty())
            throw ConfigError("regrid: every mesh site fell below the density cutoff");

        RegridInfo info;
        info.count = pass.kept.size();
        info.spacing = h;
        info.dropped_mass = pass.dropped;
        double norm = 0.0;
        for (double lr : pass.lr) norm += std::exp(lr);
        norm *= h * h;
        info.prenorm = norm;
        if (!(norm > 0.1) || !(norm < 10.0))
            throw NumericalError("regrid: discrete norm " + std::to_string(norm) +
                                 " out of range at t = " + std::to_string(ens.time));
        info.renorm_factor = 1.0 / norm;
        const double log_shift = std::log(norm);

        int i_min = pass.kept[0].first, i_max = pass.kept[0].first;
        int j_min = pass.kept[0].second, j_max = pass.kept[0].second;
        for (const auto& [i, j] : pass.kept) {
            i_min = std::min(i_min, i);
            i_max = std::max(i_max, i);
            j_min = std::min(j_min, j);
            j_max = std::max(j_max, j);
        }
        UniformMesh mesh;
        mesh.hx = mesh.hy = h;
        mesh.i0 = i_min;
        mesh.j0 = j_min;
        mesh.nx = i_max - i_min + 1;
        mesh.ny = j_max - j_min + 1;

        std::vector<FluidElement> fresh(pass.kept.size());
        std::vector<std::size_t> site(pass.kept.size());
        std::vector<long> parent(pass.kept.size());
        parallel_for(pass.kept.size(), threads_, [&](std::size_t q) {
            const auto [i, j] = pass.kept[q];
            FluidElement e;
            e.pos = {i * h, j * h};
            e.vel = {pass.vx[q], pass.vy[q]};
            e.log_rho = pass.lr[q] - log_shift;
            e.action = pass.s[q];
            e.amp_integral = 0.0;
            e.phase_integral = 0.0;
            e.id = ens.next_id + static_cast<long>(q);
            fresh[q] = e;
            site[q] = mesh.index(i - mesh.i0, j - mesh.j0);
            parent[q] = old_ids[static_cast<std::size_t>(cloud.nearest(e.pos))];
        });

        ens.elements = std::move(fresh);
        ens.site = std::move(site);
        ens.lineage_parent = std::move(parent);
        ens.mesh = mesh;
        ens.mesh_spacing = {h, h};
        ens.next_id += static_cast<long>(pass.kept.size());
        return info;
    }

    /// Snapshot of an on-lattice ensemble (valid right after initialize or
    /// regrid).
    FieldSnapshot make_snapshot(const Ensemble& ens, const RegridInfo* info = nullptr) const {
        if (ens.site.size() != ens.elements.size())
            throw NumericalError("make_snapshot: ensemble is not on its lattice");
        FieldSnapshot snap;
        snap.mesh = ens.mesh;
        snap.time = ens.time;
        snap.source = "qtm";
        snap.coupled = cs_.coupled;
        snap.density_cutoff = ens.density_cutoff;
        if (info) {
            snap.dropped_mass = info->dropped_mass;
            snap.renorm_factor = info->renorm_factor;
        }
        snap.allocate();
        for (std::size_t e = 0; e < ens.elements.size(); ++e) {
            const FluidElement& el = ens.elements[e];
            const std::size_t q = ens.site[e];
            snap.rho[q] = std::exp(el.log_rho);
            snap.vx[q] = el.vel.x;
            snap.vy[q] = el.vel.y;
            snap.S[q] = el.action;
            snap.mask[q] = 1;
        }
        return snap;
    }

    /// Full production run: initialize, then (substeps, regrid, emit) until
    /// t_final. Snapshots are taken immediately after each regrid on the
    /// fresh uniform mesh; trajectory records follow a fixed subsample of
    /// element lineages, remapped to the nearest new element across regrids.
    RunSummary run(const RunSinks& sinks, int trajectory_subsample = 200,
                   int snapshot_stride = 1) const {
        return run_from(initialize_ensemble(), sinks, trajectory_subsample, snapshot_stride);
    }

    /// Same loop from an explicit starting ensemble (synthetic states).
    RunSummary run_from(Ensemble ens, const RunSinks& sinks, int trajectory_subsample = 200,
                        int snapshot_stride = 1) const {
        if (snapshot_stride < 1) throw ConfigError("snapshot stride must be >= 1");
        RunSummary summary;
        summary.min_count = summary.max_count = ens.elements.size();

        struct Track {
            std::size_t index; // element index in the current ensemble
            double t0, rho0, S0;
        };
        std::vector<Track> tracks;
        if (sinks.trajectory || sinks.synthesis) {
            const std::size_t n = ens.elements.size();
            const std::size_t want =
                std::min<std::size_t>(static_cast<std::size_t>(trajectory_subsample), n);
            for (std::size_t k = 0; k < want; ++k) {
                const std::size_t idx = k * n / want;
                tracks.push_back({idx, 0.0, std::exp(ens.elements[idx].log_rho),
                                  ens.elements[idx].action});
            }
        }

        auto emit_outputs = [&](const Ensemble& state, const RegridInfo* info, bool snap) {
            if (snap && sinks.snapshot) {
                sinks.snapshot(make_snapshot(state, info));
                ++summary.n_snapshots;
            }
            if (sinks.trajectory && !tracks.empty()) {
                const std::vector<ElementDerivatives> d = hydrodynamic_derivatives(state);
                std::vector<TrajectoryPoint> pts;
                pts.reserve(tracks.size());
                for (const Track& tr : tracks) {
                    const FluidElement& e = state.elements[tr.index];
                    pts.push_back({state.time, e.id, e.pos, e.vel, std::exp(e.log_rho),
                                   e.action, d[tr.index].Q, d[tr.index].L_q});
                }
                std::sort(pts.begin(), pts.end(),
                          [](const TrajectoryPoint& a, const TrajectoryPoint& b) {
                              return a.id < b.id;
                          });
                sinks.trajectory(pts);
            }
        };

        emit_outputs(ens, nullptr, true);

        const int n_outputs = hydro_.output_steps();
        const int substeps = hydro_.substeps();
        for (int out = 1; out <= n_outputs; ++out) {
            for (int s = 0; s < substeps; ++s) step(ens);

            if (sinks.synthesis && !tracks.empty()) {
                std::vector<SynthesisSegment> segs;
                segs.reserve(tracks.size());
                for (const Track& tr : tracks) {
                    const FluidElement& e = ens.elements[tr.index];
                    segs.push_back({e.id, tr.t0, ens.time, tr.rho0,
                                    std::exp(e.log_rho), tr.S0, e.action,
                                    e.amp_integral, e.phase_integral});
                }
                sinks.synthesis(segs);
            }

            std::vector<Vec2> old_track_pos(tracks.size());
            for (std::size_t k = 0; k < tracks.size(); ++k)
                old_track_pos[k] = ens.elements[tracks[k].index].pos;

            const RegridInfo info = regrid(ens);
            summary.max_prenorm_drift =
                std::max(summary.max_prenorm_drift, std::abs(info.prenorm - 1.0));
            summary.cumulative_renorm *= info.renorm_factor;
            summary.min_count = std::min(summary.min_count, info.count);
            summary.max_count = std::max(summary.max_count, info.count);

            if (!tracks.empty()) {
                std::vector<Vec2> fresh_pos(ens.elements.size());
                for (std::size_t e = 0; e < ens.elements.size(); ++e)
                    fresh_pos[e] = ens.elements[e].pos;
                PointCloud fresh_cloud(std::move(fresh_pos));
                for (std::size_t k = 0; k < tracks.size(); ++k) {
                    const std::size_t idx =
                        static_cast<std::size_t>(fresh_cloud.nearest(old_track_pos[k]));
                    tracks[k] = {idx, ens.time, std::exp(ens.elements[idx].log_rho),
                                 ens.elements[idx].action};
                }
            }

            emit_outputs(ens, &info, out % snapshot_stride == 0 || out == n_outputs);
        }
        summary.final_time = ens.time;
        return summary;
    }

private:
    Vec2 acceleration(const ElementDerivatives& d) const {
        return {(d.f_c.x - d.grad_Q.x) / phys_.m0, (d.f_c.y - d.grad_Q.y) / phys_.m};
    }

    void check_inside(const Vec2& p, long id, double t) const {
        if (!hydro_.domain.contains(p))
            throw NumericalError("element id " + std::to_string(id) +
                                 " left the domain at t = " + std::to_string(t) +
                                 "; enlarge hydro.domain");
    }

    std::size_t count_sites(const std::function<double(const Vec2&)>& log_density,
                            double log_cutoff, double h) const {
        const Rect& d = hydro_.domain;
        const long i_lo = static_cast<long>(std::ceil(d.x_min / h));
        const long i_hi = static_cast<long>(std::floor(d.x_max / h));
        const long j_lo = static_cast<long>(std::ceil(d.y_min / h));
        const long j_hi = static_cast<long>(std::floor(d.y_max / h));
        std::size_t count = 0;
        for (long j = j_lo; j <= j_hi; ++j)
            for (long i = i_lo; i <= i_hi; ++i)
                if (log_density({i * h, j * h}) > log_cutoff) ++count;
        return count;
    }

    void fill_from_lattice(Ensemble& ens,
                           const std::function<double(const Vec2&)>& log_density,
                           double log_cutoff, double h) const {
        const Rect& d = hydro_.domain;
        const long i_lo = static_cast<long>(std::ceil(d.x_min / h));
        const long i_hi = static_cast<long>(std::floor(d.x_max / h));
        const long j_lo = static_cast<long>(std::ceil(d.y_min / h));
        const long j_hi = static_cast<long>(std::floor(d.y_max / h));
        std::vector<std::pair<int, int>> kept;
        std::vector<double> lr;
        for (long j = j_lo; j <= j_hi; ++j)
            for (long i = i_lo; i <= i_hi; ++i) {
                const double v = log_density({i * h, j * h});
                if (v > log_cutoff) {
                    kept.emplace_back(static_cast<int>(i), static_cast<int>(j));
                    lr.push_back(v);
                }
            }
        if (kept.empty()) throw ConfigError("initialize_ensemble: empty mesh");
        int i_min = kept[0].first, i_max = kept[0].first;
        int j_min = kept[0].second, j_max = kept[0].second;
        for (const auto& [i, j] : kept) {
            i_min = std::min(i_min, i);
            i_max = std::max(i_max, i);
            j_min = std::min(j_min, j);
            j_max = std::max(j_max, j);
        }
        ens.mesh.hx = ens.mesh.hy = h;
        ens.mesh.i0 = i_min;
        ens.mesh.j0 = j_min;
        ens.mesh.nx = i_max - i_min + 1;
        ens.mesh.ny = j_max - j_min + 1;
        ens.elements.resize(kept.size());
        ens.site.resize(kept.size());
        for (std::size_t q = 0; q < kept.size(); ++q) {
            const auto [i, j] = kept[q];
            FluidElement e;
            e.pos = {i * h, j * h};
            e.log_rho = lr[q];
            e.id = static_cast<long>(q);
            ens.elements[q] = e;
            ens.site[q] = ens.mesh.index(i - ens.mesh.i0, j - ens.mesh.j0);
        }
    }

    PhysicalParams phys_;
    SuperpositionParams sup_;
    CaseSelector cs_;
    HydroConfig hydro_;
    MwlsConfig mwls_;
    int threads_;
};

}  // namespace qhd
