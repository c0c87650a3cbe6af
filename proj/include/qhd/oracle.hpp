#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "qhd/errors.hpp"
#include "qhd/geometry.hpp"
#include "qhd/mesh.hpp"
#include "qhd/model.hpp"

namespace qhd {

/// Periodic rectangular grid for the spectral solver. Point counts should be
/// powers of two; sites must land on integer multiples of the spacing so the
/// emitted snapshots share the lattice convention of the trajectory engine.
struct OracleGrid {
    int nx = 256, ny = 256;
    Rect domain{-6.0, 6.0, -3.0, 3.0};

    double dx() const { return domain.width() / nx; }
    double dy() const { return domain.height() / ny; }
    Vec2 point(int i, int j) const {
        return {domain.x_min + i * dx(), domain.y_min + j * dy()};
    }
    std::size_t size() const { return static_cast<std::size_t>(nx) * ny; }
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * nx + i; }

    UniformMesh mesh() const {
        UniformMesh m;
        m.hx = dx();
        m.hy = dy();
        m.nx = nx;
        m.ny = ny;
        m.i0 = std::llround(domain.x_min / m.hx);
        m.j0 = std::llround(domain.y_min / m.hy);
        if (std::abs(m.i0 * m.hx - domain.x_min) > 1e-12 ||
            std::abs(m.j0 * m.hy - domain.y_min) > 1e-12)
            throw ConfigError("oracle grid is not aligned with an origin-anchored lattice");
        return m;
    }

    void validate() const {
        if (nx < 8 || ny < 8) throw ConfigError("oracle grid too small");
        if ((nx & (nx - 1)) != 0 || (ny & (ny - 1)) != 0)
            throw ConfigError("oracle grid extents must be powers of two");
        if (!(domain.width() > 0.0) || !(domain.height() > 0.0))
            throw ConfigError("oracle domain is empty");
    }
};

/// Complex wavefunction on an OracleGrid.
struct OracleState {
    OracleGrid grid;
    std::vector<std::complex<double>> psi;
    double time = 0.0;

    double norm() const {
        double s = 0.0;
        for (const auto& z : psi) s += std::norm(z);
        return s * grid.dx() * grid.dy();
    }
};

namespace detail {

/// RAII plan pair for in-place 2-D c2c transforms on an owned buffer.
class Fft2d {
public:
    Fft2d(int nx, int ny) : nx_(nx), ny_(ny) {
        buf_ = static_cast<fftw_complex*>(
            fftw_malloc(sizeof(fftw_complex) * static_cast<std::size_t>(nx) * ny));
        if (!buf_) throw NumericalError("fftw_malloc failed");
        fwd_ = fftw_plan_dft_2d(ny, nx, buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
        bwd_ = fftw_plan_dft_2d(ny, nx, buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
        if (!fwd_ || !bwd_) throw NumericalError("fftw plan creation failed");
    }
    ~Fft2d() {
        if (fwd_) fftw_destroy_plan(fwd_);
        if (bwd_) fftw_destroy_plan(bwd_);
        if (buf_) fftw_free(buf_);
    }
    Fft2d(const Fft2d&) = delete;
    Fft2d& operator=(const Fft2d&) = delete;

    std::complex<double>* data() { return reinterpret_cast<std::complex<double>*>(buf_); }
    const std::complex<double>* data() const {
        return reinterpret_cast<const std::complex<double>*>(buf_);
    }
    std::size_t size() const { return static_cast<std::size_t>(nx_) * ny_; }
    void forward() { fftw_execute(fwd_); }
    /// Backward transform, normalized so forward+backward is the identity.
    void backward() {
        fftw_execute(bwd_);
        const double s = 1.0 / static_cast<double>(size());
        auto* p = data();
        for (std::size_t q = 0; q < size(); ++q) p[q] *= s;
    }

private:
    int nx_, ny_;
    fftw_complex* buf_ = nullptr;
    fftw_plan fwd_ = nullptr;
    fftw_plan bwd_ = nullptr;
};

inline double wavenumber(int idx, int n, double length) {
    const int s = idx < n / 2 ? idx : idx - n;
    return 2.0 * std::numbers::pi * s / length;
}

}  // namespace detail

/// Samples the initial superposition onto the grid and rescales the grid
/// quadrature norm to exactly 1. Errors if the grid cannot represent the
/// initial state to 1e-6 in norm.
inline OracleState oracle_init(const PhysicalParams& phys, const SuperpositionParams& sup,
                               const CaseSelector& /*cs*/, const OracleGrid& grid) {
    phys.validate();
    sup.validate();
    grid.validate();
    OracleState st;
    st.grid = grid;
    st.psi.resize(grid.size());
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) {
            const PolarValue val = initial_wavefunction(phys, sup, grid.point(i, j));
            st.psi[grid.index(i, j)] = val.R; // S = 0: initial state is real
        }
    const double n0 = st.norm();
    if (std::abs(n0 - 1.0) > 1e-6)
        throw ConfigError("oracle grid too coarse: initial-state norm error " +
                          std::to_string(std::abs(n0 - 1.0)));
    const double rescale = 1.0 / std::sqrt(n0);
    for (auto& z : st.psi) z *= rescale;
    return st;
}

/// Strang-split propagator exp(-iV dt/2) exp(-iT dt) exp(-iV dt/2) with the
/// kinetic factor applied in the spatial-frequency domain. Owns its FFT
/// plans and state buffer; second-order accurate in dt and unitary up to
/// rounding.
class SplitOperatorSolver {
public:
    SplitOperatorSolver(const PhysicalParams& phys, const CaseSelector& cs,
                        const OracleGrid& grid, double dt)
        : grid_(grid), dt_(dt), fft_(grid.nx, grid.ny) {
        if (!(dt > 0.0)) throw ConfigError("oracle dt must be > 0");
        phys.validate();
        grid.validate();
        const std::size_t n = grid.size();
        half_v_.resize(n);
        kinetic_.resize(n);
        const std::complex<double> mi(0.0, -1.0);
        for (int j = 0; j < grid.ny; ++j)
            for (int i = 0; i < grid.nx; ++i) {
                const double v = potential(phys, cs, grid.point(i, j));
                half_v_[grid.index(i, j)] = std::exp(mi * v * dt / (2.0 * phys.hbar));
                const double kx = detail::wavenumber(i, grid.nx, grid.domain.width());
                const double ky = detail::wavenumber(j, grid.ny, grid.domain.height());
                const double kin = phys.hbar * phys.hbar *
                                   (kx * kx / (2.0 * phys.m0) + ky * ky / (2.0 * phys.m));
                kinetic_[grid.index(i, j)] = std::exp(mi * kin * dt / phys.hbar);
            }
    }

    void set_state(const OracleState& st) {
        if (st.psi.size() != grid_.size())
            throw AlignmentError("oracle state does not match solver grid");
        std::copy(st.psi.begin(), st.psi.end(), fft_.data());
        time_ = st.time;
    }

    OracleState state() const {
        OracleState st;
        st.grid = grid_;
        st.time = time_;
        st.psi.assign(fft_.data(), fft_.data() + grid_.size());
        return st;
    }

    double time() const { return time_; }
    const OracleGrid& grid() const { return grid_; }
    double dt() const { return dt_; }

    void step() {
        auto* psi = fft_.data();
        const std::size_t n = grid_.size();
        for (std::size_t q = 0; q < n; ++q) psi[q] *= half_v_[q];
        fft_.forward();
        for (std::size_t q = 0; q < n; ++q) psi[q] *= kinetic_[q];
        fft_.backward();
        for (std::size_t q = 0; q < n; ++q) psi[q] *= half_v_[q];
        time_ += dt_;
    }

    void run_until(double t_target) {
        const double steps = (t_target - time_) / dt_;
        const long n = std::lround(steps);
        if (std::abs(steps - n) > 1e-9 || n < 0)
            throw ConfigError("oracle target time is not a multiple of dt");
        for (long s = 0; s < n; ++s) step();
    }

    double norm() const {
        double s = 0.0;
        const auto* psi = fft_.data();
        for (std::size_t q = 0; q < grid_.size(); ++q) s += std::norm(psi[q]);
        return s * grid_.dx() * grid_.dy();
    }

    /// Max density within `cells` sites of any boundary, and the global max.
    std::pair<double, double> boundary_density(int cells = 5) const {
        const auto* psi = fft_.data();
        double edge = 0.0, peak = 0.0;
        for (int j = 0; j < grid_.ny; ++j)
            for (int i = 0; i < grid_.nx; ++i) {
                const double r = std::norm(psi[grid_.index(i, j)]);
                peak = std::max(peak, r);
                if (i < cells || j < cells || i >= grid_.nx - cells || j >= grid_.ny - cells)
                    edge = std::max(edge, r);
            }
        return {edge, peak};
    }

private:
    OracleGrid grid_;
    double dt_;
    double time_ = 0.0;
    detail::Fft2d fft_;
    std::vector<std::complex<double>> half_v_;
    std::vector<std::complex<double>> kinetic_;
};

/// One Strang step as a pure function (convenience for small tests; repeated
/// propagation should use SplitOperatorSolver directly).
inline OracleState oracle_step(const OracleState& st, const PhysicalParams& phys,
                               const CaseSelector& cs, double dt) {
    SplitOperatorSolver solver(phys, cs, st.grid, dt);
    solver.set_state(st);
    solver.step();
    return solver.state();
}

/// Density and spectral velocity fields of an oracle state. The velocity is
/// v_i = (hbar/m_i) Im[(d psi/dx_i)/psi], masked where rho <= cutoff. The
/// action S is not reconstructed (phase unwrapping is avoided); comparisons
/// use rho and v only.
inline FieldSnapshot oracle_fields(const OracleState& st, const PhysicalParams& phys,
                                   double cutoff, bool coupled = false) {
    const OracleGrid& g = st.grid;
    FieldSnapshot snap;
    snap.mesh = g.mesh();
    snap.time = st.time;
    snap.source = "oracle";
    snap.coupled = coupled;
    snap.density_cutoff = cutoff;
    snap.allocate();

    detail::Fft2d fft(g.nx, g.ny);
    std::vector<std::complex<double>> spectrum(g.size());
    std::copy(st.psi.begin(), st.psi.end(), fft.data());
    fft.forward();
    std::copy(fft.data(), fft.data() + g.size(), spectrum.begin());

    std::vector<std::complex<double>> dpsi_dx(g.size()), dpsi_dy(g.size());
    const std::complex<double> im(0.0, 1.0);
    auto* work = fft.data();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const double kx = detail::wavenumber(i, g.nx, g.domain.width());
            work[g.index(i, j)] = im * kx * spectrum[g.index(i, j)];
        }
    fft.backward();
    std::copy(work, work + g.size(), dpsi_dx.begin());
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const double ky = detail::wavenumber(j, g.ny, g.domain.height());
            work[g.index(i, j)] = im * ky * spectrum[g.index(i, j)];
        }
    fft.backward();
    std::copy(work, work + g.size(), dpsi_dy.begin());

    for (std::size_t q = 0; q < g.size(); ++q) {
        const double r = std::norm(st.psi[q]);
        snap.rho[q] = r;
        if (r > cutoff) {
            snap.mask[q] = 1;
            const std::complex<double> ratio_x = dpsi_dx[q] / st.psi[q];
            const std::complex<double> ratio_y = dpsi_dy[q] / st.psi[q];
            snap.vx[q] = phys.hbar / phys.m0 * ratio_x.imag();
            snap.vy[q] = phys.hbar / phys.m * ratio_y.imag();
        }
    }
    return snap;
}

/// Exact 1-D free Gaussian: density and velocity profile of a packet that
/// starts at rest as exp(-beta x^2) (sigma0^2 = 1/(4 beta)).
struct FreeGaussian1d {
    double beta = 4.5;
    double mass = 2000.0;
    double hbar = 1.0;

    double sigma0() const { return 1.0 / (2.0 * std::sqrt(beta)); }
    double tau(double t) const { return hbar * t / (2.0 * mass * sigma0() * sigma0()); }
    double sigma(double t) const { return sigma0() * std::sqrt(1.0 + tau(t) * tau(t)); }

    double rho(double t, double x) const {
        const double s = sigma(t);
        return std::exp(-x * x / (2.0 * s * s)) / (std::sqrt(2.0 * std::numbers::pi) * s);
    }
    double velocity(double t, double x) const {
        const double tv = tau(t);
        const double rate = hbar / (2.0 * mass * sigma0() * sigma0());
        return x * rate * tv / (1.0 + tv * tv);
    }
};

/// Density/velocity error report between a trajectory snapshot and a
/// reference snapshot (bilinearly resampled onto the trajectory mesh).
struct SnapshotErrorReport {
    double l2_rho = 0.0;      // ||d rho||_2 / ||rho_ref||_2 over qtm sites
    double linf_rho = 0.0;    // max |d rho| / max rho_ref
    double v_rms_diff = 0.0;  // RMS velocity difference over jointly unmasked sites
    std::size_t n_rho = 0;
    std::size_t n_vel = 0;
};

inline SnapshotErrorReport compare_snapshots(const FieldSnapshot& qtm,
                                             const FieldSnapshot& ref,
                                             double time_tolerance = 0.25) {
    if (std::abs(qtm.time - ref.time) > time_tolerance)
        throw AlignmentError("compare_snapshots: time stamps " + std::to_string(qtm.time) +
                             " and " + std::to_string(ref.time) + " differ");
    SnapshotErrorReport rep;
    double diff2 = 0.0, ref2 = 0.0, max_diff = 0.0, max_ref = 0.0;
    double v2 = 0.0;
    for (int j = 0; j < qtm.mesh.ny; ++j)
        for (int i = 0; i < qtm.mesh.nx; ++i) {
            const std::size_t q = qtm.mesh.index(i, j);
            if (!qtm.mask[q]) continue;
            const Vec2 p = qtm.mesh.point(i, j);
            const double r_ref = ref.bilinear(ref.rho, p).value_or(0.0);
            const double d = qtm.rho[q] - r_ref;
            diff2 += d * d;
            ref2 += r_ref * r_ref;
            max_diff = std::max(max_diff, std::abs(d));
            max_ref = std::max(max_ref, r_ref);
            ++rep.n_rho;
            if (ref.bilinear_masked(p)) {
                const double dvx = qtm.vx[q] - ref.bilinear(ref.vx, p).value_or(0.0);
                const double dvy = qtm.vy[q] - ref.bilinear(ref.vy, p).value_or(0.0);
                v2 += dvx * dvx + dvy * dvy;
                ++rep.n_vel;
            }
        }
    if (rep.n_rho == 0) throw AlignmentError("compare_snapshots: no overlapping points");
    rep.l2_rho = ref2 > 0.0 ? std::sqrt(diff2 / ref2) : std::sqrt(diff2);
    rep.linf_rho = max_ref > 0.0 ? max_diff / max_ref : max_diff;
    rep.v_rms_diff = rep.n_vel > 0 ? std::sqrt(v2 / (2.0 * rep.n_vel)) : 0.0;
    return rep;
}

}  // namespace qhd
