#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qhd/errors.hpp"
#include "qhd/geometry.hpp"

namespace qhd {

/// Uniform rectangular lattice whose sites are integer multiples of the
/// spacing: point(i,j) = ((i0+i)*hx, (j0+j)*hy). Anchoring sites to integer
/// multiples keeps every regrid lattice aligned with the coordinate origin,
/// so (0,0) is an exact site and an x-symmetric region yields an exactly
/// x-symmetric site set.
struct UniformMesh {
    double hx = 0.0, hy = 0.0;
    long i0 = 0, j0 = 0; // lattice index of the first site
    int nx = 0, ny = 0;

    std::size_t size() const { return static_cast<std::size_t>(nx) * ny; }
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * nx + i; }
    Vec2 point(int i, int j) const {
        return {static_cast<double>(i0 + i) * hx, static_cast<double>(j0 + j) * hy};
    }
    Vec2 origin() const { return point(0, 0); }
    double cell_area() const { return hx * hy; }

    bool same_lattice(const UniformMesh& o) const {
        return hx == o.hx && hy == o.hy && i0 == o.i0 && j0 == o.j0 && nx == o.nx &&
               ny == o.ny;
    }

    void validate() const {
        if (!(hx > 0.0) || !(hy > 0.0)) throw ConfigError("mesh spacings must be > 0");
        if (nx <= 0 || ny <= 0) throw ConfigError("mesh extents must be positive");
    }
};

/// Hydrodynamic fields sampled on a uniform mesh at one time. mask marks
/// sites where the fields were evaluated; unmasked sites carry zeros.
struct FieldSnapshot {
    UniformMesh mesh;
    double time = 0.0;
    std::vector<double> rho, vx, vy, S;
    std::vector<std::uint8_t> mask;

    // Provenance and bookkeeping, carried through snapshot files.
    std::string source = "qtm"; // "qtm" or "oracle"
    bool coupled = false;
    double density_cutoff = 0.0;
    double dropped_mass = 0.0;  // estimated mass below the cutoff at regrid
    double renorm_factor = 1.0; // multiplicative factor applied at regrid

    void allocate() {
        const std::size_t n = mesh.size();
        rho.assign(n, 0.0);
        vx.assign(n, 0.0);
        vy.assign(n, 0.0);
        S.assign(n, 0.0);
        mask.assign(n, 0);
    }

    /// Midpoint-rule norm over masked sites.
    double discrete_norm() const {
        double sum = 0.0;
        for (std::size_t q = 0; q < rho.size(); ++q)
            if (mask[q]) sum += rho[q];
        return sum * mesh.cell_area();
    }

    std::size_t masked_count() const {
        std::size_t n = 0;
        for (auto m : mask) n += m;
        return n;
    }

    /// Positions of the masked sites, in site order.
    std::vector<Vec2> masked_points() const {
        std::vector<Vec2> pts;
        pts.reserve(masked_count());
        for (int j = 0; j < mesh.ny; ++j)
            for (int i = 0; i < mesh.nx; ++i)
                if (mask[mesh.index(i, j)]) pts.push_back(mesh.point(i, j));
        return pts;
    }

    /// Gathers a field at the masked sites, in site order.
    std::vector<double> gather_masked(const std::vector<double>& field) const {
        std::vector<double> out;
        out.reserve(masked_count());
        for (std::size_t q = 0; q < field.size(); ++q)
            if (mask[q]) out.push_back(field[q]);
        return out;
    }

    /// Bilinear sample of a field; nullopt outside the lattice. ignores mask.
    std::optional<double> bilinear(const std::vector<double>& field, const Vec2& p) const {
        const double fx = p.x / mesh.hx - static_cast<double>(mesh.i0);
        const double fy = p.y / mesh.hy - static_cast<double>(mesh.j0);
        const double fi = std::floor(fx);
        const double fj = std::floor(fy);
        int i = static_cast<int>(fi);
        int j = static_cast<int>(fj);
        // A query exactly on the last row/column still interpolates.
        if (i == mesh.nx - 1 && fx == fi) --i;
        if (j == mesh.ny - 1 && fy == fj) --j;
        if (i < 0 || j < 0 || i + 1 >= mesh.nx || j + 1 >= mesh.ny) return std::nullopt;
        const double sx = fx - i;
        const double sy = fy - j;
        const double v00 = field[mesh.index(i, j)];
        const double v10 = field[mesh.index(i + 1, j)];
        const double v01 = field[mesh.index(i, j + 1)];
        const double v11 = field[mesh.index(i + 1, j + 1)];
        return (1.0 - sx) * (1.0 - sy) * v00 + sx * (1.0 - sy) * v10 +
               (1.0 - sx) * sy * v01 + sx * sy * v11;
    }

    /// True if all four lattice corners around p are masked.
    bool bilinear_masked(const Vec2& p) const {
        const double fx = p.x / mesh.hx - static_cast<double>(mesh.i0);
        const double fy = p.y / mesh.hy - static_cast<double>(mesh.j0);
        const double fi = std::floor(fx);
        const double fj = std::floor(fy);
        int i = static_cast<int>(fi);
        int j = static_cast<int>(fj);
        if (i == mesh.nx - 1 && fx == fi) --i;
        if (j == mesh.ny - 1 && fy == fj) --j;
        if (i < 0 || j < 0 || i + 1 >= mesh.nx || j + 1 >= mesh.ny) return false;
        return mask[mesh.index(i, j)] && mask[mesh.index(i + 1, j)] &&
               mask[mesh.index(i, j + 1)] && mask[mesh.index(i + 1, j + 1)];
    }
};

}  // namespace qhd
