#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qhd/errors.hpp"
#include "qhd/geometry.hpp"
#include "qhd/parallel.hpp"
#include "qhd/point_cloud.hpp"

namespace qhd {

/// Weighted moving least squares settings. The basis is the fixed 10-term
/// cubic monomial set {1, xi, eta, xi^2, eta^2, xi*eta, xi^3, eta^3,
/// xi^2*eta, xi*eta^2} in displacements (xi, eta) from the target point.
struct MwlsConfig {
    int n_b = 35;              // nearest neighbors per stencil
    double weight_scale = 0.8; // Gaussian bandwidth relative to farthest neighbor

    void validate() const {
        if (n_b < 10) throw ConfigError("mwls.n_b must be >= 10 (basis size)");
        if (!(weight_scale > 0.0)) throw ConfigError("mwls.weight_scale must be > 0");
    }
};

inline constexpr int kMwlsBasisSize = 10;
// Total degree of each basis monomial, used to unscale fitted coefficients.
inline constexpr std::array<int, kMwlsBasisSize> kMwlsBasisDegree = {0, 1, 1, 2, 2, 2,
                                                                     3, 3, 3, 3};
// Conditioning above this switches the solve to a rank-revealing QR.
inline constexpr double kMwlsConditionLimit = 1e10;

/// One local polynomial fit. Coefficients are stored for physical
/// displacement coordinates, so value/derivative extraction is closed form.
struct LocalFit {
    std::array<double, kMwlsBasisSize> coeff{};
    Vec2 center{};
    double condition_estimate = 0.0;

    double value() const { return coeff[0]; }
    double dx() const { return coeff[1]; }
    double dy() const { return coeff[2]; }
    double dxx() const { return 2.0 * coeff[3]; }
    double dyy() const { return 2.0 * coeff[4]; }
    double dxy() const { return coeff[5]; }
};

/// Value and derivatives of a fitted field at one point.
struct DerivativeRecord {
    double f = 0.0;
    double fx = 0.0, fy = 0.0;
    double fxx = 0.0, fyy = 0.0, fxy = 0.0;

    static DerivativeRecord from_fit(const LocalFit& fit) {
        return {fit.value(), fit.dx(), fit.dy(), fit.dxx(), fit.dyy(), fit.dxy()};
    }
};

namespace detail {

inline void basis_row(double u, double w, double* row) {
    row[0] = 1.0;
    row[1] = u;
    row[2] = w;
    row[3] = u * u;
    row[4] = w * w;
    row[5] = u * w;
    row[6] = u * u * u;
    row[7] = w * w * w;
    row[8] = u * u * w;
    row[9] = u * w * w;
}

}  // namespace detail

/// A factorized fit operator for one target point. Building it does the
/// neighbor query, weighting, and normal-equation factorization once; fit()
/// then costs one small matrix-vector product per field, so several fields
/// can share the geometry work.
class FitStencil {
public:
    /// Stencil over explicit displacements (spec operation fit_local).
    /// displacements[i] = neighbor_i - target. point_index is only used to
    /// label degenerate-geometry errors.
    FitStencil(std::span<const Vec2> displacements, const MwlsConfig& cfg, Vec2 target = {},
               long point_index = -1)
        : center_(target) {
        build(displacements, cfg, point_index);
    }

    /// Stencil at a target drawing n_b neighbors from the cloud.
    FitStencil(const PointCloud& cloud, const Vec2& target, const MwlsConfig& cfg,
               long point_index = -1)
        : center_(target) {
        cloud.k_nearest(target, cfg.n_b, neighbors_);
        indices_.resize(neighbors_.size());
        std::vector<Vec2> disp(neighbors_.size());
        for (std::size_t i = 0; i < neighbors_.size(); ++i) {
            indices_[i] = neighbors_[i].index;
            disp[i] = cloud.position(neighbors_[i].index) - target;
        }
        build(disp, cfg, point_index);
    }

    /// Fits the values at the stencil's own neighbor displacements
    /// (values[i] pairs with displacement i).
    LocalFit fit_values(std::span<const double> values) const {
        if (values.size() != n_points())
            throw ConfigError("FitStencil: value count does not match stencil size");
        return solve(values.data(), nullptr);
    }

    /// Fits a full per-cloud-point field, gathering by neighbor index.
    LocalFit fit_field(std::span<const double> field) const {
        return solve(field.data(), indices_.data());
    }

    std::size_t n_points() const { return static_cast<std::size_t>(scaled_.cols()); }
    const std::vector<int>& neighbor_indices() const { return indices_; }
    const std::vector<PointCloud::Neighbor>& neighbors() const { return neighbors_; }
    double condition_estimate() const { return condition_; }
    const Vec2& center() const { return center_; }

    /// True if the origin (the target) lies outside the convex hull of the
    /// stencil displacements, i.e. the fit extrapolates.
    bool extrapolating() const {
        std::vector<Vec2> pts(n_points());
        for (std::size_t i = 0; i < pts.size(); ++i)
            pts[i] = {scaled_(0, i) * scale_, scaled_(1, i) * scale_};
        return !origin_in_convex_hull(pts);
    }

    static bool origin_in_convex_hull(std::vector<Vec2>& pts);

private:
    void build(std::span<const Vec2> displacements, const MwlsConfig& cfg, long point_index);
    LocalFit solve(const double* values, const int* gather) const;

    Vec2 center_{};
    double scale_ = 1.0;     // stencil radius; displacements are fit in units of it
    double condition_ = 0.0; // normal-matrix condition estimate
    std::vector<PointCloud::Neighbor> neighbors_;
    std::vector<int> indices_;
    Eigen::Matrix2Xd scaled_;                              // scaled displacements (for hull test)
    Eigen::Matrix<double, kMwlsBasisSize, Eigen::Dynamic> gain_; // A^-1 B^T W
    std::shared_ptr<Eigen::ColPivHouseholderQR<Eigen::MatrixXd>> qr_; // fallback
    Eigen::VectorXd sqrt_w_; // only kept for the QR path
};

inline void FitStencil::build(std::span<const Vec2> displacements, const MwlsConfig& cfg,
                              long point_index) {
    cfg.validate();
    const auto n = displacements.size();
    if (n < kMwlsBasisSize)
        throw ConfigError("MWLS fit needs at least 10 neighbors, got " + std::to_string(n));

    double max_d = 0.0;
    for (const Vec2& d : displacements) max_d = std::max(max_d, norm(d));
    if (!(max_d > 0.0))
        throw DegenerateGeometryError("MWLS stencil has zero radius", point_index);
    scale_ = max_d;

    scaled_.resize(2, static_cast<Eigen::Index>(n));
    Eigen::MatrixXd basis(static_cast<Eigen::Index>(n), kMwlsBasisSize);
    Eigen::VectorXd weight(static_cast<Eigen::Index>(n));
    const double inv_ws2 = 1.0 / (cfg.weight_scale * cfg.weight_scale);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = displacements[i].x / scale_;
        const double w = displacements[i].y / scale_;
        scaled_(0, static_cast<Eigen::Index>(i)) = u;
        scaled_(1, static_cast<Eigen::Index>(i)) = w;
        double row[kMwlsBasisSize];
        detail::basis_row(u, w, row);
        for (int k = 0; k < kMwlsBasisSize; ++k) basis(static_cast<Eigen::Index>(i), k) = row[k];
        weight(static_cast<Eigen::Index>(i)) = std::exp(-(u * u + w * w) * inv_ws2);
    }

    Eigen::Matrix<double, kMwlsBasisSize, Eigen::Dynamic> bt_w =
        basis.transpose() * weight.asDiagonal();
    Eigen::Matrix<double, kMwlsBasisSize, kMwlsBasisSize> normal = bt_w * basis;

    Eigen::LDLT<Eigen::Matrix<double, kMwlsBasisSize, kMwlsBasisSize>> ldlt(normal);
    const auto d = ldlt.vectorD();
    const double d_max = d.maxCoeff();
    const double d_min = d.minCoeff();
    condition_ = (d_min > 0.0) ? d_max / d_min : std::numeric_limits<double>::infinity();

    if (ldlt.info() == Eigen::Success && d_min > 0.0 && condition_ < kMwlsConditionLimit) {
        gain_ = ldlt.solve(bt_w);
        return;
    }

    // Compressed or nearly collinear stencil: rank-revealing QR on the
    // weighted design matrix.
    sqrt_w_ = weight.array().sqrt();
    Eigen::MatrixXd design = sqrt_w_.asDiagonal() * basis;
    qr_ = std::make_shared<Eigen::ColPivHouseholderQR<Eigen::MatrixXd>>(design);
    qr_->setThreshold(1e-12);
    if (qr_->rank() < kMwlsBasisSize)
        throw DegenerateGeometryError(
            "MWLS stencil is rank deficient (collinear or duplicate geometry) at point " +
                std::to_string(point_index),
            point_index);
}

inline LocalFit FitStencil::solve(const double* values, const int* gather) const {
    LocalFit fit;
    fit.center = center_;
    fit.condition_estimate = condition_;
    const auto n = n_points();

    std::array<double, kMwlsBasisSize> acc{};
    if (qr_) {
        Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const double v = gather ? values[gather[i]] : values[i];
            rhs(static_cast<Eigen::Index>(i)) = sqrt_w_(static_cast<Eigen::Index>(i)) * v;
        }
        Eigen::VectorXd a = qr_->solve(rhs);
        for (int k = 0; k < kMwlsBasisSize; ++k) acc[k] = a(k);
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const double v = gather ? values[gather[i]] : values[i];
            const auto col = static_cast<Eigen::Index>(i);
            for (int k = 0; k < kMwlsBasisSize; ++k) acc[k] += gain_(k, col) * v;
        }
    }

    double pow_scale = 1.0;
    std::array<double, 4> inv_scale_pow{};
    for (int deg = 0; deg <= 3; ++deg) {
        inv_scale_pow[deg] = 1.0 / pow_scale;
        pow_scale *= scale_;
    }
    for (int k = 0; k < kMwlsBasisSize; ++k)
        fit.coeff[k] = acc[k] * inv_scale_pow[kMwlsBasisDegree[k]];
    return fit;
}

inline bool FitStencil::origin_in_convex_hull(std::vector<Vec2>& pts) {
    // Andrew's monotone chain; then check the origin is on or inside the hull.
    std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
        return a.x != b.x ? a.x < b.x : a.y < b.y;
    });
    auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
        return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    };
    std::vector<Vec2> hull(2 * pts.size());
    std::size_t h = 0;
    for (const Vec2& p : pts) {
        while (h >= 2 && cross(hull[h - 2], hull[h - 1], p) <= 0.0) --h;
        hull[h++] = p;
    }
    const std::size_t lower = h + 1;
    for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
        while (h >= lower && cross(hull[h - 2], hull[h - 1], *it) <= 0.0) --h;
        hull[h++] = *it;
    }
    hull.resize(h > 0 ? h - 1 : 0);
    if (hull.size() < 3) return false;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Vec2& a = hull[i];
        const Vec2& b = hull[(i + 1) % hull.size()];
        if (cross(a, b, Vec2{0.0, 0.0}) < 0.0) return false;
    }
    return true;
}

/// Spec operation fit_local: one weighted fit over explicit displacements.
inline LocalFit fit_local(std::span<const double> values, std::span<const Vec2> displacements,
                          const MwlsConfig& cfg) {
    if (values.size() != displacements.size())
        throw ConfigError("fit_local: values and displacements differ in length");
    FitStencil stencil(displacements, cfg);
    return stencil.fit_values(values);
}

/// Spec operation find_neighbors: indices of the n_b nearest cloud points.
inline std::vector<int> find_neighbors(const PointCloud& cloud, const Vec2& target, int n_b) {
    std::vector<PointCloud::Neighbor> nn;
    cloud.k_nearest(target, n_b, nn);
    std::vector<int> idx(nn.size());
    for (std::size_t i = 0; i < nn.size(); ++i) idx[i] = nn[i].index;
    return idx;
}

/// Value and derivatives of a scalar field at every cloud point. Output
/// order matches the cloud order and is independent of thread count.
inline std::vector<DerivativeRecord> differentiate_field(const PointCloud& cloud,
                                                         std::span<const double> values,
                                                         const MwlsConfig& cfg,
                                                         int threads = 1) {
    if (values.size() != cloud.size())
        throw ConfigError("differentiate_field: field length does not match cloud size");
    std::vector<DerivativeRecord> out(cloud.size());
    parallel_for(cloud.size(), threads, [&](std::size_t i) {
        FitStencil stencil(cloud, cloud.position(i), cfg, static_cast<long>(i));
        out[i] = DerivativeRecord::from_fit(stencil.fit_field(values));
    });
    return out;
}

struct InterpolatedValue {
    double value = 0.0;
    bool extrapolated = false; // target outside the convex hull of its stencil
};

/// Evaluates the local fit's constant term at each target.
inline std::vector<InterpolatedValue> interpolate_to(const PointCloud& cloud,
                                                     std::span<const double> values,
                                                     const MwlsConfig& cfg,
                                                     std::span<const Vec2> targets,
                                                     int threads = 1) {
    if (values.size() != cloud.size())
        throw ConfigError("interpolate_to: field length does not match cloud size");
    std::vector<InterpolatedValue> out(targets.size());
    parallel_for(targets.size(), threads, [&](std::size_t i) {
        FitStencil stencil(cloud, targets[i], cfg, static_cast<long>(i));
        out[i].value = stencil.fit_field(values).value();
        out[i].extrapolated = stencil.extrapolating();
    });
    return out;
}

}  // namespace qhd
