#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "qhd/errors.hpp"
#include "qhd/geometry.hpp"

namespace qhd {

/// Immutable 2-D point set with an exact k-nearest-neighbor index (kd-tree).
/// Queries return exactly k points sorted by distance, ties broken by
/// ascending point index, so stencil membership is fully deterministic.
/// Construction rejects clouds with pairwise separation below min_separation.
class PointCloud {
public:
    struct Neighbor {
        int index;
        double dist;
    };

    explicit PointCloud(std::vector<Vec2> points, double min_separation = 1e-10)
        : points_(std::move(points)) {
        if (points_.empty()) throw ConfigError("PointCloud: empty point set");
        for (std::size_t i = 0; i < points_.size(); ++i) {
            if (!std::isfinite(points_[i].x) || !std::isfinite(points_[i].y))
                throw ConfigError("PointCloud: non-finite position at index " +
                                  std::to_string(i));
        }
        order_.resize(points_.size());
        for (std::size_t i = 0; i < points_.size(); ++i) order_[i] = static_cast<int>(i);
        nodes_.reserve(2 * points_.size() / kLeafSize + 2);
        root_ = build(0, static_cast<int>(points_.size()));
        if (points_.size() > 1) check_separation(min_separation);
    }

    std::size_t size() const { return points_.size(); }
    const Vec2& position(std::size_t i) const { return points_[i]; }
    const std::vector<Vec2>& positions() const { return points_; }

    Rect bounding_box() const {
        Rect b{points_[0].x, points_[0].x, points_[0].y, points_[0].y};
        for (const Vec2& p : points_) {
            b.x_min = std::min(b.x_min, p.x);
            b.x_max = std::max(b.x_max, p.x);
            b.y_min = std::min(b.y_min, p.y);
            b.y_max = std::max(b.y_max, p.y);
        }
        return b;
    }

    /// The k nearest points to target, ascending by (distance, index).
    void k_nearest(const Vec2& target, int k, std::vector<Neighbor>& out) const {
        if (k <= 0) throw ConfigError("k_nearest: k must be positive");
        if (static_cast<std::size_t>(k) > points_.size())
            throw ConfigError("k_nearest: cloud has " + std::to_string(points_.size()) +
                              " points, query asks for " + std::to_string(k));
        Search s{target, k, {}};
        s.heap.reserve(static_cast<std::size_t>(k) + 1);
        search(root_, s);
        out.resize(s.heap.size());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = {s.heap[i].index, std::sqrt(s.heap[i].d2)};
        std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
            return a.dist != b.dist ? a.dist < b.dist : a.index < b.index;
        });
    }

    std::vector<Neighbor> k_nearest(const Vec2& target, int k) const {
        std::vector<Neighbor> out;
        k_nearest(target, k, out);
        return out;
    }

    int nearest(const Vec2& target) const {
        std::vector<Neighbor> out;
        k_nearest(target, 1, out);
        return out[0].index;
    }

private:
    static constexpr int kLeafSize = 12;

    struct Node {
        int axis = -1;      // -1 marks a leaf
        double split = 0.0; // splitting coordinate
        int left = -1, right = -1;
        int begin = 0, end = 0; // order_ range for leaves
    };

    struct Candidate {
        double d2;
        int index;
        // max-heap ordering: worst = largest (d2, index)
        bool operator<(const Candidate& o) const {
            return d2 != o.d2 ? d2 < o.d2 : index < o.index;
        }
    };

    struct Search {
        Vec2 target;
        int k;
        std::vector<Candidate> heap;
    };

    double coord(int idx, int axis) const {
        return axis == 0 ? points_[idx].x : points_[idx].y;
    }

    int build(int lo, int hi) {
        Node node;
        if (hi - lo <= kLeafSize) {
            node.begin = lo;
            node.end = hi;
            nodes_.push_back(node);
            return static_cast<int>(nodes_.size()) - 1;
        }
        double x_lo = points_[order_[lo]].x, x_hi = x_lo;
        double y_lo = points_[order_[lo]].y, y_hi = y_lo;
        for (int i = lo; i < hi; ++i) {
            const Vec2& p = points_[order_[i]];
            x_lo = std::min(x_lo, p.x);
            x_hi = std::max(x_hi, p.x);
            y_lo = std::min(y_lo, p.y);
            y_hi = std::max(y_hi, p.y);
        }
        node.axis = (x_hi - x_lo) >= (y_hi - y_lo) ? 0 : 1;
        const int mid = lo + (hi - lo) / 2;
        std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                         [&](int a, int b) {
                             const double ca = coord(a, node.axis), cb = coord(b, node.axis);
                             return ca != cb ? ca < cb : a < b;
                         });
        node.split = coord(order_[mid], node.axis);
        const int self = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        const int left = build(lo, mid);
        const int right = build(mid, hi);
        nodes_[self].left = left;
        nodes_[self].right = right;
        return self;
    }

    void consider(int idx, Search& s) const {
        const Vec2 d = points_[idx] - s.target;
        Candidate c{norm2(d), idx};
        if (static_cast<int>(s.heap.size()) < s.k) {
            s.heap.push_back(c);
            std::push_heap(s.heap.begin(), s.heap.end());
        } else if (c < s.heap.front()) {
            std::pop_heap(s.heap.begin(), s.heap.end());
            s.heap.back() = c;
            std::push_heap(s.heap.begin(), s.heap.end());
        }
    }

    void search(int node_idx, Search& s) const {
        const Node& node = nodes_[node_idx];
        if (node.axis < 0) {
            for (int i = node.begin; i < node.end; ++i) consider(order_[i], s);
            return;
        }
        const double t = node.axis == 0 ? s.target.x : s.target.y;
        const double diff = t - node.split;
        const int near_child = diff < 0.0 ? node.left : node.right;
        const int far_child = diff < 0.0 ? node.right : node.left;
        search(near_child, s);
        // Descend the far side on exact distance ties so the index
        // tie-break sees every candidate.
        if (static_cast<int>(s.heap.size()) < s.k || diff * diff <= s.heap.front().d2)
            search(far_child, s);
    }

    void check_separation(double min_separation) const {
        std::vector<Neighbor> nn;
        for (std::size_t i = 0; i < points_.size(); ++i) {
            k_nearest(points_[i], 2, nn);
            if (nn[1].dist < min_separation)
                throw ConfigError("PointCloud: points " + std::to_string(nn[0].index) +
                                  " and " + std::to_string(nn[1].index) +
                                  " closer than the minimum separation");
        }
    }

    std::vector<Vec2> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace qhd
