/*
* smrf - myocardial segmentation with shape model guided random forests.
*
* Copyright 2026 The smrf authors.
*
* Licensed under the Apache License, Version 2.0 (the "License");
* you may not use this file except in compliance with the License.
* You may obtain a copy of the License at
*
*     http://www.apache.org/licenses/LICENSE-2.0
*
* Unless required by applicable law or agreed to in writing, software
* distributed under the License is distributed on an "AS IS" BASIS,
* WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
* See the License for the specific language governing permissions and
* limitations under the License.
*/

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "smrf/image.hpp"

namespace smrf {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point2&) const = default;
};

/// Closed polygonal boundary; the last vertex connects back to the first.
struct Polygon {
    std::vector<Point2> vertices;
};

/// Similarity transform: rotate/scale about a fixed center, then translate.
struct PoseParams {
    double tx = 0.0;
    double ty = 0.0;
    double rotation = 0.0; // radians
    double scale = 1.0;
};

inline void validate_polygon(const Polygon& poly) {
    const auto& v = poly.vertices;
    if (v.size() < 3) throw std::invalid_argument("polygon needs at least 3 vertices");
    for (std::size_t i = 0; i < v.size(); ++i) {
        const Point2& a = v[i];
        const Point2& b = v[(i + 1) % v.size()];
        if (!std::isfinite(a.x) || !std::isfinite(a.y))
            throw std::invalid_argument("polygon vertex is not finite");
        if (std::hypot(b.x - a.x, b.y - a.y) <= 1e-9)
            throw std::invalid_argument("polygon has coincident consecutive vertices");
    }
}

namespace detail {

/// x where the edge through (ix,iy)-(jx,jy) crosses the horizontal line at y.
/// Callers must pass edges with (iy > y) != (jy > y); every crossing in this
/// file goes through this one expression so parities agree bit for bit.
inline double edge_crossing_x(double ix, double iy, double jx, double jy, double y) {
    return ix + ((y - iy) * (jx - ix)) / (jy - iy);
}

inline bool on_segment_exact(const Point2& p, const Point2& a, const Point2& b) {
    const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if (cross != 0.0) return false;
    return p.x >= std::min(a.x, b.x) && p.x <= std::max(a.x, b.x) &&
           p.y >= std::min(a.y, b.y) && p.y <= std::max(a.y, b.y);
}

inline bool parity_inside(const Point2& p, const std::vector<Point2>& v) {
    bool inside = false;
    for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
        if ((v[i].y > p.y) != (v[j].y > p.y)) {
            if (p.x < edge_crossing_x(v[i].x, v[i].y, v[j].x, v[j].y, p.y)) inside = !inside;
        }
    }
    return inside;
}

} // namespace detail

/// Even-odd membership test. Points exactly on the boundary count as inside,
/// so the d = 0 case of the signed distance has one well-defined side.
inline bool point_in_polygon(const Point2& p, const Polygon& poly) {
    validate_polygon(poly);
    const auto& v = poly.vertices;
    for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
        if (detail::on_segment_exact(p, v[j], v[i])) return true;
    }
    return detail::parity_inside(p, v);
}

/// Point-to-boundary distances against one polygon, with the per-segment
/// parameterization precomputed. Build once, query many times.
class PolygonDistance {
public:
    explicit PolygonDistance(Polygon poly) : poly_(std::move(poly)) {
        validate_polygon(poly_);
        const auto& v = poly_.vertices;
        const std::size_t n = v.size();
        ax_.resize(n);
        ay_.resize(n);
        dx_.resize(n);
        dy_.resize(n);
        inv_len2_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Point2& a = v[i];
            const Point2& b = v[(i + 1) % n];
            ax_[i] = a.x;
            ay_[i] = a.y;
            dx_[i] = b.x - a.x;
            dy_[i] = b.y - a.y;
            inv_len2_[i] = 1.0 / (dx_[i] * dx_[i] + dy_[i] * dy_[i]);
        }
    }

    const Polygon& polygon() const { return poly_; }

    /// Unsigned shortest distance to the boundary.
    double unsigned_at(Point2 p) const {
        const std::size_t n = ax_.size();
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            const double tx = p.x - ax_[i];
            const double ty = p.y - ay_[i];
            double t = (tx * dx_[i] + ty * dy_[i]) * inv_len2_[i];
            t = std::max(0.0, std::min(1.0, t));
            const double ex = tx - t * dx_[i];
            const double ey = ty - t * dy_[i];
            const double d2 = ex * ex + ey * ey;
            best = std::min(best, d2);
        }
        return std::sqrt(best);
    }

    /// Signed shortest distance: positive inside, negative outside, 0 on the
    /// boundary.
    double signed_at(Point2 p) const {
        const double d = unsigned_at(p);
        if (d == 0.0) return 0.0;
        if (d < 1e-7) {
            const auto& v = poly_.vertices;
            for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
                if (detail::on_segment_exact(p, v[j], v[i])) return 0.0;
            }
        }
        return detail::parity_inside(p, poly_.vertices) ? d : -d;
    }

private:
    Polygon poly_;
    std::vector<double> ax_, ay_, dx_, dy_, inv_len2_;
};

/// Signed shortest distance from p to the polygon boundary (one-shot form).
inline double signed_distance(const Point2& p, const Polygon& poly) {
    return PolygonDistance(poly).signed_at(p);
}

namespace detail {

/// Calls fn(y_row, x_begin, x_end) for every maximal run of pixels in row
/// y_row whose centers are inside the polygon. Membership is identical to
/// point_in_polygon at every pixel center, including centers that lie
/// exactly on the boundary.
template <typename Fn>
void for_each_inside_run(const Polygon& poly, int width, int height, Fn&& fn) {
    const auto& v = poly.vertices;
    const std::size_t n = v.size();
    std::vector<double> crossings;
    std::vector<std::uint8_t> row(static_cast<std::size_t>(width));
    for (int y = 0; y < height; ++y) {
        const double cy = y + 0.5;
        crossings.clear();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            if ((v[i].y > cy) != (v[j].y > cy)) {
                crossings.push_back(edge_crossing_x(v[i].x, v[i].y, v[j].x, v[j].y, cy));
            }
        }
        std::sort(crossings.begin(), crossings.end());
        // Parity walk: pixel center is inside iff an odd number of crossings
        // lie strictly to its right.
        std::size_t idx = 0;
        const std::size_t m = crossings.size();
        for (int x = 0; x < width; ++x) {
            const double cx = x + 0.5;
            while (idx < m && !(cx < crossings[idx])) ++idx;
            row[static_cast<std::size_t>(x)] = static_cast<std::uint8_t>((m - idx) & 1u);
        }
        // Centers exactly on the boundary count as inside; patch the few
        // candidate pixels near each edge at this row with the exact test.
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            const Point2& a = v[j];
            const Point2& b = v[i];
            if (cy < std::min(a.y, b.y) || cy > std::max(a.y, b.y)) continue;
            if (a.y == b.y) {
                // Horizontal edge lying exactly on this row of centers.
                if (a.y != cy) continue;
                int x0 = static_cast<int>(std::floor(std::min(a.x, b.x) - 0.5));
                int x1 = static_cast<int>(std::ceil(std::max(a.x, b.x)));
                x0 = std::max(x0, 0);
                x1 = std::min(x1, width - 1);
                for (int x = x0; x <= x1; ++x) {
                    if (on_segment_exact({x + 0.5, cy}, a, b)) row[static_cast<std::size_t>(x)] = 1;
                }
            } else {
                const double xi = edge_crossing_x(b.x, b.y, a.x, a.y, cy);
                const int base = static_cast<int>(std::floor(xi - 0.5));
                for (int dx = -1; dx <= 1; ++dx) {
                    const int x = base + dx;
                    if (x < 0 || x >= width) continue;
                    if (on_segment_exact({x + 0.5, cy}, a, b)) row[static_cast<std::size_t>(x)] = 1;
                }
            }
        }
        int run_start = -1;
        for (int x = 0; x <= width; ++x) {
            const bool inside = x < width && row[static_cast<std::size_t>(x)] != 0;
            if (inside && run_start < 0) run_start = x;
            if (!inside && run_start >= 0) {
                fn(y, run_start, x);
                run_start = -1;
            }
        }
    }
}

} // namespace detail

/// Binary mask of the polygon interior: mask(x, y) = 1 iff the pixel center
/// (x + 0.5, y + 0.5) is inside per point_in_polygon.
inline BinaryMask rasterize(const Polygon& poly, int width, int height) {
    validate_polygon(poly);
    BinaryMask mask(width, height);
    detail::for_each_inside_run(poly, width, height, [&](int y, int x0, int x1) {
        for (int x = x0; x < x1; ++x) mask.at(x, y) = 1;
    });
    return mask;
}

/// Applies a similarity transform about `center`:
/// p' = scale * R(rotation) * (p - center) + center + (tx, ty).
inline std::vector<Point2> apply_pose(std::span<const Point2> points, const PoseParams& pose,
                                      const Point2& center) {
    if (!(pose.scale > 0.0)) throw std::invalid_argument("pose scale must be positive");
    const double c = std::cos(pose.rotation);
    const double s = std::sin(pose.rotation);
    std::vector<Point2> out;
    out.reserve(points.size());
    for (const Point2& p : points) {
        const double rx = p.x - center.x;
        const double ry = p.y - center.y;
        out.push_back({pose.scale * (c * rx - s * ry) + center.x + pose.tx,
                       pose.scale * (s * rx + c * ry) + center.y + pose.ty});
    }
    return out;
}

inline Point2 centroid(std::span<const Point2> points) {
    Point2 c;
    for (const Point2& p : points) {
        c.x += p.x;
        c.y += p.y;
    }
    const double n = static_cast<double>(points.size());
    return {c.x / n, c.y / n};
}

} // namespace smrf
