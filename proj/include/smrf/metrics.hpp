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
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "smrf/error.hpp"
#include "smrf/geometry.hpp"
#include "smrf/image.hpp"

namespace smrf {

struct MaskMetrics {
    double accuracy = 0.0;
    double dice = 0.0;
    double jaccard = 0.0;
};

struct BoundaryMetrics {
    double mad_px = 0.0;
    double hd_px = 0.0;
};

struct MetricsReport {
    double accuracy = 0.0;
    double dice = 0.0;
    double jaccard = 0.0;
    double mad_px = 0.0;
    double hd_px = 0.0;
    std::optional<double> mad_mm;
    std::optional<double> hd_mm;
};

/// Pixelwise overlap metrics. Two empty masks count as a perfect match;
/// empty against nonempty scores zero overlap.
inline MaskMetrics mask_metrics(const BinaryMask& pred, const BinaryMask& truth) {
    if (!pred.same_shape(truth)) throw std::invalid_argument("mask dimensions differ");
    std::int64_t inter = 0, pred_on = 0, truth_on = 0, match = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0;
        const bool t = truth.data[i] != 0;
        if (p) ++pred_on;
        if (t) ++truth_on;
        if (p && t) ++inter;
        if (p == t) ++match;
    }
    MaskMetrics m;
    m.accuracy = static_cast<double>(match) / static_cast<double>(pred.data.size());
    if (pred_on + truth_on == 0) {
        m.dice = 1.0;
        m.jaccard = 1.0;
    } else {
        m.dice = 2.0 * static_cast<double>(inter) / static_cast<double>(pred_on + truth_on);
        const std::int64_t uni = pred_on + truth_on - inter;
        m.jaccard = static_cast<double>(inter) / static_cast<double>(uni);
    }
    return m;
}

/// Uniform arc-length samples along the closed boundary, starting at vertex 0.
/// Sample count is max(min_points, ceil(perimeter)) so spacing stays near one
/// pixel on large shapes.
inline std::vector<Point2> resample_closed(const Polygon& poly, int min_points = 64) {
    validate_polygon(poly);
    if (min_points < 1) throw std::invalid_argument("min_points must be positive");
    const auto& v = poly.vertices;
    const std::size_t n = v.size();
    std::vector<double> cum(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const Point2& a = v[i];
        const Point2& b = v[(i + 1) % n];
        cum[i + 1] = cum[i] + std::hypot(b.x - a.x, b.y - a.y);
    }
    const double total = cum[n];
    const int count = std::max(min_points, static_cast<int>(std::ceil(total)));
    std::vector<Point2> out;
    out.reserve(static_cast<std::size_t>(count));
    std::size_t seg = 0;
    for (int i = 0; i < count; ++i) {
        const double s = total * static_cast<double>(i) / static_cast<double>(count);
        while (seg + 1 < n && cum[seg + 1] <= s) ++seg;
        const double len = cum[seg + 1] - cum[seg];
        const double t = len > 0.0 ? (s - cum[seg]) / len : 0.0;
        const Point2& a = v[seg];
        const Point2& b = v[(seg + 1) % n];
        out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
    }
    return out;
}

namespace detail {

inline double min_distance_to(const Point2& p, std::span<const Point2> set) {
    double best = std::numeric_limits<double>::infinity();
    for (const Point2& q : set) {
        const double d = std::hypot(p.x - q.x, p.y - q.y);
        if (d < best) best = d;
    }
    return best;
}

} // namespace detail

/// Symmetric mean absolute distance and Hausdorff distance between two point
/// sets (each point matched to its nearest neighbour in the other set).
inline BoundaryMetrics boundary_distance(std::span<const Point2> a, std::span<const Point2> b) {
    if (a.empty() || b.empty()) throw DataError("boundary distance undefined for an empty boundary");
    double sum_a = 0.0, sum_b = 0.0, max_d = 0.0;
    for (const Point2& p : a) {
        const double d = detail::min_distance_to(p, b);
        sum_a += d;
        max_d = std::max(max_d, d);
    }
    for (const Point2& q : b) {
        const double d = detail::min_distance_to(q, a);
        sum_b += d;
        max_d = std::max(max_d, d);
    }
    BoundaryMetrics m;
    m.mad_px = 0.5 * (sum_a / static_cast<double>(a.size()) + sum_b / static_cast<double>(b.size()));
    m.hd_px = max_d;
    return m;
}

inline BoundaryMetrics boundary_distance(const Polygon& a, const Polygon& b, int min_points = 64) {
    const std::vector<Point2> pa = resample_closed(a, min_points);
    const std::vector<Point2> pb = resample_closed(b, min_points);
    return boundary_distance(std::span<const Point2>(pa), std::span<const Point2>(pb));
}

inline BoundaryMetrics boundary_distance(const Polygon& a, std::span<const Point2> b,
                                         int min_points = 64) {
    const std::vector<Point2> pa = resample_closed(a, min_points);
    return boundary_distance(std::span<const Point2>(pa), b);
}

inline MetricsReport make_report(const MaskMetrics& masks, const BoundaryMetrics& bounds,
                                 std::optional<double> pixel_spacing_mm = std::nullopt) {
    MetricsReport r;
    r.accuracy = masks.accuracy;
    r.dice = masks.dice;
    r.jaccard = masks.jaccard;
    r.mad_px = bounds.mad_px;
    r.hd_px = bounds.hd_px;
    if (pixel_spacing_mm) {
        r.mad_mm = bounds.mad_px * *pixel_spacing_mm;
        r.hd_mm = bounds.hd_px * *pixel_spacing_mm;
    }
    return r;
}

struct CannyConfig {
    double sigma = 1.4;
    int kernel = 5;          // odd box width of the Gaussian
    double low_fraction = 0.1;  // of the max gradient magnitude
    double high_fraction = 0.3;
};

enum class BoundaryMethod : std::uint8_t { canny, threshold_contour };

namespace detail {

inline ProbabilityMap gaussian_smooth(const ProbabilityMap& map, double sigma, int kernel) {
    if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("Gaussian kernel must be odd");
    if (!(sigma > 0.0)) throw std::invalid_argument("Gaussian sigma must be positive");
    const int r = kernel / 2;
    std::vector<double> w(static_cast<std::size_t>(kernel) * kernel);
    double total = 0.0;
    for (int j = -r; j <= r; ++j)
        for (int i = -r; i <= r; ++i) {
            const double v = std::exp(-(i * i + j * j) / (2.0 * sigma * sigma));
            w[static_cast<std::size_t>(j + r) * kernel + (i + r)] = v;
            total += v;
        }
    for (double& v : w) v /= total;

    ProbabilityMap out(map.width, map.height);
    auto clamped = [&](int x, int y) {
        x = std::min(map.width - 1, std::max(0, x));
        y = std::min(map.height - 1, std::max(0, y));
        return map.at(x, y);
    };
    for (int y = 0; y < map.height; ++y)
        for (int x = 0; x < map.width; ++x) {
            double acc = 0.0;
            for (int j = -r; j <= r; ++j)
                for (int i = -r; i <= r; ++i)
                    acc += w[static_cast<std::size_t>(j + r) * kernel + (i + r)] * clamped(x + i, y + j);
            out.at(x, y) = acc;
        }
    return out;
}

/// Canny edge pixels of a probability map; coordinates are pixel centers.
inline std::vector<Point2> canny_edges(const ProbabilityMap& map, const CannyConfig& config) {
    const ProbabilityMap sm = gaussian_smooth(map, config.sigma, config.kernel);
    const int w = map.width, h = map.height;
    ProbabilityMap gx(w, h), gy(w, h), mag(w, h);
    auto at = [&](int x, int y) {
        x = std::min(w - 1, std::max(0, x));
        y = std::min(h - 1, std::max(0, y));
        return sm.at(x, y);
    };
    double max_mag = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double sx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)) -
                              (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            const double sy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)) -
                              (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            gx.at(x, y) = sx;
            gy.at(x, y) = sy;
            const double m = std::hypot(sx, sy);
            mag.at(x, y) = m;
            max_mag = std::max(max_mag, m);
        }
    if (max_mag <= 0.0) return {};

    auto mag_at = [&](int x, int y) {
        if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
        return mag.at(x, y);
    };
    // Non-maximum suppression across the quantized gradient direction.
    BinaryMask keep(w, h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double m = mag.at(x, y);
            if (m <= 0.0) continue;
            double ang = std::atan2(gy.at(x, y), gx.at(x, y));
            if (ang < 0.0) ang += std::numbers::pi;
            int dx1, dy1;
            if (ang < std::numbers::pi / 8.0 || ang >= 7.0 * std::numbers::pi / 8.0) {
                dx1 = 1; dy1 = 0;
            } else if (ang < 3.0 * std::numbers::pi / 8.0) {
                dx1 = 1; dy1 = 1;
            } else if (ang < 5.0 * std::numbers::pi / 8.0) {
                dx1 = 0; dy1 = 1;
            } else {
                dx1 = 1; dy1 = -1;
            }
            if (m >= mag_at(x + dx1, y + dy1) && m >= mag_at(x - dx1, y - dy1)) keep.at(x, y) = 1;
        }

    const double low = config.low_fraction * max_mag;
    const double high = config.high_fraction * max_mag;
    // Hysteresis: grow strong edges through connected weak responses.
    BinaryMask state(w, h, 0); // 0 off, 1 weak candidate, 2 accepted
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!keep.at(x, y)) continue;
            const double m = mag.at(x, y);
            if (m >= high) {
                state.at(x, y) = 2;
                stack.emplace_back(x, y);
            } else if (m >= low) {
                state.at(x, y) = 1;
            }
        }
    while (!stack.empty()) {
        const auto [cx, cy] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int nx = cx + dx, ny = cy + dy;
                if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                if (state.at(nx, ny) == 1) {
                    state.at(nx, ny) = 2;
                    stack.emplace_back(nx, ny);
                }
            }
    }
    std::vector<Point2> out;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (state.at(x, y) == 2) out.push_back({x + 0.5, y + 0.5});
    return out;
}

/// Outer contour pixels (centers) of the largest 8-connected component of
/// map >= 0.5. A contour pixel is a component pixel with a 4-neighbour
/// outside the component or on the image border.
inline std::vector<Point2> threshold_contour(const ProbabilityMap& map) {
    const int w = map.width, h = map.height;
    BinaryMask bin(w, h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) bin.at(x, y) = map.at(x, y) >= 0.5 ? 1 : 0;

    std::vector<std::int32_t> label(bin.data.size(), -1);
    std::int32_t next = 0, best_label = -1;
    std::int64_t best_count = 0;
    std::vector<std::pair<int, int>> stack;
    for (int y0 = 0; y0 < h; ++y0)
        for (int x0 = 0; x0 < w; ++x0) {
            const std::size_t idx0 = static_cast<std::size_t>(y0) * w + x0;
            if (!bin.data[idx0] || label[idx0] >= 0) continue;
            const std::int32_t cur = next++;
            std::int64_t count = 0;
            label[idx0] = cur;
            stack.emplace_back(x0, y0);
            while (!stack.empty()) {
                const auto [cx, cy] = stack.back();
                stack.pop_back();
                ++count;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
                        if (bin.data[nidx] && label[nidx] < 0) {
                            label[nidx] = cur;
                            stack.emplace_back(nx, ny);
                        }
                    }
            }
            if (count > best_count) {
                best_count = count;
                best_label = cur;
            }
        }
    std::vector<Point2> out;
    if (best_label < 0) return out;
    auto in_component = [&](int x, int y) {
        if (x < 0 || y < 0 || x >= w || y >= h) return false;
        return label[static_cast<std::size_t>(y) * w + x] == best_label;
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!in_component(x, y)) continue;
            if (!in_component(x - 1, y) || !in_component(x + 1, y) || !in_component(x, y - 1) ||
                !in_component(x, y + 1))
                out.push_back({x + 0.5, y + 0.5});
        }
    return out;
}

} // namespace detail

/// Boundary pixel list of a probability map; empty when no boundary exists
/// (constant map or nothing above threshold).
inline std::vector<Point2> extract_boundary(const ProbabilityMap& map, BoundaryMethod method,
                                            const CannyConfig& config = {}) {
    if (map.data.empty()) throw std::invalid_argument("empty probability map");
    switch (method) {
    case BoundaryMethod::canny:
        return detail::canny_edges(map, config);
    case BoundaryMethod::threshold_contour:
        return detail::threshold_contour(map);
    }
    throw std::invalid_argument("unknown boundary method");
}

} // namespace smrf
