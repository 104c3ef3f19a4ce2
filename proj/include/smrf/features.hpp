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

#include <array>
#include <cmath>
#include <cstring>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "smrf/error.hpp"
#include "smrf/geometry.hpp"
#include "smrf/image.hpp"
#include "smrf/random.hpp"
#include "smrf/shape_model.hpp"

namespace smrf {

struct FeatureConfig {
    int appearance_radius = 25; // max |offset| in pixels
    int box_max = 11;           // max box side, odd
    double s_feature = 1.0;     // plausibility multiplier for shape-feature draws
    int hist_eq_levels = 256;
    // Relative weights for (appearance, position, shape); normalized at use.
    std::array<double, 3> family_weights{1.0, 1.0, 1.0};
};

enum class FeatureFamily : std::uint8_t { appearance = 0, position = 1, shape = 2 };

/// Box-mean probe (optionally a difference of two probes) on the equalized
/// image, read with clamp-to-edge padding.
struct AppearanceFeature {
    int dx = 0, dy = 0;
    int box_w = 1, box_h = 1;
    bool difference = false;
    int dx2 = 0, dy2 = 0;
    int box_w2 = 1, box_h2 = 1;
};

struct PositionFeature {
    std::uint8_t axis = 0; // 0 = x, 1 = y
};

/// Mode weights of one sampled plausible shape; the response at a pixel is
/// the signed distance to that shape's boundary.
struct SmFeature {
    std::vector<double> b;
};

using FeatureDescriptor = std::variant<AppearanceFeature, PositionFeature, SmFeature>;

inline FeatureFamily feature_family(const FeatureDescriptor& desc) {
    return static_cast<FeatureFamily>(desc.index());
}

inline void validate_descriptor(const FeatureDescriptor& desc) {
    if (const auto* a = std::get_if<AppearanceFeature>(&desc)) {
        for (int side : {a->box_w, a->box_h, a->box_w2, a->box_h2}) {
            if (side < 1 || side % 2 == 0) throw std::invalid_argument("box sides must be odd and >= 1");
        }
    } else if (const auto* s = std::get_if<SmFeature>(&desc)) {
        for (double v : s->b) {
            if (!std::isfinite(v)) throw std::invalid_argument("shape feature weights must be finite");
        }
    }
}

inline Polygon sm_polygon(const ShapeModel& model, const SmFeature& desc) {
    return landmarks_to_polygon(synthesize(model, desc.b));
}

/// Histogram equalization after quantizing to `levels` bins:
/// out = (cdf(q) - cdf_min) / (1 - cdf_min). A constant image maps to zeros.
inline Image histogram_equalize(const Image& img, int levels) {
    if (levels < 2) throw std::invalid_argument("histogram_equalize needs at least 2 levels");
    std::vector<std::int64_t> counts(static_cast<std::size_t>(levels), 0);
    const double scale = static_cast<double>(levels);
    auto bin_of = [&](double v) {
        int q = static_cast<int>(v * scale);
        return std::min(levels - 1, std::max(0, q));
    };
    for (double v : img.data) ++counts[static_cast<std::size_t>(bin_of(v))];
    const double total = static_cast<double>(img.data.size());
    std::vector<double> cdf(static_cast<std::size_t>(levels), 0.0);
    std::int64_t running = 0;
    double cdf_min = 0.0;
    for (int q = 0; q < levels; ++q) {
        running += counts[static_cast<std::size_t>(q)];
        cdf[static_cast<std::size_t>(q)] = static_cast<double>(running) / total;
        if (cdf_min == 0.0 && counts[static_cast<std::size_t>(q)] > 0)
            cdf_min = cdf[static_cast<std::size_t>(q)];
    }
    Image out(img.width, img.height);
    const double denom = 1.0 - cdf_min;
    if (denom <= 0.0) return out; // constant image
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        out.data[i] = (cdf[static_cast<std::size_t>(bin_of(img.data[i]))] - cdf_min) / denom;
    }
    return out;
}

/// Precomputed signed-distance maps keyed by the exact bits of the shape
/// weights. Concurrent lookups share the map; insertion is exclusive.
class SmCache {
public:
    const Raster<double>& map_for(const SmFeature& desc, const ShapeModel& model, int width,
                                  int height) {
        const std::string key = key_of(desc);
        {
            std::shared_lock lock(mutex_);
            auto it = maps_.find(key);
            if (it != maps_.end()) return *it->second;
        }
        auto fresh = std::make_unique<Raster<double>>(compute_map(desc, model, width, height));
        std::unique_lock lock(mutex_);
        auto [it, inserted] = maps_.try_emplace(key, std::move(fresh));
        return *it->second;
    }

    static Raster<double> compute_map(const SmFeature& desc, const ShapeModel& model, int width,
                                      int height) {
        const PolygonDistance pd(sm_polygon(model, desc));
        Raster<double> map(width, height);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) map.at(x, y) = pd.signed_at({x + 0.5, y + 0.5});
        }
        return map;
    }

private:
    static std::string key_of(const SmFeature& desc) {
        std::string key(desc.b.size() * sizeof(double), '\0');
        if (!desc.b.empty()) std::memcpy(key.data(), desc.b.data(), key.size());
        return key;
    }

    std::shared_mutex mutex_;
    std::unordered_map<std::string, std::unique_ptr<Raster<double>>> maps_;
};

/// Read-only evaluation context for one image: the image itself, a padded
/// integral image for O(1) box means, the shape model, and an optional
/// shared distance-map cache.
class FeatureContext {
public:
    FeatureContext(const Image& image, const ShapeModel* model, const FeatureConfig& config,
                   SmCache* sm_cache = nullptr)
        : image_(&image), model_(model), sm_cache_(sm_cache) {
        margin_ = config.appearance_radius + config.box_max / 2 + 1;
        build_integral();
    }

    const Image& image() const { return *image_; }
    const ShapeModel* model() const { return model_; }
    SmCache* sm_cache() const { return sm_cache_; }

    /// Mean intensity of the (w x h) box centered at (cx, cy); reads outside
    /// the image clamp to the nearest edge pixel.
    double box_mean(int cx, int cy, int w, int h) const {
        const int x0 = cx - w / 2, x1 = cx + w / 2;
        const int y0 = cy - h / 2, y1 = cy + h / 2;
        if (x0 < -margin_ || y0 < -margin_ || x1 >= image_->width + margin_ ||
            y1 >= image_->height + margin_) {
            return box_mean_direct(x0, x1, y0, y1);
        }
        const int pw = image_->width + 2 * margin_ + 1;
        auto S = [&](int x, int y) {
            return integral_[static_cast<std::size_t>(y + margin_) * static_cast<std::size_t>(pw) +
                             static_cast<std::size_t>(x + margin_)];
        };
        const double sum = S(x1 + 1, y1 + 1) - S(x0, y1 + 1) - S(x1 + 1, y0) + S(x0, y0);
        return sum / (static_cast<double>(w) * static_cast<double>(h));
    }

    double appearance_response(const AppearanceFeature& a, int x, int y) const {
        const double m1 = box_mean(x + a.dx, y + a.dy, a.box_w, a.box_h);
        if (!a.difference) return m1;
        return m1 - box_mean(x + a.dx2, y + a.dy2, a.box_w2, a.box_h2);
    }

    /// Signed distance from the pixel center to the descriptor's shape.
    double shape_response(const SmFeature& s, int x, int y) const {
        if (model_ == nullptr) throw std::invalid_argument("shape feature needs a shape model");
        if (sm_cache_ != nullptr) {
            const Raster<double>& map = sm_cache_->map_for(s, *model_, image_->width, image_->height);
            return map.at(x, y);
        }
        return signed_distance({x + 0.5, y + 0.5}, sm_polygon(*model_, s));
    }

    double eval(const FeatureDescriptor& desc, int x, int y) const {
        if (!image_->in_bounds(x, y)) throw std::out_of_range("feature evaluated outside the image");
        if (const auto* a = std::get_if<AppearanceFeature>(&desc)) return appearance_response(*a, x, y);
        if (const auto* p = std::get_if<PositionFeature>(&desc))
            return p->axis == 0 ? static_cast<double>(x) : static_cast<double>(y);
        return shape_response(std::get<SmFeature>(desc), x, y);
    }

private:
    void build_integral() {
        const int w = image_->width, h = image_->height, m = margin_;
        const int pw = w + 2 * m + 1, ph = h + 2 * m + 1;
        integral_.assign(static_cast<std::size_t>(pw) * static_cast<std::size_t>(ph), 0.0);
        auto clampi = [](int v, int lo, int hi) { return std::min(hi, std::max(lo, v)); };
        for (int py = 1; py < ph; ++py) {
            const int sy = clampi(py - 1 - m, 0, h - 1);
            double row_sum = 0.0;
            for (int px = 1; px < pw; ++px) {
                const int sx = clampi(px - 1 - m, 0, w - 1);
                row_sum += image_->at(sx, sy);
                integral_[static_cast<std::size_t>(py) * static_cast<std::size_t>(pw) +
                          static_cast<std::size_t>(px)] =
                    integral_[static_cast<std::size_t>(py - 1) * static_cast<std::size_t>(pw) +
                              static_cast<std::size_t>(px)] +
                    row_sum;
            }
        }
    }

    double box_mean_direct(int x0, int x1, int y0, int y1) const {
        auto clampi = [](int v, int lo, int hi) { return std::min(hi, std::max(lo, v)); };
        double sum = 0.0;
        for (int y = y0; y <= y1; ++y) {
            const int sy = clampi(y, 0, image_->height - 1);
            for (int x = x0; x <= x1; ++x) sum += image_->at(clampi(x, 0, image_->width - 1), sy);
        }
        return sum / (static_cast<double>(x1 - x0 + 1) * static_cast<double>(y1 - y0 + 1));
    }

    const Image* image_;
    const ShapeModel* model_;
    SmCache* sm_cache_;
    int margin_ = 0;
    std::vector<double> integral_; // padded, (w + 2m + 1) x (h + 2m + 1)
};

inline double eval_feature(const FeatureDescriptor& desc, int x, int y, const FeatureContext& ctx) {
    return ctx.eval(desc, x, y);
}

/// Draws one descriptor: family by weight, then family-specific parameters.
/// Appearance offsets are uniform ints in [-R, R], box sides uniform odd in
/// [1, box_max], single vs difference mode 50/50; shape weights come from
/// sample_params with s_feature.
inline FeatureDescriptor sample_descriptor(const std::array<double, 3>& family_weights,
                                           const ShapeModel* model, Rng& rng,
                                           const FeatureConfig& config) {
    double total = 0.0;
    for (double w : family_weights) {
        if (w < 0.0 || !std::isfinite(w)) throw std::invalid_argument("family weights must be >= 0");
        total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("family weights must not all be zero");
    if (family_weights[2] > 0.0 && model == nullptr)
        throw std::invalid_argument("shape features need a shape model");

    const double u = rng.uniform(0.0, total);
    FeatureFamily family = FeatureFamily::appearance;
    if (u >= family_weights[0] + family_weights[1]) family = FeatureFamily::shape;
    else if (u >= family_weights[0]) family = FeatureFamily::position;

    auto draw_offset = [&]() {
        const int span = 2 * config.appearance_radius + 1;
        return static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(span))) -
               config.appearance_radius;
    };
    auto draw_box = [&]() {
        const int n_odd = (config.box_max + 1) / 2;
        return 2 * static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n_odd))) + 1;
    };

    switch (family) {
    case FeatureFamily::appearance: {
        AppearanceFeature a;
        a.dx = draw_offset();
        a.dy = draw_offset();
        a.box_w = draw_box();
        a.box_h = draw_box();
        a.difference = rng.uniform_index(2) == 1;
        if (a.difference) {
            a.dx2 = draw_offset();
            a.dy2 = draw_offset();
            a.box_w2 = draw_box();
            a.box_h2 = draw_box();
        }
        return a;
    }
    case FeatureFamily::position:
        return PositionFeature{static_cast<std::uint8_t>(rng.uniform_index(2))};
    case FeatureFamily::shape:
    default: {
        const ShapeParams params = sample_params(*model, config.s_feature, rng);
        return SmFeature{params.b};
    }
    }
}

inline nlohmann::json descriptor_to_json(const FeatureDescriptor& desc) {
    nlohmann::json j;
    if (const auto* a = std::get_if<AppearanceFeature>(&desc)) {
        j["family"] = "appearance";
        j["dx"] = a->dx;
        j["dy"] = a->dy;
        j["w"] = a->box_w;
        j["h"] = a->box_h;
        j["mode"] = a->difference ? "difference" : "single";
        if (a->difference) {
            j["dx2"] = a->dx2;
            j["dy2"] = a->dy2;
            j["w2"] = a->box_w2;
            j["h2"] = a->box_h2;
        }
    } else if (const auto* p = std::get_if<PositionFeature>(&desc)) {
        j["family"] = "position";
        j["axis"] = p->axis == 0 ? "x" : "y";
    } else {
        j["family"] = "sm";
        j["b"] = std::get<SmFeature>(desc).b;
    }
    return j;
}

inline FeatureDescriptor descriptor_from_json(const nlohmann::json& j) {
    try {
        const std::string family = j.at("family").get<std::string>();
        if (family == "appearance") {
            AppearanceFeature a;
            a.dx = j.at("dx").get<int>();
            a.dy = j.at("dy").get<int>();
            a.box_w = j.at("w").get<int>();
            a.box_h = j.at("h").get<int>();
            const std::string mode = j.at("mode").get<std::string>();
            if (mode != "single" && mode != "difference") throw ParseError("unknown appearance mode");
            a.difference = mode == "difference";
            if (a.difference) {
                a.dx2 = j.at("dx2").get<int>();
                a.dy2 = j.at("dy2").get<int>();
                a.box_w2 = j.at("w2").get<int>();
                a.box_h2 = j.at("h2").get<int>();
            }
            validate_descriptor(a);
            return a;
        }
        if (family == "position") {
            const std::string axis = j.at("axis").get<std::string>();
            if (axis != "x" && axis != "y") throw ParseError("position axis must be x or y");
            return PositionFeature{static_cast<std::uint8_t>(axis == "y" ? 1 : 0)};
        }
        if (family == "sm") {
            SmFeature s{j.at("b").get<std::vector<double>>()};
            validate_descriptor(s);
            return s;
        }
        throw ParseError("unknown feature family: " + family);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed feature descriptor: ") + e.what());
    }
}

} // namespace smrf
