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

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "smrf/error.hpp"
#include "smrf/geometry.hpp"
#include "smrf/image.hpp"
#include "smrf/io.hpp"
#include "smrf/random.hpp"
#include "smrf/shape_model.hpp"

namespace smrf {

/// Ring-sector (C-shape) phantom: a myocardium-like wall around a dark
/// chamber, opening centered on +y. Intensities are region means warped by a
/// vertical attenuation ramp and multiplicative speckle; an optional
/// wall-intensity distractor blob sits inside the chamber.
struct PhantomSpec {
    int width = 256;
    int height = 256;
    double inner_radius_lo = 45.0;
    double inner_radius_hi = 60.0;
    double thickness_lo = 18.0;
    double thickness_hi = 30.0;
    double opening_lo = 0.6; // radians
    double opening_hi = 1.2;
    double center_jitter = 10.0;
    double myo_intensity = 0.65;
    double background_intensity = 0.35;
    double chamber_intensity = 0.15;
    double speckle = 0.3;      // multiplicative uniform noise strength
    double attenuation = 0.4;  // top-to-bottom linear ramp strength
    bool distractor = true;
    double distractor_radius_lo = 4.0;
    double distractor_radius_hi = 9.0;
    int n_landmarks = 76;
    std::uint64_t seed = 42;
};

inline void validate_phantom_spec(const PhantomSpec& s) {
    if (s.width < 16 || s.height < 16) throw std::invalid_argument("phantom image too small");
    if (!(s.inner_radius_lo > 0.0) || s.inner_radius_hi < s.inner_radius_lo)
        throw std::invalid_argument("bad inner radius range");
    if (!(s.thickness_lo > 0.0) || s.thickness_hi < s.thickness_lo)
        throw std::invalid_argument("bad thickness range");
    if (s.thickness_hi > s.inner_radius_lo)
        throw std::invalid_argument("thickness range exceeds inner radius range");
    if (!(s.opening_lo > 0.0) || s.opening_hi < s.opening_lo ||
        s.opening_hi >= 2.0 * std::numbers::pi - 0.5)
        throw std::invalid_argument("bad opening angle range");
    if (!(s.center_jitter >= 0.0)) throw std::invalid_argument("center jitter must be nonnegative");
    const double reach = s.inner_radius_hi + s.thickness_hi + s.center_jitter;
    if (reach > std::min(s.width, s.height) / 2.0 - 1.0)
        throw std::invalid_argument("phantom geometry can leave the image");
    for (double v : {s.myo_intensity, s.background_intensity, s.chamber_intensity})
        if (!(v >= 0.0) || !(v <= 1.0)) throw std::invalid_argument("intensities must be in [0,1]");
    if (!(s.speckle >= 0.0) || s.speckle >= 1.0)
        throw std::invalid_argument("speckle strength must be in [0,1)");
    if (!(s.attenuation >= 0.0) || s.attenuation >= 1.0)
        throw std::invalid_argument("attenuation strength must be in [0,1)");
    if (s.distractor) {
        if (!(s.distractor_radius_lo > 0.0) || s.distractor_radius_hi < s.distractor_radius_lo)
            throw std::invalid_argument("bad distractor radius range");
        if (s.distractor_radius_hi + 3.0 > s.inner_radius_lo)
            throw std::invalid_argument("distractor cannot fit inside the chamber");
    }
    if (s.n_landmarks < 8 || s.n_landmarks % 4 != 0)
        throw std::invalid_argument("landmark count must be >= 8 and divisible by 4");
}

struct PhantomItem {
    Image image;
    BinaryMask mask;
    LandmarkSet landmarks;
};

namespace detail {

/// Landmarks around a ring sector: four key corners (the endpoints of the two
/// radial edges) with (n/4 - 1) equally spaced interior points on each of the
/// four pieces (inner arc, far radial edge, outer arc, near radial edge).
/// Landmark 0 is the inner corner on the left side of the opening; traversal
/// runs along the inner arc first.
inline LandmarkSet ring_sector_landmarks(Point2 center, double r_in, double thickness,
                                         double opening, int n) {
    const double r_out = r_in + thickness;
    const double theta_start = std::numbers::pi / 2.0 + opening / 2.0;
    const double covered = 2.0 * std::numbers::pi - opening;
    const double theta_end = theta_start + covered;
    const int per_piece = n / 4;

    LandmarkSet s;
    s.coords.reserve(static_cast<std::size_t>(n) * 2);
    auto push = [&](double r, double theta) {
        s.coords.push_back(center.x + r * std::cos(theta));
        s.coords.push_back(center.y + r * std::sin(theta));
    };
    for (int k = 0; k < per_piece; ++k) // inner arc, opening-left to opening-right
        push(r_in, theta_start + covered * k / per_piece);
    for (int k = 0; k < per_piece; ++k) // radial edge outward at theta_end
        push(r_in + thickness * k / per_piece, theta_end);
    for (int k = 0; k < per_piece; ++k) // outer arc, back toward the start
        push(r_out, theta_end - covered * k / per_piece);
    for (int k = 0; k < per_piece; ++k) // radial edge inward at theta_start
        push(r_out - thickness * k / per_piece, theta_start);
    return s;
}

} // namespace detail

/// One phantom drawn from the spec ranges using the given stream.
inline PhantomItem generate_item(const PhantomSpec& spec, Rng& rng) {
    auto in_range = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform01(); };
    const double r_in = in_range(spec.inner_radius_lo, spec.inner_radius_hi);
    const double thickness = in_range(spec.thickness_lo, spec.thickness_hi);
    const double opening = in_range(spec.opening_lo, spec.opening_hi);
    const Point2 center{spec.width / 2.0 + spec.center_jitter * (2.0 * rng.uniform01() - 1.0),
                        spec.height / 2.0 + spec.center_jitter * (2.0 * rng.uniform01() - 1.0)};

    double blob_r = 0.0;
    Point2 blob_c{0.0, 0.0};
    if (spec.distractor) {
        blob_r = in_range(spec.distractor_radius_lo, spec.distractor_radius_hi);
        const double ang = 2.0 * std::numbers::pi * rng.uniform01();
        const double dist = rng.uniform01() * std::max(0.0, r_in - blob_r - 2.0);
        blob_c = {center.x + dist * std::cos(ang), center.y + dist * std::sin(ang)};
    }

    PhantomItem item;
    item.landmarks =
        detail::ring_sector_landmarks(center, r_in, thickness, opening, spec.n_landmarks);
    item.mask = rasterize(landmarks_to_polygon(item.landmarks), spec.width, spec.height);

    item.image = Image(spec.width, spec.height);
    for (int y = 0; y < spec.height; ++y) {
        const double ramp = 1.0 - spec.attenuation * (spec.height > 1 ? y / (spec.height - 1.0) : 0.0);
        for (int x = 0; x < spec.width; ++x) {
            const Point2 p{x + 0.5, y + 0.5};
            double v;
            if (item.mask.at(x, y)) {
                v = spec.myo_intensity;
            } else if (spec.distractor && std::hypot(p.x - blob_c.x, p.y - blob_c.y) < blob_r) {
                v = spec.myo_intensity;
            } else if (std::hypot(p.x - center.x, p.y - center.y) < r_in) {
                v = spec.chamber_intensity;
            } else {
                v = spec.background_intensity;
            }
            v *= ramp;
            v *= 1.0 + spec.speckle * (2.0 * rng.uniform01() - 1.0);
            item.image.at(x, y) = std::min(1.0, std::max(0.0, v));
        }
    }
    return item;
}

inline std::vector<PhantomItem> generate_dataset(const PhantomSpec& spec, int count) {
    validate_phantom_spec(spec);
    if (count < 1) throw std::invalid_argument("dataset count must be >= 1");
    const Rng master(spec.seed);
    std::vector<PhantomItem> items;
    items.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng = master.derive(static_cast<std::uint64_t>(i));
        items.push_back(generate_item(spec, rng));
    }
    return items;
}

inline nlohmann::json phantom_spec_to_json(const PhantomSpec& s) {
    return nlohmann::json{{"width", s.width},
                          {"height", s.height},
                          {"inner_radius", {s.inner_radius_lo, s.inner_radius_hi}},
                          {"thickness", {s.thickness_lo, s.thickness_hi}},
                          {"opening", {s.opening_lo, s.opening_hi}},
                          {"center_jitter", s.center_jitter},
                          {"myo_intensity", s.myo_intensity},
                          {"background_intensity", s.background_intensity},
                          {"chamber_intensity", s.chamber_intensity},
                          {"speckle", s.speckle},
                          {"attenuation", s.attenuation},
                          {"distractor", s.distractor},
                          {"distractor_radius", {s.distractor_radius_lo, s.distractor_radius_hi}},
                          {"n_landmarks", s.n_landmarks},
                          {"seed", s.seed}};
}

namespace detail {

inline void json_range(const nlohmann::json& j, const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw ParseError(std::string(key) + " must be [lo, hi]");
    lo = v[0].get<double>();
    hi = v[1].get<double>();
}

} // namespace detail

inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("phantom spec must be a JSON object");
    detail::require_known_keys(j,
                               {"width", "height", "inner_radius", "thickness", "opening",
                                "center_jitter", "myo_intensity", "background_intensity",
                                "chamber_intensity", "speckle", "attenuation", "distractor",
                                "distractor_radius", "n_landmarks", "seed"},
                               "phantom spec");
    PhantomSpec s;
    if (j.contains("width")) s.width = j.at("width").get<int>();
    if (j.contains("height")) s.height = j.at("height").get<int>();
    detail::json_range(j, "inner_radius", s.inner_radius_lo, s.inner_radius_hi);
    detail::json_range(j, "thickness", s.thickness_lo, s.thickness_hi);
    detail::json_range(j, "opening", s.opening_lo, s.opening_hi);
    if (j.contains("center_jitter")) s.center_jitter = j.at("center_jitter").get<double>();
    if (j.contains("myo_intensity")) s.myo_intensity = j.at("myo_intensity").get<double>();
    if (j.contains("background_intensity"))
        s.background_intensity = j.at("background_intensity").get<double>();
    if (j.contains("chamber_intensity")) s.chamber_intensity = j.at("chamber_intensity").get<double>();
    if (j.contains("speckle")) s.speckle = j.at("speckle").get<double>();
    if (j.contains("attenuation")) s.attenuation = j.at("attenuation").get<double>();
    if (j.contains("distractor")) s.distractor = j.at("distractor").get<bool>();
    detail::json_range(j, "distractor_radius", s.distractor_radius_lo, s.distractor_radius_hi);
    if (j.contains("n_landmarks")) s.n_landmarks = j.at("n_landmarks").get<int>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    validate_phantom_spec(s);
    return s;
}

namespace detail {

inline std::string item_suffix(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", index);
    return std::string(buf);
}

} // namespace detail

/// Writes the dataset directory layout and returns a checksum chained over
/// every written file in order.
inline std::uint64_t write_dataset(const std::filesystem::path& dir, const PhantomSpec& spec,
                                   const std::vector<PhantomItem>& items) {
    std::filesystem::create_directories(dir);
    std::uint64_t checksum = 0xCBF29CE484222325ULL;
    auto put = [&](const std::filesystem::path& path, const std::string& bytes) {
        write_file_bytes(path, bytes);
        checksum = fnv1a64(bytes, checksum);
    };
    put(dir / "spec.json", phantom_spec_to_json(spec).dump(2) + "\n");
    for (std::size_t i = 0; i < items.size(); ++i) {
        const std::string sfx = detail::item_suffix(static_cast<int>(i));
        const PhantomItem& item = items[i];
        write_pgm(dir / ("img_" + sfx + ".pgm"), item.image);
        checksum = fnv1a64(read_file_bytes(dir / ("img_" + sfx + ".pgm")), checksum);
        write_pgm(dir / ("mask_" + sfx + ".pgm"), item.mask);
        checksum = fnv1a64(read_file_bytes(dir / ("mask_" + sfx + ".pgm")), checksum);
        put(dir / ("landmarks_" + sfx + ".json"), landmarks_to_json(item.landmarks).dump(2) + "\n");
    }
    return checksum;
}

struct Dataset {
    PhantomSpec spec;
    std::vector<PhantomItem> items;
};

inline Dataset read_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.spec = phantom_spec_from_json(load_json(dir / "spec.json"));
    for (int i = 0;; ++i) {
        const std::string sfx = detail::item_suffix(i);
        const auto img_path = dir / ("img_" + sfx + ".pgm");
        if (!std::filesystem::exists(img_path)) break;
        PhantomItem item;
        item.image = read_pgm(img_path);
        item.mask = read_mask_pgm(dir / ("mask_" + sfx + ".pgm"));
        item.landmarks = landmarks_from_json(load_json(dir / ("landmarks_" + sfx + ".json")));
        if (item.image.width != item.mask.width || item.image.height != item.mask.height)
            throw DataError("image/mask dimensions differ for item " + sfx);
        ds.items.push_back(std::move(item));
    }
    if (ds.items.empty()) throw DataError("no dataset items found in " + dir.string());
    return ds;
}

} // namespace smrf
