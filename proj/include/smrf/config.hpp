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

// One document for every tunable: forest, features, fitting, boundary
// extraction, pixel spacing, and the master seed. Strict parsing — unknown
// keys are errors, and a file written by run_config_to_json reads back
// losslessly.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "smrf/error.hpp"
#include "smrf/fitting.hpp"
#include "smrf/forest.hpp"
#include "smrf/io.hpp"
#include "smrf/metrics.hpp"

namespace smrf {

struct RunConfig {
    std::uint64_t seed = 42;
    double variance_target = 0.98;
    double pixel_spacing_mm = 0.0; // 0 = report pixel units only
    ForestConfig forest;
    FeatureConfig features;
    FitConfig fit;
    CannyConfig canny;
};

inline void validate_canny_config(const CannyConfig& c) {
    if (!(c.sigma > 0.0)) throw std::invalid_argument("canny sigma must be positive");
    if (c.kernel < 3 || c.kernel % 2 == 0) throw std::invalid_argument("canny kernel must be odd and >= 3");
    if (!(c.low_fraction >= 0.0) || !(c.high_fraction > c.low_fraction) || c.high_fraction > 1.0)
        throw std::invalid_argument("canny fractions must satisfy 0 <= low < high <= 1");
}

inline void validate_run_config(const RunConfig& c) {
    if (!(c.variance_target > 0.0) || c.variance_target > 1.0)
        throw std::invalid_argument("variance_target must be in (0, 1]");
    if (c.pixel_spacing_mm < 0.0) throw std::invalid_argument("pixel_spacing_mm must be >= 0");
    validate_forest_config(c.forest);
    validate_fit_config(c.fit);
    validate_canny_config(c.canny);
    if (c.features.appearance_radius < 0 || c.features.box_max < 1 || c.features.box_max % 2 == 0)
        throw std::invalid_argument("invalid appearance parameter ranges");
    if (!(c.features.s_feature > 0.0)) throw std::invalid_argument("s_feature must be positive");
    if (c.features.hist_eq_levels < 2) throw std::invalid_argument("hist_eq_levels must be >= 2");
    for (double w : c.features.family_weights)
        if (w < 0.0) throw std::invalid_argument("family weights must be >= 0");
}

inline nlohmann::json fit_config_to_json(const FitConfig& c) {
    return {{"alpha", c.alpha},
            {"alpha_scale", c.alpha_scale},
            {"s_fit", c.s_fit},
            {"max_evals", c.max_evals},
            {"step_b", c.step_b},
            {"step_translation", c.step_translation},
            {"step_rotation", c.step_rotation},
            {"step_scale_factor", c.step_scale_factor},
            {"shrink", c.shrink},
            {"tolerance", c.tolerance},
            {"multi_start", c.multi_start},
            {"multi_start_seed", c.multi_start_seed},
            {"jitter_translation", c.jitter_translation},
            {"jitter_rotation", c.jitter_rotation},
            {"jitter_scale_factor", c.jitter_scale_factor}};
}

inline FitConfig fit_config_from_json(const nlohmann::json& j) {
    detail::require_known_keys(j,
                               {"alpha", "alpha_scale", "s_fit", "max_evals", "step_b",
                                "step_translation", "step_rotation", "step_scale_factor", "shrink",
                                "tolerance", "multi_start", "multi_start_seed", "jitter_translation",
                                "jitter_rotation", "jitter_scale_factor"},
                               "fit config");
    try {
        FitConfig c;
        auto opt = [&](const char* key, auto& slot) {
            if (j.contains(key)) slot = j.at(key).get<std::remove_reference_t<decltype(slot)>>();
        };
        opt("alpha", c.alpha);
        opt("alpha_scale", c.alpha_scale);
        opt("s_fit", c.s_fit);
        opt("max_evals", c.max_evals);
        opt("step_b", c.step_b);
        opt("step_translation", c.step_translation);
        opt("step_rotation", c.step_rotation);
        opt("step_scale_factor", c.step_scale_factor);
        opt("shrink", c.shrink);
        opt("tolerance", c.tolerance);
        opt("multi_start", c.multi_start);
        opt("multi_start_seed", c.multi_start_seed);
        opt("jitter_translation", c.jitter_translation);
        opt("jitter_rotation", c.jitter_rotation);
        opt("jitter_scale_factor", c.jitter_scale_factor);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed fit config: ") + e.what());
    }
}

inline nlohmann::json canny_config_to_json(const CannyConfig& c) {
    return {{"sigma", c.sigma},
            {"kernel", c.kernel},
            {"low_fraction", c.low_fraction},
            {"high_fraction", c.high_fraction}};
}

inline CannyConfig canny_config_from_json(const nlohmann::json& j) {
    detail::require_known_keys(j, {"sigma", "kernel", "low_fraction", "high_fraction"}, "canny config");
    try {
        CannyConfig c;
        if (j.contains("sigma")) c.sigma = j.at("sigma").get<double>();
        if (j.contains("kernel")) c.kernel = j.at("kernel").get<int>();
        if (j.contains("low_fraction")) c.low_fraction = j.at("low_fraction").get<double>();
        if (j.contains("high_fraction")) c.high_fraction = j.at("high_fraction").get<double>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed canny config: ") + e.what());
    }
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["variance_target"] = c.variance_target;
    j["pixel_spacing_mm"] = c.pixel_spacing_mm;
    j["forest"] = forest_config_to_json(c.forest);
    j["features"] = feature_config_to_json(c.features);
    j["fit"] = fit_config_to_json(c.fit);
    j["canny"] = canny_config_to_json(c.canny);
    return j;
}

/// Sections and keys may be omitted (defaults apply); unknown ones may not.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("run config must be a JSON object");
    detail::require_known_keys(
        j, {"seed", "variance_target", "pixel_spacing_mm", "forest", "features", "fit", "canny"},
        "run config");
    RunConfig c;
    try {
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("variance_target")) c.variance_target = j.at("variance_target").get<double>();
        if (j.contains("pixel_spacing_mm")) c.pixel_spacing_mm = j.at("pixel_spacing_mm").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed run config: ") + e.what());
    }
    if (j.contains("forest")) {
        const auto& f = j.at("forest");
        detail::require_known_keys(
            f, {"n_trees", "max_depth", "sample_fraction", "candidates", "n_thresholds", "min_samples"},
            "forest config");
        nlohmann::json full = forest_config_to_json(ForestConfig{});
        full.update(f);
        c.forest = forest_config_from_json(full);
    }
    if (j.contains("features")) {
        const auto& f = j.at("features");
        detail::require_known_keys(
            f, {"appearance_radius", "box_max", "s_feature", "hist_eq_levels", "family_weights"},
            "feature config");
        nlohmann::json full = feature_config_to_json(FeatureConfig{});
        full.update(f);
        c.features = feature_config_from_json(full);
    }
    if (j.contains("fit")) c.fit = fit_config_from_json(j.at("fit"));
    if (j.contains("canny")) c.canny = canny_config_from_json(j.at("canny"));
    validate_run_config(c);
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    return run_config_from_json(load_json(path));
}

inline void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
    save_json(path, run_config_to_json(c));
}

/// Family weight presets for the three classifier variants.
inline std::array<double, 3> method_weights(const std::string& method) {
    if (method == "classic") return {1.0, 0.0, 0.0};
    if (method == "position") return {1.0, 1.0, 0.0};
    if (method == "smrf") return {1.0, 0.0, 1.0};
    throw std::invalid_argument("unknown method \"" + method + "\" (expected classic|position|smrf)");
}

} // namespace smrf
