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

// Experiment harness: leave-one-out cross-validation over the three
// classifier variants, and the tree-depth sweep. Everything downstream of a
// master seed is deterministic, so CSV outputs are byte-stable.

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smrf/config.hpp"
#include "smrf/fitting.hpp"
#include "smrf/forest.hpp"
#include "smrf/metrics.hpp"
#include "smrf/synth.hpp"

namespace smrf {

/// Canonical numbering; stable regardless of which methods a run requests.
inline int method_index(const std::string& method) {
    if (method == "classic") return 0;
    if (method == "position") return 1;
    if (method == "smrf") return 2;
    throw std::invalid_argument("unknown method \"" + method + "\" (expected classic|position|smrf)");
}

struct FoldRecord {
    std::string method;
    int fold = 0;
    MetricsReport report;
};

struct MethodSummary {
    std::string method;
    MetricsReport mean;
    MetricsReport sd; // sample standard deviation over folds
};

struct LoocvResult {
    std::vector<FoldRecord> records; // grouped by method, folds ascending
    std::vector<MethodSummary> summaries;
    // Which annotation indices built each fold's shape model (leakage audit).
    std::vector<std::vector<std::size_t>> fold_model_sources;
};

namespace detail {

inline ShapeModel subset_shape_model(std::span<const PhantomItem> items,
                                     std::span<const std::size_t> idx, double variance_target) {
    std::vector<LandmarkSet> ann;
    ann.reserve(idx.size() + 1);
    for (std::size_t i : idx) ann.push_back(items[i].landmarks);
    // A lone annotation still yields a (pose-only) model: duplicating it
    // gives zero variance, so every mode is discarded.
    if (ann.size() == 1) ann.push_back(ann[0]);
    return build_model(ann, variance_target);
}

inline Forest train_on_subset(std::span<const PhantomItem> items, std::span<const std::size_t> idx,
                              const ShapeModel& model, const ForestConfig& fc,
                              const FeatureConfig& features, std::uint64_t seed) {
    std::vector<BinaryMask> masks;
    masks.reserve(idx.size());
    for (std::size_t i : idx) masks.push_back(items[i].mask);
    const TrainSet pool = full_train_set(masks);
    std::vector<SmCache> caches(idx.size());
    std::vector<FeatureContext> ctxs;
    ctxs.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k)
        ctxs.emplace_back(items[idx[k]].image, &model, features, &caches[k]);
    std::vector<const FeatureContext*> ptrs;
    ptrs.reserve(ctxs.size());
    for (const FeatureContext& c : ctxs) ptrs.push_back(&c);
    return train_forest(pool, ptrs, &model, fc, features, seed);
}

inline BinaryMask threshold_mask(const ProbabilityMap& map, double tau = 0.5) {
    BinaryMask mask(map.width, map.height);
    for (std::size_t i = 0; i < map.data.size(); ++i) mask.data[i] = map.data[i] >= tau ? 1 : 0;
    return mask;
}

/// Metrics for one held-out image. SMRF commits to the fitted shape; the
/// baselines threshold the map and read their boundary off a Canny pass.
inline MetricsReport score_prediction(const ProbabilityMap& map, const PhantomItem& truth,
                                      bool fit_shape, const ShapeModel& model,
                                      const RunConfig& config) {
    const Polygon truth_poly = landmarks_to_polygon(truth.landmarks);
    BinaryMask pred_mask;
    BoundaryMetrics bounds;
    bool boundary_defined = true;
    if (fit_shape) {
        const FitResult result = fit(map, model, config.fit);
        const Polygon boundary = result_boundary(result, model);
        pred_mask = rasterize(boundary, map.width, map.height);
        bounds = boundary_distance(boundary, truth_poly);
    } else {
        pred_mask = threshold_mask(map);
        const std::vector<Point2> edges = extract_boundary(map, BoundaryMethod::canny, config.canny);
        if (edges.empty()) {
            boundary_defined = false; // surfaced as NaN rather than a guess
        } else {
            bounds = boundary_distance(truth_poly, std::span<const Point2>(edges));
        }
    }
    if (!boundary_defined) {
        bounds.mad_px = std::numeric_limits<double>::quiet_NaN();
        bounds.hd_px = std::numeric_limits<double>::quiet_NaN();
    }
    const std::optional<double> spacing =
        config.pixel_spacing_mm > 0.0 ? std::optional<double>(config.pixel_spacing_mm) : std::nullopt;
    return make_report(mask_metrics(pred_mask, truth.mask), bounds, spacing);
}

inline MethodSummary summarize(const std::string& method, std::span<const MetricsReport> reports) {
    MethodSummary s;
    s.method = method;
    const double n = static_cast<double>(reports.size());
    auto accumulate = [&](auto pick, double& mean_slot, double& sd_slot) {
        double mean = 0.0;
        for (const MetricsReport& r : reports) mean += pick(r);
        mean /= n;
        double var = 0.0;
        for (const MetricsReport& r : reports) {
            const double d = pick(r) - mean;
            var += d * d;
        }
        var = reports.size() > 1 ? var / (n - 1.0) : 0.0;
        mean_slot = mean;
        sd_slot = std::sqrt(var);
    };
    accumulate([](const MetricsReport& r) { return r.accuracy; }, s.mean.accuracy, s.sd.accuracy);
    accumulate([](const MetricsReport& r) { return r.dice; }, s.mean.dice, s.sd.dice);
    accumulate([](const MetricsReport& r) { return r.jaccard; }, s.mean.jaccard, s.sd.jaccard);
    accumulate([](const MetricsReport& r) { return r.mad_px; }, s.mean.mad_px, s.sd.mad_px);
    accumulate([](const MetricsReport& r) { return r.hd_px; }, s.mean.hd_px, s.sd.hd_px);
    if (!reports.empty() && reports.front().mad_mm) {
        double m, sd;
        accumulate([](const MetricsReport& r) { return *r.mad_mm; }, m, sd);
        s.mean.mad_mm = m;
        s.sd.mad_mm = sd;
        accumulate([](const MetricsReport& r) { return *r.hd_mm; }, m, sd);
        s.mean.hd_mm = m;
        s.sd.hd_mm = sd;
    }
    return s;
}

inline std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

} // namespace detail

/// Leave-one-out protocol: for every held-out image, the shape model and all
/// forests are rebuilt from the remaining items only.
inline LoocvResult loocv(std::span<const PhantomItem> items, std::span<const std::string> methods,
                         const RunConfig& config) {
    if (items.size() < 2) throw std::invalid_argument("leave-one-out needs at least 2 items");
    if (methods.empty()) throw std::invalid_argument("no methods requested");
    for (const std::string& m : methods) method_index(m);
    validate_run_config(config);

    const std::size_t n = items.size();
    const Rng master(config.seed);
    std::vector<std::vector<MetricsReport>> reports(methods.size(), std::vector<MetricsReport>(n));
    LoocvResult out;

    for (std::size_t f = 0; f < n; ++f) {
        try {
            std::vector<std::size_t> train_idx;
            train_idx.reserve(n - 1);
            for (std::size_t i = 0; i < n; ++i)
                if (i != f) train_idx.push_back(i);
            out.fold_model_sources.push_back(train_idx);

            const ShapeModel model = detail::subset_shape_model(items, train_idx, config.variance_target);
            for (std::size_t mi = 0; mi < methods.size(); ++mi) {
                const std::string& method = methods[mi];
                FeatureConfig features = config.features;
                features.family_weights = method_weights(method);
                const std::uint64_t seed =
                    master.derive(f * 8 + static_cast<std::uint64_t>(method_index(method))).seed();
                const Forest forest = detail::train_on_subset(items, train_idx, model, config.forest,
                                                              features, seed);
                const ProbabilityMap map = predict_map(forest, items[f].image, &model);
                reports[mi][f] =
                    detail::score_prediction(map, items[f], method == "smrf", model, config);
            }
        } catch (const std::exception& e) {
            throw DataError("fold " + std::to_string(f) + ": " + e.what());
        }
    }

    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        for (std::size_t f = 0; f < n; ++f)
            out.records.push_back({methods[mi], static_cast<int>(f), reports[mi][f]});
        out.summaries.push_back(detail::summarize(methods[mi], reports[mi]));
    }
    return out;
}

/// CSV per the report contract: one row per (method, fold), then one
/// summary row per method with mean±sd cells.
inline std::string loocv_csv(const LoocvResult& result) {
    const bool mm = !result.records.empty() && result.records.front().report.mad_mm.has_value();
    std::string csv = "method,fold,accuracy,dice,jaccard,mad_px,hd_px";
    if (mm) csv += ",mad_mm,hd_mm";
    csv += "\n";
    for (const FoldRecord& rec : result.records) {
        csv += rec.method + "," + std::to_string(rec.fold);
        for (double v : {rec.report.accuracy, rec.report.dice, rec.report.jaccard, rec.report.mad_px,
                         rec.report.hd_px})
            csv += "," + detail::fixed(v, 6);
        if (mm) csv += "," + detail::fixed(*rec.report.mad_mm, 6) + "," + detail::fixed(*rec.report.hd_mm, 6);
        csv += "\n";
    }
    for (const MethodSummary& s : result.summaries) {
        csv += s.method + ",summary";
        auto cell = [&](double mean, double sd) { csv += "," + detail::fixed(mean, 4) + "±" + detail::fixed(sd, 4); };
        cell(s.mean.accuracy, s.sd.accuracy);
        cell(s.mean.dice, s.sd.dice);
        cell(s.mean.jaccard, s.sd.jaccard);
        cell(s.mean.mad_px, s.sd.mad_px);
        cell(s.mean.hd_px, s.sd.hd_px);
        if (mm) {
            cell(*s.mean.mad_mm, *s.sd.mad_mm);
            cell(*s.mean.hd_mm, *s.sd.hd_mm);
        }
        csv += "\n";
    }
    return csv;
}

struct DepthSweepRow {
    int depth = 0;
    std::string method;
    double mean_jaccard = 0.0;
};

/// Classifier-quality sweep: retrain at each depth on a pinned split (every
/// third item validates) and score the thresholded maps. No shape fitting —
/// the sweep compares raw forests, not the full pipeline.
inline std::vector<DepthSweepRow> depth_sweep(std::span<const PhantomItem> items,
                                              std::span<const std::string> methods,
                                              std::span<const int> depths, const RunConfig& config) {
    if (items.size() < 3) throw std::invalid_argument("depth sweep needs at least 3 items");
    if (methods.empty() || depths.empty()) throw std::invalid_argument("methods and depths must be nonempty");
    for (const std::string& m : methods) method_index(m);
    for (int d : depths)
        if (d < 1) throw std::invalid_argument("depths must be >= 1");
    validate_run_config(config);

    std::vector<std::size_t> val_idx, train_idx;
    for (std::size_t i = 0; i < items.size(); ++i) (i % 3 == 0 ? val_idx : train_idx).push_back(i);

    const Rng master(config.seed);
    const ShapeModel model = detail::subset_shape_model(items, train_idx, config.variance_target);
    std::vector<DepthSweepRow> rows;
    for (int depth : depths) {
        for (const std::string& method : methods) {
            ForestConfig fc = config.forest;
            fc.max_depth = depth;
            FeatureConfig features = config.features;
            features.family_weights = method_weights(method);
            const std::uint64_t seed =
                master.derive(0x10000 + static_cast<std::uint64_t>(depth) * 8 +
                              static_cast<std::uint64_t>(method_index(method)))
                    .seed();
            const Forest forest = detail::train_on_subset(items, train_idx, model, fc, features, seed);
            double sum = 0.0;
            for (std::size_t v : val_idx) {
                const ProbabilityMap map = predict_map(forest, items[v].image, &model);
                sum += mask_metrics(detail::threshold_mask(map), items[v].mask).jaccard;
            }
            rows.push_back({depth, method, sum / static_cast<double>(val_idx.size())});
        }
    }
    return rows;
}

inline std::string depth_sweep_csv(std::span<const DepthSweepRow> rows) {
    std::string csv = "depth,method,jaccard\n";
    for (const DepthSweepRow& r : rows)
        csv += std::to_string(r.depth) + "," + r.method + "," + detail::fixed(r.mean_jaccard, 6) + "\n";
    return csv;
}

} // namespace smrf
