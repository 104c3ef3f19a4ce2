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
#include <cstddef>
#include <cstdint>
#include <vector>

#include "smrf/geometry.hpp"
#include "smrf/image.hpp"
#include "smrf/random.hpp"
#include "smrf/shape_model.hpp"

namespace smrf {

struct FitConfig {
    double alpha = -1.0;       // regularization weight; negative selects the auto rule
    double alpha_scale = 0.1;  // auto rule: alpha = alpha_scale * pixels * mean(map)
    double s_fit = 2.0;        // plausibility bound multiplier during fitting
    int max_evals = 20000;
    double step_b = 0.5;          // initial step for b, in sqrt(lambda) units
    double step_translation = 2.0; // pixels
    double step_rotation = 0.05;   // radians
    double step_scale_factor = 1.05; // multiplicative; searched as a log step
    double shrink = 0.5;
    double tolerance = 1e-3;
    int multi_start = 0;             // 0/1: single canonical start; m>1: m starts, keep best
    std::uint64_t multi_start_seed = 42;
    double jitter_translation = 5.0; // start jitter: uniform in +/- this many pixels
    double jitter_rotation = 0.15;   // radians
    double jitter_scale_factor = 1.1;
};

inline void validate_fit_config(const FitConfig& c) {
    if (!(c.tolerance > 0.0)) throw std::invalid_argument("fit tolerance must be positive");
    if (!(c.shrink > 0.0) || !(c.shrink < 1.0)) throw std::invalid_argument("shrink must be in (0,1)");
    if (!(c.s_fit > 0.0)) throw std::invalid_argument("s_fit must be positive");
    if (c.max_evals < 1) throw std::invalid_argument("max_evals must be >= 1");
    if (!(c.step_b > 0.0) || !(c.step_translation > 0.0) || !(c.step_rotation > 0.0))
        throw std::invalid_argument("initial steps must be positive");
    if (!(c.step_scale_factor > 1.0)) throw std::invalid_argument("scale factor step must exceed 1");
    if (!(c.alpha_scale >= 0.0)) throw std::invalid_argument("alpha_scale must be nonnegative");
    if (c.multi_start < 0) throw std::invalid_argument("multi_start must be nonnegative");
    if (!(c.jitter_translation >= 0.0) || !(c.jitter_rotation >= 0.0))
        throw std::invalid_argument("start jitters must be nonnegative");
    if (!(c.jitter_scale_factor >= 1.0))
        throw std::invalid_argument("scale jitter factor must be at least 1");
}

/// One accepted point of the search (the first entry is the start point).
struct FitTraceEntry {
    int eval_index = 0;
    double objective = 0.0;
    std::vector<double> b;
    PoseParams pose;
};

struct FitResult {
    std::vector<double> b;
    PoseParams pose;
    double objective = 0.0;
    int evals = 0;
    bool converged = false;
    Polygon boundary;
    std::vector<FitTraceEntry> trace;
};

/// Data term + regularizer for one probability map. Precomputes
/// sum(I^2) and per-row prefix sums of (1 - 2 I) so one evaluation costs
/// O(landmarks + image height) instead of O(pixels):
/// sum_pixels (I - M)^2 = sum I^2 + sum_{M=1} (1 - 2 I).
class ObjectiveEvaluator {
public:
    ObjectiveEvaluator(const ProbabilityMap& map, const ShapeModel& model, double alpha)
        : model_(&model), alpha_(alpha), width_(map.width), height_(map.height) {
        if (alpha < 0.0) throw std::invalid_argument("alpha must be nonnegative");
        total_sq_ = 0.0;
        prefix_.assign(static_cast<std::size_t>(map.height) * (static_cast<std::size_t>(map.width) + 1),
                       0.0);
        for (int y = 0; y < map.height; ++y) {
            double* row = &prefix_[static_cast<std::size_t>(y) * (static_cast<std::size_t>(map.width) + 1)];
            row[0] = 0.0;
            for (int x = 0; x < map.width; ++x) {
                const double v = map.at(x, y);
                total_sq_ += v * v;
                row[x + 1] = row[x] + (1.0 - 2.0 * v);
            }
        }
        center_ = model.mean_centroid();
    }

    Point2 pivot() const { return center_; }
    double total_map_sq() const { return total_sq_; }

    Polygon shape_polygon(const std::vector<double>& b, const PoseParams& pose) const {
        const LandmarkSet shape = synthesize(*model_, b);
        return Polygon{apply_pose(shape.points(), pose, center_)};
    }

    /// Eq: ||I - M||^2 + alpha * (1/K) * sum |b_i| / sqrt(lambda_i). A shape
    /// that degenerates or leaves the image gives an empty mask and a data
    /// term of sum I^2.
    double evaluate(const std::vector<double>& b, const PoseParams& pose) const {
        const Polygon poly = shape_polygon(b, pose);
        double data = total_sq_;
        detail::for_each_inside_run(poly, width_, height_, [&](int y, int x0, int x1) {
            const double* row = &prefix_[static_cast<std::size_t>(y) * (static_cast<std::size_t>(width_) + 1)];
            data += row[x1] - row[x0];
        });
        double reg = 0.0;
        const std::size_t k = model_->n_modes();
        if (k > 0 && alpha_ > 0.0) {
            double sum = 0.0;
            for (std::size_t i = 0; i < k; ++i) sum += std::abs(b[i]) / std::sqrt(model_->eigenvalues()[i]);
            reg = alpha_ * sum / static_cast<double>(k);
        }
        return data + reg;
    }

private:
    const ShapeModel* model_;
    double alpha_;
    int width_, height_;
    double total_sq_ = 0.0;
    std::vector<double> prefix_; // per row: prefix sums of (1 - 2 I)
    Point2 center_;
};

/// One-shot form of the fitting objective.
inline double objective(const std::vector<double>& b, const PoseParams& pose,
                        const ProbabilityMap& map, const ShapeModel& model, double alpha) {
    return ObjectiveEvaluator(map, model, alpha).evaluate(b, pose);
}

inline double effective_alpha(const FitConfig& config, const ProbabilityMap& map) {
    if (config.alpha >= 0.0) return config.alpha;
    double mean = 0.0;
    for (double v : map.data) mean += v;
    mean /= static_cast<double>(map.data.size());
    return config.alpha_scale * static_cast<double>(map.data.size()) * mean;
}

/// Compass search over (b in sqrt(lambda) units, tx, ty, rotation,
/// log scale). Sweeps the axes in a fixed order, greedily accepting any
/// probe at +/- step that improves the objective; a sweep with no accepted
/// move shrinks every step. b axes are clamped to [-s_fit, s_fit]
/// (unit scale) at every probe.
inline FitResult fit(const ProbabilityMap& map, const ShapeModel& model, const FitConfig& config) {
    validate_fit_config(config);
    const std::size_t k = model.n_modes();
    const std::size_t n_params = k + 4;
    const double alpha = effective_alpha(config, map);
    const ObjectiveEvaluator eval(map, model, alpha);

    const Point2 pivot = eval.pivot();
    std::vector<double> u(n_params, 0.0);
    u[k] = map.width / 2.0 - pivot.x; // start with the mean shape centered
    u[k + 1] = map.height / 2.0 - pivot.y;

    std::vector<double> sqrt_l(k);
    for (std::size_t i = 0; i < k; ++i) sqrt_l[i] = std::sqrt(model.eigenvalues()[i]);
    auto decode_b = [&](const std::vector<double>& v) {
        std::vector<double> b(k);
        for (std::size_t i = 0; i < k; ++i) b[i] = v[i] * sqrt_l[i];
        return b;
    };
    auto decode_pose = [&](const std::vector<double>& v) {
        return PoseParams{v[k], v[k + 1], v[k + 2], std::exp(v[k + 3])};
    };

    FitResult result;
    result.b = decode_b(u);
    result.pose = decode_pose(u);

    bool map_nonzero = false;
    for (double v : map.data) {
        if (v != 0.0) {
            map_nonzero = true;
            break;
        }
    }
    if (!map_nonzero) {
        result.objective = eval.evaluate(result.b, result.pose);
        result.evals = 1;
        result.converged = false;
        result.trace.push_back({1, result.objective, result.b, result.pose});
        result.boundary = eval.shape_polygon(result.b, result.pose);
        return result;
    }

    // Pose axes are swept before shape axes so gross misalignment is taken
    // out by the pose instead of being absorbed into clamped shape modes.
    std::vector<std::size_t> order;
    order.reserve(n_params);
    for (std::size_t i = 0; i < 4; ++i) order.push_back(k + i);
    for (std::size_t i = 0; i < k; ++i) order.push_back(i);

    struct Run {
        std::vector<double> u;
        double objective = 0.0;
        int evals = 0;
        bool converged = false;
        std::vector<FitTraceEntry> trace;
    };
    auto compass = [&](std::vector<double> start) {
        Run run;
        run.u = std::move(start);
        auto evaluate_u = [&](const std::vector<double>& v) {
            ++run.evals;
            return eval.evaluate(decode_b(v), decode_pose(v));
        };
        double current = evaluate_u(run.u);
        run.trace.push_back({run.evals, current, decode_b(run.u), decode_pose(run.u)});

        std::vector<double> steps(n_params);
        for (std::size_t i = 0; i < k; ++i) steps[i] = config.step_b;
        steps[k] = config.step_translation;
        steps[k + 1] = config.step_translation;
        steps[k + 2] = config.step_rotation;
        steps[k + 3] = std::log(config.step_scale_factor);
        auto all_converged = [&]() {
            for (double s : steps) {
                if (s >= config.tolerance) return false;
            }
            return true;
        };

        std::vector<double> probe = run.u;
        std::vector<double> base(n_params), cand(n_params);
        while (!all_converged() && run.evals < config.max_evals) {
            base = run.u;
            bool moved = false;
            for (std::size_t oi = 0; oi < n_params && run.evals < config.max_evals; ++oi) {
                const std::size_t axis = order[oi];
                for (const double sign : {+1.0, -1.0}) {
                    double coord = run.u[axis] + sign * steps[axis];
                    if (axis < k) coord = std::min(config.s_fit, std::max(-config.s_fit, coord));
                    if (coord == run.u[axis]) continue; // clamped onto the current point
                    probe[axis] = coord;
                    const double value = evaluate_u(probe);
                    if (value < current) {
                        run.u[axis] = coord;
                        current = value;
                        moved = true;
                        run.trace.push_back({run.evals, current, decode_b(run.u), decode_pose(run.u)});
                        break; // accept greedily, continue with the next axis
                    }
                    if (run.evals >= config.max_evals) break;
                }
                probe[axis] = run.u[axis];
            }
            if (!moved) {
                for (double& s : steps) s *= config.shrink;
                continue;
            }
            // Pattern moves: extrapolate the net displacement of the sweep to
            // march along valleys (coupled parameters) instead of zigzagging.
            while (run.evals < config.max_evals) {
                bool distinct = false;
                for (std::size_t i = 0; i < n_params; ++i) {
                    double coord = run.u[i] + (run.u[i] - base[i]);
                    if (i < k) coord = std::min(config.s_fit, std::max(-config.s_fit, coord));
                    cand[i] = coord;
                    distinct = distinct || coord != run.u[i];
                }
                if (!distinct) break;
                const double value = evaluate_u(cand);
                if (value >= current) break;
                base = run.u;
                run.u = cand;
                probe = cand;
                current = value;
                run.trace.push_back({run.evals, current, decode_b(run.u), decode_pose(run.u)});
            }
        }
        run.objective = current;
        run.converged = all_converged();
        return run;
    };

    const int n_starts = std::max(1, config.multi_start);
    Run best;
    int total_evals = 0;
    for (int s = 0; s < n_starts; ++s) {
        std::vector<double> start = u;
        if (s > 0) {
            Rng r = Rng(config.multi_start_seed).derive(static_cast<std::uint64_t>(s));
            start[k] += config.jitter_translation * (2.0 * r.uniform01() - 1.0);
            start[k + 1] += config.jitter_translation * (2.0 * r.uniform01() - 1.0);
            start[k + 2] += config.jitter_rotation * (2.0 * r.uniform01() - 1.0);
            start[k + 3] += std::log(config.jitter_scale_factor) * (2.0 * r.uniform01() - 1.0);
        }
        Run run = compass(std::move(start));
        total_evals += run.evals;
        if (s == 0 || run.objective < best.objective) best = std::move(run);
    }

    result.b = decode_b(best.u);
    result.pose = decode_pose(best.u);
    result.objective = best.objective;
    result.evals = total_evals;
    result.converged = best.converged;
    result.trace = std::move(best.trace);
    result.boundary = eval.shape_polygon(result.b, result.pose);
    return result;
}

/// Polygon through the fitted landmarks in landmark order.
inline Polygon result_boundary(const FitResult& result, const ShapeModel& model) {
    const LandmarkSet shape = synthesize(model, result.b);
    Point2 center = model.mean_centroid();
    return Polygon{apply_pose(shape.points(), result.pose, center)};
}

} // namespace smrf
