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
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "smrf/error.hpp"
#include "smrf/geometry.hpp"
#include "smrf/random.hpp"

namespace smrf {

/// Ordered 2D landmark coordinates of one boundary, flattened as
/// (x1, y1, ..., xN, yN) in pixels.
struct LandmarkSet {
    std::vector<double> coords;

    std::size_t n_landmarks() const { return coords.size() / 2; }

    std::vector<Point2> points() const {
        std::vector<Point2> pts(n_landmarks());
        for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {coords[2 * i], coords[2 * i + 1]};
        return pts;
    }

    static LandmarkSet from_points(std::span<const Point2> pts) {
        LandmarkSet ls;
        ls.coords.reserve(pts.size() * 2);
        for (const Point2& p : pts) {
            ls.coords.push_back(p.x);
            ls.coords.push_back(p.y);
        }
        return ls;
    }
};

inline void validate_landmarks(const LandmarkSet& ls) {
    if (ls.coords.size() % 2 != 0) throw std::invalid_argument("landmark vector length must be even");
    if (ls.n_landmarks() < 3) throw std::invalid_argument("need at least 3 landmarks");
    for (double c : ls.coords) {
        if (!std::isfinite(c)) throw std::invalid_argument("landmark coordinate is not finite");
    }
}

inline Polygon landmarks_to_polygon(const LandmarkSet& ls) {
    Polygon poly{ls.points()};
    validate_polygon(poly);
    return poly;
}

/// Linear point distribution model: shapes are mean + sum_i b_i * mode_i,
/// with the modes orthonormal and ordered by decreasing variance.
class ShapeModel {
public:
    ShapeModel() = default;
    ShapeModel(std::vector<double> mean, std::vector<std::vector<double>> modes,
               std::vector<double> eigvals, bool degenerate, double total_variance)
        : mean_(std::move(mean)),
          modes_(std::move(modes)),
          eigvals_(std::move(eigvals)),
          degenerate_(degenerate),
          total_variance_(total_variance) {}

    std::size_t dim() const { return mean_.size(); }
    std::size_t n_landmarks() const { return mean_.size() / 2; }
    std::size_t n_modes() const { return eigvals_.size(); }
    bool degenerate() const { return degenerate_; }

    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& eigenvalues() const { return eigvals_; }
    /// Mode i as a 2N-vector (row-per-mode layout).
    const std::vector<double>& mode(std::size_t i) const { return modes_[i]; }

    /// Total variance of all retained nonzero modes at build time (0 when the
    /// model was loaded from a file).
    double total_variance() const { return total_variance_; }

    LandmarkSet mean_shape() const { return LandmarkSet{mean_}; }

    Point2 mean_centroid() const {
        std::vector<Point2> pts = mean_shape().points();
        return centroid(pts);
    }

private:
    std::vector<double> mean_;
    std::vector<std::vector<double>> modes_; // K x 2N
    std::vector<double> eigvals_;            // K, descending
    bool degenerate_ = false;
    double total_variance_ = 0.0;
};

/// Mode weights b plus the clamping multiplier that defines their
/// plausibility box |b_i| <= bound_s * sqrt(lambda_i).
struct ShapeParams {
    std::vector<double> b;
    double bound_s = 3.0;
};

/// PCA of the training shapes. Keeps the smallest leading set of modes whose
/// cumulative variance reaches variance_target; eigenvalues below
/// 1e-10 * lambda_1 are treated as numerical noise and dropped first.
inline ShapeModel build_model(std::span<const LandmarkSet> shapes, double variance_target) {
    if (shapes.size() < 2) throw std::invalid_argument("build_model needs at least 2 shapes");
    if (!(variance_target > 0.0) || variance_target > 1.0)
        throw std::invalid_argument("variance_target must be in (0, 1]");
    validate_landmarks(shapes[0]);
    const std::size_t dim = shapes[0].coords.size();
    for (const LandmarkSet& s : shapes) {
        validate_landmarks(s);
        if (s.coords.size() != dim) throw DataError("landmark sets have mismatched landmark counts");
    }
    const std::size_t m = shapes.size();

    std::vector<double> mean(dim, 0.0);
    for (const LandmarkSet& s : shapes) {
        for (std::size_t i = 0; i < dim; ++i) mean[i] += s.coords[i];
    }
    for (double& v : mean) v /= static_cast<double>(m);

    Eigen::MatrixXd centered(dim, m);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < dim; ++i) centered(i, j) = shapes[j].coords[i] - mean[i];
    }
    // Sample covariance, divisor M - 1.
    const Eigen::MatrixXd cov = (centered * centered.transpose()) / static_cast<double>(m - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw NumericError("eigendecomposition failed");

    // Eigen returns ascending order; collect descending.
    const Eigen::VectorXd& vals = solver.eigenvalues();
    const Eigen::MatrixXd& vecs = solver.eigenvectors();
    const double lambda_max = vals(static_cast<Eigen::Index>(dim) - 1);
    if (!(lambda_max > 0.0)) {
        return ShapeModel(std::move(mean), {}, {}, /*degenerate=*/true, 0.0);
    }
    const double discard_below = 1e-10 * lambda_max;
    std::vector<double> kept_vals;
    std::vector<std::vector<double>> kept_modes;
    double total = 0.0;
    for (Eigen::Index i = static_cast<Eigen::Index>(dim) - 1; i >= 0; --i) {
        const double lambda = vals(i);
        if (lambda <= discard_below) break;
        total += lambda;
        kept_vals.push_back(lambda);
        std::vector<double> mode(dim);
        // Sign convention: the largest-magnitude component is positive.
        Eigen::Index peak = 0;
        vecs.col(i).cwiseAbs().maxCoeff(&peak);
        const double flip = vecs(peak, i) < 0.0 ? -1.0 : 1.0;
        for (std::size_t r = 0; r < dim; ++r) mode[r] = flip * vecs(static_cast<Eigen::Index>(r), i);
        kept_modes.push_back(std::move(mode));
    }

    std::size_t k = 0;
    double cum = 0.0;
    while (k < kept_vals.size()) {
        cum += kept_vals[k];
        ++k;
        if (cum / total >= variance_target) break;
    }
    kept_vals.resize(k);
    kept_modes.resize(k);
    return ShapeModel(std::move(mean), std::move(kept_modes), std::move(kept_vals),
                      /*degenerate=*/false, total);
}

/// x = mean + P b.
inline LandmarkSet synthesize(const ShapeModel& model, std::span<const double> b) {
    if (b.size() != model.n_modes())
        throw std::invalid_argument("shape parameter length does not match mode count");
    LandmarkSet out{model.mean()};
    for (std::size_t i = 0; i < b.size(); ++i) {
        const std::vector<double>& mode = model.mode(i);
        const double w = b[i];
        for (std::size_t r = 0; r < out.coords.size(); ++r) out.coords[r] += w * mode[r];
    }
    return out;
}

inline LandmarkSet synthesize(const ShapeModel& model, const ShapeParams& params) {
    return synthesize(model, params.b);
}

/// b = P^T (x - mean): least-squares mode weights for a shape.
inline std::vector<double> project_params(const ShapeModel& model, const LandmarkSet& shape) {
    if (shape.coords.size() != model.dim())
        throw std::invalid_argument("shape dimension does not match model");
    std::vector<double> b(model.n_modes(), 0.0);
    for (std::size_t i = 0; i < b.size(); ++i) {
        const std::vector<double>& mode = model.mode(i);
        double dot = 0.0;
        for (std::size_t r = 0; r < mode.size(); ++r) dot += mode[r] * (shape.coords[r] - model.mean()[r]);
        b[i] = dot;
    }
    return b;
}

/// Clips every b_i into [-s sqrt(lambda_i), +s sqrt(lambda_i)].
inline ShapeParams clamp_params(const ShapeParams& params, const ShapeModel& model, double s) {
    if (!(s > 0.0)) throw std::invalid_argument("clamp multiplier must be positive");
    if (params.b.size() != model.n_modes())
        throw std::invalid_argument("shape parameter length does not match mode count");
    ShapeParams out = params;
    for (std::size_t i = 0; i < out.b.size(); ++i) {
        const double bound = s * std::sqrt(model.eigenvalues()[i]);
        out.b[i] = std::min(bound, std::max(-bound, out.b[i]));
    }
    return out;
}

/// Independent uniform draws b_i ~ U(-s sqrt(lambda_i), +s sqrt(lambda_i)).
inline ShapeParams sample_params(const ShapeModel& model, double s, Rng& rng) {
    if (!(s > 0.0)) throw std::invalid_argument("sampling multiplier must be positive");
    ShapeParams params;
    params.bound_s = s;
    params.b.resize(model.n_modes());
    for (std::size_t i = 0; i < params.b.size(); ++i) {
        const double bound = s * std::sqrt(model.eigenvalues()[i]);
        params.b[i] = rng.uniform(-bound, bound);
    }
    return params;
}

inline nlohmann::json model_to_json(const ShapeModel& model) {
    nlohmann::json j;
    j["n_landmarks"] = model.n_landmarks();
    j["mean"] = model.mean();
    j["eigvals"] = model.eigenvalues();
    nlohmann::json vecs = nlohmann::json::array();
    for (std::size_t i = 0; i < model.n_modes(); ++i) vecs.push_back(model.mode(i));
    j["eigvecs"] = vecs;
    return j;
}

inline ShapeModel model_from_json(const nlohmann::json& j) {
    try {
        const std::size_t n = j.at("n_landmarks").get<std::size_t>();
        std::vector<double> mean = j.at("mean").get<std::vector<double>>();
        std::vector<double> eigvals = j.at("eigvals").get<std::vector<double>>();
        auto eigvecs = j.at("eigvecs").get<std::vector<std::vector<double>>>();
        if (mean.size() != 2 * n) throw ParseError("model mean length does not match n_landmarks");
        if (eigvecs.size() != eigvals.size()) throw ParseError("model eigvecs/eigvals count mismatch");
        for (std::size_t i = 0; i < eigvals.size(); ++i) {
            if (!(eigvals[i] > 0.0)) throw ParseError("model eigenvalues must be positive");
            if (i > 0 && eigvals[i] > eigvals[i - 1] + 1e-12)
                throw ParseError("model eigenvalues must be descending");
            if (eigvecs[i].size() != 2 * n) throw ParseError("model eigvec length does not match n_landmarks");
        }
        const bool degenerate = eigvals.empty();
        return ShapeModel(std::move(mean), std::move(eigvecs), std::move(eigvals), degenerate, 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed model file: ") + e.what());
    }
}

inline nlohmann::json landmarks_to_json(const LandmarkSet& ls) {
    nlohmann::json j;
    j["n"] = ls.n_landmarks();
    nlohmann::json pts = nlohmann::json::array();
    for (std::size_t i = 0; i < ls.n_landmarks(); ++i) {
        pts.push_back({ls.coords[2 * i], ls.coords[2 * i + 1]});
    }
    j["points"] = pts;
    return j;
}

inline LandmarkSet landmarks_from_json(const nlohmann::json& j) {
    try {
        const std::size_t n = j.at("n").get<std::size_t>();
        const auto pts = j.at("points").get<std::vector<std::vector<double>>>();
        if (pts.size() != n) throw ParseError("landmark count does not match point list");
        LandmarkSet ls;
        ls.coords.reserve(2 * n);
        for (const auto& p : pts) {
            if (p.size() != 2) throw ParseError("landmark point must have 2 coordinates");
            ls.coords.push_back(p[0]);
            ls.coords.push_back(p[1]);
        }
        validate_landmarks(ls);
        return ls;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed landmarks file: ") + e.what());
    }
}

} // namespace smrf
