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
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "smrf/error.hpp"
#include "smrf/features.hpp"
#include "smrf/geometry.hpp"
#include "smrf/image.hpp"
#include "smrf/parallel.hpp"
#include "smrf/random.hpp"
#include "smrf/shape_model.hpp"

namespace smrf {

struct ForestConfig {
    int n_trees = 20;
    int max_depth = 24;
    double sample_fraction = 0.10; // per-tree subsample of the training pool
    int candidates = 100;          // descriptors tried per node
    int n_thresholds = 10;         // tau draws per descriptor
    int min_samples = 8;           // nodes below this become leaves
};

inline void validate_forest_config(const ForestConfig& c) {
    if (c.n_trees < 1) throw std::invalid_argument("n_trees must be >= 1");
    if (c.max_depth < 0) throw std::invalid_argument("max_depth must be >= 0");
    if (!(c.sample_fraction > 0.0) || c.sample_fraction > 1.0)
        throw std::invalid_argument("sample_fraction must be in (0, 1]");
    if (c.candidates < 1) throw std::invalid_argument("candidates must be >= 1");
    if (c.n_thresholds < 1) throw std::invalid_argument("n_thresholds must be >= 1");
    if (c.min_samples < 1) throw std::invalid_argument("min_samples must be >= 1");
}

/// One labeled pixel of one training image.
struct TrainSample {
    std::uint32_t image = 0;
    std::uint16_t x = 0, y = 0;
    std::uint8_t label = 0; // 0 background, 1 myocardium
};

struct TrainSet {
    std::vector<TrainSample> samples;
};

/// Every pixel of every mask, labeled; the pool train_forest subsamples from.
inline TrainSet full_train_set(std::span<const BinaryMask> masks) {
    TrainSet set;
    std::size_t total = 0;
    for (const BinaryMask& m : masks) total += m.data.size();
    set.samples.reserve(total);
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const BinaryMask& m = masks[i];
        for (int y = 0; y < m.height; ++y) {
            for (int x = 0; x < m.width; ++x) {
                set.samples.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint16_t>(x),
                                       static_cast<std::uint16_t>(y), m.at(x, y)});
            }
        }
    }
    return set;
}

/// Flat tree storage; children are node indices, -1 for none.
struct TreeNode {
    bool is_leaf = true;
    FeatureDescriptor desc{};
    double tau = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int64_t count_bg = 0;
    std::int64_t count_myo = 0;
    double probability = 0.0; // count_myo / (count_bg + count_myo)
};

struct Tree {
    std::vector<TreeNode> nodes; // node 0 is the root
};

struct Forest {
    ForestConfig config;
    FeatureConfig features;
    std::vector<Tree> trees;
};

/// Shannon entropy in bits of a binary class count pair.
inline double entropy_bits(std::int64_t n0, std::int64_t n1) {
    const std::int64_t n = n0 + n1;
    if (n <= 0) return 0.0;
    double h = 0.0;
    for (std::int64_t c : {n0, n1}) {
        if (c > 0) {
            const double p = static_cast<double>(c) / static_cast<double>(n);
            h -= p * std::log2(p);
        }
    }
    return h;
}

/// Per-sample responses of one descriptor. Shape descriptors build the
/// segment tables once and query per pixel center; appearance and position
/// go through the per-image contexts.
inline void eval_descriptor_batch(const FeatureDescriptor& desc,
                                  std::span<const TrainSample> samples,
                                  std::span<const FeatureContext* const> ctxs,
                                  const ShapeModel* model, std::vector<double>& out) {
    out.resize(samples.size());
    if (const auto* a = std::get_if<AppearanceFeature>(&desc)) {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const TrainSample& s = samples[i];
            out[i] = ctxs[s.image]->appearance_response(*a, s.x, s.y);
        }
    } else if (const auto* p = std::get_if<PositionFeature>(&desc)) {
        if (p->axis == 0) {
            for (std::size_t i = 0; i < samples.size(); ++i) out[i] = samples[i].x;
        } else {
            for (std::size_t i = 0; i < samples.size(); ++i) out[i] = samples[i].y;
        }
    } else {
        if (model == nullptr) throw std::invalid_argument("shape feature needs a shape model");
        const PolygonDistance pd(sm_polygon(*model, std::get<SmFeature>(desc)));
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const TrainSample& s = samples[i];
            out[i] = pd.signed_at({s.x + 0.5, s.y + 0.5});
        }
    }
}

struct SplitChoice {
    FeatureDescriptor desc{};
    double tau = 0.0;
    double gain = 0.0;
};

/// Best (descriptor, tau) over `candidates` random descriptors with
/// `n_thresholds` tau draws each, tau uniform between the min and max
/// response. Maximizes Shannon information gain; first strict improvement
/// wins ties. On return `responses` holds the winning descriptor's
/// per-sample responses (aligned with `samples`).
inline SplitChoice best_split(std::span<const TrainSample> samples,
                              std::span<const FeatureContext* const> ctxs,
                              const ShapeModel* model, const ForestConfig& config,
                              const FeatureConfig& features, Rng& rng,
                              std::vector<double>& responses) {
    std::int64_t p0 = 0, p1 = 0;
    for (const TrainSample& s : samples) (s.label != 0 ? p1 : p0)++;
    if (p0 == 0 || p1 == 0) throw std::invalid_argument("best_split needs both classes");
    const double h_parent = entropy_bits(p0, p1);
    const double n = static_cast<double>(samples.size());

    SplitChoice best;
    std::vector<double> cur;
    std::vector<double> taus(static_cast<std::size_t>(config.n_thresholds));
    const std::size_t n_bins = taus.size() + 1;
    std::vector<std::int64_t> bin0(n_bins), bin1(n_bins);

    for (int c = 0; c < config.candidates; ++c) {
        if (best.gain >= h_parent - 1e-12) break; // nothing can beat a perfect split
        const FeatureDescriptor desc = sample_descriptor(features.family_weights, model, rng, features);
        eval_descriptor_batch(desc, samples, ctxs, model, cur);
        const auto [mn_it, mx_it] = std::minmax_element(cur.begin(), cur.end());
        const double vmin = *mn_it, vmax = *mx_it;
        for (double& t : taus) t = rng.uniform(vmin, vmax);
        if (vmin == vmax) continue; // constant response, every tau degenerate
        std::sort(taus.begin(), taus.end());

        // Bucket responses once: bin = number of taus <= response. Left
        // counts for tau_j are the suffix sums over bins > j.
        std::fill(bin0.begin(), bin0.end(), 0);
        std::fill(bin1.begin(), bin1.end(), 0);
        for (std::size_t i = 0; i < cur.size(); ++i) {
            const std::size_t bin = static_cast<std::size_t>(
                std::upper_bound(taus.begin(), taus.end(), cur[i]) - taus.begin());
            (samples[i].label != 0 ? bin1 : bin0)[bin]++;
        }
        bool improved = false;
        std::int64_t l0 = 0, l1 = 0;
        for (std::size_t j = taus.size(); j-- > 0;) {
            l0 += bin0[j + 1];
            l1 += bin1[j + 1];
            const double nl = static_cast<double>(l0 + l1);
            const double nr = n - nl;
            const double gain = h_parent - (nl / n) * entropy_bits(l0, l1) -
                                (nr / n) * entropy_bits(p0 - l0, p1 - l1);
            if (gain > best.gain + 1e-15) {
                best.desc = desc;
                best.tau = taus[j];
                best.gain = gain;
                improved = true;
            }
        }
        if (improved) std::swap(cur, responses);
    }
    return best;
}

namespace detail {

struct TreeBuilder {
    std::span<const FeatureContext* const> ctxs;
    const ShapeModel* model;
    const ForestConfig* config;
    const FeatureConfig* features;
    Rng* rng;
    Tree* tree;
    std::vector<TrainSample> samples;
    std::vector<double> responses;
    std::vector<TrainSample> scratch;

    std::int32_t grow(std::size_t lo, std::size_t hi, int depth) {
        std::int64_t n0 = 0, n1 = 0;
        for (std::size_t i = lo; i < hi; ++i) (samples[i].label != 0 ? n1 : n0)++;
        const std::int32_t index = static_cast<std::int32_t>(tree->nodes.size());
        tree->nodes.emplace_back();

        const std::size_t count = hi - lo;
        const bool must_leaf = depth >= config->max_depth ||
                               count < static_cast<std::size_t>(config->min_samples) || n0 == 0 ||
                               n1 == 0;
        SplitChoice choice;
        if (!must_leaf) {
            choice = best_split(std::span<const TrainSample>(samples).subspan(lo, count), ctxs, model,
                                *config, *features, *rng, responses);
        }
        if (must_leaf || choice.gain <= 0.0) {
            TreeNode& leaf = tree->nodes[static_cast<std::size_t>(index)];
            leaf.is_leaf = true;
            leaf.count_bg = n0;
            leaf.count_myo = n1;
            leaf.probability = static_cast<double>(n1) / static_cast<double>(n0 + n1);
            return index;
        }

        // Stable partition by the winning responses: >= tau goes left.
        scratch.resize(count);
        std::size_t n_left = 0, n_right = 0;
        for (std::size_t i = 0; i < count; ++i) {
            if (responses[i] >= choice.tau) samples[lo + n_left++] = samples[lo + i];
            else scratch[n_right++] = samples[lo + i];
        }
        std::copy(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(n_right),
                  samples.begin() + static_cast<std::ptrdiff_t>(lo + n_left));

        {
            TreeNode& node = tree->nodes[static_cast<std::size_t>(index)];
            node.is_leaf = false;
            node.desc = choice.desc;
            node.tau = choice.tau;
        }
        const std::int32_t left = grow(lo, lo + n_left, depth + 1);
        tree->nodes[static_cast<std::size_t>(index)].left = left;
        const std::int32_t right = grow(lo + n_left, hi, depth + 1);
        tree->nodes[static_cast<std::size_t>(index)].right = right;
        return index;
    }
};

} // namespace detail

/// Grows one tree on the given samples with one rng stream.
inline Tree train_tree(std::vector<TrainSample> samples,
                       std::span<const FeatureContext* const> ctxs, const ShapeModel* model,
                       const ForestConfig& config, const FeatureConfig& features, Rng& rng) {
    if (samples.empty()) throw std::invalid_argument("train_tree needs samples");
    Tree tree;
    detail::TreeBuilder builder{ctxs, model, &config, &features, &rng, &tree, std::move(samples),
                                {},   {}};
    builder.grow(0, builder.samples.size(), 0);
    return tree;
}

/// Partition-stable copy problem: two runs with the same seed produce the
/// same forest. Tree t draws its subsample and all its node randomness from
/// the derived stream t of the master seed.
inline Forest train_forest(const TrainSet& set, std::span<const FeatureContext* const> ctxs,
                           const ShapeModel* model, const ForestConfig& config,
                           const FeatureConfig& features, std::uint64_t seed) {
    validate_forest_config(config);
    if (set.samples.empty()) throw DataError("training set is empty");
    for (const TrainSample& s : set.samples) {
        if (s.label > 1) throw DataError("training labels must be 0 or 1");
        if (s.image >= ctxs.size() || !ctxs[s.image]->image().in_bounds(s.x, s.y))
            throw DataError("training sample out of bounds");
    }
    const std::uint32_t n = static_cast<std::uint32_t>(set.samples.size());
    const std::uint32_t k = std::max<std::uint32_t>(
        1, static_cast<std::uint32_t>(std::llround(config.sample_fraction * static_cast<double>(n))));

    Forest forest;
    forest.config = config;
    forest.features = features;
    forest.trees.resize(static_cast<std::size_t>(config.n_trees));
    const Rng master(seed);
    parallel_for(forest.trees.size(), [&](std::size_t t) {
        Rng tree_rng = master.derive(t);
        const std::vector<std::uint32_t> picked = tree_rng.sample_without_replacement(n, std::min(k, n));
        std::vector<TrainSample> subset(picked.size());
        for (std::size_t i = 0; i < picked.size(); ++i) subset[i] = set.samples[picked[i]];
        forest.trees[t] = train_tree(std::move(subset), ctxs, model, config, features, tree_rng);
    });
    return forest;
}

/// Reference per-tree prediction through the generic feature evaluator.
inline double predict_tree(const Tree& tree, const FeatureContext& ctx, int x, int y) {
    std::int32_t i = 0;
    while (!tree.nodes[static_cast<std::size_t>(i)].is_leaf) {
        const TreeNode& node = tree.nodes[static_cast<std::size_t>(i)];
        i = ctx.eval(node.desc, x, y) >= node.tau ? node.left : node.right;
    }
    return tree.nodes[static_cast<std::size_t>(i)].probability;
}

namespace detail {

/// Routing tables for one tree: shape nodes get their segment tables built
/// once so per-pixel evaluation never re-synthesizes the polygon.
class TreeRouter {
public:
    TreeRouter(const Tree& tree, const ShapeModel* model) : tree_(&tree) {
        pd_.resize(tree.nodes.size());
        for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
            const TreeNode& node = tree.nodes[i];
            if (node.is_leaf) continue;
            if (const auto* s = std::get_if<SmFeature>(&node.desc)) {
                if (model == nullptr)
                    throw std::invalid_argument("forest uses shape features but no model was given");
                if (s->b.size() != model->n_modes())
                    throw std::invalid_argument("forest shape features do not match the model");
                pd_[i] = std::make_unique<PolygonDistance>(sm_polygon(*model, *s));
            }
        }
    }

    double value_at(const FeatureContext& ctx, int x, int y) const {
        std::int32_t i = 0;
        while (true) {
            const TreeNode& node = tree_->nodes[static_cast<std::size_t>(i)];
            if (node.is_leaf) return node.probability;
            double response;
            if (const auto* a = std::get_if<AppearanceFeature>(&node.desc)) {
                response = ctx.appearance_response(*a, x, y);
            } else if (const auto* p = std::get_if<PositionFeature>(&node.desc)) {
                response = p->axis == 0 ? static_cast<double>(x) : static_cast<double>(y);
            } else {
                response = pd_[static_cast<std::size_t>(i)]->signed_at({x + 0.5, y + 0.5});
            }
            i = response >= node.tau ? node.left : node.right;
        }
    }

private:
    const Tree* tree_;
    std::vector<std::unique_ptr<PolygonDistance>> pd_;
};

} // namespace detail

/// Mean of the per-tree leaf probabilities at every pixel.
inline ProbabilityMap predict_map(const Forest& forest, const Image& img, const ShapeModel* model) {
    if (forest.trees.empty()) throw std::invalid_argument("forest has no trees");
    const FeatureContext ctx(img, model, forest.features);
    std::vector<detail::TreeRouter> routers;
    routers.reserve(forest.trees.size());
    for (const Tree& t : forest.trees) routers.emplace_back(t, model);

    ProbabilityMap map(img.width, img.height);
    const double inv_trees = 1.0 / static_cast<double>(forest.trees.size());
    parallel_for(static_cast<std::size_t>(img.height), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < img.width; ++x) {
            double sum = 0.0;
            for (const auto& router : routers) sum += router.value_at(ctx, x, y);
            map.at(x, y) = sum * inv_trees;
        }
    });
    return map;
}

namespace detail {

inline nlohmann::json node_to_json(const Tree& tree, std::int32_t index) {
    const TreeNode& node = tree.nodes[static_cast<std::size_t>(index)];
    nlohmann::json j;
    if (node.is_leaf) {
        j["leaf"] = {{"counts", {node.count_bg, node.count_myo}}};
        return j;
    }
    nlohmann::json split = descriptor_to_json(node.desc);
    split["tau"] = node.tau;
    j["split"] = std::move(split);
    j["left"] = node_to_json(tree, node.left);
    j["right"] = node_to_json(tree, node.right);
    return j;
}

inline std::int32_t node_from_json(const nlohmann::json& j, Tree& tree, const std::string& path,
                                   int depth, int max_depth) {
    if (depth > max_depth) throw ParseError(path + ": node deeper than max_depth");
    const std::int32_t index = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    if (j.contains("leaf")) {
        const nlohmann::json& leaf = j.at("leaf");
        if (!leaf.contains("counts") || !leaf.at("counts").is_array() || leaf.at("counts").size() != 2)
            throw ParseError(path + ".leaf: expected counts [background, myocardium]");
        const std::int64_t bg = leaf.at("counts")[0].get<std::int64_t>();
        const std::int64_t myo = leaf.at("counts")[1].get<std::int64_t>();
        if (bg < 0 || myo < 0 || bg + myo < 1)
            throw ParseError(path + ".leaf: counts must be nonnegative and sum to >= 1");
        TreeNode& node = tree.nodes[static_cast<std::size_t>(index)];
        node.is_leaf = true;
        node.count_bg = bg;
        node.count_myo = myo;
        node.probability = static_cast<double>(myo) / static_cast<double>(bg + myo);
        return index;
    }
    if (!j.contains("split")) throw ParseError(path + ": node needs either 'leaf' or 'split'");
    const nlohmann::json& split = j.at("split");
    if (!split.contains("tau")) throw ParseError(path + ".split: missing tau");
    FeatureDescriptor desc;
    try {
        desc = descriptor_from_json(split);
    } catch (const std::exception& e) {
        throw ParseError(path + ".split: " + e.what());
    }
    const double tau = split.at("tau").get<double>();
    if (!std::isfinite(tau)) throw ParseError(path + ".split: tau must be finite");
    if (!j.contains("left") || !j.contains("right"))
        throw ParseError(path + ": split node missing a child");
    {
        TreeNode& node = tree.nodes[static_cast<std::size_t>(index)];
        node.is_leaf = false;
        node.desc = std::move(desc);
        node.tau = tau;
    }
    const std::int32_t left = node_from_json(j.at("left"), tree, path + ".left", depth + 1, max_depth);
    tree.nodes[static_cast<std::size_t>(index)].left = left;
    const std::int32_t right =
        node_from_json(j.at("right"), tree, path + ".right", depth + 1, max_depth);
    tree.nodes[static_cast<std::size_t>(index)].right = right;
    return index;
}

} // namespace detail

inline nlohmann::json forest_config_to_json(const ForestConfig& c) {
    return {{"n_trees", c.n_trees},         {"max_depth", c.max_depth},
            {"sample_fraction", c.sample_fraction}, {"candidates", c.candidates},
            {"n_thresholds", c.n_thresholds},       {"min_samples", c.min_samples}};
}

inline nlohmann::json feature_config_to_json(const FeatureConfig& c) {
    return {{"appearance_radius", c.appearance_radius},
            {"box_max", c.box_max},
            {"s_feature", c.s_feature},
            {"hist_eq_levels", c.hist_eq_levels},
            {"family_weights", c.family_weights}};
}

inline ForestConfig forest_config_from_json(const nlohmann::json& j) {
    try {
        ForestConfig c;
        c.n_trees = j.at("n_trees").get<int>();
        c.max_depth = j.at("max_depth").get<int>();
        c.sample_fraction = j.at("sample_fraction").get<double>();
        c.candidates = j.at("candidates").get<int>();
        c.n_thresholds = j.at("n_thresholds").get<int>();
        c.min_samples = j.at("min_samples").get<int>();
        validate_forest_config(c);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed forest config: ") + e.what());
    }
}

inline FeatureConfig feature_config_from_json(const nlohmann::json& j) {
    try {
        FeatureConfig c;
        c.appearance_radius = j.at("appearance_radius").get<int>();
        c.box_max = j.at("box_max").get<int>();
        c.s_feature = j.at("s_feature").get<double>();
        c.hist_eq_levels = j.at("hist_eq_levels").get<int>();
        const auto w = j.at("family_weights").get<std::vector<double>>();
        if (w.size() != 3) throw ParseError("family_weights must have 3 entries");
        std::copy(w.begin(), w.end(), c.family_weights.begin());
        if (c.appearance_radius < 0 || c.box_max < 1 || c.box_max % 2 == 0)
            throw ParseError("invalid appearance parameter ranges");
        if (!(c.s_feature > 0.0)) throw ParseError("s_feature must be positive");
        if (c.hist_eq_levels < 2) throw ParseError("hist_eq_levels must be >= 2");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed feature config: ") + e.what());
    }
}

inline nlohmann::json forest_to_json(const Forest& forest) {
    nlohmann::json j;
    j["version"] = 1;
    nlohmann::json config = forest_config_to_json(forest.config);
    config["features"] = feature_config_to_json(forest.features);
    j["config"] = std::move(config);
    nlohmann::json trees = nlohmann::json::array();
    for (const Tree& t : forest.trees) trees.push_back(detail::node_to_json(t, 0));
    j["trees"] = std::move(trees);
    return j;
}

inline std::string serialize_forest(const Forest& forest) { return forest_to_json(forest).dump(); }

inline Forest forest_from_json(const nlohmann::json& j) {
    if (!j.contains("version")) throw ParseError("forest: missing version");
    if (!j.at("version").is_number_integer() || j.at("version").get<int>() != 1)
        throw ParseError("forest: unsupported version (expected 1)");
    Forest forest;
    try {
        const nlohmann::json& config = j.at("config");
        forest.config = forest_config_from_json(config);
        forest.features = feature_config_from_json(config.at("features"));
        const nlohmann::json& trees = j.at("trees");
        if (!trees.is_array() || trees.empty()) throw ParseError("forest: trees must be a non-empty array");
        forest.trees.resize(trees.size());
        for (std::size_t t = 0; t < trees.size(); ++t) {
            detail::node_from_json(trees[t], forest.trees[t], "trees[" + std::to_string(t) + "]", 0,
                                   forest.config.max_depth);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed forest file: ") + e.what());
    }
    return forest;
}

inline Forest deserialize_forest(std::string_view bytes) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("forest payload is not valid JSON: ") + e.what());
    }
    return forest_from_json(j);
}

} // namespace smrf
