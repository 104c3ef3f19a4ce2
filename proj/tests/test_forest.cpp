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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "smrf/forest.hpp"

#include "oracles.hpp"

using namespace smrf;
using Catch::Approx;

namespace {

// Two tight clusters in position space: class 0 near (12, 12), class 1 near
// (47, 47). Linearly separable on either axis.
TrainSet blob_train_set() {
    TrainSet set;
    for (int y = 5; y < 21; y += 2) {
        for (int x = 5; x < 21; x += 2) {
            set.samples.push_back({0, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), 0});
        }
    }
    for (int y = 40; y < 56; y += 2) {
        for (int x = 40; x < 56; x += 2) {
            set.samples.push_back({0, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), 1});
        }
    }
    return set;
}

FeatureConfig position_only() {
    FeatureConfig f;
    f.family_weights = {0.0, 1.0, 0.0};
    return f;
}

ShapeModel make_square_model() {
    auto square = [](double cx) {
        return LandmarkSet{{cx, 10.5, cx + 20.0, 10.5, cx + 20.0, 30.5, cx, 30.5}};
    };
    const std::vector<LandmarkSet> shapes{square(9.5), square(13.5)};
    return build_model(shapes, 0.98);
}

std::int64_t tree_depth(const Tree& tree, std::int32_t index = 0) {
    const TreeNode& node = tree.nodes[static_cast<std::size_t>(index)];
    if (node.is_leaf) return 0;
    return 1 + std::max(tree_depth(tree, node.left), tree_depth(tree, node.right));
}

void sum_leaf_counts(const Tree& tree, std::int32_t index, std::int64_t& bg, std::int64_t& myo) {
    const TreeNode& node = tree.nodes[static_cast<std::size_t>(index)];
    if (node.is_leaf) {
        bg += node.count_bg;
        myo += node.count_myo;
        return;
    }
    sum_leaf_counts(tree, node.left, bg, myo);
    sum_leaf_counts(tree, node.right, bg, myo);
}

} // namespace

TEST_CASE("best_split finds the perfect threshold on a separable line", "[forest]") {
    const Image img(64, 64, 0.5);
    const FeatureContext ctx(img, nullptr, position_only());
    const std::vector<const FeatureContext*> ctxs{&ctx};
    // Responses along x: 1, 2, 8, 9 with labels 0, 0, 1, 1.
    std::vector<TrainSample> samples{{0, 1, 0, 0}, {0, 2, 0, 0}, {0, 8, 0, 1}, {0, 9, 0, 1}};
    ForestConfig fc;
    Rng rng(3);
    std::vector<double> responses;
    const SplitChoice choice = best_split(samples, ctxs, nullptr, fc, position_only(), rng, responses);
    CHECK(choice.gain == Approx(1.0)); // H(1/2) = 1 bit
    CHECK(choice.tau > 2.0);
    CHECK(choice.tau <= 8.0);
    REQUIRE(responses.size() == 4);
    // Winner responses align with the sample order.
    int left = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (responses[i] >= choice.tau) {
            ++left;
            CHECK(samples[i].label == 1);
        }
    }
    CHECK(left == 2);
    CHECK(choice.gain ==
          Approx(test::oracle_info_gain(0, 2, 2, 0))); // left = both myocardium samples
}

TEST_CASE("constant features give zero gain and a prior leaf", "[forest]") {
    const Image img(32, 32, 0.5);
    const FeatureContext ctx(img, nullptr, position_only());
    const std::vector<const FeatureContext*> ctxs{&ctx};
    // All samples share one pixel: every position response is constant.
    std::vector<TrainSample> samples{{0, 7, 9, 0}, {0, 7, 9, 0}, {0, 7, 9, 1}};
    ForestConfig fc;
    Rng rng(5);
    std::vector<double> responses;
    const SplitChoice choice = best_split(samples, ctxs, nullptr, fc, position_only(), rng, responses);
    CHECK(choice.gain == 0.0);

    Rng tree_rng(5);
    const Tree tree = train_tree(samples, ctxs, nullptr, fc, position_only(), tree_rng);
    REQUIRE(tree.nodes.size() == 1);
    CHECK(tree.nodes[0].is_leaf);
    CHECK(tree.nodes[0].count_bg == 2);
    CHECK(tree.nodes[0].count_myo == 1);
    CHECK(tree.nodes[0].probability == Approx(1.0 / 3.0));
}

TEST_CASE("split gain is invariant to sample order", "[forest]") {
    const Image img(64, 64, 0.5);
    const FeatureContext ctx(img, nullptr, position_only());
    const std::vector<const FeatureContext*> ctxs{&ctx};
    std::vector<TrainSample> samples = blob_train_set().samples;
    std::vector<TrainSample> shuffled = samples;
    Rng shuffle_rng(9);
    for (std::size_t i = shuffled.size() - 1; i > 0; --i) {
        std::swap(shuffled[i], shuffled[shuffle_rng.uniform_index(i + 1)]);
    }
    ForestConfig fc;
    std::vector<double> r1, r2;
    Rng rng_a(11), rng_b(11);
    const SplitChoice a = best_split(samples, ctxs, nullptr, fc, position_only(), rng_a, r1);
    const SplitChoice b = best_split(shuffled, ctxs, nullptr, fc, position_only(), rng_b, r2);
    CHECK(a.gain == b.gain);
    CHECK(a.tau == b.tau);
}

TEST_CASE("pure input trains to a single leaf", "[forest]") {
    const Image img(32, 32, 0.5);
    const FeatureContext ctx(img, nullptr, position_only());
    const std::vector<const FeatureContext*> ctxs{&ctx};
    std::vector<TrainSample> samples{{0, 1, 1, 0}, {0, 5, 5, 0}, {0, 9, 9, 0}};
    ForestConfig fc;
    Rng rng(13);
    const Tree tree = train_tree(samples, ctxs, nullptr, fc, position_only(), rng);
    REQUIRE(tree.nodes.size() == 1);
    CHECK(tree.nodes[0].is_leaf);
    CHECK(tree.nodes[0].probability == 0.0);
}

TEST_CASE("max_depth 0 yields the class prior", "[forest]") {
    const Image img(64, 64, 0.5);
    const FeatureContext ctx(img, nullptr, position_only());
    const std::vector<const FeatureContext*> ctxs{&ctx};
    ForestConfig fc;
    fc.max_depth = 0;
    Rng rng(15);
    const Tree tree = train_tree(blob_train_set().samples, ctxs, nullptr, fc, position_only(), rng);
    REQUIRE(tree.nodes.size() == 1);
    CHECK(tree.nodes[0].probability == Approx(0.5));
}

TEST_CASE("separable blobs reach perfect training accuracy by depth 4", "[forest]") {
    const Image img(64, 64, 0.5);
    const FeatureContext ctx(img, nullptr, position_only());
    const std::vector<const FeatureContext*> ctxs{&ctx};
    const TrainSet set = blob_train_set();
    ForestConfig fc;
    fc.max_depth = 4;
    Rng rng(17);
    const Tree tree = train_tree(set.samples, ctxs, nullptr, fc, position_only(), rng);
    CHECK(tree_depth(tree) <= 4);
    for (const TrainSample& s : set.samples) {
        const double p = predict_tree(tree, ctx, s.x, s.y);
        CHECK((p >= 0.5 ? 1 : 0) == static_cast<int>(s.label));
    }
    std::int64_t bg = 0, myo = 0;
    sum_leaf_counts(tree, 0, bg, myo);
    CHECK(bg == 64);
    CHECK(myo == 64);
}

TEST_CASE("forest respects depth bound and reproduces from the seed", "[forest]") {
    const Image img(64, 64, 0.5);
    const FeatureContext ctx(img, nullptr, position_only());
    const std::vector<const FeatureContext*> ctxs{&ctx};
    const TrainSet set = blob_train_set();
    ForestConfig fc;
    fc.n_trees = 5;
    fc.max_depth = 6;
    fc.sample_fraction = 0.5;
    const Forest f1 = train_forest(set, ctxs, nullptr, fc, position_only(), 21);
    const Forest f2 = train_forest(set, ctxs, nullptr, fc, position_only(), 21);
    const Forest f3 = train_forest(set, ctxs, nullptr, fc, position_only(), 22);
    REQUIRE(f1.trees.size() == 5);
    for (const Tree& t : f1.trees) CHECK(tree_depth(t) <= 6);
    CHECK(serialize_forest(f1) == serialize_forest(f2));
    CHECK(serialize_forest(f1) != serialize_forest(f3));
}

TEST_CASE("a one-tree forest equals train_tree on the same stream", "[forest]") {
    const Image img(64, 64, 0.5);
    const FeatureContext ctx(img, nullptr, position_only());
    const std::vector<const FeatureContext*> ctxs{&ctx};
    const TrainSet set = blob_train_set();
    ForestConfig fc;
    fc.n_trees = 1;
    fc.sample_fraction = 0.5;
    const std::uint64_t seed = 77;
    const Forest forest = train_forest(set, ctxs, nullptr, fc, position_only(), seed);

    Rng tree_rng = Rng(seed).derive(0);
    const std::uint32_t n = static_cast<std::uint32_t>(set.samples.size());
    const std::uint32_t k =
        static_cast<std::uint32_t>(std::llround(fc.sample_fraction * static_cast<double>(n)));
    const auto picked = tree_rng.sample_without_replacement(n, k);
    std::vector<TrainSample> subset(picked.size());
    for (std::size_t i = 0; i < picked.size(); ++i) subset[i] = set.samples[picked[i]];
    const Tree tree = train_tree(std::move(subset), ctxs, nullptr, fc, position_only(), tree_rng);

    Forest manual;
    manual.config = fc;
    manual.features = position_only();
    manual.trees.push_back(tree);
    CHECK(serialize_forest(forest) == serialize_forest(manual));
}

TEST_CASE("train_forest validates its inputs", "[forest]") {
    const Image img(16, 16, 0.5);
    const FeatureContext ctx(img, nullptr, position_only());
    const std::vector<const FeatureContext*> ctxs{&ctx};
    ForestConfig fc;
    CHECK_THROWS_AS(train_forest(TrainSet{}, ctxs, nullptr, fc, position_only(), 1), DataError);
    TrainSet bad_label;
    bad_label.samples.push_back({0, 1, 1, 2});
    CHECK_THROWS_AS(train_forest(bad_label, ctxs, nullptr, fc, position_only(), 1), DataError);
    TrainSet oob;
    oob.samples.push_back({0, 99, 1, 1});
    CHECK_THROWS_AS(train_forest(oob, ctxs, nullptr, fc, position_only(), 1), DataError);
    ForestConfig zero_trees;
    zero_trees.n_trees = 0;
    CHECK_THROWS_AS(train_forest(blob_train_set(), ctxs, nullptr, zero_trees, position_only(), 1),
                    std::invalid_argument);
}

TEST_CASE("a single pure-myocardium leaf predicts an all-ones map", "[forest]") {
    Forest forest;
    forest.config.n_trees = 1;
    Tree tree;
    TreeNode leaf;
    leaf.is_leaf = true;
    leaf.count_bg = 0;
    leaf.count_myo = 5;
    leaf.probability = 1.0;
    tree.nodes.push_back(leaf);
    forest.trees.push_back(tree);
    const Image img(8, 8, 0.3);
    const ProbabilityMap map = predict_map(forest, img, nullptr);
    for (double v : map.data) CHECK(v == 1.0);
}

TEST_CASE("predict_map is the exact per-tree mean and stays in [0,1]", "[forest]") {
    const ShapeModel model = make_square_model();
    Rng noise(23);
    Image img(48, 48);
    for (double& v : img.data) v = noise.uniform01();
    const BinaryMask mask = rasterize(landmarks_to_polygon(model.mean_shape()), 48, 48);
    FeatureConfig feat;
    feat.family_weights = {1.0, 0.0, 1.0};
    feat.appearance_radius = 6;
    const FeatureContext ctx(img, &model, feat);
    const std::vector<const FeatureContext*> ctxs{&ctx};
    const std::vector<BinaryMask> masks{mask};
    ForestConfig fc;
    fc.n_trees = 4;
    fc.max_depth = 6;
    fc.sample_fraction = 0.1;
    fc.candidates = 20;
    const Forest forest = train_forest(full_train_set(masks), ctxs, &model, fc, feat, 29);

    const ProbabilityMap map = predict_map(forest, img, &model);
    Rng pick(31);
    for (int it = 0; it < 100; ++it) {
        const int x = static_cast<int>(pick.uniform_index(48));
        const int y = static_cast<int>(pick.uniform_index(48));
        double sum = 0.0;
        for (const Tree& t : forest.trees) sum += predict_tree(t, ctx, x, y);
        CHECK(map.at(x, y) == sum / static_cast<double>(forest.trees.size()));
    }
    for (double v : map.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("duplicating every tree leaves the map unchanged", "[forest]") {
    const Image img(64, 64, 0.5);
    const FeatureContext ctx(img, nullptr, position_only());
    const std::vector<const FeatureContext*> ctxs{&ctx};
    ForestConfig fc;
    fc.n_trees = 3;
    fc.max_depth = 5;
    fc.sample_fraction = 1.0;
    const Forest forest = train_forest(blob_train_set(), ctxs, nullptr, fc, position_only(), 37);
    Forest doubled = forest;
    doubled.trees.insert(doubled.trees.end(), forest.trees.begin(), forest.trees.end());
    const ProbabilityMap a = predict_map(forest, img, nullptr);
    const ProbabilityMap b = predict_map(doubled, img, nullptr);
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == Approx(b.data[i]).margin(1e-12));
}

TEST_CASE("batch descriptor evaluation matches the generic evaluator", "[forest]") {
    const ShapeModel model = make_square_model();
    Rng noise(41);
    Image img(40, 40);
    for (double& v : img.data) v = noise.uniform01();
    FeatureConfig feat;
    feat.appearance_radius = 8;
    const FeatureContext ctx(img, &model, feat);
    const std::vector<const FeatureContext*> ctxs{&ctx};
    std::vector<TrainSample> samples;
    Rng pick(43);
    for (int i = 0; i < 60; ++i) {
        samples.push_back({0, static_cast<std::uint16_t>(pick.uniform_index(40)),
                           static_cast<std::uint16_t>(pick.uniform_index(40)),
                           static_cast<std::uint8_t>(pick.uniform_index(2))});
    }
    Rng desc_rng(47);
    std::vector<double> batch;
    for (int it = 0; it < 40; ++it) {
        const FeatureDescriptor desc = sample_descriptor({1, 1, 1}, &model, desc_rng, feat);
        eval_descriptor_batch(desc, samples, ctxs, &model, batch);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            CHECK(batch[i] == ctx.eval(desc, samples[i].x, samples[i].y));
        }
    }
}

TEST_CASE("forest serialization round-trips predictions exactly", "[forest]") {
    const ShapeModel model = make_square_model();
    Rng noise(53);
    Image img(40, 40);
    for (double& v : img.data) v = noise.uniform01();
    const BinaryMask mask = rasterize(landmarks_to_polygon(model.mean_shape()), 40, 40);
    FeatureConfig feat;
    feat.family_weights = {1.0, 1.0, 1.0};
    feat.appearance_radius = 5;
    const FeatureContext ctx(img, &model, feat);
    const std::vector<const FeatureContext*> ctxs{&ctx};
    ForestConfig fc;
    fc.n_trees = 3;
    fc.max_depth = 5;
    fc.sample_fraction = 0.2;
    fc.candidates = 15;
    const std::vector<BinaryMask> masks{mask};
    const Forest forest = train_forest(full_train_set(masks), ctxs, &model, fc, feat, 59);

    const std::string bytes = serialize_forest(forest);
    const Forest back = deserialize_forest(bytes);
    CHECK(back.config.n_trees == fc.n_trees);
    CHECK(back.config.sample_fraction == fc.sample_fraction);
    CHECK(back.features.appearance_radius == feat.appearance_radius);
    const ProbabilityMap a = predict_map(forest, img, &model);
    const ProbabilityMap b = predict_map(back, img, &model);
    CHECK(a == b);
    CHECK(serialize_forest(back) == bytes);
}

TEST_CASE("malformed forest payloads fail with located errors", "[forest]") {
    const Image img(64, 64, 0.5);
    const FeatureContext ctx(img, nullptr, position_only());
    const std::vector<const FeatureContext*> ctxs{&ctx};
    ForestConfig fc;
    fc.n_trees = 2;
    fc.max_depth = 4;
    fc.sample_fraction = 1.0;
    const Forest forest = train_forest(blob_train_set(), ctxs, nullptr, fc, position_only(), 61);
    const std::string bytes = serialize_forest(forest);

    SECTION("truncated payload") {
        CHECK_THROWS_AS(deserialize_forest(bytes.substr(0, bytes.size() / 2)), ParseError);
    }
    SECTION("unsupported version") {
        nlohmann::json j = forest_to_json(forest);
        j["version"] = 2;
        CHECK_THROWS_WITH(forest_from_json(j), Catch::Matchers::ContainsSubstring("version"));
    }
    SECTION("missing tau carries the node path") {
        nlohmann::json j = forest_to_json(forest);
        j["trees"][0]["split"].erase("tau");
        CHECK_THROWS_WITH(forest_from_json(j), Catch::Matchers::ContainsSubstring("trees[0]"));
    }
    SECTION("bad leaf counts") {
        nlohmann::json j = forest_to_json(forest);
        nlohmann::json* node = &j["trees"][1];
        while (!node->contains("leaf")) node = &(*node)["left"];
        (*node)["leaf"]["counts"] = {0, 0};
        CHECK_THROWS_AS(forest_from_json(j), ParseError);
    }
}
