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

// Batch driver. Every subcommand is deterministic given its inputs and the
// master seed; primary outputs (CSV/JSON/PGM/PFM) are byte-stable.
//
// Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>

#include "smrf/smrf.hpp"

namespace {

struct GlobalArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<double> pixel_spacing_mm;
    std::string trace_path;
    int threads = 0;
};

void add_global_flags(CLI::App* cmd, GlobalArgs& g) {
    cmd->add_option("--config", g.config_path, "Run configuration JSON file");
    cmd->add_option("--seed", g.seed, "Master seed override");
    cmd->add_option("--pixel-spacing-mm", g.pixel_spacing_mm, "Report mm metrics at this pixel spacing");
    cmd->add_option("--trace", g.trace_path, "Write the fit objective trace CSV here");
    cmd->add_option("--threads", g.threads, "Worker threads (0 = hardware)")->check(CLI::NonNegativeNumber);
}

smrf::RunConfig resolve_config(const GlobalArgs& g) {
    smrf::RunConfig config;
    if (!g.config_path.empty()) config = smrf::load_run_config(g.config_path);
    if (g.seed) config.seed = *g.seed;
    if (g.pixel_spacing_mm) config.pixel_spacing_mm = *g.pixel_spacing_mm;
    smrf::validate_run_config(config);
    smrf::thread_count() = static_cast<std::size_t>(g.threads);
    return config;
}

bool forest_has_shape_splits(const smrf::Forest& forest) {
    for (const smrf::Tree& tree : forest.trees)
        for (const smrf::TreeNode& node : tree.nodes)
            if (!node.is_leaf && std::holds_alternative<smrf::SmFeature>(node.desc)) return true;
    return false;
}

std::array<std::size_t, 3> descriptor_census(const smrf::Forest& forest) {
    std::array<std::size_t, 3> counts{0, 0, 0};
    for (const smrf::Tree& tree : forest.trees)
        for (const smrf::TreeNode& node : tree.nodes)
            if (!node.is_leaf) counts[node.desc.index()]++;
    return counts;
}

smrf::Polygon polygon_from_file(const std::filesystem::path& path) {
    return smrf::landmarks_to_polygon(smrf::landmarks_from_json(smrf::load_json(path)));
}

void write_polygon_file(const std::filesystem::path& path, const smrf::Polygon& poly) {
    smrf::LandmarkSet ls;
    ls.coords.reserve(poly.vertices.size() * 2);
    for (const smrf::Point2& p : poly.vertices) {
        ls.coords.push_back(p.x);
        ls.coords.push_back(p.y);
    }
    smrf::save_json(path, smrf::landmarks_to_json(ls));
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

int cmd_synth(const GlobalArgs& g, const std::string& spec_path, int count,
              const std::filesystem::path& out_dir) {
    if (count < 1) throw std::invalid_argument("--count must be >= 1");
    smrf::PhantomSpec spec;
    if (!spec_path.empty()) spec = smrf::phantom_spec_from_json(smrf::load_json(spec_path));
    if (g.seed) spec.seed = *g.seed;
    const auto items = smrf::generate_dataset(spec, count);
    const std::uint64_t checksum = smrf::write_dataset(out_dir, spec, items);
    std::printf("items=%d checksum=%016" PRIx64 "\n", count, checksum);
    return 0;
}

int cmd_build_model(const GlobalArgs& g, const std::vector<std::string>& files,
                    double variance_target, const std::filesystem::path& out) {
    (void)g;
    if (files.size() < 2) throw std::invalid_argument("need at least 2 landmark files");
    std::vector<smrf::LandmarkSet> shapes;
    shapes.reserve(files.size());
    for (const std::string& f : files) shapes.push_back(smrf::landmarks_from_json(smrf::load_json(f)));
    const smrf::ShapeModel model = smrf::build_model(shapes, variance_target);
    smrf::save_json(out, smrf::model_to_json(model));
    std::printf("K=%zu\n", model.n_modes());
    double cumulative = 0.0;
    for (std::size_t i = 0; i < model.n_modes(); ++i) {
        const double fraction =
            model.total_variance() > 0.0 ? model.eigenvalues()[i] / model.total_variance() : 0.0;
        cumulative += fraction;
        std::printf("mode %zu: lambda=%s fraction=%s cumulative=%s\n", i + 1,
                    fixed(model.eigenvalues()[i], 6).c_str(), fixed(fraction, 6).c_str(),
                    fixed(cumulative, 6).c_str());
    }
    return 0;
}

int cmd_train(const GlobalArgs& g, const std::filesystem::path& dataset_dir, const std::string& method,
              const std::string& model_path, const std::filesystem::path& out) {
    const smrf::RunConfig config = resolve_config(g);
    const std::array<double, 3> weights = smrf::method_weights(method); // validates the name
    if (method == "smrf" && model_path.empty())
        throw std::invalid_argument("method smrf needs --model");
    const smrf::Dataset ds = smrf::read_dataset(dataset_dir);
    std::optional<smrf::ShapeModel> model;
    if (!model_path.empty()) model = smrf::model_from_json(smrf::load_json(model_path));

    smrf::FeatureConfig features = config.features;
    features.family_weights = weights;
    std::vector<std::size_t> all(ds.items.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const smrf::ShapeModel* model_ptr = model ? &*model : nullptr;
    std::vector<smrf::BinaryMask> masks;
    masks.reserve(ds.items.size());
    for (const auto& item : ds.items) masks.push_back(item.mask);
    const smrf::TrainSet pool = smrf::full_train_set(masks);
    std::vector<smrf::SmCache> caches(ds.items.size());
    std::vector<smrf::FeatureContext> ctxs;
    ctxs.reserve(ds.items.size());
    for (std::size_t i = 0; i < ds.items.size(); ++i)
        ctxs.emplace_back(ds.items[i].image, model_ptr, features, &caches[i]);
    std::vector<const smrf::FeatureContext*> ptrs;
    for (const auto& c : ctxs) ptrs.push_back(&c);

    const smrf::Forest forest =
        smrf::train_forest(pool, ptrs, model_ptr, config.forest, features, config.seed);
    smrf::write_file_bytes(out, smrf::serialize_forest(forest));
    const auto census = descriptor_census(forest);
    std::printf("splits: appearance=%zu position=%zu shape=%zu\n", census[0], census[1], census[2]);
    return 0;
}

int cmd_predict(const GlobalArgs& g, const std::filesystem::path& forest_path,
                const std::filesystem::path& image_path, const std::string& model_path,
                const std::filesystem::path& out, const std::string& pgm_out) {
    resolve_config(g);
    const smrf::Forest forest = smrf::deserialize_forest(smrf::read_file_bytes(forest_path));
    const smrf::Image image = smrf::read_pgm(image_path);
    std::optional<smrf::ShapeModel> model;
    if (!model_path.empty()) model = smrf::model_from_json(smrf::load_json(model_path));
    if (forest_has_shape_splits(forest) && !model)
        throw std::invalid_argument("forest uses shape features; pass --model");
    const smrf::ProbabilityMap map = smrf::predict_map(forest, image, model ? &*model : nullptr);
    smrf::write_pfm(out, map);
    if (!pgm_out.empty()) smrf::write_pgm(pgm_out, map);
    double mean = 0.0;
    for (double v : map.data) mean += v;
    std::printf("map %dx%d mean=%s\n", map.width, map.height, fixed(mean / map.data.size(), 6).c_str());
    return 0;
}

int cmd_fit(const GlobalArgs& g, const std::filesystem::path& map_path, const std::string& model_path,
            const std::filesystem::path& out_boundary, const std::string& out_mask) {
    const smrf::RunConfig config = resolve_config(g);
    const smrf::ProbabilityMap map = smrf::read_pfm(map_path);
    const smrf::ShapeModel model = smrf::model_from_json(smrf::load_json(model_path));
    const smrf::FitResult result = smrf::fit(map, model, config.fit);
    const smrf::Polygon boundary = smrf::result_boundary(result, model);
    write_polygon_file(out_boundary, boundary);
    if (!out_mask.empty()) smrf::write_pgm(out_mask, smrf::rasterize(boundary, map.width, map.height));
    if (!g.trace_path.empty()) {
        std::string csv = "eval_index,objective";
        for (std::size_t i = 0; i < model.n_modes(); ++i) csv += ",b" + std::to_string(i);
        csv += ",tx,ty,rot,scale\n";
        for (const smrf::FitTraceEntry& e : result.trace) {
            csv += std::to_string(e.eval_index) + "," + fixed(e.objective, 6);
            for (double b : e.b) csv += "," + fixed(b, 6);
            csv += "," + fixed(e.pose.tx, 6) + "," + fixed(e.pose.ty, 6) + "," +
                   fixed(e.pose.rotation, 6) + "," + fixed(e.pose.scale, 6) + "\n";
        }
        smrf::write_file_bytes(g.trace_path, csv);
    }
    std::printf("objective=%s evals=%d converged=%d\n", fixed(result.objective, 6).c_str(),
                result.evals, result.converged ? 1 : 0);
    return 0;
}

int cmd_eval(const GlobalArgs& g, const std::filesystem::path& pred_mask_path,
             const std::filesystem::path& truth_mask_path, const std::string& pred_boundary_path,
             const std::string& truth_boundary_path, const std::filesystem::path& out) {
    const smrf::RunConfig config = resolve_config(g);
    const smrf::BinaryMask pred = smrf::read_mask_pgm(pred_mask_path);
    const smrf::BinaryMask truth = smrf::read_mask_pgm(truth_mask_path);
    const smrf::MaskMetrics masks = smrf::mask_metrics(pred, truth);
    smrf::BoundaryMetrics bounds;
    bounds.mad_px = std::numeric_limits<double>::quiet_NaN();
    bounds.hd_px = std::numeric_limits<double>::quiet_NaN();
    if (!pred_boundary_path.empty() != !truth_boundary_path.empty())
        throw std::invalid_argument("pass both boundary files or neither");
    if (!pred_boundary_path.empty())
        bounds = smrf::boundary_distance(polygon_from_file(pred_boundary_path),
                                         polygon_from_file(truth_boundary_path));
    const std::optional<double> spacing = config.pixel_spacing_mm > 0.0
                                              ? std::optional<double>(config.pixel_spacing_mm)
                                              : std::nullopt;
    const smrf::MetricsReport r = smrf::make_report(masks, bounds, spacing);
    std::string csv = "accuracy,dice,jaccard,mad_px,hd_px";
    if (spacing) csv += ",mad_mm,hd_mm";
    csv += "\n" + fixed(r.accuracy, 6) + "," + fixed(r.dice, 6) + "," + fixed(r.jaccard, 6) + "," +
           fixed(r.mad_px, 6) + "," + fixed(r.hd_px, 6);
    if (spacing) csv += "," + fixed(*r.mad_mm, 6) + "," + fixed(*r.hd_mm, 6);
    csv += "\n";
    smrf::write_file_bytes(out, csv);
    std::printf("%s", csv.c_str());
    return 0;
}

int cmd_loocv(const GlobalArgs& g, const std::filesystem::path& dataset_dir,
              const std::vector<std::string>& methods, const std::filesystem::path& out) {
    const smrf::RunConfig config = resolve_config(g);
    const smrf::Dataset ds = smrf::read_dataset(dataset_dir);
    const smrf::LoocvResult result = smrf::loocv(ds.items, methods, config);
    smrf::write_file_bytes(out, smrf::loocv_csv(result));
    for (const smrf::MethodSummary& s : result.summaries)
        std::printf("%s: dice=%s±%s jaccard=%s±%s mad_px=%s±%s hd_px=%s±%s\n", s.method.c_str(),
                    fixed(s.mean.dice, 4).c_str(), fixed(s.sd.dice, 4).c_str(),
                    fixed(s.mean.jaccard, 4).c_str(), fixed(s.sd.jaccard, 4).c_str(),
                    fixed(s.mean.mad_px, 4).c_str(), fixed(s.sd.mad_px, 4).c_str(),
                    fixed(s.mean.hd_px, 4).c_str(), fixed(s.sd.hd_px, 4).c_str());
    return 0;
}

int cmd_depth_sweep(const GlobalArgs& g, const std::filesystem::path& dataset_dir,
                    const std::vector<std::string>& methods, const std::vector<int>& depths,
                    const std::filesystem::path& out) {
    const smrf::RunConfig config = resolve_config(g);
    const smrf::Dataset ds = smrf::read_dataset(dataset_dir);
    const auto rows = smrf::depth_sweep(ds.items, methods, depths, config);
    smrf::write_file_bytes(out, smrf::depth_sweep_csv(rows));
    for (const smrf::DepthSweepRow& r : rows)
        std::printf("depth=%d %s jaccard=%s\n", r.depth, r.method.c_str(),
                    fixed(r.mean_jaccard, 6).c_str());
    return 0;
}

int cmd_config(const GlobalArgs& g, const std::string& out) {
    const smrf::RunConfig config = resolve_config(g);
    const std::string text = smrf::run_config_to_json(config).dump(2) + "\n";
    if (!out.empty()) smrf::write_file_bytes(out, text);
    std::printf("%s", text.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Shape-model-guided random forest segmentation toolkit"};
    app.require_subcommand(1);
    GlobalArgs g;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    std::string synth_spec;
    int synth_count = 15;
    std::string synth_out;
    synth->add_option("--spec", synth_spec, "Phantom spec JSON (defaults embedded)");
    synth->add_option("--count", synth_count, "Number of items");
    synth->add_option("--out", synth_out, "Output directory")->required();
    add_global_flags(synth, g);

    auto* build = app.add_subcommand("build-model", "Build a PCA shape model from landmark files");
    std::vector<std::string> build_files;
    double build_target = 0.98;
    std::string build_out;
    build->add_option("files", build_files, "Landmark JSON files")->required();
    build->add_option("--variance-target", build_target, "Cumulative variance to retain");
    build->add_option("--out", build_out, "Model output file")->required();
    add_global_flags(build, g);

    auto* train = app.add_subcommand("train", "Train a pixel classifier on a dataset");
    std::string train_dataset, train_method, train_model, train_out;
    train->add_option("--dataset", train_dataset, "Dataset directory")->required();
    train->add_option("--method", train_method, "classic | position | smrf")->required();
    train->add_option("--model", train_model, "Shape model file (required for smrf)");
    train->add_option("--out", train_out, "Forest output file")->required();
    add_global_flags(train, g);

    auto* predict = app.add_subcommand("predict", "Probability map for one image");
    std::string predict_forest, predict_image, predict_model, predict_out, predict_pgm;
    predict->add_option("--forest", predict_forest, "Forest file")->required();
    predict->add_option("--image", predict_image, "Input image (PGM)")->required();
    predict->add_option("--model", predict_model, "Shape model file (for shape-feature forests)");
    predict->add_option("--out", predict_out, "Probability map output (PFM)")->required();
    predict->add_option("--pgm", predict_pgm, "Optional 8-bit preview copy");
    add_global_flags(predict, g);

    auto* fitc = app.add_subcommand("fit", "Fit the shape model to a probability map");
    std::string fit_map, fit_model, fit_boundary, fit_mask;
    fitc->add_option("--map", fit_map, "Probability map (PFM)")->required();
    fitc->add_option("--model", fit_model, "Shape model file")->required();
    fitc->add_option("--out-boundary", fit_boundary, "Fitted boundary JSON")->required();
    fitc->add_option("--out-mask", fit_mask, "Fitted mask PGM");
    add_global_flags(fitc, g);

    auto* evalc = app.add_subcommand("eval", "Metrics between prediction and truth");
    std::string eval_pred, eval_truth, eval_pred_b, eval_truth_b, eval_out;
    evalc->add_option("--pred-mask", eval_pred, "Predicted mask PGM")->required();
    evalc->add_option("--truth-mask", eval_truth, "Truth mask PGM")->required();
    evalc->add_option("--pred-boundary", eval_pred_b, "Predicted boundary JSON");
    evalc->add_option("--truth-boundary", eval_truth_b, "Truth boundary JSON");
    evalc->add_option("--out", eval_out, "Metrics CSV output")->required();
    add_global_flags(evalc, g);

    auto* loocv = app.add_subcommand("loocv", "Leave-one-out cross-validation");
    std::string loocv_dataset, loocv_out;
    std::vector<std::string> loocv_methods = {"classic", "position", "smrf"};
    loocv->add_option("--dataset", loocv_dataset, "Dataset directory")->required();
    loocv->add_option("--methods", loocv_methods, "Methods to compare")->delimiter(',');
    loocv->add_option("--out", loocv_out, "Results CSV output")->required();
    add_global_flags(loocv, g);

    auto* sweep = app.add_subcommand("depth-sweep", "Jaccard vs tree depth");
    std::string sweep_dataset, sweep_out;
    std::vector<std::string> sweep_methods = {"classic", "position", "smrf"};
    std::vector<int> sweep_depths = {8, 12, 16, 20, 24};
    sweep->add_option("--dataset", sweep_dataset, "Dataset directory")->required();
    sweep->add_option("--methods", sweep_methods, "Methods to compare")->delimiter(',');
    sweep->add_option("--depths", sweep_depths, "Tree depths to train at")->delimiter(',');
    sweep->add_option("--out", sweep_out, "Sweep CSV output")->required();
    add_global_flags(sweep, g);

    auto* configc = app.add_subcommand("config", "Print the effective configuration");
    std::string config_out;
    bool config_dump = false;
    configc->add_flag("--dump", config_dump, "Print the merged configuration JSON");
    configc->add_option("--out", config_out, "Also write it to a file");
    add_global_flags(configc, g);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(g, synth_spec, synth_count, synth_out);
        if (build->parsed()) return cmd_build_model(g, build_files, build_target, build_out);
        if (train->parsed()) return cmd_train(g, train_dataset, train_method, train_model, train_out);
        if (predict->parsed())
            return cmd_predict(g, predict_forest, predict_image, predict_model, predict_out, predict_pgm);
        if (fitc->parsed()) return cmd_fit(g, fit_map, fit_model, fit_boundary, fit_mask);
        if (evalc->parsed()) return cmd_eval(g, eval_pred, eval_truth, eval_pred_b, eval_truth_b, eval_out);
        if (loocv->parsed()) return cmd_loocv(g, loocv_dataset, loocv_methods, loocv_out);
        if (sweep->parsed()) return cmd_depth_sweep(g, sweep_dataset, sweep_methods, sweep_depths, sweep_out);
        if (configc->parsed()) return cmd_config(g, config_out);
        return 2;
    } catch (const smrf::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const smrf::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
