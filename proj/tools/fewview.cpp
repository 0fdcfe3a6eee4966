#include <malloc.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fewview/fewview.hpp"

namespace fs = std::filesystem;
using namespace fewview;

namespace {

/// Refuses to reuse a non-empty directory unless `overwrite` is set, in
/// which case it is cleared first.
void prepare_output(const fs::path& dir, bool overwrite) {
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!overwrite) throw ConfigError("output '" + dir.string() + "' exists; pass --overwrite to replace it");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

TrainConfig load_train_config(const std::string& path) {
    return path.empty() ? TrainConfig{} : load_config(path);
}

std::optional<AnalyticScene> dataset_scene(const fs::path& data_dir) {
    const auto p = data_dir / "scene.json";
    if (!fs::exists(p)) return std::nullopt;
    return load_scene(p);
}

Eigen::Matrix4d parse_pose(const std::string& text) {
    std::istringstream is(text);
    std::vector<double> v;
    for (std::string tok; std::getline(is, tok, ',');) v.push_back(std::stod(tok));
    if (v.size() != 12 && v.size() != 16) throw ConfigError("--pose needs 12 or 16 comma-separated numbers");
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<int>(i / 4), static_cast<int>(i % 4)) = v[i];
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    // Large tape buffers are reused across steps instead of being unmapped.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    CLI::App app{"Few-view radiance field training with frequency-aware supervision"};
    app.require_subcommand(1);

    // make-scene
    std::string scene_path, out_dir;
    int views = 3;
    int n_test = -1;
    bool overwrite = false;
    auto* make = app.add_subcommand("make-scene", "Render a synthetic dataset from an analytic scene");
    make->add_option("--scene", scene_path, "Scene config (JSON); default scene when omitted");
    make->add_option("--views", views, "Training views")->check(CLI::IsMember({3, 6, 9}));
    make->add_option("--n-test", n_test, "Held-out views (default from scene config)");
    make->add_option("--out", out_dir, "Dataset directory")->required();
    make->add_flag("--overwrite", overwrite, "Replace an existing output directory");

    // train
    std::string config_path, data_dir, mode, resume;
    long long iters = -1;
    long long seed = -1;
    bool verbose = false;
    auto* train_cmd = app.add_subcommand("train", "Train a field on a dataset");
    train_cmd->add_option("--config", config_path, "Training config (JSON)");
    train_cmd->add_option("--data", data_dir, "Dataset directory")->required();
    train_cmd->add_option("--out", out_dir, "Run directory")->required();
    train_cmd->add_option("--mode", mode, "Loss mode (overrides config)");
    train_cmd->add_option("--resume", resume, "Checkpoint to continue from");
    train_cmd->add_option("--iters", iters, "Total iterations (overrides config)");
    train_cmd->add_option("--seed", seed, "Seed (overrides config)");
    train_cmd->add_flag("--overwrite", overwrite, "Replace an existing run directory");
    train_cmd->add_flag("--verbose", verbose, "Progress on stderr");

    // eval
    std::string run_dir;
    std::string split = "test";
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained run on held-out views");
    eval_cmd->add_option("--run", run_dir, "Run directory")->required();
    eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();
    eval_cmd->add_option("--split", split, "Views to evaluate")->check(CLI::IsMember({"test", "train"}));

    // render
    std::string pose, out_png;
    int view_id = -1;
    auto* render_cmd = app.add_subcommand("render", "Render a trained run at a dataset view or explicit pose");
    render_cmd->add_option("--run", run_dir, "Run directory")->required();
    render_cmd->add_option("--data", data_dir, "Dataset directory")->required();
    render_cmd->add_option("--view", view_id, "Dataset view id");
    render_cmd->add_option("--pose", pose, "Camera-to-world matrix, row-major, comma-separated");
    render_cmd->add_option("--out", out_png, "Output PNG")->required();

    // experiments
    auto add_experiment = [&](const char* name, const char* help) {
        auto* cmd = app.add_subcommand(name, help);
        cmd->add_option("--data", data_dir, "Dataset directory")->required();
        cmd->add_option("--config", config_path, "Base training config (JSON)");
        cmd->add_option("--out", out_dir, "Output directory")->required();
        cmd->add_option("--iters", iters, "Total iterations (overrides config)");
        cmd->add_option("--seed", seed, "Seed (overrides config)");
        cmd->add_flag("--overwrite", overwrite, "Replace an existing output directory");
        cmd->add_flag("--verbose", verbose, "Progress on stderr");
        return cmd;
    };
    auto* fig6_cmd = add_experiment("fig6", "Low-frequency PSNR under raw, blurred and adaptive supervision");
    auto* ablate_cmd = add_experiment("ablate", "Baseline / Model-A / Model-B / Model-C / full ablation");
    auto* compare_cmd = add_experiment("compare-reg", "Ray regulariser comparison with floater mass");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (make->parsed()) {
            AnalyticScene scene = scene_path.empty() ? default_scene() : load_scene(scene_path);
            const int tests = n_test >= 0 ? n_test : scene.render.n_test;
            prepare_output(out_dir, overwrite);
            const Dataset data = make_dataset(scene, views, tests);
            save_dataset(out_dir, data);
            write_json(fs::path(out_dir) / "scene.json", scene_to_json(scene));
            std::cout << "wrote " << data.train.size() << " train and " << data.test.size() << " test views to "
                      << out_dir << '\n';
            return 0;
        }

        auto apply_overrides = [&](TrainConfig& c) {
            if (iters > 0) {
                c.total_iters = iters;
            }
            if (seed >= 0) c.seed = static_cast<std::uint64_t>(seed);
            c.validate();
        };

        if (train_cmd->parsed()) {
            TrainConfig cfg = load_train_config(config_path);
            if (!mode.empty()) cfg.mode = parse_mode(mode);
            apply_overrides(cfg);
            const Dataset data = load_dataset(data_dir);
            RunOptions opt;
            opt.scene = dataset_scene(data_dir);
            opt.quiet = !verbose;
            if (!resume.empty()) {
                opt.resume = resume;
                fs::create_directories(out_dir);
            } else {
                prepare_output(out_dir, overwrite);
            }
            const RunResult res = train(cfg, data, out_dir, opt);
            std::cout << "trained " << res.final_iteration << " iterations (" << to_string(cfg.mode) << ")\n";
            if (!data.test.empty()) print_report(std::cout, res.report);
            if (res.floater_mass) std::cout << "floater_mass " << *res.floater_mass << '\n';
            return 0;
        }

        if (eval_cmd->parsed()) {
            const Dataset data = load_dataset(data_dir);
            Trainer trainer = load_run(run_dir, data);
            const auto& views_to_eval = split == "test" ? data.test : data.train;
            if (views_to_eval.empty()) throw DataError("dataset has no " + split + " views");
            std::vector<Image> renders;
            const EvalReport report = trainer.evaluate(views_to_eval, &renders);
            const fs::path dir = fs::path(run_dir) / ("eval_" + split);
            fs::create_directories(dir);
            write_json(dir / "eval.json", report_to_json(report));
            for (std::size_t i = 0; i < renders.size(); ++i) {
                write_png(dir / detail::view_file(split.c_str(), views_to_eval[i].view_id), renders[i], 16);
            }
            print_report(std::cout, report);
            return 0;
        }

        if (render_cmd->parsed()) {
            const Dataset data = load_dataset(data_dir);
            Trainer trainer = load_run(run_dir, data);
            const PosedImage* ref = &data.train.front();
            for (const auto* set : {&data.train, &data.test}) {
                for (const auto& v : *set) {
                    if (v.view_id == view_id) ref = &v;
                }
            }
            if (view_id >= 0 && ref->view_id != view_id) throw DataError("no view with id " + std::to_string(view_id));
            Camera cam = ref->camera;
            if (!pose.empty()) cam.camera_to_world = parse_pose(pose);
            if (pose.empty() && view_id < 0) throw ConfigError("render needs --view or --pose");
            const RenderedImage img = trainer.render(cam, ref->near, ref->far);
            write_png(out_png, img.color, 16);
            std::cout << "wrote " << out_png << '\n';
            return 0;
        }

        for (auto* cmd : {fig6_cmd, ablate_cmd, compare_cmd}) {
            if (!cmd->parsed()) continue;
            TrainConfig base = load_train_config(config_path);
            apply_overrides(base);
            const Dataset data = load_dataset(data_dir);
            prepare_output(out_dir, overwrite);
            write_json(fs::path(out_dir) / "base_config.json", config_to_json(base));
            std::vector<ExperimentVariant> variants;
            std::optional<AnalyticScene> scene;
            if (cmd == fig6_cmd) {
                variants = fig6_variants(base);
            } else if (cmd == ablate_cmd) {
                variants = ablation_variants(base);
            } else {
                variants = compare_reg_variants(base);
                scene = dataset_scene(data_dir);
                if (!scene) throw DataError("compare-reg needs scene.json in the dataset directory");
            }
            const ExperimentTable table = run_variants(cmd->get_name(), variants, data, out_dir, scene, !verbose);
            write_json(fs::path(out_dir) / "table.json", table_to_json(table));
            std::ofstream txt(fs::path(out_dir) / "table.txt");
            print_table(txt, table);
            print_table(std::cout, table);
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
