#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "fewview/config.hpp"
#include "fewview/trainer.hpp"

using namespace fewview;
namespace fs = std::filesystem;

namespace {

const fs::path& root() {
    static const fs::path p = [] {
        fs::path d = fs::temp_directory_path() / "fewview_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return p;
}

int run(const std::string& args) {
    const std::string cmd = std::string(FEWVIEW_CLI) + " " + args + " > " + (root() / "last.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Small scene and config so each invocation finishes in well under a second.
fs::path scene_file() {
    const fs::path p = root() / "scene.json";
    if (!fs::exists(p)) {
        write_text(p, R"({"name": "two-spheres-and-box",
            "render": {"width": 12, "height": 12, "focal": 16.5, "oracle_samples": 48, "n_test": 2}})");
    }
    return p;
}

fs::path config_file() {
    const fs::path p = root() / "train.json";
    if (!fs::exists(p)) {
        TrainConfig c;
        c.total_iters = 12;
        c.batch_size = 32;
        c.samples_per_ray = 8;
        c.arch.trunk_depth = 2;
        c.arch.trunk_width = 16;
        c.arch.skip_layer = 1;
        c.arch.head_width = 8;
        c.encoding.k_pos = 3;
        c.encoding.k_dir = 1;
        c.floater_grid = 4;
        c.checkpoint_every = 6;
        write_text(p, config_to_json(c).dump(2));
    }
    return p;
}

fs::path dataset() {
    const fs::path d = root() / "data";
    if (!fs::exists(d / "manifest.json")) {
        EXPECT_EQ(run("make-scene --scene " + q(scene_file()) + " --out " + q(d)), 0) << slurp(root() / "last.log");
    }
    return d;
}

fs::path trained(const std::string& mode) {
    const fs::path out = root() / ("run_" + mode);
    if (!fs::exists(out / "run.json")) {
        EXPECT_EQ(run("train --config " + q(config_file()) + " --data " + q(dataset()) + " --out " + q(out) +
                      " --mode " + mode + " --overwrite"),
                  0)
            << slurp(root() / "last.log");
    }
    return out;
}

}  // namespace

TEST(Cli, InvalidViewCountIsUsageError) {
    EXPECT_EQ(run("make-scene --views 7 --out " + q(root() / "bad")), 2);
    EXPECT_FALSE(fs::exists(root() / "bad"));
}

TEST(Cli, UnknownFlagIsUsageError) { EXPECT_EQ(run("train --data x --out y --bogus"), 2); }

TEST(Cli, NoSubcommandIsUsageError) { EXPECT_EQ(run(""), 2); }

TEST(Cli, MakeSceneIsByteReproducible) {
    const fs::path a = dataset();
    const fs::path b = root() / "data_again";
    ASSERT_EQ(run("make-scene --scene " + q(scene_file()) + " --out " + q(b) + " --overwrite"), 0);
    int pngs = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        if (e.path().extension() != ".png") continue;
        ++pngs;
        EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
    }
    EXPECT_EQ(pngs, 5);
    EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
}

TEST(Cli, ExistingOutputNeedsOverwrite) {
    dataset();
    EXPECT_EQ(run("make-scene --scene " + q(scene_file()) + " --out " + q(dataset())), 2);
}

TEST(Cli, MissingDatasetIsDataError) {
    EXPECT_EQ(run("train --data " + q(root() / "nowhere") + " --out " + q(root() / "r")), 3);
}

TEST(Cli, BadConfigIsConfigError) {
    const fs::path p = root() / "broken.json";
    write_text(p, "{\"total_iters\": 10,\n \"batch_size\": \n}");
    EXPECT_EQ(run("train --config " + q(p) + " --data " + q(dataset()) + " --out " + q(root() / "r")), 2);
    EXPECT_NE(slurp(root() / "last.log").find("line 3"), std::string::npos) << slurp(root() / "last.log");
}

TEST(Cli, LossCsvColumnsDependOnMode) {
    const CsvTable base = read_csv(trained("baseline") / "loss.csv");
    const CsvTable full = read_csv(trained("full") / "loss.csv");
    ASSERT_FALSE(base.rows.empty());
    for (const auto& row : base.rows) {
        EXPECT_TRUE(row[base.column("l_u")].empty());
        EXPECT_TRUE(row[base.column("l_r")].empty());
    }
    for (const auto& row : full.rows) {
        for (const char* col : {"l_s", "l_u", "l_r", "l_o"}) EXPECT_FALSE(row[full.column(col)].empty()) << col;
    }
}

TEST(Cli, ResumeReproducesFullRun) {
    const fs::path full = trained("full");
    const fs::path part = root() / "resumed";
    ASSERT_EQ(run("train --config " + q(config_file()) + " --data " + q(dataset()) + " --out " + q(part) +
                  " --mode full --overwrite"),
              0);
    ASSERT_TRUE(fs::exists(part / "ckpt_000006.bin"));
    ASSERT_EQ(run("train --config " + q(config_file()) + " --data " + q(dataset()) + " --out " + q(part) +
                  " --mode full --resume " + q(part / "ckpt_000006.bin")),
              0)
        << slurp(root() / "last.log");
    EXPECT_EQ(slurp(full / "loss.csv"), slurp(part / "loss.csv"));
    EXPECT_EQ(slurp(full / "eval.json"), slurp(part / "eval.json"));
}

TEST(Cli, EvalIsRepeatable) {
    const fs::path r = trained("full");
    ASSERT_EQ(run("eval --run " + q(r) + " --data " + q(dataset())), 0);
    const std::string first = slurp(r / "eval_test" / "eval.json");
    ASSERT_EQ(run("eval --run " + q(r) + " --data " + q(dataset())), 0);
    EXPECT_EQ(first, slurp(r / "eval_test" / "eval.json"));
    EXPECT_EQ(first, slurp(r / "eval.json"));
}

TEST(Cli, RenderWritesImage) {
    const fs::path r = trained("full");
    const fs::path png = root() / "view.png";
    ASSERT_EQ(run("render --run " + q(r) + " --data " + q(dataset()) + " --view 3 --out " + q(png)), 0);
    const Image img = read_png(png);
    EXPECT_EQ(img.width, 12);
    EXPECT_EQ(img.height, 12);
    EXPECT_EQ(run("render --run " + q(r) + " --data " + q(dataset()) + " --view 99 --out " + q(png)), 3);
}
