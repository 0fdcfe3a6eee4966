#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "fewview/experiments.hpp"
#include "fewview/trainer.hpp"

using namespace fewview;
namespace fs = std::filesystem;

namespace {

const Dataset& tiny_dataset() {
    static const Dataset data = [] {
        AnalyticScene s = default_scene();
        s.render.width = 16;
        s.render.height = 16;
        s.render.focal = 87.9 / 4.0;
        s.render.oracle_samples = 64;
        return make_dataset(s, 3, 1);
    }();
    return data;
}

TrainConfig tiny_config(LossMode mode, std::int64_t iters) {
    TrainConfig c;
    c.mode = mode;
    c.total_iters = iters;
    c.batch_size = 64;
    c.samples_per_ray = 12;
    c.arch.trunk_depth = 2;
    c.arch.trunk_width = 24;
    c.arch.skip_layer = 1;
    c.arch.head_width = 12;
    c.encoding.k_pos = 4;
    c.encoding.k_dir = 2;
    c.floater_grid = 6;
    return c;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("fewview_trainer_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(AdaptiveBlur, LinearDecayToIdentity) {
    EXPECT_DOUBLE_EQ(adaptive_blur_sigma(0, 1000, 1.5), 1.5);
    EXPECT_DOUBLE_EQ(adaptive_blur_sigma(500, 1000, 1.5), 0.75);
    EXPECT_EQ(adaptive_blur_sigma(1000, 1000, 1.5), 0.0);
    EXPECT_EQ(adaptive_blur_sigma(2000, 1000, 1.5), 0.0);
}

TEST(Trainer, MaskFollowsSchedule) {
    TrainConfig c = tiny_config(LossMode::full, 100);
    Trainer t(c, tiny_dataset());
    for (std::int64_t it : {0, 10, 45, 89, 90, 99}) {
        EXPECT_EQ(t.mask_for(it).bits, mask_at(static_cast<double>(it), 90.0, 4).bits) << it;
    }
    c.frozen_mask_fraction = 0.1;
    Trainer frozen(c, tiny_dataset());
    EXPECT_EQ(frozen.mask_for(0).bits, frozen.mask_for(99).bits);
    EXPECT_EQ(frozen.mask_for(50).bits, mask_at(9.0, 90.0, 4).bits);
}

TEST(Trainer, BaselineReducesColourLoss) {
    TrainConfig c = tiny_config(LossMode::baseline, 200);
    Trainer t(c, tiny_dataset());
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 200; ++i) {
        const double ls = t.step().loss.l_s;
        if (i < 20) first += ls;
        if (i >= 180) last += ls;
    }
    EXPECT_LT(last, 0.7 * first);
}

TEST(Trainer, PhaseSwitchesOnceAtSwitchIteration) {
    TrainConfig c = tiny_config(LossMode::model_c, 30);
    c.phase_switch = 12;
    Trainer t(c, tiny_dataset());
    for (int i = 0; i < 30; ++i) {
        const StepRecord r = t.step();
        EXPECT_EQ(r.blurred_target, i < 12) << i;
        EXPECT_TRUE(r.loss.has_u);
        EXPECT_FALSE(r.loss.has_r);
    }
    Trainer base(tiny_config(LossMode::baseline, 5), tiny_dataset());
    for (int i = 0; i < 5; ++i) EXPECT_FALSE(base.step().blurred_target);
}

TEST(Trainer, NonFiniteStateRaises) {
    Trainer t(tiny_config(LossMode::full, 10), tiny_dataset());
    for (auto& p : t.field().parameters()) p.value().setConstant(std::nan(""));
    try {
        t.step();
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("trunk.0"), std::string::npos) << e.what();
    }
    EXPECT_EQ(t.iteration(), 0);
}

TEST(Trainer, CheckpointRestoresExactState) {
    const TrainConfig c = tiny_config(LossMode::full, 30);
    Trainer a(c, tiny_dataset());
    for (int i = 0; i < 10; ++i) a.step();
    const fs::path dir = scratch("ckpt");
    fs::create_directories(dir);
    save_checkpoint(dir / "c.bin", a.checkpoint());
    Trainer b(c, tiny_dataset());
    b.restore(load_checkpoint(dir / "c.bin"));
    EXPECT_EQ(b.iteration(), 10);
    for (int i = 0; i < 5; ++i) {
        const StepRecord ra = a.step();
        const StepRecord rb = b.step();
        EXPECT_EQ(ra.loss.l_total, rb.loss.l_total);
        EXPECT_EQ(ra.lr, rb.lr);
    }
    fs::remove_all(dir);
}

TEST(Trainer, RejectsEmptyDataset) {
    Dataset empty;
    EXPECT_THROW(Trainer(tiny_config(LossMode::baseline, 5), empty), DataError);
}

TEST(Run, CsvColumnsAndRamp) {
    const fs::path dir = scratch("csv");
    TrainConfig c = tiny_config(LossMode::full, 25);
    c.weights.lambda_r_ramp = 16;
    train(c, tiny_dataset(), dir);
    const CsvTable t = read_csv(dir / "loss.csv");
    EXPECT_EQ(slurp(dir / "loss.csv").substr(0, slurp(dir / "loss.csv").find('\n')), kLossCsvHeader);
    ASSERT_EQ(t.rows.size(), 25u);
    for (const auto& row : t.rows) {
        ASSERT_EQ(row.size(), t.header.size());
        const std::int64_t it = std::stoll(row[0]);
        EXPECT_EQ(std::stod(row[t.column("lambda_r")]), c.weights.lambda_r(it));
        EXPECT_FALSE(row[t.column("l_u")].empty());
        EXPECT_FALSE(row[t.column("l_r")].empty());
        EXPECT_FALSE(row[t.column("l_o")].empty());
    }
    for (const char* f : {"config.json", "checkpoint.bin", "weight_probe.json", "eval.json", "eval.txt", "run.json"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    fs::remove_all(dir);
}

TEST(Run, BaselineLeavesInactiveTermsEmpty) {
    const fs::path dir = scratch("base");
    train(tiny_config(LossMode::baseline, 5), tiny_dataset(), dir);
    const CsvTable t = read_csv(dir / "loss.csv");
    for (const auto& row : t.rows) {
        EXPECT_TRUE(row[t.column("l_u")].empty());
        EXPECT_TRUE(row[t.column("l_r")].empty());
        EXPECT_FALSE(row[t.column("l_o")].empty());
        EXPECT_EQ(row[t.column("phase")], "raw");
    }
    fs::remove_all(dir);
}

TEST(Run, ProbesAtQuarterAndFullHorizon) {
    const fs::path dir = scratch("probe");
    const RunResult r = train(tiny_config(LossMode::full, 20), tiny_dataset(), dir);
    ASSERT_EQ(r.probes.size(), 2u);
    EXPECT_EQ(r.probes[0].iter, 18 / 4);
    EXPECT_EQ(r.probes[1].iter, 18);
    EXPECT_EQ(r.probes[0].low_count + r.probes[0].high_count, 3u * 16 * 16);
    EXPECT_GT(r.probes[1].mean_weight_low, 0.0);
    fs::remove_all(dir);
}

TEST(Run, RerunsAreIdentical) {
    const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
    const TrainConfig c = tiny_config(LossMode::full, 15);
    const RunResult ra = train(c, tiny_dataset(), a);
    const RunResult rb = train(c, tiny_dataset(), b);
    EXPECT_EQ(slurp(a / "loss.csv"), slurp(b / "loss.csv"));
    EXPECT_EQ(slurp(a / "eval.json"), slurp(b / "eval.json"));
    EXPECT_EQ(ra.report.mean_psnr, rb.report.mean_psnr);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Run, ResumeMatchesUninterruptedRun) {
    const fs::path full = scratch("uninterrupted"), part = scratch("resumed");
    TrainConfig c = tiny_config(LossMode::full, 20);
    c.checkpoint_every = 10;
    train(c, tiny_dataset(), full);
    train(c, tiny_dataset(), part);
    RunOptions opt;
    opt.resume = part / "ckpt_000010.bin";
    const RunResult r = train(c, tiny_dataset(), part, opt);
    EXPECT_EQ(r.final_iteration, 20);
    EXPECT_EQ(slurp(full / "loss.csv"), slurp(part / "loss.csv"));
    EXPECT_EQ(slurp(full / "eval.json"), slurp(part / "eval.json"));
    fs::remove_all(full);
    fs::remove_all(part);
}

TEST(Run, LoadRunRestoresTrainer) {
    const fs::path dir = scratch("load");
    const RunResult r = train(tiny_config(LossMode::model_b, 8), tiny_dataset(), dir);
    Trainer t = load_run(dir, tiny_dataset());
    EXPECT_EQ(t.iteration(), 8);
    EXPECT_EQ(t.evaluate(tiny_dataset().test).mean_psnr, r.report.mean_psnr);
    fs::remove_all(dir);
}

TEST(Config, JsonRoundTrip) {
    TrainConfig c = tiny_config(LossMode::entropy, 123);
    c.frozen_mask_fraction = 0.25;
    c.sampling = Sampling::without_replacement;
    c.weights.lambda_u = 0.05;
    const auto j = config_to_json(c);
    EXPECT_EQ(config_to_json(config_from_json(j)), j);
}

TEST(Config, UnknownKeyRejected) {
    auto j = config_to_json(tiny_config(LossMode::full, 10));
    j["learning_rate_typo"] = 1.0;
    EXPECT_THROW(config_from_json(j), ConfigError);
}

TEST(Config, ValidationErrors) {
    TrainConfig c = tiny_config(LossMode::full, 10);
    c.mask_horizon = 11;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config(LossMode::full, 10);
    c.samples_per_ray = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(parse_mode("model-z"), ConfigError);
    EXPECT_EQ(parse_mode("+L_s+L_u"), LossMode::model_c);
}

TEST(Experiments, VariantTables) {
    const TrainConfig base = tiny_config(LossMode::full, 100);
    const auto f = fig6_variants(base);
    ASSERT_EQ(f.size(), 3u);
    for (const auto& v : f) {
        EXPECT_EQ(v.config.frozen_mask_fraction, 0.1);
        EXPECT_EQ(v.config.weights.lambda_o, 0.0);
        EXPECT_EQ(v.config.seed, base.seed);
    }
    EXPECT_EQ(f[0].config.mode, LossMode::baseline);
    EXPECT_EQ(f[2].config.mode, LossMode::model_c);
    EXPECT_EQ(ablation_variants(base).size(), 5u);
    const auto r = compare_reg_variants(base);
    ASSERT_EQ(r.size(), 4u);
    EXPECT_EQ(r[3].label, "ray-density-reg");
    EXPECT_EQ(r[3].config.mode, LossMode::full);
}

TEST(Config, ShippedConfigsLoad) {
    const fs::path dir = fs::path(FEWVIEW_SOURCE_DIR) / "configs";
    EXPECT_EQ(config_to_json(load_config(dir / "train.json")), config_to_json(TrainConfig{}));
    TrainConfig fast = load_config(dir / "train_fast.json");
    EXPECT_EQ(fast.batch_size, 256);
    EXPECT_EQ(fast.samples_per_ray, 32);
    fast.batch_size = TrainConfig{}.batch_size;
    fast.samples_per_ray = TrainConfig{}.samples_per_ray;
    fast.log_every = TrainConfig{}.log_every;
    EXPECT_EQ(config_to_json(fast), config_to_json(TrainConfig{}));
    fast.total_iters = 2000;
    EXPECT_NO_THROW(fast.validate());
    EXPECT_EQ(fast.horizon(), 1800);
    EXPECT_EQ(scene_to_json(load_scene(dir / "scene.json")), scene_to_json(default_scene()));
}
