#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fewview/config.hpp"
#include "fewview/metrics.hpp"
#include "fewview/scenes.hpp"
#include "fewview/supervision.hpp"
#include "fewview/trainer.hpp"
#include "json.hpp"

namespace fewview {

struct ExperimentRow {
    std::string label;
    LossMode mode = LossMode::baseline;
    EvalReport report;
    std::optional<double> floater_mass;
    std::vector<WeightProbe> probes;
};

struct ExperimentTable {
    std::string name;
    std::vector<ExperimentRow> rows;

    const ExperimentRow& row(const std::string& label) const {
        for (const auto& r : rows) {
            if (r.label == label) return r;
        }
        throw ConfigError("experiment '" + name + "' has no row '" + label + "'");
    }
};

struct ExperimentVariant {
    std::string label;
    TrainConfig config;
};

inline ExperimentTable run_variants(const std::string& name, const std::vector<ExperimentVariant>& variants,
                                    const Dataset& data, const std::filesystem::path& out,
                                    const std::optional<AnalyticScene>& scene = std::nullopt, bool quiet = true) {
    ExperimentTable table{name, {}};
    for (const auto& v : variants) {
        RunOptions opt;
        opt.scene = scene;
        opt.quiet = quiet;
        if (!quiet) std::fprintf(stderr, "[%s] training %s\n", name.c_str(), v.label.c_str());
        RunResult res = train(v.config, data, out / v.label, opt);
        table.rows.push_back({v.label, v.config.mode, std::move(res.report), res.floater_mass, std::move(res.probes)});
    }
    return table;
}

/// Three supervision modes under a mask frozen at 10% unlock: raw targets,
/// blurred targets, and blurred targets with the adaptive (uncertainty) loss.
/// L_o is disabled so the runs differ only in supervision.
inline std::vector<ExperimentVariant> fig6_variants(TrainConfig base) {
    base.frozen_mask_fraction = 0.1;
    base.weights.lambda_o = 0.0;
    base.phase_switch = base.total_iters;
    TrainConfig raw = base;
    raw.mode = LossMode::baseline;
    TrainConfig blurred = base;
    blurred.mode = LossMode::model_a;
    TrainConfig adaptive = base;
    adaptive.mode = LossMode::model_c;
    return {{"raw", raw}, {"blurred", blurred}, {"adaptive", adaptive}};
}

/// Baseline, Model-A, Model-B, Model-C and the full objective, shared seed.
inline std::vector<ExperimentVariant> ablation_variants(const TrainConfig& base) {
    std::vector<ExperimentVariant> v;
    for (auto [label, mode] : {std::pair{"baseline", LossMode::baseline}, std::pair{"model-a", LossMode::model_a},
                               std::pair{"model-b", LossMode::model_b}, std::pair{"model-c", LossMode::model_c},
                               std::pair{"full", LossMode::full}}) {
        TrainConfig c = base;
        c.mode = mode;
        v.push_back({label, c});
    }
    return v;
}

/// Model-C, emptiness on w, ray density entropy, ray density regularisation.
inline std::vector<ExperimentVariant> compare_reg_variants(const TrainConfig& base) {
    std::vector<ExperimentVariant> v;
    for (auto [label, mode] : {std::pair{"model-c", LossMode::model_c}, std::pair{"emptiness", LossMode::emptiness_on_w},
                               std::pair{"entropy", LossMode::entropy}, std::pair{"ray-density-reg", LossMode::full}}) {
        TrainConfig c = base;
        c.mode = mode;
        v.push_back({label, c});
    }
    return v;
}

inline nlohmann::json table_to_json(const ExperimentTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows) {
        nlohmann::json j = report_to_json(r.report)["mean"];
        j["label"] = r.label;
        j["mode"] = to_string(r.mode);
        if (r.floater_mass) j["floater_mass"] = *r.floater_mass;
        rows.push_back(j);
    }
    return {{"experiment", t.name}, {"rows", rows}};
}

inline void print_table(std::ostream& os, const ExperimentTable& t) {
    char line[200];
    const bool floaters = !t.rows.empty() && t.rows.front().floater_mass.has_value();
    std::snprintf(line, sizeof line, "%-18s %10s %8s %10s %10s %10s%s\n", "run", "PSNR", "SSIM", "low PSNR",
                  "high PSNR", "aggregate", floaters ? "   floater_mass" : "");
    os << line;
    for (const auto& r : t.rows) {
        std::snprintf(line, sizeof line, "%-18s %10s %8.4f %10s %10s %10.5f", r.label.c_str(),
                      detail::metric_text(r.report.mean_psnr).c_str(), r.report.mean_ssim,
                      detail::metric_text(r.report.mean_low_psnr).c_str(),
                      detail::metric_text(r.report.mean_high_psnr).c_str(), r.report.mean_aggregate);
        os << line;
        if (r.floater_mass) {
            std::snprintf(line, sizeof line, " %14.6g", *r.floater_mass);
            os << line;
        }
        os << '\n';
    }
}

}  // namespace fewview
