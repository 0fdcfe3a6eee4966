#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fewview/encoding.hpp"
#include "fewview/error.hpp"
#include "fewview/field.hpp"
#include "fewview/losses.hpp"
#include "fewview/optim.hpp"
#include "fewview/scenes.hpp"
#include "fewview/supervision.hpp"
#include "json.hpp"

namespace fewview {

enum class LossMode {
    baseline,                // raw L_s + L_o
    model_a,                 // two-phase L_s + L_o
    model_b,                 // raw L_s + L_u + L_o
    model_c,                 // two-phase L_s and L_u + L_o
    full,                    // model_c + ray density regularisation
    linear_ablation,         // L_low + h L_high with h ramped over T, + L_o
    adaptive_blur_ablation,  // L_s against a progressively sharper blur, + L_o
    entropy,                 // model_c + ray density entropy
    emptiness_on_w,          // model_c + log(1 + s w) on compositing weights
};

enum class RayRegularizer { none, density, entropy, emptiness_on_w };

/// Which terms a mode switches on.
struct ModeTerms {
    bool two_phase = false;
    bool uncertainty = false;
    bool occlusion = true;
    bool linear_weight = false;
    bool adaptive_blur = false;
    RayRegularizer ray = RayRegularizer::none;
};

inline ModeTerms mode_terms(LossMode m) {
    ModeTerms t;
    switch (m) {
        case LossMode::baseline: break;
        case LossMode::model_a: t.two_phase = true; break;
        case LossMode::model_b: t.uncertainty = true; break;
        case LossMode::model_c: t.two_phase = t.uncertainty = true; break;
        case LossMode::full:
            t.two_phase = t.uncertainty = true;
            t.ray = RayRegularizer::density;
            break;
        case LossMode::linear_ablation: t.linear_weight = true; break;
        case LossMode::adaptive_blur_ablation: t.adaptive_blur = true; break;
        case LossMode::entropy:
            t.two_phase = t.uncertainty = true;
            t.ray = RayRegularizer::entropy;
            break;
        case LossMode::emptiness_on_w:
            t.two_phase = t.uncertainty = true;
            t.ray = RayRegularizer::emptiness_on_w;
            break;
    }
    return t;
}

inline const std::vector<std::pair<LossMode, const char*>>& mode_names() {
    static const std::vector<std::pair<LossMode, const char*>> names = {
        {LossMode::baseline, "baseline"},
        {LossMode::model_a, "model-a"},
        {LossMode::model_b, "model-b"},
        {LossMode::model_c, "model-c"},
        {LossMode::full, "full"},
        {LossMode::linear_ablation, "linear-ablation"},
        {LossMode::adaptive_blur_ablation, "adaptive-blur-ablation"},
        {LossMode::entropy, "entropy"},
        {LossMode::emptiness_on_w, "emptiness-on-w"},
    };
    return names;
}

inline std::string to_string(LossMode m) {
    for (const auto& [mode, name] : mode_names()) {
        if (mode == m) return name;
    }
    return "unknown";
}

/// Accepts the canonical names plus the "+L_s" style aliases.
inline LossMode parse_mode(const std::string& s) {
    for (const auto& [mode, name] : mode_names()) {
        if (s == name) return mode;
    }
    if (s == "+L_s" || s == "+Ls") return LossMode::model_a;
    if (s == "+L_u" || s == "+Lu") return LossMode::model_b;
    if (s == "+L_s+L_u" || s == "+Ls+Lu") return LossMode::model_c;
    throw ConfigError("unknown loss mode '" + s + "'");
}

struct TrainConfig {
    std::int64_t total_iters = 5000;
    std::int64_t mask_horizon = -1;  // T; negative selects 0.9 * total_iters
    std::int64_t phase_switch = -1;  // T_s; negative selects 0.25 * total_iters
    std::optional<double> frozen_mask_fraction;  // freeze the mask at mask_at(f T, T, L)
    int batch_size = 1024;
    int samples_per_ray = 64;
    bool perturb = true;
    Sampling sampling = Sampling::with_replacement;
    std::uint64_t seed = 0;
    LossMode mode = LossMode::full;

    LossWeights weights;
    double occlusion_fraction = 0.1;
    SupervisionOptions supervision;
    double blur_sigma_max = 1.5;  // adaptive-blur ablation start
    int blur_refresh_every = 100;

    MlpArchitecture arch;
    EncodingConfig encoding;
    LrSchedule lr{2e-3, 2e-4, 0, 100, 0.01};  // decay_steps 0 selects total_iters
    AdamOptions adam;

    int log_every = 1;
    std::int64_t checkpoint_every = 0;  // 0 writes only the final checkpoint
    bool weight_probe = true;
    int render_chunk = 4096;
    int floater_grid = 32;

    std::int64_t horizon() const {
        return mask_horizon >= 0 ? mask_horizon : static_cast<std::int64_t>(std::llround(0.9 * total_iters));
    }
    std::int64_t switch_iter() const {
        return phase_switch >= 0 ? phase_switch : static_cast<std::int64_t>(std::llround(0.25 * total_iters));
    }

    LrSchedule lr_schedule() const {
        LrSchedule s = lr;
        if (s.decay_steps <= 0) s.decay_steps = total_iters;
        return s;
    }

    void validate() const {
        if (total_iters < 1) throw ConfigError("config: total_iters must be >= 1");
        if (horizon() < 1 || horizon() > total_iters) throw ConfigError("config: need 1 <= T <= total_iters");
        if (switch_iter() > total_iters) throw ConfigError("config: need T_s <= total_iters");
        if (frozen_mask_fraction && !(*frozen_mask_fraction >= 0.0 && *frozen_mask_fraction <= 1.0)) {
            throw ConfigError("config: frozen_mask_fraction must be in [0, 1]");
        }
        if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
        if (samples_per_ray < 2) throw ConfigError("config: samples_per_ray must be >= 2");
        if (weights.lambda_u < 0 || weights.lambda_o < 0 || weights.lambda_r_start < 0 || weights.lambda_r_end < 0) {
            throw ConfigError("config: loss weights must be >= 0");
        }
        if (!(weights.steepness > 0)) throw ConfigError("config: steepness s must be > 0");
        if (!(occlusion_fraction > 0 && occlusion_fraction <= 1)) {
            throw ConfigError("config: occlusion_fraction must be in (0, 1]");
        }
        gaussian_kernel(supervision.blur_kernel, supervision.blur_sigma);
        if (!(supervision.edge_threshold > 0 && supervision.edge_threshold <= 1)) {
            throw ConfigError("config: edge_threshold must be in (0, 1]");
        }
        if (!(blur_sigma_max > 0)) throw ConfigError("config: blur_sigma_max must be > 0");
        if (blur_refresh_every < 1) throw ConfigError("config: blur_refresh_every must be >= 1");
        arch.validate();
        encoding.validate();
        if (!(lr.lr_init > 0 && lr.lr_final > 0)) throw ConfigError("config: learning rates must be > 0");
        if (log_every < 1) throw ConfigError("config: log_every must be >= 1");
        if (checkpoint_every < 0) throw ConfigError("config: checkpoint_every must be >= 0");
        if (render_chunk < 1) throw ConfigError("config: render_chunk must be >= 1");
        if (floater_grid < 1) throw ConfigError("config: floater_grid must be >= 1");
    }
};

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

/// Missing keys keep their defaults; unknown keys are rejected.
inline TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        detail::reject_unknown(j,
                               {"total_iters", "mask_horizon", "phase_switch", "frozen_mask_fraction", "batch_size",
                                "samples_per_ray", "perturb", "sampling", "seed", "mode", "loss", "supervision",
                                "model", "optimizer", "log_every", "checkpoint_every", "weight_probe", "render_chunk",
                                "floater_grid"},
                               "config");
        detail::read_opt(j, "total_iters", c.total_iters);
        detail::read_opt(j, "mask_horizon", c.mask_horizon);
        detail::read_opt(j, "phase_switch", c.phase_switch);
        if (j.contains("frozen_mask_fraction") && !j["frozen_mask_fraction"].is_null()) {
            c.frozen_mask_fraction = j["frozen_mask_fraction"].get<double>();
        }
        detail::read_opt(j, "batch_size", c.batch_size);
        detail::read_opt(j, "samples_per_ray", c.samples_per_ray);
        detail::read_opt(j, "perturb", c.perturb);
        if (j.contains("sampling")) {
            const auto s = j["sampling"].get<std::string>();
            if (s == "with-replacement") {
                c.sampling = Sampling::with_replacement;
            } else if (s == "without-replacement") {
                c.sampling = Sampling::without_replacement;
            } else {
                throw ConfigError("config: unknown sampling '" + s + "'");
            }
        }
        detail::read_opt(j, "seed", c.seed);
        if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
        detail::read_opt(j, "log_every", c.log_every);
        detail::read_opt(j, "checkpoint_every", c.checkpoint_every);
        detail::read_opt(j, "weight_probe", c.weight_probe);
        detail::read_opt(j, "render_chunk", c.render_chunk);
        detail::read_opt(j, "floater_grid", c.floater_grid);
        if (j.contains("loss")) {
            const auto& l = j["loss"];
            detail::reject_unknown(l,
                                   {"lambda_u", "lambda_o", "lambda_r_start", "lambda_r_end", "lambda_r_ramp",
                                    "steepness", "occlusion_fraction"},
                                   "config.loss");
            detail::read_opt(l, "lambda_u", c.weights.lambda_u);
            detail::read_opt(l, "lambda_o", c.weights.lambda_o);
            detail::read_opt(l, "lambda_r_start", c.weights.lambda_r_start);
            detail::read_opt(l, "lambda_r_end", c.weights.lambda_r_end);
            detail::read_opt(l, "lambda_r_ramp", c.weights.lambda_r_ramp);
            detail::read_opt(l, "steepness", c.weights.steepness);
            detail::read_opt(l, "occlusion_fraction", c.occlusion_fraction);
        }
        if (j.contains("supervision")) {
            const auto& s = j["supervision"];
            detail::reject_unknown(
                s, {"blur_kernel", "blur_sigma", "edge_threshold", "blur_sigma_max", "blur_refresh_every"},
                "config.supervision");
            detail::read_opt(s, "blur_kernel", c.supervision.blur_kernel);
            detail::read_opt(s, "blur_sigma", c.supervision.blur_sigma);
            detail::read_opt(s, "edge_threshold", c.supervision.edge_threshold);
            detail::read_opt(s, "blur_sigma_max", c.blur_sigma_max);
            detail::read_opt(s, "blur_refresh_every", c.blur_refresh_every);
        }
        if (j.contains("model")) {
            const auto& m = j["model"];
            detail::reject_unknown(
                m, {"trunk_depth", "trunk_width", "skip_layer", "head_width", "beta_min", "k_pos", "k_dir", "include_raw"},
                "config.model");
            detail::read_opt(m, "trunk_depth", c.arch.trunk_depth);
            detail::read_opt(m, "trunk_width", c.arch.trunk_width);
            detail::read_opt(m, "skip_layer", c.arch.skip_layer);
            detail::read_opt(m, "head_width", c.arch.head_width);
            detail::read_opt(m, "beta_min", c.arch.beta_min);
            detail::read_opt(m, "k_pos", c.encoding.k_pos);
            detail::read_opt(m, "k_dir", c.encoding.k_dir);
            detail::read_opt(m, "include_raw", c.encoding.include_raw);
        }
        if (j.contains("optimizer")) {
            const auto& o = j["optimizer"];
            detail::reject_unknown(o,
                                   {"lr_init", "lr_final", "decay_steps", "warmup_steps", "warmup_mult", "beta1",
                                    "beta2", "epsilon"},
                                   "config.optimizer");
            detail::read_opt(o, "lr_init", c.lr.lr_init);
            detail::read_opt(o, "lr_final", c.lr.lr_final);
            detail::read_opt(o, "decay_steps", c.lr.decay_steps);
            detail::read_opt(o, "warmup_steps", c.lr.warmup_steps);
            detail::read_opt(o, "warmup_mult", c.lr.warmup_mult);
            detail::read_opt(o, "beta1", c.adam.beta1);
            detail::read_opt(o, "beta2", c.adam.beta2);
            detail::read_opt(o, "epsilon", c.adam.epsilon);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + std::string(e.what()));
    }
    c.validate();
    return c;
}

/// Fully resolved config: derived schedule values are written explicitly.
inline nlohmann::json config_to_json(const TrainConfig& c) {
    return {
        {"total_iters", c.total_iters},
        {"mask_horizon", c.horizon()},
        {"phase_switch", c.switch_iter()},
        {"frozen_mask_fraction", c.frozen_mask_fraction ? nlohmann::json(*c.frozen_mask_fraction) : nullptr},
        {"batch_size", c.batch_size},
        {"samples_per_ray", c.samples_per_ray},
        {"perturb", c.perturb},
        {"sampling", c.sampling == Sampling::with_replacement ? "with-replacement" : "without-replacement"},
        {"seed", c.seed},
        {"mode", to_string(c.mode)},
        {"log_every", c.log_every},
        {"checkpoint_every", c.checkpoint_every},
        {"weight_probe", c.weight_probe},
        {"render_chunk", c.render_chunk},
        {"floater_grid", c.floater_grid},
        {"loss",
         {{"lambda_u", c.weights.lambda_u},
          {"lambda_o", c.weights.lambda_o},
          {"lambda_r_start", c.weights.lambda_r_start},
          {"lambda_r_end", c.weights.lambda_r_end},
          {"lambda_r_ramp", c.weights.lambda_r_ramp},
          {"steepness", c.weights.steepness},
          {"occlusion_fraction", c.occlusion_fraction}}},
        {"supervision",
         {{"blur_kernel", c.supervision.blur_kernel},
          {"blur_sigma", c.supervision.blur_sigma},
          {"edge_threshold", c.supervision.edge_threshold},
          {"blur_sigma_max", c.blur_sigma_max},
          {"blur_refresh_every", c.blur_refresh_every}}},
        {"model",
         {{"trunk_depth", c.arch.trunk_depth},
          {"trunk_width", c.arch.trunk_width},
          {"skip_layer", c.arch.skip_layer},
          {"head_width", c.arch.head_width},
          {"beta_min", c.arch.beta_min},
          {"k_pos", c.encoding.k_pos},
          {"k_dir", c.encoding.k_dir},
          {"include_raw", c.encoding.include_raw}}},
        {"optimizer",
         {{"lr_init", c.lr.lr_init},
          {"lr_final", c.lr.lr_final},
          {"decay_steps", c.lr_schedule().decay_steps},
          {"warmup_steps", c.lr.warmup_steps},
          {"warmup_mult", c.lr.warmup_mult},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon}}},
    };
}

inline TrainConfig load_config(const std::filesystem::path& path) { return config_from_json(read_json_file(path)); }

}  // namespace fewview
