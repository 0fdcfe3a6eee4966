#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fewview/autodiff.hpp"
#include "fewview/camera.hpp"
#include "fewview/checkpoint.hpp"
#include "fewview/config.hpp"
#include "fewview/encoding.hpp"
#include "fewview/error.hpp"
#include "fewview/field.hpp"
#include "fewview/image.hpp"
#include "fewview/losses.hpp"
#include "fewview/metrics.hpp"
#include "fewview/optim.hpp"
#include "fewview/rendering.hpp"
#include "fewview/scenes.hpp"
#include "fewview/supervision.hpp"
#include "json.hpp"

namespace fewview {

/// Blur sigma for the adaptive-blur ablation: sigma_max at 0, decaying
/// linearly to 0 (identity) at `horizon`.
inline double adaptive_blur_sigma(std::int64_t iter, std::int64_t horizon, double sigma_max) {
    if (horizon <= 0 || iter >= horizon) return 0.0;
    return sigma_max * (1.0 - static_cast<double>(std::max<std::int64_t>(iter, 0)) / static_cast<double>(horizon));
}

/// One logged training iteration.
struct StepRecord {
    std::int64_t iter = 0;
    LossBreakdown loss;
    double lr = 0.0;
    bool blurred_target = false;
    double blur_sigma = 0.0;
};

/// Mean learned loss weight 1 / beta_bar2 over low- and high-frequency
/// training pixels.
struct WeightProbe {
    std::int64_t iter = 0;
    double mean_weight_low = 0.0;
    double mean_weight_high = 0.0;
    std::size_t low_count = 0;
    std::size_t high_count = 0;
};

struct RenderedImage {
    Image color;
    Image beta_bar2;  // single channel
};

class Trainer {
public:
    Trainer(TrainConfig config, const Dataset& data)
        : config_(std::move(config)),
          terms_(mode_terms(config_.mode)),
          bounds_(data.bounds),
          field_(config_.arch, config_.encoding),
          adam_(config_.adam),
          rng_(config_.seed) {
        config_.validate();
        if (data.train.empty()) throw DataError("trainer: dataset has no training views");
        for (const auto& v : data.train) validate_view(v);
        views_ = prepare_views(data.train, config_.supervision);
        field_.init_parameters(config_.seed);
        blur_iter_ = -1;
        if (terms_.adaptive_blur) refresh_adaptive_blur(0);
    }

    const TrainConfig& config() const noexcept { return config_; }
    const ModeTerms& terms() const noexcept { return terms_; }
    std::int64_t iteration() const noexcept { return iteration_; }
    RadianceField& field() noexcept { return field_; }
    const RadianceField& field() const noexcept { return field_; }
    const std::vector<TrainingView>& views() const noexcept { return views_; }
    const SceneBounds& bounds() const noexcept { return bounds_; }

    bool uses_uncertainty() const { return terms_.uncertainty && config_.weights.lambda_u > 0.0; }
    bool uses_occlusion() const { return terms_.occlusion && config_.weights.lambda_o > 0.0; }
    bool uses_ray_regularizer() const { return terms_.ray != RayRegularizer::none; }

    /// Frequency mask in effect at iteration `t`.
    FrequencyMask mask_for(std::int64_t t) const {
        const double horizon = static_cast<double>(config_.horizon());
        if (config_.frozen_mask_fraction) return mask_at(*config_.frozen_mask_fraction * horizon, horizon, config_.encoding.k_pos);
        return mask_at(static_cast<double>(t), horizon, config_.encoding.k_pos);
    }

    /// True when the iteration-t target is a blurred image.
    bool blurred_phase(std::int64_t t) const {
        if (terms_.adaptive_blur) return adaptive_blur_sigma(blur_bucket(t), config_.horizon(), config_.blur_sigma_max) > 0.0;
        if (terms_.two_phase) return t < config_.switch_iter();
        return false;
    }

    /// Encodes world-space sample points and directions for the field.
    std::pair<ad::Matrix, ad::Matrix> features(const ad::Matrix& pts, const ad::Matrix& dirs,
                                               const FrequencyMask& mask) const {
        ad::Matrix normalized(pts.rows(), 3);
        const Eigen::Vector3d c = bounds_.center();
        const Eigen::Vector3d h = bounds_.half_extent();
        for (ad::Index r = 0; r < pts.rows(); ++r) {
            for (int a = 0; a < 3; ++a) normalized(r, a) = (pts(r, a) - c[a]) / h[a];
        }
        const int kd = config_.encoding.k_dir;
        return {masked_encode_rows(normalized, config_.encoding.k_pos, mask, config_.encoding.include_raw),
                masked_encode_rows(dirs, kd, FrequencyMask::all_ones(kd), config_.encoding.include_raw)};
    }

    /// Runs one optimisation step at the current iteration and advances it.
    StepRecord step() {
        const std::int64_t t = iteration_;
        if (terms_.adaptive_blur) refresh_adaptive_blur(t);
        const FrequencyMask mask = mask_for(t);
        RayBatch batch = sample_ray_batch(views_, static_cast<std::size_t>(config_.batch_size), rng_, t,
                                          config_.sampling, config_.seed);
        const BatchSamples samples =
            stratified_sample_batch(batch.rays, config_.samples_per_ray, config_.perturb ? &rng_ : nullptr);
        const auto [pts, dirs] = sample_points(batch.rays, samples);
        const auto [x_enc, d_enc] = features(pts, dirs, mask);

        ad::Tape tape;
        const FieldVars fv = field_.query(tape, x_enc, d_enc);
        const RenderVars rv = composite(tape, fv, samples.delta);

        StepRecord rec;
        rec.iter = t;
        rec.blurred_target = blurred_phase(t);
        rec.blur_sigma = terms_.adaptive_blur ? current_blur_sigma_ : config_.supervision.blur_sigma;
        const ad::Matrix& target = rec.blurred_target ? batch.blurred : batch.raw;

        LossTerms lt;
        if (terms_.linear_weight) {
            lt.s = alt_linear_weight_loss(rv.color, target, batch.high_frequency,
                                          linear_high_frequency_weight(t, config_.horizon()));
        } else {
            lt.s = loss_s(rv.color, target);
        }
        if (uses_uncertainty()) lt.u = loss_u(rv.color, rv.beta_bar2, target, config_.arch.beta_min);
        switch (terms_.ray) {
            case RayRegularizer::density: lt.r = loss_r(ray_density(rv.alphas), config_.weights.steepness); break;
            case RayRegularizer::entropy: lt.r = alt_entropy_loss(ray_density(rv.alphas)); break;
            case RayRegularizer::emptiness_on_w:
                lt.r = alt_emptiness_on_w(rv.weights, config_.weights.steepness);
                break;
            case RayRegularizer::none: break;
        }
        if (uses_occlusion()) {
            lt.o = loss_o(rv.weights, occlusion_window(config_.samples_per_ray, config_.occlusion_fraction));
        }
        ad::Var total = total_loss(lt, config_.weights.lambda_u, config_.weights.lambda_r(t), config_.weights.lambda_o,
                                   rec.loss);
        const ad::Matrix& b = rv.beta_bar2.value();
        rec.loss.mean_beta_bar2 = b.mean();
        rec.loss.mean_weight = (1.0 / b.array().max(config_.arch.beta_min)).mean();
        check_finite(rec.loss, t);

        tape.backward(total);
        rec.lr = config_.lr_schedule()(t);
        adam_.step(field_.parameters(), rec.lr, t);
        ++iteration_;
        return rec;
    }

    /// Renders arbitrary rays with midpoint samples under the current mask.
    /// Returns R x 3 colours; `beta_out` (if given) receives R composited variances.
    ad::Matrix render_rays(const std::vector<Ray>& rays, std::vector<double>* beta_out = nullptr) {
        const FrequencyMask mask = mask_for(iteration_);
        ad::Matrix color(static_cast<ad::Index>(rays.size()), 3);
        if (beta_out) beta_out->assign(rays.size(), 0.0);
        const std::size_t chunk = static_cast<std::size_t>(config_.render_chunk);
        for (std::size_t start = 0; start < rays.size(); start += chunk) {
            const std::size_t n = std::min(chunk, rays.size() - start);
            const std::vector<Ray> part(rays.begin() + static_cast<std::ptrdiff_t>(start),
                                        rays.begin() + static_cast<std::ptrdiff_t>(start + n));
            const BatchSamples samples = stratified_sample_batch(part, config_.samples_per_ray, nullptr);
            const auto [pts, dirs] = sample_points(part, samples);
            const auto [x_enc, d_enc] = features(pts, dirs, mask);
            ad::Tape tape;
            const RenderVars rv = composite(tape, field_.query(tape, x_enc, d_enc), samples.delta);
            color.middleRows(static_cast<ad::Index>(start), static_cast<ad::Index>(n)) = rv.color.value();
            if (beta_out) {
                for (std::size_t i = 0; i < n; ++i) (*beta_out)[start + i] = rv.beta_bar2.value()(static_cast<ad::Index>(i), 0);
            }
        }
        return color;
    }

    RenderedImage render(const Camera& camera, double near, double far) {
        const auto rays = generate_image_rays(camera, near, far);
        std::vector<double> beta;
        const ad::Matrix c = render_rays(rays, &beta);
        RenderedImage out{Image(camera.intrinsics.width, camera.intrinsics.height, 3),
                          Image(camera.intrinsics.width, camera.intrinsics.height, 1)};
        for (std::size_t i = 0; i < rays.size(); ++i) {
            const int r = rays[i].pixel.row;
            const int col = rays[i].pixel.col;
            for (int ch = 0; ch < 3; ++ch) {
                out.color.at(r, col, ch) = std::clamp(c(static_cast<ad::Index>(i), ch), 0.0, 1.0);
            }
            out.beta_bar2.at(r, col, 0) = beta[i];
        }
        return out;
    }

    RenderedImage render(const PosedImage& view) { return render(view.camera, view.near, view.far); }

    EvalReport evaluate(const std::vector<PosedImage>& views, std::vector<Image>* renders = nullptr) {
        std::vector<ViewMetrics> metrics;
        for (const auto& v : views) {
            RenderedImage img = render(v);
            metrics.push_back(evaluate_view(img.color, v, config_.supervision.edge_threshold));
            if (renders) renders->push_back(std::move(img.color));
        }
        return summarize(std::move(metrics));
    }

    /// Weight probe over every training pixel.
    WeightProbe probe_weights() {
        std::vector<Ray> rays;
        std::vector<std::uint8_t> high;
        for (std::size_t vi = 0; vi < views_.size(); ++vi) {
            const auto& tv = views_[vi];
            for (int r = 0; r < tv.view.pixels.height; ++r) {
                for (int c = 0; c < tv.view.pixels.width; ++c) {
                    rays.push_back(pixel_ray(tv.view.camera, r, c, tv.view.near, tv.view.far, static_cast<int>(vi)));
                    high.push_back(tv.frequency.is_high(r, c) ? 1 : 0);
                }
            }
        }
        std::vector<double> beta;
        render_rays(rays, &beta);
        WeightProbe p;
        p.iter = iteration_;
        for (std::size_t i = 0; i < rays.size(); ++i) {
            const double w = 1.0 / std::max(beta[i], config_.arch.beta_min);
            if (high[i]) {
                p.mean_weight_high += w;
                ++p.high_count;
            } else {
                p.mean_weight_low += w;
                ++p.low_count;
            }
        }
        if (p.low_count) p.mean_weight_low /= static_cast<double>(p.low_count);
        if (p.high_count) p.mean_weight_high /= static_cast<double>(p.high_count);
        return p;
    }

    /// Predicted density at world positions (P x 3) under the current mask.
    Eigen::VectorXd density_at(const ad::Matrix& pts) {
        const FrequencyMask mask = mask_for(iteration_);
        ad::Matrix dirs = ad::Matrix::Zero(pts.rows(), 3);
        dirs.col(2).setOnes();
        const auto [x_enc, d_enc] = features(pts, dirs, mask);
        ad::Tape tape;
        const FieldVars fv = field_.query(tape, x_enc, d_enc);
        return fv.sigma.value().col(0);
    }

    double floater(const AnalyticScene& scene) {
        return floater_mass([this](const ad::Matrix& x) { return density_at(x); }, scene, config_.floater_grid);
    }

    Checkpoint checkpoint() const {
        Checkpoint ck;
        ck.iteration = iteration_;
        ck.arch = config_.arch;
        ck.encoding = config_.encoding;
        for (const auto& p : field_.parameters()) ck.parameters.emplace_back(p.name(), p.value());
        ck.adam_steps = adam_.steps_taken();
        ck.adam_first = adam_.first_moments();
        ck.adam_second = adam_.second_moments();
        std::ostringstream os;
        os << rng_;
        ck.rng_state = os.str();
        return ck;
    }

    void restore(const Checkpoint& ck) {
        restore_parameters(field_, ck);
        if (ck.iteration < 0 || ck.iteration > config_.total_iters) {
            throw ConfigError("checkpoint iteration " + std::to_string(ck.iteration) + " outside the configured run");
        }
        if (ck.adam_first.size() != ck.adam_second.size() ||
            (!ck.adam_first.empty() && ck.adam_first.size() != field_.parameters().count())) {
            throw DataError("checkpoint: optimizer state does not match parameters");
        }
        adam_.first_moments() = ck.adam_first;
        adam_.second_moments() = ck.adam_second;
        adam_.set_steps(ck.adam_steps);
        std::istringstream is(ck.rng_state);
        is >> rng_;
        if (!is) throw DataError("checkpoint: corrupt RNG state");
        iteration_ = ck.iteration;
        if (terms_.adaptive_blur) refresh_adaptive_blur(iteration_);
    }

private:
    std::int64_t blur_bucket(std::int64_t t) const {
        return (t / config_.blur_refresh_every) * config_.blur_refresh_every;
    }

    void refresh_adaptive_blur(std::int64_t t) {
        const std::int64_t bucket = blur_bucket(t);
        if (bucket == blur_iter_) return;
        blur_iter_ = bucket;
        current_blur_sigma_ = adaptive_blur_sigma(bucket, config_.horizon(), config_.blur_sigma_max);
        for (auto& tv : views_) {
            tv.blurred = current_blur_sigma_ > 0.0
                             ? gaussian_blur(tv.view.pixels, config_.supervision.blur_kernel, current_blur_sigma_)
                             : tv.view.pixels;
        }
    }

    static void check_finite(const LossBreakdown& b, std::int64_t t) {
        if (std::isfinite(b.l_total)) return;
        std::ostringstream os;
        os << "non-finite loss at iteration " << t << ":";
        auto term = [&](const char* name, double v, bool on) {
            if (!on) return;
            os << ' ' << name << '=' << v << (std::isfinite(v) ? "" : " (offending)");
        };
        term("l_s", b.l_s, true);
        term("l_u", b.l_u, b.has_u);
        term("l_r", b.l_r, b.has_r);
        term("l_o", b.l_o, b.has_o);
        throw NumericalError(os.str());
    }

    TrainConfig config_;
    ModeTerms terms_;
    SceneBounds bounds_;
    std::vector<TrainingView> views_;
    RadianceField field_;
    Adam adam_;
    std::mt19937_64 rng_;
    std::int64_t iteration_ = 0;
    std::int64_t blur_iter_ = -1;
    double current_blur_sigma_ = 0.0;
};

// ---------------------------------------------------------------------------
// Loss CSV

inline constexpr const char* kLossCsvHeader = "iter,l_s,l_u,l_r,l_o,l_total,mean_beta_bar2,lr,lambda_r,phase";

inline std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// One CSV row; inactive loss terms are empty cells.
inline std::string csv_row(const StepRecord& r) {
    const auto& b = r.loss;
    std::string s = std::to_string(r.iter) + ',' + format_number(b.l_s) + ',';
    s += (b.has_u ? format_number(b.l_u) : "") + ',';
    s += (b.has_r ? format_number(b.l_r) : "") + ',';
    s += (b.has_o ? format_number(b.l_o) : "") + ',';
    s += format_number(b.l_total) + ',' + format_number(b.mean_beta_bar2) + ',' + format_number(r.lr) + ',' +
         format_number(b.lambda_r) + ',' + (r.blurred_target ? "blurred" : "raw");
    return s;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return static_cast<int>(i);
        }
        throw DataError("csv: no column '" + name + "'");
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    CsvTable t;
    std::string line;
    if (std::getline(in, line)) t.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (!line.empty()) t.rows.push_back(split_csv_line(line));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Run orchestration

struct RunOptions {
    std::optional<std::filesystem::path> resume;  // checkpoint to continue from
    std::optional<AnalyticScene> scene;           // enables floater_mass
    bool write_renders = true;
    bool quiet = true;
};

struct RunResult {
    EvalReport report;
    std::vector<WeightProbe> probes;
    std::optional<double> floater_mass;
    std::int64_t final_iteration = 0;
    double final_l_s = 0.0;
    double initial_l_s = 0.0;
};

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write '" + path.string() + "'");
    os << j.dump(2) << '\n';
}

inline nlohmann::json probe_json(const WeightProbe& p) {
    return {{"iter", p.iter},
            {"mean_weight_low", p.mean_weight_low},
            {"mean_weight_high", p.mean_weight_high},
            {"low_count", p.low_count},
            {"high_count", p.high_count}};
}

/// Trains `config` on `data`, writing the run directory:
///   config.json, loss.csv, checkpoint.bin (+ periodic ckpt_<iter>.bin),
///   weight_probe.json, renders/, eval.json, eval.txt, run.json.
inline RunResult train(const TrainConfig& config, const Dataset& data, const std::filesystem::path& out,
                       const RunOptions& options = {}) {
    config.validate();
    std::filesystem::create_directories(out);
    write_json(out / "config.json", config_to_json(config));
    Trainer trainer(config, data);
    RunResult result;

    const auto csv_path = out / "loss.csv";
    std::vector<std::string> kept_rows;
    if (options.resume) {
        trainer.restore(load_checkpoint(*options.resume));
        if (std::filesystem::exists(csv_path)) {
            std::ifstream in(csv_path);
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                if (std::stoll(line.substr(0, line.find(','))) < trainer.iteration()) kept_rows.push_back(line);
            }
        }
        const auto probe_path = out / "weight_probe.json";
        if (std::filesystem::exists(probe_path)) {
            for (const auto& p : read_json_file(probe_path, true)) {
                if (p.at("iter").get<std::int64_t>() < trainer.iteration()) {
                    result.probes.push_back({p.at("iter").get<std::int64_t>(), p.at("mean_weight_low").get<double>(),
                                             p.at("mean_weight_high").get<double>(),
                                             p.at("low_count").get<std::size_t>(),
                                             p.at("high_count").get<std::size_t>()});
                }
            }
        }
    }
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw DataError("cannot write '" + csv_path.string() + "'");
    csv << kLossCsvHeader << '\n';
    for (const auto& row : kept_rows) csv << row << '\n';

    std::set<std::int64_t> probe_iters;
    if (config.weight_probe) probe_iters = {config.horizon() / 4, config.horizon()};
    auto maybe_probe = [&] {
        if (probe_iters.count(trainer.iteration())) result.probes.push_back(trainer.probe_weights());
    };

    bool first = true;
    while (trainer.iteration() < config.total_iters) {
        maybe_probe();
        const StepRecord rec = trainer.step();
        if (first) {
            result.initial_l_s = rec.loss.l_s;
            first = false;
        }
        result.final_l_s = rec.loss.l_s;
        if (rec.iter % config.log_every == 0 || rec.iter + 1 == config.total_iters) {
            csv << csv_row(rec) << '\n';
        }
        if (!options.quiet && rec.iter % 100 == 0) {
            std::cerr << "iter " << rec.iter << " l_total " << rec.loss.l_total << " l_s " << rec.loss.l_s << '\n';
        }
        if (config.checkpoint_every > 0 && trainer.iteration() % config.checkpoint_every == 0 &&
            trainer.iteration() < config.total_iters) {
            csv.flush();
            char name[48];
            std::snprintf(name, sizeof name, "ckpt_%06lld.bin", static_cast<long long>(trainer.iteration()));
            save_checkpoint(out / name, trainer.checkpoint());
        }
    }
    maybe_probe();
    csv.close();
    save_checkpoint(out / "checkpoint.bin", trainer.checkpoint());

    nlohmann::json probes = nlohmann::json::array();
    for (const auto& p : result.probes) probes.push_back(probe_json(p));
    write_json(out / "weight_probe.json", probes);

    std::vector<Image> renders;
    if (!data.test.empty()) {
        result.report = trainer.evaluate(data.test, options.write_renders ? &renders : nullptr);
        write_json(out / "eval.json", report_to_json(result.report));
        std::ofstream txt(out / "eval.txt");
        print_report(txt, result.report);
    }
    if (options.write_renders && !renders.empty()) {
        std::filesystem::create_directories(out / "renders");
        for (std::size_t i = 0; i < renders.size(); ++i) {
            write_png(out / "renders" / detail::view_file("test", data.test[i].view_id), renders[i], 16);
        }
    }
    if (options.scene) result.floater_mass = trainer.floater(*options.scene);
    result.final_iteration = trainer.iteration();

    nlohmann::json manifest = {{"format", "fewview-run"},
                               {"version", 1},
                               {"mode", to_string(config.mode)},
                               {"iterations", result.final_iteration},
                               {"config", "config.json"},
                               {"loss_csv", "loss.csv"},
                               {"checkpoint", "checkpoint.bin"},
                               {"weight_probe", "weight_probe.json"}};
    if (!data.test.empty()) manifest["eval"] = "eval.json";
    if (result.floater_mass) manifest["floater_mass"] = *result.floater_mass;
    write_json(out / "run.json", manifest);
    return result;
}

/// Rebuilds a trainer from a run directory (config.json + checkpoint.bin).
inline Trainer load_run(const std::filesystem::path& run_dir, const Dataset& data) {
    const TrainConfig config = load_config(run_dir / "config.json");
    Trainer trainer(config, data);
    trainer.restore(load_checkpoint(run_dir / "checkpoint.bin"));
    return trainer;
}

}  // namespace fewview
