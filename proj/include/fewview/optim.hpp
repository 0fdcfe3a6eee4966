#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "fewview/autodiff.hpp"
#include "fewview/error.hpp"

namespace fewview {

/// Learning rate with a sinusoidal warm-up multiplier followed by log-linear
/// (exponential) decay from `lr_init` to `lr_final` over `decay_steps`.
///
///   lr(t) = warm(t) * exp(log(lr_init) * (1 - u) + log(lr_final) * u),  u = clamp(t / decay_steps)
///   warm(t) = warmup_mult + (1 - warmup_mult) * sin(pi/2 * clamp(t / warmup_steps))
///
/// With warmup_steps == 0 the multiplier is identically 1.
struct LrSchedule {
    double lr_init = 2e-3;
    double lr_final = 2e-4;
    std::int64_t decay_steps = 5000;
    std::int64_t warmup_steps = 100;
    double warmup_mult = 0.01;

    double operator()(std::int64_t step) const {
        const double t = static_cast<double>(std::max<std::int64_t>(step, 0));
        double warm = 1.0;
        if (warmup_steps > 0) {
            const double w = std::clamp(t / static_cast<double>(warmup_steps), 0.0, 1.0);
            warm = warmup_mult + (1.0 - warmup_mult) * std::sin(0.5 * std::numbers::pi * w);
        }
        const double u = decay_steps > 0 ? std::clamp(t / static_cast<double>(decay_steps), 0.0, 1.0) : 1.0;
        const double lr = std::exp(std::log(lr_init) * (1.0 - u) + std::log(lr_final) * u);
        return warm * lr;
    }
};

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers are keyed by parameter position
/// in the store and sized on first use.
class Adam {
public:
    explicit Adam(AdamOptions options = {}) : options_(options) {}

    const AdamOptions& options() const noexcept { return options_; }
    std::int64_t steps_taken() const noexcept { return steps_; }

    /// Applies one update with learning rate `lr`. The whole step is rejected
    /// (no parameter or moment changes) if any gradient entry is non-finite;
    /// the error names `iteration` and the offending parameter.
    void step(ad::ParameterStore& params, double lr, std::int64_t iteration) {
        for (const auto& p : params) {
            if (!ad::all_finite(p.grad())) {
                throw NumericalError("non-finite gradient at iteration " + std::to_string(iteration) +
                                     " in parameter '" + p.name() + "'");
            }
        }
        if (first_.size() != params.count()) {
            first_.clear();
            second_.clear();
            for (const auto& p : params) {
                first_.push_back(ad::Matrix::Zero(p.rows(), p.cols()));
                second_.push_back(ad::Matrix::Zero(p.rows(), p.cols()));
            }
        }
        ++steps_;
        const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
        for (std::size_t i = 0; i < params.count(); ++i) {
            auto& p = params[i];
            auto& m = first_[i];
            auto& v = second_[i];
            m = options_.beta1 * m + (1.0 - options_.beta1) * p.grad();
            v = options_.beta2 * v + (1.0 - options_.beta2) * p.grad().cwiseAbs2();
            p.value().array() -=
                lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + options_.epsilon);
        }
    }

    // State access for checkpointing.
    std::vector<ad::Matrix>& first_moments() noexcept { return first_; }
    std::vector<ad::Matrix>& second_moments() noexcept { return second_; }
    const std::vector<ad::Matrix>& first_moments() const noexcept { return first_; }
    const std::vector<ad::Matrix>& second_moments() const noexcept { return second_; }
    void set_steps(std::int64_t steps) noexcept { steps_ = steps; }

private:
    AdamOptions options_;
    std::int64_t steps_ = 0;
    std::vector<ad::Matrix> first_;
    std::vector<ad::Matrix> second_;
};

}  // namespace fewview
