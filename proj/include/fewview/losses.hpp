#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "fewview/autodiff.hpp"
#include "fewview/error.hpp"

namespace fewview {

/// Balance terms of the composite objective and the schedules they follow.
struct LossWeights {
    double lambda_u = 0.01;
    double lambda_o = 0.01;
    double lambda_r_start = 1e-5;
    double lambda_r_end = 1e-3;
    std::int64_t lambda_r_ramp = 512;
    double steepness = 10.0;  // s in log(1 + s p)

    /// Linear warm-up of the ray-density weight, constant after the ramp.
    double lambda_r(std::int64_t iter) const {
        if (lambda_r_ramp <= 0) return lambda_r_end;
        const double u = std::clamp(static_cast<double>(iter) / static_cast<double>(lambda_r_ramp), 0.0, 1.0);
        return lambda_r_start + (lambda_r_end - lambda_r_start) * u;
    }
};

/// Blurred supervision strictly before `phase_switch`, raw from it onwards.
template <typename T>
const T& two_phase_target(std::int64_t iter, std::int64_t phase_switch, const T& raw, const T& blurred) {
    return iter < phase_switch ? blurred : raw;
}

inline void check_rows(const ad::Var& v, const ad::Matrix& target, const char* what) {
    if (v.rows() != target.rows() || v.cols() != target.cols()) {
        throw ConfigError(std::string(what) + ": rendered and target batches differ in shape");
    }
}

/// Mean over rays of ||c_bar - target||^2.
inline ad::Var loss_s(const ad::Var& c_bar, const ad::Matrix& target) {
    check_rows(c_bar, target, "loss_s");
    ad::Var diff = c_bar - c_bar.tape()->constant(target);
    return ad::sum(diff * diff) / static_cast<double>(target.rows());
}

/// Gaussian negative log likelihood per ray with learned variance:
///   ||target - c_bar||^2 / (2 beta_bar2) + log(beta_bar2) / 2,
/// averaged over rays. beta_bar2 is clamped below at `beta_floor`.
inline ad::Var loss_u(const ad::Var& c_bar, const ad::Var& beta_bar2, const ad::Matrix& target,
                      double beta_floor = 1e-4) {
    check_rows(c_bar, target, "loss_u");
    const ad::Matrix& b = beta_bar2.value();
    for (ad::Index i = 0; i < b.size(); ++i) {
        if (!(b.data()[i] >= 0.0)) {
            throw NumericalError("loss_u: composited variance " + std::to_string(b.data()[i]) + " is negative");
        }
    }
    ad::Var diff = c_bar - c_bar.tape()->constant(target);
    ad::Var r2 = ad::row_sum(diff * diff);
    ad::Var var = ad::clamp_min(beta_bar2, beta_floor);
    ad::Var per_ray = r2 / (2.0 * var) + 0.5 * ad::log(var);
    return ad::mean(per_ray);
}

/// Ray-density sparsity: mean over rays of (1/N) sum_i log(1 + s p_i).
inline ad::Var loss_r(const ad::Var& p, double s) {
    return ad::mean(ad::log(1.0 + s * p));
}

/// Occlusion penalty: mean over rays of the mean of the first M weights.
inline ad::Var loss_o(const ad::Var& weights, int m) {
    if (m < 1 || m > weights.cols()) {
        throw ConfigError("loss_o: near-camera window M=" + std::to_string(m) + " outside [1, " +
                          std::to_string(weights.cols()) + "]");
    }
    return ad::mean(ad::slice_cols(weights, 0, m));
}

/// Near-camera window for N samples: ceil(fraction * N), at least 1.
inline int occlusion_window(int samples, double fraction = 0.1) {
    return std::clamp(static_cast<int>(std::ceil(fraction * samples - 1e-12)), 1, samples);
}

/// L_low + h L_high over a batch partitioned by per-ray high-frequency flags;
/// both parts are normalised by the full batch size so that h = 1 is the
/// plain mean squared error.
inline ad::Var alt_linear_weight_loss(const ad::Var& c_bar, const ad::Matrix& target,
                                      const std::vector<std::uint8_t>& high_frequency, double h) {
    check_rows(c_bar, target, "alt_linear_weight_loss");
    if (high_frequency.size() != static_cast<std::size_t>(target.rows())) {
        throw ConfigError("alt_linear_weight_loss: flag count differs from batch size");
    }
    ad::Matrix scale(target.rows(), 1);
    for (ad::Index r = 0; r < target.rows(); ++r) scale(r, 0) = high_frequency[static_cast<std::size_t>(r)] ? h : 1.0;
    ad::Var diff = c_bar - c_bar.tape()->constant(target);
    ad::Var per_ray = ad::row_sum(diff * diff) * c_bar.tape()->constant(scale);
    return ad::sum(per_ray) / static_cast<double>(target.rows());
}

/// Linear high-frequency weight h = clamp(iter / horizon, 0, 1).
inline double linear_high_frequency_weight(std::int64_t iter, std::int64_t horizon) {
    if (horizon <= 0) return 1.0;
    return std::clamp(static_cast<double>(iter) / static_cast<double>(horizon), 0.0, 1.0);
}

/// Mean over rays of the entropy -sum p log p (with 0 log 0 = 0).
inline ad::Var alt_entropy_loss(const ad::Var& p) {
    ad::Var plogp = p * ad::log(ad::clamp_min(p, 1e-300));
    return -(ad::sum(plogp) / static_cast<double>(p.rows()));
}

/// The log(1 + s x) sparsity penalty applied to compositing weights.
inline ad::Var alt_emptiness_on_w(const ad::Var& w, double s) { return ad::mean(ad::log(1.0 + s * w)); }

struct LossBreakdown {
    double l_s = 0.0;
    double l_u = 0.0;
    double l_r = 0.0;
    double l_o = 0.0;
    double l_total = 0.0;
    double lambda_u = 0.0;
    double lambda_r = 0.0;
    double lambda_o = 0.0;
    bool has_u = false;
    bool has_r = false;
    bool has_o = false;
    double mean_beta_bar2 = 0.0;
    double mean_weight = 0.0;  // mean of 1 / beta_bar2 over rays
};

/// Individual terms of one batch; absent terms contribute nothing.
struct LossTerms {
    ad::Var s;
    std::optional<ad::Var> u;
    std::optional<ad::Var> r;
    std::optional<ad::Var> o;
};

/// L_total = L_s + lambda_u L_u + lambda_r L_r + lambda_o L_o, returning the
/// differentiable total and filling `out` with the scalar breakdown.
inline ad::Var total_loss(const LossTerms& terms, double lambda_u, double lambda_r, double lambda_o,
                          LossBreakdown& out) {
    ad::Var total = terms.s;
    out.l_s = terms.s.scalar();
    out.lambda_u = lambda_u;
    out.lambda_r = lambda_r;
    out.lambda_o = lambda_o;
    out.has_u = terms.u.has_value();
    out.has_r = terms.r.has_value();
    out.has_o = terms.o.has_value();
    out.l_u = out.l_r = out.l_o = 0.0;
    if (terms.u) {
        total = total + lambda_u * *terms.u;
        out.l_u = terms.u->scalar();
    }
    if (terms.r) {
        total = total + lambda_r * *terms.r;
        out.l_r = terms.r->scalar();
    }
    if (terms.o) {
        total = total + lambda_o * *terms.o;
        out.l_o = terms.o->scalar();
    }
    out.l_total = total.scalar();
    return total;
}

}  // namespace fewview
