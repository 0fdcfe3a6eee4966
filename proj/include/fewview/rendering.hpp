#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "fewview/autodiff.hpp"
#include "fewview/camera.hpp"
#include "fewview/error.hpp"
#include "fewview/field.hpp"

namespace fewview {

struct FieldOutput {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    double beta2 = 0.0;
    double sigma = 0.0;
};

struct RaySamples {
    std::vector<double> t;
    std::vector<double> delta;
    std::vector<FieldOutput> outputs;
};

struct RenderedPixel {
    Eigen::Vector3d c_bar = Eigen::Vector3d::Zero();
    double beta_bar2 = 0.0;
    std::vector<double> weights;
    std::vector<double> alphas;
    std::vector<double> transmittances;
    double residual_transmittance = 1.0;
};

/// Depths of N samples in [t_near, t_far]: one uniform draw per equal-width
/// bin, or bin midpoints when `rng` is null.
inline std::vector<double> stratified_sample(const Ray& ray, int n, std::mt19937_64* rng) {
    if (n < 1) throw ConfigError("stratified_sample: N must be >= 1");
    std::vector<double> t(static_cast<std::size_t>(n));
    const double width = (ray.t_far - ray.t_near) / static_cast<double>(n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        const double offset = rng ? unit(*rng) : 0.5;
        t[static_cast<std::size_t>(i)] = ray.t_near + (static_cast<double>(i) + offset) * width;
    }
    return t;
}

/// delta_i = t_{i+1} - t_i, with the open last interval capped at
/// min(t_far - t_N, median of the other intervals).
inline std::vector<double> sample_intervals(const std::vector<double>& t, double t_far) {
    const std::size_t n = t.size();
    std::vector<double> delta(n);
    for (std::size_t i = 0; i + 1 < n; ++i) delta[i] = t[i + 1] - t[i];
    if (n == 0) return delta;
    double last = t_far - t[n - 1];
    if (n > 1) {
        std::vector<double> others(delta.begin(), delta.end() - 1);
        std::sort(others.begin(), others.end());
        const std::size_t m = others.size();
        const double median = m % 2 == 1 ? others[m / 2] : 0.5 * (others[m / 2 - 1] + others[m / 2]);
        last = std::min(last, median);
    }
    delta[n - 1] = last;
    return delta;
}

/// Quadrature of the volume rendering integral for one ray:
///   alpha_i = 1 - exp(-sigma_i delta_i),  T_i = exp(-sum_{j<i} sigma_j delta_j),
///   w_i = T_i alpha_i,  c_bar = sum w_i c_i,  beta_bar2 = sum w_i^2 beta2_i.
inline RenderedPixel composite(const RaySamples& samples) {
    const std::size_t n = samples.outputs.size();
    if (samples.delta.size() != n) throw ConfigError("composite: delta/output length mismatch");
    RenderedPixel px;
    px.weights.resize(n);
    px.alphas.resize(n);
    px.transmittances.resize(n);
    double optical = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const FieldOutput& o = samples.outputs[i];
        const double tau = o.sigma * samples.delta[i];
        const double trans = std::exp(-optical);
        const double alpha = 1.0 - std::exp(-tau);
        const double w = trans * alpha;
        px.transmittances[i] = trans;
        px.alphas[i] = alpha;
        px.weights[i] = w;
        px.c_bar += w * o.c;
        px.beta_bar2 += w * w * o.beta2;
        optical += tau;
    }
    px.residual_transmittance = std::exp(-optical);
    return px;
}

/// p_i = alpha_i / sum_j alpha_j; uniform when every alpha is zero.
inline std::vector<double> ray_density(const std::vector<double>& alphas) {
    double total = 0.0;
    for (double a : alphas) total += a;
    std::vector<double> p(alphas.size());
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        p[i] = total > 0.0 ? alphas[i] / total : 1.0 / static_cast<double>(alphas.size());
    }
    return p;
}

// ---------------------------------------------------------------------------
// Batched, differentiable rendering. Points are laid out ray-major:
// point row r * N + i is sample i of ray r.

struct BatchSamples {
    ad::Matrix t;      // R x N depths
    ad::Matrix delta;  // R x N intervals
    int samples_per_ray = 0;
};

inline BatchSamples stratified_sample_batch(const std::vector<Ray>& rays, int n, std::mt19937_64* rng) {
    BatchSamples s;
    s.samples_per_ray = n;
    s.t.resize(static_cast<ad::Index>(rays.size()), n);
    s.delta.resize(static_cast<ad::Index>(rays.size()), n);
    for (std::size_t r = 0; r < rays.size(); ++r) {
        const auto t = stratified_sample(rays[r], n, rng);
        const auto d = sample_intervals(t, rays[r].t_far);
        for (int i = 0; i < n; ++i) {
            s.t(static_cast<ad::Index>(r), i) = t[static_cast<std::size_t>(i)];
            s.delta(static_cast<ad::Index>(r), i) = d[static_cast<std::size_t>(i)];
        }
    }
    return s;
}

/// Sample positions (P x 3) and per-point unit directions (P x 3).
inline std::pair<ad::Matrix, ad::Matrix> sample_points(const std::vector<Ray>& rays, const BatchSamples& s) {
    const ad::Index n = s.samples_per_ray;
    ad::Matrix pts(static_cast<ad::Index>(rays.size()) * n, 3);
    ad::Matrix dirs(pts.rows(), 3);
    for (std::size_t r = 0; r < rays.size(); ++r) {
        for (ad::Index i = 0; i < n; ++i) {
            const ad::Index row = static_cast<ad::Index>(r) * n + i;
            const Eigen::Vector3d x = rays[r].origin + s.t(static_cast<ad::Index>(r), i) * rays[r].direction;
            pts.row(row) = x.transpose();
            dirs.row(row) = rays[r].direction.transpose();
        }
    }
    return {pts, dirs};
}

struct RenderVars {
    ad::Var color;      // R x 3, c_bar
    ad::Var beta_bar2;  // R x 1
    ad::Var weights;    // R x N
    ad::Var alphas;     // R x N
    ad::Var residual;   // R x 1, T_{N+1}
};

inline RenderVars composite(ad::Tape& tape, const FieldVars& field, const ad::Matrix& delta) {
    const ad::Index rays = delta.rows();
    const ad::Index n = delta.cols();
    ad::Var sigma = ad::reshape(field.sigma, rays, n);
    ad::Var tau = sigma * tape.constant(delta);
    ad::Var alpha = 1.0 - ad::exp(-tau);
    ad::Var trans = ad::exp(-ad::exclusive_cumsum(tau));
    ad::Var w = trans * alpha;
    ad::Var color;
    for (ad::Index ch = 0; ch < 3; ++ch) {
        ad::Var c = ad::reshape(ad::slice_cols(field.color, ch, 1), rays, n);
        ad::Var channel = ad::row_sum(w * c);
        color = ch == 0 ? channel : ad::concat_cols(color, channel);
    }
    ad::Var beta = ad::reshape(field.beta2, rays, n);
    ad::Var beta_bar2 = ad::row_sum(w * w * beta);
    ad::Var residual = ad::exp(-ad::row_sum(tau));
    return {color, beta_bar2, w, alpha, residual};
}

/// Row-wise ray density p_i = alpha_i / sum_j alpha_j (uniform for all-zero rows).
inline ad::Var ray_density(const ad::Var& alphas) { return ad::row_normalize(alphas); }

}  // namespace fewview
