#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fewview/autodiff.hpp"
#include "fewview/encoding.hpp"
#include "fewview/error.hpp"

namespace fewview {

/// Layer layout of the radiance MLP.
///
/// The trunk consumes only the position encoding (re-injected at
/// `skip_layer`); the density head reads the trunk output. The color branch
/// concatenates trunk features with the direction encoding, passes one ReLU
/// layer of `head_width`, and feeds two heads: RGB mean (sigmoid) and a
/// scalar variance (softplus + beta_min).
struct MlpArchitecture {
    int trunk_depth = 4;
    int trunk_width = 64;
    int skip_layer = 2;
    int head_width = 32;
    double beta_min = 1e-4;

    bool has_skip() const noexcept { return skip_layer > 0 && skip_layer < trunk_depth; }

    void validate() const {
        if (trunk_depth < 1 || trunk_width < 1 || head_width < 1) {
            throw ConfigError("architecture: depth and widths must be positive");
        }
        if (!(beta_min > 0.0)) throw ConfigError("architecture: beta_min must be > 0");
    }
};

struct FieldVars {
    ad::Var color;  // P x 3, in [0, 1]
    ad::Var beta2;  // P x 1, >= beta_min
    ad::Var sigma;  // P x 1, >= 0
};

class RadianceField {
public:
    RadianceField(MlpArchitecture arch, EncodingConfig enc) : arch_(arch), enc_(enc) {
        arch_.validate();
        enc_.validate();
        const int pos = pos_width();
        const int dir = dir_width();
        const int w = arch_.trunk_width;
        for (int j = 0; j < arch_.trunk_depth; ++j) {
            const int in = j == 0 ? pos : w + (j == arch_.skip_layer && arch_.has_skip() ? pos : 0);
            add_linear("trunk." + std::to_string(j), in, w);
        }
        add_linear("density", w, 1);
        add_linear("color_hidden", w + dir, arch_.head_width);
        add_linear("color", arch_.head_width, 3);
        add_linear("beta", arch_.head_width, 1);
    }

    const MlpArchitecture& architecture() const noexcept { return arch_; }
    const EncodingConfig& encoding() const noexcept { return enc_; }
    int pos_width() const noexcept { return encoded_width(enc_.k_pos, enc_.include_raw); }
    int dir_width() const noexcept { return encoded_width(enc_.k_dir, enc_.include_raw); }

    ad::ParameterStore& parameters() noexcept { return params_; }
    const ad::ParameterStore& parameters() const noexcept { return params_; }

    /// Closed-form scalar parameter count of the layout.
    static std::int64_t parameter_count(const MlpArchitecture& a, const EncodingConfig& e) {
        const std::int64_t pos = encoded_width(e.k_pos, e.include_raw);
        const std::int64_t dir = encoded_width(e.k_dir, e.include_raw);
        const std::int64_t w = a.trunk_width;
        const std::int64_t h = a.head_width;
        std::int64_t n = pos * w + w;
        n += (a.trunk_depth - 1) * (w * w + w);
        if (a.has_skip()) n += pos * w;
        n += w + 1;
        n += (w + dir) * h + h;
        n += h * 3 + 3;
        n += h + 1;
        return n;
    }

    /// He-uniform weights (bound sqrt(6 / fan_in)) and zero biases, drawn
    /// in declaration order from a 64-bit Mersenne Twister seeded with `seed`.
    void init_parameters(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (auto& p : params_) {
            if (p.name().ends_with(".bias")) {
                p.value().setZero();
                continue;
            }
            const double bound = std::sqrt(6.0 / static_cast<double>(p.rows()));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (ad::Index i = 0; i < p.size(); ++i) p.value().data()[i] = dist(rng);
        }
    }

    /// Evaluates the field on P points. `x_enc` is P x pos_width (masked
    /// position features), `d_enc` is P x dir_width.
    FieldVars query(ad::Tape& tape, const ad::Matrix& x_enc, const ad::Matrix& d_enc) {
        if (x_enc.cols() != pos_width() || d_enc.cols() != dir_width() || x_enc.rows() != d_enc.rows()) {
            throw ConfigError("field query: feature shape mismatch (got " + std::to_string(x_enc.cols()) + "/" +
                              std::to_string(d_enc.cols()) + ", expected " + std::to_string(pos_width()) + "/" +
                              std::to_string(dir_width()) + ")");
        }
        ad::Var x = tape.constant(x_enc);
        ad::Var h = x;
        for (int j = 0; j < arch_.trunk_depth; ++j) {
            const std::string name = "trunk." + std::to_string(j);
            if (j > 0 && j == arch_.skip_layer && arch_.has_skip()) h = ad::concat_cols(h, x);
            h = checked(ad::relu(linear(tape, name, h)), name);
        }
        ad::Var sigma = checked(ad::softplus(linear(tape, "density", h)), "density");
        ad::Var hd = ad::concat_cols(h, tape.constant(d_enc));
        ad::Var hc = checked(ad::relu(linear(tape, "color_hidden", hd)), "color_hidden");
        ad::Var color = checked(ad::sigmoid(linear(tape, "color", hc)), "color");
        ad::Var beta2 = checked(ad::softplus(linear(tape, "beta", hc)) + arch_.beta_min, "beta");
        return {color, beta2, sigma};
    }

private:
    void add_linear(const std::string& name, int in, int out) {
        params_.add(name + ".weight", in, out);
        params_.add(name + ".bias", 1, out);
    }

    ad::Var linear(ad::Tape& tape, const std::string& name, const ad::Var& in) {
        ad::Parameter* w = params_.find(name + ".weight");
        ad::Parameter* b = params_.find(name + ".bias");
        return ad::matmul(in, tape.param(*w)) + tape.param(*b);
    }

    static ad::Var checked(ad::Var v, const std::string& layer) {
        if (!ad::all_finite(v.value())) throw NumericalError("non-finite activation in layer '" + layer + "'");
        return v;
    }

    MlpArchitecture arch_;
    EncodingConfig enc_;
    ad::ParameterStore params_;
};

}  // namespace fewview
