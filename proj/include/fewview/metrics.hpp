#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fewview/error.hpp"
#include "fewview/image.hpp"
#include "fewview/supervision.hpp"
#include "json.hpp"

namespace fewview {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

inline void check_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) throw ConfigError(std::string(what) + ": images differ in shape");
}

inline double mse(const Image& a, const Image& b) {
    check_same_shape(a, b, "mse");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return a.data.empty() ? 0.0 : acc / static_cast<double>(a.data.size());
}

/// 10 log10(1 / mse); +inf when the images are identical.
inline double psnr_from_mse(double m) { return m <= 0.0 ? kInfinity : -10.0 * std::log10(m); }

inline double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

/// Single-scale SSIM on luminance with an 11x11 Gaussian window (sigma 1.5),
/// averaged over all fully contained windows.
inline double ssim(const Image& a, const Image& b) {
    check_same_shape(a, b, "ssim");
    constexpr int win = 11;
    if (a.width < win || a.height < win) throw ConfigError("ssim: images must be at least 11x11");
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;
    const auto k = gaussian_kernel(win, 1.5);
    const int w = a.width;
    const int h = a.height;
    std::vector<double> la(a.pixel_count()), lb(b.pixel_count());
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            la[static_cast<std::size_t>(r) * w + c] = a.luminance(r, c);
            lb[static_cast<std::size_t>(r) * w + c] = b.luminance(r, c);
        }
    }
    // Five filtered maps: mu_a, mu_b, E[a^2], E[b^2], E[ab], over valid windows.
    const int ow = w - win + 1;
    const int oh = h - win + 1;
    std::vector<double> rows(static_cast<std::size_t>(5) * h * ow, 0.0);
    auto row_at = [&](int m, int r, int c) -> double& {
        return rows[(static_cast<std::size_t>(m) * h + r) * ow + c];
    };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < ow; ++c) {
            for (int j = 0; j < win; ++j) {
                const std::size_t idx = static_cast<std::size_t>(r) * w + c + j;
                const double kw = k[static_cast<std::size_t>(j)];
                row_at(0, r, c) += kw * la[idx];
                row_at(1, r, c) += kw * lb[idx];
                row_at(2, r, c) += kw * la[idx] * la[idx];
                row_at(3, r, c) += kw * lb[idx] * lb[idx];
                row_at(4, r, c) += kw * la[idx] * lb[idx];
            }
        }
    }
    double total = 0.0;
    for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
            double m[5] = {0, 0, 0, 0, 0};
            for (int j = 0; j < win; ++j) {
                const double kw = k[static_cast<std::size_t>(j)];
                for (int q = 0; q < 5; ++q) m[q] += kw * row_at(q, r + j, c);
            }
            const double va = m[2] - m[0] * m[0];
            const double vb = m[3] - m[1] * m[1];
            const double cov = m[4] - m[0] * m[1];
            total += ((2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2)) /
                     ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
        }
    }
    return total / (static_cast<double>(oh) * ow);
}

/// PSNR restricted to low- and high-frequency pixels. A side with no pixels
/// is absent.
struct FrequencySplit {
    std::optional<double> low_psnr;
    std::optional<double> high_psnr;
    double low_mse = 0.0;
    double high_mse = 0.0;
    std::size_t low_count = 0;
    std::size_t high_count = 0;
};

inline FrequencySplit frequency_split_psnr(const Image& a, const Image& b, const FrequencyMap& map) {
    check_same_shape(a, b, "frequency_split_psnr");
    if (map.width != a.width || map.height != a.height) {
        throw ConfigError("frequency_split_psnr: mask size differs from image");
    }
    double sum[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};
    for (int r = 0; r < a.height; ++r) {
        for (int c = 0; c < a.width; ++c) {
            const int side = map.is_high(r, c) ? 1 : 0;
            for (int ch = 0; ch < a.channels; ++ch) {
                const double d = a.at(r, c, ch) - b.at(r, c, ch);
                sum[side] += d * d;
            }
            ++count[side];
        }
    }
    FrequencySplit out;
    out.low_count = count[0];
    out.high_count = count[1];
    const double per = static_cast<double>(a.channels);
    if (count[0] > 0) {
        out.low_mse = sum[0] / (per * static_cast<double>(count[0]));
        out.low_psnr = psnr_from_mse(out.low_mse);
    }
    if (count[1] > 0) {
        out.high_mse = sum[1] / (per * static_cast<double>(count[1]));
        out.high_psnr = psnr_from_mse(out.high_mse);
    }
    return out;
}

/// sqrt(MSE * sqrt(1 - SSIM)): geometric mean of the two computable factors.
/// Not comparable with three-factor averages that include LPIPS.
inline double aggregate_score(double psnr_db, double ssim_value) {
    const double m = std::isinf(psnr_db) ? 0.0 : std::pow(10.0, -psnr_db / 10.0);
    return std::sqrt(m * std::sqrt(std::max(0.0, 1.0 - ssim_value)));
}

/// Zeroes pixels whose mask value is below 0.5 (applied to both images).
inline Image apply_mask(const Image& img, const Image& mask) {
    if (mask.width != img.width || mask.height != img.height) throw DataError("mask size differs from image");
    Image out = img;
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            if (mask.at(r, c, 0) < 0.5) {
                for (int ch = 0; ch < img.channels; ++ch) out.at(r, c, ch) = 0.0;
            }
        }
    }
    return out;
}

struct ViewMetrics {
    int view_id = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<double> low_psnr;
    std::optional<double> high_psnr;
    double aggregate = 0.0;
};

struct EvalReport {
    std::vector<ViewMetrics> views;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    std::optional<double> mean_low_psnr;
    std::optional<double> mean_high_psnr;
    double mean_aggregate = 0.0;
};

/// Metrics of one prediction against its ground truth. The frequency split
/// is derived from the (masked) ground truth.
inline ViewMetrics evaluate_view(const Image& predicted, const PosedImage& truth, double edge_threshold = 0.1) {
    Image gt = truth.pixels;
    Image pred = predicted;
    if (truth.mask) {
        gt = apply_mask(gt, *truth.mask);
        pred = apply_mask(pred, *truth.mask);
    }
    ViewMetrics m;
    m.view_id = truth.view_id;
    m.psnr = psnr(pred, gt);
    m.ssim = ssim(pred, gt);
    const auto split = frequency_split_psnr(pred, gt, classify_frequency(gt, edge_threshold));
    m.low_psnr = split.low_psnr;
    m.high_psnr = split.high_psnr;
    m.aggregate = aggregate_score(m.psnr, m.ssim);
    return m;
}

inline EvalReport summarize(std::vector<ViewMetrics> views) {
    EvalReport r;
    r.views = std::move(views);
    if (r.views.empty()) return r;
    double low = 0.0, high = 0.0;
    std::size_t n_low = 0, n_high = 0;
    for (const auto& v : r.views) {
        r.mean_psnr += v.psnr;
        r.mean_ssim += v.ssim;
        r.mean_aggregate += v.aggregate;
        if (v.low_psnr) {
            low += *v.low_psnr;
            ++n_low;
        }
        if (v.high_psnr) {
            high += *v.high_psnr;
            ++n_high;
        }
    }
    const double n = static_cast<double>(r.views.size());
    r.mean_psnr /= n;
    r.mean_ssim /= n;
    r.mean_aggregate /= n;
    if (n_low) r.mean_low_psnr = low / static_cast<double>(n_low);
    if (n_high) r.mean_high_psnr = high / static_cast<double>(n_high);
    return r;
}

namespace detail {

inline nlohmann::json metric_json(double v) {
    if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
    return v;
}

inline nlohmann::json metric_json(const std::optional<double>& v) { return v ? metric_json(*v) : nullptr; }

inline std::string metric_text(const std::optional<double>& v, int precision = 3) {
    if (!v) return "-";
    if (std::isinf(*v)) return *v > 0 ? "+inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", precision, *v);
    return buf;
}

}  // namespace detail

/// Infinite PSNR is written as the string "+inf"; an absent partition as null.
inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json views = nlohmann::json::array();
    for (const auto& v : r.views) {
        views.push_back({{"view_id", v.view_id},
                         {"psnr", detail::metric_json(v.psnr)},
                         {"ssim", v.ssim},
                         {"low_freq_psnr", detail::metric_json(v.low_psnr)},
                         {"high_freq_psnr", detail::metric_json(v.high_psnr)},
                         {"aggregate", v.aggregate}});
    }
    return {{"views", views},
            {"mean",
             {{"psnr", detail::metric_json(r.mean_psnr)},
              {"ssim", r.mean_ssim},
              {"low_freq_psnr", detail::metric_json(r.mean_low_psnr)},
              {"high_freq_psnr", detail::metric_json(r.mean_high_psnr)},
              {"aggregate", r.mean_aggregate}}}};
}

inline void print_report(std::ostream& os, const EvalReport& r) {
    char line[160];
    std::snprintf(line, sizeof line, "%-6s %10s %8s %10s %10s %10s\n", "view", "PSNR", "SSIM", "low PSNR", "high PSNR",
                  "aggregate");
    os << line;
    auto row = [&](const std::string& label, double p, double s, const std::optional<double>& lo,
                   const std::optional<double>& hi, double agg) {
        std::snprintf(line, sizeof line, "%-6s %10s %8.4f %10s %10s %10.5f\n", label.c_str(),
                      detail::metric_text(p).c_str(), s, detail::metric_text(lo).c_str(),
                      detail::metric_text(hi).c_str(), agg);
        os << line;
    };
    for (const auto& v : r.views) row(std::to_string(v.view_id), v.psnr, v.ssim, v.low_psnr, v.high_psnr, v.aggregate);
    row("mean", r.mean_psnr, r.mean_ssim, r.mean_low_psnr, r.mean_high_psnr, r.mean_aggregate);
}

}  // namespace fewview
