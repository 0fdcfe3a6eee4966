#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "fewview/autodiff.hpp"
#include "fewview/camera.hpp"
#include "fewview/error.hpp"
#include "fewview/image.hpp"

namespace fewview {

// ---------------------------------------------------------------------------
// Image filtering

/// Half-sample symmetric reflection (d c b a | a b c d | d c b a).
inline int reflect_index(int i, int n) {
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

inline std::vector<double> gaussian_kernel(int size, double sigma) {
    if (size < 1 || size % 2 == 0) throw ConfigError("gaussian_blur: kernel size must be odd and >= 1");
    if (!(sigma > 0.0)) throw ConfigError("gaussian_blur: sigma must be > 0");
    const int radius = size / 2;
    std::vector<double> k(static_cast<std::size_t>(size));
    double total = 0.0;
    for (int j = -radius; j <= radius; ++j) {
        const double v = std::exp(-static_cast<double>(j * j) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(j + radius)] = v;
        total += v;
    }
    for (double& v : k) v /= total;
    return k;
}

/// Separable Gaussian blur with a normalised kernel and reflected borders.
inline Image gaussian_blur(const Image& image, int kernel_size, double sigma) {
    const auto k = gaussian_kernel(kernel_size, sigma);
    if (kernel_size == 1) return image;
    const int radius = kernel_size / 2;
    Image tmp(image.width, image.height, image.channels);
    Image out(image.width, image.height, image.channels);
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            for (int ch = 0; ch < image.channels; ++ch) {
                double acc = 0.0;
                for (int j = -radius; j <= radius; ++j) {
                    acc += k[static_cast<std::size_t>(j + radius)] * image.at(r, reflect_index(c + j, image.width), ch);
                }
                tmp.at(r, c, ch) = acc;
            }
        }
    }
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            for (int ch = 0; ch < image.channels; ++ch) {
                double acc = 0.0;
                for (int j = -radius; j <= radius; ++j) {
                    acc += k[static_cast<std::size_t>(j + radius)] * tmp.at(reflect_index(r + j, image.height), c, ch);
                }
                out.at(r, c, ch) = acc;
            }
        }
    }
    return out;
}

/// Sobel gradient magnitude of the luminance channel.
inline std::vector<double> sobel_magnitude(const Image& image) {
    std::vector<double> mag(image.pixel_count());
    auto lum = [&](int r, int c) {
        return image.luminance(reflect_index(r, image.height), reflect_index(c, image.width));
    };
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            const double gx = (lum(r - 1, c + 1) + 2.0 * lum(r, c + 1) + lum(r + 1, c + 1)) -
                              (lum(r - 1, c - 1) + 2.0 * lum(r, c - 1) + lum(r + 1, c - 1));
            const double gy = (lum(r + 1, c - 1) + 2.0 * lum(r + 1, c) + lum(r + 1, c + 1)) -
                              (lum(r - 1, c - 1) + 2.0 * lum(r - 1, c) + lum(r - 1, c + 1));
            mag[static_cast<std::size_t>(r) * image.width + c] = std::hypot(gx, gy);
        }
    }
    return mag;
}

/// Per-pixel flag, true for high-frequency (edge) pixels.
struct FrequencyMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> high;

    bool is_high(int row, int col) const { return high[static_cast<std::size_t>(row) * width + col] != 0; }
    std::size_t high_count() const { return static_cast<std::size_t>(std::count(high.begin(), high.end(), 1)); }
};

/// Marks pixels whose Sobel magnitude exceeds `threshold` times the image's
/// maximum magnitude. A constant image has no high-frequency pixels.
inline FrequencyMap classify_frequency(const Image& image, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("classify_frequency: threshold must be in (0, 1]");
    const auto mag = sobel_magnitude(image);
    const double peak = mag.empty() ? 0.0 : *std::max_element(mag.begin(), mag.end());
    FrequencyMap map{image.width, image.height, std::vector<std::uint8_t>(mag.size(), 0)};
    if (peak <= 0.0) return map;
    for (std::size_t i = 0; i < mag.size(); ++i) map.high[i] = mag[i] > threshold * peak ? 1 : 0;
    return map;
}

// ---------------------------------------------------------------------------
// Posed views and the dataset directory format

struct SceneBounds {
    Eigen::Vector3d min = Eigen::Vector3d::Constant(-1.0);
    Eigen::Vector3d max = Eigen::Vector3d::Constant(1.0);

    Eigen::Vector3d center() const { return 0.5 * (min + max); }
    Eigen::Vector3d half_extent() const { return 0.5 * (max - min); }
    bool contains(const Eigen::Vector3d& x) const {
        return (x.array() >= min.array()).all() && (x.array() <= max.array()).all();
    }
    /// Affine map of the box onto [-1, 1]^3.
    Eigen::Vector3d normalize(const Eigen::Vector3d& x) const {
        return (x - center()).cwiseQuotient(half_extent());
    }
};

struct PosedImage {
    Image pixels;
    Camera camera;
    int view_id = 0;
    double near = 0.0;
    double far = 1.0;
    std::optional<Image> mask;  // single channel, 1 = evaluated
};

struct Dataset {
    std::vector<PosedImage> train;
    std::vector<PosedImage> test;
    SceneBounds bounds;
};

inline void validate_view(const PosedImage& v) {
    if (v.pixels.width < 8 || v.pixels.height < 8) {
        throw DataError("view " + std::to_string(v.view_id) + ": images must be at least 8x8");
    }
    for (double x : v.pixels.data) {
        if (!(x >= 0.0 && x <= 1.0)) throw DataError("view " + std::to_string(v.view_id) + ": pixel outside [0,1]");
    }
    if (!(v.near < v.far)) throw DataError("view " + std::to_string(v.view_id) + ": near must be < far");
    validate_camera(v.camera);
}

namespace detail {

inline nlohmann::json vec_json(const Eigen::Vector3d& v) { return nlohmann::json::array({v[0], v[1], v[2]}); }

inline Eigen::Vector3d json_vec(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw DataError("manifest: expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline std::string view_file(const char* prefix, int id) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03d.png", prefix, id);
    return buf;
}

}  // namespace detail

inline constexpr const char* kManifestName = "manifest.json";

/// Writes images plus manifest.json. Views keep their ids; the split is
/// recorded per view.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& data, int bit_depth = 16) {
    std::filesystem::create_directories(dir);
    nlohmann::json views = nlohmann::json::array();
    auto emit = [&](const PosedImage& v, const char* split) {
        const std::string file = detail::view_file(split, v.view_id);
        write_png(dir / file, v.pixels, bit_depth);
        nlohmann::json m;
        for (int r = 0; r < 4; ++r) {
            m.push_back({v.camera.camera_to_world(r, 0), v.camera.camera_to_world(r, 1), v.camera.camera_to_world(r, 2),
                         v.camera.camera_to_world(r, 3)});
        }
        nlohmann::json entry = {
            {"id", v.view_id},
            {"split", split},
            {"image", file},
            {"width", v.pixels.width},
            {"height", v.pixels.height},
            {"intrinsics",
             {{"fx", v.camera.intrinsics.fx},
              {"fy", v.camera.intrinsics.fy},
              {"cx", v.camera.intrinsics.cx},
              {"cy", v.camera.intrinsics.cy}}},
            {"camera_to_world", m},
            {"near", v.near},
            {"far", v.far},
        };
        if (v.mask) {
            const std::string mask_file = detail::view_file((std::string(split) + "_mask").c_str(), v.view_id);
            write_png(dir / mask_file, *v.mask, 8);
            entry["mask"] = mask_file;
        }
        views.push_back(entry);
    };
    for (const auto& v : data.train) emit(v, "train");
    for (const auto& v : data.test) emit(v, "test");
    nlohmann::json manifest = {
        {"format", "fewview-dataset"},
        {"version", 1},
        {"bounds", {{"min", detail::vec_json(data.bounds.min)}, {"max", detail::vec_json(data.bounds.max)}}},
        {"views", views},
    };
    std::ofstream out(dir / kManifestName);
    if (!out) throw DataError("cannot write manifest in '" + dir.string() + "'");
    out << manifest.dump(2) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    const auto path = dir / kManifestName;
    std::ifstream in(path);
    if (!in) throw DataError("dataset manifest '" + path.string() + "' not found");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("manifest parse error: " + std::string(e.what()));
    }
    Dataset data;
    try {
        if (manifest.value("format", "") != "fewview-dataset") throw DataError("manifest: unknown format");
        if (manifest.value("version", 0) != 1) throw DataError("manifest: unsupported version");
        data.bounds.min = detail::json_vec(manifest.at("bounds").at("min"));
        data.bounds.max = detail::json_vec(manifest.at("bounds").at("max"));
        for (const auto& e : manifest.at("views")) {
            PosedImage v;
            v.view_id = e.at("id").get<int>();
            v.pixels = read_png(dir / e.at("image").get<std::string>());
            if (v.pixels.channels != 3) throw DataError("view " + std::to_string(v.view_id) + ": expected RGB image");
            if (v.pixels.width != e.at("width").get<int>() || v.pixels.height != e.at("height").get<int>()) {
                throw DataError("view " + std::to_string(v.view_id) + ": image size disagrees with manifest");
            }
            const auto& k = e.at("intrinsics");
            v.camera.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                                   k.at("cy").get<double>(),  v.pixels.width,         v.pixels.height};
            const auto& m = e.at("camera_to_world");
            if (!m.is_array() || m.size() != 4) throw DataError("manifest: camera_to_world must be 4x4");
            for (int r = 0; r < 4; ++r) {
                for (int c = 0; c < 4; ++c) v.camera.camera_to_world(r, c) = m.at(r).at(c).get<double>();
            }
            v.near = e.at("near").get<double>();
            v.far = e.at("far").get<double>();
            if (e.contains("mask")) v.mask = read_png(dir / e.at("mask").get<std::string>());
            validate_view(v);
            const std::string split = e.at("split").get<std::string>();
            if (split == "train") {
                data.train.push_back(std::move(v));
            } else if (split == "test") {
                data.test.push_back(std::move(v));
            } else {
                throw DataError("manifest: unknown split '" + split + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest: " + std::string(e.what()));
    } catch (const ConfigError& e) {
        throw DataError(std::string("manifest: ") + e.what());
    }
    if (data.train.empty()) throw DataError("dataset has no training views");
    return data;
}

// ---------------------------------------------------------------------------
// Training supervision and ray batches

struct SupervisionOptions {
    int blur_kernel = 3;
    double blur_sigma = 0.8;
    double edge_threshold = 0.1;
};

/// A training view with its precomputed blurred copy and edge map.
struct TrainingView {
    PosedImage view;
    Image blurred;
    FrequencyMap frequency;
};

inline std::vector<TrainingView> prepare_views(const std::vector<PosedImage>& views, const SupervisionOptions& opt) {
    std::vector<TrainingView> out;
    out.reserve(views.size());
    for (const auto& v : views) {
        out.push_back({v, gaussian_blur(v.pixels, opt.blur_kernel, opt.blur_sigma),
                       classify_frequency(v.pixels, opt.edge_threshold)});
    }
    return out;
}

struct RayBatch {
    std::vector<Ray> rays;
    ad::Matrix raw;      // R x 3
    ad::Matrix blurred;  // R x 3
    std::vector<std::uint8_t> high_frequency;

    std::size_t size() const noexcept { return rays.size(); }
};

enum class Sampling { with_replacement, without_replacement };

/// Pixel index space spanning all training views in order.
inline std::size_t total_pixels(const std::vector<TrainingView>& views) {
    std::size_t n = 0;
    for (const auto& v : views) n += v.view.pixels.pixel_count();
    return n;
}

inline void append_pixel(RayBatch& batch, const std::vector<TrainingView>& views, std::size_t global) {
    std::size_t vi = 0;
    while (global >= views[vi].view.pixels.pixel_count()) {
        global -= views[vi].view.pixels.pixel_count();
        ++vi;
    }
    const auto& tv = views[vi];
    const int w = tv.view.pixels.width;
    const int row = static_cast<int>(global / static_cast<std::size_t>(w));
    const int col = static_cast<int>(global % static_cast<std::size_t>(w));
    const auto r = static_cast<ad::Index>(batch.rays.size());
    batch.rays.push_back(pixel_ray(tv.view.camera, row, col, tv.view.near, tv.view.far, static_cast<int>(vi)));
    batch.raw.row(r) = tv.view.pixels.rgb(row, col).transpose();
    batch.blurred.row(r) = tv.blurred.rgb(row, col).transpose();
    batch.high_frequency.push_back(tv.frequency.is_high(row, col) ? 1 : 0);
}

/// Uniform pixel batch over all training views.
///
/// With replacement, pixels are drawn from `rng`. Without replacement, the
/// batch for `iteration` is the slice [iteration * B, (iteration + 1) * B) of
/// an endless sequence of epoch permutations, each seeded from `seed` and the
/// epoch number, so a batch depends only on (seed, iteration).
inline RayBatch sample_ray_batch(const std::vector<TrainingView>& views, std::size_t batch_size, std::mt19937_64& rng,
                                 std::int64_t iteration, Sampling mode = Sampling::with_replacement,
                                 std::uint64_t seed = 0) {
    if (views.empty()) throw DataError("sample_ray_batch: no training views");
    const std::size_t total = total_pixels(views);
    RayBatch batch;
    batch.rays.reserve(batch_size);
    batch.raw.resize(static_cast<ad::Index>(batch_size), 3);
    batch.blurred.resize(static_cast<ad::Index>(batch_size), 3);
    batch.high_frequency.reserve(batch_size);
    if (mode == Sampling::with_replacement) {
        std::uniform_int_distribution<std::size_t> pick(0, total - 1);
        for (std::size_t i = 0; i < batch_size; ++i) append_pixel(batch, views, pick(rng));
        return batch;
    }
    std::vector<std::size_t> perm(total);
    std::int64_t current_epoch = -1;
    const auto start = static_cast<std::uint64_t>(iteration) * batch_size;
    for (std::size_t i = 0; i < batch_size; ++i) {
        const std::uint64_t pos = start + i;
        const auto epoch = static_cast<std::int64_t>(pos / total);
        if (epoch != current_epoch) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            std::mt19937_64 shuffler(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch + 1)));
            std::shuffle(perm.begin(), perm.end(), shuffler);
            current_epoch = epoch;
        }
        append_pixel(batch, views, perm[pos % total]);
    }
    return batch;
}

}  // namespace fewview
