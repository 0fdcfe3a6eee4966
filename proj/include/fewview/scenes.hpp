#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fewview/camera.hpp"
#include "fewview/error.hpp"
#include "fewview/image.hpp"
#include "fewview/rendering.hpp"
#include "fewview/supervision.hpp"
#include "json.hpp"

namespace fewview {

enum class Shape { sphere, box };

struct Primitive {
    Shape shape = Shape::sphere;
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    Eigen::Vector3d size = Eigen::Vector3d::Constant(0.5);  // radius in x for spheres, half extents for boxes
    Eigen::Vector3d albedo = Eigen::Vector3d::Constant(0.5);
    double density = 40.0;
    double checker_cell = 0.0;  // 0 disables the checker pattern
    Eigen::Vector3d checker_albedo = Eigen::Vector3d::Zero();

    double radius() const { return shape == Shape::sphere ? size.x() : size.minCoeff(); }
};

struct SceneRenderSpec {
    int n_test = 3;
    double radius = 3.2;
    double elevation_deg = 30.0;
    int width = 64;
    int height = 64;
    double focal = 87.9;
    int oracle_samples = 256;
    double near = 1.45;
    double far = 4.95;
};

struct AnalyticScene {
    std::string name = "two-spheres-and-box";
    std::vector<Primitive> primitives;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    SceneBounds bounds;
    double taper = 0.05;          // falloff width as a fraction of primitive radius
    double checker_blend = 0.1;   // checker transition width as a fraction of a cell
    SceneRenderSpec render;
};

/// Scene used by the experiments: two spheres resting on a checkered box.
inline AnalyticScene default_scene() {
    AnalyticScene s;
    Primitive a;
    a.center = {-0.42, 0.05, 0.22};
    a.size = Eigen::Vector3d::Constant(0.34);
    a.albedo = {0.90, 0.25, 0.20};
    Primitive b;
    b.center = {0.42, 0.12, -0.18};
    b.size = Eigen::Vector3d::Constant(0.28);
    b.albedo = {0.20, 0.45, 0.90};
    Primitive box;
    box.shape = Shape::box;
    box.center = {0.0, -0.45, 0.0};
    box.size = {0.75, 0.15, 0.6};
    box.albedo = {0.95, 0.85, 0.30};
    box.checker_cell = 0.15;
    box.checker_albedo = {0.10, 0.12, 0.10};
    s.primitives = {a, b, box};
    return s;
}

inline void validate_scene(const AnalyticScene& s) {
    if (!((s.bounds.max.array() > s.bounds.min.array()).all())) throw ConfigError("scene: empty bounds");
    if (!(s.taper > 0.0 && s.taper < 1.0)) throw ConfigError("scene: taper must be in (0, 1)");
    if (!(s.checker_blend >= 0.0 && s.checker_blend <= 0.5)) throw ConfigError("scene: checker_blend must be in [0, 0.5]");
    for (std::size_t i = 0; i < s.primitives.size(); ++i) {
        const auto& p = s.primitives[i];
        const std::string tag = "scene: primitive " + std::to_string(i);
        if (!(p.density >= 0.0)) throw ConfigError(tag + " has negative density");
        if (!((p.size.array() > 0.0).all())) throw ConfigError(tag + " has non-positive size");
        const Eigen::Vector3d ext = p.shape == Shape::sphere ? Eigen::Vector3d::Constant(p.size.x()) : p.size;
        if (!s.bounds.contains(p.center - ext) || !s.bounds.contains(p.center + ext)) {
            throw ConfigError(tag + " extends outside the scene bounds");
        }
        if (p.checker_cell < 0.0) throw ConfigError(tag + " has negative checker cell");
    }
    const auto& r = s.render;
    if (r.width < 8 || r.height < 8) throw ConfigError("scene: render size must be at least 8x8");
    if (r.n_test < 0) throw ConfigError("scene: n_test must be >= 0");
    if (!(r.near > 0.0 && r.near < r.far)) throw ConfigError("scene: need 0 < near < far");
    if (!(r.focal > 0.0)) throw ConfigError("scene: focal must be > 0");
    if (r.oracle_samples < 4) throw ConfigError("scene: oracle_samples must be >= 4");
    if (!(r.radius > 0.0)) throw ConfigError("scene: ring radius must be > 0");
}

/// Cosine taper: 1 for d <= r - w, 0 for d >= r.
inline double taper_profile(double d, double r, double w) {
    if (d <= r - w) return 1.0;
    if (d >= r) return 0.0;
    return 0.5 * (1.0 + std::cos(std::numbers::pi * (d - (r - w)) / w));
}

inline double primitive_occupancy(const Primitive& p, const Eigen::Vector3d& x, double taper) {
    const double w = taper * p.radius();
    if (p.shape == Shape::sphere) return taper_profile((x - p.center).norm(), p.size.x(), w);
    const Eigen::Vector3d d = (x - p.center).cwiseAbs();
    double occ = 1.0;
    for (int a = 0; a < 3 && occ > 0.0; ++a) occ *= taper_profile(d[a], p.size[a], w);
    return occ;
}

/// Checker albedo by cell parity. With `blend` > 0 the parity sign
/// prod_a sign(sin(pi q_a)) is replaced by a clamped sinusoid, so colour
/// changes continuously over a band of `blend` cells around each cell face.
inline Eigen::Vector3d primitive_albedo(const Primitive& p, const Eigen::Vector3d& x, double blend = 0.0) {
    if (p.checker_cell <= 0.0) return p.albedo;
    const Eigen::Vector3d q = (x - p.center) / p.checker_cell;
    if (blend <= 0.0) {
        const long parity = static_cast<long>(std::floor(q.x())) + static_cast<long>(std::floor(q.y())) +
                            static_cast<long>(std::floor(q.z()));
        return (parity & 1L) ? p.checker_albedo : p.albedo;
    }
    const double scale = std::sin(std::numbers::pi * std::min(blend, 0.5));
    double sign = 1.0;
    for (int a = 0; a < 3; ++a) sign *= std::clamp(std::sin(std::numbers::pi * q[a]) / scale, -1.0, 1.0);
    return 0.5 * (1.0 + sign) * p.albedo + 0.5 * (1.0 - sign) * p.checker_albedo;
}

/// Parameter interval where `ray` crosses the support of `p` (its sphere or
/// box). False when the ray misses it.
inline bool primitive_support(const Primitive& p, const Ray& ray, double& t0, double& t1) {
    if (p.shape == Shape::sphere) {
        const Eigen::Vector3d oc = ray.origin - p.center;
        const double b = oc.dot(ray.direction);
        const double disc = b * b - (oc.squaredNorm() - p.size.x() * p.size.x());
        if (disc <= 0.0) return false;
        const double root = std::sqrt(disc);
        t0 = -b - root;
        t1 = -b + root;
        return true;
    }
    t0 = -std::numeric_limits<double>::infinity();
    t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double lo = p.center[a] - p.size[a] - ray.origin[a];
        const double hi = p.center[a] + p.size[a] - ray.origin[a];
        if (ray.direction[a] == 0.0) {
            if (lo > 0.0 || hi < 0.0) return false;
            continue;
        }
        double ta = lo / ray.direction[a];
        double tb = hi / ray.direction[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    return t0 < t1;
}

struct ScenePoint {
    Eigen::Vector3d albedo;
    double density = 0.0;
};

/// Summed primitive densities; albedo is their density-weighted blend, or the
/// background colour in empty space.
inline ScenePoint eval_scene(const AnalyticScene& scene, const Eigen::Vector3d& x) {
    ScenePoint out{Eigen::Vector3d::Zero(), 0.0};
    for (const auto& p : scene.primitives) {
        const double d = p.density * primitive_occupancy(p, x, scene.taper);
        if (d <= 0.0) continue;
        out.density += d;
        out.albedo += d * primitive_albedo(p, x, scene.checker_blend);
    }
    if (out.density > 0.0) {
        out.albedo /= out.density;
    } else {
        out.albedo = scene.background;
    }
    return out;
}

/// Ground-truth colour of one ray by midpoint quadrature with `samples`
/// points. Quadrature covers only the span of [t_near, t_far] that meets a
/// primitive; density is zero elsewhere, so nothing is lost.
inline Eigen::Vector3d render_ray(const AnalyticScene& scene, const Ray& ray, int samples) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& p : scene.primitives) {
        double t0 = 0.0, t1 = 0.0;
        if (!primitive_support(p, ray, t0, t1)) continue;
        lo = std::min(lo, t0);
        hi = std::max(hi, t1);
    }
    lo = std::max(lo, ray.t_near);
    hi = std::min(hi, ray.t_far);
    if (!(lo < hi)) return scene.background;
    Ray span = ray;
    span.t_near = lo;
    span.t_far = hi;
    RaySamples rs;
    rs.t = stratified_sample(span, samples, nullptr);
    rs.delta.assign(rs.t.size(), (hi - lo) / static_cast<double>(samples));
    rs.outputs.resize(rs.t.size());
    for (std::size_t i = 0; i < rs.t.size(); ++i) {
        const ScenePoint sp = eval_scene(scene, ray.origin + rs.t[i] * ray.direction);
        rs.outputs[i].c = sp.albedo;
        rs.outputs[i].sigma = sp.density;
    }
    const RenderedPixel px = composite(rs);
    return px.c_bar + px.residual_transmittance * scene.background;
}

inline Camera ring_camera(const SceneRenderSpec& rs, double azimuth_deg) {
    const double az = azimuth_deg * std::numbers::pi / 180.0;
    const double el = rs.elevation_deg * std::numbers::pi / 180.0;
    const Eigen::Vector3d eye(rs.radius * std::cos(el) * std::sin(az), rs.radius * std::sin(el),
                              rs.radius * std::cos(el) * std::cos(az));
    Camera cam;
    cam.intrinsics = {rs.focal, rs.focal, 0.5 * rs.width, 0.5 * rs.height, rs.width, rs.height};
    cam.camera_to_world = look_at(eye, Eigen::Vector3d::Zero());
    return cam;
}

inline PosedImage render_oracle(const AnalyticScene& scene, const Camera& camera, const SceneRenderSpec& rs,
                                int view_id = 0) {
    validate_camera(camera);
    PosedImage v;
    v.camera = camera;
    v.view_id = view_id;
    v.near = rs.near;
    v.far = rs.far;
    v.pixels = Image(camera.intrinsics.width, camera.intrinsics.height, 3);
    for (int r = 0; r < v.pixels.height; ++r) {
        for (int c = 0; c < v.pixels.width; ++c) {
            const Ray ray = pixel_ray(camera, r, c, rs.near, rs.far, view_id);
            const Eigen::Vector3d rgb = render_ray(scene, ray, rs.oracle_samples).cwiseMax(0.0).cwiseMin(1.0);
            v.pixels.set_rgb(r, c, rgb);
        }
    }
    return v;
}

/// Training azimuth of view k out of n: 360 k / n degrees.
inline double train_azimuth(int k, int n) { return 360.0 * k / n; }

/// Test views sit halfway between consecutive test slots, offset from training views.
inline double test_azimuth(int j, int n) { return 360.0 * (j + 0.5) / n; }

/// Evenly spaced training views on the camera ring plus interleaved test views.
/// Training ids are 0..n_train-1, test ids follow.
inline Dataset make_dataset(const AnalyticScene& scene, int n_train, int n_test) {
    if (n_train != 3 && n_train != 6 && n_train != 9) {
        throw ConfigError("make_dataset: view count must be 3, 6 or 9 (got " + std::to_string(n_train) + ")");
    }
    if (n_test < 0) throw ConfigError("make_dataset: n_test must be >= 0");
    validate_scene(scene);
    Dataset data;
    data.bounds = scene.bounds;
    for (int k = 0; k < n_train; ++k) {
        data.train.push_back(render_oracle(scene, ring_camera(scene.render, train_azimuth(k, n_train)), scene.render, k));
    }
    for (int j = 0; j < n_test; ++j) {
        data.test.push_back(
            render_oracle(scene, ring_camera(scene.render, test_azimuth(j, n_test)), scene.render, n_train + j));
    }
    return data;
}

/// Cell centres of a res^3 grid over the bounds where the analytic density is zero.
inline std::vector<Eigen::Vector3d> empty_space_grid(const AnalyticScene& scene, int res) {
    if (res < 1) throw ConfigError("floater_mass: grid resolution must be >= 1");
    std::vector<Eigen::Vector3d> pts;
    const Eigen::Vector3d span = scene.bounds.max - scene.bounds.min;
    for (int i = 0; i < res; ++i) {
        for (int j = 0; j < res; ++j) {
            for (int k = 0; k < res; ++k) {
                const Eigen::Vector3d x =
                    scene.bounds.min + Eigen::Vector3d((i + 0.5) / res, (j + 0.5) / res, (k + 0.5) / res).cwiseProduct(span);
                if (eval_scene(scene, x).density == 0.0) pts.push_back(x);
            }
        }
    }
    return pts;
}

/// Mean predicted density over empty-space grid points. `sigma_fn` maps a
/// P x 3 matrix of world positions to P densities.
template <typename SigmaFn>
double floater_mass(SigmaFn&& sigma_fn, const AnalyticScene& scene, int res = 32) {
    const auto pts = empty_space_grid(scene, res);
    if (pts.empty()) return 0.0;
    constexpr std::size_t chunk = 4096;
    double total = 0.0;
    for (std::size_t start = 0; start < pts.size(); start += chunk) {
        const std::size_t n = std::min(chunk, pts.size() - start);
        ad::Matrix x(static_cast<ad::Index>(n), 3);
        for (std::size_t i = 0; i < n; ++i) x.row(static_cast<ad::Index>(i)) = pts[start + i].transpose();
        const Eigen::VectorXd s = sigma_fn(x);
        total += s.sum();
    }
    return total / static_cast<double>(pts.size());
}

// ---------------------------------------------------------------------------
// Scene config (JSON)

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : keys) known = known || it.key() == k;
        if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

inline Eigen::Vector3d cfg_vec(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace detail

inline AnalyticScene scene_from_json(const nlohmann::json& j) {
    AnalyticScene s;
    try {
        detail::reject_unknown(j, {"name", "background", "bounds", "taper", "checker_blend", "primitives", "render"},
                               "scene");
        if (j.contains("name")) s.name = j["name"].get<std::string>();
        if (s.name == "two-spheres-and-box" && !j.contains("primitives")) s = default_scene();
        if (j.contains("name")) s.name = j["name"].get<std::string>();
        if (j.contains("background")) s.background = detail::cfg_vec(j["background"], "scene.background");
        if (j.contains("taper")) s.taper = j["taper"].get<double>();
        if (j.contains("checker_blend")) s.checker_blend = j["checker_blend"].get<double>();
        if (j.contains("bounds")) {
            detail::reject_unknown(j["bounds"], {"min", "max"}, "scene.bounds");
            s.bounds.min = detail::cfg_vec(j["bounds"].at("min"), "scene.bounds.min");
            s.bounds.max = detail::cfg_vec(j["bounds"].at("max"), "scene.bounds.max");
        }
        if (j.contains("primitives")) {
            s.primitives.clear();
            for (const auto& e : j["primitives"]) {
                detail::reject_unknown(e, {"shape", "center", "radius", "half_extent", "albedo", "density", "checker"},
                                       "scene.primitives");
                Primitive p;
                const std::string shape = e.at("shape").get<std::string>();
                if (shape == "sphere") {
                    p.shape = Shape::sphere;
                    p.size = Eigen::Vector3d::Constant(e.at("radius").get<double>());
                } else if (shape == "box") {
                    p.shape = Shape::box;
                    p.size = detail::cfg_vec(e.at("half_extent"), "scene.primitives.half_extent");
                } else {
                    throw ConfigError("scene.primitives: unknown shape '" + shape + "'");
                }
                p.center = detail::cfg_vec(e.at("center"), "scene.primitives.center");
                p.albedo = detail::cfg_vec(e.at("albedo"), "scene.primitives.albedo");
                p.density = e.value("density", p.density);
                if (e.contains("checker")) {
                    detail::reject_unknown(e["checker"], {"cell", "albedo"}, "scene.primitives.checker");
                    p.checker_cell = e["checker"].at("cell").get<double>();
                    p.checker_albedo = detail::cfg_vec(e["checker"].at("albedo"), "scene.primitives.checker.albedo");
                }
                s.primitives.push_back(p);
            }
        }
        if (j.contains("render")) {
            const auto& r = j["render"];
            detail::reject_unknown(r,
                                   {"n_test", "radius", "elevation_deg", "width", "height", "focal", "oracle_samples",
                                    "near", "far"},
                                   "scene.render");
            auto& o = s.render;
            o.n_test = r.value("n_test", o.n_test);
            o.radius = r.value("radius", o.radius);
            o.elevation_deg = r.value("elevation_deg", o.elevation_deg);
            o.width = r.value("width", o.width);
            o.height = r.value("height", o.height);
            o.focal = r.value("focal", o.focal);
            o.oracle_samples = r.value("oracle_samples", o.oracle_samples);
            o.near = r.value("near", o.near);
            o.far = r.value("far", o.far);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("scene config: " + std::string(e.what()));
    }
    validate_scene(s);
    return s;
}

inline nlohmann::json scene_to_json(const AnalyticScene& s) {
    auto vec = [](const Eigen::Vector3d& v) { return nlohmann::json::array({v[0], v[1], v[2]}); };
    nlohmann::json prims = nlohmann::json::array();
    for (const auto& p : s.primitives) {
        nlohmann::json e = {{"shape", p.shape == Shape::sphere ? "sphere" : "box"},
                            {"center", vec(p.center)},
                            {"albedo", vec(p.albedo)},
                            {"density", p.density}};
        if (p.shape == Shape::sphere) {
            e["radius"] = p.size.x();
        } else {
            e["half_extent"] = vec(p.size);
        }
        if (p.checker_cell > 0.0) e["checker"] = {{"cell", p.checker_cell}, {"albedo", vec(p.checker_albedo)}};
        prims.push_back(e);
    }
    const auto& r = s.render;
    return {{"name", s.name},
            {"background", vec(s.background)},
            {"bounds", {{"min", vec(s.bounds.min)}, {"max", vec(s.bounds.max)}}},
            {"taper", s.taper},
            {"checker_blend", s.checker_blend},
            {"primitives", prims},
            {"render",
             {{"n_test", r.n_test},
              {"radius", r.radius},
              {"elevation_deg", r.elevation_deg},
              {"width", r.width},
              {"height", r.height},
              {"focal", r.focal},
              {"oracle_samples", r.oracle_samples},
              {"near", r.near},
              {"far", r.far}}}};
}

/// Parses a JSON file; syntax errors report line and column.
inline nlohmann::json read_json_file(const std::filesystem::path& path, bool data_error = false) {
    std::ifstream in(path);
    if (!in) {
        const std::string msg = "cannot open '" + path.string() + "'";
        if (data_error) throw DataError(msg);
        throw ConfigError(msg);
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        const std::string msg = path.string() + ": " + e.what();
        if (data_error) throw DataError(msg);
        throw ConfigError(msg);
    }
}

inline AnalyticScene load_scene(const std::filesystem::path& path) { return scene_from_json(read_json_file(path)); }

}  // namespace fewview
