#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "fewview/error.hpp"

namespace fewview {

struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;
};

/// Pinhole camera. `camera_to_world` maps camera coordinates (x right,
/// y up, looking down -z) to world coordinates.
struct Camera {
    Intrinsics intrinsics;
    Eigen::Matrix4d camera_to_world = Eigen::Matrix4d::Identity();

    Eigen::Vector3d center() const { return camera_to_world.block<3, 1>(0, 3); }
    Eigen::Matrix3d rotation() const { return camera_to_world.block<3, 3>(0, 0); }
};

struct PixelId {
    int view = 0;
    int row = 0;
    int col = 0;
};

struct Ray {
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    Eigen::Vector3d direction = -Eigen::Vector3d::UnitZ();
    double t_near = 0.0;
    double t_far = 1.0;
    PixelId pixel;
};

inline void validate_camera(const Camera& cam) {
    const auto& k = cam.intrinsics;
    if (!(std::isfinite(k.fx) && std::isfinite(k.fy)) || k.fx == 0.0 || k.fy == 0.0) {
        throw ConfigError("camera: singular intrinsics (fx=" + std::to_string(k.fx) + ", fy=" + std::to_string(k.fy) +
                          ")");
    }
    const Eigen::Matrix3d r = cam.rotation();
    if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
        std::abs(r.determinant() - 1.0) > 1e-6) {
        throw ConfigError("camera: pose rotation is not orthonormal");
    }
}

/// Ray through the center of pixel (row, col).
inline Ray pixel_ray(const Camera& cam, int row, int col, double t_near, double t_far, int view = 0) {
    const auto& k = cam.intrinsics;
    const double u = static_cast<double>(col) + 0.5;
    const double v = static_cast<double>(row) + 0.5;
    const Eigen::Vector3d d_cam((u - k.cx) / k.fx, -(v - k.cy) / k.fy, -1.0);
    Ray ray;
    ray.origin = cam.center();
    ray.direction = (cam.rotation() * d_cam).normalized();
    ray.t_near = t_near;
    ray.t_far = t_far;
    ray.pixel = {view, row, col};
    return ray;
}

/// Back-projects the given pixels through pixel centers.
inline std::vector<Ray> generate_rays(const Camera& cam, const std::vector<PixelId>& pixels, double t_near,
                                      double t_far) {
    validate_camera(cam);
    if (!(t_near < t_far)) throw ConfigError("generate_rays: t_near must be < t_far");
    std::vector<Ray> rays;
    rays.reserve(pixels.size());
    for (const auto& p : pixels) rays.push_back(pixel_ray(cam, p.row, p.col, t_near, t_far, p.view));
    return rays;
}

/// All pixels of the image in row-major order.
inline std::vector<Ray> generate_image_rays(const Camera& cam, double t_near, double t_far, int view = 0) {
    std::vector<PixelId> pixels;
    pixels.reserve(static_cast<std::size_t>(cam.intrinsics.width * cam.intrinsics.height));
    for (int r = 0; r < cam.intrinsics.height; ++r) {
        for (int c = 0; c < cam.intrinsics.width; ++c) pixels.push_back({view, r, c});
    }
    return generate_rays(cam, pixels, t_near, t_far);
}

/// Camera at `eye` looking at `target`, with world `up` hint.
inline Eigen::Matrix4d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                               const Eigen::Vector3d& up = Eigen::Vector3d::UnitY()) {
    const Eigen::Vector3d back = (eye - target).normalized();
    const Eigen::Vector3d right = up.cross(back).normalized();
    const Eigen::Vector3d true_up = back.cross(right);
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 1>(0, 0) = right;
    m.block<3, 1>(0, 1) = true_up;
    m.block<3, 1>(0, 2) = back;
    m.block<3, 1>(0, 3) = eye;
    return m;
}

}  // namespace fewview
