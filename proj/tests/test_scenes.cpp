#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

#include "fewview/scenes.hpp"

using namespace fewview;
namespace fs = std::filesystem;

namespace {

AnalyticScene single_sphere(double radius, double density) {
    AnalyticScene s;
    s.name = "sphere";
    Primitive p;
    p.size = Eigen::Vector3d::Constant(radius);
    p.albedo = Eigen::Vector3d::Ones();
    p.density = density;
    s.primitives = {p};
    return s;
}

// Quarter-resolution render settings with the same field of view.
SceneRenderSpec small_spec(int samples = 128) {
    SceneRenderSpec rs;
    rs.width = rs.height = 24;
    rs.focal *= 24.0 / 64.0;
    rs.oracle_samples = samples;
    return rs;
}

}  // namespace

TEST(EvalScene, EmptySpaceIsBackground) {
    AnalyticScene s = default_scene();
    s.background = {0.1, 0.2, 0.3};
    const auto p = eval_scene(s, Eigen::Vector3d(0.9, 0.9, 0.9));
    EXPECT_EQ(p.density, 0.0);
    EXPECT_EQ(p.albedo, s.background);
}

TEST(EvalScene, SphereCentre) {
    const AnalyticScene s = default_scene();
    const auto& red = s.primitives[0];
    const auto p = eval_scene(s, red.center);
    EXPECT_EQ(p.density, red.density);
    EXPECT_EQ(p.albedo, red.albedo);
}

TEST(EvalScene, OverlapAveragesAlbedo) {
    AnalyticScene s;
    Primitive a, b;
    a.center = {-0.1, 0, 0};
    b.center = {0.1, 0, 0};
    a.size = b.size = Eigen::Vector3d::Constant(0.4);
    a.albedo = {1, 0, 0};
    b.albedo = {0, 0, 1};
    s.primitives = {a, b};
    const auto p = eval_scene(s, Eigen::Vector3d::Zero());
    EXPECT_NEAR(p.density, 2 * a.density, 1e-12);
    EXPECT_NEAR((p.albedo - Eigen::Vector3d(0.5, 0, 0.5)).norm(), 0.0, 1e-15);
}

TEST(EvalScene, TaperIsMonotoneAndBounded) {
    double prev = 1.0;
    for (int i = 0; i <= 100; ++i) {
        const double d = 0.4 + 0.1 * i / 100.0;
        const double v = taper_profile(d, 0.5, 0.05);
        EXPECT_LE(v, prev);
        EXPECT_GE(v, 0.0);
        prev = v;
    }
    EXPECT_EQ(taper_profile(0.45, 0.5, 0.05), 1.0);
    EXPECT_EQ(taper_profile(0.5, 0.5, 0.05), 0.0);
}

TEST(EvalScene, CheckerAlternates) {
    const AnalyticScene s = default_scene();
    const Primitive& box = s.primitives[2];
    const double cell = box.checker_cell;
    const Eigen::Vector3d base = box.center + Eigen::Vector3d::Constant(0.5 * cell);  // a cell centre
    const Eigen::Vector3d next = base + Eigen::Vector3d(cell, 0, 0);
    for (double blend : {0.0, s.checker_blend}) {
        EXPECT_EQ(primitive_albedo(box, base, blend), box.albedo);
        EXPECT_EQ(primitive_albedo(box, next, blend), box.checker_albedo);
        EXPECT_EQ(primitive_albedo(box, next + Eigen::Vector3d(cell, 0, 0), blend), box.albedo);
    }
}

TEST(EvalScene, BlendedCheckerIsContinuousAcrossFaces) {
    const AnalyticScene s = default_scene();
    const Primitive& box = s.primitives[2];
    const Eigen::Vector3d face = box.center + Eigen::Vector3d(box.checker_cell, 0.3 * box.checker_cell, 0.5 * box.checker_cell);
    const Eigen::Vector3d h(1e-7, 0, 0);
    const Eigen::Vector3d mid = 0.5 * (box.albedo + box.checker_albedo);
    EXPECT_LT((primitive_albedo(box, face + h, s.checker_blend) - primitive_albedo(box, face - h, s.checker_blend)).norm(), 1e-5);
    EXPECT_LT((primitive_albedo(box, face, s.checker_blend) - mid).norm(), 1e-12);
    EXPECT_GT((primitive_albedo(box, face + h, 0.0) - primitive_albedo(box, face - h, 0.0)).norm(), 0.5);
}

TEST(Oracle, SupportIntervals) {
    Primitive sphere;
    sphere.size = Eigen::Vector3d::Constant(0.5);
    Ray r;
    r.origin = {0, 0, 3};
    r.direction = {0, 0, -1};
    double t0 = 0, t1 = 0;
    ASSERT_TRUE(primitive_support(sphere, r, t0, t1));
    EXPECT_DOUBLE_EQ(t0, 2.5);
    EXPECT_DOUBLE_EQ(t1, 3.5);
    Primitive box;
    box.shape = Shape::box;
    box.size = {0.5, 0.25, 1.0};
    ASSERT_TRUE(primitive_support(box, r, t0, t1));
    EXPECT_DOUBLE_EQ(t0, 2.0);
    EXPECT_DOUBLE_EQ(t1, 4.0);
    r.origin = {0, 0.3, 3};
    EXPECT_FALSE(primitive_support(box, r, t0, t1));
}

TEST(Oracle, BackgroundOnlyViewIsConstant) {
    AnalyticScene s = single_sphere(0.3, 40.0);
    s.primitives[0].center = {0, 0, -50};  // far behind the camera ring
    s.background = {0.2, 0.4, 0.6};
    const SceneRenderSpec rs = small_spec(16);
    const PosedImage v = render_oracle(s, ring_camera(rs, 0.0), rs);
    for (int r = 0; r < v.pixels.height; ++r) {
        for (int c = 0; c < v.pixels.width; ++c) EXPECT_EQ(v.pixels.rgb(r, c), s.background);
    }
}

TEST(Oracle, QuadratureConverges) {
    const AnalyticScene s = default_scene();
    const SceneRenderSpec a = s.render;
    SceneRenderSpec b = a;
    b.oracle_samples *= 2;
    for (double az : {0.0, 60.0, 137.0, 200.0}) {
        const Camera cam = ring_camera(a, az);
        const Image x = render_oracle(s, cam, a).pixels;
        const Image y = render_oracle(s, cam, b).pixels;
        double worst = 0.0;
        for (std::size_t i = 0; i < x.data.size(); ++i) worst = std::max(worst, std::abs(x.data[i] - y.data[i]));
        EXPECT_LT(worst, 1e-3) << "azimuth " << az;
    }
}

TEST(Oracle, SilhouetteMatchesProjection) {
    const double R = 0.5;
    const AnalyticScene s = single_sphere(R, 2000.0);
    SceneRenderSpec rs;
    rs.elevation_deg = 0.0;
    const PosedImage v = render_oracle(s, ring_camera(rs, 0.0), rs);
    const double D = rs.radius;
    const double expected = rs.focal * R / std::sqrt(D * D - R * R);
    // Widest horizontal run of covered pixels.
    int widest = 0;
    for (int r = 0; r < v.pixels.height; ++r) {
        int n = 0;
        for (int c = 0; c < v.pixels.width; ++c) n += v.pixels.at(r, c, 0) > 0.5 ? 1 : 0;
        widest = std::max(widest, n);
    }
    EXPECT_NEAR(widest / 2.0, expected, 1.0);
}

TEST(Dataset, RingGeometry) {
    const SceneRenderSpec rs;
    for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(train_azimuth(k, 3), 120.0 * k);
    const Eigen::Vector3d a = ring_camera(rs, train_azimuth(0, 3)).center();
    const Eigen::Vector3d b = ring_camera(rs, train_azimuth(1, 3)).center();
    const Eigen::Vector2d ha(a.x(), a.z()), hb(b.x(), b.z());
    EXPECT_NEAR(std::acos(ha.normalized().dot(hb.normalized())) * 180.0 / std::numbers::pi, 120.0, 1e-9);
    EXPECT_NEAR(a.norm(), rs.radius, 1e-12);
    for (int j = 0; j < 3; ++j) {
        for (int k = 0; k < 3; ++k) EXPECT_NE(test_azimuth(j, 3), train_azimuth(k, 3));
    }
}

TEST(Dataset, IdsDisjointAndDeterministic) {
    AnalyticScene s = default_scene();
    s.render = small_spec(32);
    const Dataset a = make_dataset(s, 3, 2);
    const Dataset b = make_dataset(s, 3, 2);
    ASSERT_EQ(a.train.size(), 3u);
    ASSERT_EQ(a.test.size(), 2u);
    for (const auto& t : a.train) {
        for (const auto& u : a.test) EXPECT_NE(t.view_id, u.view_id);
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.train[i].pixels.data, b.train[i].pixels.data);
    EXPECT_THROW(make_dataset(s, 7, 2), ConfigError);
    EXPECT_THROW(make_dataset(s, 3, -1), ConfigError);
}

TEST(FloaterMass, ZeroDensityField) {
    const AnalyticScene s = default_scene();
    const double m = floater_mass([](const ad::Matrix& x) { return Eigen::VectorXd::Zero(x.rows()); }, s, 16);
    EXPECT_EQ(m, 0.0);
}

TEST(FloaterMass, OracleDensityIsZeroOffPrimitives) {
    const AnalyticScene s = default_scene();
    const double m = floater_mass(
        [&](const ad::Matrix& x) {
            Eigen::VectorXd out(x.rows());
            for (ad::Index i = 0; i < x.rows(); ++i) out[i] = eval_scene(s, x.row(i).transpose()).density;
            return out;
        },
        s, 16);
    EXPECT_EQ(m, 0.0);
    EXPECT_FALSE(empty_space_grid(s, 16).empty());
}

TEST(FloaterMass, GridRefinementIsStableForSmoothFields) {
    const AnalyticScene s = default_scene();
    auto smooth = [](const ad::Matrix& x) { return Eigen::VectorXd(x.rowwise().squaredNorm()); };
    const double coarse = floater_mass(smooth, s, 16);
    const double fine = floater_mass(smooth, s, 32);
    EXPECT_LT(std::abs(fine - coarse) / fine, 0.1);
}

TEST(SceneConfig, RoundTrip) {
    const AnalyticScene s = default_scene();
    const AnalyticScene t = scene_from_json(scene_to_json(s));
    ASSERT_EQ(t.primitives.size(), s.primitives.size());
    EXPECT_EQ(scene_to_json(t), scene_to_json(s));
}

TEST(SceneConfig, NameAloneGivesDefaultScene) {
    const AnalyticScene t = scene_from_json(nlohmann::json{{"name", "two-spheres-and-box"}, {"render", {{"width", 32}}}});
    EXPECT_EQ(t.primitives.size(), 3u);
    EXPECT_EQ(t.render.width, 32);
}

TEST(SceneConfig, Errors) {
    EXPECT_THROW(scene_from_json(nlohmann::json{{"colour", 1}}), ConfigError);
    EXPECT_THROW(scene_from_json(nlohmann::json::parse(R"({"primitives": [{"shape": "cone", "center": [0,0,0]}]})")),
                 ConfigError);
    const fs::path p = fs::temp_directory_path() / "fewview_bad_scene.json";
    std::ofstream(p) << "{\n  \"name\": \"x\",\n  \"taper\": ,\n}\n";
    try {
        load_scene(p);
        FAIL() << "expected a parse error";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    fs::remove(p);
}
