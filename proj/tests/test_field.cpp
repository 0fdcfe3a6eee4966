#include <random>

#include <gtest/gtest.h>

#include "fewview/encoding.hpp"
#include "fewview/field.hpp"

using namespace fewview;

namespace {

ad::Matrix random_features(ad::Index rows, ad::Index cols, std::uint64_t seed, double scale = 3.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    ad::Matrix m(rows, cols);
    for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

}  // namespace

TEST(Field, ZeroWeightsGiveActivationMidpoints) {
    RadianceField f({}, {});
    for (auto& p : f.parameters()) p.value().setZero();
    ad::Tape tape;
    const auto out = f.query(tape, random_features(4, f.pos_width(), 1), random_features(4, f.dir_width(), 2));
    for (ad::Index r = 0; r < 4; ++r) {
        for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out.color.value()(r, c), 0.5);
        EXPECT_NEAR(out.sigma.value()(r, 0), std::log(2.0), 1e-15);
        EXPECT_NEAR(out.beta2.value()(r, 0), std::log(2.0) + f.architecture().beta_min, 1e-15);
    }
}

TEST(Field, OutputRanges) {
    RadianceField f({}, {});
    f.init_parameters(3);
    ad::Tape tape;
    const auto out = f.query(tape, random_features(256, f.pos_width(), 4, 50.0), random_features(256, f.dir_width(), 5));
    EXPECT_GE(out.color.value().minCoeff(), 0.0);
    EXPECT_LE(out.color.value().maxCoeff(), 1.0);
    EXPECT_GE(out.sigma.value().minCoeff(), 0.0);
    EXPECT_GE(out.beta2.value().minCoeff(), f.architecture().beta_min);
}

TEST(Field, DensityIgnoresDirection) {
    RadianceField f({}, {});
    f.init_parameters(6);
    const ad::Matrix x = random_features(16, f.pos_width(), 7);
    ad::Tape t1, t2;
    const auto a = f.query(t1, x, random_features(16, f.dir_width(), 8));
    const auto b = f.query(t2, x, random_features(16, f.dir_width(), 9));
    EXPECT_EQ(a.sigma.value(), b.sigma.value());
    EXPECT_NE(a.color.value(), b.color.value());
}

TEST(Field, InitIsSeeded) {
    RadianceField a({}, {}), b({}, {}), c({}, {});
    a.init_parameters(11);
    b.init_parameters(11);
    c.init_parameters(12);
    bool differs = false;
    for (std::size_t i = 0; i < a.parameters().count(); ++i) {
        EXPECT_EQ(a.parameters()[i].value(), b.parameters()[i].value());
        differs = differs || a.parameters()[i].value() != c.parameters()[i].value();
    }
    EXPECT_TRUE(differs);
}

TEST(Field, InitBoundsAndZeroBias) {
    RadianceField f({}, {});
    f.init_parameters(1);
    for (const auto& p : f.parameters()) {
        if (p.name().ends_with(".bias")) {
            EXPECT_TRUE(p.value().isZero(0.0)) << p.name();
        } else {
            EXPECT_LE(p.value().cwiseAbs().maxCoeff(), std::sqrt(6.0 / p.rows())) << p.name();
        }
    }
}

TEST(Field, ParameterCountMatchesLayout) {
    MlpArchitecture arch;
    EncodingConfig enc;
    RadianceField f(arch, enc);
    const std::int64_t pos = 51, dir = 27, w = 64, h = 32;
    const std::int64_t expected = (pos * w + w) + 3 * (w * w + w) + pos * w + (w + 1) + ((w + dir) * h + h) +
                                  (h * 3 + 3) + (h + 1);
    EXPECT_EQ(RadianceField::parameter_count(arch, enc), expected);
    EXPECT_EQ(f.parameters().scalar_count(), expected);

    MlpArchitecture tiny{2, 8, 0, 4, 1e-3};
    EncodingConfig small{2, 1, true};
    EXPECT_EQ(RadianceField(tiny, small).parameters().scalar_count(), RadianceField::parameter_count(tiny, small));
}

TEST(Field, ShapeMismatchThrows) {
    RadianceField f({}, {});
    ad::Tape tape;
    EXPECT_THROW(f.query(tape, random_features(2, f.pos_width() - 1, 1), random_features(2, f.dir_width(), 1)),
                 ConfigError);
    EXPECT_THROW(f.query(tape, random_features(2, f.pos_width(), 1), random_features(3, f.dir_width(), 1)),
                 ConfigError);
}

TEST(Field, NonFiniteActivationThrows) {
    RadianceField f({}, {});
    f.init_parameters(1);
    f.parameters()[0].value()(0, 0) = std::nan("");
    ad::Tape tape;
    EXPECT_THROW(f.query(tape, random_features(2, f.pos_width(), 1), random_features(2, f.dir_width(), 1)),
                 NumericalError);
}

TEST(Field, InvalidArchitectureThrows) {
    MlpArchitecture bad;
    bad.beta_min = 0.0;
    EXPECT_THROW(RadianceField(bad, {}), ConfigError);
    EncodingConfig enc;
    enc.k_pos = 0;
    EXPECT_THROW(RadianceField({}, enc), ConfigError);
}
