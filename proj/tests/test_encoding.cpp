#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "fewview/encoding.hpp"

using namespace fewview;

TEST(Encode, ZeroInput) {
    const Eigen::VectorXd e = encode(Eigen::Vector3d::Zero(), 2);
    ASSERT_EQ(e.size(), 15);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(e[i], 0.0);
    for (int k = 0; k < 2; ++k) {
        for (int c = 0; c < 3; ++c) {
            EXPECT_EQ(e[3 + 6 * k + c], 0.0);
            EXPECT_EQ(e[3 + 6 * k + 3 + c], 1.0);
        }
    }
}

TEST(Encode, UnitXFirstBand) {
    const Eigen::VectorXd e = encode(Eigen::Vector3d(1, 0, 0), 1);
    EXPECT_NEAR(e[3], 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(e[6], -1.0);
    EXPECT_DOUBLE_EQ(e[0], 1.0);
}

TEST(Encode, Width) {
    EXPECT_EQ(encode(Eigen::Vector3d::Zero(), 8).size(), 51);
    EXPECT_EQ(encoded_width(8), 51);
    EXPECT_EQ(encoded_width(4, false), 24);
}

TEST(Encode, MatchesDirectSinusoids) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int K = 10;
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Vector3d a(u(rng), u(rng), u(rng));
        const Eigen::VectorXd e = encode(a, K);
        for (int k = 0; k < K; ++k) {
            const double f = std::ldexp(std::numbers::pi, k);
            for (int c = 0; c < 3; ++c) {
                EXPECT_NEAR(e[3 + 6 * k + c], std::sin(f * a[c]), 1e-11);
                EXPECT_NEAR(e[3 + 6 * k + 3 + c], std::cos(f * a[c]), 1e-11);
            }
        }
    }
}

TEST(Encode, NonFiniteInputThrows) {
    EXPECT_THROW(encode(Eigen::Vector3d(0, std::nan(""), 0), 2), DataError);
    EXPECT_THROW(encode(Eigen::Vector3d(INFINITY, 0, 0), 2), DataError);
}

TEST(MaskAt, StartUnlocksRawOnly) {
    const auto m = mask_at(0, 100, 8);
    ASSERT_EQ(m.bits.size(), 11u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(m.bits[i], 1.0);
    for (int k = 0; k < 8; ++k) EXPECT_EQ(m.band(k), 0.0);
}

TEST(MaskAt, HorizonUnlocksEverything) {
    for (double t : {100.0, 150.0, 1e9}) {
        const auto m = mask_at(t, 100, 8);
        for (double b : m.bits) EXPECT_EQ(b, 1.0);
    }
}

TEST(MaskAt, HalfBandExample) {
    // tL/T = 2.5 with L = 10.
    const auto m = mask_at(25, 100, 10);
    ASSERT_EQ(m.bits.size(), 13u);
    for (int i = 1; i <= 5; ++i) EXPECT_EQ(m.bits[i - 1], 1.0) << i;
    for (int i = 6; i <= 8; ++i) EXPECT_EQ(m.bits[i - 1], 0.5) << i;
    for (int i = 9; i <= 13; ++i) EXPECT_EQ(m.bits[i - 1], 0.0) << i;
}

TEST(MaskAt, ClosedFormOnGrid) {
    for (int L : {1, 3, 8, 10}) {
        for (double T : {1.0, 7.0, 100.0}) {
            for (int s = 0; s <= 40; ++s) {
                const double t = T * s / 40.0;
                const auto m = mask_at(t, T, L);
                const double u = t * L / T;
                for (int i = 1; i <= L + 3; ++i) {
                    double want = 0.0;
                    if (t >= T || i <= u + 3) {
                        want = 1.0;
                    } else if (i <= u + 6) {
                        want = u - std::floor(u);
                    }
                    EXPECT_EQ(m.bits[i - 1], want) << "L=" << L << " T=" << T << " t=" << t << " i=" << i;
                    EXPECT_GE(m.bits[i - 1], 0.0);
                    EXPECT_LE(m.bits[i - 1], 1.0);
                }
            }
        }
    }
}

// The fractional groups restart from zero whenever tL/T crosses an integer:
// group k + 4 is nearly open just before u = k and closed again at u = k.
TEST(MaskAt, FractionalGroupsRestartAtIntegerProgress) {
    const auto before = mask_at(19.999, 100, 10);
    const auto at = mask_at(20, 100, 10);
    EXPECT_GT(before.bits[5], 0.99);
    EXPECT_EQ(at.bits[5], 0.0);
}

TEST(MaskAt, RejectsBadArguments) {
    EXPECT_THROW(mask_at(-1, 10, 4), ConfigError);
    EXPECT_THROW(mask_at(0, 0.5, 4), ConfigError);
    EXPECT_THROW(mask_at(0, 10, 0), ConfigError);
}

TEST(MaskedEncode, AllOnesIsPlainEncode) {
    const Eigen::Vector3d a(0.3, -0.7, 0.1);
    EXPECT_EQ(masked_encode(a, 6, FrequencyMask::all_ones(6)), encode(a, 6));
}

TEST(MaskedEncode, ZeroBandsLeaveRawInput) {
    const Eigen::Vector3d a(0.3, -0.7, 0.1);
    const auto e = masked_encode(a, 4, mask_at(0, 10, 4));
    EXPECT_EQ(e.head<3>(), a);
    EXPECT_TRUE(e.tail(24).isZero(0.0));
}

TEST(MaskedEncode, HalfBitHalvesBand) {
    const Eigen::Vector3d a(0.3, -0.7, 0.1);
    auto m = FrequencyMask::all_ones(4);
    m.bits[3 + 2] = 0.5;
    const auto e = masked_encode(a, 4, m);
    const auto plain = encode(a, 4);
    for (int j = 0; j < 6; ++j) EXPECT_EQ(e[3 + 12 + j], 0.5 * plain[3 + 12 + j]);
    EXPECT_EQ(e[3], plain[3]);
}

TEST(MaskedEncode, RowsMatchSingleVectors) {
    ad::Matrix pts(2, 3);
    pts << 0.1, 0.2, 0.3, -0.5, 0.9, 0.0;
    const auto m = mask_at(33, 100, 5);
    const ad::Matrix rows = masked_encode_rows(pts, 5, m);
    for (int r = 0; r < 2; ++r) {
        const Eigen::VectorXd one = masked_encode(Eigen::Vector3d(pts(r, 0), pts(r, 1), pts(r, 2)), 5, m);
        EXPECT_EQ(Eigen::VectorXd(rows.row(r).transpose()), one);
    }
}

TEST(MaskedEncode, WrongMaskLengthThrows) {
    EXPECT_THROW(masked_encode(Eigen::Vector3d::Zero(), 4, FrequencyMask::all_ones(3)), ConfigError);
}
