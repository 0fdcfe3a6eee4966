#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fewview/autodiff.hpp"
#include "fewview/error.hpp"

namespace fewview {

/// Band counts for the sinusoidal encodings of positions and directions.
struct EncodingConfig {
    int k_pos = 8;
    int k_dir = 4;
    bool include_raw = true;

    void validate() const {
        if (k_pos < 1) throw ConfigError("encoding: k_pos must be >= 1");
        if (k_dir < 0) throw ConfigError("encoding: k_dir must be >= 0");
    }
};

/// Width of the encoding of a 3-vector with `bands` frequency bands.
inline int encoded_width(int bands, bool include_raw = true) { return (include_raw ? 3 : 0) + 6 * bands; }

/// Per-group unlock weights: three raw-coordinate groups followed by one
/// group per frequency band. All six sin/cos entries of a band share a bit.
struct FrequencyMask {
    std::vector<double> bits;
    double iteration = 0.0;
    double horizon = 1.0;
    int bands = 0;

    double band(int k) const { return bits[static_cast<std::size_t>(3 + k)]; }
    double raw(int axis) const { return bits[static_cast<std::size_t>(axis)]; }

    /// Number of frequency bands whose bit is exactly one.
    int fully_unlocked_bands() const {
        int n = 0;
        for (int k = 0; k < bands; ++k) n += band(k) == 1.0 ? 1 : 0;
        return n;
    }

    static FrequencyMask all_ones(int bands) {
        FrequencyMask m;
        m.bits.assign(static_cast<std::size_t>(bands + 3), 1.0);
        m.iteration = 1.0;
        m.horizon = 1.0;
        m.bands = bands;
        return m;
    }
};

/// Linearly increasing frequency mask over L + 3 groups (1-based index i):
///   1                      if i <= tL/T + 3
///   tL/T - floor(tL/T)     if tL/T + 3 < i <= tL/T + 6
///   0                      otherwise
/// and all ones once t >= T. `t` may be fractional (frozen-mask studies).
inline FrequencyMask mask_at(double t, double horizon, int bands) {
    if (t < 0.0) throw ConfigError("mask_at: iteration must be >= 0");
    if (horizon < 1.0) throw ConfigError("mask_at: horizon must be >= 1");
    if (bands < 1) throw ConfigError("mask_at: band count must be >= 1");
    FrequencyMask m;
    m.iteration = t;
    m.horizon = horizon;
    m.bands = bands;
    m.bits.assign(static_cast<std::size_t>(bands + 3), 0.0);
    if (t >= horizon) {
        std::fill(m.bits.begin(), m.bits.end(), 1.0);
        return m;
    }
    const double u = t * static_cast<double>(bands) / horizon;
    const double frac = u - std::floor(u);
    for (int i = 1; i <= bands + 3; ++i) {
        const double idx = static_cast<double>(i);
        double bit = 0.0;
        if (idx <= u + 3.0) {
            bit = 1.0;
        } else if (idx <= u + 6.0) {
            bit = frac;
        }
        m.bits[static_cast<std::size_t>(i - 1)] = bit;
    }
    return m;
}

/// Writes [a, sin(2^0 pi a), cos(2^0 pi a), ..., sin(2^{K-1} pi a), cos(2^{K-1} pi a)]
/// into `out`, scaling each group by its mask bit when `mask` is given.
template <typename Row>
void encode_into(const Eigen::Vector3d& a, int bands, bool include_raw, const FrequencyMask* mask, Row&& out) {
    for (int c = 0; c < 3; ++c) {
        if (!std::isfinite(a[c])) {
            throw DataError("encode: non-finite input component " + std::to_string(c) + " = " +
                            std::to_string(a[c]));
        }
    }
    int col = 0;
    if (include_raw) {
        for (int c = 0; c < 3; ++c) out(col++) = a[c] * (mask ? mask->raw(c) : 1.0);
    }
    // Higher bands by the double-angle identities from the first band.
    double sn[3], cs[3];
    for (int c = 0; c < 3; ++c) {
        sn[c] = std::sin(std::numbers::pi * a[c]);
        cs[c] = std::cos(std::numbers::pi * a[c]);
    }
    for (int k = 0; k < bands; ++k) {
        const double w = mask ? mask->band(k) : 1.0;
        for (int c = 0; c < 3; ++c) out(col + c) = w * sn[c];
        for (int c = 0; c < 3; ++c) out(col + 3 + c) = w * cs[c];
        col += 6;
        for (int c = 0; c < 3; ++c) {
            const double s2 = 2.0 * sn[c] * cs[c];
            cs[c] = (cs[c] - sn[c]) * (cs[c] + sn[c]);
            sn[c] = s2;
        }
    }
}

inline Eigen::VectorXd encode(const Eigen::Vector3d& a, int bands, bool include_raw = true) {
    Eigen::VectorXd out(encoded_width(bands, include_raw));
    encode_into(a, bands, include_raw, nullptr, out);
    return out;
}

inline void check_mask(const FrequencyMask& mask, int bands) {
    if (mask.bits.size() != static_cast<std::size_t>(bands + 3)) {
        throw ConfigError("masked_encode: mask has " + std::to_string(mask.bits.size()) + " groups, expected " +
                          std::to_string(bands + 3));
    }
}

inline Eigen::VectorXd masked_encode(const Eigen::Vector3d& a, int bands, const FrequencyMask& mask,
                                     bool include_raw = true) {
    check_mask(mask, bands);
    Eigen::VectorXd out(encoded_width(bands, include_raw));
    encode_into(a, bands, include_raw, &mask, out);
    return out;
}

/// Encodes every row of an Nx3 matrix.
inline ad::Matrix masked_encode_rows(const ad::Matrix& points, int bands, const FrequencyMask& mask,
                                     bool include_raw = true) {
    check_mask(mask, bands);
    ad::Matrix out(points.rows(), encoded_width(bands, include_raw));
    for (ad::Index r = 0; r < points.rows(); ++r) {
        const Eigen::Vector3d a(points(r, 0), points(r, 1), points(r, 2));
        encode_into(a, bands, include_raw, &mask, out.row(r));
    }
    return out;
}

}  // namespace fewview
