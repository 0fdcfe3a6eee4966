#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fewview/autodiff.hpp"
#include "fewview/encoding.hpp"
#include "fewview/error.hpp"
#include "fewview/field.hpp"
#include "fewview/optim.hpp"

namespace fewview {

/// Everything needed to continue a run bit-exactly.
struct Checkpoint {
    std::int64_t iteration = 0;
    MlpArchitecture arch;
    EncodingConfig encoding;
    std::vector<std::pair<std::string, ad::Matrix>> parameters;
    std::int64_t adam_steps = 0;
    std::vector<ad::Matrix> adam_first;
    std::vector<ad::Matrix> adam_second;
    std::string rng_state;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'F', 'E', 'W', 'V', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint: truncated file");
    return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
    put<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
    const auto n = get<std::uint64_t>(is);
    if (n > (1u << 24)) throw DataError("checkpoint: corrupt string length");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw DataError("checkpoint: truncated file");
    return s;
}

inline void put_matrix(std::ostream& os, const ad::Matrix& m) {
    put<std::int64_t>(os, m.rows());
    put<std::int64_t>(os, m.cols());
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
}

inline ad::Matrix get_matrix(std::istream& is) {
    const auto r = get<std::int64_t>(is);
    const auto c = get<std::int64_t>(is);
    if (r < 0 || c < 0 || r * c > (1ll << 28)) throw DataError("checkpoint: corrupt matrix shape");
    ad::Matrix m(r, c);
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!is) throw DataError("checkpoint: truncated file");
    return m;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot write checkpoint '" + path.string() + "'");
        os.write(detail::kCheckpointMagic, sizeof detail::kCheckpointMagic);
        detail::put(os, detail::kCheckpointVersion);
        detail::put(os, ck.iteration);
        for (int v : {ck.arch.trunk_depth, ck.arch.trunk_width, ck.arch.skip_layer, ck.arch.head_width,
                      ck.encoding.k_pos, ck.encoding.k_dir, ck.encoding.include_raw ? 1 : 0}) {
            detail::put<std::int32_t>(os, v);
        }
        detail::put(os, ck.arch.beta_min);
        detail::put<std::uint64_t>(os, ck.parameters.size());
        for (const auto& [name, m] : ck.parameters) {
            detail::put_string(os, name);
            detail::put_matrix(os, m);
        }
        detail::put(os, ck.adam_steps);
        detail::put<std::uint64_t>(os, ck.adam_first.size());
        for (std::size_t i = 0; i < ck.adam_first.size(); ++i) {
            detail::put_matrix(os, ck.adam_first[i]);
            detail::put_matrix(os, ck.adam_second[i]);
        }
        detail::put_string(os, ck.rng_state);
        if (!os) throw DataError("failed writing checkpoint '" + path.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint '" + path.string() + "' not found");
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, detail::kCheckpointMagic, sizeof magic) != 0) {
        throw DataError("'" + path.string() + "' is not a checkpoint");
    }
    if (detail::get<std::uint32_t>(is) != detail::kCheckpointVersion) {
        throw DataError("checkpoint: unsupported version");
    }
    Checkpoint ck;
    ck.iteration = detail::get<std::int64_t>(is);
    ck.arch.trunk_depth = detail::get<std::int32_t>(is);
    ck.arch.trunk_width = detail::get<std::int32_t>(is);
    ck.arch.skip_layer = detail::get<std::int32_t>(is);
    ck.arch.head_width = detail::get<std::int32_t>(is);
    ck.encoding.k_pos = detail::get<std::int32_t>(is);
    ck.encoding.k_dir = detail::get<std::int32_t>(is);
    ck.encoding.include_raw = detail::get<std::int32_t>(is) != 0;
    ck.arch.beta_min = detail::get<double>(is);
    const auto n = detail::get<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = detail::get_string(is);
        ck.parameters.emplace_back(std::move(name), detail::get_matrix(is));
    }
    ck.adam_steps = detail::get<std::int64_t>(is);
    const auto moments = detail::get<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < moments; ++i) {
        ck.adam_first.push_back(detail::get_matrix(is));
        ck.adam_second.push_back(detail::get_matrix(is));
    }
    ck.rng_state = detail::get_string(is);
    return ck;
}

/// Copies checkpointed parameters into `field`, failing on any mismatch of
/// layout, names or shapes.
inline void restore_parameters(RadianceField& field, const Checkpoint& ck) {
    const auto& a = field.architecture();
    const auto& e = field.encoding();
    if (a.trunk_depth != ck.arch.trunk_depth || a.trunk_width != ck.arch.trunk_width ||
        a.skip_layer != ck.arch.skip_layer || a.head_width != ck.arch.head_width || a.beta_min != ck.arch.beta_min ||
        e.k_pos != ck.encoding.k_pos || e.k_dir != ck.encoding.k_dir || e.include_raw != ck.encoding.include_raw) {
        throw ConfigError("checkpoint architecture differs from config");
    }
    auto& store = field.parameters();
    if (store.count() != ck.parameters.size()) throw ConfigError("checkpoint parameter count differs from config");
    for (std::size_t i = 0; i < store.count(); ++i) {
        const auto& [name, m] = ck.parameters[i];
        if (store[i].name() != name || store[i].rows() != m.rows() || store[i].cols() != m.cols()) {
            throw ConfigError("checkpoint parameter '" + name + "' does not match '" + store[i].name() + "'");
        }
        store[i].value() = m;
    }
}

}  // namespace fewview
