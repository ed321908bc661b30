#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "topomarl/params.hpp"

namespace topomarl {

// Flat binary checkpoint:
//   magic "TMCK" | u32 version | u32 count |
//   count x { u32 name_len | name bytes | u64 rows | u64 cols } |
//   raw values (doubles, little-endian, in name-table order)
// A sibling <path>.json manifest lists names and shapes for inspection.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint truncated");
    return v;
}
}  // namespace detail

inline void save_checkpoint(const ParamStore& ps, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    os.write("TMCK", 4);
    detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ps.all().size()));
    nlohmann::json manifest;
    manifest["format"] = "TMCK";
    manifest["version"] = kCheckpointVersion;
    manifest["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : ps.all()) {
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint64_t>(os, t.rows);
        detail::write_pod<std::uint64_t>(os, t.cols);
        manifest["tensors"].push_back({{"name", name}, {"rows", t.rows}, {"cols", t.cols}});
    }
    for (const auto& [name, t] : ps.all())
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
    std::ofstream ms(path + ".json");
    ms << manifest.dump(2) << "\n";
}

// Loads into an existing store; every stored tensor must match an existing
// parameter's shape ("incompatible checkpoint" otherwise).
inline void load_checkpoint(ParamStore& ps, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "TMCK")
        throw std::runtime_error("incompatible checkpoint: bad magic");
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("incompatible checkpoint: version");
    const auto count = detail::read_pod<std::uint32_t>(is);
    std::vector<std::pair<std::string, std::pair<std::uint64_t, std::uint64_t>>> table;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = detail::read_pod<std::uint32_t>(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        const auto rows = detail::read_pod<std::uint64_t>(is);
        const auto cols = detail::read_pod<std::uint64_t>(is);
        table.emplace_back(std::move(name), std::make_pair(rows, cols));
    }
    for (auto& [name, shape] : table) {
        if (!ps.has(name)) throw std::runtime_error("incompatible checkpoint: unknown " + name);
        Tensor2& t = ps.get(name);
        if (t.rows != shape.first || t.cols != shape.second)
            throw std::runtime_error("incompatible checkpoint: shape of " + name);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint truncated");
    }
}

}  // namespace topomarl
