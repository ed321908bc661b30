#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "topomarl/sim.hpp"
#include "topomarl/tensor.hpp"

namespace topomarl::topo {

inline constexpr int kAngleBits = 8;          // m for descriptor angle codes
inline constexpr int kKeyBits = 64;           // state-key / heatmap hash width
inline constexpr int kKeyInputDim = 100;      // padded tensor vector length
inline constexpr double kNormScale = 1.0 / 100.0;  // norm scaling inside padded vectors
inline constexpr double kZeroNormEps = 1e-9;

// Sign-of-random-projection hash. The projection matrix is fixed at
// construction and deterministic under the seed; encoders are immutable and
// shareable.
struct SimHashEncoder {
    std::size_t bits = 0;
    Tensor2 projection;  // bits x dim
    std::uint64_t seed = 0;

    static SimHashEncoder gaussian(std::size_t bits, std::size_t dim, std::uint64_t seed) {
        SimHashEncoder e;
        e.bits = bits;
        e.seed = seed;
        e.projection = gaussian_init(bits, dim, seed);
        return e;
    }

    // Rademacher +-1 entries, the 64x100 diversity/state-key variant.
    static SimHashEncoder rademacher(std::size_t bits, std::size_t dim, std::uint64_t seed) {
        SimHashEncoder e;
        e.bits = bits;
        e.seed = seed;
        e.projection = Tensor2(bits, dim);
        std::mt19937_64 rng(seed);
        for (auto& v : e.projection.data) v = (rng() & 1u) ? 1.0 : -1.0;
        return e;
    }

    // MSB-first bit packing; sign(x) = 1 iff x >= 0.
    std::uint64_t code(const std::vector<double>& v) const {
        if (v.size() != projection.cols) throw std::runtime_error("dimension mismatch");
        std::uint64_t out = 0;
        for (std::size_t k = 0; k < bits; ++k) {
            double dot = 0.0;
            const double* row = &projection.data[k * projection.cols];
            for (std::size_t j = 0; j < v.size(); ++j) dot += row[j] * v[j];
            out = (out << 1) | (dot >= 0.0 ? 1u : 0u);
        }
        return out;
    }
};

struct TopologyDescriptor {
    double norm = 0.0;
    std::uint32_t angle_code = 0;
};

// (L2 norm of the observation difference, SimHash angle code). Differences
// are taken over the 38-dim base observation; spawn metadata is excluded.
inline TopologyDescriptor obs_difference_descriptor(const std::vector<double>& o_i,
                                                    const std::vector<double>& o_j,
                                                    const SimHashEncoder& enc) {
    if (o_i.size() < sim::kObsBaseDim || o_j.size() < sim::kObsBaseDim ||
        o_i.size() != o_j.size())
        throw std::runtime_error("dimension mismatch");
    std::vector<double> diff(sim::kObsBaseDim);
    double sq = 0.0;
    for (int k = 0; k < sim::kObsBaseDim; ++k) {
        diff[k] = o_i[k] - o_j[k];
        sq += diff[k] * diff[k];
    }
    const double norm = std::sqrt(sq);
    if (norm < kZeroNormEps) return {0.0, 0};
    for (double& d : diff) d /= norm;
    return {norm, static_cast<std::uint32_t>(enc.code(diff))};
}

inline constexpr int kEmptySlot = -1;

struct LocalTopology {
    int owner = kEmptySlot;
    std::array<int, 2> attention{kEmptySlot, kEmptySlot};  // (max-diff, min-diff)
    std::array<TopologyDescriptor, 2> descriptors{};
};

struct GameTopologyTensor {
    std::vector<LocalTopology> entries;  // one per live CAV, id-ascending

    // k = 4 scalars per agent: (norm1, code1, norm2, code2), scaled so norms
    // and codes share O(1..100) magnitude: norms by 1/100, codes by 1/(2^m-1).
    std::vector<double> flatten_scaled() const {
        const double code_scale = 1.0 / static_cast<double>((1u << kAngleBits) - 1);
        std::vector<double> out;
        out.reserve(entries.size() * 4);
        for (const auto& e : entries)
            for (const auto& d : e.descriptors) {
                out.push_back(d.norm * kNormScale);
                out.push_back(d.angle_code * code_scale);
            }
        return out;
    }
};

// Attention set of a CAV: (argmax, argmin) observation-difference norm over
// the other live CAVs in the coordinating zone (the whole road). Ties break
// toward the lower vehicle id; a single candidate fills both slots.
inline std::array<int, 2> select_topology_set(const sim::WorldState& w, int owner_id) {
    const sim::Vehicle* owner = w.find(owner_id);
    if (!owner || owner->kind != sim::VehicleKind::CAV)
        throw std::runtime_error("no such agent");
    const std::vector<double> o_own = sim::build_observation(w, owner_id);
    int max_id = kEmptySlot, min_id = kEmptySlot;
    double max_norm = -1.0, min_norm = 0.0;
    for (const auto& veh : w.vehicles) {
        if (veh.kind != sim::VehicleKind::CAV || veh.id == owner_id) continue;
        const std::vector<double> o_j = sim::build_observation(w, veh.id);
        double sq = 0.0;
        for (int k = 0; k < sim::kObsBaseDim; ++k) {
            const double d = o_own[k] - o_j[k];
            sq += d * d;
        }
        const double norm = std::sqrt(sq);
        if (max_id == kEmptySlot || norm > max_norm) {
            max_norm = norm;
            max_id = veh.id;
        }
        if (min_id == kEmptySlot || norm < min_norm) {
            min_norm = norm;
            min_id = veh.id;
        }
    }
    return {max_id, min_id};
}

inline GameTopologyTensor build_game_topology_tensor(const sim::WorldState& w,
                                                     const SimHashEncoder& enc) {
    GameTopologyTensor tensor;
    for (const auto& veh : w.vehicles) {
        if (veh.kind != sim::VehicleKind::CAV) continue;
        LocalTopology lt;
        lt.owner = veh.id;
        lt.attention = select_topology_set(w, veh.id);
        const std::vector<double> o_own = sim::build_observation(w, veh.id);
        for (int s = 0; s < 2; ++s) {
            if (lt.attention[s] == kEmptySlot) continue;  // empty slots stay exact zeros
            const std::vector<double> o_j = sim::build_observation(w, lt.attention[s]);
            lt.descriptors[s] = obs_difference_descriptor(o_own, o_j, enc);
        }
        tensor.entries.push_back(lt);
    }
    return tensor;
}

// Pads or truncates a flattened tensor to R^100 and sign-hashes it to 64 bits.
inline std::uint64_t hash_padded_vector(const std::vector<double>& flat,
                                        const SimHashEncoder& enc64) {
    if (enc64.bits != kKeyBits || enc64.projection.cols != kKeyInputDim)
        throw std::runtime_error("dimension mismatch");
    std::vector<double> padded(kKeyInputDim, 0.0);
    for (std::size_t i = 0; i < flat.size() && i < kKeyInputDim; ++i) padded[i] = flat[i];
    return enc64.code(padded);
}

inline std::uint64_t topology_visit_key(const GameTopologyTensor& tensor,
                                        const SimHashEncoder& enc64) {
    return hash_padded_vector(tensor.flatten_scaled(), enc64);
}

// Visitation table over 64-bit topology keys. Single-writer, any-reader.
struct VisitCounter {
    std::unordered_map<std::uint64_t, std::uint64_t> table;
    std::uint64_t total_visits = 0;
};

// Increments the count and returns 1/sqrt(new count).
inline double visit_reward(VisitCounter& counter, std::uint64_t key) {
    const std::uint64_t c = ++counter.table[key];
    ++counter.total_visits;
    return 1.0 / std::sqrt(static_cast<double>(c));
}

// High 32 bits -> x, low 32 bits -> y, both normalized by 2^32-1.
inline std::pair<double, double> hash64_to_unit_square(std::uint64_t key) {
    const double denom = 4294967295.0;  // 2^32 - 1
    const auto hi = static_cast<std::uint32_t>(key >> 32);
    const auto lo = static_cast<std::uint32_t>(key & 0xffffffffu);
    return {hi / denom, lo / denom};
}

// 1-based interval semantics: cell i covers [(i-1)/g, i/g); boundary points
// fall in the upper cell, and the right edge belongs to cell g.
inline std::vector<std::vector<std::uint64_t>> grid_density(
    const std::vector<std::pair<double, double>>& points, int grid = 32) {
    std::vector<std::vector<std::uint64_t>> cells(grid, std::vector<std::uint64_t>(grid, 0));
    for (const auto& [x, y] : points) {
        if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0) throw std::runtime_error("out of range");
        const int i = std::min(static_cast<int>(x * grid), grid - 1);
        const int j = std::min(static_cast<int>(y * grid), grid - 1);
        ++cells[i][j];
    }
    return cells;
}

}  // namespace topomarl::topo
