#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "topomarl/topology.hpp"

using namespace topomarl;
using namespace topomarl::topo;

namespace {

sim::Vehicle cav(int id, int lane, double x, double v,
                 sim::RouteClass route = sim::RouteClass::Straight) {
    sim::Vehicle veh;
    veh.id = id;
    veh.kind = sim::VehicleKind::CAV;
    veh.lane = lane;
    veh.x = x;
    veh.v = v;
    veh.route = route;
    return veh;
}

sim::WorldState world_with(const std::vector<sim::Vehicle>& vehicles) {
    sim::ScenarioConfig cfg;
    cfg.flow_rate = 0.0;
    sim::WorldState w(cfg);
    for (const auto& v : vehicles) {
        w.vehicles.push_back(v);
        w.next_id = std::max(w.next_id, v.id + 1);
        ++w.total_spawned;
    }
    return w;
}

std::vector<double> random_obs(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 5.0);
    std::vector<double> o(sim::kObsDim);
    for (auto& v : o) v = n(rng);
    return o;
}

}  // namespace

TEST_CASE("obs_difference_descriptor") {
    auto enc = SimHashEncoder::gaussian(kAngleBits, sim::kObsBaseDim, 9);
    SUBCASE("identical observations give the zero convention") {
        std::vector<double> o(sim::kObsDim, 3.0);
        auto d = obs_difference_descriptor(o, o, enc);
        CHECK(d.norm == 0.0);
        CHECK(d.angle_code == 0);
    }
    SUBCASE("Pythagorean difference") {
        std::vector<double> a(sim::kObsDim, 0.0), b(sim::kObsDim, 0.0);
        a[0] = 3.0;
        a[1] = 4.0;
        CHECK(obs_difference_descriptor(a, b, enc).norm == doctest::Approx(5.0));
    }
    SUBCASE("constructed 2-bit sign pattern packs MSB-first") {
        SimHashEncoder e2;
        e2.bits = 2;
        e2.projection = Tensor2(2, sim::kObsBaseDim);
        e2.projection.at(0, 0) = 1.0;   // dot > 0 -> bit 1
        e2.projection.at(1, 0) = -1.0;  // dot < 0 -> bit 0
        std::vector<double> a(sim::kObsDim, 0.0), b(sim::kObsDim, 0.0);
        a[0] = 3.0;
        a[1] = 4.0;
        CHECK(obs_difference_descriptor(a, b, e2).angle_code == 2);
    }
    SUBCASE("length mismatch") {
        std::vector<double> a(sim::kObsDim), b(sim::kObsDim + 1);
        CHECK_THROWS_WITH(obs_difference_descriptor(a, b, enc), "dimension mismatch");
    }
}

TEST_CASE("descriptor symmetry, negation complement, scale invariance") {
    auto enc = SimHashEncoder::gaussian(kAngleBits, sim::kObsBaseDim, 41);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> scale(0.01, 50.0);
    const std::uint32_t mask = (1u << kAngleBits) - 1;
    for (int trial = 0; trial < 1000; ++trial) {
        auto a = random_obs(rng);
        auto b = random_obs(rng);
        auto d_ab = obs_difference_descriptor(a, b, enc);
        auto d_ba = obs_difference_descriptor(b, a, enc);
        CHECK(d_ab.norm == doctest::Approx(d_ba.norm));
        CHECK(d_ba.angle_code == (~d_ab.angle_code & mask));
        // Scale the difference: descriptor code is invariant, norm scales.
        const double lambda = scale(rng);
        std::vector<double> c(sim::kObsDim);
        for (int k = 0; k < sim::kObsDim; ++k) c[k] = b[k] + lambda * (a[k] - b[k]);
        auto d_scaled = obs_difference_descriptor(c, b, enc);
        CHECK(d_scaled.angle_code == d_ab.angle_code);
        CHECK(d_scaled.norm == doctest::Approx(lambda * d_ab.norm));
    }
}

TEST_CASE("select_topology_set") {
    SUBCASE("single CAV gets empty sentinels") {
        auto w = world_with({cav(0, 1, 100, 10)});
        auto att = select_topology_set(w, 0);
        CHECK(att[0] == kEmptySlot);
        CHECK(att[1] == kEmptySlot);
    }
    SUBCASE("one other CAV fills both slots") {
        auto w = world_with({cav(0, 1, 100, 10), cav(1, 2, 150, 15)});
        auto att = select_topology_set(w, 0);
        CHECK(att[0] == 1);
        CHECK(att[1] == 1);
    }
    SUBCASE("argmax and argmin match brute force") {
        auto w = world_with({cav(0, 1, 100, 10), cav(1, 1, 130, 12), cav(2, 3, 220, 18),
                             cav(3, 0, 60, 5)});
        auto o0 = sim::build_observation(w, 0);
        int brute_max = -1, brute_min = -1;
        double best_max = -1.0, best_min = 1e18;
        for (int id : {1, 2, 3}) {
            auto oj = sim::build_observation(w, id);
            double sq = 0.0;
            for (int k = 0; k < sim::kObsBaseDim; ++k)
                sq += (o0[k] - oj[k]) * (o0[k] - oj[k]);
            if (sq > best_max) { best_max = sq; brute_max = id; }
            if (sq < best_min) { best_min = sq; brute_min = id; }
        }
        auto att = select_topology_set(w, 0);
        CHECK(att[0] == brute_max);
        CHECK(att[1] == brute_min);
    }
    SUBCASE("equidistant tie picks the lower id") {
        // Two candidates placed symmetrically around the owner.
        auto w = world_with({cav(0, 1, 100, 10), cav(1, 1, 140, 10), cav(2, 1, 60, 10)});
        auto o0 = sim::build_observation(w, 0);
        auto o1 = sim::build_observation(w, 1);
        auto o2 = sim::build_observation(w, 2);
        double sq1 = 0.0, sq2 = 0.0;
        for (int k = 0; k < sim::kObsBaseDim; ++k) {
            sq1 += (o0[k] - o1[k]) * (o0[k] - o1[k]);
            sq2 += (o0[k] - o2[k]) * (o0[k] - o2[k]);
        }
        if (sq1 == sq2) {
            auto att = select_topology_set(w, 0);
            CHECK(att[0] == 1);
            CHECK(att[1] == 1);
        }
        // Exact tie via duplicate observations: ids 1 and 2 co-located.
        auto w2 = world_with({cav(0, 1, 100, 10), cav(1, 3, 200, 15), cav(2, 3, 200, 15)});
        auto att2 = select_topology_set(w2, 0);
        CHECK(att2[0] == 1);
        CHECK(att2[1] == 1);
    }
    SUBCASE("owner must be a live CAV") {
        auto w = world_with({cav(0, 1, 100, 10)});
        CHECK_THROWS_WITH(select_topology_set(w, 9), "no such agent");
    }
}

TEST_CASE("build_game_topology_tensor") {
    auto enc = SimHashEncoder::gaussian(kAngleBits, sim::kObsBaseDim, 9);
    SUBCASE("no CAVs gives an empty tensor") {
        auto w = world_with({});
        CHECK(build_game_topology_tensor(w, enc).entries.empty());
    }
    SUBCASE("single CAV gets one zero-descriptor entry") {
        auto w = world_with({cav(4, 1, 100, 10)});
        auto t = build_game_topology_tensor(w, enc);
        REQUIRE(t.entries.size() == 1);
        CHECK(t.entries[0].owner == 4);
        for (const auto& d : t.entries[0].descriptors) {
            CHECK(d.norm == 0.0);
            CHECK(d.angle_code == 0);
        }
        auto flat = t.flatten_scaled();
        REQUIRE(flat.size() == 4);
        for (double v : flat) CHECK(v == 0.0);
    }
    SUBCASE("3-CAV state matches descriptor-by-descriptor recomputation") {
        auto w = world_with({cav(0, 1, 100, 10), cav(1, 2, 140, 14), cav(2, 0, 60, 6)});
        auto t = build_game_topology_tensor(w, enc);
        REQUIRE(t.entries.size() == 3);
        for (const auto& e : t.entries) {
            auto att = select_topology_set(w, e.owner);
            CHECK(e.attention == att);
            auto o_own = sim::build_observation(w, e.owner);
            for (int s = 0; s < 2; ++s) {
                auto o_j = sim::build_observation(w, att[s]);
                auto d = obs_difference_descriptor(o_own, o_j, enc);
                CHECK(e.descriptors[s].norm == doctest::Approx(d.norm));
                CHECK(e.descriptors[s].angle_code == d.angle_code);
            }
        }
        CHECK(t.flatten_scaled().size() == 12);
    }
}

TEST_CASE("topology_visit_key") {
    auto enc64 = SimHashEncoder::rademacher(kKeyBits, kKeyInputDim, 101);
    SUBCASE("empty tensor keys the all-zero vector, deterministically") {
        GameTopologyTensor t;
        const std::uint64_t k = topology_visit_key(t, enc64);
        CHECK(k == topology_visit_key(t, enc64));
        CHECK(k == enc64.code(std::vector<double>(kKeyInputDim, 0.0)));
    }
    SUBCASE("identical tensors and positively scaled tensors key identically") {
        GameTopologyTensor t;
        LocalTopology lt;
        lt.owner = 0;
        lt.attention = {1, 2};
        lt.descriptors[0] = {12.5, 77};
        lt.descriptors[1] = {3.0, 200};
        t.entries.push_back(lt);
        GameTopologyTensor t2 = t;
        CHECK(topology_visit_key(t, enc64) == topology_visit_key(t2, enc64));
        for (auto& e : t2.entries)
            for (auto& d : e.descriptors) d.norm *= 2.0;
        // Doubling every flattened value (incl. codes) leaves sign bits fixed.
        auto flat = t.flatten_scaled();
        for (auto& v : flat) v *= 2.0;
        CHECK(hash_padded_vector(flat, enc64) == topology_visit_key(t, enc64));
    }
    SUBCASE("wrong encoder shape") {
        auto bad = SimHashEncoder::rademacher(32, kKeyInputDim, 1);
        CHECK_THROWS_WITH(hash_padded_vector({1.0}, bad), "dimension mismatch");
    }
}

TEST_CASE("visit_reward counting exactness") {
    VisitCounter counter;
    CHECK(visit_reward(counter, 5) == doctest::Approx(1.0));
    CHECK(visit_reward(counter, 5) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(visit_reward(counter, 5) == doctest::Approx(1.0 / std::sqrt(3.0)));
    CHECK(visit_reward(counter, 5) == doctest::Approx(0.5));
    VisitCounter c2;
    for (int i = 1; i <= 100; ++i) {
        const double r = visit_reward(c2, 42);
        CHECK(r == 1.0 / std::sqrt(static_cast<double>(i)));
    }
    CHECK(c2.table.at(42) == 100);
    CHECK(c2.total_visits == 100);

    // Interleaved keys count independently.
    VisitCounter c3;
    std::mt19937_64 rng(3);
    std::unordered_map<std::uint64_t, std::uint64_t> shadow;
    for (int i = 0; i < 10000; ++i) {
        const std::uint64_t key = rng() % 17;
        const double r = visit_reward(c3, key);
        CHECK(r == 1.0 / std::sqrt(static_cast<double>(++shadow[key])));
    }
    CHECK(c3.total_visits == 10000);
}

TEST_CASE("hash64_to_unit_square") {
    auto z = hash64_to_unit_square(0);
    CHECK(z.first == 0.0);
    CHECK(z.second == 0.0);
    auto o = hash64_to_unit_square(~0ull);
    CHECK(o.first == 1.0);
    CHECK(o.second == 1.0);
    auto m = hash64_to_unit_square(1ull << 63);
    CHECK(m.first == doctest::Approx(2147483648.0 / 4294967295.0));
    CHECK(m.second == 0.0);
}

TEST_CASE("grid_density") {
    SUBCASE("no points gives a zero matrix") {
        auto g = grid_density({});
        for (const auto& row : g)
            for (auto c : row) CHECK(c == 0);
    }
    SUBCASE("mass conservation") {
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<std::pair<double, double>> pts;
        for (int i = 0; i < 5000; ++i) pts.push_back({u(rng), u(rng)});
        auto g = grid_density(pts);
        std::uint64_t total = 0;
        for (const auto& row : g)
            for (auto c : row) total += c;
        CHECK(total == 5000);
    }
    SUBCASE("boundary points go to the upper cell; right edge to the last") {
        auto g = grid_density({{0.5, 0.5}});
        CHECK(g[16][16] == 1);  // 1-based cell (17, 17)
        auto h = grid_density({{1.0, 1.0}});
        CHECK(h[31][31] == 1);
    }
    SUBCASE("out of range point") {
        CHECK_THROWS_WITH(grid_density({{1.2, 0.5}}), "out of range");
    }
}

TEST_CASE("compression: tensor scalars vs raw joint observation") {
    for (int n = 0; n <= 12; ++n) CHECK(4 * n <= sim::kObsBaseDim * n);
}
