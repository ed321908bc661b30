#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "topomarl/reward.hpp"

using namespace topomarl;
using namespace topomarl::reward;

namespace {

sim::Vehicle make_vehicle(int id, sim::VehicleKind kind, int lane, double x, double v,
                          sim::RouteClass route = sim::RouteClass::Straight, double a = 0.0) {
    sim::Vehicle veh;
    veh.id = id;
    veh.kind = kind;
    veh.lane = lane;
    veh.x = x;
    veh.v = v;
    veh.route = route;
    veh.a = a;
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

}  // namespace

TEST_CASE("action_reward") {
    RewardConfig cfg;
    auto v = make_vehicle(0, sim::VehicleKind::CAV, 1, 100, 10);
    v.a = 2.5;
    CHECK(action_reward(v, cfg) == 1.0);
    v.a = 0.0;
    v.v = 19.0;  // >= 18 = 0.9 * 20
    CHECK(action_reward(v, cfg) == 1.0);
    v.a = -2.5;
    v.v = 10.0;
    CHECK(action_reward(v, cfg) == 0.0);
    v.a = 0.0;
    v.v = 18.0;  // boundary counts as high speed
    CHECK(action_reward(v, cfg) == 1.0);
}

TEST_CASE("positional_field") {
    RewardConfig cfg;
    CHECK(positional_field(cfg.goal_x, 1.0, 1.0, cfg) == doctest::Approx(1.0));
    CHECK(positional_field(cfg.goal_x - 60.0, 1.0, 1.0, cfg) ==
          doctest::Approx(0.606531).epsilon(1e-6));
    CHECK(positional_field(cfg.goal_x, 1.0, 2.0, cfg) == doctest::Approx(0.5));
}

TEST_CASE("positional_field peaks uniquely at (l, y_target)") {
    RewardConfig cfg;
    const double y_target = 1.0;
    const double peak = positional_field(cfg.goal_x, y_target, y_target, cfg);
    for (double x = 0.0; x <= cfg.goal_x - 1.0; x += 5.0)
        for (double y : {0.0, 1.0, 2.0, 3.0})
            CHECK(positional_field(x, y, y_target, cfg) < peak);
    for (double y : {0.0, 2.0, 3.0})
        CHECK(positional_field(cfg.goal_x, y, y_target, cfg) < peak);
}

TEST_CASE("positional_reward") {
    RewardConfig cfg;
    const int lane_count = 4;
    SUBCASE("in target lane, cruising toward the goal") {
        auto v = make_vehicle(0, sim::VehicleKind::CAV, 1, cfg.goal_x - 60.0, 10.0);
        CHECK(positional_reward(v, 0, cfg, lane_count) ==
              doctest::Approx(10.0 * 60.0 * 0.606531).epsilon(1e-5));
    }
    SUBCASE("off target, lateral motion toward target is rewarded") {
        // Right-turn route targets lane 0; vehicle in lane 2 moving right.
        auto v = make_vehicle(0, sim::VehicleKind::CAV, 2, cfg.goal_x, 0.0,
                              sim::RouteClass::RightTurn);
        CHECK(positional_reward(v, -1, cfg, lane_count) ==
              doctest::Approx(1.0 / 9.0).epsilon(1e-6));
        CHECK(positional_reward(v, +1, cfg, lane_count) ==
              doctest::Approx(-1.0 / 9.0).epsilon(1e-6));
    }
    SUBCASE("leaving the target lane is penalized") {
        auto v = make_vehicle(0, sim::VehicleKind::CAV, 1, cfg.goal_x, 0.0);
        CHECK(positional_reward(v, 1, cfg, lane_count) == doctest::Approx(-1.0));
        CHECK(positional_reward(v, -1, cfg, lane_count) == doctest::Approx(-1.0));
    }
    SUBCASE("lateral sign property over random off-target states") {
        std::mt19937_64 rng(5);
        std::uniform_int_distribution<int> lane_d(0, 3);
        std::uniform_real_distribution<double> x_d(0.0, 250.0);
        auto routes = {sim::RouteClass::RightTurn, sim::RouteClass::Straight,
                       sim::RouteClass::LeftTurn};
        for (int t = 0; t < 500; ++t) {
            for (auto route : routes) {
                auto v = make_vehicle(0, sim::VehicleKind::CAV, lane_d(rng), x_d(rng), 0.0,
                                      route);
                const int y_target = sim::representative_target_lane(v, 4);
                if (v.lane == y_target) continue;
                const int toward = y_target > v.lane ? 1 : -1;
                CHECK(positional_reward(v, toward, cfg, 4) > 0.0);
                CHECK(positional_reward(v, -toward, cfg, 4) < 0.0);
            }
        }
    }
}

TEST_CASE("flow_reward") {
    RewardConfig cfg;
    SUBCASE("empty road") {
        auto w = world_with({});
        CHECK(flow_reward(w, cfg) == 0.0);
    }
    SUBCASE("everyone at v_max") {
        auto w = world_with({make_vehicle(0, sim::VehicleKind::CAV, 0, 50, 20),
                             make_vehicle(1, sim::VehicleKind::HDV, 1, 80, 20)});
        CHECK(flow_reward(w, cfg) == doctest::Approx(1.0));
    }
    SUBCASE("everyone at half speed") {
        auto w = world_with({make_vehicle(0, sim::VehicleKind::CAV, 0, 50, 10),
                             make_vehicle(1, sim::VehicleKind::HDV, 1, 80, 10)});
        CHECK(flow_reward(w, cfg) == doctest::Approx(0.5));
    }
    SUBCASE("stays in [0,1] under random speeds") {
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> vd(0.0, 20.0);
        for (int t = 0; t < 200; ++t) {
            std::vector<sim::Vehicle> vs;
            for (int i = 0; i < 6; ++i)
                vs.push_back(make_vehicle(i, sim::VehicleKind::HDV, i % 4, 10.0 * i, vd(rng)));
            auto w = world_with(vs);
            const double f = flow_reward(w, cfg);
            CHECK(f >= 0.0);
            CHECK(f <= 1.0);
        }
    }
}

TEST_CASE("safety and completion counts") {
    sim::StepReport report;
    CHECK(safety_reward(report) == 0.0);
    CHECK(completion_reward(report) == 0.0);
    report.collided = {3, 7};
    report.completions = {5};
    CHECK(safety_reward(report) == 2.0);
    CHECK(completion_reward(report) == 1.0);
}

TEST_CASE("environmental_reward") {
    RewardConfig cfg;
    SUBCASE("empty road, no events") {
        auto w = world_with({});
        sim::StepReport report;
        auto b = environmental_reward(w, report, cfg);
        CHECK(b.env_total == 0.0);
    }
    SUBCASE("one CAV, full flow, no events: 10 + 1") {
        // At the goal in the target lane, v = v_max: r_a = 1, r_p = 0, flow = 1.
        auto w = world_with({make_vehicle(0, sim::VehicleKind::CAV, 1, 250.0, 20.0)});
        sim::StepReport report;
        auto b = environmental_reward(w, report, cfg);
        CHECK(b.action_term == doctest::Approx(1.0));
        CHECK(b.positional_term == doctest::Approx(0.0));
        CHECK(b.flow_term == doctest::Approx(1.0));
        CHECK(b.env_total == doctest::Approx(11.0));
    }
    SUBCASE("a collision pair subtracts 100") {
        auto w = world_with({make_vehicle(0, sim::VehicleKind::CAV, 1, 250.0, 20.0)});
        sim::StepReport report;
        report.collided = {8, 9};
        auto b = environmental_reward(w, report, cfg);
        CHECK(b.env_total == doctest::Approx(-89.0));
    }
    SUBCASE("CAV terms average over CAVs only") {
        auto w = world_with({make_vehicle(0, sim::VehicleKind::CAV, 1, 250.0, 20.0),
                             make_vehicle(1, sim::VehicleKind::CAV, 1, 250.0, 0.0,
                                          sim::RouteClass::Straight, -2.5),
                             make_vehicle(2, sim::VehicleKind::HDV, 0, 50.0, 20.0)});
        sim::StepReport report;
        auto b = environmental_reward(w, report, cfg);
        CHECK(b.action_term == doctest::Approx(0.5));
        CHECK(b.flow_term == doctest::Approx(2.0 / 3.0));
    }
}

TEST_CASE("total_reward and breakdown consistency") {
    RewardConfig cfg;
    CHECK(total_reward(2.0, 0.5, 1.0, cfg) == doctest::Approx(2.25));
    CHECK(total_reward(7.5, 0.0, 0.0, cfg) == 7.5);
    CHECK(total_reward(0.0, 1.0, 0.0, cfg) == doctest::Approx(0.1));

    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(-100.0, 100.0);
    for (int t = 0; t < 1000; ++t) {
        RewardBreakdown b;
        b.env_total = u(rng);
        auto out = with_intrinsic(b, u(rng), u(rng), cfg);
        const double expect =
            total_reward(out.env_total, out.visit_term, out.topo_term, cfg);
        // Equal up to FMA-contraction noise at the last bit.
        CHECK(std::fabs(out.grand_total - expect) <=
              1e-14 * std::max(1.0, std::fabs(expect)));
    }
}
