#pragma once

// Episode traces: per-step vehicle snapshots, events, and reward breakdowns,
// serialized as JSONL (one header line, then one line per step).

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "topomarl/reward.hpp"
#include "topomarl/sim.hpp"

namespace topomarl::trace {

using nlohmann::json;

struct VehicleSnapshot {
    int id = -1;
    bool cav = false;
    int lane = 0;
    double x = 0.0;
    double v = 0.0;
    double a = 0.0;
};

struct TraceStep {
    int step = 0;
    std::vector<VehicleSnapshot> vehicles;  // post-integration state
    std::vector<int> collided;
    std::vector<sim::Arrival> arrivals;
    std::vector<sim::Removal> removals;
    std::vector<sim::LaneChange> lane_changes;
    reward::RewardBreakdown rewards;
    std::vector<double> topo_sample;  // flattened topology vector, variable dim
};

struct EpisodeTrace {
    int lane_count = 4;
    double road_length = 250.0;
    double dt = 0.1;
    std::uint64_t seed = 0;
    std::vector<TraceStep> steps;
};

inline void write_episode(std::ostream& os, const EpisodeTrace& ep) {
    json meta{{"lane_count", ep.lane_count},
              {"road_length", ep.road_length},
              {"dt", ep.dt},
              {"seed", ep.seed}};
    os << json{{"meta", meta}}.dump() << '\n';
    for (const auto& s : ep.steps) {
        json j;
        j["step"] = s.step;
        auto& vs = j["vehicles"] = json::array();
        for (const auto& v : s.vehicles)
            vs.push_back({v.id, v.cav ? 1 : 0, v.lane, v.x, v.v, v.a});
        j["collided"] = s.collided;
        auto& ar = j["arrivals"] = json::array();
        for (const auto& a : s.arrivals) ar.push_back({a.id, a.success ? 1 : 0});
        auto& rm = j["removals"] = json::array();
        for (const auto& r : s.removals) rm.push_back(r.id);
        auto& lc = j["lane_changes"] = json::array();
        for (const auto& c : s.lane_changes) lc.push_back({c.id, c.from_lane, c.to_lane});
        j["rewards"] = {{"env", s.rewards.env_total},
                        {"visit", s.rewards.visit_term},
                        {"topo", s.rewards.topo_term},
                        {"total", s.rewards.grand_total}};
        j["topo_sample"] = s.topo_sample;
        os << j.dump() << '\n';
    }
}

inline EpisodeTrace read_episode(std::istream& is) {
    EpisodeTrace ep;
    std::string line;
    long lineno = 0;
    bool have_meta = false;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            if (!have_meta) {
                const auto& m = j.at("meta");
                ep.lane_count = m.at("lane_count").get<int>();
                ep.road_length = m.at("road_length").get<double>();
                ep.dt = m.at("dt").get<double>();
                ep.seed = m.at("seed").get<std::uint64_t>();
                have_meta = true;
                continue;
            }
            TraceStep s;
            s.step = j.at("step").get<int>();
            for (const auto& v : j.at("vehicles")) {
                VehicleSnapshot snap;
                snap.id = v.at(0).get<int>();
                snap.cav = v.at(1).get<int>() != 0;
                snap.lane = v.at(2).get<int>();
                snap.x = v.at(3).get<double>();
                snap.v = v.at(4).get<double>();
                snap.a = v.at(5).get<double>();
                s.vehicles.push_back(snap);
            }
            s.collided = j.at("collided").get<std::vector<int>>();
            for (const auto& a : j.at("arrivals"))
                s.arrivals.push_back({a.at(0).get<int>(), a.at(1).get<int>() != 0, s.step});
            for (const auto& r : j.at("removals"))
                s.removals.push_back({r.get<int>(), sim::RemovalReason::NonCompliant, s.step});
            for (const auto& c : j.at("lane_changes"))
                s.lane_changes.push_back(
                    {c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>(), s.step});
            const auto& rw = j.at("rewards");
            s.rewards.env_total = rw.at("env").get<double>();
            s.rewards.visit_term = rw.at("visit").get<double>();
            s.rewards.topo_term = rw.at("topo").get<double>();
            s.rewards.grand_total = rw.at("total").get<double>();
            s.topo_sample = j.at("topo_sample").get<std::vector<double>>();
            ep.steps.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw std::runtime_error("parse error at line " + std::to_string(lineno) + ": " +
                                     e.what());
        }
    }
    if (!have_meta) throw std::runtime_error("parse error at line 1: missing header");
    return ep;
}

}  // namespace topomarl::trace
