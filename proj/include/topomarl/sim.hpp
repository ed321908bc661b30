#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace topomarl::sim {

inline constexpr double kObservationRadius = 100.0;  // m, also the headway sentinel
inline constexpr int kObsBaseDim = 38;
inline constexpr int kObsDim = 42;  // base + per-lane spawn metadata
inline constexpr int kSpawnMetaLanes = 4;

enum class VehicleKind { HDV, CAV };
enum class RouteClass { RightTurn, Straight, LeftTurn };
enum class RemovalReason { Collision, NonCompliant };

struct IdmParams {
    double desired_time_headway = 1.5;  // s, conventional value
    double max_accel = 3.5;             // m/s^2
    double min_gap = 2.0;               // m
    double comfort_decel = 1.5;         // m/s^2
    double accel_exponent = 4.0;
    double desired_speed = 20.0;  // m/s
};

struct Vehicle {
    int id = -1;
    VehicleKind kind = VehicleKind::HDV;
    int lane = 0;
    double x = 0.0;  // longitudinal position, m
    double v = 0.0;  // m/s
    double a = 0.0;  // last applied acceleration, m/s^2
    RouteClass route = RouteClass::Straight;
    double length = 5.0;
    int spawn_step = 0;
};

struct ScenarioConfig {
    int lane_count = 4;
    double road_length = 250.0;
    double speed_limit = 23.0;  // scenario metadata; kinematics are capped by v_max
    double flow_rate = 150.0;   // vehicles/(h*lane)
    double cav_penetration = 0.5;
    std::array<double, 3> route_probs{0.25, 0.5, 0.25};  // right, straight, left
    double departure_speed = 10.0;
    int episode_length = 180;
    double dt = 0.1;
    double removal_speed_threshold = 0.5;
    double v_max = 20.0;
    IdmParams idm;
    double action_accel = 2.5;        // AC/DC magnitude, m/s^2
    double b_emergency = 8.0;         // emergency braking clamp, m/s^2
    double spawn_min_headway = 10.0;  // entrance considered occupied within this distance
    double entrance_exempt_zone = 5.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (lane_count < 1 || lane_count > 8) throw std::runtime_error("config: lane_count");
        if (road_length <= 0 || dt <= 0) throw std::runtime_error("config: geometry");
        if (cav_penetration < 0 || cav_penetration > 1)
            throw std::runtime_error("config: cav_penetration");
        const double ps = route_probs[0] + route_probs[1] + route_probs[2];
        if (std::fabs(ps - 1.0) > 1e-9) throw std::runtime_error("config: route_probs sum");
    }
};

// Lanes a route class accepts, with lane 0 the rightmost. On roads narrower
// than 3 lanes the straight class accepts any lane.
inline std::vector<int> target_lanes(RouteClass r, int lane_count) {
    switch (r) {
        case RouteClass::RightTurn: return {0};
        case RouteClass::LeftTurn: return {lane_count - 1};
        case RouteClass::Straight: {
            std::vector<int> out;
            if (lane_count >= 3)
                for (int l = 1; l < lane_count - 1; ++l) out.push_back(l);
            else
                for (int l = 0; l < lane_count; ++l) out.push_back(l);
            return out;
        }
    }
    return {};
}

inline bool in_target_lane(const Vehicle& veh, int lane_count) {
    for (int l : target_lanes(veh.route, lane_count))
        if (l == veh.lane) return true;
    return false;
}

// Representative target lane: the nearest lane of the target set to the
// current lane, lower index on ties.
inline int representative_target_lane(const Vehicle& veh, int lane_count) {
    int best = -1, best_d = 1 << 20;
    for (int l : target_lanes(veh.route, lane_count)) {
        const int d = std::abs(l - veh.lane);
        if (d < best_d) {
            best = l;
            best_d = d;
        }
    }
    return best;
}

struct Arrival {
    int id;
    bool success;
    int step;
};
struct Removal {
    int id;
    RemovalReason reason;
    int step;
};
struct LaneChange {
    int id;
    int from_lane;
    int to_lane;
    int step;
};

struct StepReport {
    std::array<int, kSpawnMetaLanes> spawns{};
    std::vector<int> spawned_ids;
    std::vector<int> collided;  // vehicle ids flagged this step
    std::vector<Arrival> arrivals;
    std::vector<Removal> removals;
    std::vector<LaneChange> lane_changes;
    std::vector<int> masked_agents;  // CAVs whose lateral action was coerced to LK
    std::vector<int> completions;    // newly qualifying vehicle ids
};

struct PendingSpawn {
    VehicleKind kind;
    RouteClass route;
};

struct WorldState {
    ScenarioConfig cfg;
    int step = 0;
    std::vector<Vehicle> vehicles;  // id-ascending
    int next_id = 0;
    std::mt19937_64 rng;
    std::array<int, kSpawnMetaLanes> spawn_counts_this_step{};
    std::array<std::vector<PendingSpawn>, 8> pending;  // blocked draws deferred per lane
    std::vector<Arrival> arrived_log;
    std::vector<Removal> removed_log;
    std::unordered_set<int> completion_counted;
    int total_spawned = 0;
    int near_collision_count = 0;  // IDM evaluated at non-positive gap

    explicit WorldState(const ScenarioConfig& c) : cfg(c), rng(c.seed) { cfg.validate(); }

    const Vehicle* find(int id) const {
        for (const auto& veh : vehicles)
            if (veh.id == id) return &veh;
        return nullptr;
    }
    Vehicle* find(int id) {
        return const_cast<Vehicle*>(static_cast<const WorldState*>(this)->find(id));
    }

    std::vector<int> live_cav_ids() const {
        std::vector<int> out;
        for (const auto& veh : vehicles)
            if (veh.kind == VehicleKind::CAV) out.push_back(veh.id);
        return out;
    }
};

// Desired following distance: d0 + max(0, v*T - v*(v_lead - v)/(2*sqrt(a_max*b))).
inline double idm_desired_gap(double follower_speed, double leader_speed, const IdmParams& p) {
    const double v = follower_speed;
    const double dyn = v * p.desired_time_headway -
                       v * (leader_speed - v) / (2.0 * std::sqrt(p.max_accel * p.comfort_decel));
    return p.min_gap + std::max(0.0, dyn);
}

// a_max*(1 - (v/v0)^delta - (d*/gap)^2), clamped to [-b_emergency, a_max].
// Non-positive gap means the follower is already touching: emergency braking.
inline double idm_acceleration(double follower_speed, double leader_speed, double gap,
                               const IdmParams& p, double b_emergency,
                               int* near_collision_counter = nullptr) {
    if (gap <= 0.0) {
        if (near_collision_counter) ++*near_collision_counter;
        return -b_emergency;
    }
    const double dstar = idm_desired_gap(follower_speed, leader_speed, p);
    const double a = p.max_accel * (1.0 - std::pow(follower_speed / p.desired_speed, p.accel_exponent) -
                                    (dstar / gap) * (dstar / gap));
    return std::clamp(a, -b_emergency, p.max_accel);
}

// Free-flow variant (no leader).
inline double idm_free_acceleration(double v, const IdmParams& p, double b_emergency) {
    const double a = p.max_accel * (1.0 - std::pow(v / p.desired_speed, p.accel_exponent));
    return std::clamp(a, -b_emergency, p.max_accel);
}

// Nearest front vehicle in `lane` relative to position x (strictly ahead).
inline const Vehicle* front_vehicle(const WorldState& w, int lane, double x, int exclude_id = -1) {
    const Vehicle* best = nullptr;
    for (const auto& veh : w.vehicles) {
        if (veh.id == exclude_id || veh.lane != lane || veh.x <= x) continue;
        if (!best || veh.x < best->x) best = &veh;
    }
    return best;
}

inline const Vehicle* rear_vehicle(const WorldState& w, int lane, double x, int exclude_id = -1) {
    const Vehicle* best = nullptr;
    for (const auto& veh : w.vehicles) {
        if (veh.id == exclude_id || veh.lane != lane || veh.x > x) continue;
        if (!best || veh.x > best->x) best = &veh;
    }
    return best;
}

enum class LaneDecision { Stay, Left, Right };

// Gap-acceptance lane changing for HDVs: move only toward the route target,
// and only when both the ego's gap to the new leader and the new follower's
// gap to the ego are at least the respective IDM desired gaps. No politeness
// term.
inline LaneDecision hdv_lane_change_decision(const WorldState& w, int vehicle_id) {
    const Vehicle* veh = w.find(vehicle_id);
    if (!veh) throw std::runtime_error("no such agent");
    if (veh->kind != VehicleKind::HDV) throw std::runtime_error("hdv_lane_change: not an HDV");
    if (in_target_lane(*veh, w.cfg.lane_count)) return LaneDecision::Stay;
    const int target = representative_target_lane(*veh, w.cfg.lane_count);
    const int dir = target > veh->lane ? +1 : -1;
    const int dest = veh->lane + dir;
    if (dest < 0 || dest >= w.cfg.lane_count) return LaneDecision::Stay;

    const IdmParams& idm = w.cfg.idm;
    if (const Vehicle* leader = front_vehicle(w, dest, veh->x)) {
        const double gap = leader->x - veh->x - veh->length;
        if (gap < idm_desired_gap(veh->v, leader->v, idm)) return LaneDecision::Stay;
    }
    if (const Vehicle* follower = rear_vehicle(w, dest, veh->x)) {
        const double gap = veh->x - follower->x - follower->length;
        if (gap < idm_desired_gap(follower->v, veh->v, idm)) return LaneDecision::Stay;
    }
    return dir > 0 ? LaneDecision::Left : LaneDecision::Right;
}

enum class LateralAction { LC = 0, LK = 1, RC = 2 };   // left, keep, right
enum class LongAction { AC = 0, MT = 1, DC = 2 };      // accelerate, maintain, decelerate

struct CavAction {
    LateralAction lat = LateralAction::LK;
    LongAction lon = LongAction::MT;

    int index() const { return static_cast<int>(lat) * 3 + static_cast<int>(lon); }
    static CavAction from_index(int idx) {
        return CavAction{static_cast<LateralAction>(idx / 3), static_cast<LongAction>(idx % 3)};
    }
};
inline constexpr int kActionCount = 9;

// Valid-action mask for a lane position. LK x {AC,MT,DC} is always valid.
inline std::array<bool, kActionCount> action_mask(int lane, int lane_count) {
    std::array<bool, kActionCount> m{};
    m.fill(true);
    if (lane >= lane_count - 1)
        for (int l = 0; l < 3; ++l) m[static_cast<int>(LateralAction::LC) * 3 + l] = false;
    if (lane <= 0)
        for (int l = 0; l < 3; ++l) m[static_cast<int>(LateralAction::RC) * 3 + l] = false;
    return m;
}

struct CavActionResult {
    bool masked = false;  // lateral coerced to LK at a road edge
    int old_lane = 0;
    int new_lane = 0;
};

// Applies the lateral move (instant lane index mutation; off-road coerced to
// LK and flagged), sets the commanded acceleration, and integrates the speed.
inline CavActionResult apply_cav_action(WorldState& w, int vehicle_id, CavAction action) {
    Vehicle* veh = w.find(vehicle_id);
    if (!veh || veh->kind != VehicleKind::CAV) throw std::runtime_error("no such agent");
    CavActionResult res;
    res.old_lane = veh->lane;
    int delta = action.lat == LateralAction::LC ? +1 : action.lat == LateralAction::RC ? -1 : 0;
    const int dest = veh->lane + delta;
    if (delta != 0 && (dest < 0 || dest >= w.cfg.lane_count)) {
        delta = 0;
        res.masked = true;
    }
    veh->lane += delta;
    res.new_lane = veh->lane;

    const double a = action.lon == LongAction::AC   ? w.cfg.action_accel
                     : action.lon == LongAction::DC ? -w.cfg.action_accel
                                                    : 0.0;
    veh->a = a;
    veh->v = std::clamp(veh->v + a * w.cfg.dt, 0.0, w.cfg.v_max);
    return res;
}

// Per-lane per-step Bernoulli spawn probability.
inline double spawn_probability(const ScenarioConfig& cfg) {
    return cfg.flow_rate * cfg.dt / 3600.0;
}

// Per-lane Bernoulli spawning with deferral: a successful draw blocked by an
// occupied entrance stays queued until the entrance clears.
inline void spawn_vehicles(WorldState& w, StepReport& report) {
    const ScenarioConfig& cfg = w.cfg;
    const double p = spawn_probability(cfg);
    w.spawn_counts_this_step.fill(0);
    for (int lane = 0; lane < cfg.lane_count; ++lane) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        if (u(w.rng) < p) {
            PendingSpawn ps;
            ps.kind = u(w.rng) < cfg.cav_penetration ? VehicleKind::CAV : VehicleKind::HDV;
            const double r = u(w.rng);
            ps.route = r < cfg.route_probs[0] ? RouteClass::RightTurn
                       : r < cfg.route_probs[0] + cfg.route_probs[1] ? RouteClass::Straight
                                                                     : RouteClass::LeftTurn;
            w.pending[lane].push_back(ps);
        }
        if (w.pending[lane].empty()) continue;
        bool blocked = false;
        for (const auto& veh : w.vehicles)
            if (veh.lane == lane && veh.x < cfg.spawn_min_headway) blocked = true;
        if (blocked) continue;
        const PendingSpawn ps = w.pending[lane].front();
        w.pending[lane].erase(w.pending[lane].begin());
        Vehicle veh;
        veh.id = w.next_id++;
        veh.kind = ps.kind;
        veh.route = ps.route;
        veh.lane = lane;
        veh.x = 0.0;
        veh.v = cfg.departure_speed;
        veh.spawn_step = w.step;
        w.vehicles.push_back(veh);
        ++w.total_spawned;
        if (lane < kSpawnMetaLanes) {
            ++w.spawn_counts_this_step[lane];
            ++report.spawns[lane];
        }
        report.spawned_ids.push_back(veh.id);
    }
}

// Vehicles below the speed threshold are removed unless still in the entrance
// zone (freshly spawned traffic is exempt).
inline void remove_noncompliant(WorldState& w, StepReport& report) {
    for (auto it = w.vehicles.begin(); it != w.vehicles.end();) {
        if (it->v < w.cfg.removal_speed_threshold && it->x >= w.cfg.entrance_exempt_zone) {
            Removal rem{it->id, RemovalReason::NonCompliant, w.step};
            report.removals.push_back(rem);
            w.removed_log.push_back(rem);
            it = w.vehicles.erase(it);
        } else {
            ++it;
        }
    }
}

// 38-dim base observation + 4-dim spawn metadata. Neighbor slot order:
// left-front, left-rear, same-front, same-rear, right-front, right-rear;
// each slot carries (x_i-x_j, y_i-y_j, v_i-v_j, type_j, targ_j), zero-padded
// when absent. Headways are center distances to the nearest front vehicle in
// the left/own/right lane, with the 100 m sentinel when absent.
inline std::vector<double> build_observation(const WorldState& w, int vehicle_id) {
    const Vehicle* ego = w.find(vehicle_id);
    if (!ego) throw std::runtime_error("no such agent");
    std::vector<double> o(kObsDim, 0.0);

    auto headway = [&](int lane) {
        if (lane < 0 || lane >= w.cfg.lane_count) return kObservationRadius;
        const Vehicle* f = front_vehicle(w, lane, ego->x, ego->id);
        if (!f) return kObservationRadius;
        return std::min(f->x - ego->x, kObservationRadius);
    };

    o[0] = ego->x;
    o[1] = ego->lane;
    o[2] = ego->v;
    o[3] = ego->kind == VehicleKind::CAV ? 1.0 : 0.0;
    o[4] = representative_target_lane(*ego, w.cfg.lane_count);
    o[5] = headway(ego->lane + 1);
    o[6] = headway(ego->lane);
    o[7] = headway(ego->lane - 1);

    const std::array<int, 3> lanes{ego->lane + 1, ego->lane, ego->lane - 1};
    int slot = 0;
    for (int lane : lanes) {
        for (int front = 1; front >= 0; --front) {
            const Vehicle* nbr = nullptr;
            if (lane >= 0 && lane < w.cfg.lane_count) {
                for (const auto& veh : w.vehicles) {
                    if (veh.id == ego->id || veh.lane != lane) continue;
                    const bool is_front = veh.x > ego->x;
                    if (is_front != static_cast<bool>(front)) continue;
                    if (std::fabs(veh.x - ego->x) > kObservationRadius) continue;
                    if (!nbr || std::fabs(veh.x - ego->x) < std::fabs(nbr->x - ego->x)) nbr = &veh;
                }
            }
            double* s = &o[8 + slot * 5];
            if (nbr) {
                s[0] = ego->x - nbr->x;
                s[1] = ego->lane - nbr->lane;
                s[2] = ego->v - nbr->v;
                s[3] = nbr->kind == VehicleKind::CAV ? 1.0 : 0.0;
                s[4] = representative_target_lane(*nbr, w.cfg.lane_count);
            }
            ++slot;
        }
    }
    for (int lane = 0; lane < kSpawnMetaLanes; ++lane)
        o[kObsBaseDim + lane] = w.spawn_counts_this_step[lane];
    return o;
}

// One transition of the piecewise world map. Phase order is fixed:
// spawn, HDV lane changes, CAV lateral+longitudinal actions, HDV IDM
// accelerations, position integration, collision detection, completion
// bookkeeping, arrival removal, non-compliant removal.
inline StepReport step_world(WorldState& w, const std::map<int, CavAction>& actions) {
    const ScenarioConfig& cfg = w.cfg;
    for (const auto& [id, act] : actions) {
        const Vehicle* veh = w.find(id);
        if (!veh || veh->kind != VehicleKind::CAV)
            throw std::runtime_error("action/agent mismatch");
    }
    for (const auto& veh : w.vehicles)
        if (veh.kind == VehicleKind::CAV && actions.find(veh.id) == actions.end())
            throw std::runtime_error("action/agent mismatch");

    StepReport report;

    // (1) spawn
    spawn_vehicles(w, report);

    // (2) HDV lane changes, id-ascending
    for (auto& veh : w.vehicles) {
        if (veh.kind != VehicleKind::HDV) continue;
        const LaneDecision d = hdv_lane_change_decision(w, veh.id);
        if (d == LaneDecision::Stay) continue;
        const int from = veh.lane;
        veh.lane += d == LaneDecision::Left ? +1 : -1;
        report.lane_changes.push_back({veh.id, from, veh.lane, w.step});
    }

    // (3)+(4a) CAV lateral + commanded acceleration (speed integrated inside)
    for (const auto& [id, act] : actions) {
        const CavActionResult res = apply_cav_action(w, id, act);
        if (res.masked) report.masked_agents.push_back(id);
        if (res.new_lane != res.old_lane)
            report.lane_changes.push_back({id, res.old_lane, res.new_lane, w.step});
    }

    // (4b) HDV IDM accelerations + speed integration
    for (auto& veh : w.vehicles) {
        if (veh.kind != VehicleKind::HDV) continue;
        const Vehicle* leader = front_vehicle(w, veh.lane, veh.x, veh.id);
        double a;
        if (leader) {
            const double gap = leader->x - veh.x - veh.length;
            a = idm_acceleration(veh.v, leader->v, gap, cfg.idm, cfg.b_emergency,
                                 &w.near_collision_count);
        } else {
            a = idm_free_acceleration(veh.v, cfg.idm, cfg.b_emergency);
        }
        veh.a = a;
        veh.v = std::clamp(veh.v + a * cfg.dt, 0.0, cfg.v_max);
    }

    // (5) position integration
    for (auto& veh : w.vehicles) veh.x += veh.v * cfg.dt;

    // (6) collision detection: same lane, interval overlap
    {
        std::unordered_set<int> collided;
        for (std::size_t i = 0; i < w.vehicles.size(); ++i)
            for (std::size_t j = i + 1; j < w.vehicles.size(); ++j) {
                const Vehicle &a = w.vehicles[i], &b = w.vehicles[j];
                if (a.lane == b.lane && std::fabs(a.x - b.x) < a.length) {
                    collided.insert(a.id);
                    collided.insert(b.id);
                }
            }
        for (auto it = w.vehicles.begin(); it != w.vehicles.end();) {
            if (collided.count(it->id)) {
                report.collided.push_back(it->id);
                Removal rem{it->id, RemovalReason::Collision, w.step};
                report.removals.push_back(rem);
                w.removed_log.push_back(rem);
                it = w.vehicles.erase(it);
            } else {
                ++it;
            }
        }
    }

    // (6b) completion bookkeeping: target lane, last 20 m, counted once
    for (const auto& veh : w.vehicles) {
        if (veh.x >= cfg.road_length - 20.0 && in_target_lane(veh, cfg.lane_count) &&
            !w.completion_counted.count(veh.id)) {
            w.completion_counted.insert(veh.id);
            report.completions.push_back(veh.id);
        }
    }

    // (7) arrival removal at road end
    for (auto it = w.vehicles.begin(); it != w.vehicles.end();) {
        if (it->x >= cfg.road_length) {
            Arrival arr{it->id, in_target_lane(*it, cfg.lane_count), w.step};
            report.arrivals.push_back(arr);
            w.arrived_log.push_back(arr);
            it = w.vehicles.erase(it);
        } else {
            ++it;
        }
    }

    // (8) non-compliant removal
    remove_noncompliant(w, report);

    ++w.step;
    return report;
}

}  // namespace topomarl::sim
