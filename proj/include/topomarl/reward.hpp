#pragma once

#include <cmath>
#include <cstdlib>
#include <map>
#include <vector>

#include "topomarl/sim.hpp"

namespace topomarl::reward {

struct RewardConfig {
    double w1 = 10.0;  // action
    double w2 = 2.0;   // positional
    double w3 = 1.0;   // flow
    double w4 = -50.0; // safety
    double w5 = 8.0;   // completion
    double sigma = 60.0;
    double zeta = 1.0;
    double beta1 = 0.1;  // visit
    double beta2 = 0.2;  // topology
    double goal_x = 250.0;  // l, road end
    double v_max = 20.0;
    double high_speed_fraction = 0.9;
};

struct RewardBreakdown {
    double action_term = 0.0;      // mean r_a over CAVs
    double positional_term = 0.0;  // mean r_p over CAVs
    double flow_term = 0.0;
    double safety_term = 0.0;      // collision indicator count
    double completion_term = 0.0;
    double env_total = 0.0;
    double visit_term = 0.0;
    double topo_term = 0.0;
    double grand_total = 0.0;
};

// 1 iff accelerating or keeping high speed (v >= 0.9*v_max).
inline double action_reward(const sim::Vehicle& veh, const RewardConfig& cfg) {
    return (veh.a > 0.0 || veh.v >= cfg.high_speed_fraction * cfg.v_max) ? 1.0 : 0.0;
}

// exp(-(l-x)^2/(2 sigma^2)) / (zeta*|y_targ - y| + 1)
inline double positional_field(double x, double y_lane, double y_target,
                               const RewardConfig& cfg) {
    const double lon = std::exp(-(cfg.goal_x - x) * (cfg.goal_x - x) /
                                (2.0 * cfg.sigma * cfg.sigma));
    return lon / (cfg.zeta * std::fabs(y_target - y_lane) + 1.0);
}

// r_p = [v_x*(l-x) + L] * f_p. Off the target lane the lateral term rewards
// moving toward the target (the gradient-faithful sign); on the target lane
// any lane departure is penalized by -zeta*|v_y|.
inline double positional_reward(const sim::Vehicle& veh, int v_y, const RewardConfig& cfg,
                                int lane_count) {
    const double y_target = sim::representative_target_lane(veh, lane_count);
    const double y = veh.lane;
    const double f = positional_field(veh.x, y, y_target, cfg);
    double lateral;
    if (y == y_target) {
        lateral = -cfg.zeta * std::abs(v_y);
    } else {
        const double toward = y_target > y ? 1.0 : -1.0;
        lateral = cfg.zeta * v_y * toward / (cfg.zeta * std::fabs(y_target - y) + 1.0);
    }
    return (veh.v * (cfg.goal_x - veh.x) + lateral) * f;
}

// Mean v/v_max over all vehicles; 0 on an empty road.
inline double flow_reward(const sim::WorldState& w, const RewardConfig& cfg) {
    if (w.vehicles.empty()) return 0.0;
    double s = 0.0;
    for (const auto& veh : w.vehicles) s += veh.v / cfg.v_max;
    return s / static_cast<double>(w.vehicles.size());
}

// Collision indicators summed per involved vehicle (a two-car crash counts 2).
inline double safety_reward(const sim::StepReport& report) {
    return static_cast<double>(report.collided.size());
}

inline double completion_reward(const sim::StepReport& report) {
    return static_cast<double>(report.completions.size());
}

// env_total = mean over CAVs of (w1 r_a + w2 r_p) + w3 r_flow + w4 r_safe
//           + w5 r_complete. `lane_deltas` carries v_y in {-1,0,1} per CAV id
// for this step (missing ids read as 0). CAV terms cover the CAVs live after
// the step.
inline RewardBreakdown environmental_reward(const sim::WorldState& w,
                                            const sim::StepReport& report,
                                            const RewardConfig& cfg,
                                            const std::map<int, int>& lane_deltas = {}) {
    RewardBreakdown b;
    double per_agent = 0.0;
    int n_cav = 0;
    for (const auto& veh : w.vehicles) {
        if (veh.kind != sim::VehicleKind::CAV) continue;
        ++n_cav;
        auto it = lane_deltas.find(veh.id);
        const int v_y = it == lane_deltas.end() ? 0 : it->second;
        const double ra = action_reward(veh, cfg);
        const double rp = positional_reward(veh, v_y, cfg, w.cfg.lane_count);
        b.action_term += ra;
        b.positional_term += rp;
        per_agent += cfg.w1 * ra + cfg.w2 * rp;
    }
    if (n_cav > 0) {
        per_agent /= n_cav;
        b.action_term /= n_cav;
        b.positional_term /= n_cav;
    }
    b.flow_term = flow_reward(w, cfg);
    b.safety_term = safety_reward(report);
    b.completion_term = completion_reward(report);
    b.env_total = per_agent + cfg.w3 * b.flow_term + cfg.w4 * b.safety_term +
                  cfg.w5 * b.completion_term;
    return b;
}

// r_tot = r_env + beta1*r_vis + beta2*r_topo
inline double total_reward(double env, double visit_term, double topo_term,
                           const RewardConfig& cfg) {
    return env + cfg.beta1 * visit_term + cfg.beta2 * topo_term;
}

inline RewardBreakdown with_intrinsic(RewardBreakdown b, double visit_term, double topo_term,
                                      const RewardConfig& cfg) {
    b.visit_term = visit_term;
    b.topo_term = topo_term;
    b.grand_total = total_reward(b.env_total, visit_term, topo_term, cfg);
    return b;
}

}  // namespace topomarl::reward
