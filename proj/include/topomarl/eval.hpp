#pragma once

// Post-hoc evaluation over recorded traces: the traffic metric suite, the
// policy-diversity heatmap, and the space-time diagram export.

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "topomarl/topology.hpp"
#include "topomarl/trace.hpp"

namespace topomarl::eval {

struct MetricsReport {
    double avg_velocity = 0.0;       // km/h, per-step CAV mean, time-averaged
    double mean_min_ttc = 0.0;       // s, per-step min over closing pairs
    double mean_lc_interval = 0.0;   // s, between consecutive CAV lane changes
    double mean_jerk = 0.0;          // m/s^3, |da|/dt per vehicle lifetime
    double velocity_variance = 0.0;  // (m/s)^2, lifetime variance per vehicle
    double success_rate = 0.0;       // successful CAV arrivals / (arrivals+removals)
    double min_headway = 0.0;        // m, episode minimum, averaged over episodes
    long collision_count = 0;

    // Logged denominators and exclusions for every averaged metric.
    long velocity_steps = 0;
    long ttc_steps = 0;
    long ttc_excluded_steps = 0;
    long lc_interval_pairs = 0;
    long jerk_vehicles = 0;
    long variance_vehicles = 0;
    long success_total = 0;
    long headway_episodes = 0;

    nlohmann::json to_json() const {
        return {{"avg_velocity", avg_velocity},
                {"mean_min_ttc", mean_min_ttc},
                {"mean_lc_interval", mean_lc_interval},
                {"mean_jerk", mean_jerk},
                {"velocity_variance", velocity_variance},
                {"success_rate", success_rate},
                {"min_headway", min_headway},
                {"collision_count", collision_count},
                {"denominators",
                 {{"velocity_steps", velocity_steps},
                  {"ttc_steps", ttc_steps},
                  {"ttc_excluded_steps", ttc_excluded_steps},
                  {"lc_interval_pairs", lc_interval_pairs},
                  {"jerk_vehicles", jerk_vehicles},
                  {"variance_vehicles", variance_vehicles},
                  {"success_total", success_total},
                  {"headway_episodes", headway_episodes}}}};
    }

    static const char* csv_header() {
        return "avg_velocity,mean_min_ttc,mean_lc_interval,mean_jerk,velocity_variance,"
               "success_rate,min_headway,collision_count";
    }

    void write_csv_row(std::ostream& os) const {
        os << avg_velocity << ',' << mean_min_ttc << ',' << mean_lc_interval << ','
           << mean_jerk << ',' << velocity_variance << ',' << success_rate << ','
           << min_headway << ',' << collision_count << '\n';
    }
};

// Front bumper gap to the nearest same-lane leader; negative if none.
inline double front_gap(const trace::TraceStep& s, const trace::VehicleSnapshot& veh,
                        const trace::VehicleSnapshot** leader_out = nullptr) {
    const trace::VehicleSnapshot* leader = nullptr;
    for (const auto& other : s.vehicles) {
        if (other.id == veh.id || other.lane != veh.lane || other.x <= veh.x) continue;
        if (!leader || other.x < leader->x) leader = &other;
    }
    if (leader_out) *leader_out = leader;
    if (!leader) return -1.0;
    return leader->x - veh.x - 5.0;  // vehicle length
}

inline MetricsReport compute_metrics(const std::vector<trace::EpisodeTrace>& traces) {
    if (traces.empty()) throw std::runtime_error("no data");
    MetricsReport r;
    double vel_sum = 0.0, ttc_sum = 0.0, lc_sum = 0.0, jerk_sum = 0.0, var_sum = 0.0,
           hw_sum = 0.0;
    long successes = 0;

    for (const auto& ep : traces) {
        // Per-vehicle lifetime series for jerk and variance; kind lookup for
        // arrivals/removals whose snapshots are gone by the event step.
        std::map<int, std::vector<double>> vel_series, acc_series;
        std::map<int, bool> kind;
        std::map<int, std::vector<int>> lc_steps;
        double ep_min_headway = -1.0;

        for (const auto& s : ep.steps) {
            double cav_v = 0.0;
            int cav_n = 0;
            double step_min_ttc = -1.0;
            bool any_leader = false;
            for (const auto& veh : s.vehicles) {
                kind[veh.id] = veh.cav;
                vel_series[veh.id].push_back(veh.v);
                acc_series[veh.id].push_back(veh.a);
                if (veh.cav) {
                    cav_v += veh.v;
                    ++cav_n;
                }
                const trace::VehicleSnapshot* leader = nullptr;
                const double gap = front_gap(s, veh, &leader);
                if (!leader) continue;
                any_leader = true;
                if (ep_min_headway < 0.0 || gap < ep_min_headway) ep_min_headway = gap;
                if (veh.v > leader->v) {
                    const double ttc = gap / (veh.v - leader->v);
                    if (step_min_ttc < 0.0 || ttc < step_min_ttc) step_min_ttc = ttc;
                }
            }
            if (cav_n > 0) {
                vel_sum += cav_v / cav_n * 3.6;
                ++r.velocity_steps;
            }
            if (step_min_ttc >= 0.0) {
                ttc_sum += step_min_ttc;
                ++r.ttc_steps;
            } else if (any_leader || !s.vehicles.empty()) {
                ++r.ttc_excluded_steps;
            }
            r.collision_count += static_cast<long>(s.collided.size());
            for (const auto& lc : s.lane_changes)
                if (kind.count(lc.id) && kind[lc.id]) lc_steps[lc.id].push_back(s.step);
            for (const auto& a : s.arrivals) {
                if (!kind.count(a.id) || !kind[a.id]) continue;
                ++r.success_total;
                if (a.success) ++successes;
            }
            for (const auto& rm : s.removals) {
                if (!kind.count(rm.id) || !kind[rm.id]) continue;
                ++r.success_total;
            }
        }

        for (const auto& [id, steps] : lc_steps)
            for (std::size_t i = 1; i < steps.size(); ++i) {
                lc_sum += (steps[i] - steps[i - 1]) * ep.dt;
                ++r.lc_interval_pairs;
            }
        for (const auto& [id, acc] : acc_series) {
            if (acc.size() < 2) continue;
            double j = 0.0;
            for (std::size_t i = 1; i < acc.size(); ++i)
                j += std::fabs(acc[i] - acc[i - 1]) / ep.dt;
            jerk_sum += j / static_cast<double>(acc.size() - 1);
            ++r.jerk_vehicles;
        }
        for (const auto& [id, vel] : vel_series) {
            double mean = 0.0;
            for (double v : vel) mean += v;
            mean /= static_cast<double>(vel.size());
            double var = 0.0;
            for (double v : vel) var += (v - mean) * (v - mean);
            var_sum += var / static_cast<double>(vel.size());
            ++r.variance_vehicles;
        }
        if (ep_min_headway >= 0.0) {
            hw_sum += ep_min_headway;
            ++r.headway_episodes;
        }
    }

    if (r.velocity_steps > 0) r.avg_velocity = vel_sum / r.velocity_steps;
    if (r.ttc_steps > 0) r.mean_min_ttc = ttc_sum / r.ttc_steps;
    if (r.lc_interval_pairs > 0) r.mean_lc_interval = lc_sum / r.lc_interval_pairs;
    if (r.jerk_vehicles > 0) r.mean_jerk = jerk_sum / r.jerk_vehicles;
    if (r.variance_vehicles > 0) r.velocity_variance = var_sum / r.variance_vehicles;
    if (r.success_total > 0)
        r.success_rate = static_cast<double>(successes) / static_cast<double>(r.success_total);
    if (r.headway_episodes > 0) r.min_headway = hw_sum / r.headway_episodes;
    return r;
}

// Pads each flattened topology sample to R^100, hashes to 64 bits, splits the
// code into unit-square coordinates, and bins them on a 32x32 grid. Cell
// counts always sum to the sample count.
inline std::vector<std::vector<std::uint64_t>> diversity_heatmap(
    const std::vector<std::vector<double>>& samples, const topo::SimHashEncoder& key_enc) {
    std::vector<std::pair<double, double>> points;
    points.reserve(samples.size());
    for (const auto& s : samples)
        points.push_back(topo::hash64_to_unit_square(topo::hash_padded_vector(s, key_enc)));
    return topo::grid_density(points, 32);
}

inline void write_heatmap_csv(std::ostream& os,
                              const std::vector<std::vector<std::uint64_t>>& grid) {
    for (const auto& row : grid) {
        for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << row[j];
        os << '\n';
    }
}

// Binary 8-bit PGM (P5), row-major, counts min-max normalized to 0..255
// (a constant grid maps to all zeros).
inline void write_heatmap_pgm(std::ostream& os,
                              const std::vector<std::vector<std::uint64_t>>& grid) {
    std::uint64_t lo = ~0ull, hi = 0;
    for (const auto& row : grid)
        for (auto v : row) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const std::size_t n = grid.size();
    os << "P5\n" << n << ' ' << n << "\n255\n";
    for (const auto& row : grid)
        for (auto v : row) {
            const double f = hi > lo ? static_cast<double>(v - lo) /
                                           static_cast<double>(hi - lo)
                                     : 0.0;
            os.put(static_cast<char>(std::lround(f * 255.0)));
        }
}

struct SpacetimeRow {
    int step;
    double mapped_x;  // lane * road_length + x
    int id;
    int lane;
    double v;
};

inline std::vector<SpacetimeRow> spacetime_export(const trace::EpisodeTrace& ep) {
    std::vector<SpacetimeRow> rows;
    for (const auto& s : ep.steps)
        for (const auto& veh : s.vehicles)
            rows.push_back(
                {s.step, veh.lane * ep.road_length + veh.x, veh.id, veh.lane, veh.v});
    std::sort(rows.begin(), rows.end(), [](const SpacetimeRow& a, const SpacetimeRow& b) {
        if (a.step != b.step) return a.step < b.step;
        return a.mapped_x < b.mapped_x;
    });
    return rows;
}

inline void write_spacetime_csv(std::ostream& os, const std::vector<SpacetimeRow>& rows) {
    os << "t,mapped_x,vehicle,lane,v\n";
    for (const auto& r : rows)
        os << r.step << ',' << r.mapped_x << ',' << r.id << ',' << r.lane << ',' << r.v
           << '\n';
}

}  // namespace topomarl::eval
