#pragma once

// Experiment configuration: strict JSON (unknown keys rejected with their
// path), defaults matching the reference scenario, stable round-trip
// serialization, and a content hash for manifests.

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "topomarl/qmix.hpp"
#include "topomarl/reward.hpp"
#include "topomarl/sim.hpp"
#include "topomarl/toponet.hpp"

namespace topomarl::exp {

using nlohmann::json;

struct ExperimentConfig {
    sim::ScenarioConfig scenario;
    reward::RewardConfig rewards;
    toponet::TopoNetConfig toponet;
    qmix::TrainConfig train;
    std::string output_dir = "runs";
    std::vector<std::uint64_t> seeds{1, 2, 3};
    bool tpe = true;  // intrinsic topology rewards + topology-net training
    int episodes = 500;
    int checkpoint_interval = 100;
    int topo_batch_rows = 64;  // agent-steps per topology-net update
    int topo_updates = 1;      // topology-net updates per TD train step

    void validate() const {
        scenario.validate();
        toponet.validate();
        train.validate();
        if (episodes < 0 || checkpoint_interval < 1 || topo_batch_rows < 1 ||
            topo_updates < 0 || seeds.empty())
            throw std::runtime_error("config: invalid experiment settings");
    }
};

namespace detail {

class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) throw std::runtime_error("config: " + path_ + " must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw std::runtime_error("config: bad value at " + path_ + "." + key);
        }
    }

    const json* section(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key))
                throw std::runtime_error("config: unknown key " + path_ + "." + key);
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const json& j) {
    ExperimentConfig c;
    detail::StrictObject top(j, "$");
    bool goal_given = false;
    if (const json* s = top.section("scenario")) {
        detail::StrictObject o(*s, "$.scenario");
        o.get("lane_count", c.scenario.lane_count);
        o.get("road_length", c.scenario.road_length);
        o.get("speed_limit", c.scenario.speed_limit);
        o.get("flow_rate", c.scenario.flow_rate);
        o.get("cav_penetration", c.scenario.cav_penetration);
        o.get("route_probs", c.scenario.route_probs);
        o.get("departure_speed", c.scenario.departure_speed);
        o.get("episode_length", c.scenario.episode_length);
        o.get("dt", c.scenario.dt);
        o.get("removal_speed_threshold", c.scenario.removal_speed_threshold);
        o.get("v_max", c.scenario.v_max);
        o.get("action_accel", c.scenario.action_accel);
        o.get("b_emergency", c.scenario.b_emergency);
        o.get("spawn_min_headway", c.scenario.spawn_min_headway);
        o.get("entrance_exempt_zone", c.scenario.entrance_exempt_zone);
        o.finish();
    }
    if (const json* s = top.section("rewards")) {
        detail::StrictObject o(*s, "$.rewards");
        o.get("w1", c.rewards.w1);
        o.get("w2", c.rewards.w2);
        o.get("w3", c.rewards.w3);
        o.get("w4", c.rewards.w4);
        o.get("w5", c.rewards.w5);
        o.get("sigma", c.rewards.sigma);
        o.get("zeta", c.rewards.zeta);
        o.get("beta1", c.rewards.beta1);
        o.get("beta2", c.rewards.beta2);
        goal_given = s->contains("goal_x");
        o.get("goal_x", c.rewards.goal_x);
        o.get("v_max", c.rewards.v_max);
        o.get("high_speed_fraction", c.rewards.high_speed_fraction);
        o.finish();
    }
    if (const json* s = top.section("toponet")) {
        detail::StrictObject o(*s, "$.toponet");
        o.get("window", c.toponet.window);
        o.get("latent_dim", c.toponet.latent_dim);
        o.get("enc_hidden", c.toponet.enc_hidden);
        o.get("p1_hidden", c.toponet.p1_hidden);
        o.get("p2_hidden", c.toponet.p2_hidden);
        o.get("lambda_gf", c.toponet.lambda_gf);
        o.get("alpha", c.toponet.alpha);
        o.get("mc_samples", c.toponet.mc_samples);
        o.get("rmsprop", c.toponet.rmsprop);
        o.finish();
    }
    if (const json* s = top.section("train")) {
        detail::StrictObject o(*s, "$.train");
        o.get("gamma", c.train.gamma);
        o.get("lr", c.train.opt.lr);
        o.get("target_update_interval", c.train.target_update_interval);
        o.get("batch_episodes", c.train.batch_episodes);
        o.get("buffer_capacity", c.train.buffer_capacity);
        o.get("eps_start", c.train.eps_start);
        o.get("eps_end", c.train.eps_end);
        o.get("eps_decay_steps", c.train.eps_decay_steps);
        o.get("n_max", c.train.n_max);
        o.get("grad_clip", c.train.grad_clip);
        o.get("agent_hidden", c.train.agent_hidden);
        o.get("mix_hidden", c.train.mix_hidden);
        o.get("bptt_chunk", c.train.bptt_chunk);
        o.get("train_interval", c.train.train_interval);
        o.finish();
    }
    top.get("output_dir", c.output_dir);
    top.get("seeds", c.seeds);
    top.get("tpe", c.tpe);
    top.get("episodes", c.episodes);
    top.get("checkpoint_interval", c.checkpoint_interval);
    top.get("topo_batch_rows", c.topo_batch_rows);
    top.get("topo_updates", c.topo_updates);
    top.finish();
    // The goal line defaults to the road end.
    if (!goal_given) c.rewards.goal_x = c.scenario.road_length;
    c.validate();
    return c;
}

inline json serialize_experiment_config(const ExperimentConfig& c) {
    json j;
    j["scenario"] = {{"lane_count", c.scenario.lane_count},
                     {"road_length", c.scenario.road_length},
                     {"speed_limit", c.scenario.speed_limit},
                     {"flow_rate", c.scenario.flow_rate},
                     {"cav_penetration", c.scenario.cav_penetration},
                     {"route_probs", c.scenario.route_probs},
                     {"departure_speed", c.scenario.departure_speed},
                     {"episode_length", c.scenario.episode_length},
                     {"dt", c.scenario.dt},
                     {"removal_speed_threshold", c.scenario.removal_speed_threshold},
                     {"v_max", c.scenario.v_max},
                     {"action_accel", c.scenario.action_accel},
                     {"b_emergency", c.scenario.b_emergency},
                     {"spawn_min_headway", c.scenario.spawn_min_headway},
                     {"entrance_exempt_zone", c.scenario.entrance_exempt_zone}};
    j["rewards"] = {{"w1", c.rewards.w1},
                    {"w2", c.rewards.w2},
                    {"w3", c.rewards.w3},
                    {"w4", c.rewards.w4},
                    {"w5", c.rewards.w5},
                    {"sigma", c.rewards.sigma},
                    {"zeta", c.rewards.zeta},
                    {"beta1", c.rewards.beta1},
                    {"beta2", c.rewards.beta2},
                    {"goal_x", c.rewards.goal_x},
                    {"v_max", c.rewards.v_max},
                    {"high_speed_fraction", c.rewards.high_speed_fraction}};
    j["toponet"] = {{"window", c.toponet.window},
                    {"latent_dim", c.toponet.latent_dim},
                    {"enc_hidden", c.toponet.enc_hidden},
                    {"p1_hidden", c.toponet.p1_hidden},
                    {"p2_hidden", c.toponet.p2_hidden},
                    {"lambda_gf", c.toponet.lambda_gf},
                    {"alpha", c.toponet.alpha},
                    {"mc_samples", c.toponet.mc_samples},
                    {"rmsprop", c.toponet.rmsprop}};
    j["train"] = {{"gamma", c.train.gamma},
                  {"lr", c.train.opt.lr},
                  {"target_update_interval", c.train.target_update_interval},
                  {"batch_episodes", c.train.batch_episodes},
                  {"buffer_capacity", c.train.buffer_capacity},
                  {"eps_start", c.train.eps_start},
                  {"eps_end", c.train.eps_end},
                  {"eps_decay_steps", c.train.eps_decay_steps},
                  {"n_max", c.train.n_max},
                  {"grad_clip", c.train.grad_clip},
                  {"agent_hidden", c.train.agent_hidden},
                  {"mix_hidden", c.train.mix_hidden},
                  {"bptt_chunk", c.train.bptt_chunk},
                  {"train_interval", c.train.train_interval}};
    j["output_dir"] = c.output_dir;
    j["seeds"] = c.seeds;
    j["tpe"] = c.tpe;
    j["episodes"] = c.episodes;
    j["checkpoint_interval"] = c.checkpoint_interval;
    j["topo_batch_rows"] = c.topo_batch_rows;
    j["topo_updates"] = c.topo_updates;
    return j;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("config: ") + e.what());
    }
    return parse_experiment_config(j);
}

// FNV-1a over the canonical serialization; stable across runs and platforms.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
    const std::string s = serialize_experiment_config(c).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace topomarl::exp
