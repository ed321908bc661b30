#pragma once

// Recurrent per-agent Q networks with shared parameters, the monotonic mixing
// network, epsilon-greedy rollouts over the traffic world, the episode replay
// buffer, and the TD training step.

#include <algorithm>
#include <array>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "topomarl/graph.hpp"
#include "topomarl/nnops.hpp"
#include "topomarl/params.hpp"
#include "topomarl/reward.hpp"
#include "topomarl/sim.hpp"
#include "topomarl/toponet.hpp"
#include "topomarl/topology.hpp"
#include "topomarl/trace.hpp"

namespace topomarl::qmix {

struct TrainConfig {
    double gamma = 0.99;
    RmsPropConfig opt{};  // lr 5e-4
    int target_update_interval = 200;
    int batch_episodes = 32;
    std::size_t buffer_capacity = 10000;  // timesteps, whole-episode eviction
    double eps_start = 1.0;
    double eps_end = 0.05;
    long eps_decay_steps = 50000;
    int n_max = 12;
    double grad_clip = 10.0;
    int agent_hidden = 64;
    int mix_hidden = 32;
    int bptt_chunk = 20;     // timesteps per truncated-backprop segment
    int train_interval = 1;  // episodes between train steps

    int mixing_state_dim() const { return n_max * (sim::kObsDim + 4 + 1); }

    double epsilon(long env_steps) const {
        if (env_steps >= eps_decay_steps) return eps_end;
        const double f = static_cast<double>(env_steps) / static_cast<double>(eps_decay_steps);
        return eps_start + f * (eps_end - eps_start);
    }

    void validate() const {
        if (gamma < 0.0 || gamma >= 1.0 || n_max < 1 || batch_episodes < 1 || bptt_chunk < 1)
            throw std::runtime_error("invalid train config");
    }
};

inline void init_qmix_params(ParamStore& ps, const TrainConfig& c, std::uint64_t seed) {
    std::uint64_t n = 0;
    auto w = [&](const std::string& name, std::size_t r, std::size_t cc) {
        ps.create(name, seeded_init(r, cc, InitScheme::UniformFanIn, seed + 1000 * ++n));
    };
    auto b = [&](const std::string& name, std::size_t cc) {
        ps.create(name, Tensor2(1, cc));
    };
    const auto h = static_cast<std::size_t>(c.agent_hidden);
    const auto m = static_cast<std::size_t>(c.mix_hidden);
    const auto s = static_cast<std::size_t>(c.mixing_state_dim());
    w("agent/in.w", sim::kObsDim, h);
    b("agent/in.b", h);
    for (const char* gate : {"wz", "wr", "wh"}) w(std::string("agent/gru.") + gate, h, h);
    for (const char* gate : {"uz", "ur", "uh"}) w(std::string("agent/gru.") + gate, h, h);
    for (const char* gate : {"bz", "br", "bh"}) b(std::string("agent/gru.") + gate, h);
    w("agent/out.w", h, sim::kActionCount);
    b("agent/out.b", sim::kActionCount);
    w("mix/hw1.w", s, c.n_max * m);
    b("mix/hw1.b", c.n_max * m);
    w("mix/hb1.w", s, m);
    b("mix/hb1.b", m);
    w("mix/hw2.w", s, m);
    b("mix/hw2.b", m);
    w("mix/v1.w", s, m);
    b("mix/v1.b", m);
    w("mix/v2.w", m, 1);
    b("mix/v2.b", 1);
}

// One recurrent step on the tape; `hidden` is replaced with the new state id.
inline Graph::Id agent_q_forward(Graph& g, const ParamStore& ps, Graph::Id obs,
                                 Graph::Id& hidden) {
    Graph::Id e = g.relu(g.affine(obs, g.param(ps, "agent/in.w"), g.param(ps, "agent/in.b")));
    hidden = g.gru_step(e, hidden, g.gru_params(ps, "agent/gru"));
    return g.affine(hidden, g.param(ps, "agent/out.w"), g.param(ps, "agent/out.b"));
}

// Tape-free agent step for rollouts and target unrolls; updates hidden in place.
inline Tensor2 agent_q_plain(const ParamStore& ps, const Tensor2& obs, Tensor2& hidden) {
    Tensor2 e = affine_plain(obs, ps.get("agent/in.w"), ps.get("agent/in.b"));
    relu_inplace(e);
    hidden = gru_step_plain(e, hidden, GruRefs::from(ps, "agent/gru"));
    return affine_plain(hidden, ps.get("agent/out.w"), ps.get("agent/out.b"));
}

// Epsilon-greedy over valid actions; greedy ties break to the lowest index.
inline int select_action(const std::array<double, sim::kActionCount>& q,
                         const std::array<bool, sim::kActionCount>& valid, double eps,
                         std::mt19937_64& rng) {
    std::array<int, sim::kActionCount> pool{};
    int n = 0;
    for (int i = 0; i < sim::kActionCount; ++i)
        if (valid[i]) pool[n++] = i;
    if (n == 0) throw std::runtime_error("no valid action");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng) < eps) {
        std::uniform_int_distribution<int> d(0, n - 1);
        return pool[d(rng)];
    }
    int best = pool[0];
    for (int k = 1; k < n; ++k)
        if (q[pool[k]] > q[best]) best = pool[k];
    return best;
}

// Monotonic two-layer mixing with hypernetwork weights: Q_tot is non-
// decreasing in every q entry because both weight layers pass through abs().
inline Graph::Id mix(Graph& g, const ParamStore& ps, const TrainConfig& c, Graph::Id q_taken,
                     Graph::Id state) {
    const auto n = static_cast<std::size_t>(c.n_max);
    const auto m = static_cast<std::size_t>(c.mix_hidden);
    Graph::Id w1 =
        g.abs_(g.affine(state, g.param(ps, "mix/hw1.w"), g.param(ps, "mix/hw1.b")));
    Graph::Id b1 = g.affine(state, g.param(ps, "mix/hb1.w"), g.param(ps, "mix/hb1.b"));
    Graph::Id hidden = g.elu(g.add(g.bmm_rowwise(q_taken, w1, n, m), b1));
    Graph::Id w2 =
        g.abs_(g.affine(state, g.param(ps, "mix/hw2.w"), g.param(ps, "mix/hw2.b")));
    Graph::Id mixed = g.rowsum(g.mul(hidden, w2));
    Graph::Id v = g.affine(
        g.relu(g.affine(state, g.param(ps, "mix/v1.w"), g.param(ps, "mix/v1.b"))),
        g.param(ps, "mix/v2.w"), g.param(ps, "mix/v2.b"));
    return g.add(mixed, v);
}

// Tape-free twin of mix(); one Q_tot per row.
inline std::vector<double> mix_plain(const ParamStore& ps, const TrainConfig& c,
                                     const Tensor2& q_taken, const Tensor2& state) {
    const auto n = static_cast<std::size_t>(c.n_max);
    const auto m = static_cast<std::size_t>(c.mix_hidden);
    const std::size_t B = q_taken.rows;
    if (q_taken.cols != n || state.rows != B ||
        state.cols != static_cast<std::size_t>(c.mixing_state_dim()))
        throw std::runtime_error("shape error: mix");
    Tensor2 w1 = affine_plain(state, ps.get("mix/hw1.w"), ps.get("mix/hw1.b"));
    abs_inplace(w1);
    Tensor2 hidden = affine_plain(state, ps.get("mix/hb1.w"), ps.get("mix/hb1.b"));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t a = 0; a < n; ++a) {
            const double qv = q_taken.at(b, a);
            if (qv == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) hidden.at(b, j) += qv * w1.at(b, a * m + j);
        }
    elu_inplace(hidden);
    Tensor2 w2 = affine_plain(state, ps.get("mix/hw2.w"), ps.get("mix/hw2.b"));
    abs_inplace(w2);
    Tensor2 vh = affine_plain(state, ps.get("mix/v1.w"), ps.get("mix/v1.b"));
    relu_inplace(vh);
    Tensor2 v = affine_plain(vh, ps.get("mix/v2.w"), ps.get("mix/v2.b"));
    std::vector<double> out(B, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        double acc = v.at(b, 0);
        for (std::size_t j = 0; j < m; ++j) acc += hidden.at(b, j) * w2.at(b, j);
        out[b] = acc;
    }
    return out;
}

// One recorded timestep of an episode, slot-padded to n_max.
struct StepRecord {
    std::vector<double> obs;        // n_max * kObsDim, dead rows zero
    std::vector<int> slot_vehicle;  // n_max, -1 = dead slot
    std::vector<int> actions;       // n_max, -1 = dead slot
    std::vector<std::array<bool, sim::kActionCount>> valid;
    std::vector<double> topo;       // 4 * n_max scaled descriptors
    std::vector<std::array<int, 2>> attention;  // slot indices, -1 = empty
    double env_reward = 0.0;
    double visit_reward = 0.0;
    bool terminal = false;
};

struct EpisodeRecord {
    std::vector<StepRecord> steps;
};

// FIFO by whole episodes; capacity counted in timesteps.
struct ReplayBuffer {
    std::size_t capacity = 10000;
    std::deque<EpisodeRecord> episodes;
    std::size_t timesteps = 0;

    void push(EpisodeRecord ep) {
        timesteps += ep.steps.size();
        episodes.push_back(std::move(ep));
        while (timesteps > capacity && !episodes.empty()) {
            timesteps -= episodes.front().steps.size();
            episodes.pop_front();
        }
    }
};

inline void fill_mixing_state_row(const StepRecord& s, const TrainConfig& c, Tensor2& state,
                                  std::size_t row) {
    std::size_t col = 0;
    for (double v : s.obs) state.at(row, col++) = v;
    for (double v : s.topo) state.at(row, col++) = v;
    for (int i = 0; i < c.n_max; ++i) state.at(row, col++) = s.slot_vehicle[i] >= 0 ? 1.0 : 0.0;
}

// Copies the L-step observation window ending at step t for a slot into dst
// (L * obs_dim doubles), zero-padding before spawn and across slot reuse.
inline void write_window(const EpisodeRecord& ep, int slot, int t,
                         const toponet::TopoNetConfig& tc, double* dst) {
    const int L = tc.window;
    const int d = tc.obs_dim;
    std::fill(dst, dst + static_cast<std::size_t>(L) * d, 0.0);
    const int vid = ep.steps[t].slot_vehicle[slot];
    if (vid < 0) return;
    for (int k = L - 1; k >= 0; --k) {
        const int step = t - (L - 1 - k);
        if (step < 0 || ep.steps[step].slot_vehicle[slot] != vid) break;
        const double* src = &ep.steps[step].obs[static_cast<std::size_t>(slot) * d];
        std::copy(src, src + d, dst + static_cast<std::size_t>(k) * d);
    }
}

// Shared immutable encoders plus the mutable visitation state of a run.
struct RolloutContext {
    topo::SimHashEncoder angle_enc;
    topo::SimHashEncoder key_enc;
    topo::VisitCounter visits;
    long env_steps = 0;

    static RolloutContext make(std::uint64_t seed) {
        RolloutContext ctx;
        ctx.angle_enc = topo::SimHashEncoder::gaussian(topo::kAngleBits, sim::kObsBaseDim, seed);
        ctx.key_enc =
            topo::SimHashEncoder::rademacher(topo::kKeyBits, topo::kKeyInputDim, seed + 1);
        return ctx;
    }
};

struct RolloutResult {
    EpisodeRecord record;
    double env_return = 0.0;     // environmental reward only
    double shaped_return = 0.0;  // env + beta1 * visit (topo term is train-time)
    int collisions = 0;
    int arrivals = 0;
    int successes = 0;
    int removals = 0;
};

// One full episode in the given (freshly constructed) world. Slots are
// assigned lowest-free at spawn; CAVs beyond n_max still act through the
// shared net but are excluded from the training record and the mixing state.
inline RolloutResult run_episode(sim::WorldState& world, const ParamStore& ps,
                                 const TrainConfig& cfg, const reward::RewardConfig& rcfg,
                                 RolloutContext& ctx, std::mt19937_64& policy_rng,
                                 bool greedy = false,
                                 trace::EpisodeTrace* out_trace = nullptr) {
    if (out_trace) {
        out_trace->lane_count = world.cfg.lane_count;
        out_trace->road_length = world.cfg.road_length;
        out_trace->dt = world.cfg.dt;
        out_trace->seed = world.cfg.seed;
        out_trace->steps.clear();
    }
    const double code_scale = 1.0 / static_cast<double>((1u << topo::kAngleBits) - 1);
    RolloutResult out;
    std::map<int, int> vehicle_slot;
    std::vector<int> slot_vehicle(cfg.n_max, -1);
    std::map<int, Tensor2> hiddens;

    for (int t = 0; t < world.cfg.episode_length; ++t) {
        const double eps = greedy ? 0.0 : cfg.epsilon(ctx.env_steps);
        const std::vector<int> cavs = world.live_cav_ids();
        for (int id : cavs) {
            if (!hiddens.count(id)) hiddens.emplace(id, Tensor2(1, cfg.agent_hidden));
            if (!vehicle_slot.count(id)) {
                for (int s = 0; s < cfg.n_max; ++s)
                    if (slot_vehicle[s] < 0) {
                        slot_vehicle[s] = id;
                        vehicle_slot[id] = s;
                        break;
                    }
            }
        }

        StepRecord rec;
        rec.obs.assign(static_cast<std::size_t>(cfg.n_max) * sim::kObsDim, 0.0);
        rec.slot_vehicle = slot_vehicle;
        rec.actions.assign(cfg.n_max, -1);
        rec.valid.assign(cfg.n_max, {});
        rec.topo.assign(static_cast<std::size_t>(cfg.n_max) * 4, 0.0);
        rec.attention.assign(cfg.n_max, {topo::kEmptySlot, topo::kEmptySlot});

        const auto tensor = topo::build_game_topology_tensor(world, ctx.angle_enc);
        rec.visit_reward =
            topo::visit_reward(ctx.visits, topo::topology_visit_key(tensor, ctx.key_enc));
        for (const auto& entry : tensor.entries) {
            auto it = vehicle_slot.find(entry.owner);
            if (it == vehicle_slot.end()) continue;
            const int s = it->second;
            for (int k = 0; k < 2; ++k) {
                rec.topo[static_cast<std::size_t>(s) * 4 + 2 * k] =
                    entry.descriptors[k].norm * topo::kNormScale;
                rec.topo[static_cast<std::size_t>(s) * 4 + 2 * k + 1] =
                    entry.descriptors[k].angle_code * code_scale;
                if (entry.attention[k] != topo::kEmptySlot) {
                    auto at = vehicle_slot.find(entry.attention[k]);
                    if (at != vehicle_slot.end()) rec.attention[s][k] = at->second;
                }
            }
        }

        std::map<int, sim::CavAction> actions;
        for (int id : cavs) {
            const sim::Vehicle* veh = world.find(id);
            const std::vector<double> obs = sim::build_observation(world, id);
            Tensor2 row(1, sim::kObsDim);
            row.data = obs;
            const Tensor2 q = agent_q_plain(ps, row, hiddens.at(id));
            std::array<double, sim::kActionCount> qa{};
            std::copy(q.data.begin(), q.data.end(), qa.begin());
            const auto mask = sim::action_mask(veh->lane, world.cfg.lane_count);
            const int a = select_action(qa, mask, eps, policy_rng);
            actions[id] = sim::CavAction::from_index(a);
            auto it = vehicle_slot.find(id);
            if (it != vehicle_slot.end()) {
                const int s = it->second;
                std::copy(obs.begin(), obs.end(),
                          rec.obs.begin() + static_cast<std::size_t>(s) * sim::kObsDim);
                rec.actions[s] = a;
                rec.valid[s] = mask;
            }
        }

        const sim::StepReport report = sim::step_world(world, actions);
        std::map<int, int> lane_deltas;
        for (const auto& lc : report.lane_changes)
            if (actions.count(lc.id)) lane_deltas[lc.id] = lc.to_lane - lc.from_lane;
        const auto breakdown = reward::environmental_reward(world, report, rcfg, lane_deltas);

        rec.env_reward = breakdown.env_total;
        rec.terminal = t == world.cfg.episode_length - 1;
        out.env_return += breakdown.env_total;
        out.shaped_return += breakdown.env_total + rcfg.beta1 * rec.visit_reward;
        out.collisions += static_cast<int>(report.collided.size());
        for (const auto& a : report.arrivals) {
            ++out.arrivals;
            if (a.success) ++out.successes;
        }
        out.removals += static_cast<int>(report.removals.size());

        auto release = [&](int id) {
            hiddens.erase(id);
            auto it = vehicle_slot.find(id);
            if (it != vehicle_slot.end()) {
                slot_vehicle[it->second] = -1;
                vehicle_slot.erase(it);
            }
        };
        for (const auto& a : report.arrivals) release(a.id);
        for (const auto& r : report.removals) release(r.id);

        if (out_trace) {
            trace::TraceStep ts;
            ts.step = t;
            for (const auto& veh : world.vehicles)
                ts.vehicles.push_back({veh.id, veh.kind == sim::VehicleKind::CAV, veh.lane,
                                       veh.x, veh.v, veh.a});
            ts.collided = report.collided;
            ts.arrivals = report.arrivals;
            ts.removals = report.removals;
            ts.lane_changes = report.lane_changes;
            ts.rewards = breakdown;
            ts.rewards.visit_term = rec.visit_reward;
            ts.rewards.grand_total = breakdown.env_total + rcfg.beta1 * rec.visit_reward;
            ts.topo_sample = tensor.flatten_scaled();
            out_trace->steps.push_back(std::move(ts));
        }

        out.record.steps.push_back(std::move(rec));
        ++ctx.env_steps;
    }
    return out;
}

// Assembles a topology-network batch of random live agent-steps that have a
// next-step target.
inline toponet::TopoBatch sample_topo_batch(const ReplayBuffer& buf, const TrainConfig& c,
                                            const toponet::TopoNetConfig& tc, std::size_t rows,
                                            std::mt19937_64& rng) {
    std::vector<std::array<int, 3>> picks;  // episode, t, slot
    const auto n_eps = buf.episodes.size();
    if (n_eps == 0) throw std::runtime_error("buffer warm-up");
    std::uniform_int_distribution<std::size_t> ed(0, n_eps - 1);
    for (int attempt = 0; attempt < 50 * static_cast<int>(rows) && picks.size() < rows;
         ++attempt) {
        const auto e = ed(rng);
        const auto& ep = buf.episodes[e];
        if (ep.steps.size() < 2) continue;
        std::uniform_int_distribution<std::size_t> td(0, ep.steps.size() - 2);
        const auto t = static_cast<int>(td(rng));
        std::uniform_int_distribution<int> sd(0, c.n_max - 1);
        const int s = sd(rng);
        const int vid = ep.steps[t].slot_vehicle[s];
        if (vid < 0 || ep.steps[t + 1].slot_vehicle[s] != vid) continue;
        picks.push_back({static_cast<int>(e), t, s});
    }
    if (picks.empty()) throw std::runtime_error("buffer warm-up");

    toponet::TopoBatch b;
    const std::size_t B = picks.size();
    const auto wc = static_cast<std::size_t>(tc.window_cols());
    b.windows_self = Tensor2(B, wc);
    b.windows_max = Tensor2(B, wc);
    b.windows_min = Tensor2(B, wc);
    b.slot_empty.assign(B, {true, true});
    b.targets = Tensor2(B, 4);
    for (std::size_t i = 0; i < B; ++i) {
        const auto [e, t, s] = picks[i];
        const EpisodeRecord& ep = buf.episodes[e];
        write_window(ep, s, t, tc, &b.windows_self.data[i * wc]);
        for (int k = 0; k < 2; ++k) {
            const int as = ep.steps[t].attention[s][k];
            if (as < 0) continue;
            b.slot_empty[i][k] = false;
            write_window(ep, as, t, tc,
                         k == 0 ? &b.windows_max.data[i * wc] : &b.windows_min.data[i * wc]);
        }
        for (int j = 0; j < 4; ++j)
            b.targets.at(i, j) = ep.steps[t + 1].topo[static_cast<std::size_t>(s) * 4 + j];
    }
    return b;
}

// Per-(episode, step) variational-information reward for a batch of episodes,
// recomputed with the current topology network.
inline std::vector<std::vector<double>> compute_topo_rewards(
    const std::vector<const EpisodeRecord*>& eps, const TrainConfig& c,
    const toponet::TopoNetConfig& tc, const ParamStore& topo_ps, std::mt19937_64& rng) {
    struct AgentRef {
        int e, t, slot;
        std::array<int, 3> enc_row;  // index into the window matrix, -1 = prior
    };
    std::vector<AgentRef> agents;
    std::vector<std::array<int, 3>> window_keys;  // episode, t, slot to encode
    const auto wc = static_cast<std::size_t>(tc.window_cols());
    for (std::size_t e = 0; e < eps.size(); ++e) {
        const auto& steps = eps[e]->steps;
        for (std::size_t t = 0; t + 1 < steps.size(); ++t)
            for (int s = 0; s < c.n_max; ++s) {
                const int vid = steps[t].slot_vehicle[s];
                if (vid < 0 || steps[t + 1].slot_vehicle[s] != vid) continue;
                AgentRef ref{static_cast<int>(e), static_cast<int>(t), s, {-1, -1, -1}};
                ref.enc_row[0] = static_cast<int>(window_keys.size());
                window_keys.push_back({static_cast<int>(e), static_cast<int>(t), s});
                for (int k = 0; k < 2; ++k) {
                    const int as = steps[t].attention[s][k];
                    if (as < 0) continue;
                    ref.enc_row[k + 1] = static_cast<int>(window_keys.size());
                    window_keys.push_back({static_cast<int>(e), static_cast<int>(t), as});
                }
                agents.push_back(ref);
            }
    }
    std::vector<std::vector<double>> rewards(eps.size());
    for (std::size_t e = 0; e < eps.size(); ++e) rewards[e].assign(eps[e]->steps.size(), 0.0);
    if (agents.empty()) return rewards;

    Tensor2 windows(window_keys.size(), wc);
    for (std::size_t i = 0; i < window_keys.size(); ++i) {
        const auto [e, t, s] = window_keys[i];
        write_window(*eps[e], s, t, tc, &windows.data[i * wc]);
    }
    const Tensor2 latents = toponet::encode_mean(topo_ps, tc, windows);

    const std::size_t N = agents.size();
    const auto zc = static_cast<std::size_t>(tc.latent_dim);
    Tensor2 full(N, 3 * zc);
    Tensor2 targets(N, 4);
    std::normal_distribution<double> prior(0.0, 1.0);
    for (std::size_t i = 0; i < N; ++i) {
        const auto& a = agents[i];
        for (int slot = 0; slot < 3; ++slot)
            for (std::size_t j = 0; j < zc; ++j)
                full.at(i, slot * zc + j) = a.enc_row[slot] >= 0
                                                ? latents.at(a.enc_row[slot], j)
                                                : prior(rng);
        const auto& next = eps[a.e]->steps[a.t + 1];
        for (int j = 0; j < 4; ++j)
            targets.at(i, j) = next.topo[static_cast<std::size_t>(a.slot) * 4 + j];
    }
    const std::vector<double> ll_full =
        toponet::loglik_rows(toponet::predict_plain(topo_ps, tc, full), targets);

    std::vector<double> mi_sum(N, 0.0);
    for (int slot = 0; slot < 3; ++slot) {
        std::vector<double> partial(N, 0.0);
        for (int k = 0; k < tc.mc_samples; ++k) {
            Tensor2 mixed = full;
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < zc; ++j)
                    mixed.at(i, slot * zc + j) = prior(rng);
            const std::vector<double> ll =
                toponet::loglik_rows(toponet::predict_plain(topo_ps, tc, mixed), targets);
            for (std::size_t i = 0; i < N; ++i) partial[i] += ll[i];
        }
        for (std::size_t i = 0; i < N; ++i)
            mi_sum[i] += ll_full[i] - partial[i] / tc.mc_samples;
    }

    std::vector<std::vector<int>> counts(eps.size());
    for (std::size_t e = 0; e < eps.size(); ++e) counts[e].assign(eps[e]->steps.size(), 0);
    for (std::size_t i = 0; i < N; ++i) {
        const auto& a = agents[i];
        rewards[a.e][a.t] += mi_sum[i] / 3.0;
        ++counts[a.e][a.t];
    }
    for (std::size_t e = 0; e < eps.size(); ++e)
        for (std::size_t t = 0; t < rewards[e].size(); ++t)
            if (counts[e][t] > 0) rewards[e][t] /= counts[e][t];
    return rewards;
}

class Trainer {
public:
    TrainConfig cfg;
    toponet::TopoNetConfig topo_cfg;
    reward::RewardConfig rcfg;
    bool tpe = true;  // topology-enhanced intrinsic rewards on/off
    long train_steps = 0;

    // One TD training step on 32 sampled episodes. Returns the mean TD loss,
    // or nothing while the buffer is still warming up.
    std::optional<double> td_train_step(const ReplayBuffer& buffer, ParamStore& ps,
                                        ParamStore& targets, const ParamStore& topo_ps,
                                        std::mt19937_64& rng) {
        const int B = cfg.batch_episodes;
        if (static_cast<int>(buffer.episodes.size()) < B) return std::nullopt;
        std::vector<std::size_t> order(buffer.episodes.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<const EpisodeRecord*> eps;
        for (int i = 0; i < B; ++i) eps.push_back(&buffer.episodes[order[i]]);

        std::size_t T = 0;
        for (const auto* e : eps) T = std::max(T, e->steps.size());
        const auto n = static_cast<std::size_t>(cfg.n_max);
        const std::size_t R = static_cast<std::size_t>(B) * n;
        const auto S = static_cast<std::size_t>(cfg.mixing_state_dim());

        std::vector<std::vector<double>> r_topo(eps.size());
        if (tpe) {
            r_topo = compute_topo_rewards(eps, cfg, topo_cfg, topo_ps, rng);
        } else {
            for (std::size_t e = 0; e < eps.size(); ++e)
                r_topo[e].assign(eps[e]->steps.size(), 0.0);
        }

        // Per-timestep constants.
        std::vector<Tensor2> X(T), onehot(T), keep(T), state(T), w(T), y(T);
        for (std::size_t t = 0; t < T; ++t) {
            X[t] = Tensor2(R, sim::kObsDim);
            onehot[t] = Tensor2(R, sim::kActionCount);
            keep[t] = Tensor2(R, cfg.agent_hidden);
            state[t] = Tensor2(B, S);
            w[t] = Tensor2(B, 1);
            y[t] = Tensor2(B, 1);
        }
        long td_count = 0;
        for (int b = 0; b < B; ++b) {
            const auto& steps = eps[b]->steps;
            for (std::size_t t = 0; t < steps.size(); ++t) {
                const StepRecord& s = steps[t];
                bool any_live = false;
                for (std::size_t a = 0; a < n; ++a) {
                    const std::size_t r = static_cast<std::size_t>(b) * n + a;
                    const int vid = s.slot_vehicle[a];
                    if (vid < 0) continue;
                    any_live = true;
                    for (int j = 0; j < sim::kObsDim; ++j)
                        X[t].at(r, j) = s.obs[a * sim::kObsDim + j];
                    if (s.actions[a] >= 0) onehot[t].at(r, s.actions[a]) = 1.0;
                    const bool carry = t > 0 && steps[t - 1].slot_vehicle[a] == vid;
                    if (carry)
                        for (int j = 0; j < cfg.agent_hidden; ++j) keep[t].at(r, j) = 1.0;
                }
                fill_mixing_state_row(s, cfg, state[t], b);
                if (any_live) {
                    w[t].at(b, 0) = 1.0;
                    ++td_count;
                }
            }
        }
        if (td_count == 0) return std::nullopt;

        // Target pass: streaming per-slot max-Q, mixed with target parameters.
        std::vector<std::vector<double>> qtot_target(T);
        {
            Tensor2 h(R, cfg.agent_hidden);
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t i = 0; i < h.size(); ++i) h.data[i] *= keep[t].data[i];
                const Tensor2 q = agent_q_plain(targets, X[t], h);
                Tensor2 qmax(static_cast<std::size_t>(B), n);
                for (int b = 0; b < B; ++b) {
                    const auto& steps = eps[b]->steps;
                    if (t >= steps.size()) continue;
                    for (std::size_t a = 0; a < n; ++a) {
                        if (steps[t].slot_vehicle[a] < 0) continue;
                        const std::size_t r = static_cast<std::size_t>(b) * n + a;
                        double best = 0.0;
                        bool got = false;
                        for (int j = 0; j < sim::kActionCount; ++j) {
                            if (!steps[t].valid[a][j]) continue;
                            if (!got || q.at(r, j) > best) {
                                best = q.at(r, j);
                                got = true;
                            }
                        }
                        if (got) qmax.at(b, a) = best;
                    }
                }
                qtot_target[t] = mix_plain(targets, cfg, qmax, state[t]);
            }
        }

        for (int b = 0; b < B; ++b) {
            const auto& steps = eps[b]->steps;
            for (std::size_t t = 0; t < steps.size(); ++t) {
                const StepRecord& s = steps[t];
                const double r_tot = s.env_reward + rcfg.beta1 * s.visit_reward +
                                     rcfg.beta2 * r_topo[b][t];
                double target = r_tot;
                if (!s.terminal && t + 1 < steps.size() && w[t + 1].at(b, 0) > 0.0)
                    target += cfg.gamma * qtot_target[t + 1][b];
                y[t].at(b, 0) = target;
            }
        }

        // Online unroll with truncated backprop between chunks.
        GradMap grads;
        Tensor2 ones(1, static_cast<std::size_t>(B));
        for (auto& v : ones.data) v = 1.0;
        Tensor2 h_carry(R, cfg.agent_hidden);
        double loss_sum = 0.0;
        for (std::size_t c0 = 0; c0 < T; c0 += cfg.bptt_chunk) {
            const std::size_t c1 = std::min(T, c0 + cfg.bptt_chunk);
            Graph g;
            Graph::Id h = g.value(h_carry);
            Graph::Id acc = g.value(Tensor2(1, 1));
            for (std::size_t t = c0; t < c1; ++t) {
                h = g.mul(h, g.value(keep[t]));
                Graph::Id q = agent_q_forward(g, ps, g.value(X[t]), h);
                Graph::Id q_taken =
                    g.reshape(g.rowsum(g.mul(q, g.value(onehot[t]))), B, n);
                Graph::Id qtot = mix(g, ps, cfg, q_taken, g.value(state[t]));
                Graph::Id d = g.sub(qtot, g.value(y[t]));
                Graph::Id sq = g.mul(g.mul(d, d), g.value(w[t]));
                acc = g.add(acc, g.matmul(g.value(ones), sq));
            }
            Graph::Id root = g.scale(acc, 1.0 / static_cast<double>(td_count));
            g.backward(root);
            g.export_param_grads(grads);
            loss_sum += g.val(acc).data[0];
            h_carry = g.val(h);
        }

        grads.clip_by_global_norm(cfg.grad_clip);
        ps.rmsprop_update(grads, cfg.opt);
        ++train_steps;
        if (train_steps % cfg.target_update_interval == 0) targets.copy_values_from(ps);
        return loss_sum / static_cast<double>(td_count);
    }
};

}  // namespace topomarl::qmix
