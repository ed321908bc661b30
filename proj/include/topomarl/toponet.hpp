#pragma once

// Variational topology network: a recurrent trajectory encoder, a topology
// predictor fed by three latent slots (self, max-difference neighbor,
// min-difference neighbor), and a trajectory reconstruction decoder. Also
// hosts the conditional mutual-information estimate used as an intrinsic
// reward.

#include <array>
#include <random>
#include <stdexcept>
#include <vector>

#include "topomarl/graph.hpp"
#include "topomarl/nnops.hpp"
#include "topomarl/params.hpp"
#include "topomarl/sim.hpp"

namespace topomarl::toponet {

struct TopoNetConfig {
    int window = 10;       // trajectory length L fed to the encoder
    int latent_dim = 16;
    int enc_hidden = 32;
    int p1_hidden = 32;    // topology predictor hidden width
    int p2_hidden = 64;    // reconstruction decoder hidden width
    double lambda_gf = 0.1;
    double alpha = 5e-4;   // step size of the shrinkage update rule
    int mc_samples = 4;    // K prior draws for the partial-information term
    bool rmsprop = false;  // substitute RMSProp steps for the shrinkage rule
    int obs_dim = sim::kObsDim;

    int window_cols() const { return window * obs_dim; }
    int slot_cols() const { return 3 * latent_dim; }

    void validate() const {
        if (window < 1 || latent_dim < 1 || mc_samples < 1)
            throw std::runtime_error("invalid toponet config");
    }
};

inline void init_topo_params(ParamStore& ps, const TopoNetConfig& c, std::uint64_t seed) {
    std::uint64_t n = 0;
    auto w = [&](const std::string& name, std::size_t r, std::size_t cc) {
        ps.create(name, seeded_init(r, cc, InitScheme::UniformFanIn, seed + 1000 * ++n));
    };
    auto b = [&](const std::string& name, std::size_t cc) {
        ps.create(name, Tensor2(1, cc));
    };
    const auto h = static_cast<std::size_t>(c.enc_hidden);
    const auto z = static_cast<std::size_t>(c.latent_dim);
    w("enc/in.w", c.obs_dim, h);
    b("enc/in.b", h);
    for (const char* gate : {"wz", "wr", "wh"}) w(std::string("enc/gru.") + gate, h, h);
    for (const char* gate : {"uz", "ur", "uh"}) w(std::string("enc/gru.") + gate, h, h);
    for (const char* gate : {"bz", "br", "bh"}) b(std::string("enc/gru.") + gate, h);
    w("enc/mu.w", h, z);
    b("enc/mu.b", z);
    w("enc/lv.w", h, z);
    b("enc/lv.b", z);
    w("p1/l1.w", 3 * z, c.p1_hidden);
    b("p1/l1.b", c.p1_hidden);
    w("p1/out.w", c.p1_hidden, 4);
    b("p1/out.b", 4);
    w("p2/l1.w", z, c.p2_hidden);
    b("p2/l1.b", c.p2_hidden);
    w("p2/out.w", c.p2_hidden, c.window_cols());
    b("p2/out.b", c.window_cols());
}

inline Tensor2 standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Tensor2 t(rows, cols);
    for (auto& v : t.data) v = n(rng);
    return t;
}

struct EncoderHeads {
    Graph::Id mean;
    Graph::Id logvar;
};

// Recurrent pass over a batch of flattened windows (B x L*obs_dim). Rows for
// agents younger than L steps are expected zero-padded at the front.
inline EncoderHeads encode_window(Graph& g, const ParamStore& ps, const TopoNetConfig& c,
                                  Graph::Id windows) {
    // Copy the shape: node storage may reallocate as the tape grows.
    const std::size_t rows = g.val(windows).rows;
    if (g.val(windows).cols != static_cast<std::size_t>(c.window_cols()))
        throw std::runtime_error("shape error: encoder window");
    Graph::Id w_in = g.param(ps, "enc/in.w");
    Graph::Id b_in = g.param(ps, "enc/in.b");
    auto gru = g.gru_params(ps, "enc/gru");
    Graph::Id h = g.value(Tensor2(rows, c.enc_hidden));
    for (int t = 0; t < c.window; ++t) {
        Graph::Id x = g.slice_cols(windows, t * c.obs_dim, (t + 1) * c.obs_dim);
        h = g.gru_step(g.relu(g.affine(x, w_in, b_in)), h, gru);
    }
    return {g.affine(h, g.param(ps, "enc/mu.w"), g.param(ps, "enc/mu.b")),
            g.affine(h, g.param(ps, "enc/lv.w"), g.param(ps, "enc/lv.b"))};
}

// z = mean + exp(logvar/2) * noise; pass a zero noise tensor for eval mode.
inline Graph::Id reparameterize(Graph& g, const EncoderHeads& heads, const Tensor2& noise) {
    return g.add(heads.mean, g.mul(g.exp_(g.scale(heads.logvar, 0.5)), g.value(noise)));
}

// Latent slots (B x 3*latent_dim) -> predicted scaled topology 4-vector rows.
inline Graph::Id predict_topology(Graph& g, const ParamStore& ps, const TopoNetConfig& c,
                                  Graph::Id latents) {
    if (g.val(latents).cols != static_cast<std::size_t>(c.slot_cols()))
        throw std::runtime_error("shape error: predictor input");
    Graph::Id h = g.elu(g.affine(latents, g.param(ps, "p1/l1.w"), g.param(ps, "p1/l1.b")));
    return g.affine(h, g.param(ps, "p1/out.w"), g.param(ps, "p1/out.b"));
}

// Latent (B x latent_dim) -> flattened reconstructed window (B x L*obs_dim).
inline Graph::Id reconstruct_trajectory(Graph& g, const ParamStore& ps, const TopoNetConfig& c,
                                        Graph::Id z) {
    if (g.val(z).cols != static_cast<std::size_t>(c.latent_dim))
        throw std::runtime_error("shape error: decoder input");
    Graph::Id h = g.relu(g.affine(z, g.param(ps, "p2/l1.w"), g.param(ps, "p2/l1.b")));
    return g.affine(h, g.param(ps, "p2/out.w"), g.param(ps, "p2/out.b"));
}

// One training row per agent-step: the agent's own window, its two attention
// neighbors' windows (zero rows when a slot is empty), and the next-step
// scaled topology target.
struct TopoBatch {
    Tensor2 windows_self;
    Tensor2 windows_max;
    Tensor2 windows_min;
    std::vector<std::array<bool, 2>> slot_empty;  // (max, min) per row
    Tensor2 targets;  // B x 4
};

inline void check_batch(const TopoBatch& b, const TopoNetConfig& c) {
    const std::size_t B = b.windows_self.rows;
    const auto wc = static_cast<std::size_t>(c.window_cols());
    if (B == 0 || b.targets.rows != B || b.targets.cols != 4 || b.slot_empty.size() != B ||
        b.windows_max.rows != B || b.windows_min.rows != B || b.windows_self.cols != wc ||
        b.windows_max.cols != wc || b.windows_min.cols != wc)
        throw std::runtime_error("incomplete batch");
}

struct TopoLossIds {
    Graph::Id l_tp;
    Graph::Id l_rg;
    Graph::Id l_kl;
};

// Builds the three losses on one tape. `sample` turns on reparameterized
// latents; eval mode uses posterior means. Empty neighbor slots are replaced
// by prior draws, so no gradient flows through them.
inline TopoLossIds build_topo_losses(Graph& g, const ParamStore& ps, const TopoNetConfig& c,
                                     const TopoBatch& b, std::mt19937_64& rng, bool sample) {
    check_batch(b, c);
    const std::size_t B = b.windows_self.rows;
    const auto z_cols = static_cast<std::size_t>(c.latent_dim);
    auto noise = [&] {
        return sample ? standard_normal(B, z_cols, rng) : Tensor2(B, z_cols);
    };

    auto heads_self = encode_window(g, ps, c, g.value(b.windows_self));
    Graph::Id z_self = reparameterize(g, heads_self, noise());
    Graph::Id l_kl = g.kl_std_normal(heads_self.mean, heads_self.logvar);
    Graph::Id l_rg = g.mse(reconstruct_trajectory(g, ps, c, z_self),
                           g.value(b.windows_self));

    auto neighbor = [&](const Tensor2& windows, int slot) {
        auto heads = encode_window(g, ps, c, g.value(windows));
        Graph::Id z = reparameterize(g, heads, noise());
        Tensor2 keep(B, z_cols);
        Tensor2 prior(B, z_cols);
        std::normal_distribution<double> n(0.0, 1.0);
        for (std::size_t i = 0; i < B; ++i) {
            const bool empty = b.slot_empty[i][slot];
            for (std::size_t j = 0; j < z_cols; ++j) {
                keep.at(i, j) = empty ? 0.0 : 1.0;
                const double draw = n(rng);
                if (empty) prior.at(i, j) = draw;
            }
        }
        return g.add(g.mul(z, g.value(keep)), g.value(prior));
    };
    Graph::Id z_max = neighbor(b.windows_max, 0);
    Graph::Id z_min = neighbor(b.windows_min, 1);

    Graph::Id pred = predict_topology(g, ps, c, g.concat_cols({z_self, z_max, z_min}));
    Graph::Id l_tp = g.mse(g.value(b.targets), pred);
    return {l_tp, l_rg, l_kl};
}

struct LossReport {
    double tp = 0.0;
    double rg = 0.0;
    double kl = 0.0;
};

inline LossReport topo_losses(const ParamStore& ps, const TopoNetConfig& c, const TopoBatch& b,
                              std::mt19937_64& rng, bool sample = false) {
    Graph g;
    auto ids = build_topo_losses(g, ps, c, b, rng, sample);
    return {g.val(ids.l_tp).data[0], g.val(ids.l_rg).data[0], g.val(ids.l_kl).data[0]};
}

// Per-group gradients: the encoder follows grad(L_TP + L_KL - lambda*L_RG),
// the topology predictor grad(L_TP), the reconstruction decoder grad(L_RG).
inline LossReport topo_gradients(const ParamStore& ps, const TopoNetConfig& c,
                                 const TopoBatch& b, std::mt19937_64& rng, bool sample,
                                 GradMap& grads) {
    Graph g;
    auto ids = build_topo_losses(g, ps, c, b, rng, sample);
    Graph::Id j = g.add(g.add(ids.l_tp, ids.l_kl), g.scale(ids.l_rg, -c.lambda_gf));
    g.backward(j);
    GradMap main_grads;
    g.export_param_grads(main_grads);
    // Second pass: the reconstruction decoder descends L_RG itself, which the
    // combined objective carries with the wrong sign for that group.
    g.zero_grads();
    g.backward(ids.l_rg);
    GradMap rg_grads;
    g.export_param_grads(rg_grads);

    for (const auto& [name, t] : main_grads.g)
        if (name.rfind("enc/", 0) == 0 || name.rfind("p1/", 0) == 0) grads.accumulate(name, t);
    for (const auto& [name, t] : rg_grads.g)
        if (name.rfind("p2/", 0) == 0) grads.accumulate(name, t);
    return {g.val(ids.l_tp).data[0], g.val(ids.l_rg).data[0], g.val(ids.l_kl).data[0]};
}

// One optimization step on the per-group gradients. The default step is the
// shrinkage rule p <- (1-alpha)p - alpha*grad; the rmsprop flag swaps in
// RMSProp steps on the same gradients.
inline LossReport update_topo_net(ParamStore& ps, const TopoNetConfig& c, const TopoBatch& b,
                                  std::mt19937_64& rng) {
    GradMap grads;
    LossReport losses = topo_gradients(ps, c, b, rng, true, grads);
    if (c.rmsprop) {
        RmsPropConfig opt;
        ps.rmsprop_update(grads, opt);
    } else {
        ps.shrink_update(grads, c.alpha, "enc/");
        ps.shrink_update(grads, c.alpha, "p1/");
        ps.shrink_update(grads, c.alpha, "p2/");
    }
    return losses;
}

// Posterior means for a batch of windows, no sampling. Streaming forward with
// O(batch) memory, usable on large batches.
inline Tensor2 encode_mean(const ParamStore& ps, const TopoNetConfig& c, const Tensor2& windows) {
    if (windows.cols != static_cast<std::size_t>(c.window_cols()))
        throw std::runtime_error("shape error: encoder window");
    const std::size_t B = windows.rows;
    auto gru = GruRefs::from(ps, "enc/gru");
    Tensor2 h(B, c.enc_hidden);
    Tensor2 x(B, c.obs_dim);
    for (int t = 0; t < c.window; ++t) {
        for (std::size_t i = 0; i < B; ++i)
            for (int j = 0; j < c.obs_dim; ++j) x.at(i, j) = windows.at(i, t * c.obs_dim + j);
        Tensor2 e = affine_plain(x, ps.get("enc/in.w"), ps.get("enc/in.b"));
        relu_inplace(e);
        h = gru_step_plain(e, h, gru);
    }
    return affine_plain(h, ps.get("enc/mu.w"), ps.get("enc/mu.b"));
}

// Tape-free topology predictor forward on latent slot rows (B x 3*latent).
inline Tensor2 predict_plain(const ParamStore& ps, const TopoNetConfig& c, const Tensor2& latents) {
    if (latents.cols != static_cast<std::size_t>(c.slot_cols()))
        throw std::runtime_error("shape error: predictor input");
    Tensor2 h = affine_plain(latents, ps.get("p1/l1.w"), ps.get("p1/l1.b"));
    elu_inplace(h);
    return affine_plain(h, ps.get("p1/out.w"), ps.get("p1/out.b"));
}

// Per-row unit-variance Gaussian log-likelihood (constant dropped).
inline std::vector<double> loglik_rows(const Tensor2& mean, const Tensor2& target) {
    if (!mean.same_shape(target)) throw std::runtime_error("shape error: gauss_loglik");
    std::vector<double> out(mean.rows, 0.0);
    for (std::size_t i = 0; i < mean.rows; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < mean.cols; ++j) {
            const double d = target.at(i, j) - mean.at(i, j);
            acc += d * d;
        }
        out[i] = -0.5 * acc;
    }
    return out;
}

inline double gauss_loglik_value(const ParamStore& ps, const TopoNetConfig& c,
                                 const Tensor2& z_self, const Tensor2& z_max,
                                 const Tensor2& z_min, const Tensor2& target) {
    Graph g;
    Graph::Id latents =
        g.concat_cols({g.value(z_self), g.value(z_max), g.value(z_min)});
    return g.val(g.gauss_loglik(predict_topology(g, ps, c, latents), g.value(target))).data[0];
}

// Variational conditional mutual information between the target topology and
// latent slot `slot` (0 self, 1 max-diff, 2 min-diff), given the other slots:
// full-information log-likelihood minus the mean log-likelihood with that
// slot resampled from the prior K times. Additive likelihood constants cancel.
inline double estimate_conditional_mi(const ParamStore& ps, const TopoNetConfig& c,
                                      const Tensor2& z_self, const Tensor2& z_max,
                                      const Tensor2& z_min, const Tensor2& target, int slot,
                                      std::mt19937_64& rng) {
    if (slot < 0 || slot > 2) throw std::runtime_error("invalid slot");
    const double full = gauss_loglik_value(ps, c, z_self, z_max, z_min, target);
    double partial = 0.0;
    for (int k = 0; k < c.mc_samples; ++k) {
        Tensor2 prior = standard_normal(z_self.rows, z_self.cols, rng);
        partial += gauss_loglik_value(ps, c, slot == 0 ? prior : z_self,
                                      slot == 1 ? prior : z_max,
                                      slot == 2 ? prior : z_min, target);
    }
    return full - partial / c.mc_samples;
}

// One agent's materials for the intrinsic reward: latents for its attention
// slots (empty slots already carry prior samples) and its topology target.
struct AgentMi {
    std::array<Tensor2, 3> z;  // each 1 x latent_dim: self, max, min
    Tensor2 target;            // 1 x 4
};

// r_topo = mean over agents and their three slots of the MI estimate.
inline double topo_reward(const ParamStore& ps, const TopoNetConfig& c,
                          const std::vector<AgentMi>& agents, std::mt19937_64& rng) {
    if (agents.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& a : agents)
        for (int slot = 0; slot < 3; ++slot)
            acc += estimate_conditional_mi(ps, c, a.z[0], a.z[1], a.z[2], a.target, slot, rng);
    return acc / (3.0 * static_cast<double>(agents.size()));
}

}  // namespace topomarl::toponet
