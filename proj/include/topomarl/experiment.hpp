#pragma once

// Experiment orchestration: training runs with checkpoints and CSV logs,
// greedy evaluation with persisted traces and metrics, heatmap assembly from
// trace files, and space-time replay export.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "topomarl/checkpoint.hpp"
#include "topomarl/config.hpp"
#include "topomarl/eval.hpp"
#include "topomarl/qmix.hpp"
#include "topomarl/trace.hpp"

namespace topomarl::exp {

namespace fs = std::filesystem;

inline constexpr const char* kOutputRootEnv = "TOPOMARL_OUT";
inline constexpr const char* kVersionTag = "topomarl-1.0";
inline constexpr std::uint64_t kHeatmapHashSeed = 77;

// Output root override for sandboxed runs; the configured directory nests
// under it when the variable is set.
inline fs::path resolve_output_dir(const ExperimentConfig& c) {
    if (const char* root = std::getenv(kOutputRootEnv)) return fs::path(root) / c.output_dir;
    return fs::path(c.output_dir);
}

inline void write_manifest(const fs::path& dir, const ExperimentConfig& c,
                           std::uint64_t seed) {
    json m;
    m["config"] = serialize_experiment_config(c);
    m["config_hash"] = config_hash(c);
    m["seed"] = seed;
    m["version"] = kVersionTag;
    std::ofstream os(dir / "manifest.json");
    if (!os) throw std::runtime_error("cannot write manifest");
    os << m.dump(2) << '\n';
}

struct SeedRunResult {
    fs::path dir;
    std::vector<double> env_returns;  // one per episode
};

// One training run for one seed: rollouts, TD updates, topology-net updates,
// periodic checkpoints, and CSV logs, all under <output>/seed_<s>/.
inline SeedRunResult train_one_seed(const ExperimentConfig& c, std::uint64_t seed) {
    const fs::path dir = resolve_output_dir(c) / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    write_manifest(dir, c, seed);

    std::ofstream returns_csv(dir / "returns.csv");
    returns_csv << "episode,env_return,shaped_return,epsilon,collisions,arrivals\n";
    std::ofstream td_csv(dir / "td_loss.csv");
    td_csv << "train_step,loss\n";
    std::ofstream topo_csv(dir / "topo_loss.csv");
    topo_csv << "train_step,tp,rg,kl\n";

    ParamStore ps, targets, topo_ps;
    qmix::init_qmix_params(ps, c.train, seed);
    qmix::init_qmix_params(targets, c.train, seed);
    toponet::init_topo_params(topo_ps, c.toponet, seed + 500000);

    qmix::Trainer trainer;
    trainer.cfg = c.train;
    trainer.topo_cfg = c.toponet;
    trainer.rcfg = c.rewards;
    trainer.tpe = c.tpe;

    qmix::ReplayBuffer buffer;
    buffer.capacity = c.train.buffer_capacity;
    auto ctx = qmix::RolloutContext::make(seed + 900000);
    std::mt19937_64 policy_rng(seed + 1);
    std::mt19937_64 train_rng(seed + 2);

    SeedRunResult out;
    out.dir = dir;
    for (int ep = 0; ep < c.episodes; ++ep) {
        sim::ScenarioConfig scen = c.scenario;
        scen.seed = seed * 1000003ull + static_cast<std::uint64_t>(ep);
        sim::WorldState world(scen);
        const double eps_now = c.train.epsilon(ctx.env_steps);
        auto res = qmix::run_episode(world, ps, c.train, c.rewards, ctx, policy_rng);
        out.env_returns.push_back(res.env_return);
        returns_csv << ep << ',' << res.env_return << ',' << res.shaped_return << ','
                    << eps_now << ',' << res.collisions << ',' << res.arrivals << '\n';
        buffer.push(std::move(res.record));

        if ((ep + 1) % c.train.train_interval == 0) {
            if (auto loss = trainer.td_train_step(buffer, ps, targets, topo_ps, train_rng))
                td_csv << trainer.train_steps << ',' << *loss << '\n';
            if (c.tpe)
                for (int u = 0; u < c.topo_updates; ++u) {
                    try {
                        const auto b = qmix::sample_topo_batch(
                            buffer, c.train, c.toponet,
                            static_cast<std::size_t>(c.topo_batch_rows), train_rng);
                        const auto l = toponet::update_topo_net(topo_ps, c.toponet, b,
                                                                train_rng);
                        topo_csv << trainer.train_steps << ',' << l.tp << ',' << l.rg << ','
                                 << l.kl << '\n';
                    } catch (const std::runtime_error& e) {
                        if (std::string(e.what()) != "buffer warm-up") throw;
                        break;  // no usable agent-steps yet
                    }
                }
        }
        if ((ep + 1) % c.checkpoint_interval == 0)
            save_checkpoint(ps, (dir / ("qmix_" + std::to_string(ep + 1) + ".ckpt")).string());
    }
    save_checkpoint(ps, (dir / "qmix.ckpt").string());
    if (c.tpe) save_checkpoint(topo_ps, (dir / "topo.ckpt").string());

    std::ofstream visits_csv(dir / "visits.csv");
    visits_csv << "key,count\n";
    for (const auto& [key, count] : ctx.visits.table) visits_csv << key << ',' << count << '\n';
    return out;
}

inline std::vector<SeedRunResult> cmd_train(const ExperimentConfig& c) {
    std::vector<SeedRunResult> out;
    for (std::uint64_t seed : c.seeds) out.push_back(train_one_seed(c, seed));
    return out;
}

// Greedy rollouts from a checkpoint; writes per-episode JSONL traces,
// metrics.json, and a one-row metrics.csv.
inline eval::MetricsReport cmd_evaluate(const ExperimentConfig& c,
                                        const std::string& checkpoint, int episodes) {
    ParamStore ps;
    qmix::init_qmix_params(ps, c.train, 0);
    load_checkpoint(ps, checkpoint);

    const fs::path dir = resolve_output_dir(c) / "eval";
    fs::create_directories(dir / "traces");
    write_manifest(dir, c, c.seeds.front());

    const std::uint64_t seed = c.seeds.front();
    auto ctx = qmix::RolloutContext::make(seed + 900000);
    std::mt19937_64 policy_rng(seed + 7);
    std::vector<trace::EpisodeTrace> traces;
    for (int ep = 0; ep < episodes; ++ep) {
        sim::ScenarioConfig scen = c.scenario;
        scen.seed = seed * 2000003ull + static_cast<std::uint64_t>(ep);
        sim::WorldState world(scen);
        trace::EpisodeTrace tr;
        qmix::run_episode(world, ps, c.train, c.rewards, ctx, policy_rng, true, &tr);
        std::ofstream os(dir / "traces" / ("ep_" + std::to_string(ep) + ".jsonl"));
        trace::write_episode(os, tr);
        traces.push_back(std::move(tr));
    }
    const auto report =
        traces.empty() ? eval::MetricsReport{} : eval::compute_metrics(traces);
    std::ofstream js(dir / "metrics.json");
    js << report.to_json().dump(2) << '\n';
    std::ofstream cs(dir / "metrics.csv");
    cs << eval::MetricsReport::csv_header() << '\n';
    report.write_csv_row(cs);
    return report;
}

// Strided topology samples from trace files, binned into the 32x32 diversity
// grid; written as CSV and PGM next to the first trace's directory.
inline std::vector<std::vector<std::uint64_t>> cmd_heatmap(
    const std::vector<std::string>& trace_files, int stride, const fs::path& out_dir) {
    std::vector<std::vector<double>> samples;
    for (const auto& path : trace_files) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot open trace: " + path);
        const auto ep = trace::read_episode(is);
        for (std::size_t t = 0; t < ep.steps.size(); t += static_cast<std::size_t>(stride))
            if (!ep.steps[t].topo_sample.empty()) samples.push_back(ep.steps[t].topo_sample);
    }
    if (samples.empty()) throw std::runtime_error("no samples");
    const auto enc = topo::SimHashEncoder::rademacher(topo::kKeyBits, topo::kKeyInputDim,
                                                      kHeatmapHashSeed);
    const auto grid = eval::diversity_heatmap(samples, enc);
    fs::create_directories(out_dir);
    std::ofstream cs(out_dir / "heatmap.csv");
    eval::write_heatmap_csv(cs, grid);
    std::ofstream ps(out_dir / "heatmap.pgm", std::ios::binary);
    eval::write_heatmap_pgm(ps, grid);
    return grid;
}

inline std::vector<eval::SpacetimeRow> cmd_replay(const std::string& trace_file,
                                                  const fs::path& out_dir) {
    std::ifstream is(trace_file);
    if (!is) throw std::runtime_error("cannot open trace: " + trace_file);
    const auto ep = trace::read_episode(is);
    const auto rows = eval::spacetime_export(ep);
    fs::create_directories(out_dir);
    std::ofstream os(out_dir / "spacetime.csv");
    eval::write_spacetime_csv(os, rows);
    return rows;
}

}  // namespace topomarl::exp
