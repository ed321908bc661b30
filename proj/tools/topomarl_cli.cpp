// Command-line front end: train / evaluate / heatmap / replay.
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "topomarl/experiment.hpp"

namespace fs = std::filesystem;
using namespace topomarl;

namespace {

// Minimal glob over one directory component: "dir/prefix*suffix".
std::vector<std::string> expand_traces(const std::string& pattern) {
    if (pattern.find('*') == std::string::npos) return {pattern};
    const fs::path p(pattern);
    const fs::path dir = p.parent_path().empty() ? "." : p.parent_path();
    const std::string name = p.filename().string();
    const auto star = name.find('*');
    const std::string prefix = name.substr(0, star);
    const std::string suffix = name.substr(star + 1);
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string f = entry.path().filename().string();
        if (f.size() >= prefix.size() + suffix.size() && f.rfind(prefix, 0) == 0 &&
            f.compare(f.size() - suffix.size(), suffix.size(), suffix) == 0)
            out.push_back(entry.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

fs::path output_root() {
    if (const char* root = std::getenv(exp::kOutputRootEnv)) return fs::path(root);
    return fs::path(".");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed-traffic multi-agent RL laboratory"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, traces_pattern, trace_path;
    int episodes = 20;
    int stride = 4;

    auto* train = app.add_subcommand("train", "Run training for every configured seed");
    train->add_option("--config", config_path, "Experiment config JSON")->required();

    auto* evaluate = app.add_subcommand("evaluate", "Greedy rollouts from a checkpoint");
    evaluate->add_option("--config", config_path)->required();
    evaluate->add_option("--checkpoint", checkpoint_path)->required();
    evaluate->add_option("--episodes", episodes);

    auto* heatmap = app.add_subcommand("heatmap", "Topology diversity heatmap from traces");
    heatmap->add_option("--traces", traces_pattern, "Trace file or glob")->required();
    heatmap->add_option("--stride", stride);

    auto* replay = app.add_subcommand("replay", "Space-time CSV from a trace");
    replay->add_option("--trace", trace_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) {
            exp::ExperimentConfig cfg;
            try {
                cfg = exp::load_experiment_config(config_path);
            } catch (const std::runtime_error& e) {
                std::cerr << e.what() << '\n';
                return 2;
            }
            const auto runs = exp::cmd_train(cfg);
            for (const auto& r : runs) std::cout << r.dir.string() << '\n';
        } else if (evaluate->parsed()) {
            exp::ExperimentConfig cfg;
            try {
                cfg = exp::load_experiment_config(config_path);
            } catch (const std::runtime_error& e) {
                std::cerr << e.what() << '\n';
                return 2;
            }
            const auto report = exp::cmd_evaluate(cfg, checkpoint_path, episodes);
            std::cout << report.to_json().dump(2) << '\n';
        } else if (heatmap->parsed()) {
            if (stride < 1) {
                std::cerr << "config: stride must be positive\n";
                return 2;
            }
            const auto files = expand_traces(traces_pattern);
            if (files.empty()) throw std::runtime_error("no traces match " + traces_pattern);
            const auto grid = exp::cmd_heatmap(files, stride, output_root() / "heatmap");
            std::uint64_t mass = 0;
            for (const auto& row : grid)
                for (auto v : row) mass += v;
            std::cout << "samples: " << mass << '\n';
        } else if (replay->parsed()) {
            const auto rows = exp::cmd_replay(trace_path, output_root() / "replay");
            std::cout << "rows: " << rows.size() << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return 3;
    }
    return 0;
}
