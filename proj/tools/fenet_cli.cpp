#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fenet/trainer.hpp"

namespace fs = std::filesystem;
using namespace fenet;

namespace {

RunConfig load_base_config(const std::string& config_path) {
    if (config_path.empty()) return default_run_config();
    return load_config_file(config_path);
}

int cmd_gen_expert(const std::string& config_path, const std::string& quality,
                   std::optional<int> n, std::optional<uint64_t> seed,
                   const std::string& out, bool force) {
    RunConfig cfg = load_base_config(config_path);
    if (seed) cfg.seed = *seed;
    std::string path = out.empty() ? cfg.expert_file : out;
    if (path.empty())
        throw ConfigError("gen-expert needs --out or paths.expert_file");
    ExpertQuality q = ExpertQuality::optimal;
    if (quality == "suboptimal") q = ExpertQuality::suboptimal;
    else if (quality != "optimal")
        throw ConfigError("--quality must be optimal or suboptimal");
    int episodes = n.value_or(cfg.train.expert_episodes);
    cfg.env.validate();
    ExpertStats st = gen_expert_dataset(cfg.env, q, episodes, cfg.seed, path, force);
    std::printf("wrote %d %s expert episodes to %s\n", st.episodes, quality.c_str(),
                path.c_str());
    std::printf("mean return %.3f (std %.3f)\n", st.mean_return, st.std_return);
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& mode, bool sparse,
              std::optional<uint64_t> seed, const std::string& out, bool force) {
    RunConfig cfg = load_base_config(config_path);
    if (!mode.empty()) cfg.train.mode = train_mode_from_string(mode);
    if (sparse) cfg.env.reward_mode = RewardMode::sparse;
    if (seed) cfg.seed = *seed;
    if (!out.empty()) cfg.output_dir = out;
    cfg.resolve();
    if (fs::exists(fs::path(cfg.output_dir) / "metrics.csv") && !force)
        throw ConfigError("output dir already holds a run: " + cfg.output_dir +
                          " (use --force)");
    run_training(cfg);
    std::printf("run complete: %s\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint, int n, std::optional<uint64_t> seed) {
    auto [mean, sd] = eval_checkpoint(checkpoint, n, seed);
    std::printf("eval episodes %d: mean return %.3f (std %.3f)\n", n, mean, sd);
    return 0;
}

int cmd_export(const std::string& metrics, const std::string& out) {
    auto evals = validate_and_collect_evals(metrics);
    std::string path = out.empty() ? metrics + ".tidy.csv" : out;
    write_tidy_csv(path, evals);
    std::printf("wrote %zu evaluation rows to %s\n", evals.size(), path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"FENet agent: training, expert generation, evaluation, export"};
    app.require_subcommand(1);

    std::string config_path, mode, quality = "optimal", out, checkpoint, metrics;
    std::optional<uint64_t> seed;
    std::optional<int> n_episodes;
    bool sparse = false, force = false;
    int eval_n = 10;

    auto* gen = app.add_subcommand("gen-expert", "generate a scripted expert dataset");
    gen->add_option("--config", config_path, "config file");
    gen->add_option("--quality", quality, "optimal | suboptimal");
    gen->add_option("--n", n_episodes, "number of episodes");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--out", out, "output episode file");
    gen->add_flag("--force", force, "overwrite an existing file");

    auto* train = app.add_subcommand("train", "train the agent");
    train->add_option("--config", config_path, "config file");
    train->add_option("--mode", mode,
                      "imitation_rl | pretrained_rl | rl_only | imitation_only");
    train->add_flag("--sparse", sparse, "switch the env to sparse rewards");
    train->add_option("--seed", seed, "run seed");
    train->add_option("--out", out, "output directory");
    train->add_flag("--force", force, "allow reuse of an output directory");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("checkpoint", checkpoint, "checkpoint file")->required();
    ev->add_option("--n", eval_n, "evaluation episodes");
    ev->add_option("--seed", seed, "evaluation seed override");

    auto* ex = app.add_subcommand("export", "validate metrics and export tidy CSV");
    ex->add_option("metrics", metrics, "metrics.csv from a run")->required();
    ex->add_option("--out", out, "tidy output path");

    try {
        app.parse(argc, argv);
        if (gen->parsed())
            return cmd_gen_expert(config_path, quality, n_episodes, seed, out, force);
        if (train->parsed())
            return cmd_train(config_path, mode, sparse, seed, out, force);
        if (ev->parsed()) return cmd_eval(checkpoint, eval_n, seed);
        if (ex->parsed()) return cmd_export(metrics, out);
        return 1;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
