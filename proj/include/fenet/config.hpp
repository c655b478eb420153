#pragma once

#include <cstdint>
#include <string>

#include "fenet/env.hpp"
#include "fenet/nets.hpp"

namespace fenet {

enum class TrainMode { imitation_rl, pretrained_rl, rl_only, imitation_only };
enum class Precision { f32, f64 };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

// Reference defaults: S=40, C=100, L=50, P=20, rho=0.01, alpha=1e-3,
// gamma=0.99, exploration 0.3, gradient-norm ceiling 1000, reward scale 100,
// policy-prior scale 10, 3 free nats, policy-KL floor 0.6; batch 25 for
// imitation_rl and 50 otherwise (materialized by resolve()).
struct TrainConfig {
    int seed_episodes = 40;    // S
    int collect_interval = 100; // C
    int batch = 0;             // B; 0 resolves by mode
    int chunk = 50;            // L
    int burn_in = 20;          // P
    int expert_episodes = 100; // N (reference scale: 10000)
    double target_rate = 0.01; // rho
    double lr = 1e-3;          // alpha
    double discount = 0.99;    // gamma
    double exploration_std = 0.3;
    double grad_norm_ceiling = 1000.0;
    double reward_scale = 100.0;
    double policy_prior_scale = 10.0;
    double free_nats = 3.0;
    double policy_kl_floor = 0.6;
    TrainMode mode = TrainMode::imitation_rl;
    int pretrain_iters = 0; // pretrained_rl only
    int total_iters = 30;
    int eval_every = 10;
    int eval_episodes = 10;
    int n_imagine_samples = 1;
    bool parallel = true;
    bool deterministic = true;
};

struct RunConfig {
    EnvSpec env;
    NetConfig net;
    TrainConfig train;
    Precision precision = Precision::f32;
    std::string expert_file;
    std::string output_dir = "runs/out";
    uint64_t seed = 0;

    // Materializes defaults (batch by mode, net dims from the env) and
    // validates every field. Must run before use.
    void resolve();
};

// Flat dotted key-value text format; '#' starts a comment. Unknown keys are
// rejected. set_key applies one "section.key=value" assignment.
RunConfig default_run_config();
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);
std::string serialize_config(const RunConfig& cfg);
void save_config_file(const RunConfig& cfg, const std::string& path);

} // namespace fenet
