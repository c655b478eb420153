#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fenet/batch.hpp"
#include "fenet/checkpoint.hpp"
#include "fenet/config.hpp"
#include "fenet/env.hpp"
#include "fenet/free_energy.hpp"
#include "fenet/metrics.hpp"
#include "fenet/optimizer.hpp"
#include "fenet/replay.hpp"
#include "fenet/rssm.hpp"

namespace fenet {

namespace stream {
// fixed tags for independent deterministic random streams
inline constexpr uint64_t kInit = 0x11;
inline constexpr uint64_t kSeedEpisode = 0x22;
inline constexpr uint64_t kCollect = 0x33;
inline constexpr uint64_t kEval = 0x44;
inline constexpr uint64_t kSample = 0x55;
inline constexpr uint64_t kChunkNoise = 0x66;
inline constexpr uint64_t kExplore = 0x77;
} // namespace stream

template <typename T>
struct UpdateOutcome {
    LossBreakdown il;
    LossBreakdown rl;
    bool has_il = false;
    bool has_rl = false;
    double grad_norm_theta = 0, grad_norm_phi = 0, grad_norm_psi = 0,
           grad_norm_omega = 0;
};

// Algorithm skeleton: C gradient updates per iteration, then one environment
// episode into the agent dataset; expert chunks feed F_IL, agent chunks feed
// F_RL and the value regression; theta/phi/psi step on F_IL + F_RL, omega on
// the value loss, and the target network tracks omega by polyak averaging.
template <typename T>
class Trainer {
public:
    explicit Trainer(const RunConfig& cfg)
        : cfg_(cfg),
          nets_(cfg.net, mix_seed(cfg.seed, stream::kInit)),
          rssm_(nets_),
          env_(make_env(cfg.env)),
          scales_{cfg.train.reward_scale, cfg.train.policy_prior_scale,
                  cfg.train.free_nats,    cfg.train.policy_kl_floor,
                  cfg.train.discount,     cfg.train.n_imagine_samples},
          opt_theta_(cfg.train.lr),
          opt_phi_(cfg.train.lr),
          opt_psi_(cfg.train.lr),
          opt_omega_(cfg.train.lr) {
        model_params_ = nets_.group("theta");
        for (auto* p : nets_.group("phi")) model_params_.push_back(p);
        for (auto* p : nets_.group("psi")) model_params_.push_back(p);
        theta_ = nets_.group("theta");
        phi_ = nets_.group("phi");
        psi_ = nets_.group("psi");
        omega_ = nets_.group("omega");
    }

    FenetNets<T>& nets() { return nets_; }
    const RunConfig& config() const { return cfg_; }
    Dataset& agent_data() { return agent_; }
    const Dataset* expert_data() const { return has_expert_ ? &expert_ : nullptr; }
    int64_t env_steps() const { return env_steps_; }

    bool uses_il(long long iteration) const {
        switch (cfg_.train.mode) {
            case TrainMode::imitation_rl:
            case TrainMode::imitation_only: return true;
            case TrainMode::rl_only: return false;
            case TrainMode::pretrained_rl:
                return iteration <= cfg_.train.pretrain_iters;
        }
        return false;
    }

    bool uses_rl(long long iteration) const {
        switch (cfg_.train.mode) {
            case TrainMode::imitation_rl:
            case TrainMode::rl_only: return true;
            case TrainMode::imitation_only: return false;
            case TrainMode::pretrained_rl:
                return iteration > cfg_.train.pretrain_iters;
        }
        return false;
    }

    // Loads the expert dataset (except in rl_only mode) and seeds the agent
    // dataset with S uniform-random-policy episodes.
    void init() {
        if (initialized_) return;
        if (cfg_.train.mode != TrainMode::rl_only) {
            expert_.load_file(cfg_.expert_file);
            if (expert_.episode_length() != cfg_.env.episode_length ||
                expert_.episode(0).obs_dim != cfg_.env.obs_dim ||
                expert_.episode(0).action_dim != cfg_.env.action_dim)
                throw ConfigError("expert file does not match the env config");
            has_expert_ = true;
        }
        for (int i = 0; i < cfg_.train.seed_episodes; ++i)
            collect_random_episode(mix_seed(cfg_.seed, stream::kSeedEpisode + i));
        initialized_ = true;
    }

    UpdateOutcome<T> update_step(long long iteration) {
        const TrainConfig& tc = cfg_.train;
        const bool use_il = uses_il(iteration);
        const bool use_rl = uses_rl(iteration);
        const ExecMode mode = tc.parallel ? ExecMode::parallel : ExecMode::serial;
        ++update_counter_;

        Rng sample_rng(mix_seed(cfg_.seed, stream::kSample ^ (update_counter_ << 8)));
        std::vector<EpisodeChunk> il_chunks, rl_chunks;
        if (use_il)
            il_chunks = expert_chunks_for_il(sample_rng);
        if (use_rl)
            rl_chunks = agent_.sample_chunks(tc.batch, tc.chunk, tc.burn_in,
                                             sample_rng);

        struct ChunkOut {
            std::vector<std::vector<T>> model_grads;
            std::vector<std::vector<T>> value_grads;
            LossBreakdown bd;
        };

        UpdateOutcome<T> out;
        for (Param<T>* p : model_params_) p->zero_grad();
        for (Param<T>* p : omega_) p->zero_grad();

        auto extract = [&](ParamBind<T>& bind,
                           const std::vector<Param<T>*>& params) {
            std::vector<std::vector<T>> grads(params.size());
            std::vector<T> tmp;
            for (size_t i = 0; i < params.size(); ++i) {
                bind.grad_of(*params[i], tmp);
                grads[i] = tmp;
            }
            return grads;
        };

        if (use_il) {
            auto outs = map_chunks<ChunkOut>(
                static_cast<int>(il_chunks.size()), pool_, mode,
                [&](int i, Tape<T>& tape) {
                    ParamBind<T> bind(tape);
                    NoiseSource<T> noise(chunk_noise_seed(0, i));
                    auto loss = build_loss_il(tape, bind, rssm_, il_chunks[i],
                                              scales_, noise);
                    tape.backward(loss.total);
                    ChunkOut o;
                    o.model_grads = extract(bind, model_params_);
                    o.bd = loss.breakdown;
                    return o;
                });
            reduce_grads(outs, il_chunks.size(), &ChunkOut::model_grads,
                         model_params_);
            for (const auto& o : outs) out.il.accumulate(o.bd);
            out.il.scale_by(1.0 / static_cast<double>(outs.size()));
            out.has_il = true;
        }
        if (use_rl) {
            auto outs = map_chunks<ChunkOut>(
                static_cast<int>(rl_chunks.size()), pool_, mode,
                [&](int i, Tape<T>& tape) {
                    ParamBind<T> bind(tape);
                    NoiseSource<T> noise(chunk_noise_seed(1, i));
                    auto loss = build_loss_rl(tape, bind, rssm_, rl_chunks[i],
                                              scales_, noise);
                    ChunkOut o;
                    // likelihood terms train the model, the expected free
                    // energy trains the acting policy
                    tape.backward(loss.model_root);
                    o.model_grads = extract(bind, model_params_);
                    tape.backward(loss.actor_root);
                    auto actor_grads = extract(bind, model_params_);
                    for (size_t p = 0; p < model_params_.size(); ++p) {
                        if (model_params_[p]->name.rfind("psi.", 0) == 0)
                            o.model_grads[p] = std::move(actor_grads[p]);
                    }
                    tape.backward(loss.value_loss);
                    o.value_grads = extract(bind, omega_);
                    o.bd = loss.breakdown;
                    return o;
                });
            reduce_grads(outs, rl_chunks.size(), &ChunkOut::model_grads,
                         model_params_);
            reduce_grads(outs, rl_chunks.size(), &ChunkOut::value_grads, omega_);
            for (const auto& o : outs) out.rl.accumulate(o.bd);
            out.rl.scale_by(1.0 / static_cast<double>(outs.size()));
            out.has_rl = true;
        }

        // gradient-norm rule per parameter group, then one Adam step each
        out.grad_norm_theta = apply_norm_ceiling<T>(
            {theta_.data(), theta_.size()}, cfg_.train.grad_norm_ceiling);
        out.grad_norm_phi = apply_norm_ceiling<T>(
            {phi_.data(), phi_.size()}, cfg_.train.grad_norm_ceiling);
        out.grad_norm_psi = apply_norm_ceiling<T>(
            {psi_.data(), psi_.size()}, cfg_.train.grad_norm_ceiling);
        opt_theta_.step({theta_.data(), theta_.size()});
        opt_phi_.step({phi_.data(), phi_.size()});
        opt_psi_.step({psi_.data(), psi_.size()});

        if (use_rl) {
            out.grad_norm_omega = apply_norm_ceiling<T>(
                {omega_.data(), omega_.size()}, cfg_.train.grad_norm_ceiling);
            opt_omega_.step({omega_.data(), omega_.size()});
            nets_.polyak_target(static_cast<T>(cfg_.train.target_rate));
        }
        last_breakdown_ = out.has_rl ? out.rl : out.il;
        return out;
    }

    // Filtered acting: infer u_t from the posterior, act with the squashed
    // policy mean, add exploration noise when collecting, clip to [-1, 1].
    Episode rollout_policy(uint64_t episode_seed, bool explore) {
        const EnvSpec& es = cfg_.env;
        OnlineFilter<T> filter(nets_);
        NoiseSource<T> fnoise(mix_seed(episode_seed, 11));
        Rng erng(mix_seed(episode_seed, 13));
        Episode ep;
        ep.length = es.episode_length;
        ep.obs_dim = es.obs_dim;
        ep.action_dim = es.action_dim;
        std::vector<double> obs = env_->reset(episode_seed);
        std::vector<double> a_prev(static_cast<size_t>(es.action_dim), 0.0);
        for (int t = 0; t < es.episode_length; ++t) {
            std::vector<double> mean = filter.step(a_prev, obs, fnoise);
            std::vector<double> a(mean.size());
            for (size_t d = 0; d < a.size(); ++d) {
                a[d] = std::tanh(mean[d]);
                if (explore) a[d] += cfg_.train.exploration_std * erng.normal();
                a[d] = std::min(1.0, std::max(-1.0, a[d]));
            }
            Transition tr = env_->step(a);
            ep.observations.insert(ep.observations.end(), tr.obs.begin(),
                                   tr.obs.end());
            ep.actions.insert(ep.actions.end(), tr.action.begin(), tr.action.end());
            ep.rewards.push_back(tr.reward);
            obs = tr.obs_next;
            a_prev = tr.action;
        }
        return ep;
    }

    void collect_episode(long long iteration) {
        Episode ep = rollout_policy(
            mix_seed(cfg_.seed, stream::kCollect ^ (static_cast<uint64_t>(iteration)
                                                    << 16)),
            /*explore=*/true);
        env_steps_ += ep.length;
        agent_.add_episode(std::move(ep));
    }

    void collect_random_episode(uint64_t episode_seed) {
        const EnvSpec& es = cfg_.env;
        Rng arng(mix_seed(episode_seed, 17));
        Episode ep;
        ep.length = es.episode_length;
        ep.obs_dim = es.obs_dim;
        ep.action_dim = es.action_dim;
        std::vector<double> obs = env_->reset(episode_seed);
        for (int t = 0; t < es.episode_length; ++t) {
            std::vector<double> a(static_cast<size_t>(es.action_dim));
            for (auto& v : a) v = arng.uniform(-1.0, 1.0);
            Transition tr = env_->step(a);
            ep.observations.insert(ep.observations.end(), tr.obs.begin(),
                                   tr.obs.end());
            ep.actions.insert(ep.actions.end(), tr.action.begin(), tr.action.end());
            ep.rewards.push_back(tr.reward);
            obs = tr.obs_next;
        }
        env_steps_ += ep.length;
        agent_.add_episode(std::move(ep));
    }

    // Noise-free episodes on fixed per-slot seeds; identical parameters give
    // identical returns across calls.
    std::pair<double, double> evaluate() {
        const int n = cfg_.train.eval_episodes;
        std::vector<double> returns;
        returns.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            Episode ep = rollout_policy(mix_seed(cfg_.seed, stream::kEval + i),
                                        /*explore=*/false);
            returns.push_back(ep.total_return());
        }
        double mean = 0;
        for (double r : returns) mean += r;
        mean /= n;
        double var = 0;
        for (double r : returns) var += (r - mean) * (r - mean);
        return {mean, std::sqrt(var / n)};
    }

    // Full run: writes the resolved config, the metrics CSV and the final
    // checkpoint into the output directory.
    void run() {
        namespace fs = std::filesystem;
        fs::create_directories(cfg_.output_dir);
        save_config_file(cfg_, cfg_.output_dir + "/config.resolved.cfg");
        MetricsWriter metrics(cfg_.output_dir + "/metrics.csv");
        auto t0 = std::chrono::steady_clock::now();
        auto wall = [&]() -> std::optional<double> {
            if (cfg_.train.deterministic) return std::nullopt;
            return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                 t0)
                .count();
        };

        init();
        try {
            for (long long iteration = 1; iteration <= cfg_.train.total_iters;
                 ++iteration) {
                for (int c = 0; c < cfg_.train.collect_interval; ++c) {
                    UpdateOutcome<T> u = update_step(iteration);
                    UpdateRow row;
                    row.iteration = iteration;
                    row.env_steps = env_steps_;
                    row.obs_nll = u.il.obs_nll + u.rl.obs_nll;
                    row.policy_prior_nll =
                        u.il.policy_prior_nll + u.rl.policy_prior_nll;
                    row.state_kl = u.il.state_kl_raw + u.rl.state_kl_raw;
                    row.policy_kl = u.il.policy_kl_raw + u.rl.policy_kl_raw;
                    row.has_rl = u.has_rl;
                    row.epistemic_kl = u.rl.epistemic_kl;
                    row.expected_reward = u.rl.expected_reward;
                    row.value_loss = u.rl.value_loss;
                    row.grad_norm_theta = u.grad_norm_theta;
                    row.grad_norm_phi = u.grad_norm_phi;
                    row.grad_norm_psi = u.grad_norm_psi;
                    row.has_value_update = u.has_rl;
                    row.grad_norm_omega = u.grad_norm_omega;
                    row.wall_seconds = wall();
                    metrics.write(row);
                }
                collect_episode(iteration);
                if (iteration % cfg_.train.eval_every == 0 ||
                    iteration == cfg_.train.total_iters) {
                    auto [mean, sd] = evaluate();
                    EvalRow row;
                    row.iteration = iteration;
                    row.env_steps = env_steps_;
                    row.return_mean = mean;
                    row.return_std = sd;
                    row.wall_seconds = wall();
                    metrics.write(row);
                    last_eval_mean_ = mean;
                }
            }
        } catch (const NumericError& e) {
            std::cerr << "numeric failure: " << e.what() << "\n"
                      << "last loss breakdown: obs_nll=" << last_breakdown_.obs_nll
                      << " policy_prior_nll=" << last_breakdown_.policy_prior_nll
                      << " reward_nll=" << last_breakdown_.reward_nll
                      << " state_kl=" << last_breakdown_.state_kl_raw
                      << " policy_kl=" << last_breakdown_.policy_kl_raw
                      << " epistemic=" << last_breakdown_.epistemic_kl
                      << " expected_reward=" << last_breakdown_.expected_reward
                      << " value_loss=" << last_breakdown_.value_loss << "\n";
            throw;
        }
        save_final_checkpoint();
    }

    void save_final_checkpoint() {
        nlohmann::json extra;
        extra["seed"] = cfg_.seed;
        extra["env_steps"] = env_steps_;
        extra["config_text"] = serialize_config(cfg_);
        save_checkpoint(cfg_.output_dir + "/checkpoint_final.ckpt", nets_, extra);
    }

    double last_eval_mean() const { return last_eval_mean_; }

private:
    uint64_t chunk_noise_seed(uint64_t kind, int chunk_index) const {
        return mix_seed(cfg_.seed,
                        stream::kChunkNoise ^ (update_counter_ << 18) ^
                            (kind << 12) ^ static_cast<uint64_t>(chunk_index));
    }

    std::vector<EpisodeChunk> expert_chunks_for_il(Rng& rng) {
        auto chunks = expert_.sample_chunks(cfg_.train.batch, cfg_.train.chunk,
                                            cfg_.train.burn_in, rng);
        // expert tuples are (o, a, o'); rewards stay behind
        for (auto& c : chunks) {
            c.has_rewards = false;
            c.has_prev_reward = false;
            c.rewards.clear();
        }
        return chunks;
    }

    template <typename Outs, typename Member>
    void reduce_grads(const Outs& outs, size_t batch, Member member,
                      const std::vector<Param<T>*>& params) {
        const T inv = static_cast<T>(1.0 / static_cast<double>(batch));
        for (size_t c = 0; c < outs.size(); ++c) {
            const auto& grads = outs[c].*member;
            for (size_t i = 0; i < params.size(); ++i) {
                auto& dst = params[i]->grad;
                const auto& src = grads[i];
                for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j] * inv;
            }
        }
    }

    RunConfig cfg_;
    FenetNets<T> nets_;
    Rssm<T> rssm_;
    std::unique_ptr<Env> env_;
    LossScales scales_;
    Adam<T> opt_theta_, opt_phi_, opt_psi_, opt_omega_;
    Dataset expert_{DatasetKind::expert};
    Dataset agent_{DatasetKind::agent};
    bool has_expert_ = false;
    bool initialized_ = false;
    TapePool<T> pool_;
    std::vector<Param<T>*> model_params_, theta_, phi_, psi_, omega_;
    int64_t env_steps_ = 0;
    uint64_t update_counter_ = 0;
    LossBreakdown last_breakdown_{};
    double last_eval_mean_ = 0.0;
};

// Precision dispatch for the CLI.
inline void run_training(const RunConfig& cfg) {
    if (cfg.precision == Precision::f64) {
        Trainer<double> tr(cfg);
        tr.run();
    } else {
        Trainer<float> tr(cfg);
        tr.run();
    }
}

// Loads a checkpoint, rebuilds the nets and the env recorded alongside them,
// and runs n noise-free evaluation episodes.
template <typename T>
std::pair<double, double> eval_checkpoint_typed(const std::string& path, int n,
                                                std::optional<uint64_t> seed) {
    auto ck = load_checkpoint<T>(path);
    RunConfig cfg = parse_config_text(ck.extra.at("config_text").template get<std::string>());
    cfg.net = ck.net;
    if (seed) cfg.seed = *seed;
    FenetNets<T> nets(ck.net, 1);
    restore_params(nets, ck);
    auto env = make_env(cfg.env);
    std::vector<double> returns;
    for (int i = 0; i < n; ++i) {
        uint64_t ep_seed = mix_seed(cfg.seed, stream::kEval + i);
        OnlineFilter<T> filter(nets);
        NoiseSource<T> fnoise(mix_seed(ep_seed, 11));
        std::vector<double> obs = env->reset(ep_seed);
        std::vector<double> a_prev(static_cast<size_t>(cfg.env.action_dim), 0.0);
        double ret = 0;
        for (int t = 0; t < cfg.env.episode_length; ++t) {
            std::vector<double> mean = filter.step(a_prev, obs, fnoise);
            std::vector<double> a(mean.size());
            for (size_t d = 0; d < a.size(); ++d)
                a[d] = std::min(1.0, std::max(-1.0, std::tanh(mean[d])));
            Transition tr = env->step(a);
            ret += tr.reward;
            obs = tr.obs_next;
            a_prev = tr.action;
        }
        returns.push_back(ret);
    }
    double mean = 0;
    for (double r : returns) mean += r;
    mean /= n;
    double var = 0;
    for (double r : returns) var += (r - mean) * (r - mean);
    return {mean, std::sqrt(var / n)};
}

inline std::pair<double, double> eval_checkpoint(const std::string& path, int n,
                                                 std::optional<uint64_t> seed) {
    auto probe = load_checkpoint<float>(path);
    if (probe.stored_f32) return eval_checkpoint_typed<float>(path, n, seed);
    return eval_checkpoint_typed<double>(path, n, seed);
}

} // namespace fenet
