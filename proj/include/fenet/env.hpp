#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fenet/errors.hpp"
#include "fenet/rng.hpp"

namespace fenet {

enum class RewardMode { dense, sparse };
enum class ExpertQuality { optimal, suboptimal };

// Desk-scale POMDP description. Per-step rewards live in [0, 1] in dense
// mode; sparse mode zeroes anything below 0.5.
struct EnvSpec {
    std::string name = "pointmass"; // pointmass | pendulum
    int obs_dim = 16;
    int action_dim = 1;
    int episode_length = 100; // T
    int action_repeat = 2;    // R
    RewardMode reward_mode = RewardMode::dense;
    double obs_noise_std = 0.0;

    void validate() const {
        if (name != "pointmass" && name != "pendulum")
            throw ConfigError("env: unknown name '" + name + "'");
        if (episode_length < 1 || action_repeat < 1)
            throw ConfigError("env: episode_length and action_repeat must be >= 1");
        if (obs_noise_std < 0.0) throw ConfigError("env: negative obs noise");
        int expect_obs = name == "pointmass" ? 16 : 256;
        if (obs_dim != expect_obs)
            throw ConfigError("env: obs_dim must be " + std::to_string(expect_obs) +
                              " for " + name);
        if (action_dim != 1)
            throw ConfigError("env: action_dim must be 1 for " + name);
    }
};

struct Transition {
    std::vector<double> obs;
    std::vector<double> action; // as executed (clipped)
    double reward = 0.0;
    std::vector<double> obs_next;
    bool done = false;
};

class Env {
public:
    virtual ~Env() = default;
    virtual const EnvSpec& spec() const = 0;

    // Randomized initial physical state; returns the rendered observation.
    virtual std::vector<double> reset(uint64_t seed) = 0;

    // Applies the action for R internal substeps; reward is the substep sum
    // divided by R. Stepping a finished episode is a contract violation.
    virtual Transition step(std::span<const double> action) = 0;

    virtual bool done() const = 0;

    // Privileged access for the scripted experts.
    virtual std::vector<double> state() const = 0;
    virtual std::vector<double> expert_action(ExpertQuality quality) const = 0;
};

std::unique_ptr<Env> make_env(const EnvSpec& spec);

struct ExpertStats {
    double mean_return = 0.0;
    double std_return = 0.0;
    int episodes = 0;
};

// Runs the scripted expert for n episodes and writes them to an episode file.
// Returns the return statistics of the generated set.
ExpertStats gen_expert_dataset(const EnvSpec& spec, ExpertQuality quality,
                               int n_episodes, uint64_t seed,
                               const std::string& path, bool force);

// Measures expert performance without writing a file.
ExpertStats measure_expert(const EnvSpec& spec, ExpertQuality quality,
                           int n_episodes, uint64_t seed);

} // namespace fenet
