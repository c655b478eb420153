#pragma once

#include <span>
#include <string>
#include <vector>

#include "fenet/env.hpp"

namespace fenet {

// One full episode of length T: o_t, the executed a_t, and the reward r_t
// produced by a_t. The next observation of step t is observations row t+1.
struct Episode {
    int length = 0;
    int obs_dim = 0;
    int action_dim = 0;
    std::vector<double> observations; // [T, obs_dim]
    std::vector<double> actions;      // [T, action_dim]
    std::vector<double> rewards;      // [T]

    std::span<const double> obs_at(int t) const {
        return {&observations[static_cast<size_t>(t) * obs_dim],
                static_cast<size_t>(obs_dim)};
    }
    std::span<const double> action_at(int t) const {
        return {&actions[static_cast<size_t>(t) * action_dim],
                static_cast<size_t>(action_dim)};
    }
    double total_return() const {
        double acc = 0.0;
        for (double r : rewards) acc += r;
        return acc;
    }
};

// Little-endian episode container: magic, u32 header length, JSON header
// (format version, env spec, generator seed, array table), then raw f64 data.
void write_episode_file(const std::string& path, const EnvSpec& spec,
                        uint64_t seed, const std::vector<Episode>& episodes);

struct EpisodeFile {
    EnvSpec spec;
    uint64_t seed = 0;
    std::vector<Episode> episodes;
};

EpisodeFile read_episode_file(const std::string& path);

} // namespace fenet
