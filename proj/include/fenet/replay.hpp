#pragma once

#include <deque>
#include <string>
#include <vector>

#include "fenet/episode.hpp"
#include "fenet/rng.hpp"

namespace fenet {

enum class DatasetKind { expert, agent };

// Contiguous slice of one episode: L steps with a burn-in prefix of P steps.
// Expert chunks may omit rewards. The reward preceding the chunk start is
// kept when it exists, so the reward head has a target at the first step.
struct EpisodeChunk {
    int length = 0;  // L
    int burn_in = 0; // P
    int obs_dim = 0;
    int action_dim = 0;
    bool has_rewards = false;
    bool has_prev_reward = false;
    double prev_reward = 0.0;
    std::vector<double> observations; // [L, obs_dim]
    std::vector<double> actions;      // [L, action_dim]
    std::vector<double> rewards;      // [L] when has_rewards

    std::span<const double> obs_at(int i) const {
        return {&observations[static_cast<size_t>(i) * obs_dim],
                static_cast<size_t>(obs_dim)};
    }
    std::span<const double> action_at(int i) const {
        return {&actions[static_cast<size_t>(i) * action_dim],
                static_cast<size_t>(action_dim)};
    }
    // r_{t-1} for local step i; false when it does not exist.
    bool reward_before(int i, double& out) const {
        if (!has_rewards) return false;
        if (i > 0) {
            out = rewards[static_cast<size_t>(i) - 1];
            return true;
        }
        if (has_prev_reward) {
            out = prev_reward;
            return true;
        }
        return false;
    }
};

// Episode store with uniform chunk sampling. Expert datasets become
// immutable once loaded from a file; agent datasets evict FIFO beyond the
// configured capacity.
class Dataset {
public:
    explicit Dataset(DatasetKind kind, size_t capacity = 0)
        : kind_(kind), capacity_(capacity) {}

    DatasetKind kind() const { return kind_; }
    size_t size() const { return episodes_.size(); }
    const Episode& episode(size_t i) const { return episodes_.at(i); }
    int episode_length() const { return length_; }

    void add_episode(Episode ep);
    void load_file(const std::string& path);

    // B chunks: episode uniform, start uniform in [0, T-L]. Deterministic
    // given the rng state. Chunks never cross episode boundaries.
    std::vector<EpisodeChunk> sample_chunks(int batch, int len, int burn_in,
                                            Rng& rng) const;

private:
    DatasetKind kind_;
    size_t capacity_;
    bool locked_ = false;
    int length_ = -1;
    std::deque<Episode> episodes_;
};

} // namespace fenet
