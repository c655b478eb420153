#include "fenet/replay.hpp"

#include <algorithm>

namespace fenet {

void Dataset::add_episode(Episode ep) {
    if (locked_)
        throw ContractError("dataset: expert dataset is immutable after load");
    if (length_ < 0) {
        length_ = ep.length;
    } else if (ep.length != length_) {
        throw ContractError("dataset: episode length mismatch");
    }
    if (ep.obs_dim <= 0 || ep.action_dim <= 0 ||
        ep.observations.size() != static_cast<size_t>(ep.length) * ep.obs_dim ||
        ep.actions.size() != static_cast<size_t>(ep.length) * ep.action_dim)
        throw ContractError("dataset: malformed episode");
    episodes_.push_back(std::move(ep));
    if (capacity_ > 0 && episodes_.size() > capacity_) episodes_.pop_front();
}

void Dataset::load_file(const std::string& path) {
    if (locked_) throw ContractError("dataset: already loaded");
    EpisodeFile file = read_episode_file(path);
    for (Episode& e : file.episodes) add_episode(std::move(e));
    if (kind_ == DatasetKind::expert) locked_ = true;
}

std::vector<EpisodeChunk> Dataset::sample_chunks(int batch, int len, int burn_in,
                                                 Rng& rng) const {
    if (episodes_.empty() || length_ < len)
        throw ContractError("dataset: no episode long enough to sample from");
    if (len < 1 || burn_in < 0 || burn_in >= len)
        throw ConfigError("dataset: need 0 <= burn_in < len");
    std::vector<EpisodeChunk> out;
    out.reserve(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        const Episode& ep =
            episodes_[static_cast<size_t>(rng.uniform_int(episodes_.size()))];
        int start = static_cast<int>(rng.uniform_int(
            static_cast<uint64_t>(ep.length - len + 1)));
        EpisodeChunk c;
        c.length = len;
        c.burn_in = burn_in;
        c.obs_dim = ep.obs_dim;
        c.action_dim = ep.action_dim;
        c.observations.assign(
            ep.observations.begin() + static_cast<size_t>(start) * ep.obs_dim,
            ep.observations.begin() +
                static_cast<size_t>(start + len) * ep.obs_dim);
        c.actions.assign(
            ep.actions.begin() + static_cast<size_t>(start) * ep.action_dim,
            ep.actions.begin() + static_cast<size_t>(start + len) * ep.action_dim);
        c.has_rewards = !ep.rewards.empty();
        if (c.has_rewards) {
            c.rewards.assign(ep.rewards.begin() + start,
                             ep.rewards.begin() + start + len);
            if (start > 0) {
                c.has_prev_reward = true;
                c.prev_reward = ep.rewards[static_cast<size_t>(start) - 1];
            }
        }
        out.push_back(std::move(c));
    }
    return out;
}

} // namespace fenet
