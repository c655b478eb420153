#include "fenet/episode.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace fenet {

namespace {

constexpr char kMagic[8] = {'F', 'E', 'N', 'E', 'T', 'E', 'P', '1'};
constexpr uint32_t kVersion = 1;

void check_endian() {
    if constexpr (std::endian::native != std::endian::little)
        throw IoError("episode files are little-endian only");
}

nlohmann::json spec_to_json(const EnvSpec& s) {
    return nlohmann::json{
        {"name", s.name},
        {"obs_dim", s.obs_dim},
        {"action_dim", s.action_dim},
        {"episode_length", s.episode_length},
        {"action_repeat", s.action_repeat},
        {"reward_mode", s.reward_mode == RewardMode::dense ? "dense" : "sparse"},
        {"obs_noise_std", s.obs_noise_std},
    };
}

EnvSpec spec_from_json(const nlohmann::json& j) {
    EnvSpec s;
    s.name = j.at("name").get<std::string>();
    s.obs_dim = j.at("obs_dim").get<int>();
    s.action_dim = j.at("action_dim").get<int>();
    s.episode_length = j.at("episode_length").get<int>();
    s.action_repeat = j.at("action_repeat").get<int>();
    s.reward_mode = j.at("reward_mode").get<std::string>() == "sparse"
                        ? RewardMode::sparse
                        : RewardMode::dense;
    s.obs_noise_std = j.at("obs_noise_std").get<double>();
    return s;
}

} // namespace

void write_episode_file(const std::string& path, const EnvSpec& spec,
                        uint64_t seed, const std::vector<Episode>& episodes) {
    check_endian();
    const size_t n = episodes.size();
    const int T = spec.episode_length;
    for (const Episode& e : episodes) {
        if (e.length != T || e.obs_dim != spec.obs_dim ||
            e.action_dim != spec.action_dim)
            throw ContractError("write_episode_file: episode does not match spec");
    }

    nlohmann::json header;
    header["format_version"] = kVersion;
    header["env"] = spec_to_json(spec);
    header["seed"] = seed;
    header["episodes"] = n;
    header["arrays"] = nlohmann::json::array({
        nlohmann::json{{"name", "observations"},
                       {"shape", {n, T, spec.obs_dim}},
                       {"dtype", "f64"}},
        nlohmann::json{{"name", "actions"},
                       {"shape", {n, T, spec.action_dim}},
                       {"dtype", "f64"}},
        nlohmann::json{{"name", "rewards"}, {"shape", {n, T}}, {"dtype", "f64"}},
    });
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open episode file for writing: " + path);
    f.write(kMagic, 8);
    uint32_t hlen = static_cast<uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    auto write_all = [&](auto getter) {
        for (const Episode& e : episodes) {
            const std::vector<double>& v = getter(e);
            f.write(reinterpret_cast<const char*>(v.data()),
                    static_cast<std::streamsize>(v.size() * sizeof(double)));
        }
    };
    write_all([](const Episode& e) -> const std::vector<double>& {
        return e.observations;
    });
    write_all([](const Episode& e) -> const std::vector<double>& {
        return e.actions;
    });
    write_all([](const Episode& e) -> const std::vector<double>& {
        return e.rewards;
    });
    if (!f) throw IoError("failed writing episode file: " + path);
}

EpisodeFile read_episode_file(const std::string& path) {
    check_endian();
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open episode file: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("not an episode file: " + path);
    uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 4);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw IoError("truncated episode file header: " + path);
    nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
    if (header.is_discarded()) throw IoError("bad episode file header: " + path);
    if (header.at("format_version").get<uint32_t>() != kVersion)
        throw IoError("unsupported episode file version");

    EpisodeFile out;
    out.spec = spec_from_json(header.at("env"));
    out.seed = header.at("seed").get<uint64_t>();
    size_t n = header.at("episodes").get<size_t>();
    const int T = out.spec.episode_length;

    out.episodes.resize(n);
    for (Episode& e : out.episodes) {
        e.length = T;
        e.obs_dim = out.spec.obs_dim;
        e.action_dim = out.spec.action_dim;
        e.observations.resize(static_cast<size_t>(T) * e.obs_dim);
    }
    auto read_into = [&](std::vector<double>& v) {
        f.read(reinterpret_cast<char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    for (Episode& e : out.episodes) read_into(e.observations);
    for (Episode& e : out.episodes) {
        e.actions.resize(static_cast<size_t>(T) * e.action_dim);
        read_into(e.actions);
    }
    for (Episode& e : out.episodes) {
        e.rewards.resize(static_cast<size_t>(T));
        read_into(e.rewards);
    }
    if (!f) throw IoError("truncated episode file payload: " + path);
    return out;
}

} // namespace fenet
