#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fenet/errors.hpp"
#include "fenet/nets.hpp"

namespace fenet {

// Self-describing checkpoint container: 8-byte magic, little-endian u32
// header length, JSON header (format version, net config, named array table,
// free-form extra section), then the raw parameter payload in header order.
inline constexpr char kCheckpointMagic[8] = {'F', 'E', 'N', 'C', 'K', 'P', 'T', '1'};
inline constexpr uint32_t kCheckpointVersion = 1;

inline void require_little_endian() {
    if constexpr (std::endian::native != std::endian::little) {
        throw IoError("file formats are little-endian only");
    }
}

inline nlohmann::json net_config_to_json(const NetConfig& c) {
    return nlohmann::json{
        {"obs_dim", c.obs_dim},
        {"action_dim", c.action_dim},
        {"u_dim", c.u_dim},
        {"h_dim", c.h_dim},
        {"hidden_width", c.hidden_width},
        {"hidden_depth", c.hidden_depth},
        {"min_std", c.min_std},
        {"value_on_uh", c.value_on_uh},
        {"rnn", c.rnn == RnnKind::gru ? "gru" : "linear"},
    };
}

inline NetConfig net_config_from_json(const nlohmann::json& j) {
    NetConfig c;
    c.obs_dim = j.at("obs_dim").get<int>();
    c.action_dim = j.at("action_dim").get<int>();
    c.u_dim = j.at("u_dim").get<int>();
    c.h_dim = j.at("h_dim").get<int>();
    c.hidden_width = j.at("hidden_width").get<int>();
    c.hidden_depth = j.at("hidden_depth").get<int>();
    c.min_std = j.at("min_std").get<double>();
    c.value_on_uh = j.at("value_on_uh").get<bool>();
    c.rnn = j.at("rnn").get<std::string>() == "linear" ? RnnKind::linear : RnnKind::gru;
    return c;
}

template <typename T>
void save_checkpoint(const std::string& path, const FenetNets<T>& nets,
                     const nlohmann::json& extra = nlohmann::json::object()) {
    require_little_endian();
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["precision"] = sizeof(T) == 4 ? "f32" : "f64";
    header["net"] = net_config_to_json(nets.config());
    header["extra"] = extra;
    auto params = nets.params().all();
    nlohmann::json table = nlohmann::json::array();
    for (const Param<T>* p : params) {
        nlohmann::json e;
        e["name"] = p->name;
        e["shape"] = p->shape.rank == 2
                         ? nlohmann::json::array({p->shape.d0, p->shape.d1})
                         : nlohmann::json::array({p->shape.d0});
        table.push_back(e);
    }
    header["params"] = table;

    std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(kCheckpointMagic, 8);
    uint32_t hlen = static_cast<uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const Param<T>* p : params) {
        f.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(T)));
    }
    if (!f) throw IoError("failed writing checkpoint: " + path);
}

template <typename T>
struct LoadedCheckpoint {
    NetConfig net;
    nlohmann::json extra;
    bool stored_f32 = false;
    std::vector<std::pair<std::string, std::vector<T>>> values;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    require_little_endian();
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw IoError("not a checkpoint file: " + path);
    uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 4);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw IoError("truncated checkpoint header: " + path);
    nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
    if (header.is_discarded()) throw IoError("bad checkpoint header json: " + path);
    if (header.at("format_version").get<uint32_t>() != kCheckpointVersion)
        throw IoError("unsupported checkpoint version");

    LoadedCheckpoint<T> out;
    out.net = net_config_from_json(header.at("net"));
    out.extra = header.value("extra", nlohmann::json::object());
    bool file_f32 = header.at("precision").get<std::string>() == "f32";
    out.stored_f32 = file_f32;

    for (const auto& e : header.at("params")) {
        size_t count = 1;
        for (const auto& d : e.at("shape")) count *= d.get<size_t>();
        std::vector<T> vals(count);
        if (file_f32) {
            std::vector<float> raw(count);
            f.read(reinterpret_cast<char*>(raw.data()),
                   static_cast<std::streamsize>(count * sizeof(float)));
            for (size_t i = 0; i < count; ++i) vals[i] = static_cast<T>(raw[i]);
        } else {
            std::vector<double> raw(count);
            f.read(reinterpret_cast<char*>(raw.data()),
                   static_cast<std::streamsize>(count * sizeof(double)));
            for (size_t i = 0; i < count; ++i) vals[i] = static_cast<T>(raw[i]);
        }
        if (!f) throw IoError("truncated checkpoint payload: " + path);
        out.values.emplace_back(e.at("name").get<std::string>(), std::move(vals));
    }
    return out;
}

// Restore parameter values into freshly constructed nets of the same config.
template <typename T>
void restore_params(FenetNets<T>& nets, const LoadedCheckpoint<T>& ck) {
    for (const auto& [name, vals] : ck.values) {
        Param<T>& p = nets.params().at(name);
        if (p.value.size() != vals.size())
            throw IoError("checkpoint shape mismatch for " + name);
        p.value = vals;
    }
}

} // namespace fenet
