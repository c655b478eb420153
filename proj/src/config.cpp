#include "fenet/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace fenet {

std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::imitation_rl: return "imitation_rl";
        case TrainMode::pretrained_rl: return "pretrained_rl";
        case TrainMode::rl_only: return "rl_only";
        case TrainMode::imitation_only: return "imitation_only";
    }
    return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "imitation_rl") return TrainMode::imitation_rl;
    if (s == "pretrained_rl") return TrainMode::pretrained_rl;
    if (s == "rl_only") return TrainMode::rl_only;
    if (s == "imitation_only") return TrainMode::imitation_only;
    throw ConfigError("unknown mode '" + s + "'");
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
    int out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("bad integer for " + key + ": '" + v + "'");
    return out;
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("bad unsigned integer for " + key + ": '" + v + "'");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("bad number for " + key + ": '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

} // namespace

RunConfig default_run_config() { return RunConfig{}; }

void set_key(RunConfig& c, const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (key == "env.name") c.env.name = v;
    else if (key == "env.obs_dim") c.env.obs_dim = to_int(key, v);
    else if (key == "env.action_dim") c.env.action_dim = to_int(key, v);
    else if (key == "env.episode_length") c.env.episode_length = to_int(key, v);
    else if (key == "env.action_repeat") c.env.action_repeat = to_int(key, v);
    else if (key == "env.reward_mode") {
        if (v == "dense") c.env.reward_mode = RewardMode::dense;
        else if (v == "sparse") c.env.reward_mode = RewardMode::sparse;
        else throw ConfigError("bad env.reward_mode '" + v + "'");
    } else if (key == "env.obs_noise_std") c.env.obs_noise_std = to_double(key, v);
    else if (key == "net.u_dim") c.net.u_dim = to_int(key, v);
    else if (key == "net.h_dim") c.net.h_dim = to_int(key, v);
    else if (key == "net.hidden_width") c.net.hidden_width = to_int(key, v);
    else if (key == "net.hidden_depth") c.net.hidden_depth = to_int(key, v);
    else if (key == "net.min_std") c.net.min_std = to_double(key, v);
    else if (key == "net.value_on_uh") c.net.value_on_uh = to_bool(key, v);
    else if (key == "net.rnn") {
        if (v == "gru") c.net.rnn = RnnKind::gru;
        else if (v == "linear") c.net.rnn = RnnKind::linear;
        else throw ConfigError("bad net.rnn '" + v + "'");
    } else if (key == "net.precision") {
        if (v == "f32") c.precision = Precision::f32;
        else if (v == "f64") c.precision = Precision::f64;
        else throw ConfigError("bad net.precision '" + v + "'");
    }
    else if (key == "train.seed_episodes") c.train.seed_episodes = to_int(key, v);
    else if (key == "train.collect_interval") c.train.collect_interval = to_int(key, v);
    else if (key == "train.batch") c.train.batch = to_int(key, v);
    else if (key == "train.chunk") c.train.chunk = to_int(key, v);
    else if (key == "train.burn_in") c.train.burn_in = to_int(key, v);
    else if (key == "train.expert_episodes") c.train.expert_episodes = to_int(key, v);
    else if (key == "train.target_rate") c.train.target_rate = to_double(key, v);
    else if (key == "train.lr") c.train.lr = to_double(key, v);
    else if (key == "train.discount") c.train.discount = to_double(key, v);
    else if (key == "train.exploration_std") c.train.exploration_std = to_double(key, v);
    else if (key == "train.grad_norm_ceiling") c.train.grad_norm_ceiling = to_double(key, v);
    else if (key == "train.reward_scale") c.train.reward_scale = to_double(key, v);
    else if (key == "train.policy_prior_scale") c.train.policy_prior_scale = to_double(key, v);
    else if (key == "train.free_nats") c.train.free_nats = to_double(key, v);
    else if (key == "train.policy_kl_floor") c.train.policy_kl_floor = to_double(key, v);
    else if (key == "train.mode") c.train.mode = train_mode_from_string(v);
    else if (key == "train.pretrain_iters") c.train.pretrain_iters = to_int(key, v);
    else if (key == "train.total_iters") c.train.total_iters = to_int(key, v);
    else if (key == "train.eval_every") c.train.eval_every = to_int(key, v);
    else if (key == "train.eval_episodes") c.train.eval_episodes = to_int(key, v);
    else if (key == "train.n_imagine_samples") c.train.n_imagine_samples = to_int(key, v);
    else if (key == "train.parallel") c.train.parallel = to_bool(key, v);
    else if (key == "train.deterministic") c.train.deterministic = to_bool(key, v);
    else if (key == "paths.expert_file") c.expert_file = v;
    else if (key == "paths.output_dir") c.output_dir = v;
    else if (key == "seed") c.seed = to_u64(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg = default_run_config();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        set_key(cfg, key, value);
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void RunConfig::resolve() {
    // net observation/action sizes always follow the environment
    if (env.name == "pointmass") env.obs_dim = 16;
    if (env.name == "pendulum") env.obs_dim = 256;
    env.validate();
    net.obs_dim = env.obs_dim;
    net.action_dim = env.action_dim;
    net.validate();
    if (train.batch == 0)
        train.batch = train.mode == TrainMode::imitation_rl ? 25 : 50;
    if (train.batch < 1) throw ConfigError("train.batch must be >= 1");
    if (train.chunk < 2 || train.chunk > env.episode_length)
        throw ConfigError("train.chunk must be in [2, episode_length]");
    if (train.burn_in < 0 || train.burn_in + 2 > train.chunk)
        throw ConfigError("train.burn_in must satisfy burn_in + 2 <= chunk");
    if (train.seed_episodes < 1) throw ConfigError("train.seed_episodes must be >= 1");
    if (train.collect_interval < 1) throw ConfigError("train.collect_interval must be >= 1");
    if (train.expert_episodes < 1) throw ConfigError("train.expert_episodes must be >= 1");
    if (train.total_iters < 1) throw ConfigError("train.total_iters must be >= 1");
    if (train.eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
    if (train.eval_episodes < 1) throw ConfigError("train.eval_episodes must be >= 1");
    if (train.n_imagine_samples < 1)
        throw ConfigError("train.n_imagine_samples must be >= 1");
    if (!(train.target_rate >= 0.0 && train.target_rate <= 1.0))
        throw ConfigError("train.target_rate must be in [0, 1]");
    if (!(train.discount >= 0.0 && train.discount <= 1.0))
        throw ConfigError("train.discount must be in [0, 1]");
    if (train.lr <= 0.0) throw ConfigError("train.lr must be positive");
    if (train.exploration_std < 0.0)
        throw ConfigError("train.exploration_std must be >= 0");
    if (train.mode == TrainMode::pretrained_rl) {
        if (train.pretrain_iters < 1 || train.pretrain_iters >= train.total_iters)
            throw ConfigError(
                "pretrained_rl needs 1 <= train.pretrain_iters < train.total_iters");
    }
    bool needs_expert = train.mode != TrainMode::rl_only;
    if (needs_expert && expert_file.empty())
        throw ConfigError("mode " + to_string(train.mode) +
                          " requires paths.expert_file");
}

std::string serialize_config(const RunConfig& c) {
    std::ostringstream o;
    o.precision(17);
    o << "env.name = " << c.env.name << "\n";
    o << "env.obs_dim = " << c.env.obs_dim << "\n";
    o << "env.action_dim = " << c.env.action_dim << "\n";
    o << "env.episode_length = " << c.env.episode_length << "\n";
    o << "env.action_repeat = " << c.env.action_repeat << "\n";
    o << "env.reward_mode = "
      << (c.env.reward_mode == RewardMode::sparse ? "sparse" : "dense") << "\n";
    o << "env.obs_noise_std = " << c.env.obs_noise_std << "\n";
    o << "net.u_dim = " << c.net.u_dim << "\n";
    o << "net.h_dim = " << c.net.h_dim << "\n";
    o << "net.hidden_width = " << c.net.hidden_width << "\n";
    o << "net.hidden_depth = " << c.net.hidden_depth << "\n";
    o << "net.min_std = " << c.net.min_std << "\n";
    o << "net.value_on_uh = " << (c.net.value_on_uh ? "true" : "false") << "\n";
    o << "net.rnn = " << (c.net.rnn == RnnKind::linear ? "linear" : "gru") << "\n";
    o << "net.precision = " << (c.precision == Precision::f64 ? "f64" : "f32") << "\n";
    o << "train.seed_episodes = " << c.train.seed_episodes << "\n";
    o << "train.collect_interval = " << c.train.collect_interval << "\n";
    o << "train.batch = " << c.train.batch << "\n";
    o << "train.chunk = " << c.train.chunk << "\n";
    o << "train.burn_in = " << c.train.burn_in << "\n";
    o << "train.expert_episodes = " << c.train.expert_episodes << "\n";
    o << "train.target_rate = " << c.train.target_rate << "\n";
    o << "train.lr = " << c.train.lr << "\n";
    o << "train.discount = " << c.train.discount << "\n";
    o << "train.exploration_std = " << c.train.exploration_std << "\n";
    o << "train.grad_norm_ceiling = " << c.train.grad_norm_ceiling << "\n";
    o << "train.reward_scale = " << c.train.reward_scale << "\n";
    o << "train.policy_prior_scale = " << c.train.policy_prior_scale << "\n";
    o << "train.free_nats = " << c.train.free_nats << "\n";
    o << "train.policy_kl_floor = " << c.train.policy_kl_floor << "\n";
    o << "train.mode = " << to_string(c.train.mode) << "\n";
    o << "train.pretrain_iters = " << c.train.pretrain_iters << "\n";
    o << "train.total_iters = " << c.train.total_iters << "\n";
    o << "train.eval_every = " << c.train.eval_every << "\n";
    o << "train.eval_episodes = " << c.train.eval_episodes << "\n";
    o << "train.n_imagine_samples = " << c.train.n_imagine_samples << "\n";
    o << "train.parallel = " << (c.train.parallel ? "true" : "false") << "\n";
    o << "train.deterministic = " << (c.train.deterministic ? "true" : "false")
      << "\n";
    o << "paths.expert_file = " << c.expert_file << "\n";
    o << "paths.output_dir = " << c.output_dir << "\n";
    o << "seed = " << c.seed << "\n";
    return o.str();
}

void save_config_file(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write config file: " + path);
    out << serialize_config(cfg);
}

} // namespace fenet
