#include "fenet/env.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "fenet/episode.hpp"

namespace fenet {

namespace {

double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

double sparse_filter(double r, RewardMode mode) {
    if (mode == RewardMode::sparse && r < 0.5) return 0.0;
    return r;
}

// 1-D point mass on a rail. Observation is a 16-pixel rendering of a
// Gaussian bump at the mass position; reward is max(0, 1 - |x - goal|).
class PointMass1D final : public Env {
public:
    static constexpr double kGoal = 0.5;
    static constexpr double kLimit = 1.2;
    static constexpr double kDt = 0.1;
    static constexpr double kForceGain = 1.2;
    static constexpr double kFriction = 2.5;
    static constexpr double kKp = 5.0;
    static constexpr double kKd = 3.0;
    // Calibrated so the suboptimal mean return lands in [0.4, 0.6] of optimal.
    static constexpr double kSubGainScale = 0.04;

    explicit PointMass1D(const EnvSpec& spec) : spec_(spec), rng_(0) {
        spec_.validate();
    }

    const EnvSpec& spec() const override { return spec_; }

    std::vector<double> reset(uint64_t seed) override {
        rng_ = Rng(mix_seed(seed, hash_name("pointmass")));
        x_ = rng_.uniform(-1.05, -0.55);
        v_ = rng_.uniform(-0.05, 0.05);
        steps_ = 0;
        done_ = false;
        return render();
    }

    Transition step(std::span<const double> action) override {
        if (done_) throw ContractError("env: step() after episode end");
        if (action.size() != 1) throw DimensionError("env: bad action size");
        Transition tr;
        tr.obs = render();
        double a = clip(action[0], -1.0, 1.0);
        tr.action = {a};
        double acc = 0.0;
        for (int r = 0; r < spec_.action_repeat; ++r) {
            v_ += kDt * (kForceGain * a - kFriction * v_);
            x_ += kDt * v_;
            if (x_ > kLimit) { x_ = kLimit; v_ = 0.0; }
            if (x_ < -kLimit) { x_ = -kLimit; v_ = 0.0; }
            acc += std::max(0.0, 1.0 - std::abs(x_ - kGoal));
        }
        tr.reward = sparse_filter(acc / spec_.action_repeat, spec_.reward_mode);
        ++steps_;
        done_ = steps_ >= spec_.episode_length;
        tr.done = done_;
        tr.obs_next = render();
        return tr;
    }

    bool done() const override { return done_; }

    std::vector<double> state() const override { return {x_, v_}; }

    std::vector<double> expert_action(ExpertQuality quality) const override {
        double g = quality == ExpertQuality::optimal ? 1.0 : kSubGainScale;
        double a = g * (kKp * (kGoal - x_) - kKd * v_);
        return {clip(a, -1.0, 1.0)};
    }

private:
    std::vector<double> render() {
        std::vector<double> px(16);
        const double sigma = 0.1;
        for (int i = 0; i < 16; ++i) {
            double c = -kLimit + (2.0 * kLimit) * (i + 0.5) / 16.0;
            double d = (c - x_) / sigma;
            px[i] = std::exp(-0.5 * d * d);
        }
        if (spec_.obs_noise_std > 0.0) {
            for (auto& p : px)
                p = clip(p + spec_.obs_noise_std * rng_.normal(), 0.0, 1.0);
        }
        return px;
    }

    EnvSpec spec_;
    Rng rng_;
    double x_ = 0.0, v_ = 0.0;
    int steps_ = 0;
    bool done_ = false;
};

// Pendulum swing-up from pixels. Angle is measured from upright; reward is
// (cos(theta) + 1) / 2. Observation is a 16x16 grayscale rendering of the rod.
class PendulumPixels final : public Env {
public:
    static constexpr double kDt = 0.05;
    static constexpr double kGravity = 10.0; // g/l with unit inertia
    static constexpr double kDamping = 0.15;
    static constexpr double kTorqueMax = 2.5;
    static constexpr double kSubGainScale = 0.10;

    explicit PendulumPixels(const EnvSpec& spec) : spec_(spec), rng_(0) {
        spec_.validate();
    }

    const EnvSpec& spec() const override { return spec_; }

    std::vector<double> reset(uint64_t seed) override {
        rng_ = Rng(mix_seed(seed, hash_name("pendulum")));
        theta_ = wrap(std::numbers::pi + rng_.uniform(-0.6, 0.6));
        omega_ = rng_.uniform(-0.5, 0.5);
        steps_ = 0;
        done_ = false;
        return render();
    }

    Transition step(std::span<const double> action) override {
        if (done_) throw ContractError("env: step() after episode end");
        if (action.size() != 1) throw DimensionError("env: bad action size");
        Transition tr;
        tr.obs = render();
        double a = clip(action[0], -1.0, 1.0);
        tr.action = {a};
        double acc = 0.0;
        for (int r = 0; r < spec_.action_repeat; ++r) {
            double torque = kTorqueMax * a;
            double alpha = kGravity * std::sin(theta_) + torque - kDamping * omega_;
            omega_ = clip(omega_ + kDt * alpha, -8.0, 8.0);
            theta_ = wrap(theta_ + kDt * omega_);
            acc += (std::cos(theta_) + 1.0) / 2.0;
        }
        tr.reward = sparse_filter(acc / spec_.action_repeat, spec_.reward_mode);
        ++steps_;
        done_ = steps_ >= spec_.episode_length;
        tr.done = done_;
        tr.obs_next = render();
        return tr;
    }

    bool done() const override { return done_; }

    std::vector<double> state() const override { return {theta_, omega_}; }

    std::vector<double> expert_action(ExpertQuality quality) const override {
        double g = quality == ExpertQuality::optimal ? 1.0 : kSubGainScale;
        double a;
        if (std::cos(theta_) > 0.9 && std::abs(omega_) < 2.5) {
            a = (-8.0 * theta_ - 2.0 * omega_) / kTorqueMax;
        } else {
            double energy = 0.5 * omega_ * omega_ + kGravity * std::cos(theta_);
            double target = kGravity;
            a = 0.5 * (target - energy) * omega_ / kTorqueMax;
            if (std::abs(a) < 0.05 && std::abs(omega_) < 0.1) a = 1.0; // kick
        }
        return {clip(g * a, -1.0, 1.0)};
    }

private:
    static double wrap(double t) {
        while (t > std::numbers::pi) t -= 2.0 * std::numbers::pi;
        while (t <= -std::numbers::pi) t += 2.0 * std::numbers::pi;
        return t;
    }

    std::vector<double> render() {
        std::vector<double> px(256, 0.0);
        // rod from the pivot at the image center to the mass at unit radius
        const double tipx = std::sin(theta_);
        const double tipy = std::cos(theta_);
        const double span = 1.4;
        for (int row = 0; row < 16; ++row) {
            for (int col = 0; col < 16; ++col) {
                double X = -span + 2.0 * span * (col + 0.5) / 16.0;
                double Y = span - 2.0 * span * (row + 0.5) / 16.0;
                // distance from (X, Y) to the segment (0,0)-(tipx,tipy)
                double t = clip(X * tipx + Y * tipy, 0.0, 1.0);
                double dx = X - t * tipx;
                double dy = Y - t * tipy;
                double d2 = dx * dx + dy * dy;
                px[row * 16 + col] = std::exp(-d2 / (2.0 * 0.02));
            }
        }
        if (spec_.obs_noise_std > 0.0) {
            for (auto& p : px)
                p = clip(p + spec_.obs_noise_std * rng_.normal(), 0.0, 1.0);
        }
        return px;
    }

    EnvSpec spec_;
    Rng rng_;
    double theta_ = 0.0, omega_ = 0.0;
    int steps_ = 0;
    bool done_ = false;
};

Episode run_expert_episode(Env& env, ExpertQuality quality, uint64_t seed) {
    const EnvSpec& spec = env.spec();
    Episode ep;
    ep.length = spec.episode_length;
    ep.obs_dim = spec.obs_dim;
    ep.action_dim = spec.action_dim;
    ep.observations.reserve(static_cast<size_t>(ep.length) * ep.obs_dim);
    ep.actions.reserve(static_cast<size_t>(ep.length) * ep.action_dim);
    ep.rewards.reserve(static_cast<size_t>(ep.length));
    env.reset(seed);
    for (int t = 0; t < spec.episode_length; ++t) {
        auto a = env.expert_action(quality);
        Transition tr = env.step(a);
        ep.observations.insert(ep.observations.end(), tr.obs.begin(), tr.obs.end());
        ep.actions.insert(ep.actions.end(), tr.action.begin(), tr.action.end());
        ep.rewards.push_back(tr.reward);
    }
    return ep;
}

ExpertStats stats_of(const std::vector<double>& returns) {
    ExpertStats st;
    st.episodes = static_cast<int>(returns.size());
    for (double r : returns) st.mean_return += r;
    st.mean_return /= std::max<size_t>(1, returns.size());
    for (double r : returns)
        st.std_return += (r - st.mean_return) * (r - st.mean_return);
    st.std_return = std::sqrt(st.std_return / std::max<size_t>(1, returns.size()));
    return st;
}

} // namespace

std::unique_ptr<Env> make_env(const EnvSpec& spec) {
    spec.validate();
    if (spec.name == "pointmass") return std::make_unique<PointMass1D>(spec);
    return std::make_unique<PendulumPixels>(spec);
}

ExpertStats gen_expert_dataset(const EnvSpec& spec, ExpertQuality quality,
                               int n_episodes, uint64_t seed,
                               const std::string& path, bool force) {
    if (n_episodes < 1) throw ConfigError("gen_expert_dataset: n must be >= 1");
    if (!force && std::filesystem::exists(path))
        throw IoError("refusing to overwrite existing file: " + path +
                      " (use force)");
    auto env = make_env(spec);
    std::vector<Episode> episodes;
    std::vector<double> returns;
    episodes.reserve(static_cast<size_t>(n_episodes));
    for (int i = 0; i < n_episodes; ++i) {
        episodes.push_back(
            run_expert_episode(*env, quality, mix_seed(seed, 7100 + i)));
        returns.push_back(episodes.back().total_return());
    }
    write_episode_file(path, spec, seed, episodes);
    return stats_of(returns);
}

ExpertStats measure_expert(const EnvSpec& spec, ExpertQuality quality,
                           int n_episodes, uint64_t seed) {
    auto env = make_env(spec);
    std::vector<double> returns;
    for (int i = 0; i < n_episodes; ++i) {
        Episode ep = run_expert_episode(*env, quality, mix_seed(seed, 7100 + i));
        returns.push_back(ep.total_return());
    }
    return stats_of(returns);
}

} // namespace fenet
