#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fenet/errors.hpp"
#include "fenet/rng.hpp"
#include "fenet/tensor.hpp"

namespace fenet {

enum class RnnKind { gru, linear };

struct NetConfig {
    int obs_dim = 16;
    int action_dim = 1;
    int u_dim = 8;
    int h_dim = 16;
    int hidden_width = 200;
    int hidden_depth = 3;
    double min_std = 0.1;
    bool value_on_uh = false;
    RnnKind rnn = RnnKind::gru; // linear cell exists for diagnostics/filter checks

    void validate() const {
        if (obs_dim < 1 || action_dim < 1 || u_dim < 1 || h_dim < 1 ||
            hidden_width < 1 || hidden_depth < 0)
            throw ConfigError("net config: all dimensions must be >= 1");
        if (!(min_std > 0.0))
            throw ConfigError("net config: min_std must be positive");
    }
};

// Named parameters, created in a fixed order so that iteration, checkpoints
// and gradient reduction are all deterministic.
template <typename T>
class ParamStore {
public:
    Param<T>& create(const std::string& name, Shape shape) {
        if (index_.count(name)) throw ConfigError("duplicate parameter: " + name);
        params_.push_back(std::make_unique<Param<T>>(name, shape));
        index_[name] = params_.back().get();
        return *params_.back();
    }

    Param<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return *it->second;
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Param<T>*> group(std::string_view prefix) const {
        std::vector<Param<T>*> out;
        for (const auto& p : params_)
            if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
        return out;
    }

    std::vector<Param<T>*> all() const {
        std::vector<Param<T>*> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.get());
        return out;
    }

    size_t count() const { return params_.size(); }

private:
    std::vector<std::unique_ptr<Param<T>>> params_;
    std::unordered_map<std::string, Param<T>*> index_;
};

// omega_targ <- rho * omega_targ + (1 - rho) * omega, elementwise.
template <typename T>
void polyak_update(std::span<Param<T>* const> target,
                   std::span<Param<T>* const> source, T rho) {
    if (target.size() != source.size())
        throw DimensionError("polyak_update: group size mismatch");
    if (!(rho >= T(0) && rho <= T(1)))
        throw DomainError("polyak_update: rho must be in [0, 1]");
    for (size_t i = 0; i < target.size(); ++i) {
        Param<T>& t = *target[i];
        const Param<T>& s = *source[i];
        if (!(t.shape == s.shape))
            throw DimensionError("polyak_update: shape mismatch at " + t.name);
        for (size_t j = 0; j < t.value.size(); ++j)
            t.value[j] = rho * t.value[j] + (T(1) - rho) * s.value[j];
    }
}

namespace detail {

template <typename T>
struct Linear {
    Param<T>* W = nullptr;
    Param<T>* b = nullptr;

    Var<T> operator()(ParamBind<T>& bind, Var<T> x) const {
        Tape<T>& t = bind.tape();
        return t.add(t.matmul(bind(*W), x), bind(*b));
    }
};

template <typename T>
Linear<T> make_linear(ParamStore<T>& store, const std::string& name, int in,
                      int out, uint64_t seed, double w_scale) {
    Linear<T> l;
    l.W = &store.create(name + ".W", Shape::mat(out, in));
    l.b = &store.create(name + ".b", Shape::vec(out));
    Rng rng(mix_seed(seed, hash_name(name + ".W")));
    for (auto& v : l.W->value) v = static_cast<T>(rng.normal() * w_scale);
    return l;
}

// Dense trunk with ReLU activations plus one or two affine output blocks.
// Stochastic heads emit (mean, softplus(raw) + min_std); deterministic heads
// emit the mean only and use a fixed unit stddev where a distribution is
// needed for likelihoods and KLs.
template <typename T>
struct MlpHead {
    std::vector<Linear<T>> hidden;
    Linear<T> mean_out;
    Linear<T> std_out;
    bool stochastic = false;
    T min_std = T(0);
    int out_dim = 0;

    Var<T> trunk(ParamBind<T>& bind, Var<T> x) const {
        Tape<T>& t = bind.tape();
        Var<T> h = x;
        for (const auto& l : hidden) h = t.relu(l(bind, h));
        return h;
    }

    Var<T> mean(ParamBind<T>& bind, Var<T> x) const {
        return mean_out(bind, trunk(bind, x));
    }

    DiagGaussianVar<T> dist(ParamBind<T>& bind, Var<T> x) const {
        Tape<T>& t = bind.tape();
        Var<T> h = trunk(bind, x);
        Var<T> mu = mean_out(bind, h);
        if (!stochastic) {
            std::vector<T> ones(static_cast<size_t>(out_dim), T(1));
            return {mu, t.leaf(Shape::vec(out_dim), ones.data(), false)};
        }
        Var<T> raw = std_out(bind, h);
        Var<T> sd = t.add_const(t.softplus(raw), min_std);
        return {mu, sd};
    }
};

template <typename T>
MlpHead<T> make_head(ParamStore<T>& store, const std::string& name, int in,
                     int out, const NetConfig& cfg, uint64_t seed,
                     bool stochastic) {
    MlpHead<T> head;
    head.stochastic = stochastic;
    head.min_std = static_cast<T>(cfg.min_std);
    head.out_dim = out;
    int w = cfg.hidden_width;
    int prev = in;
    for (int i = 0; i < cfg.hidden_depth; ++i) {
        double s = std::sqrt(2.0 / prev);
        head.hidden.push_back(make_linear<T>(store, name + ".l" + std::to_string(i),
                                             prev, w, seed, s));
        prev = w;
    }
    double out_scale = 0.1 / std::sqrt(static_cast<double>(prev));
    head.mean_out = make_linear<T>(store, name + ".mean", prev, out, seed, out_scale);
    if (stochastic)
        head.std_out = make_linear<T>(store, name + ".std", prev, out, seed, out_scale);
    return head;
}

template <typename T>
struct GruCell {
    Param<T>*Wz, *Uz, *bz, *Wr, *Ur, *br, *Wc, *Uc, *bc;

    // Standard gated update; with all-zero parameters this halves h.
    Var<T> operator()(ParamBind<T>& bind, Var<T> h, Var<T> x) const {
        Tape<T>& t = bind.tape();
        auto affine = [&](Param<T>* W, Param<T>* U, Param<T>* b, Var<T> hh) {
            return t.add(t.add(t.matmul(bind(*W), x), t.matmul(bind(*U), hh)),
                         bind(*b));
        };
        Var<T> z = t.sigmoid(affine(Wz, Uz, bz, h));
        Var<T> r = t.sigmoid(affine(Wr, Ur, br, h));
        Var<T> cand = t.tanh(t.add(
            t.add(t.matmul(bind(*Wc), x), t.matmul(bind(*Uc), t.mul(r, h))),
            bind(*bc)));
        Var<T> keep = t.mul(t.add_const(t.neg(z), T(1)), h);
        return t.add(keep, t.mul(z, cand));
    }
};

template <typename T>
GruCell<T> make_gru(ParamStore<T>& store, const std::string& name, int h_dim,
                    int in_dim, uint64_t seed) {
    GruCell<T> g;
    auto mat = [&](const char* suffix, int rows, int cols, Param<T>*& slot) {
        std::string pname = name + "." + suffix;
        slot = &store.create(pname, Shape::mat(rows, cols));
        Rng rng(mix_seed(seed, hash_name(pname)));
        double s = std::sqrt(1.0 / cols);
        for (auto& v : slot->value) v = static_cast<T>(rng.normal() * s);
    };
    auto vec = [&](const char* suffix, int n, Param<T>*& slot) {
        slot = &store.create(name + "." + std::string(suffix), Shape::vec(n));
    };
    mat("Wz", h_dim, in_dim, g.Wz); mat("Uz", h_dim, h_dim, g.Uz); vec("bz", h_dim, g.bz);
    mat("Wr", h_dim, in_dim, g.Wr); mat("Ur", h_dim, h_dim, g.Ur); vec("br", h_dim, g.br);
    mat("Wc", h_dim, in_dim, g.Wc); mat("Uc", h_dim, h_dim, g.Uc); vec("bc", h_dim, g.bc);
    return g;
}

} // namespace detail

// All parameterized functions of the agent: the recurrent transition, the
// state prior/posterior, observation/reward likelihood heads, policy prior
// and posterior heads, and the value pair. Parameter groups:
//   theta     -- transition + state prior + obs/reward likelihoods + policy prior
//   phi       -- state posterior
//   psi       -- policy posterior
//   omega     -- value network
//   omega_targ-- target value network (never trained directly)
template <typename T>
class FenetNets {
public:
    FenetNets(const NetConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        const int uh = cfg_.u_dim + cfg_.h_dim;
        embed_ = detail::make_linear<T>(store_, "theta.embed",
                                        cfg_.u_dim + cfg_.action_dim,
                                        cfg_.hidden_width, seed,
                                        std::sqrt(2.0 / (cfg_.u_dim + cfg_.action_dim)));
        if (cfg_.rnn == RnnKind::gru) {
            gru_ = detail::make_gru<T>(store_, "theta.gru", cfg_.h_dim,
                                       cfg_.hidden_width, seed);
        } else {
            lin_h_ = detail::make_linear<T>(store_, "theta.trans_h", cfg_.h_dim,
                                            cfg_.h_dim, seed, 0.0);
            lin_u_ = detail::make_linear<T>(store_, "theta.trans_u", cfg_.u_dim,
                                            cfg_.h_dim, seed, 0.0);
            lin_a_ = detail::make_linear<T>(store_, "theta.trans_a", cfg_.action_dim,
                                            cfg_.h_dim, seed, 0.0);
        }
        prior_ = detail::make_head<T>(store_, "theta.prior", cfg_.h_dim, cfg_.u_dim,
                                      cfg_, seed, true);
        obs_ = detail::make_head<T>(store_, "theta.obs", uh, cfg_.obs_dim, cfg_, seed,
                                    false);
        reward_ = detail::make_head<T>(store_, "theta.reward", uh, 1, cfg_, seed,
                                       false);
        policy_prior_ = detail::make_head<T>(store_, "theta.action", uh,
                                             cfg_.action_dim, cfg_, seed, false);
        posterior_ = detail::make_head<T>(store_, "phi.posterior",
                                          cfg_.h_dim + cfg_.obs_dim, cfg_.u_dim,
                                          cfg_, seed, true);
        policy_post_ = detail::make_head<T>(store_, "psi.action", uh,
                                            cfg_.action_dim, cfg_, seed, false);
        int vin = cfg_.value_on_uh ? uh : cfg_.u_dim;
        value_ = detail::make_head<T>(store_, "omega.value", vin, 1, cfg_, seed,
                                      false);
        value_targ_ = detail::make_head<T>(store_, "omega_targ.value", vin, 1, cfg_,
                                           seed, false);
        hard_copy_target();
    }

    const NetConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    std::vector<Param<T>*> group(std::string_view name) const {
        return store_.group(std::string(name) + ".");
    }

    // h_{t+1} = f(h_t, u_t, a_t); the GRU consumes one dense embedding of
    // (u_t, a_t), the linear cell consumes the raw vectors.
    Var<T> transition(ParamBind<T>& bind, Var<T> h, Var<T> u, Var<T> a) const {
        Tape<T>& t = bind.tape();
        if (cfg_.rnn == RnnKind::gru) {
            Var<T> e = t.relu(embed_(bind, t.concat(u, a)));
            return gru_(bind, h, e);
        }
        return t.add(t.add(lin_h_(bind, h), lin_u_(bind, u)), lin_a_(bind, a));
    }

    DiagGaussianVar<T> state_prior(ParamBind<T>& bind, Var<T> h) const {
        return prior_.dist(bind, h);
    }

    DiagGaussianVar<T> state_posterior(ParamBind<T>& bind, Var<T> h, Var<T> o) const {
        return posterior_.dist(bind, bind.tape().concat(h, o));
    }

    DiagGaussianVar<T> obs_dist(ParamBind<T>& bind, Var<T> u, Var<T> h) const {
        return obs_.dist(bind, bind.tape().concat(u, h));
    }

    DiagGaussianVar<T> reward_dist(ParamBind<T>& bind, Var<T> u, Var<T> h) const {
        return reward_.dist(bind, bind.tape().concat(u, h));
    }

    DiagGaussianVar<T> policy_prior(ParamBind<T>& bind, Var<T> u, Var<T> h) const {
        return policy_prior_.dist(bind, bind.tape().concat(u, h));
    }

    DiagGaussianVar<T> policy_posterior(ParamBind<T>& bind, Var<T> u, Var<T> h) const {
        return policy_post_.dist(bind, bind.tape().concat(u, h));
    }

    Var<T> value(ParamBind<T>& bind, Var<T> u, Var<T> h) const {
        return value_.mean(bind, value_input(bind, u, h));
    }

    Var<T> value_target(ParamBind<T>& bind, Var<T> u, Var<T> h) const {
        return value_targ_.mean(bind, value_input(bind, u, h));
    }

    void hard_copy_target() {
        auto src = group("omega");
        auto dst = group("omega_targ");
        polyak_update<T>(dst, src, T(0)); // rho = 0 copies exactly
    }

    void polyak_target(T rho) {
        auto src = group("omega");
        auto dst = group("omega_targ");
        polyak_update<T>(dst, src, rho);
    }

    // Test hook: overwrite every parameter with zeros.
    void zero_all() {
        for (Param<T>* p : store_.all())
            std::fill(p->value.begin(), p->value.end(), T(0));
    }

private:
    Var<T> value_input(ParamBind<T>& bind, Var<T> u, Var<T> h) const {
        if (cfg_.value_on_uh) return bind.tape().concat(u, h);
        return u;
    }

    NetConfig cfg_;
    ParamStore<T> store_;
    detail::Linear<T> embed_;
    detail::GruCell<T> gru_{};
    detail::Linear<T> lin_h_, lin_u_, lin_a_;
    detail::MlpHead<T> prior_, obs_, reward_, policy_prior_, posterior_,
        policy_post_, value_, value_targ_;
};

} // namespace fenet
