#pragma once

#include <span>
#include <vector>

#include "fenet/nets.hpp"
#include "fenet/rng.hpp"
#include "fenet/tensor.hpp"

namespace fenet {

// Standard-normal noise for reparameterized samples. The zero variant freezes
// eps = 0, which turns every sample into its mean (deterministic rollouts).
template <typename T>
class NoiseSource {
public:
    explicit NoiseSource(uint64_t seed) : rng_(seed) {}

    static NoiseSource zero() {
        NoiseSource n(0);
        n.zero_ = true;
        return n;
    }

    Var<T> standard_normal(Tape<T>& t, int n) {
        std::vector<T> eps(static_cast<size_t>(n), T(0));
        if (!zero_) rng_.fill_normal(std::span<T>(eps));
        return t.leaf(Shape::vec(n), eps.data(), false);
    }

private:
    Rng rng_{0};
    bool zero_ = false;
};

template <typename T>
Var<T> leaf_from_double(Tape<T>& t, std::span<const double> data,
                        bool requires_grad = false) {
    std::vector<T> tmp(data.size());
    for (size_t i = 0; i < data.size(); ++i) tmp[i] = static_cast<T>(data[i]);
    return t.leaf(Shape::vec(static_cast<int>(data.size())), tmp.data(),
                  requires_grad);
}

// Latent state s_t = (u_t, h_t): deterministic recurrent part h, stochastic
// part u with its prior, and the posterior when an observation was filtered.
template <typename T>
struct LatentState {
    Var<T> h;
    Var<T> u;
    DiagGaussianVar<T> prior;
    bool has_posterior = false;
    DiagGaussianVar<T> posterior;
};

// Anchor action sampled at the previous state plus the next latent state
// with u drawn from the state prior.
template <typename T>
struct ImaginedTransition {
    Var<T> action; // tanh-squashed reparameterized policy sample
    LatentState<T> next;
};

// Full imagined step: the transition plus the decoded observation sample and
// the reward prediction at the next state.
template <typename T>
struct ImaginedStep {
    Var<T> action;
    LatentState<T> next;
    Var<T> obs_sample; // one draw from the unit-std decoder likelihood
    Var<T> obs_mean;
    Var<T> reward;     // reward head mean at the next state
};

template <typename T>
class Rssm {
public:
    explicit Rssm(FenetNets<T>& nets) : nets_(&nets) {}

    FenetNets<T>& nets() const { return *nets_; }
    const NetConfig& config() const { return nets_->config(); }

    static Var<T> reparam_sample(Tape<T>& t, const DiagGaussianVar<T>& d,
                                 Var<T> eps) {
        return t.add(d.mean, t.mul(d.std, eps));
    }

    // h = 0, u = 0, prior = N(0, 1).
    LatentState<T> initial_state(Tape<T>& t) const {
        const NetConfig& c = nets_->config();
        LatentState<T> s;
        s.h = t.zeros(Shape::vec(c.h_dim));
        s.u = t.zeros(Shape::vec(c.u_dim));
        std::vector<T> ones(static_cast<size_t>(c.u_dim), T(1));
        s.prior = {t.zeros(Shape::vec(c.u_dim)),
                   t.leaf(Shape::vec(c.u_dim), ones.data(), false)};
        return s;
    }

    // Filtering: h_t = f(h_{t-1}, u_{t-1}, a_{t-1}), prior = p(u_t|h_t),
    // posterior = q(u_t|h_t, o_t), u_t reparameterized from the posterior.
    LatentState<T> observe_step(ParamBind<T>& bind, const LatentState<T>& prev,
                                Var<T> a_prev, Var<T> o,
                                NoiseSource<T>& noise) const {
        Tape<T>& t = bind.tape();
        LatentState<T> s;
        s.h = nets_->transition(bind, prev.h, prev.u, a_prev);
        s.prior = nets_->state_prior(bind, s.h);
        s.posterior = nets_->state_posterior(bind, s.h, o);
        s.has_posterior = true;
        Var<T> eps = noise.standard_normal(t, nets_->config().u_dim);
        s.u = reparam_sample(t, s.posterior, eps);
        return s;
    }

    // Imagination: a ~ q_psi at the previous state (tanh of the
    // reparameterized sample keeps imagined actions in the executable range),
    // then h via the transition and u from the state prior.
    ImaginedTransition<T> imagine_transition(ParamBind<T>& bind,
                                             const LatentState<T>& prev,
                                             NoiseSource<T>& noise) const {
        Tape<T>& t = bind.tape();
        const NetConfig& c = nets_->config();
        ImaginedTransition<T> tr;
        DiagGaussianVar<T> pol = nets_->policy_posterior(bind, prev.u, prev.h);
        Var<T> a_eps = noise.standard_normal(t, c.action_dim);
        tr.action = t.tanh(reparam_sample(t, pol, a_eps));
        tr.next.h = nets_->transition(bind, prev.h, prev.u, tr.action);
        tr.next.prior = nets_->state_prior(bind, tr.next.h);
        Var<T> u_eps = noise.standard_normal(t, c.u_dim);
        tr.next.u = reparam_sample(t, tr.next.prior, u_eps);
        return tr;
    }

    // Full imagined step: the transition plus one observation sample from
    // p(o|u, h) and the reward prediction at the new state.
    ImaginedStep<T> imagine_step(ParamBind<T>& bind, const LatentState<T>& prev,
                                 NoiseSource<T>& noise) const {
        Tape<T>& t = bind.tape();
        const NetConfig& c = nets_->config();
        ImaginedTransition<T> tr = imagine_transition(bind, prev, noise);
        ImaginedStep<T> step;
        step.action = tr.action;
        step.next = tr.next;
        DiagGaussianVar<T> od = nets_->obs_dist(bind, step.next.u, step.next.h);
        step.obs_mean = od.mean;
        Var<T> o_eps = noise.standard_normal(t, c.obs_dim);
        step.obs_sample = reparam_sample(t, od, o_eps);
        step.reward = nets_->reward_dist(bind, step.next.u, step.next.h).mean;
        return step;
    }

    std::vector<ImaginedStep<T>> imagine_rollout(ParamBind<T>& bind,
                                                 const LatentState<T>& start,
                                                 int n, NoiseSource<T>& noise) const {
        std::vector<ImaginedStep<T>> out;
        out.reserve(static_cast<size_t>(n));
        const LatentState<T>* prev = &start;
        for (int i = 0; i < n; ++i) {
            out.push_back(imagine_step(bind, *prev, noise));
            prev = &out.back().next;
        }
        return out;
    }

    // Runs the filter over the first P steps of a chunk without recording
    // gradients, then re-imports the final state as constants on the target
    // tape. The training window that follows therefore receives exactly zero
    // gradient through the prefix. P = 0 returns initial_state().
    LatentState<T> burn_in(Tape<T>& t, std::span<const double> obs_flat,
                           std::span<const double> act_flat, int prefix_len,
                           int chunk_len, NoiseSource<T>& noise) const {
        const NetConfig& c = nets_->config();
        if (prefix_len >= chunk_len)
            throw ConfigError("burn_in: prefix must be shorter than the chunk");
        if (prefix_len < 0) throw ConfigError("burn_in: negative prefix");
        if (prefix_len == 0) return initial_state(t);

        Tape<T> scratch;
        ParamBind<T> bind(scratch, false);
        LatentState<T> s = initial_state(scratch);
        std::vector<double> zero_action(static_cast<size_t>(c.action_dim), 0.0);
        for (int i = 0; i < prefix_len; ++i) {
            std::span<const double> a_prev =
                i == 0 ? std::span<const double>(zero_action)
                       : act_flat.subspan(static_cast<size_t>((i - 1) * c.action_dim),
                                          static_cast<size_t>(c.action_dim));
            auto o = leaf_from_double(scratch,
                                      obs_flat.subspan(static_cast<size_t>(i * c.obs_dim),
                                                       static_cast<size_t>(c.obs_dim)));
            s = observe_step(bind, s, leaf_from_double(scratch, a_prev), o, noise);
        }

        LatentState<T> out;
        auto reimport = [&](Var<T> v) {
            auto vals = scratch.values(v);
            return t.leaf(scratch.shape(v), vals.data(), false);
        };
        out.h = reimport(s.h);
        out.u = reimport(s.u);
        out.prior = {reimport(s.prior.mean), reimport(s.prior.std)};
        out.posterior = {reimport(s.posterior.mean), reimport(s.posterior.std)};
        out.has_posterior = true;
        return out;
    }

private:
    FenetNets<T>* nets_;
};

// Persistent filter for acting in the environment: keeps (h, u) as plain
// values between env steps and runs each update on a throwaway tape.
template <typename T>
class OnlineFilter {
public:
    explicit OnlineFilter(FenetNets<T>& nets) : nets_(&nets) { reset(); }

    void reset() {
        h_.assign(static_cast<size_t>(nets_->config().h_dim), T(0));
        u_.assign(static_cast<size_t>(nets_->config().u_dim), T(0));
    }

    // Filter one transition and return the policy posterior mean (pre-squash).
    std::vector<double> step(std::span<const double> a_prev,
                             std::span<const double> obs, NoiseSource<T>& noise) {
        Tape<T> t;
        ParamBind<T> bind(t, false);
        Rssm<T> rssm(*nets_);
        LatentState<T> prev;
        prev.h = t.leaf(Shape::vec(static_cast<int>(h_.size())), h_.data(), false);
        prev.u = t.leaf(Shape::vec(static_cast<int>(u_.size())), u_.data(), false);
        LatentState<T> s = rssm.observe_step(bind, prev,
                                             leaf_from_double(t, a_prev),
                                             leaf_from_double(t, obs), noise);
        auto hv = t.values(s.h);
        auto uv = t.values(s.u);
        h_.assign(hv.begin(), hv.end());
        u_.assign(uv.begin(), uv.end());
        auto mean = t.values(nets_->policy_posterior(bind, s.u, s.h).mean);
        return std::vector<double>(mean.begin(), mean.end());
    }

    std::span<const T> h() const { return h_; }
    std::span<const T> u() const { return u_; }

private:
    FenetNets<T>* nets_;
    std::vector<T> h_, u_;
};

} // namespace fenet
