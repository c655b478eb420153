#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "fenet/replay.hpp"
#include "fenet/rssm.hpp"

namespace fenet {

// Loss weights and clips. Defaults are the reference settings: reward-related
// terms scaled by 100, the policy-prior likelihood by 10, the state KL floored
// at 3 free nats and the policy KL floored at 0.6.
struct LossScales {
    double reward_scale = 100.0;
    double policy_prior_scale = 10.0;
    double free_nats = 3.0;
    double policy_kl_floor = 0.6;
    double gamma = 0.99;
    int n_imagine_samples = 1;
};

// Named scalar terms of one loss evaluation, averaged over the post-burn-in
// window (and later over the batch). Raw KL values are pre-clip; the totals
// reconstruct from the parts through the documented weights.
struct LossBreakdown {
    double obs_nll = 0.0;
    double policy_prior_nll = 0.0; // unscaled
    double reward_nll = 0.0;       // unscaled; agent chunks only
    double state_kl_raw = 0.0;
    double state_kl_clipped = 0.0;
    double obs_entropy_const = 0.0; // constant under unit-std likelihoods
    double policy_kl_raw = 0.0;
    double policy_kl_clipped = 0.0;
    double epistemic_kl = 0.0;
    double expected_reward = 0.0;
    double value_bootstrap = 0.0;
    double value_loss = 0.0;
    double total_il = 0.0;
    double total_rl = 0.0;

    double il_from_parts(const LossScales& s) const {
        return obs_nll + s.policy_prior_scale * policy_prior_nll +
               state_kl_clipped + obs_entropy_const + policy_kl_clipped;
    }

    double rl_from_parts(const LossScales& s) const {
        return obs_nll + s.policy_prior_scale * policy_prior_nll +
               s.reward_scale * reward_nll + state_kl_clipped - epistemic_kl -
               s.reward_scale * expected_reward + policy_kl_clipped +
               value_bootstrap;
    }

    void accumulate(const LossBreakdown& other) {
        obs_nll += other.obs_nll;
        policy_prior_nll += other.policy_prior_nll;
        reward_nll += other.reward_nll;
        state_kl_raw += other.state_kl_raw;
        state_kl_clipped += other.state_kl_clipped;
        obs_entropy_const += other.obs_entropy_const;
        policy_kl_raw += other.policy_kl_raw;
        policy_kl_clipped += other.policy_kl_clipped;
        epistemic_kl += other.epistemic_kl;
        expected_reward += other.expected_reward;
        value_bootstrap += other.value_bootstrap;
        value_loss += other.value_loss;
        total_il += other.total_il;
        total_rl += other.total_rl;
    }

    void scale_by(double f) {
        obs_nll *= f;
        policy_prior_nll *= f;
        reward_nll *= f;
        state_kl_raw *= f;
        state_kl_clipped *= f;
        obs_entropy_const *= f;
        policy_kl_raw *= f;
        policy_kl_clipped *= f;
        epistemic_kl *= f;
        expected_reward *= f;
        value_bootstrap *= f;
        value_loss *= f;
        total_il *= f;
        total_rl *= f;
    }
};

template <typename T>
struct ChunkLoss {
    Var<T> total;      // the full objective (reported and fd-checked)
    // RL only: total split into the likelihood part (trains theta, phi) and
    // the expected-free-energy part (trains psi). IL keeps a single root.
    Var<T> model_root;
    Var<T> actor_root;
    bool split_roots = false;
    Var<T> value_loss; // value objective; gradients reach omega only
    bool has_value = false;
    LossBreakdown breakdown;
};

namespace detail {

template <typename T>
struct WindowAccum {
    Tape<T>* tape;
    Var<T> acc;
    bool any = false;

    explicit WindowAccum(Tape<T>& t) : tape(&t) {}
    void add(Var<T> v) {
        acc = any ? tape->add(acc, v) : v;
        any = true;
    }
};

// Runs the filter over the training window, calling `per_step` with the
// filtered state and the window-local step index.
template <typename T, typename Fn>
void filter_window(Tape<T>& tape, ParamBind<T>& bind, const Rssm<T>& rssm,
                   const EpisodeChunk& chunk, NoiseSource<T>& noise,
                   Fn&& per_step) {
    const NetConfig& c = rssm.config();
    if (chunk.obs_dim != c.obs_dim || chunk.action_dim != c.action_dim)
        throw DimensionError("chunk dimensions do not match the nets");
    if (chunk.length < chunk.burn_in + 2)
        throw ContractError("chunk shorter than burn_in + 2");

    LatentState<T> state = rssm.burn_in(tape, chunk.observations, chunk.actions,
                                        chunk.burn_in, chunk.length, noise);
    std::vector<double> zero_action(static_cast<size_t>(c.action_dim), 0.0);
    for (int i = chunk.burn_in; i < chunk.length; ++i) {
        std::span<const double> a_prev =
            i == 0 ? std::span<const double>(zero_action) : chunk.action_at(i - 1);
        state = rssm.observe_step(bind, state, leaf_from_double(tape, a_prev),
                                  leaf_from_double(tape, chunk.obs_at(i)), noise);
        per_step(state, i);
    }
}

inline double entropy_const_per_dim() {
    return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
}

} // namespace detail

// F_t for one filtered step: observation and policy-prior likelihood terms
// under the single posterior sample, plus the state KL clamped from below by
// the free-nats floor (no gradient under the floor).
template <typename T>
struct StepFreeEnergy {
    Var<T> total;
    double obs_nll, policy_prior_nll, state_kl_raw, state_kl_clipped;
};

template <typename T>
StepFreeEnergy<T> free_energy_t(ParamBind<T>& bind, const Rssm<T>& rssm,
                                const LatentState<T>& state,
                                std::span<const double> o_t,
                                std::span<const double> a_t,
                                const LossScales& scales) {
    if (!state.has_posterior)
        throw ContractError("free_energy_t: state has no posterior");
    Tape<T>& t = bind.tape();
    FenetNets<T>& nets = rssm.nets();

    Var<T> obs_nll = gaussian_nll(leaf_from_double(t, o_t),
                                  nets.obs_dist(bind, state.u, state.h));
    Var<T> pp_nll = gaussian_nll(leaf_from_double(t, a_t),
                                 nets.policy_prior(bind, state.u, state.h));
    Var<T> kl_raw = kl_diag_gaussian(state.posterior, state.prior);
    Var<T> kl_clip = t.clamp_min(kl_raw, static_cast<T>(scales.free_nats));

    StepFreeEnergy<T> out{};
    out.total = t.add(t.add(obs_nll,
                            t.scale(pp_nll, static_cast<T>(scales.policy_prior_scale))),
                      kl_clip);
    out.obs_nll = static_cast<double>(t.value0(obs_nll));
    out.policy_prior_nll = static_cast<double>(t.value0(pp_nll));
    out.state_kl_raw = static_cast<double>(t.value0(kl_raw));
    out.state_kl_clipped = static_cast<double>(t.value0(kl_clip));
    return out;
}

// G^IL at t+1 from one imagined transition: the (constant) decoder entropy
// plus the posterior/prior policy KL at the imagined state, clamped from
// below by the policy-KL floor.
template <typename T>
struct StepExpectedIl {
    Var<T> total;
    double policy_kl_raw, policy_kl_clipped, obs_entropy_const;
};

template <typename T>
StepExpectedIl<T> expected_fe_il(ParamBind<T>& bind, const Rssm<T>& rssm,
                                 const LatentState<T>& state,
                                 const LossScales& scales,
                                 NoiseSource<T>& noise) {
    Tape<T>& t = bind.tape();
    FenetNets<T>& nets = rssm.nets();
    const int k = std::max(1, scales.n_imagine_samples);
    detail::WindowAccum<T> acc(t);
    double kl_raw_sum = 0.0, kl_clip_sum = 0.0;
    for (int s = 0; s < k; ++s) {
        ImaginedTransition<T> tr = rssm.imagine_transition(bind, state, noise);
        DiagGaussianVar<T> post = nets.policy_posterior(bind, tr.next.u, tr.next.h);
        DiagGaussianVar<T> prior = nets.policy_prior(bind, tr.next.u, tr.next.h);
        Var<T> kl_raw = kl_diag_gaussian(post, prior);
        Var<T> kl_clip = t.clamp_min(kl_raw, static_cast<T>(scales.policy_kl_floor));
        acc.add(kl_clip);
        kl_raw_sum += static_cast<double>(t.value0(kl_raw));
        kl_clip_sum += static_cast<double>(t.value0(kl_clip));
    }
    StepExpectedIl<T> out{};
    out.obs_entropy_const = rssm.config().obs_dim * detail::entropy_const_per_dim();
    out.total = t.add_const(t.scale(acc.acc, static_cast<T>(1.0 / k)),
                            static_cast<T>(out.obs_entropy_const));
    out.policy_kl_raw = kl_raw_sum / k;
    out.policy_kl_clipped = kl_clip_sum / k;
    return out;
}

// G^RL at t+1 plus the discounted target-value bootstrap at t+2:
//   -KL(q(u|h, o_imagined) || prior) - reward_scale * r_hat
//   + clamp(policy KL, floor) + gamma * V_targ(u_{t+2}).
// The value pair for the value regression is returned alongside.
template <typename T>
struct StepExpectedRl {
    Var<T> total;          // includes the bootstrap exactly once
    Var<T> value_pred;     // V_omega(stop_gradient(u_{t+1}))
    Var<T> value_target;   // stop_gradient(G_rl + bootstrap)
    double policy_kl_raw, policy_kl_clipped;
    double epistemic_kl, expected_reward, value_bootstrap;
};

template <typename T>
StepExpectedRl<T> expected_fe_rl(ParamBind<T>& bind, const Rssm<T>& rssm,
                                 const LatentState<T>& state,
                                 const LossScales& scales,
                                 NoiseSource<T>& noise) {
    Tape<T>& t = bind.tape();
    FenetNets<T>& nets = rssm.nets();
    const int k = std::max(1, scales.n_imagine_samples);
    detail::WindowAccum<T> g_acc(t), pred_acc(t), targ_acc(t);
    StepExpectedRl<T> out{};
    for (int s = 0; s < k; ++s) {
        ImaginedStep<T> one = rssm.imagine_step(bind, state, noise);
        // the outer expectation over q(o_{t+1}) is taken at the decoder mean:
        // unit-std pixel samples swamp desk-scale observations and let the
        // actor chase posterior noise instead of information gain
        DiagGaussianVar<T> post_im =
            nets.state_posterior(bind, one.next.h, one.obs_mean);
        Var<T> epi = kl_diag_gaussian(post_im, one.next.prior);

        DiagGaussianVar<T> pol_post =
            nets.policy_posterior(bind, one.next.u, one.next.h);
        DiagGaussianVar<T> pol_prior =
            nets.policy_prior(bind, one.next.u, one.next.h);
        Var<T> pkl_raw = kl_diag_gaussian(pol_post, pol_prior);
        Var<T> pkl_clip =
            t.clamp_min(pkl_raw, static_cast<T>(scales.policy_kl_floor));

        ImaginedTransition<T> two = rssm.imagine_transition(bind, one.next, noise);
        Var<T> vtarg =
            t.stop_gradient(nets.value_target(bind, two.next.u, two.next.h));
        Var<T> bootstrap = t.scale(vtarg, static_cast<T>(scales.gamma));

        Var<T> g_core = t.add(
            t.sub(t.neg(epi), t.scale(one.reward, static_cast<T>(scales.reward_scale))),
            pkl_clip);
        g_acc.add(t.add(g_core, bootstrap));

        Var<T> v_in_u = t.stop_gradient(one.next.u);
        Var<T> v_in_h = t.stop_gradient(one.next.h);
        pred_acc.add(nets.value(bind, v_in_u, v_in_h));
        targ_acc.add(t.stop_gradient(t.add(g_core, bootstrap)));

        out.epistemic_kl += static_cast<double>(t.value0(epi));
        out.expected_reward += static_cast<double>(t.value0(one.reward));
        out.policy_kl_raw += static_cast<double>(t.value0(pkl_raw));
        out.policy_kl_clipped += static_cast<double>(t.value0(pkl_clip));
        out.value_bootstrap += static_cast<double>(t.value0(bootstrap));
    }
    const T inv_k = static_cast<T>(1.0 / k);
    out.total = t.scale(g_acc.acc, inv_k);
    out.value_pred = t.scale(pred_acc.acc, inv_k);
    out.value_target = t.scale(targ_acc.acc, inv_k);
    out.epistemic_kl /= k;
    out.expected_reward /= k;
    out.policy_kl_raw /= k;
    out.policy_kl_clipped /= k;
    out.value_bootstrap /= k;
    return out;
}

// F_IL over one chunk: mean over the post-burn-in window of
// F_t + G^IL_{t+1}. Carries no value-network term at all.
template <typename T>
ChunkLoss<T> build_loss_il(Tape<T>& tape, ParamBind<T>& bind, const Rssm<T>& rssm,
                           const EpisodeChunk& chunk, const LossScales& scales,
                           NoiseSource<T>& noise) {
    detail::WindowAccum<T> acc(tape);
    LossBreakdown bd{};
    int steps = 0;
    detail::filter_window(tape, bind, rssm, chunk, noise,
                          [&](const LatentState<T>& state, int i) {
        StepFreeEnergy<T> fe = free_energy_t(bind, rssm, state, chunk.obs_at(i),
                                             chunk.action_at(i), scales);
        StepExpectedIl<T> g = expected_fe_il(bind, rssm, state, scales, noise);
        acc.add(tape.add(fe.total, g.total));
        bd.obs_nll += fe.obs_nll;
        bd.policy_prior_nll += fe.policy_prior_nll;
        bd.state_kl_raw += fe.state_kl_raw;
        bd.state_kl_clipped += fe.state_kl_clipped;
        bd.obs_entropy_const += g.obs_entropy_const;
        bd.policy_kl_raw += g.policy_kl_raw;
        bd.policy_kl_clipped += g.policy_kl_clipped;
        ++steps;
    });
    ChunkLoss<T> out;
    out.total = tape.scale(acc.acc, static_cast<T>(1.0 / steps));
    out.model_root = out.total;
    bd.scale_by(1.0 / steps);
    bd.total_il = static_cast<double>(tape.value0(out.total));
    out.breakdown = bd;
    return out;
}

// F_RL over one chunk: mean over the window of F_t + G^RL_{t+1} +
// gamma * V_targ(u_{t+2}), plus the reward likelihood against r_{t-1}
// (normalized over the steps that carry one) and the value regression
// against stop_gradient(G^RL + bootstrap).
template <typename T>
ChunkLoss<T> build_loss_rl(Tape<T>& tape, ParamBind<T>& bind, const Rssm<T>& rssm,
                           const EpisodeChunk& chunk, const LossScales& scales,
                           NoiseSource<T>& noise) {
    if (!chunk.has_rewards)
        throw ContractError("build_loss_rl: agent chunk carries no rewards");
    detail::WindowAccum<T> facc(tape), gacc(tape), racc(tape), vacc(tape);
    LossBreakdown bd{};
    FenetNets<T>& nets = rssm.nets();
    int steps = 0, reward_terms = 0;
    detail::filter_window(tape, bind, rssm, chunk, noise,
                          [&](const LatentState<T>& state, int i) {
        StepFreeEnergy<T> fe = free_energy_t(bind, rssm, state, chunk.obs_at(i),
                                             chunk.action_at(i), scales);
        StepExpectedRl<T> g = expected_fe_rl(bind, rssm, state, scales, noise);
        facc.add(fe.total);
        gacc.add(g.total);
        vacc.add(tape.square(tape.sub(g.value_target, g.value_pred)));

        double r_prev = 0.0;
        if (chunk.reward_before(i, r_prev)) {
            std::vector<double> r = {r_prev};
            Var<T> r_nll = gaussian_nll(leaf_from_double(tape, r),
                                        nets.reward_dist(bind, state.u, state.h));
            racc.add(r_nll);
            bd.reward_nll += static_cast<double>(tape.value0(r_nll));
            ++reward_terms;
        }

        bd.obs_nll += fe.obs_nll;
        bd.policy_prior_nll += fe.policy_prior_nll;
        bd.state_kl_raw += fe.state_kl_raw;
        bd.state_kl_clipped += fe.state_kl_clipped;
        bd.policy_kl_raw += g.policy_kl_raw;
        bd.policy_kl_clipped += g.policy_kl_clipped;
        bd.epistemic_kl += g.epistemic_kl;
        bd.expected_reward += g.expected_reward;
        bd.value_bootstrap += g.value_bootstrap;
        ++steps;
    });
    ChunkLoss<T> out;
    out.model_root = tape.scale(facc.acc, static_cast<T>(1.0 / steps));
    out.actor_root = tape.scale(gacc.acc, static_cast<T>(1.0 / steps));
    out.value_loss = tape.scale(vacc.acc, static_cast<T>(1.0 / steps));
    out.has_value = true;
    out.split_roots = true;
    double rn_sum = bd.reward_nll;
    bd.scale_by(1.0 / steps);
    if (reward_terms > 0) {
        out.model_root = tape.add(
            out.model_root,
            tape.scale(racc.acc,
                       static_cast<T>(scales.reward_scale / reward_terms)));
        bd.reward_nll = rn_sum / reward_terms;
    } else {
        bd.reward_nll = 0.0;
    }
    out.total = tape.add(out.model_root, out.actor_root);
    bd.value_loss = static_cast<double>(tape.value0(out.value_loss));
    bd.total_rl = static_cast<double>(tape.value0(out.total));
    out.breakdown = bd;
    return out;
}

} // namespace fenet
