#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fenet/errors.hpp"

namespace fenet {

// Fixed metrics CSV schema; one row per update step and one per evaluation.
// Non-applicable fields stay empty.
inline constexpr const char* kMetricsHeader =
    "event_type,iteration,env_steps,eval_return_mean,eval_return_std,obs_nll,"
    "policy_prior_nll,state_kl,policy_kl,epistemic_kl,expected_reward,"
    "value_loss,grad_norm_theta,grad_norm_phi,grad_norm_psi,grad_norm_omega,"
    "wall_seconds";
inline constexpr int kMetricsColumns = 17;

struct UpdateRow {
    long long iteration = 0;
    long long env_steps = 0;
    double obs_nll = 0, policy_prior_nll = 0, state_kl = 0, policy_kl = 0;
    bool has_rl = false;
    double epistemic_kl = 0, expected_reward = 0, value_loss = 0;
    double grad_norm_theta = 0, grad_norm_phi = 0, grad_norm_psi = 0;
    bool has_value_update = false;
    double grad_norm_omega = 0;
    std::optional<double> wall_seconds;
};

struct EvalRow {
    long long iteration = 0;
    long long env_steps = 0;
    double return_mean = 0, return_std = 0;
    std::optional<double> wall_seconds;
};

class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path);
    void write(const UpdateRow& row);
    void write(const EvalRow& row);

private:
    std::ofstream out_;
};

// Tidy export: one (iteration, env_steps, eval_return_mean, eval_return_std)
// row per evaluation event. Validates the schema and throws IoError naming
// the offending row on any violation.
struct TidyEvalPoint {
    long long iteration = 0;
    long long env_steps = 0;
    double return_mean = 0, return_std = 0;
};

std::vector<TidyEvalPoint> validate_and_collect_evals(const std::string& path);
void write_tidy_csv(const std::string& path, const std::vector<TidyEvalPoint>& rows);

} // namespace fenet
