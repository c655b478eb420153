#pragma once

#include <cmath>
#include <span>

#include "fenet/tensor.hpp"

namespace fenet {

// If the group's global gradient norm exceeds the ceiling, scale all its
// gradients down to the ceiling. Returns the pre-scaling norm.
template <typename T>
double apply_norm_ceiling(std::span<Param<T>* const> params, double ceiling) {
    double sq = 0.0;
    for (Param<T>* p : params)
        for (T g : p->grad) sq += static_cast<double>(g) * static_cast<double>(g);
    double norm = std::sqrt(sq);
    if (ceiling > 0.0 && norm > ceiling) {
        T f = static_cast<T>(ceiling / norm);
        for (Param<T>* p : params)
            for (T& g : p->grad) g *= f;
    }
    return norm;
}

// Adam with bias correction; one instance per parameter group so moment
// statistics never mix across groups.
template <typename T>
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::span<Param<T>* const> params) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (Param<T>* p : params) {
            if (p->m.empty()) {
                p->m.assign(p->value.size(), T(0));
                p->v.assign(p->value.size(), T(0));
            }
            for (size_t i = 0; i < p->value.size(); ++i) {
                double g = static_cast<double>(p->grad[i]);
                double m = beta1_ * static_cast<double>(p->m[i]) + (1.0 - beta1_) * g;
                double v = beta2_ * static_cast<double>(p->v[i]) + (1.0 - beta2_) * g * g;
                p->m[i] = static_cast<T>(m);
                p->v[i] = static_cast<T>(v);
                double update = lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
                p->value[i] = static_cast<T>(static_cast<double>(p->value[i]) - update);
            }
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

} // namespace fenet
