#include "cmae/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cmae {

double lr_at(long step, const LrSchedule& s) {
    step = std::clamp(step, 0L, s.total_steps);
    if (step < s.warmup_steps) return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    const long span = s.total_steps - s.warmup_steps;
    if (span <= 0) return s.base_lr;
    const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
    return s.min_lr + (s.base_lr - s.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(const ag::ParameterList& params, double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (const auto& np : params) {
        ag::Parameter& p = *np.param;
        auto [it, fresh] = moments_.try_emplace(np.name);
        Moments& mom = it->second;
        if (fresh) {
            mom.m = Matrix::Zero(p.value().rows(), p.value().cols());
            mom.v = Matrix::Zero(p.value().rows(), p.value().cols());
        }
        const Matrix& g = p.grad();
        mom.m = beta1_ * mom.m + (1.0 - beta1_) * g;
        mom.v = beta2_ * mom.v + (1.0 - beta2_) * g.cwiseProduct(g);
        if (p.decay() && weight_decay_ != 0.0) p.value() *= (1.0 - lr * weight_decay_);
        p.value().array() -= lr * (mom.m.array() / bc1) / ((mom.v.array() / bc2).sqrt() + eps_);
    }
}

}  // namespace cmae
