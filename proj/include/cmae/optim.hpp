#pragma once

#include "cmae/tensor.hpp"

#include <map>
#include <string>

namespace cmae {

/// Linear warmup to base_lr, then half-cosine decay to min_lr at total_steps.
struct LrSchedule {
    double base_lr = 1e-3;
    double min_lr = 0.0;
    long warmup_steps = 0;
    long total_steps = 1;
};

double lr_at(long step, const LrSchedule& schedule);

/// Adam with decoupled weight decay. Parameters flagged decay() == false
/// (biases, norms, tokens) skip the decay term.
class AdamW {
public:
    struct Moments {
        Matrix m;
        Matrix v;
    };

    AdamW(double beta1 = 0.9, double beta2 = 0.95, double weight_decay = 0.05, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {}

    void step(const ag::ParameterList& params, double lr);

    long steps() const { return steps_; }
    void set_steps(long steps) { steps_ = steps; }
    std::map<std::string, Moments>& moments() { return moments_; }
    const std::map<std::string, Moments>& moments() const { return moments_; }

private:
    double beta1_;
    double beta2_;
    double weight_decay_;
    double eps_;
    long steps_ = 0;
    std::map<std::string, Moments> moments_;
};

}  // namespace cmae
