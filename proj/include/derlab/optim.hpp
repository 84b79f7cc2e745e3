#pragma once

#include <vector>

#include "derlab/param_store.hpp"

namespace derlab {

// SGD with momentum, L2 added to the gradient, and a warmup-then-step-decay
// schedule. Warmup ramps linearly from base_lr / warmup_epochs to
// warmup_end_lr over warmup_epochs epochs; afterwards the rate is
// warmup_end_lr scaled by decay_factor once per passed decay epoch.
struct SgdConfig {
    double base_lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    int warmup_epochs = 0;
    double warmup_end_lr = 0.1;
    std::vector<int> decay_epochs;
    double decay_factor = 0.1;

    void validate() const;
};

double lr_at(const SgdConfig& cfg, int epoch);

// Applies one update to every parameter the last backward pass reached.
// Gate parameters get plain SGD (their gradients are already compensated);
// everything else uses the momentum buffer with weight decay. Consumes and
// clears the pending gradients.
void sgd_step(ParamStore& ps, const SgdConfig& cfg, double lr);

}  // namespace derlab
