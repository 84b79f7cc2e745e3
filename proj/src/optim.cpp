#include "derlab/optim.hpp"

#include "derlab/errors.hpp"

namespace derlab {

void SgdConfig::validate() const {
    if (base_lr <= 0.0) throw InputError("sgd: base_lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw InputError("sgd: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw InputError("sgd: weight_decay must be >= 0");
    if (warmup_epochs < 0) throw InputError("sgd: warmup_epochs must be >= 0");
    if (warmup_end_lr <= 0.0) throw InputError("sgd: warmup_end_lr must be > 0");
    if (decay_factor <= 0.0 || decay_factor > 1.0)
        throw InputError("sgd: decay_factor must be in (0,1]");
    int prev = warmup_epochs;
    for (const int d : decay_epochs) {
        if (d <= prev)
            throw InputError("sgd: decay_epochs must be strictly increasing and after warmup");
        prev = d;
    }
}

double lr_at(const SgdConfig& cfg, int epoch) {
    if (epoch < cfg.warmup_epochs) {
        if (cfg.warmup_epochs == 1) return cfg.warmup_end_lr;
        const double start = cfg.base_lr / static_cast<double>(cfg.warmup_epochs);
        return start + (cfg.warmup_end_lr - start) * static_cast<double>(epoch) /
                           static_cast<double>(cfg.warmup_epochs - 1);
    }
    double lr = cfg.warmup_end_lr;
    for (const int d : cfg.decay_epochs) {
        if (epoch >= d) lr *= cfg.decay_factor;
    }
    return lr;
}

void sgd_step(ParamStore& ps, const SgdConfig& cfg, double lr) {
    for (const std::string& name : ps.pending_grads()) {
        if (ps.is_frozen(name)) continue;
        Tensor& p = ps.at(name);
        if (p.grad.size() != p.values.size())
            throw StateError("sgd: parameter " + name + " reached by backward has no gradient");
        if (ps.is_gate(name)) {
            for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] -= lr * p.grad[i];
        } else {
            std::vector<double>& v = ps.velocity(name);
            for (std::size_t i = 0; i < p.values.size(); ++i) {
                const double g = p.grad[i] + cfg.weight_decay * p.values[i];
                v[i] = cfg.momentum * v[i] + g;
                p.values[i] -= lr * v[i];
            }
        }
    }
    for (const std::string& name : ps.pending_grads()) ps.at(name).clear_grad();
    ps.clear_pending();
}

}  // namespace derlab
