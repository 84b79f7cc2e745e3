#pragma once

#include <map>
#include <set>
#include <string>

#include "derlab/tensor.hpp"

namespace derlab {

// Batch-norm running statistics. Kept apart from learnable parameters:
// they are updated by forward passes, not by the optimizer.
struct BnStats {
    std::vector<double> mean;
    std::vector<double> var;
    double momentum = 0.1;
    bool initialized = false;
};

// Named parameter map with freezing semantics. Frozen names are excluded
// from gradient accumulation and optimizer updates; frozen batch-norm
// entries keep their running statistics fixed. Gate parameters (channel
// mask logits) are updated with plain SGD: no momentum, no weight decay.
class ParamStore {
public:
    Tensor& create(const std::string& name, Tensor t) {
        auto [it, inserted] = params_.emplace(name, std::move(t));
        if (!inserted) throw StateError("parameter already exists: " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return params_.count(name) > 0; }

    Tensor& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw StateError("no such parameter: " + name);
        return it->second;
    }

    const Tensor& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw StateError("no such parameter: " + name);
        return it->second;
    }

    void erase(const std::string& name) {
        params_.erase(name);
        frozen_.erase(name);
        gates_.erase(name);
        pending_grads_.erase(name);
        velocity_.erase(name);
    }

    void freeze(const std::string& name) {
        if (!params_.count(name) && !bn_stats_.count(name))
            throw StateError("cannot freeze unknown name: " + name);
        frozen_.insert(name);
    }

    bool is_frozen(const std::string& name) const { return frozen_.count(name) > 0; }

    void mark_gate(const std::string& name) {
        if (!params_.count(name)) throw StateError("cannot mark unknown parameter: " + name);
        gates_.insert(name);
    }

    bool is_gate(const std::string& name) const { return gates_.count(name) > 0; }

    BnStats& create_bn(const std::string& name, std::size_t channels, double momentum) {
        auto [it, inserted] = bn_stats_.emplace(name, BnStats{});
        if (!inserted) throw StateError("bn stats already exist: " + name);
        it->second.mean.assign(channels, 0.0);
        it->second.var.assign(channels, 1.0);
        it->second.momentum = momentum;
        return it->second;
    }

    bool has_bn(const std::string& name) const { return bn_stats_.count(name) > 0; }

    BnStats& bn(const std::string& name) {
        auto it = bn_stats_.find(name);
        if (it == bn_stats_.end()) throw StateError("no such bn stats: " + name);
        return it->second;
    }

    const BnStats& bn(const std::string& name) const {
        auto it = bn_stats_.find(name);
        if (it == bn_stats_.end()) throw StateError("no such bn stats: " + name);
        return it->second;
    }

    // Gradient bookkeeping. backward() records every parameter it reached;
    // sgd_step consumes the pending set and clears grads afterwards.
    void note_grad_pending(const std::string& name) { pending_grads_.insert(name); }
    const std::set<std::string>& pending_grads() const { return pending_grads_; }
    void clear_pending() { pending_grads_.clear(); }

    std::vector<double>& velocity(const std::string& name) {
        auto& v = velocity_[name];
        if (v.size() != at(name).size()) v.assign(at(name).size(), 0.0);
        return v;
    }

    const std::map<std::string, Tensor>& params() const { return params_; }
    std::map<std::string, Tensor>& params() { return params_; }
    const std::map<std::string, BnStats>& bn_stats() const { return bn_stats_; }
    std::map<std::string, BnStats>& bn_stats() { return bn_stats_; }
    const std::set<std::string>& frozen() const { return frozen_; }
    const std::set<std::string>& gates() const { return gates_; }

    void freeze_all() {
        for (const auto& [name, t] : params_) frozen_.insert(name);
        for (const auto& [name, s] : bn_stats_) frozen_.insert(name);
    }

private:
    std::map<std::string, Tensor> params_;
    std::map<std::string, BnStats> bn_stats_;
    std::set<std::string> frozen_;
    std::set<std::string> gates_;
    std::set<std::string> pending_grads_;
    std::map<std::string, std::vector<double>> velocity_;
};

}  // namespace derlab
