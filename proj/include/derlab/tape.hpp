#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "derlab/kernels.hpp"
#include "derlab/param_store.hpp"
#include "derlab/tensor.hpp"

namespace derlab {

// Reverse-mode tape. Every operation appends a node holding the forward
// value and a closure that routes the node's gradient to its inputs.
// Frozen parameters enter as constants, so no gradient ever reaches them.
class Tape {
public:
    using Id = std::size_t;

    // Constant leaf; never receives a gradient.
    Id input(Tensor x);

    // Parameter leaf. Unfrozen parameters accumulate gradients into the
    // store and are recorded in its pending-grad set.
    Id param(ParamStore& ps, const std::string& name);

    Id affine(Id x, Id w, Id b);
    Id conv2d(Id x, Id w, Id b, int stride, Padding pad);
    Id relu(Id x);
    Id batchnorm_train(Id x, Id gamma, Id beta, BnStats* stats, bool update_stats, double eps);
    Id global_avg_pool(Id x);
    Id channel_mask(Id x, Id e, double scale);
    Id concat(const std::vector<Id>& parts);
    Id divide(Id x, double denom);
    Id softmax_cross_entropy(Id logits, std::vector<int> labels, double temperature);

    // Scalar combination: sum of coeff[i] * term[i].
    Id weighted_sum(const std::vector<Id>& terms, const std::vector<double>& coeffs);

    // Scalar reduction: sum of coeffs[i] * x[i] over all elements.
    Id dot_const(Id x, std::vector<double> coeffs);

    // Ratio of gated-on weights to all available weights over a layer stack.
    // Layer 0 is the input with ||m_0|| = input_channels; per layer the gate
    // id is absent when the layer is unmasked (norm = channel count).
    struct SparsityLayer {
        double kernel_elems = 1.0;
        std::size_t channels = 0;
        std::optional<Id> gate;
    };
    Id sparsity_loss(const std::vector<SparsityLayer>& layers, std::size_t input_channels,
                     double scale);

    // Propagates from a scalar loss; fills grads of every reached unfrozen
    // parameter. Throws ContractError when loss is not scalar.
    void backward(Id loss);

    const Tensor& value(Id id) const { return nodes_[id].value; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;            // empty until touched
        bool needs_grad = false;
        std::function<void(Tape&)> backprop;  // may be empty (leaves)
    };

    Id push(Tensor value, bool needs_grad, std::function<void(Tape&)> backprop);
    std::vector<double>& grad_buf(Id id);
    bool has_grad(Id id) const { return !nodes_[id].grad.empty(); }

    std::vector<Node> nodes_;
};

}  // namespace derlab
