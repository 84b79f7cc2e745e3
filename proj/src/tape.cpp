#include "derlab/tape.hpp"

#include <cmath>
#include <memory>

namespace derlab {

Tape::Id Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> backprop) {
    nodes_.push_back(Node{std::move(value), {}, needs_grad, std::move(backprop)});
    return nodes_.size() - 1;
}

std::vector<double>& Tape::grad_buf(Id id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

Tape::Id Tape::input(Tensor x) { return push(std::move(x), false, {}); }

Tape::Id Tape::param(ParamStore& ps, const std::string& name) {
    Tensor& p = ps.at(name);
    if (ps.is_frozen(name)) return push(p, false, {});
    const Id id = push(p, true, {});
    ParamStore* store = &ps;
    std::string pname = name;
    nodes_[id].backprop = [id, store, pname](Tape& t) {
        Tensor& dst = store->at(pname);
        dst.ensure_grad();
        const std::vector<double>& g = t.nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
        store->note_grad_pending(pname);
    };
    return id;
}

Tape::Id Tape::affine(Id x, Id w, Id b) {
    Tensor y = kernels::affine(value(x), value(w), value(b));
    const bool ng = nodes_[x].needs_grad || nodes_[w].needs_grad || nodes_[b].needs_grad;
    const Id id = push(std::move(y), ng, {});
    if (!ng) return id;
    nodes_[id].backprop = [id, x, w, b](Tape& t) {
        Tensor gy = t.nodes_[id].value;
        gy.values = t.nodes_[id].grad;
        kernels::affine_backward(gy, t.value(x), t.value(w),
                                 t.nodes_[x].needs_grad ? &t.grad_buf(x) : nullptr,
                                 t.nodes_[w].needs_grad ? &t.grad_buf(w) : nullptr,
                                 t.nodes_[b].needs_grad ? &t.grad_buf(b) : nullptr);
    };
    return id;
}

Tape::Id Tape::conv2d(Id x, Id w, Id b, int stride, Padding pad) {
    Tensor y = kernels::conv2d(value(x), value(w), value(b), stride, pad);
    const bool ng = nodes_[x].needs_grad || nodes_[w].needs_grad || nodes_[b].needs_grad;
    const Id id = push(std::move(y), ng, {});
    if (!ng) return id;
    nodes_[id].backprop = [id, x, w, b, stride, pad](Tape& t) {
        Tensor gy = t.nodes_[id].value;
        gy.values = t.nodes_[id].grad;
        kernels::conv2d_backward(gy, t.value(x), t.value(w), stride, pad,
                                 t.nodes_[x].needs_grad ? &t.grad_buf(x) : nullptr,
                                 t.nodes_[w].needs_grad ? &t.grad_buf(w) : nullptr,
                                 t.nodes_[b].needs_grad ? &t.grad_buf(b) : nullptr);
    };
    return id;
}

Tape::Id Tape::relu(Id x) {
    Tensor y = kernels::relu(value(x));
    const bool ng = nodes_[x].needs_grad;
    const Id id = push(std::move(y), ng, {});
    if (!ng) return id;
    nodes_[id].backprop = [id, x](Tape& t) {
        Tensor gy = t.nodes_[id].value;
        gy.values = t.nodes_[id].grad;
        kernels::relu_backward(gy, t.value(x), &t.grad_buf(x));
    };
    return id;
}

Tape::Id Tape::batchnorm_train(Id x, Id gamma, Id beta, BnStats* stats, bool update_stats,
                               double eps) {
    auto cache = std::make_shared<kernels::BnCache>();
    Tensor y = kernels::batchnorm_train(value(x), value(gamma), value(beta), eps, stats,
                                        update_stats, cache.get());
    const bool ng = nodes_[x].needs_grad || nodes_[gamma].needs_grad || nodes_[beta].needs_grad;
    const Id id = push(std::move(y), ng, {});
    if (!ng) return id;
    nodes_[id].backprop = [id, x, gamma, beta, cache](Tape& t) {
        Tensor gy = t.nodes_[id].value;
        gy.values = t.nodes_[id].grad;
        kernels::batchnorm_train_backward(gy, t.value(gamma), *cache,
                                          t.nodes_[x].needs_grad ? &t.grad_buf(x) : nullptr,
                                          t.nodes_[gamma].needs_grad ? &t.grad_buf(gamma) : nullptr,
                                          t.nodes_[beta].needs_grad ? &t.grad_buf(beta) : nullptr);
    };
    return id;
}

Tape::Id Tape::global_avg_pool(Id x) {
    Tensor y = kernels::global_avg_pool(value(x));
    const bool ng = nodes_[x].needs_grad;
    const Id id = push(std::move(y), ng, {});
    if (!ng) return id;
    nodes_[id].backprop = [id, x](Tape& t) {
        Tensor gy = t.nodes_[id].value;
        gy.values = t.nodes_[id].grad;
        kernels::global_avg_pool_backward(gy, t.value(x), &t.grad_buf(x));
    };
    return id;
}

Tape::Id Tape::channel_mask(Id x, Id e, double scale) {
    Tensor y = kernels::channel_mask(value(x), value(e), scale);
    const bool ng = nodes_[x].needs_grad || nodes_[e].needs_grad;
    const Id id = push(std::move(y), ng, {});
    if (!ng) return id;
    nodes_[id].backprop = [id, x, e, scale](Tape& t) {
        Tensor gy = t.nodes_[id].value;
        gy.values = t.nodes_[id].grad;
        kernels::channel_mask_backward(gy, t.value(x), t.value(e), scale,
                                       t.nodes_[x].needs_grad ? &t.grad_buf(x) : nullptr,
                                       t.nodes_[e].needs_grad ? &t.grad_buf(e) : nullptr);
    };
    return id;
}

Tape::Id Tape::concat(const std::vector<Id>& parts) {
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(parts.size());
    bool ng = false;
    for (const Id p : parts) {
        ptrs.push_back(&value(p));
        ng = ng || nodes_[p].needs_grad;
    }
    Tensor y = kernels::concat(ptrs);
    const Id id = push(std::move(y), ng, {});
    if (!ng) return id;
    std::vector<Id> inputs = parts;
    nodes_[id].backprop = [id, inputs](Tape& t) {
        const std::vector<double>& gy = t.nodes_[id].grad;
        const std::size_t n = t.nodes_[id].value.dim(0);
        const std::size_t total = t.nodes_[id].value.dim(1);
        std::size_t off = 0;
        for (const Id p : inputs) {
            const std::size_t d = t.value(p).dim(1);
            if (t.nodes_[p].needs_grad) {
                std::vector<double>& gp = t.grad_buf(p);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) gp[i * d + j] += gy[i * total + off + j];
            }
            off += d;
        }
    };
    return id;
}

Tape::Id Tape::divide(Id x, double denom) {
    Tensor y = value(x);
    y.grad.clear();
    y.requires_grad = false;
    for (double& v : y.values) v /= denom;
    const bool ng = nodes_[x].needs_grad;
    const Id id = push(std::move(y), ng, {});
    if (!ng) return id;
    nodes_[id].backprop = [id, x, denom](Tape& t) {
        const std::vector<double>& gy = t.nodes_[id].grad;
        std::vector<double>& gx = t.grad_buf(x);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] / denom;
    };
    return id;
}

Tape::Id Tape::softmax_cross_entropy(Id logits, std::vector<int> labels, double temperature) {
    auto cache = std::make_shared<kernels::SoftmaxCeCache>();
    const double loss =
        kernels::softmax_cross_entropy(value(logits), labels, temperature, cache.get());
    const bool ng = nodes_[logits].needs_grad;
    const Id id = push(Tensor::scalar(loss), ng, {});
    if (!ng) return id;
    auto lb = std::make_shared<std::vector<int>>(std::move(labels));
    nodes_[id].backprop = [id, logits, lb, temperature, cache](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        kernels::softmax_cross_entropy_backward(g, *lb, temperature, *cache, &t.grad_buf(logits));
    };
    return id;
}

Tape::Id Tape::weighted_sum(const std::vector<Id>& terms, const std::vector<double>& coeffs) {
    if (terms.size() != coeffs.size())
        throw InputError("weighted_sum: terms and coefficients differ in length");
    double acc = 0.0;
    bool ng = false;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const Tensor& v = value(terms[i]);
        if (v.size() != 1) throw ContractError("weighted_sum: terms must be scalars");
        acc += coeffs[i] * v.values[0];
        ng = ng || nodes_[terms[i]].needs_grad;
    }
    const Id id = push(Tensor::scalar(acc), ng, {});
    if (!ng) return id;
    std::vector<Id> ts = terms;
    std::vector<double> cs = coeffs;
    nodes_[id].backprop = [id, ts, cs](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        for (std::size_t i = 0; i < ts.size(); ++i) {
            if (t.nodes_[ts[i]].needs_grad) t.grad_buf(ts[i])[0] += cs[i] * g;
        }
    };
    return id;
}

Tape::Id Tape::dot_const(Id x, std::vector<double> coeffs) {
    const Tensor& v = value(x);
    if (coeffs.size() != v.size())
        throw DimensionError("dot_const: coefficient count does not match tensor size");
    double acc = 0.0;
    for (std::size_t i = 0; i < coeffs.size(); ++i) acc += coeffs[i] * v.values[i];
    const bool ng = nodes_[x].needs_grad;
    const Id id = push(Tensor::scalar(acc), ng, {});
    if (!ng) return id;
    auto cs = std::make_shared<std::vector<double>>(std::move(coeffs));
    nodes_[id].backprop = [id, x, cs](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        std::vector<double>& gx = t.grad_buf(x);
        for (std::size_t i = 0; i < cs->size(); ++i) gx[i] += g * (*cs)[i];
    };
    return id;
}

Tape::Id Tape::sparsity_loss(const std::vector<SparsityLayer>& layers,
                             std::size_t input_channels, double scale) {
    if (layers.empty()) throw InputError("sparsity_loss: empty layer list");

    auto norms = std::make_shared<std::vector<double>>();
    norms->reserve(layers.size() + 1);
    norms->push_back(static_cast<double>(input_channels));
    bool ng = false;
    for (const SparsityLayer& l : layers) {
        if (l.gate.has_value()) {
            const Tensor& e = value(*l.gate);
            if (e.size() != l.channels)
                throw DimensionError("sparsity_loss: gate length does not match layer channels");
            double acc = 0.0;
            for (const double ev : e.values) acc += kernels::sigmoid(scale * ev);
            norms->push_back(acc);
            ng = ng || nodes_[*l.gate].needs_grad;
        } else {
            norms->push_back(static_cast<double>(l.channels));
        }
    }

    double num = 0.0, den = 0.0;
    double prev_full = static_cast<double>(input_channels);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        num += layers[l].kernel_elems * (*norms)[l] * (*norms)[l + 1];
        den += layers[l].kernel_elems * prev_full * static_cast<double>(layers[l].channels);
        prev_full = static_cast<double>(layers[l].channels);
    }
    const Id id = push(Tensor::scalar(num / den), ng, {});
    if (!ng) return id;

    auto ls = std::make_shared<std::vector<SparsityLayer>>(layers);
    nodes_[id].backprop = [id, ls, norms, den, scale](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        for (std::size_t l = 0; l < ls->size(); ++l) {
            const SparsityLayer& layer = (*ls)[l];
            if (!layer.gate.has_value() || !t.nodes_[*layer.gate].needs_grad) continue;
            // d num / d ||m_l|| couples layer l with its successor.
            double dnorm = layer.kernel_elems * (*norms)[l];
            if (l + 1 < ls->size()) dnorm += (*ls)[l + 1].kernel_elems * (*norms)[l + 2];
            const Tensor& e = t.value(*layer.gate);
            std::vector<double>& ge = t.grad_buf(*layer.gate);
            for (std::size_t i = 0; i < e.size(); ++i) {
                const double m = kernels::sigmoid(scale * e.values[i]);
                ge[i] += g * dnorm * scale * m * (1.0 - m) / den;
            }
        }
    };
    return id;
}

void Tape::backward(Id loss) {
    if (loss >= nodes_.size()) throw ContractError("backward: unknown node id");
    if (nodes_[loss].value.size() != 1)
        throw ContractError("backward: loss must be a scalar, got shape " +
                            shape_str(nodes_[loss].value.shape));
    grad_buf(loss)[0] += 1.0;
    for (std::size_t i = loss + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.empty() || !n.backprop) continue;
        n.backprop(*this);
    }
}

}  // namespace derlab
