#include "derlab/graph.hpp"

namespace derlab {

namespace {

void check_arity(const LayerSpec& spec, std::size_t index) {
    if (spec.kind == LayerSpec::Kind::Concat) {
        if (spec.inputs.empty())
            throw DimensionError("layer " + std::to_string(index) + ": concat needs inputs");
        return;
    }
    if (spec.inputs.size() != 1)
        throw DimensionError("layer " + std::to_string(index) + ": expected exactly one input");
}

int resolve(const std::vector<LayerSpec>& graph, std::size_t index, int input) {
    if (input < -1 || input >= static_cast<int>(index))
        throw DimensionError("layer " + std::to_string(index) + ": input index " +
                             std::to_string(input) + " out of range");
    return input;
}

template <typename T>
T rethrow_with_layer(std::size_t index, const std::function<T()>& fn) {
    try {
        return fn();
    } catch (const DimensionError& e) {
        throw DimensionError("layer " + std::to_string(index) + ": " + e.what());
    }
}

}  // namespace

Tensor forward(const std::vector<LayerSpec>& graph, ParamStore& ps, const Tensor& x,
               const ForwardOptions& opt, Tape* tape) {
    if (opt.mode == Mode::Train) {
        if (tape == nullptr) throw ContractError("forward: train mode requires a tape");
        Tape::Id xid = tape->input(x);
        Tape::Id out = forward_traced(*tape, graph, ps, xid, opt);
        return tape->value(out);
    }
    return forward(graph, static_cast<const ParamStore&>(ps), x, opt);
}

Tensor forward(const std::vector<LayerSpec>& graph, const ParamStore& ps, const Tensor& x,
               const ForwardOptions& opt) {
    if (opt.mode == Mode::Train)
        throw ContractError("forward: train mode requires a mutable store and a tape");

    if (graph.empty()) return x;
    std::vector<Tensor> outs;
    outs.reserve(graph.size());
    for (std::size_t i = 0; i < graph.size(); ++i) {
        const LayerSpec& spec = graph[i];
        check_arity(spec, i);
        auto in = [&](int idx) -> const Tensor& {
            const int r = resolve(graph, i, idx);
            return r == -1 ? x : outs[static_cast<std::size_t>(r)];
        };
        Tensor y = rethrow_with_layer<Tensor>(i, [&]() -> Tensor {
            switch (spec.kind) {
                case LayerSpec::Kind::Affine:
                    return kernels::affine(in(spec.inputs[0]), ps.at(spec.weight), ps.at(spec.bias));
                case LayerSpec::Kind::Conv2d:
                    return kernels::conv2d(in(spec.inputs[0]), ps.at(spec.weight), ps.at(spec.bias),
                                           spec.stride, spec.pad);
                case LayerSpec::Kind::Relu:
                    return kernels::relu(in(spec.inputs[0]));
                case LayerSpec::Kind::BatchNorm:
                    return kernels::batchnorm_eval(in(spec.inputs[0]), ps.at(spec.gamma),
                                                   ps.at(spec.beta), opt.bn_eps, ps.bn(spec.stats));
                case LayerSpec::Kind::GlobalAvgPool:
                    return kernels::global_avg_pool(in(spec.inputs[0]));
                case LayerSpec::Kind::ChannelMask:
                    return kernels::channel_mask(in(spec.inputs[0]), ps.at(spec.gate),
                                                 opt.mask_scale);
                case LayerSpec::Kind::Concat: {
                    std::vector<const Tensor*> parts;
                    parts.reserve(spec.inputs.size());
                    for (const int idx : spec.inputs) parts.push_back(&in(idx));
                    return kernels::concat(parts);
                }
            }
            throw ContractError("forward: unknown layer kind");
        });
        outs.push_back(std::move(y));
    }
    return outs.back();
}

Tape::Id forward_traced(Tape& tape, const std::vector<LayerSpec>& graph, ParamStore& ps,
                        Tape::Id x, const ForwardOptions& opt) {
    if (graph.empty()) return x;
    std::vector<Tape::Id> outs;
    outs.reserve(graph.size());
    for (std::size_t i = 0; i < graph.size(); ++i) {
        const LayerSpec& spec = graph[i];
        check_arity(spec, i);
        auto in = [&](int idx) -> Tape::Id {
            const int r = resolve(graph, i, idx);
            return r == -1 ? x : outs[static_cast<std::size_t>(r)];
        };
        Tape::Id y = rethrow_with_layer<Tape::Id>(i, [&]() -> Tape::Id {
            switch (spec.kind) {
                case LayerSpec::Kind::Affine:
                    return tape.affine(in(spec.inputs[0]), tape.param(ps, spec.weight),
                                       tape.param(ps, spec.bias));
                case LayerSpec::Kind::Conv2d:
                    return tape.conv2d(in(spec.inputs[0]), tape.param(ps, spec.weight),
                                       tape.param(ps, spec.bias), spec.stride, spec.pad);
                case LayerSpec::Kind::Relu:
                    return tape.relu(in(spec.inputs[0]));
                case LayerSpec::Kind::BatchNorm:
                    return tape.batchnorm_train(in(spec.inputs[0]), tape.param(ps, spec.gamma),
                                                tape.param(ps, spec.beta), &ps.bn(spec.stats),
                                                /*update_stats=*/!ps.is_frozen(spec.stats),
                                                opt.bn_eps);
                case LayerSpec::Kind::GlobalAvgPool:
                    return tape.global_avg_pool(in(spec.inputs[0]));
                case LayerSpec::Kind::ChannelMask:
                    return tape.channel_mask(in(spec.inputs[0]), tape.param(ps, spec.gate),
                                             opt.mask_scale);
                case LayerSpec::Kind::Concat: {
                    std::vector<Tape::Id> parts;
                    parts.reserve(spec.inputs.size());
                    for (const int idx : spec.inputs) parts.push_back(in(idx));
                    return tape.concat(parts);
                }
            }
            throw ContractError("forward: unknown layer kind");
        });
        outs.push_back(y);
    }
    return outs.back();
}

}  // namespace derlab
