#pragma once

#include <string>
#include <vector>

#include "derlab/tape.hpp"

namespace derlab {

enum class Mode { Train, Eval };

// One node of a small feed-forward graph. `inputs` lists producing layer
// indices; -1 refers to the graph input. Non-concat layers take exactly one
// input. Parameters are referenced by name in a ParamStore.
struct LayerSpec {
    enum class Kind { Affine, Conv2d, Relu, BatchNorm, GlobalAvgPool, ChannelMask, Concat };

    Kind kind;
    std::vector<int> inputs{-1};
    std::string weight;  // affine/conv
    std::string bias;
    std::string gamma;  // batchnorm
    std::string beta;
    std::string stats;
    std::string gate;  // channel mask parameter
    int stride = 1;
    Padding pad = Padding::Same;
};

struct ForwardOptions {
    Mode mode = Mode::Eval;
    double mask_scale = 1.0;  // gate sharpness used by ChannelMask layers
    double bn_eps = 1e-5;
};

// Runs the graph. Train mode records onto the tape (required non-null),
// uses batch statistics for batchnorm and updates running stats for
// unfrozen layers. Eval mode is pure: running stats, no tape.
// The graph output is the last layer's output.
Tensor forward(const std::vector<LayerSpec>& graph, ParamStore& ps, const Tensor& x,
               const ForwardOptions& opt, Tape* tape = nullptr);

// Eval-only overload for immutable stores.
Tensor forward(const std::vector<LayerSpec>& graph, const ParamStore& ps, const Tensor& x,
               const ForwardOptions& opt);

// Train-mode tracing variant returning the tape id of the output.
Tape::Id forward_traced(Tape& tape, const std::vector<LayerSpec>& graph, ParamStore& ps,
                        Tape::Id x, const ForwardOptions& opt);

}  // namespace derlab
