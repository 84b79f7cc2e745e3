#pragma once

#include <optional>
#include <string>
#include <vector>

#include "derlab/graph.hpp"
#include "derlab/rng.hpp"

namespace derlab {

// One building block of a feature extractor: conv or affine, optional
// batchnorm, channel mask, and relu, in that order. Masks sit after the
// normalization and before the activation so the gate scales a centered
// signal and pruning can drop the channel cleanly.
struct BlockSpec {
    enum class Kind { Conv, Affine };

    Kind kind = Kind::Affine;
    std::size_t out_channels = 0;
    std::size_t kernel_size = 1;  // side length; 1 for affine
    bool has_bn = true;
    bool has_relu = true;
    bool masked = true;

    // K_l in the sparsity ratio: kernel element count, so the ratio is an
    // exact used/available parameter fraction.
    double kernel_elems() const {
        return kind == Kind::Conv ? static_cast<double>(kernel_size * kernel_size) : 1.0;
    }

    void validate() const;
};

struct ExtractorArch {
    std::vector<std::size_t> input_shape;  // {d} for vectors, {c,h,w} for images
    std::vector<BlockSpec> blocks;

    std::size_t input_channels() const { return input_shape.at(0); }
    bool image_input() const { return input_shape.size() == 3; }
    std::size_t feature_dim() const { return blocks.back().out_channels; }
    void validate() const;
};

// Gate state for one masked layer: learnable logits e, the current annealed
// scale s, and the saturation scale used at eval/binarization time.
struct ChannelMask {
    Tensor e;
    double s = 1.0;
    double s_max = 400.0;
};

// f'_l = f_l * sigmoid(s * e), broadcast over batch and space.
Tensor apply_mask(const Tensor& f, const ChannelMask& mask);

// Linear ramp of the gate scale over the batches of one epoch:
// s(1) = 1/s_max, s(B) = s_max. B == 1 returns s_max.
double anneal_scale(int b, int batch_count, double s_max);

// Removes the scale dependence from a gate-logit gradient: the returned
// vector equals the gradient the gate would see at s = 1 given the same
// upstream signal. Denominator clamped at 1e-12.
std::vector<double> compensate_gradient(const std::vector<double>& g,
                                        const std::vector<double>& e, double s);

// Ratio of gated-on weights to all available weights. `masks` holds one
// entry per masked block, in block order; unmasked blocks count fully on.
double sparsity_loss(const std::vector<ChannelMask>& masks, const std::vector<BlockSpec>& specs,
                     std::size_t input_channels);

class PrunedExtractor;

// A trainable extractor whose parameters live in an external store under
// `prefix`. Gate parameters are registered as plain-SGD gates.
class MaskedExtractor {
public:
    MaskedExtractor() = default;
    MaskedExtractor(ExtractorArch arch, std::string prefix, double s_max);

    // Creates and He-uniform-initializes all parameters; gate logits start
    // uniform in [-0.05, 0.05] so selection is driven by the losses.
    void init_params(ParamStore& ps, Rng& rng) const;

    // Copies values from same-named, same-shaped source entries (weights,
    // biases, batchnorm params and stats). Gates keep their fresh init.
    void warm_start_from(ParamStore& ps, const std::map<std::string, Tensor>& src_params,
                         const std::map<std::string, BnStats>& src_bn,
                         const std::string& src_prefix) const;

    Tape::Id forward_train(Tape& tape, ParamStore& ps, Tape::Id x, double mask_scale) const;
    Tensor forward_eval(const ParamStore& ps, const Tensor& x) const;  // gates at s_max

    // Sparsity-loss layer descriptors with gate params registered on the tape.
    std::vector<Tape::SparsityLayer> sparsity_layers(Tape& tape, ParamStore& ps) const;

    PrunedExtractor binarize_and_prune(const ParamStore& ps) const;

    const ExtractorArch& arch() const { return arch_; }
    const std::string& prefix() const { return prefix_; }
    double s_max() const { return s_max_; }
    std::size_t output_dim() const { return arch_.feature_dim(); }
    const std::vector<LayerSpec>& graph() const { return graph_; }
    std::vector<std::string> gate_names() const;
    std::vector<std::string> param_names() const;  // everything incl. gates
    std::vector<ChannelMask> masks(const ParamStore& ps, double current_scale) const;

private:
    std::string pname(std::size_t block, const char* field) const;

    ExtractorArch arch_;
    std::string prefix_;
    double s_max_ = 400.0;
    std::vector<LayerSpec> graph_;
};

// An immutable extractor sliced down to its kept channels. Owns its
// parameters; everything is frozen.
class PrunedExtractor {
public:
    PrunedExtractor() = default;
    PrunedExtractor(ExtractorArch pruned_arch, std::vector<std::vector<std::size_t>> kept,
                    ParamStore params, std::string prefix);

    Tensor forward(const Tensor& x) const;

    const ExtractorArch& arch() const { return arch_; }
    const std::vector<std::vector<std::size_t>>& kept() const { return kept_; }
    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }
    const std::string& prefix() const { return prefix_; }
    std::size_t output_dim() const { return arch_.feature_dim(); }
    const std::vector<LayerSpec>& graph() const { return graph_; }

private:
    ExtractorArch arch_;
    std::vector<std::vector<std::size_t>> kept_;
    ParamStore params_;
    std::string prefix_;
    std::vector<LayerSpec> graph_;
};

// Learnable parameter element count (weights, biases, batchnorm gamma/beta;
// gates and running stats excluded).
std::size_t count_params(const MaskedExtractor& ex, const ParamStore& ps);
std::size_t count_params(const PrunedExtractor& ex);

// Builds the layer graph for an arch under a name prefix. Shared by the
// masked and pruned variants; `with_masks` inserts ChannelMask layers on
// masked blocks.
std::vector<LayerSpec> build_graph(const ExtractorArch& arch, const std::string& prefix,
                                   bool with_masks);

}  // namespace derlab
