#include "derlab/extractor.hpp"

#include <algorithm>
#include <cmath>

namespace derlab {

void BlockSpec::validate() const {
    if (out_channels < 1) throw InputError("block: out_channels must be >= 1");
    if (kind == Kind::Conv) {
        if (kernel_size % 2 == 0) throw InputError("block: conv kernel size must be odd");
        if (kernel_size != 1 && kernel_size != 3)
            throw InputError("block: conv kernel size must be 1 or 3");
    } else if (kernel_size != 1) {
        throw InputError("block: affine kernel size must be 1");
    }
}

void ExtractorArch::validate() const {
    if (input_shape.size() != 1 && input_shape.size() != 3)
        throw InputError("extractor: input shape must be {d} or {c,h,w}");
    for (const std::size_t d : input_shape)
        if (d < 1) throw InputError("extractor: input extents must be >= 1");
    if (blocks.empty()) throw InputError("extractor: needs at least one block");
    bool seen_affine = !image_input();
    for (const BlockSpec& b : blocks) {
        b.validate();
        if (b.kind == BlockSpec::Kind::Conv) {
            if (seen_affine) throw InputError("extractor: conv block after affine block");
            if (!image_input()) throw InputError("extractor: conv block on vector input");
        } else {
            seen_affine = true;
        }
    }
}

Tensor apply_mask(const Tensor& f, const ChannelMask& mask) {
    return kernels::channel_mask(f, mask.e, mask.s);
}

double anneal_scale(int b, int batch_count, double s_max) {
    if (batch_count < 1) throw InputError("anneal_scale: batch count must be >= 1");
    if (b < 1 || b > batch_count)
        throw InputError("anneal_scale: batch index " + std::to_string(b) + " outside [1," +
                         std::to_string(batch_count) + "]");
    if (s_max <= 1.0) throw InputError("anneal_scale: s_max must be > 1");
    if (batch_count == 1) return s_max;
    return 1.0 / s_max + (s_max - 1.0 / s_max) * static_cast<double>(b - 1) /
                             static_cast<double>(batch_count - 1);
}

std::vector<double> compensate_gradient(const std::vector<double>& g,
                                        const std::vector<double>& e, double s) {
    if (g.size() != e.size())
        throw DimensionError("compensate_gradient: gradient and gate lengths differ");
    std::vector<double> out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double m1 = kernels::sigmoid(e[i]);
        const double ms = kernels::sigmoid(s * e[i]);
        const double denom = std::max(s * ms * (1.0 - ms), 1e-12);
        out[i] = g[i] * (m1 * (1.0 - m1)) / denom;
    }
    return out;
}

double sparsity_loss(const std::vector<ChannelMask>& masks, const std::vector<BlockSpec>& specs,
                     std::size_t input_channels) {
    if (specs.empty()) throw InputError("sparsity_loss: empty layer list");
    std::vector<double> norms;
    norms.reserve(specs.size() + 1);
    norms.push_back(static_cast<double>(input_channels));
    std::size_t next_mask = 0;
    for (const BlockSpec& spec : specs) {
        if (spec.masked) {
            if (next_mask >= masks.size())
                throw InputError("sparsity_loss: fewer masks than masked layers");
            const ChannelMask& mask = masks[next_mask++];
            if (mask.e.size() != spec.out_channels)
                throw DimensionError("sparsity_loss: mask length does not match layer channels");
            double acc = 0.0;
            for (const double ev : mask.e.values) acc += kernels::sigmoid(mask.s * ev);
            norms.push_back(acc);
        } else {
            norms.push_back(static_cast<double>(spec.out_channels));
        }
    }
    if (next_mask != masks.size())
        throw InputError("sparsity_loss: more masks than masked layers");

    double num = 0.0, den = 0.0;
    double prev_full = static_cast<double>(input_channels);
    for (std::size_t l = 0; l < specs.size(); ++l) {
        num += specs[l].kernel_elems() * norms[l] * norms[l + 1];
        den += specs[l].kernel_elems() * prev_full * static_cast<double>(specs[l].out_channels);
        prev_full = static_cast<double>(specs[l].out_channels);
    }
    return num / den;
}

std::vector<LayerSpec> build_graph(const ExtractorArch& arch, const std::string& prefix,
                                   bool with_masks) {
    std::vector<LayerSpec> graph;
    int last = -1;
    auto push = [&](LayerSpec spec) {
        spec.inputs = {last};
        graph.push_back(std::move(spec));
        last = static_cast<int>(graph.size()) - 1;
    };

    bool pooled = !arch.image_input();
    for (std::size_t i = 0; i < arch.blocks.size(); ++i) {
        const BlockSpec& b = arch.blocks[i];
        const std::string base = prefix + ".b" + std::to_string(i);
        if (b.kind == BlockSpec::Kind::Affine && !pooled) {
            LayerSpec gap;
            gap.kind = LayerSpec::Kind::GlobalAvgPool;
            push(std::move(gap));
            pooled = true;
        }
        LayerSpec main;
        main.kind = b.kind == BlockSpec::Kind::Conv ? LayerSpec::Kind::Conv2d
                                                    : LayerSpec::Kind::Affine;
        main.weight = base + ".w";
        main.bias = base + ".bias";
        main.stride = 1;
        main.pad = Padding::Same;
        push(std::move(main));
        if (b.has_bn) {
            LayerSpec bn;
            bn.kind = LayerSpec::Kind::BatchNorm;
            bn.gamma = base + ".gamma";
            bn.beta = base + ".beta";
            bn.stats = base + ".bn";
            push(std::move(bn));
        }
        if (with_masks && b.masked) {
            LayerSpec mask;
            mask.kind = LayerSpec::Kind::ChannelMask;
            mask.gate = base + ".gate";
            push(std::move(mask));
        }
        if (b.has_relu) {
            LayerSpec relu;
            relu.kind = LayerSpec::Kind::Relu;
            push(std::move(relu));
        }
    }
    if (!pooled) {
        LayerSpec gap;
        gap.kind = LayerSpec::Kind::GlobalAvgPool;
        push(std::move(gap));
    }
    return graph;
}

MaskedExtractor::MaskedExtractor(ExtractorArch arch, std::string prefix, double s_max)
    : arch_(std::move(arch)), prefix_(std::move(prefix)), s_max_(s_max) {
    arch_.validate();
    if (s_max_ <= 1.0) throw InputError("extractor: s_max must be > 1");
    graph_ = build_graph(arch_, prefix_, /*with_masks=*/true);
}

std::string MaskedExtractor::pname(std::size_t block, const char* field) const {
    return prefix_ + ".b" + std::to_string(block) + "." + field;
}

void MaskedExtractor::init_params(ParamStore& ps, Rng& rng) const {
    std::size_t in_c = arch_.input_channels();
    for (std::size_t i = 0; i < arch_.blocks.size(); ++i) {
        const BlockSpec& b = arch_.blocks[i];
        const std::size_t out_c = b.out_channels;
        std::vector<std::size_t> wshape;
        std::size_t fan_in;
        if (b.kind == BlockSpec::Kind::Conv) {
            wshape = {out_c, in_c, b.kernel_size, b.kernel_size};
            fan_in = in_c * b.kernel_size * b.kernel_size;
        } else {
            wshape = {in_c, out_c};
            fan_in = in_c;
        }
        Tensor w = Tensor::zeros(wshape);
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& v : w.values) v = rng.uniform(-bound, bound);
        ps.create(pname(i, "w"), std::move(w));
        ps.create(pname(i, "bias"), Tensor::zeros({out_c}));
        if (b.has_bn) {
            Tensor gamma = Tensor::zeros({out_c});
            for (double& v : gamma.values) v = 1.0;
            ps.create(pname(i, "gamma"), std::move(gamma));
            ps.create(pname(i, "beta"), Tensor::zeros({out_c}));
            ps.create_bn(pname(i, "bn"), out_c, 0.1);
        }
        if (b.masked) {
            Tensor e = Tensor::zeros({out_c});
            for (double& v : e.values) v = rng.uniform(-0.05, 0.05);
            const std::string gate = pname(i, "gate");
            ps.create(gate, std::move(e));
            ps.mark_gate(gate);
        }
        in_c = out_c;
    }
}

void MaskedExtractor::warm_start_from(ParamStore& ps,
                                      const std::map<std::string, Tensor>& src_params,
                                      const std::map<std::string, BnStats>& src_bn,
                                      const std::string& src_prefix) const {
    for (std::size_t i = 0; i < arch_.blocks.size(); ++i) {
        const std::string src_base = src_prefix + ".b" + std::to_string(i) + ".";
        for (const char* field : {"w", "bias", "gamma", "beta"}) {
            const std::string dst = pname(i, field);
            if (!ps.has(dst)) continue;
            auto it = src_params.find(src_base + field);
            if (it == src_params.end()) continue;
            Tensor& dstT = ps.at(dst);
            if (it->second.shape == dstT.shape) dstT.values = it->second.values;
        }
        const std::string dst_bn = pname(i, "bn");
        if (ps.has_bn(dst_bn)) {
            auto it = src_bn.find(src_base + "bn");
            if (it != src_bn.end() && it->second.mean.size() == ps.bn(dst_bn).mean.size())
                ps.bn(dst_bn) = it->second;
        }
    }
}

Tape::Id MaskedExtractor::forward_train(Tape& tape, ParamStore& ps, Tape::Id x,
                                        double mask_scale) const {
    ForwardOptions opt;
    opt.mode = Mode::Train;
    opt.mask_scale = mask_scale;
    return forward_traced(tape, graph_, ps, x, opt);
}

Tensor MaskedExtractor::forward_eval(const ParamStore& ps, const Tensor& x) const {
    ForwardOptions opt;
    opt.mode = Mode::Eval;
    opt.mask_scale = s_max_;
    return forward(graph_, ps, x, opt);
}

std::vector<Tape::SparsityLayer> MaskedExtractor::sparsity_layers(Tape& tape,
                                                                  ParamStore& ps) const {
    std::vector<Tape::SparsityLayer> layers;
    layers.reserve(arch_.blocks.size());
    for (std::size_t i = 0; i < arch_.blocks.size(); ++i) {
        const BlockSpec& b = arch_.blocks[i];
        Tape::SparsityLayer layer;
        layer.kernel_elems = b.kernel_elems();
        layer.channels = b.out_channels;
        if (b.masked) layer.gate = tape.param(ps, pname(i, "gate"));
        layers.push_back(layer);
    }
    return layers;
}

std::vector<std::string> MaskedExtractor::gate_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < arch_.blocks.size(); ++i)
        if (arch_.blocks[i].masked) names.push_back(pname(i, "gate"));
    return names;
}

std::vector<std::string> MaskedExtractor::param_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < arch_.blocks.size(); ++i) {
        const BlockSpec& b = arch_.blocks[i];
        names.push_back(pname(i, "w"));
        names.push_back(pname(i, "bias"));
        if (b.has_bn) {
            names.push_back(pname(i, "gamma"));
            names.push_back(pname(i, "beta"));
        }
        if (b.masked) names.push_back(pname(i, "gate"));
    }
    return names;
}

std::vector<ChannelMask> MaskedExtractor::masks(const ParamStore& ps,
                                                double current_scale) const {
    std::vector<ChannelMask> out;
    for (std::size_t i = 0; i < arch_.blocks.size(); ++i) {
        if (!arch_.blocks[i].masked) continue;
        ChannelMask m;
        m.e = ps.at(pname(i, "gate"));
        m.s = current_scale;
        m.s_max = s_max_;
        out.push_back(std::move(m));
    }
    return out;
}

PrunedExtractor MaskedExtractor::binarize_and_prune(const ParamStore& ps) const {
    const std::size_t nblocks = arch_.blocks.size();
    std::vector<std::vector<std::size_t>> kept(nblocks);
    for (std::size_t i = 0; i < nblocks; ++i) {
        const BlockSpec& b = arch_.blocks[i];
        if (!b.masked) {
            kept[i].resize(b.out_channels);
            for (std::size_t c = 0; c < b.out_channels; ++c) kept[i][c] = c;
            continue;
        }
        const Tensor& e = ps.at(pname(i, "gate"));
        for (std::size_t c = 0; c < e.size(); ++c)
            if (e.values[c] > 0.0) kept[i].push_back(c);
        if (kept[i].empty()) {
            // Keep the strongest channel so the network stays connected.
            std::size_t best = 0;
            for (std::size_t c = 1; c < e.size(); ++c)
                if (e.values[c] > e.values[best]) best = c;
            kept[i].push_back(best);
        }
    }

    ExtractorArch pruned_arch = arch_;
    for (std::size_t i = 0; i < nblocks; ++i) {
        pruned_arch.blocks[i].out_channels = kept[i].size();
        pruned_arch.blocks[i].masked = false;
    }

    ParamStore out;
    std::size_t in_c = arch_.input_channels();
    std::vector<std::size_t> in_kept(in_c);
    for (std::size_t c = 0; c < in_c; ++c) in_kept[c] = c;

    for (std::size_t i = 0; i < nblocks; ++i) {
        const BlockSpec& b = arch_.blocks[i];
        const std::vector<std::size_t>& out_kept = kept[i];
        const Tensor& w = ps.at(pname(i, "w"));
        const Tensor& bias = ps.at(pname(i, "bias"));
        if (b.kind == BlockSpec::Kind::Conv) {
            const std::size_t k = b.kernel_size;
            Tensor sw = Tensor::zeros({out_kept.size(), in_kept.size(), k, k});
            for (std::size_t o = 0; o < out_kept.size(); ++o)
                for (std::size_t c = 0; c < in_kept.size(); ++c)
                    for (std::size_t t = 0; t < k * k; ++t)
                        sw.values[(o * in_kept.size() + c) * k * k + t] =
                            w.values[(out_kept[o] * in_c + in_kept[c]) * k * k + t];
            out.create(pname(i, "w"), std::move(sw));
        } else {
            const std::size_t dout = b.out_channels;
            Tensor sw = Tensor::zeros({in_kept.size(), out_kept.size()});
            for (std::size_t d = 0; d < in_kept.size(); ++d)
                for (std::size_t o = 0; o < out_kept.size(); ++o)
                    sw.values[d * out_kept.size() + o] =
                        w.values[in_kept[d] * dout + out_kept[o]];
            out.create(pname(i, "w"), std::move(sw));
        }
        Tensor sb = Tensor::zeros({out_kept.size()});
        for (std::size_t o = 0; o < out_kept.size(); ++o) sb.values[o] = bias.values[out_kept[o]];
        out.create(pname(i, "bias"), std::move(sb));

        if (b.has_bn) {
            const Tensor& gamma = ps.at(pname(i, "gamma"));
            const Tensor& beta = ps.at(pname(i, "beta"));
            const BnStats& stats = ps.bn(pname(i, "bn"));
            Tensor sg = Tensor::zeros({out_kept.size()});
            Tensor sbeta = Tensor::zeros({out_kept.size()});
            BnStats& sstats = out.create_bn(pname(i, "bn"), out_kept.size(), stats.momentum);
            sstats.initialized = stats.initialized;
            for (std::size_t o = 0; o < out_kept.size(); ++o) {
                sg.values[o] = gamma.values[out_kept[o]];
                sbeta.values[o] = beta.values[out_kept[o]];
                sstats.mean[o] = stats.mean[out_kept[o]];
                sstats.var[o] = stats.var[out_kept[o]];
            }
            out.create(pname(i, "gamma"), std::move(sg));
            out.create(pname(i, "beta"), std::move(sbeta));
        }
        in_c = b.out_channels;
        in_kept = out_kept;
    }
    out.freeze_all();
    return PrunedExtractor(std::move(pruned_arch), std::move(kept), std::move(out), prefix_);
}

PrunedExtractor::PrunedExtractor(ExtractorArch pruned_arch,
                                 std::vector<std::vector<std::size_t>> kept, ParamStore params,
                                 std::string prefix)
    : arch_(std::move(pruned_arch)),
      kept_(std::move(kept)),
      params_(std::move(params)),
      prefix_(std::move(prefix)) {
    arch_.validate();
    for (std::size_t i = 0; i < kept_.size(); ++i) {
        if (kept_[i].empty()) throw InputError("pruned extractor: empty kept list");
        for (std::size_t j = 1; j < kept_[i].size(); ++j)
            if (kept_[i][j] <= kept_[i][j - 1])
                throw InputError("pruned extractor: kept indices must be strictly increasing");
    }
    graph_ = build_graph(arch_, prefix_, /*with_masks=*/false);
}

Tensor PrunedExtractor::forward(const Tensor& x) const {
    ForwardOptions opt;
    opt.mode = Mode::Eval;
    return derlab::forward(graph_, params_, x, opt);
}

namespace {

// Counts the stored tensors themselves; gate logits and running stats are
// training-time state, not inference parameters.
std::size_t count_stored(const ExtractorArch& arch, const std::string& prefix,
                         const ParamStore& ps) {
    std::size_t total = 0;
    for (std::size_t i = 0; i < arch.blocks.size(); ++i) {
        const std::string base = prefix + ".b" + std::to_string(i) + ".";
        total += ps.at(base + "w").size();
        total += ps.at(base + "bias").size();
        if (arch.blocks[i].has_bn) {
            total += ps.at(base + "gamma").size();
            total += ps.at(base + "beta").size();
        }
    }
    return total;
}

}  // namespace

std::size_t count_params(const MaskedExtractor& ex, const ParamStore& ps) {
    return count_stored(ex.arch(), ex.prefix(), ps);
}

std::size_t count_params(const PrunedExtractor& ex) {
    return count_stored(ex.arch(), ex.prefix(), ex.params());
}

}  // namespace derlab
