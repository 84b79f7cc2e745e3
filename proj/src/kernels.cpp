#include "derlab/kernels.hpp"

#include <cmath>
#include <cstring>

namespace derlab {
namespace kernels {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw DimensionError(msg);
}

// Channel geometry shared by batchnorm and channel_mask: rank 2 tensors are
// [n, c], rank 4 are [n, c, h, w].
struct ChannelView {
    std::size_t n, c, spatial;
};

ChannelView channel_view(const Tensor& x, const char* who) {
    if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
    if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
    throw DimensionError(std::string(who) + ": expected rank 2 or 4, got " + shape_str(x.shape));
}

}  // namespace

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double ez = std::exp(z);
    return ez / (1.0 + ez);
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.rank() == 2, "affine: input must be rank 2");
    require(w.rank() == 2, "affine: weight must be rank 2");
    const std::size_t n = x.dim(0), din = x.dim(1);
    require(w.dim(0) == din, "affine: weight rows must match input features");
    const std::size_t dout = w.dim(1);
    require(b.size() == dout, "affine: bias length must match output features");

    Tensor y = Tensor::zeros({n, dout});
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = &x.values[i * din];
        double* yi = &y.values[i * dout];
        for (std::size_t o = 0; o < dout; ++o) yi[o] = b.values[o];
        for (std::size_t d = 0; d < din; ++d) {
            const double xv = xi[d];
            const double* wrow = &w.values[d * dout];
            for (std::size_t o = 0; o < dout; ++o) yi[o] += xv * wrow[o];
        }
    }
    return y;
}

void affine_backward(const Tensor& gy, const Tensor& x, const Tensor& w,
                     std::vector<double>* gx, std::vector<double>* gw, std::vector<double>* gb) {
    const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        const double* gyi = &gy.values[i * dout];
        const double* xi = &x.values[i * din];
        if (gb != nullptr) {
            for (std::size_t o = 0; o < dout; ++o) (*gb)[o] += gyi[o];
        }
        if (gw != nullptr) {
            for (std::size_t d = 0; d < din; ++d) {
                const double xv = xi[d];
                double* gwrow = &(*gw)[d * dout];
                for (std::size_t o = 0; o < dout; ++o) gwrow[o] += xv * gyi[o];
            }
        }
        if (gx != nullptr) {
            double* gxi = &(*gx)[i * din];
            for (std::size_t d = 0; d < din; ++d) {
                const double* wrow = &w.values[d * dout];
                double acc = 0.0;
                for (std::size_t o = 0; o < dout; ++o) acc += wrow[o] * gyi[o];
                gxi[d] += acc;
            }
        }
    }
}

namespace {

struct ConvGeom {
    std::size_t n, cin, h, w, cout, k, oh, ow;
    int pad;
};

ConvGeom conv_geom(const Tensor& x, const Tensor& wt, int stride, Padding pad) {
    require(x.rank() == 4, "conv2d: input must be rank 4 [n,c,h,w]");
    require(wt.rank() == 4, "conv2d: weight must be rank 4 [cout,cin,kh,kw]");
    require(stride >= 1, "conv2d: stride must be >= 1");
    ConvGeom g;
    g.n = x.dim(0);
    g.cin = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.cout = wt.dim(0);
    require(wt.dim(1) == g.cin, "conv2d: weight input channels must match input");
    require(wt.dim(2) == wt.dim(3), "conv2d: kernel must be square");
    g.k = wt.dim(2);
    require(g.k % 2 == 1, "conv2d: kernel size must be odd");
    g.pad = (pad == Padding::Same) ? static_cast<int>(g.k / 2) : 0;
    const long long oh = (static_cast<long long>(g.h) + 2 * g.pad - static_cast<long long>(g.k)) / stride + 1;
    const long long ow = (static_cast<long long>(g.w) + 2 * g.pad - static_cast<long long>(g.k)) / stride + 1;
    require(oh >= 1 && ow >= 1, "conv2d: kernel larger than padded input");
    g.oh = static_cast<std::size_t>(oh);
    g.ow = static_cast<std::size_t>(ow);
    return g;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, Padding pad) {
    const ConvGeom g = conv_geom(x, w, stride, pad);
    require(b.size() == g.cout, "conv2d: bias length must match output channels");

    Tensor y = Tensor::zeros({g.n, g.cout, g.oh, g.ow});
    for (std::size_t i = 0; i < g.n; ++i) {
        for (std::size_t o = 0; o < g.cout; ++o) {
            double* yp = &y.values[((i * g.cout + o) * g.oh) * g.ow];
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
                for (std::size_t ox = 0; ox < g.ow; ++ox) {
                    double acc = b.values[o];
                    const long long iy0 = static_cast<long long>(oy) * stride - g.pad;
                    const long long ix0 = static_cast<long long>(ox) * stride - g.pad;
                    for (std::size_t c = 0; c < g.cin; ++c) {
                        const double* xp = &x.values[((i * g.cin + c) * g.h) * g.w];
                        const double* wp = &w.values[((o * g.cin + c) * g.k) * g.k];
                        for (std::size_t ky = 0; ky < g.k; ++ky) {
                            const long long iy = iy0 + static_cast<long long>(ky);
                            if (iy < 0 || iy >= static_cast<long long>(g.h)) continue;
                            for (std::size_t kx = 0; kx < g.k; ++kx) {
                                const long long ix = ix0 + static_cast<long long>(kx);
                                if (ix < 0 || ix >= static_cast<long long>(g.w)) continue;
                                acc += xp[iy * g.w + ix] * wp[ky * g.k + kx];
                            }
                        }
                    }
                    yp[oy * g.ow + ox] = acc;
                }
            }
        }
    }
    return y;
}

void conv2d_backward(const Tensor& gy, const Tensor& x, const Tensor& w, int stride, Padding pad,
                     std::vector<double>* gx, std::vector<double>* gw, std::vector<double>* gb) {
    const ConvGeom g = conv_geom(x, w, stride, pad);
    for (std::size_t i = 0; i < g.n; ++i) {
        for (std::size_t o = 0; o < g.cout; ++o) {
            const double* gyp = &gy.values[((i * g.cout + o) * g.oh) * g.ow];
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
                for (std::size_t ox = 0; ox < g.ow; ++ox) {
                    const double gv = gyp[oy * g.ow + ox];
                    if (gb != nullptr) (*gb)[o] += gv;
                    const long long iy0 = static_cast<long long>(oy) * stride - g.pad;
                    const long long ix0 = static_cast<long long>(ox) * stride - g.pad;
                    for (std::size_t c = 0; c < g.cin; ++c) {
                        const std::size_t xbase = ((i * g.cin + c) * g.h) * g.w;
                        const std::size_t wbase = ((o * g.cin + c) * g.k) * g.k;
                        for (std::size_t ky = 0; ky < g.k; ++ky) {
                            const long long iy = iy0 + static_cast<long long>(ky);
                            if (iy < 0 || iy >= static_cast<long long>(g.h)) continue;
                            for (std::size_t kx = 0; kx < g.k; ++kx) {
                                const long long ix = ix0 + static_cast<long long>(kx);
                                if (ix < 0 || ix >= static_cast<long long>(g.w)) continue;
                                if (gw != nullptr)
                                    (*gw)[wbase + ky * g.k + kx] += gv * x.values[xbase + iy * g.w + ix];
                                if (gx != nullptr)
                                    (*gx)[xbase + iy * g.w + ix] += gv * w.values[wbase + ky * g.k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    y.requires_grad = false;
    y.grad.clear();
    for (double& v : y.values) v = v > 0.0 ? v : 0.0;
    return y;
}

void relu_backward(const Tensor& gy, const Tensor& x, std::vector<double>* gx) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x.values[i] > 0.0) (*gx)[i] += gy.values[i];
    }
}

Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       BnStats* stats, bool update_stats, BnCache* cache) {
    const ChannelView v = channel_view(x, "batchnorm");
    require(gamma.size() == v.c && beta.size() == v.c, "batchnorm: gamma/beta must match channels");
    const std::size_t m = v.n * v.spatial;  // reduce count per channel
    require(m >= 1, "batchnorm: empty reduce set");

    std::vector<double> mean(v.c, 0.0), var(v.c, 0.0);
    for (std::size_t i = 0; i < v.n; ++i) {
        for (std::size_t c = 0; c < v.c; ++c) {
            const double* xp = &x.values[(i * v.c + c) * v.spatial];
            double acc = 0.0;
            for (std::size_t s = 0; s < v.spatial; ++s) acc += xp[s];
            mean[c] += acc;
        }
    }
    for (std::size_t c = 0; c < v.c; ++c) mean[c] /= static_cast<double>(m);
    for (std::size_t i = 0; i < v.n; ++i) {
        for (std::size_t c = 0; c < v.c; ++c) {
            const double* xp = &x.values[(i * v.c + c) * v.spatial];
            double acc = 0.0;
            for (std::size_t s = 0; s < v.spatial; ++s) {
                const double d = xp[s] - mean[c];
                acc += d * d;
            }
            var[c] += acc;
        }
    }
    for (std::size_t c = 0; c < v.c; ++c) var[c] /= static_cast<double>(m);

    if (stats != nullptr && update_stats) {
        if (!stats->initialized) {
            stats->mean = mean;
            stats->var = var;
            stats->initialized = true;
        } else {
            const double mom = stats->momentum;
            for (std::size_t c = 0; c < v.c; ++c) {
                stats->mean[c] = (1.0 - mom) * stats->mean[c] + mom * mean[c];
                stats->var[c] = (1.0 - mom) * stats->var[c] + mom * var[c];
            }
        }
    }

    Tensor y = Tensor::zeros(x.shape);
    Tensor xhat = Tensor::zeros(x.shape);
    std::vector<double> inv_std(v.c);
    for (std::size_t c = 0; c < v.c; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    for (std::size_t i = 0; i < v.n; ++i) {
        for (std::size_t c = 0; c < v.c; ++c) {
            const std::size_t base = (i * v.c + c) * v.spatial;
            for (std::size_t s = 0; s < v.spatial; ++s) {
                const double xh = (x.values[base + s] - mean[c]) * inv_std[c];
                xhat.values[base + s] = xh;
                y.values[base + s] = gamma.values[c] * xh + beta.values[c];
            }
        }
    }
    if (cache != nullptr) {
        cache->mean = std::move(mean);
        cache->inv_std = std::move(inv_std);
        cache->xhat = std::move(xhat);
    }
    return y;
}

void batchnorm_train_backward(const Tensor& gy, const Tensor& gamma, const BnCache& cache,
                              std::vector<double>* gx, std::vector<double>* ggamma,
                              std::vector<double>* gbeta) {
    const ChannelView v = channel_view(cache.xhat, "batchnorm");
    const double m = static_cast<double>(v.n * v.spatial);

    std::vector<double> sum_gy(v.c, 0.0), sum_gy_xhat(v.c, 0.0);
    for (std::size_t i = 0; i < v.n; ++i) {
        for (std::size_t c = 0; c < v.c; ++c) {
            const std::size_t base = (i * v.c + c) * v.spatial;
            for (std::size_t s = 0; s < v.spatial; ++s) {
                sum_gy[c] += gy.values[base + s];
                sum_gy_xhat[c] += gy.values[base + s] * cache.xhat.values[base + s];
            }
        }
    }
    if (gbeta != nullptr)
        for (std::size_t c = 0; c < v.c; ++c) (*gbeta)[c] += sum_gy[c];
    if (ggamma != nullptr)
        for (std::size_t c = 0; c < v.c; ++c) (*ggamma)[c] += sum_gy_xhat[c];
    if (gx != nullptr) {
        for (std::size_t i = 0; i < v.n; ++i) {
            for (std::size_t c = 0; c < v.c; ++c) {
                const std::size_t base = (i * v.c + c) * v.spatial;
                const double scale = gamma.values[c] * cache.inv_std[c];
                for (std::size_t s = 0; s < v.spatial; ++s) {
                    const double centered = gy.values[base + s] - sum_gy[c] / m -
                                            cache.xhat.values[base + s] * sum_gy_xhat[c] / m;
                    (*gx)[base + s] += scale * centered;
                }
            }
        }
    }
}

Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                      const BnStats& stats) {
    const ChannelView v = channel_view(x, "batchnorm");
    require(gamma.size() == v.c && beta.size() == v.c, "batchnorm: gamma/beta must match channels");
    if (!stats.initialized)
        throw StateError("batchnorm: eval mode with uninitialized running statistics");
    require(stats.mean.size() == v.c, "batchnorm: running stats must match channels");

    Tensor y = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < v.n; ++i) {
        for (std::size_t c = 0; c < v.c; ++c) {
            const double inv = 1.0 / std::sqrt(stats.var[c] + eps);
            const std::size_t base = (i * v.c + c) * v.spatial;
            for (std::size_t s = 0; s < v.spatial; ++s)
                y.values[base + s] = gamma.values[c] * (x.values[base + s] - stats.mean[c]) * inv +
                                     beta.values[c];
        }
    }
    return y;
}

Tensor global_avg_pool(const Tensor& x) {
    require(x.rank() == 4, "global_avg_pool: input must be rank 4");
    const std::size_t n = x.dim(0), c = x.dim(1), spatial = x.dim(2) * x.dim(3);
    Tensor y = Tensor::zeros({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* xp = &x.values[(i * c + ch) * spatial];
            double acc = 0.0;
            for (std::size_t s = 0; s < spatial; ++s) acc += xp[s];
            y.values[i * c + ch] = acc / static_cast<double>(spatial);
        }
    }
    return y;
}

void global_avg_pool_backward(const Tensor& gy, const Tensor& x, std::vector<double>* gx) {
    const std::size_t n = x.dim(0), c = x.dim(1), spatial = x.dim(2) * x.dim(3);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double g = gy.values[i * c + ch] / static_cast<double>(spatial);
            double* gp = &(*gx)[(i * c + ch) * spatial];
            for (std::size_t s = 0; s < spatial; ++s) gp[s] += g;
        }
    }
}

Tensor channel_mask(const Tensor& x, const Tensor& e, double scale) {
    const ChannelView v = channel_view(x, "channel_mask");
    if (e.size() != v.c)
        throw DimensionError("channel_mask: gate length " + std::to_string(e.size()) +
                             " does not match channel count " + std::to_string(v.c));
    Tensor y = Tensor::zeros(x.shape);
    std::vector<double> gate(v.c);
    for (std::size_t c = 0; c < v.c; ++c) gate[c] = sigmoid(scale * e.values[c]);
    for (std::size_t i = 0; i < v.n; ++i) {
        for (std::size_t c = 0; c < v.c; ++c) {
            const std::size_t base = (i * v.c + c) * v.spatial;
            for (std::size_t s = 0; s < v.spatial; ++s)
                y.values[base + s] = x.values[base + s] * gate[c];
        }
    }
    return y;
}

void channel_mask_backward(const Tensor& gy, const Tensor& x, const Tensor& e, double scale,
                           std::vector<double>* gx, std::vector<double>* ge) {
    const ChannelView v = channel_view(x, "channel_mask");
    for (std::size_t c = 0; c < v.c; ++c) {
        const double m = sigmoid(scale * e.values[c]);
        const double dm_de = scale * m * (1.0 - m);
        double acc = 0.0;
        for (std::size_t i = 0; i < v.n; ++i) {
            const std::size_t base = (i * v.c + c) * v.spatial;
            for (std::size_t s = 0; s < v.spatial; ++s) {
                const double g = gy.values[base + s];
                if (gx != nullptr) (*gx)[base + s] += g * m;
                acc += g * x.values[base + s];
            }
        }
        if (ge != nullptr) (*ge)[c] += acc * dm_de;
    }
}

Tensor concat(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw InputError("concat: no inputs");
    const std::size_t n = parts[0]->dim(0);
    std::size_t total = 0;
    for (const Tensor* p : parts) {
        if (p->rank() != 2) throw DimensionError("concat: inputs must be rank 2");
        if (p->dim(0) != n) throw DimensionError("concat: batch sizes differ");
        total += p->dim(1);
    }
    Tensor y = Tensor::zeros({n, total});
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t off = 0;
        for (const Tensor* p : parts) {
            const std::size_t d = p->dim(1);
            std::memcpy(&y.values[i * total + off], &p->values[i * d], d * sizeof(double));
            off += d;
        }
    }
    return y;
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             double temperature, SoftmaxCeCache* cache) {
    if (logits.rank() != 2) throw DimensionError("softmax_ce: logits must be rank 2");
    if (temperature <= 0.0) throw InputError("softmax_ce: temperature must be > 0");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (labels.size() != n) throw InputError("softmax_ce: label count must match batch size");
    for (const int lb : labels) {
        if (lb < 0 || static_cast<std::size_t>(lb) >= c)
            throw InputError("softmax_ce: label " + std::to_string(lb) + " out of range [0," +
                             std::to_string(c) + ")");
    }

    Tensor probs = Tensor::zeros({n, c});
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> z(c);
        for (std::size_t j = 0; j < c; ++j) z[j] = logits.values[i * c + j] / temperature;
        double zmax = z[0];
        for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, z[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(z[j] - zmax);
        const double lse = zmax + std::log(denom);
        for (std::size_t j = 0; j < c; ++j) probs.values[i * c + j] = std::exp(z[j] - lse);
        loss += lse - z[static_cast<std::size_t>(labels[i])];
    }
    loss /= static_cast<double>(n);
    if (cache != nullptr) cache->probs = std::move(probs);
    return loss;
}

void softmax_cross_entropy_backward(double gloss, const std::vector<int>& labels,
                                    double temperature, const SoftmaxCeCache& cache,
                                    std::vector<double>* glogits) {
    const std::size_t n = cache.probs.dim(0), c = cache.probs.dim(1);
    // Divide by n and by T in separate operations: the temperature-vs-
    // prescaled-logits equivalence in the contract is then bit-exact.
    const double gn = gloss / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            double d = cache.probs.values[i * c + j];
            if (j == static_cast<std::size_t>(labels[i])) d -= 1.0;
            (*glogits)[i * c + j] += (d * gn) / temperature;
        }
    }
}

}  // namespace kernels
}  // namespace derlab
