#pragma once

#include <vector>

#include "derlab/param_store.hpp"
#include "derlab/tensor.hpp"

namespace derlab {

enum class Padding { Same, Valid };

// Plain math kernels. The tape wraps these for training; evaluation paths
// call them directly. Backward kernels accumulate (+=) into the output
// gradients so multiple consumers compose; pass nullptr to skip an input.
namespace kernels {

double sigmoid(double z);

// x:[n,din] w:[din,dout] b:[dout] -> [n,dout]
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
void affine_backward(const Tensor& gy, const Tensor& x, const Tensor& w,
                     std::vector<double>* gx, std::vector<double>* gw, std::vector<double>* gb);

// x:[n,cin,h,w] w:[cout,cin,kh,kw] b:[cout]; odd square kernels only.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, Padding pad);
void conv2d_backward(const Tensor& gy, const Tensor& x, const Tensor& w, int stride, Padding pad,
                     std::vector<double>* gx, std::vector<double>* gw, std::vector<double>* gb);

Tensor relu(const Tensor& x);
void relu_backward(const Tensor& gy, const Tensor& x, std::vector<double>* gx);

// Per-channel batch normalization. Rank 2 inputs normalize each feature over
// the batch; rank 4 inputs normalize each channel over batch and space.
struct BnCache {
    std::vector<double> mean;
    std::vector<double> inv_std;  // 1/sqrt(var + eps)
    Tensor xhat;
};

// Train mode: batch statistics, optionally folding them into running stats.
Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       BnStats* stats, bool update_stats, BnCache* cache);
void batchnorm_train_backward(const Tensor& gy, const Tensor& gamma, const BnCache& cache,
                              std::vector<double>* gx, std::vector<double>* ggamma,
                              std::vector<double>* gbeta);

// Eval mode: running statistics; throws StateError when uninitialized.
Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                      const BnStats& stats);

// x:[n,c,h,w] -> [n,c]
Tensor global_avg_pool(const Tensor& x);
void global_avg_pool_backward(const Tensor& gy, const Tensor& x, std::vector<double>* gx);

// y = x * sigmoid(s * e) broadcast over batch and spatial positions;
// e has one entry per channel.
Tensor channel_mask(const Tensor& x, const Tensor& e, double scale);
void channel_mask_backward(const Tensor& gy, const Tensor& x, const Tensor& e, double scale,
                           std::vector<double>* gx, std::vector<double>* ge);

// Concatenates rank-2 tensors along the feature axis.
Tensor concat(const std::vector<const Tensor*>& parts);

struct SoftmaxCeCache {
    Tensor probs;  // softmax(logits / temperature)
};

// Mean over the batch of -log softmax(logits/T)[label]. Stabilized by
// max-subtraction. The temperature division is applied elementwise so a
// caller dividing logits by T up front with T'=1 reproduces it bit-exactly.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             double temperature, SoftmaxCeCache* cache);
void softmax_cross_entropy_backward(double gloss, const std::vector<int>& labels,
                                    double temperature, const SoftmaxCeCache& cache,
                                    std::vector<double>* glogits);

}  // namespace kernels
}  // namespace derlab
