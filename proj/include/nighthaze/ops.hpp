#pragma once

#include <vector>

#include "nighthaze/tensor.hpp"

// Differentiable tensor operations. Feature maps are NCHW, token sequences
// are [N, T, D].
namespace nighthaze::nn {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Elementwise product of equally shaped tensors.
Tensor mul(const Tensor& a, const Tensor& b);
/// x[N,C,...] * s where s is [1,C,1,1] or [N,C,1,1].
Tensor mul_channels(const Tensor& x, const Tensor& s);
/// x[N,...] + b[1,...]: adds the same tensor to every batch item.
Tensor add_batch_broadcast(const Tensor& x, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// sum |a - b|
Tensor l1_distance(const Tensor& a, const Tensor& b);

/// Zero-padded 2-D convolution; w is [Cout, Cin, kh, kw], b is [Cout] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int pad = 0);
/// Depthwise 3x3 convolution with zero padding 1; w is [C,1,3,3].
Tensor depthwise_conv3x3(const Tensor& x, const Tensor& w, const Tensor& b);

/// Layer norm across channels at every pixel (NAF-style LayerNorm2d).
Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
/// Layer norm across the last dimension of a token tensor.
Tensor layer_norm_tokens(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

/// [N,2C,H,W] -> [N,C,H,W]: first half times second half.
Tensor simple_gate(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);
Tensor avg_pool2d(const Tensor& x, int k);
Tensor pixel_shuffle(const Tensor& x, int r);

/// Reflect-pads the bottom and right edges.
Tensor reflect_pad(const Tensor& x, int pad_bottom, int pad_right);
/// Keeps the top-left height x width window.
Tensor crop_top_left(const Tensor& x, int height, int width);
/// Bilinear resize with aligned corners.
Tensor resize_bilinear(const Tensor& x, int height, int width);

Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& t, int height, int width);
/// [N,C,H,W] -> [N*(H/win)*(W/win), win*win, C], windows in raster order.
Tensor window_partition(const Tensor& x, int win);
/// Inverse of window_partition for a batch of n images of size height x width.
Tensor window_merge(const Tensor& t, int n, int height, int width, int win);

/// x[N,T,Din] * w[Din,Dout] + b[Dout]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Scaled dot-product attention per head on already projected q, k, v
/// ([N,T,D], D divisible by heads). When `weights` is non-null it receives
/// the softmax matrices laid out [N, heads, Tq, Tk].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 std::vector<double>* weights = nullptr);

/// Scalar node whose value and gradient w.r.t. `input` were computed by the
/// caller; backward scales `grad` by the incoming gradient.
Tensor custom_scalar(const Tensor& input, double value, std::vector<double> grad);

/// Sums scalars with constant weights.
Tensor weighted_sum(const std::vector<Tensor>& scalars, const std::vector<double>& weights);

}  // namespace nighthaze::nn
