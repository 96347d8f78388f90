#pragma once

#include <span>

#include "vitc/autograd.hpp"

/// Differentiable tensor operations. Matrices are [rows x cols]; images and
/// feature maps are channel-major [C x H x W].
namespace vitc::ops {

// ---- elementwise -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var sum(const Var& a);
Var mean(const Var& a);
Var gelu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);
Var tanh(const Var& a);

// ---- matrices ----------------------------------------------------------------
Var matmul(const Var& a, const Var& b);
/// x[n x in] * w[in x out] + b[out]
Var linear(const Var& x, const Var& w, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);
/// Adds row vector v[d] to every row of x[n x d].
Var add_row(const Var& x, const Var& v);
/// Replicates v[d] into an [rows x d] matrix.
Var broadcast_rows(const Var& v, int rows);
/// Row-wise layer normalization with affine gamma/beta of length d.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_rows(const Var& x);
/// Scaled dot-product attention with `heads` heads; q[Lq x D], k,v[Lk x D].
Var attention(const Var& q, const Var& k, const Var& v, int heads);

// ---- feature maps ----------------------------------------------------------
/// x[Ci x H x W], w[Co x Ci x k x k], b[Co]; zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
/// Transposed convolution with kernel 2 and stride 2: w[Ci x Co x 2 x 2].
Var conv_transpose2x2(const Var& x, const Var& w, const Var& b);
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Bilinear resampling with half-pixel centers (align_corners = false).
Var resize_bilinear(const Var& x, int out_h, int out_w);
Var concat_channels(std::span<const Var> parts);
Var softmax_channels(const Var& x);

// ---- losses ------------------------------------------------------------------
inline constexpr double kProbEps = 1e-7;
/// Mean of -(1-p_t)^gamma log p_t; probabilities clamped to [eps, 1-eps].
Var focal_loss(const Var& probs, const Tensor& target, double gamma);
/// 1 - (2 sum p*y + smooth) / (sum p + sum y + smooth).
Var dice_loss(const Var& probs, const Tensor& target, double smooth);
/// Mean over pixels of -log p[label]; probs[C x H x W], labels flat [H*W].
Var cross_entropy(const Var& probs, std::span<const int> labels);
/// Mean over channels of the soft Dice loss against one-hot labels.
Var multiclass_dice(const Var& probs, std::span<const int> labels, double smooth);

// ---- plain helpers -----------------------------------------------------------
/// Interpolation taps for one axis (two source indices and weights per output).
struct ResizeTaps {
    std::vector<int> lo, hi;
    std::vector<double> w_lo, w_hi;
};
ResizeTaps bilinear_taps(int in, int out);
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
/// Nearest-neighbour resampling of an integer label plane [H x W].
std::vector<int> resize_nearest(std::span<const int> labels, int in_h, int in_w, int out_h, int out_w);

}  // namespace vitc::ops
