#pragma once

#include <vector>

#include "burstforge/tensor.hpp"

// Primitive numerical kernels. Everything here is a pure function of its
// inputs; dot products accumulate in double and results are stored as
// float32. Every kernel validates that its output is finite.
namespace burstforge::ops {

enum class Act { Silu, Gelu, Sigmoid, Relu, LeakyRelu };

// Cross-correlation with zero padding (deep-learning convention, no kernel
// flip). input [N,Cin,H,W], weight [Cout,Cin/groups,k,k], bias [Cout] or empty.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int padding = 0, int groups = 1);

// Affine map over the last axis, batched over all leading axes.
// input [...,Din], weight [Dout,Din], bias [Dout] or empty.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Normalizes the last axis to zero mean / unit variance, then scales by
// gamma and shifts by beta (both [D]).
Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);

// Max-subtracted softmax over the last axis.
Tensor softmax_lastdim(const Tensor& input);

Tensor activation(const Tensor& input, Act kind, float slope = 0.1f);

// Mean over k x k windows. When k == stride the spatial dims must divide
// evenly (pyramid mode).
Tensor avg_pool2d(const Tensor& input, int k, int stride);

// [N,C*u*u,H,W] -> [N,C,uH,uW]; out(n,c,h*u+i,w*u+j) = in(n,c*u*u+i*u+j,h,w).
Tensor pixel_shuffle(const Tensor& input, int upscale);
Tensor pixel_unshuffle(const Tensor& input, int downscale);

// coords [N,2,H',W'] holds absolute (x,y) sample positions; channel 0 is x.
// Out-of-range positions clamp to the edge.
Tensor bilinear_sample(const Tensor& input, const Tensor& coords);

Tensor pad_zero(const Tensor& input, int top, int bottom, int left, int right);

// ---- layout helpers shared by the block modules ----

// [N,C,H,W] -> [N*H*W,C] token matrix and back.
Tensor nchw_to_tokens(const Tensor& f);
Tensor tokens_to_nchw(const Tensor& tokens, int n, int c, int h, int w);

// layer_norm over the channel axis of an NCHW map.
Tensor layer_norm_channels(const Tensor& f, const Tensor& gamma, const Tensor& beta,
                           float eps = 1e-5f);

// Channel concatenation of same-[N,*,H,W] maps.
Tensor concat_channels(const std::vector<const Tensor*>& parts);

// Bilinear resize of [N,C,H,W] to [N,C,out_h,out_w] (half-pixel centers).
Tensor resize_bilinear(const Tensor& f, int out_h, int out_w);

double sigmoid(double x);
double silu(double x);
double gelu(double x);

}  // namespace burstforge::ops
