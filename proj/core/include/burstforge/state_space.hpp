#pragma once

#include <array>

#include "burstforge/attention.hpp"
#include "burstforge/tensor.hpp"

// Selective state-space scan, the four-direction 2-D multi-scan, the
// gated residual scan block (RMB) and the decoder block built on it.
namespace burstforge::ssm {

// Input-dependent diagonal state-space parameters for one scan direction.
// The state matrix is stored as a_log with A = -exp(a_log), so the dynamics
// decay for every parameter value. Per token, the projections produce
//   delta = softplus(delta_w x + delta_bias)   in R^D (per channel)
//   B     = b_w x + b_bias, C = c_w x + c_bias in R^S (shared by channels)
struct SsmParams {
    Tensor a_log;       // [D,S]
    Tensor skip_d;      // [D]
    Tensor delta_w;     // [D,D]
    Tensor delta_bias;  // [D]
    Tensor b_w;         // [S,D]
    Tensor b_bias;      // [S]
    Tensor c_w;         // [S,D]
    Tensor c_bias;      // [S]

    int inner_dim() const { return a_log.dim(0); }
    int state_dim() const { return a_log.dim(1); }
};

// Zero-order-hold step for one (delta, a) pair with the first-order input
// term: a_bar = exp(delta*a), b_bar = delta*b. Requires delta > 0.
void discretize(double delta, double a, double b, double& a_bar, double& b_bar);

// Left-to-right recurrence over x [L,D]:
//   h_t = a_bar_t h_{t-1} + b_bar_t x_t,  y_t = C_t . h_t + D x_t
Tensor selective_scan_1d(const Tensor& x, const SsmParams& p);

// Scan orders for the 2-D multi-scan. Reverse orders are full sequence
// reversals of their forward counterparts.
enum ScanDir { kRowForward = 0, kRowReverse = 1, kColForward = 2, kColReverse = 3 };

// Flattens [C,H,W] along each of the four orders, scans each with its own
// parameter set, restores the 2-D layout and sums the results.
Tensor multi_scan_2d(const Tensor& f, const std::array<SsmParams, 4>& params);

struct RmbParams {
    Tensor in_a_w, in_a_b;  // C' -> lambda*C'
    Tensor dw_w, dw_b;      // depthwise 3x3 over lambda*C'
    std::array<SsmParams, 4> scans;
    Tensor ln1_g, ln1_b;    // over lambda*C', after the multi-scan
    Tensor in_b_w, in_b_b;  // C' -> lambda*C' gate branch
    Tensor out_w, out_b;    // lambda*C' -> C'
    Tensor ln2_g, ln2_b;    // over C', feeds the local bottleneck
    Tensor local1_w, local1_b;  // 3x3, C' -> C'/s_b
    Tensor local2_w, local2_b;  // 3x3, C'/s_b -> C'
};

// Gated scan block over [C',H,W]: a scan branch and a SiLU gate branch fused
// by the Hadamard product, projected back to C', then a local bottleneck
// convolution over the normalized result added residually to restore
// neighborhood similarity lost in the 1-D flattening.
Tensor rmb_block(const Tensor& f, const RmbParams& p);

struct DecoderParams {
    Tensor ln_g, ln_b;  // over C', ahead of the RMB
    RmbParams rmb;
    Tensor gamma;         // [C'] skip scale on the RMB residual
    Tensor ln2_g, ln2_b;  // over C', ahead of the fusion conv
    Tensor conv_w, conv_b;  // 3x3, C' -> C'
    attn::CfaParams cfa;
    Tensor s_prime;  // [C'] skip scale on the CFA residual
};

// F_l = RMB(LN(F)) + gamma*F, then CFA(Conv(LN(F_l))) + s'*F_l.
Tensor decoder_block(const Tensor& f, const DecoderParams& p);

}  // namespace burstforge::ssm
