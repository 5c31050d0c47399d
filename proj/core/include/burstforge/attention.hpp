#pragma once

#include <vector>

#include "burstforge/ops.hpp"
#include "burstforge/tensor.hpp"

// Overlapping cross-window attention, cross-frame channel gating, and the
// encoder block that combines them.
namespace burstforge::attn {

struct WindowSpec {
    int window = 8;        // query window side P
    float overlap = 0.5f;  // overlap rate r, >= 0
    int heads = 4;

    // Key/value window side P' = round(P*(1+r)), nudged up so P'-P is even
    // and the per-side padding is integral.
    int kv_window() const { return kv_window_for(window, overlap); }
    int pad() const { return (kv_window() - window) / 2; }

    static int kv_window_for(int p, float r);
};

// Learnable relative-position bias, one table row per (dy,dx) offset between
// a query token and a key token. Table is [heads, (P+P'-1)^2].
struct RelPosBias {
    Tensor table;
};

int relpos_table_side(int p, int pk);

// Row of the bias table for every (query, key) token pair; length P^2 * P'^2.
std::vector<int> relpos_index_map(int p, int pk);

// [B,C,H,W] -> [B*nW, P^2, C]; H and W must divide by P. Windows are laid
// out row-major, tokens row-major within each window.
Tensor partition_q_windows(const Tensor& f, const WindowSpec& spec);

// Inverse of partition_q_windows.
Tensor merge_q_windows(const Tensor& windows, const WindowSpec& spec, int b, int c, int h, int w);

// [B,C,H,W] -> [B*nW, P'^2, C]: one P'xP' block per query window, centered
// on it, zero outside the feature extent.
Tensor extract_kv_windows(const Tensor& f, const WindowSpec& spec);

// Multi-head attention within each window: softmax(QK^T/sqrt(d) + B)V,
// followed by the output projection proj_w/proj_b ([C,C],[C]).
Tensor window_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const RelPosBias& bias, int heads,
                        const Tensor& proj_w, const Tensor& proj_b);

struct CwaParams {
    Tensor q_w, q_b;  // 1x1 conv projections [C,C,1,1]/[C]
    Tensor k_w, k_b;
    Tensor v_w, v_b;
    Tensor proj_w, proj_b;  // output linear [C,C]/[C]
    RelPosBias bias;
};

// Project, partition, attend, reassemble. Pads H,W symmetrically to a
// multiple of P and crops afterwards. Pre-residual output.
Tensor cwa_block(const Tensor& f, const CwaParams& p, const WindowSpec& spec);

struct CfaParams {
    Tensor conv1_w, conv1_b;  // 3x3, C -> C/beta
    Tensor conv2_w, conv2_b;  // 3x3, C/beta -> C
};

// Per-channel sigmoid gate from globally pooled statistics: [B,C].
Tensor cfa_gate(const Tensor& f, const CfaParams& p);

// F * gate, gate broadcast over the spatial dims.
Tensor cfa_block(const Tensor& f, const CfaParams& p);

struct McaParams {
    Tensor ln1_g, ln1_b;  // shared by the CWA and CFA branches
    CwaParams cwa;
    CfaParams cfa;  // over the N*C frame-stacked channels
    Tensor ln2_g, ln2_b;
    Tensor mlp1_w, mlp1_b;  // C -> 2C
    Tensor mlp2_w, mlp2_b;  // 2C -> C
};

// One encoder block over [N,C,H,W] frame features: windowed cross attention
// and the frame-stacked channel gate in parallel, alpha-weighted sum plus
// skip, then a per-token MLP with its own skip.
Tensor mca_encoder_block(const Tensor& f0, const McaParams& p, const WindowSpec& spec,
                         float alpha);

}  // namespace burstforge::attn
