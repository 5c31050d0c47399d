#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "burstforge/alignment.hpp"
#include "burstforge/attention.hpp"
#include "burstforge/simulator.hpp"
#include "burstforge/state_space.hpp"

// End-to-end network assembly: shallow extraction, encoder stack,
// pixel-shuffle lift, flow-guided alignment, decoder stack with the scaled
// residual, and the two-stage reconstruction head.
namespace burstforge::model {

struct ModelConfig {
    int n_frames = 4;
    int enc_channels = 24;    // C
    int fused_channels = 32;  // C'
    int n_encoders = 4;
    int n_decoders = 4;
    int window = 8;  // P
    float overlap = 0.5f;  // r
    int heads = 4;
    float alpha = 1.0f;  // CFA branch weight in the encoder
    int beta = 4;        // CFA channel reduction
    int expand = 2;      // lambda, RMB channel expansion
    int d_state = 16;
    float s_res = 1.0f;     // residual scale around the decoder stack
    int s_bottleneck = 4;   // local-conv compression inside the RMB
    int upscale = 4;        // s, fixed
    float max_flow = 8.0f;
    float max_offset = 4.0f;
    int deform_groups = 4;
    int pyramid_levels = 3;

    static ModelConfig desk();  // fast test configuration
    static ModelConfig full();  // 14-frame variant

    attn::WindowSpec window_spec() const { return {window, overlap, heads}; }

    // Throws shape_error on any violated divisibility constraint.
    void validate() const;
};

struct ReconParams {
    Tensor stage1_w, stage1_b;  // 3x3, C' -> 4C'
    Tensor skip1_w, skip1_b;    // 1x1 projection of the upsampled reference skip
    Tensor stage2_w, stage2_b;
    Tensor skip2_w, skip2_b;
    Tensor out_w, out_b;  // 3x3, C' -> 3
};

// All parameters implied by a ModelConfig, allocated as zeros on
// construction. The traversal order of visit_params defines the canonical
// checkpoint layout.
struct Model {
    ModelConfig cfg;

    Tensor shallow_w, shallow_b;  // 3x3, 4 -> C
    Tensor flowrgb_w, flowrgb_b;  // 3x3, 1 -> 3, feeds the flow estimator
    std::vector<attn::McaParams> encoders;
    Tensor lift_w, lift_b;  // 1x1, C/4 -> C'
    align::AlignParams align;
    Tensor fuse_w, fuse_b;  // 1x1, N*C' -> C'
    std::vector<ssm::DecoderParams> decoders;
    ReconParams recon;

    explicit Model(const ModelConfig& config);
};

void visit_params(Model& m, const std::function<void(const std::string&, Tensor&)>& fn);

// Fan-in-scaled uniform weights for convs and linears; biases zero; bias
// tables zero; LN gains one; gamma/s'/D one; a_log log-spaced over
// [-1,-1/16]; delta_bias set so softplus gives ~0.05.
void init_random(Model& m, uint64_t seed);

// Checkpoint whose forward pass reproduces a nearest-upsampled mean of the
// reference frame's RGGB channels: every block is configured to pass its
// skip path through unchanged. Sets alpha = 0 and s_res = 0 in the config.
void init_identity_biased(Model& m);

// Pluggable flow estimation (the full-resolution mosaic grid is the target).
struct FlowEstimator {
    virtual ~FlowEstimator() = default;
    virtual align::FlowField estimate(const sim::BurstStack& burst, int frame) const = 0;
};

struct ZeroFlowEstimator final : FlowEstimator {
    align::FlowField estimate(const sim::BurstStack& burst, int frame) const override;
};

// SAD block matching on a bilinearly upsampled mean-of-RGGB luma image.
struct BlockMatchingFlowEstimator final : FlowEstimator {
    int search_radius = 4;
    int block = 8;
    align::FlowField estimate(const sim::BurstStack& burst, int frame) const override;
};

struct PrecomputedFlowEstimator final : FlowEstimator {
    std::vector<align::FlowField> flows;  // index 0 = reference, usually zero
    align::FlowField estimate(const sim::BurstStack& burst, int frame) const override;
};

// ---- pipeline stages ----

// Packed burst -> per-frame shallow features [N,C,h,w].
Tensor shallow_extract(const Model& m, const sim::BurstStack& burst);

// Encoder stack, shape preserving.
Tensor encode(const Model& m, const Tensor& f0);

// Packed burst -> [N,3,H,W] RGB-ish images for flow estimation: pixel
// shuffle to the mosaic grid, then a 3x3 conv from 1 to 3 channels.
Tensor to_rgb_for_flow(const Model& m, const sim::BurstStack& burst);

// Per-frame pixel-shuffle lift (C -> C/4, h -> H=2h) + 1x1 conv to C'.
Tensor lift_frames(const Model& m, const Tensor& fd);  // [N,C',H,W]

// Lift plus pyramid alignment of every frame against frame 0.
Tensor lift_and_align(const Model& m, const Tensor& fd,
                      const std::vector<align::FlowField>& flows);

// 1x1 merge of the frame axis into C', decoder stack, scaled residual.
Tensor fuse_decode(const Model& m, const Tensor& fa);  // [C',H,W]

// Two conv+pixel-shuffle stages with projected reference skips, then the
// RGB head. ref_skip is the lifted reference feature [C',H,W].
Tensor reconstruct(const Model& m, const Tensor& ff, const Tensor& ref_skip);

Tensor forward(const Model& m, const sim::BurstStack& burst, const FlowEstimator& flow);

double l1_loss(const Tensor& a, const Tensor& b);

// ---- checkpoints ----

struct Checkpoint {
    uint32_t version = 1;
    ModelConfig config;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

Checkpoint to_checkpoint(const Model& m);

// Throws shape_error naming the first missing, extra, or mis-shaped tensor.
Model from_checkpoint(const Checkpoint& c);

}  // namespace burstforge::model
