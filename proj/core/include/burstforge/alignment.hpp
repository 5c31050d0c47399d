#pragma once

#include <vector>

#include "burstforge/tensor.hpp"

// Flow estimation oracles, flow pyramids, feature warping, offset
// prediction and deformable convolution for coarse-to-fine alignment.
namespace burstforge::align {

// Per-frame displacement map on the target grid: data is [2,H,W] with
// channel 0 = horizontal dx and channel 1 = vertical dy, in pixels.
// warp(F, flow)(x,y) samples F at (x+dx, y+dy).
struct FlowField {
    Tensor data;

    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }
};

// Full-resolution flow plus halved copies; flow values are divided by 2 at
// each coarser level. levels[0] is the finest.
struct FlowPyramid {
    std::vector<FlowField> levels;
};

FlowField zero_flow(int h, int w);

// Integer-pixel displacement per block minimizing the SAD against src.
// Ties break toward the smallest |d|^2, then lexicographic (dy,dx). Frames
// are [C,H,W]; SAD sums over channels, src reads clamp to the edge.
FlowField block_matching_flow(const Tensor& ref, const Tensor& src, int search_radius,
                              int block);

FlowPyramid build_flow_pyramid(const FlowField& f, int levels = 3);

// Bilinear warp of [C,H,W] by the flow, clamp-to-edge.
Tensor warp(const Tensor& f, const FlowField& flow);

struct OffsetHead {
    Tensor conv1_w, conv1_b;  // 3x3 over the concatenated inputs
    Tensor conv2_w, conv2_b;  // 3x3 -> 2*9*G offset channels
};

// Offsets from (warped feature, reference feature, flow, upsampled coarser
// offsets), tanh-clamped to max_offset. Output [2*9*G,H,W]; channel
// ((g*9+tap)*2 + axis) with axis 0 = x. prev may be empty at the coarsest
// level, in which case zeros are fed.
Tensor predict_offsets(const Tensor& warped, const Tensor& ref, const FlowField& flow,
                       const Tensor& prev, const OffsetHead& head, float max_offset);

// 3x3 deformable convolution (offsets only, no modulation). Sampling
// positions beyond the border read zero, so zero offsets reproduce conv2d
// with zero padding exactly. f [Cin,H,W], offsets [2*9*G,H,W],
// weight [Cout,Cin,3,3].
Tensor deform_conv(const Tensor& f, const Tensor& offsets, const Tensor& weight,
                   const Tensor& bias, int groups);

struct AlignLevelParams {
    OffsetHead offset;
    Tensor dcn1_w, dcn1_b;  // 3x3, C' -> C'
    Tensor dcn2_w, dcn2_b;
    Tensor merge_w, merge_b;  // 1x1, 2C' -> C', folds in the upsampled coarser result
};

struct AlignParams {
    std::vector<AlignLevelParams> levels;  // [0] = finest
    float max_offset = 4.0f;
    int groups = 4;
};

// Coarse-to-fine alignment of one frame's features against the reference.
// Each level warps by its flow, predicts offsets (conditioned on the
// doubled, upsampled coarser offsets), runs two deformable convolutions on
// the warped feature, and folds in the upsampled coarser aligned feature.
// Feature pyramids are built by 2x average pooling.
Tensor pyramid_align(const Tensor& feat, const Tensor& ref_feat, const FlowPyramid& pyr,
                     const AlignParams& p);

}  // namespace burstforge::align
