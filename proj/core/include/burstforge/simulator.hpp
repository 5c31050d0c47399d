#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "burstforge/rng.hpp"
#include "burstforge/tensor.hpp"

// Synthetic RAW burst generation with known ground truth: inverse-transform
// warp, box downsampling, RGGB mosaicking and packing, read + shot noise.
namespace burstforge::sim {

// Content displacement of one frame on the low-resolution grid, in pixels,
// plus a rotation about the image center in degrees. A frame with dx=+2
// shows the scene shifted 2 px to the right, so the flow that warps it back
// onto the reference equals (dx, dy).
struct FrameTransform {
    float dx = 0.0f;
    float dy = 0.0f;
    float rot_deg = 0.0f;
};

struct SyntheticBurstSpec {
    int n_frames = 14;
    float max_shift_px = 2.0f;  // LR pixels, frame 0 is always identity
    float max_rot_deg = 1.0f;
    int downscale = 4;
    float read_noise = 0.01f;  // additive sigma
    float shot_noise = 0.02f;  // sigma scale on sqrt(value)
    uint64_t seed = 0;
};

// N packed RGGB frames [4,h,w] plus the degradation metadata that produced
// them. Values are clamped to [0,1].
struct BurstStack {
    std::vector<Tensor> frames;
    std::vector<FrameTransform> transforms;
    SyntheticBurstSpec spec;

    int frame_count() const { return static_cast<int>(frames.size()); }
    int packed_height() const { return frames.at(0).dim(1); }
    int packed_width() const { return frames.at(0).dim(2); }
};

struct GroundTruthRecord {
    Tensor hr_rgb;  // [3,sH,sW]
    std::vector<FrameTransform> transforms;
};

// Frame 0 is identity; the rest draw uniformly within the configured bounds.
std::vector<FrameTransform> random_transforms(const SyntheticBurstSpec& spec, Splitmix64& rng);

// One HR RGB image [3,sH,sW] in [0,1] -> one packed RGGB frame [4,h,w]:
// rotate/translate (bilinear, about the center), box-downsample by s, Bayer
// sample (R at (0,0), G at (0,1)/(1,0), B at (1,1)), pack 2x2 cells into, in
// order, R, G-row0, G-row1, B, add noise, clamp.
Tensor degrade(const Tensor& hr_rgb, const FrameTransform& t, const SyntheticBurstSpec& spec,
               Splitmix64& rng);

std::pair<BurstStack, GroundTruthRecord> generate_burst(const Tensor& hr_rgb,
                                                        const SyntheticBurstSpec& spec);

// Same, with caller-chosen transforms (frame count taken from the list).
std::pair<BurstStack, GroundTruthRecord> generate_burst(
    const Tensor& hr_rgb, const SyntheticBurstSpec& spec,
    const std::vector<FrameTransform>& transforms);

}  // namespace burstforge::sim
