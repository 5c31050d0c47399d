#include "burstforge/simulator.hpp"

#include <algorithm>
#include <cmath>

#include "burstforge/common.hpp"
#include "burstforge/ops.hpp"

namespace burstforge::sim {

std::vector<FrameTransform> random_transforms(const SyntheticBurstSpec& spec, Splitmix64& rng) {
    if (spec.n_frames < 1) throw shape_error("random_transforms: need at least one frame");
    std::vector<FrameTransform> out(static_cast<size_t>(spec.n_frames));
    for (int i = 1; i < spec.n_frames; ++i) {
        FrameTransform& t = out[static_cast<size_t>(i)];
        t.dx = static_cast<float>(rng.uniform(-spec.max_shift_px, spec.max_shift_px));
        t.dy = static_cast<float>(rng.uniform(-spec.max_shift_px, spec.max_shift_px));
        t.rot_deg = static_cast<float>(rng.uniform(-spec.max_rot_deg, spec.max_rot_deg));
    }
    return out;
}

Tensor degrade(const Tensor& hr_rgb, const FrameTransform& t, const SyntheticBurstSpec& spec,
               Splitmix64& rng) {
    require_rank(hr_rgb, 3, "degrade hr_rgb");
    if (hr_rgb.dim(0) != 3) throw shape_error("degrade: HR image must have 3 channels");
    const int s = spec.downscale;
    const int hh = hr_rgb.dim(1), hw = hr_rgb.dim(2);
    if (hh % (2 * s) != 0 || hw % (2 * s) != 0)
        throw shape_error("degrade: HR dims " + hr_rgb.shape_str() +
                          " not divisible by 2*downscale");

    // Transformed frame content: out(p) = HR(R^-1(p - c - t_hr) + c), so a
    // positive dx moves the scene to the right by dx LR pixels.
    const double tx = static_cast<double>(t.dx) * s;
    const double ty = static_cast<double>(t.dy) * s;
    const double ang = static_cast<double>(t.rot_deg) * 3.14159265358979323846 / 180.0;
    const double ca = std::cos(ang), sa = std::sin(ang);
    const double cx = (hw - 1) / 2.0, cy = (hh - 1) / 2.0;
    Tensor coords({1, 2, hh, hw});
    for (int y = 0; y < hh; ++y)
        for (int x = 0; x < hw; ++x) {
            const double rx = x - cx - tx;
            const double ry = y - cy - ty;
            coords(0, 0, y, x) = static_cast<float>(ca * rx + sa * ry + cx);
            coords(0, 1, y, x) = static_cast<float>(-sa * rx + ca * ry + cy);
        }
    Tensor moved = ops::bilinear_sample(hr_rgb.reshaped({1, 3, hh, hw}), coords);

    // box-downsample by s, then Bayer-sample on the mosaic grid
    Tensor lr = ops::avg_pool2d(moved, s, s);  // [1,3,mh,mw]
    const int mh = lr.dim(2), mw = lr.dim(3);
    const int ph = mh / 2, pw = mw / 2;
    Tensor packed({4, ph, pw});
    for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x) {
            packed(0, y, x) = lr(0, 0, 2 * y, 2 * x);          // R
            packed(1, y, x) = lr(0, 1, 2 * y, 2 * x + 1);      // G, row 0
            packed(2, y, x) = lr(0, 1, 2 * y + 1, 2 * x);      // G, row 1
            packed(3, y, x) = lr(0, 2, 2 * y + 1, 2 * x + 1);  // B
        }

    if (spec.read_noise > 0.0f || spec.shot_noise > 0.0f) {
        for (int64_t i = 0; i < packed.numel(); ++i) {
            const double v = packed.data()[i];
            double n = static_cast<double>(spec.read_noise) * rng.gaussian();
            if (spec.shot_noise > 0.0f && v > 0.0)
                n += static_cast<double>(spec.shot_noise) * std::sqrt(v) * rng.gaussian();
            packed.data()[i] = static_cast<float>(v + n);
        }
    }
    for (int64_t i = 0; i < packed.numel(); ++i)
        packed.data()[i] = std::clamp(packed.data()[i], 0.0f, 1.0f);
    return packed;
}

std::pair<BurstStack, GroundTruthRecord> generate_burst(
    const Tensor& hr_rgb, const SyntheticBurstSpec& spec,
    const std::vector<FrameTransform>& transforms) {
    if (transforms.empty()) throw shape_error("generate_burst: empty transform list");
    BurstStack stack;
    stack.spec = spec;
    stack.transforms = transforms;
    Splitmix64 root(spec.seed);
    for (size_t i = 0; i < transforms.size(); ++i) {
        Splitmix64 frame_rng = root.substream(i);
        stack.frames.push_back(degrade(hr_rgb, transforms[i], spec, frame_rng));
    }
    return {std::move(stack), GroundTruthRecord{hr_rgb, transforms}};
}

std::pair<BurstStack, GroundTruthRecord> generate_burst(const Tensor& hr_rgb,
                                                        const SyntheticBurstSpec& spec) {
    Splitmix64 root(spec.seed);
    Splitmix64 transform_rng = root.substream(0xFFFFFFFFULL);
    return generate_burst(hr_rgb, spec, random_transforms(spec, transform_rng));
}

}  // namespace burstforge::sim
