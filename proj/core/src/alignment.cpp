#include "burstforge/alignment.hpp"

#include <algorithm>
#include <cmath>

#include "burstforge/common.hpp"
#include "burstforge/ops.hpp"

namespace burstforge::align {

FlowField zero_flow(int h, int w) { return FlowField{Tensor({2, h, w})}; }

FlowField block_matching_flow(const Tensor& ref, const Tensor& src, int search_radius,
                              int block) {
    require_rank(ref, 3, "block_matching_flow ref");
    require_rank(src, 3, "block_matching_flow src");
    if (!ref.same_shape(src)) throw shape_error("block_matching_flow: frame shapes differ");
    const int c = ref.dim(0), h = ref.dim(1), w = ref.dim(2);
    if (block < 1 || block > h || block > w)
        throw shape_error("block_matching_flow: block larger than frame");
    if (search_radius < 0) throw shape_error("block_matching_flow: negative radius");

    FlowField flow = zero_flow(h, w);
    for (int by = 0; by < h; by += block)
        for (int bx = 0; bx < w; bx += block) {
            const int bh = std::min(block, h - by);
            const int bw = std::min(block, w - bx);
            double best_sad = 0.0;
            int best_dy = 0, best_dx = 0, best_norm = 0;
            bool first = true;
            for (int dy = -search_radius; dy <= search_radius; ++dy)
                for (int dx = -search_radius; dx <= search_radius; ++dx) {
                    double sad = 0.0;
                    for (int ch = 0; ch < c; ++ch)
                        for (int y = 0; y < bh; ++y)
                            for (int x = 0; x < bw; ++x) {
                                const int sy = std::clamp(by + y + dy, 0, h - 1);
                                const int sx = std::clamp(bx + x + dx, 0, w - 1);
                                sad += std::abs(static_cast<double>(ref(ch, by + y, bx + x)) -
                                                static_cast<double>(src(ch, sy, sx)));
                            }
                    const int norm = dy * dy + dx * dx;
                    const bool better =
                        first || sad < best_sad ||
                        (sad == best_sad &&
                         (norm < best_norm ||
                          (norm == best_norm &&
                           (dy < best_dy || (dy == best_dy && dx < best_dx)))));
                    if (better) {
                        best_sad = sad;
                        best_dy = dy;
                        best_dx = dx;
                        best_norm = norm;
                        first = false;
                    }
                }
            for (int y = 0; y < bh; ++y)
                for (int x = 0; x < bw; ++x) {
                    flow.data(0, by + y, bx + x) = static_cast<float>(best_dx);
                    flow.data(1, by + y, bx + x) = static_cast<float>(best_dy);
                }
        }
    return flow;
}

FlowPyramid build_flow_pyramid(const FlowField& f, int levels) {
    require_rank(f.data, 3, "build_flow_pyramid");
    const int div = 1 << (levels - 1);
    if (f.height() % div != 0 || f.width() % div != 0)
        throw shape_error("build_flow_pyramid: dims " + f.data.shape_str() +
                          " not divisible by " + std::to_string(div));
    FlowPyramid pyr;
    pyr.levels.push_back(f);
    for (int l = 1; l < levels; ++l) {
        const Tensor& prev = pyr.levels.back().data;
        Tensor pooled = ops::avg_pool2d(prev.reshaped({1, 2, prev.dim(1), prev.dim(2)}), 2, 2);
        Tensor half = pooled.reshaped({2, pooled.dim(2), pooled.dim(3)});
        for (int64_t i = 0; i < half.numel(); ++i) half.data()[i] *= 0.5f;
        pyr.levels.push_back(FlowField{half});
    }
    return pyr;
}

Tensor warp(const Tensor& f, const FlowField& flow) {
    require_rank(f, 3, "warp");
    if (f.dim(1) != flow.height() || f.dim(2) != flow.width())
        throw shape_error("warp: feature " + f.shape_str() + " and flow dims differ");
    const int h = f.dim(1), w = f.dim(2);
    Tensor coords({1, 2, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            coords(0, 0, y, x) = static_cast<float>(x) + flow.data(0, y, x);
            coords(0, 1, y, x) = static_cast<float>(y) + flow.data(1, y, x);
        }
    Tensor out = ops::bilinear_sample(f.reshaped({1, f.dim(0), h, w}), coords);
    return out.reshaped({f.dim(0), h, w});
}

Tensor predict_offsets(const Tensor& warped, const Tensor& ref, const FlowField& flow,
                       const Tensor& prev, const OffsetHead& head, float max_offset) {
    require_rank(warped, 3, "predict_offsets warped");
    require_rank(ref, 3, "predict_offsets ref");
    if (warped.dim(1) != ref.dim(1) || warped.dim(2) != ref.dim(2) ||
        warped.dim(1) != flow.height() || warped.dim(2) != flow.width())
        throw shape_error("predict_offsets: spatial dims disagree");
    const int h = warped.dim(1), w = warped.dim(2);
    const int off_ch = head.conv2_w.dim(0);

    Tensor w4 = warped.reshaped({1, warped.dim(0), h, w});
    Tensor r4 = ref.reshaped({1, ref.dim(0), h, w});
    Tensor f4 = flow.data.reshaped({1, 2, h, w});
    Tensor p4 = prev.empty() ? Tensor({1, off_ch, h, w}) : prev.reshaped({1, prev.dim(0), h, w});
    Tensor in = ops::concat_channels({&w4, &r4, &f4, &p4});

    Tensor t = ops::conv2d(in, head.conv1_w, head.conv1_b, 1, 1);
    t = ops::activation(t, ops::Act::LeakyRelu, 0.1f);
    t = ops::conv2d(t, head.conv2_w, head.conv2_b, 1, 1);
    for (int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = max_offset * static_cast<float>(std::tanh(static_cast<double>(t.data()[i])));
    return t.reshaped({off_ch, h, w});
}

Tensor deform_conv(const Tensor& f, const Tensor& offsets, const Tensor& weight,
                   const Tensor& bias, int groups) {
    require_rank(f, 3, "deform_conv input");
    require_rank(offsets, 3, "deform_conv offsets");
    require_rank(weight, 4, "deform_conv weight");
    const int cin = f.dim(0), h = f.dim(1), w = f.dim(2);
    const int cout = weight.dim(0);
    if (weight.dim(1) != cin || weight.dim(2) != 3 || weight.dim(3) != 3)
        throw shape_error("deform_conv: weight must be [Cout,Cin,3,3]");
    if (groups < 1 || cin % groups != 0)
        throw shape_error("deform_conv: channels not divisible by deformable groups");
    require_shape(offsets, {2 * 9 * groups, h, w}, "deform_conv offsets");
    const int group_size = cin / groups;

    Tensor out({cout, h, w});
    parallel_for(0, cout, [&](int64_t ocl) {
        const int oc = static_cast<int>(ocl);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = bias.empty() ? 0.0 : static_cast<double>(bias(oc));
                for (int ic = 0; ic < cin; ++ic) {
                    const int g = ic / group_size;
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int tap = ky * 3 + kx;
                            const double ox = offsets((g * 9 + tap) * 2 + 0, y, x);
                            const double oy = offsets((g * 9 + tap) * 2 + 1, y, x);
                            const double sx = x + kx - 1 + ox;
                            const double sy = y + ky - 1 + oy;
                            // bilinear tap with zero outside the extent
                            const int x0 = static_cast<int>(std::floor(sx));
                            const int y0 = static_cast<int>(std::floor(sy));
                            const double fx = sx - x0;
                            const double fy = sy - y0;
                            double v = 0.0;
                            for (int dy = 0; dy <= 1; ++dy)
                                for (int dx = 0; dx <= 1; ++dx) {
                                    const int yy = y0 + dy, xx = x0 + dx;
                                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                                    const double wgt = (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
                                    v += wgt * static_cast<double>(f(ic, yy, xx));
                                }
                            acc += v * static_cast<double>(weight(oc, ic, ky, kx));
                        }
                }
                out(oc, y, x) = static_cast<float>(acc);
            }
    });
    require_finite(out, "deform_conv");
    return out;
}

namespace {

Tensor pool_half(const Tensor& f) {
    Tensor p = ops::avg_pool2d(f.reshaped({1, f.dim(0), f.dim(1), f.dim(2)}), 2, 2);
    return p.reshaped({f.dim(0), p.dim(2), p.dim(3)});
}

Tensor upsample2(const Tensor& f) {
    Tensor u = ops::resize_bilinear(f.reshaped({1, f.dim(0), f.dim(1), f.dim(2)}),
                                    f.dim(1) * 2, f.dim(2) * 2);
    return u.reshaped({f.dim(0), u.dim(2), u.dim(3)});
}

}  // namespace

Tensor pyramid_align(const Tensor& feat, const Tensor& ref_feat, const FlowPyramid& pyr,
                     const AlignParams& p) {
    require_rank(feat, 3, "pyramid_align feat");
    if (!feat.same_shape(ref_feat)) throw shape_error("pyramid_align: feature shapes differ");
    const int levels = static_cast<int>(p.levels.size());
    if (static_cast<int>(pyr.levels.size()) != levels)
        throw shape_error("pyramid_align: flow pyramid has " +
                          std::to_string(pyr.levels.size()) + " levels, params expect " +
                          std::to_string(levels));

    std::vector<Tensor> feat_pyr{feat}, ref_pyr{ref_feat};
    for (int l = 1; l < levels; ++l) {
        feat_pyr.push_back(pool_half(feat_pyr.back()));
        ref_pyr.push_back(pool_half(ref_pyr.back()));
    }
    for (int l = 0; l < levels; ++l)
        if (feat_pyr[static_cast<size_t>(l)].dim(1) != pyr.levels[static_cast<size_t>(l)].height())
            throw shape_error("pyramid_align: level " + std::to_string(l) +
                              " flow/feature dims disagree");

    Tensor prev_offsets;  // from the coarser level, upsampled and doubled
    Tensor prev_aligned;
    for (int l = levels - 1; l >= 0; --l) {
        const AlignLevelParams& lv = p.levels[static_cast<size_t>(l)];
        const Tensor& fl = feat_pyr[static_cast<size_t>(l)];
        const FlowField& flow = pyr.levels[static_cast<size_t>(l)];

        Tensor warped = warp(fl, flow);
        Tensor offsets = predict_offsets(warped, ref_pyr[static_cast<size_t>(l)], flow,
                                         prev_offsets, lv.offset, p.max_offset);
        Tensor aligned = deform_conv(warped, offsets, lv.dcn1_w, lv.dcn1_b, p.groups);
        aligned = ops::activation(aligned, ops::Act::LeakyRelu, 0.1f);
        aligned = deform_conv(aligned, offsets, lv.dcn2_w, lv.dcn2_b, p.groups);

        const int c = aligned.dim(0), h = aligned.dim(1), w = aligned.dim(2);
        Tensor coarse = prev_aligned.empty() ? Tensor({c, h, w}) : upsample2(prev_aligned);
        Tensor a4 = aligned.reshaped({1, c, h, w});
        Tensor c4 = coarse.reshaped({1, c, h, w});
        Tensor merged = ops::conv2d(ops::concat_channels({&a4, &c4}), lv.merge_w, lv.merge_b);
        aligned = merged.reshaped({c, h, w});

        if (l > 0) {
            prev_offsets = upsample2(offsets);
            for (int64_t i = 0; i < prev_offsets.numel(); ++i) prev_offsets.data()[i] *= 2.0f;
            prev_aligned = aligned;
        } else {
            return aligned;
        }
    }
    throw shape_error("pyramid_align: no levels configured");
}

}  // namespace burstforge::align
