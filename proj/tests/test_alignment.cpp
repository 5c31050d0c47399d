#include <doctest.h>

#include <cmath>

#include "burstforge/alignment.hpp"
#include "burstforge/ops.hpp"
#include "burstforge/rng.hpp"

using burstforge::Splitmix64;
using burstforge::Tensor;
namespace align = burstforge::align;
namespace ops = burstforge::ops;

namespace {

Tensor random_tensor(Splitmix64& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
    return m;
}

Tensor textured(int h, int w) {
    Tensor t({1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            t(0, y, x) = static_cast<float>(0.5 + 0.3 * std::sin(0.7 * x) +
                                            0.2 * std::cos(0.9 * y + 0.3 * x));
    return t;
}

}  // namespace

TEST_CASE("block matching on identical frames returns zero flow") {
    Tensor ref = textured(24, 24);
    align::FlowField f = align::block_matching_flow(ref, ref, 3, 8);
    for (int64_t i = 0; i < f.data.numel(); ++i) CHECK(f.data.data()[i] == 0.0f);
}

TEST_CASE("block matching recovers a constructed +2 shift as flow -2") {
    const int hw = 32;
    Tensor ref = textured(hw, hw);
    // src(x,y) = ref(x+2, y): the scene appears displaced left by two
    Tensor src({1, hw, hw});
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) src(0, y, x) = ref(0, y, std::min(x + 2, hw - 1));
    align::FlowField f = align::block_matching_flow(ref, src, 3, 8);
    for (int y = 8; y < hw - 8; ++y)
        for (int x = 8; x < hw - 8; ++x) {
            CHECK(f.data(0, y, x) == -2.0f);
            CHECK(f.data(1, y, x) == 0.0f);
        }
}

TEST_CASE("zero search radius and oversized blocks") {
    Tensor ref = textured(16, 16);
    Tensor src = textured(16, 16);
    align::FlowField f = align::block_matching_flow(ref, src, 0, 4);
    for (int64_t i = 0; i < f.data.numel(); ++i) CHECK(f.data.data()[i] == 0.0f);
    CHECK_THROWS_AS(align::block_matching_flow(ref, src, 2, 20), burstforge::shape_error);
}

TEST_CASE("flow pyramid halves spatial dims and magnitudes") {
    align::FlowField f = align::zero_flow(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            f.data(0, y, x) = 4.0f;
            f.data(1, y, x) = 2.0f;
        }
    align::FlowPyramid pyr = align::build_flow_pyramid(f, 3);
    CHECK(pyr.levels[1].data(0, 0, 0) == 2.0f);
    CHECK(pyr.levels[1].data(1, 0, 0) == 1.0f);
    CHECK(pyr.levels[2].data(0, 1, 1) == 1.0f);
    CHECK(pyr.levels[2].data(1, 1, 1) == 0.5f);
    CHECK(pyr.levels[2].height() == 2);

    align::FlowField z = align::zero_flow(8, 8);
    align::FlowPyramid zp = align::build_flow_pyramid(z, 3);
    for (const auto& lvl : zp.levels)
        for (int64_t i = 0; i < lvl.data.numel(); ++i) CHECK(lvl.data.data()[i] == 0.0f);

    align::FlowField bad = align::zero_flow(6, 6);
    CHECK_THROWS_AS(align::build_flow_pyramid(bad, 3), burstforge::shape_error);
}

TEST_CASE("warp by zero flow is the identity, bit-exactly") {
    Splitmix64 rng(51);
    Tensor f = random_tensor(rng, {3, 7, 9});
    CHECK(max_abs_diff(align::warp(f, align::zero_flow(7, 9)), f) == 0.0);
}

TEST_CASE("integer and fractional warps shift a ramp") {
    const int hw = 8;
    Tensor f({1, hw, hw});
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) f(0, y, x) = static_cast<float>(x);
    align::FlowField one = align::zero_flow(hw, hw);
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) one.data(0, y, x) = 1.0f;
    Tensor w1 = align::warp(f, one);
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw - 1; ++x) CHECK(w1(0, y, x) == f(0, y, x + 1));

    align::FlowField half = align::zero_flow(hw, hw);
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) half.data(0, y, x) = 0.5f;
    Tensor wh = align::warp(f, half);
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw - 1; ++x)
            CHECK(wh(0, y, x) == doctest::Approx(0.5f * (f(0, y, x) + f(0, y, x + 1))));
}

namespace {

align::OffsetHead random_head(Splitmix64& rng, int in_ch, int groups) {
    align::OffsetHead h;
    h.conv1_w = random_tensor(rng, {8, in_ch, 3, 3}, -0.5, 0.5);
    h.conv1_b = random_tensor(rng, {8});
    h.conv2_w = random_tensor(rng, {2 * 9 * groups, 8, 3, 3}, -0.5, 0.5);
    h.conv2_b = random_tensor(rng, {2 * 9 * groups});
    return h;
}

}  // namespace

TEST_CASE("predict_offsets contract: zero weights, channel count, clamping") {
    Splitmix64 rng(52);
    const int c = 4, hw = 8, g = 2;
    Tensor warped = random_tensor(rng, {c, hw, hw});
    Tensor ref = random_tensor(rng, {c, hw, hw});
    align::FlowField flow = align::zero_flow(hw, hw);

    align::OffsetHead zero;
    zero.conv1_w = Tensor({8, 2 * c + 2 + 2 * 9 * g, 3, 3});
    zero.conv1_b = Tensor({8});
    zero.conv2_w = Tensor({2 * 9 * g, 8, 3, 3});
    zero.conv2_b = Tensor({2 * 9 * g});
    Tensor off = align::predict_offsets(warped, ref, flow, Tensor(), zero, 4.0f);
    CHECK(off.shape() == std::vector<int>{2 * 9 * g, hw, hw});
    for (int64_t i = 0; i < off.numel(); ++i) CHECK(off.data()[i] == 0.0f);

    align::OffsetHead rnd = random_head(rng, 2 * c + 2 + 2 * 9 * g, g);
    // large biases push tanh toward saturation; outputs stay bounded
    for (int64_t i = 0; i < rnd.conv2_b.numel(); ++i)
        rnd.conv2_b.data()[i] = static_cast<float>(rng.uniform(-30.0, 30.0));
    Tensor off2 = align::predict_offsets(warped, ref, flow, Tensor(), rnd, 4.0f);
    for (int64_t i = 0; i < off2.numel(); ++i) {
        CHECK(off2.data()[i] <= 4.0f);
        CHECK(off2.data()[i] >= -4.0f);
    }
}

TEST_CASE("deformable convolution with zero offsets equals conv2d") {
    Splitmix64 rng(53);
    const int cin = 4, cout = 3, hw = 7, g = 2;
    Tensor f = random_tensor(rng, {cin, hw, hw});
    Tensor w = random_tensor(rng, {cout, cin, 3, 3});
    Tensor b = random_tensor(rng, {cout});
    Tensor off({2 * 9 * g, hw, hw});
    Tensor got = align::deform_conv(f, off, w, b, g);
    Tensor want = ops::conv2d(f.reshaped({1, cin, hw, hw}), w, b, 1, 1);
    CHECK(max_abs_diff(got, want.reshaped({cout, hw, hw})) < 1e-5);
}

TEST_CASE("constant integer offsets sample the shifted image on the interior") {
    Splitmix64 rng(54);
    const int hw = 8;
    Tensor f = random_tensor(rng, {1, hw, hw});
    Tensor w = random_tensor(rng, {1, 1, 3, 3});
    // every tap shifted by (+1, 0)
    Tensor off({2 * 9, hw, hw});
    for (int tap = 0; tap < 9; ++tap)
        for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x) off(tap * 2 + 0, y, x) = 1.0f;
    Tensor got = align::deform_conv(f, off, w, Tensor(), 1);

    Tensor shifted({1, hw, hw});
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x)
            shifted(0, y, x) = x + 1 < hw ? f(0, y, x + 1) : 0.0f;
    Tensor want = ops::conv2d(shifted.reshaped({1, 1, hw, hw}), w, Tensor(), 1, 1);
    for (int y = 1; y < hw - 1; ++y)
        for (int x = 1; x < hw - 2; ++x)
            CHECK(got(0, y, x) == doctest::Approx(want(0, 0, y, x)).epsilon(1e-5));
}

namespace {

align::AlignParams make_params(Splitmix64& rng, int c, int g, int levels, bool zero_offsets,
                               bool identity_merge) {
    align::AlignParams p;
    p.max_offset = 4.0f;
    p.groups = g;
    const int off_ch = 2 * 9 * g;
    for (int l = 0; l < levels; ++l) {
        align::AlignLevelParams lv;
        if (zero_offsets) {
            lv.offset.conv1_w = Tensor({8, 2 * c + 2 + off_ch, 3, 3});
            lv.offset.conv1_b = Tensor({8});
            lv.offset.conv2_w = Tensor({off_ch, 8, 3, 3});
            lv.offset.conv2_b = Tensor({off_ch});
        } else {
            lv.offset = random_head(rng, 2 * c + 2 + off_ch, g);
        }
        lv.dcn1_w = random_tensor(rng, {c, c, 3, 3}, -0.3, 0.3);
        lv.dcn1_b = random_tensor(rng, {c});
        lv.dcn2_w = random_tensor(rng, {c, c, 3, 3}, -0.3, 0.3);
        lv.dcn2_b = random_tensor(rng, {c});
        lv.merge_w = Tensor({c, 2 * c, 1, 1});
        lv.merge_b = Tensor({c});
        if (identity_merge) {
            for (int ch = 0; ch < c; ++ch) lv.merge_w(ch, ch, 0, 0) = 1.0f;
        } else {
            lv.merge_w = random_tensor(rng, {c, 2 * c, 1, 1}, -0.3, 0.3);
            lv.merge_b = random_tensor(rng, {c});
        }
        p.levels.push_back(std::move(lv));
    }
    return p;
}

}  // namespace

TEST_CASE("pyramid_align with zero flow and zero offsets is the plain conv stack") {
    Splitmix64 rng(55);
    const int c = 4, hw = 16, g = 2;
    align::AlignParams p = make_params(rng, c, g, 3, true, true);
    Tensor feat = random_tensor(rng, {c, hw, hw});
    Tensor ref = random_tensor(rng, {c, hw, hw});
    align::FlowPyramid pyr = align::build_flow_pyramid(align::zero_flow(hw, hw), 3);
    Tensor got = align::pyramid_align(feat, ref, pyr, p);

    Tensor f4 = feat.reshaped({1, c, hw, hw});
    Tensor step = ops::conv2d(f4, p.levels[0].dcn1_w, p.levels[0].dcn1_b, 1, 1);
    step = ops::activation(step, ops::Act::LeakyRelu, 0.1f);
    step = ops::conv2d(step, p.levels[0].dcn2_w, p.levels[0].dcn2_b, 1, 1);
    CHECK(max_abs_diff(got, step.reshaped({c, hw, hw})) < 1e-5);
}

TEST_CASE("three-level pyramid with constant flow matches single-level alignment") {
    Splitmix64 rng(56);
    const int c = 4, hw = 16, g = 2;
    align::AlignParams p3 = make_params(rng, c, g, 3, true, true);
    align::AlignParams p1;
    p1.max_offset = p3.max_offset;
    p1.groups = g;
    p1.levels.push_back(p3.levels[0]);

    Tensor feat = random_tensor(rng, {c, hw, hw});
    Tensor ref = random_tensor(rng, {c, hw, hw});
    align::FlowField flow = align::zero_flow(hw, hw);
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) {
            flow.data(0, y, x) = 1.5f;
            flow.data(1, y, x) = -0.5f;
        }

    // three levels all fed the same constant flow values
    align::FlowPyramid pyr3;
    pyr3.levels = {flow, align::FlowField{Tensor({2, hw / 2, hw / 2})},
                   align::FlowField{Tensor({2, hw / 4, hw / 4})}};
    for (int l = 1; l < 3; ++l)
        for (int64_t i = 0; i < pyr3.levels[l].data.numel(); ++i)
            pyr3.levels[l].data.data()[i] =
                (i < pyr3.levels[l].data.numel() / 2) ? 1.5f : -0.5f;

    align::FlowPyramid pyr1;
    pyr1.levels = {flow};
    Tensor got3 = align::pyramid_align(feat, ref, pyr3, p3);
    Tensor got1 = align::pyramid_align(feat, ref, pyr1, p1);
    CHECK(max_abs_diff(got3, got1) < 1e-4);
}

TEST_CASE("aligning the reference against itself reduces to the conv stack") {
    const int c = 2, hw = 16, g = 1;
    Splitmix64 rng(57);
    align::AlignParams p = make_params(rng, c, g, 3, true, true);
    Tensor ref = random_tensor(rng, {c, hw, hw});
    // block-matching flow of the reference against itself is zero
    align::FlowField f = align::block_matching_flow(ref, ref, 3, 4);
    align::FlowPyramid pyr = align::build_flow_pyramid(f, 3);
    Tensor aligned = align::pyramid_align(ref, ref, pyr, p);

    Tensor f4 = ref.reshaped({1, c, hw, hw});
    Tensor step = ops::conv2d(f4, p.levels[0].dcn1_w, p.levels[0].dcn1_b, 1, 1);
    step = ops::activation(step, ops::Act::LeakyRelu, 0.1f);
    step = ops::conv2d(step, p.levels[0].dcn2_w, p.levels[0].dcn2_b, 1, 1);
    CHECK(max_abs_diff(aligned, step.reshaped({c, hw, hw})) < 1e-4);
}

TEST_CASE("pyramid_align keeps the per-frame output shape") {
    Splitmix64 rng(58);
    const int c = 4, hw = 16;
    align::AlignParams p = make_params(rng, c, 2, 3, false, false);
    Tensor feat = random_tensor(rng, {c, hw, hw});
    Tensor ref = random_tensor(rng, {c, hw, hw});
    align::FlowPyramid pyr = align::build_flow_pyramid(align::zero_flow(hw, hw), 3);
    CHECK(align::pyramid_align(feat, ref, pyr, p).shape() == std::vector<int>{c, hw, hw});
}
