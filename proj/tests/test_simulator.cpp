#include <doctest.h>

#include <cmath>

#include "burstforge/metrics.hpp"
#include "burstforge/ops.hpp"
#include "burstforge/simulator.hpp"

using burstforge::Splitmix64;
using burstforge::Tensor;
namespace sim = burstforge::sim;
namespace ops = burstforge::ops;

namespace {

Tensor smooth_hr(int hw) {
    Tensor t({3, hw, hw});
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) {
            const double v = 0.5 + 0.25 * std::sin(2.0 * M_PI * x / 40.0) +
                             0.15 * std::cos(2.0 * M_PI * y / 56.0);
            t(0, y, x) = static_cast<float>(v);
            t(1, y, x) = static_cast<float>(v * 0.9);
            t(2, y, x) = static_cast<float>(v * 0.8);
        }
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
    return m;
}

}  // namespace

TEST_CASE("random transforms: identity reference, bounds, determinism") {
    sim::SyntheticBurstSpec spec;
    spec.n_frames = 1;
    Splitmix64 rng(7);
    auto one = sim::random_transforms(spec, rng);
    REQUIRE(one.size() == 1);
    CHECK(one[0].dx == 0.0f);
    CHECK(one[0].dy == 0.0f);
    CHECK(one[0].rot_deg == 0.0f);

    spec.n_frames = 1000;
    spec.max_shift_px = 2.0f;
    spec.max_rot_deg = 1.0f;
    Splitmix64 rng2(8);
    auto many = sim::random_transforms(spec, rng2);
    for (const auto& t : many) {
        CHECK(std::abs(t.dx) <= 2.0f);
        CHECK(std::abs(t.dy) <= 2.0f);
        CHECK(std::abs(t.rot_deg) <= 1.0f);
    }

    Splitmix64 ra(99), rb(99);
    auto ta = sim::random_transforms(spec, ra);
    auto tb = sim::random_transforms(spec, rb);
    for (size_t i = 0; i < ta.size(); ++i) {
        CHECK(ta[i].dx == tb[i].dx);
        CHECK(ta[i].dy == tb[i].dy);
        CHECK(ta[i].rot_deg == tb[i].rot_deg);
    }
}

TEST_CASE("degrading constant gray yields constant packed channels") {
    sim::SyntheticBurstSpec spec;
    spec.read_noise = 0.0f;
    spec.shot_noise = 0.0f;
    Tensor hr = Tensor::full({3, 64, 64}, 0.5f);
    Splitmix64 rng(9);
    Tensor packed = sim::degrade(hr, sim::FrameTransform{}, spec, rng);
    CHECK(packed.shape() == std::vector<int>{4, 8, 8});
    for (int64_t i = 0; i < packed.numel(); ++i)
        CHECK(packed.data()[i] == doctest::Approx(0.5f).epsilon(1e-6));
}

TEST_CASE("mosaic selectivity routes primaries to single channels") {
    sim::SyntheticBurstSpec spec;
    spec.read_noise = 0.0f;
    spec.shot_noise = 0.0f;
    Splitmix64 rng(10);
    Tensor red({3, 32, 32});
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) red(0, y, x) = 1.0f;
    Tensor packed = sim::degrade(red, sim::FrameTransform{}, spec, rng);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            CHECK(packed(0, y, x) == doctest::Approx(1.0f));
            CHECK(packed(1, y, x) == doctest::Approx(0.0f));
            CHECK(packed(2, y, x) == doctest::Approx(0.0f));
            CHECK(packed(3, y, x) == doctest::Approx(0.0f));
        }

    Tensor blue({3, 32, 32});
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) blue(2, y, x) = 1.0f;
    Tensor pb = sim::degrade(blue, sim::FrameTransform{}, spec, rng);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            CHECK(pb(0, y, x) == doctest::Approx(0.0f));
            CHECK(pb(3, y, x) == doctest::Approx(1.0f));
        }
}

TEST_CASE("bilinear demosaic of a clean reference approximates the HR image") {
    sim::SyntheticBurstSpec spec;
    spec.read_noise = 0.0f;
    spec.shot_noise = 0.0f;
    Tensor hr = smooth_hr(128);
    Splitmix64 rng(11);
    Tensor packed = sim::degrade(hr, sim::FrameTransform{}, spec, rng);  // [4,16,16]

    // reconstruction sanity oracle: per-plane bilinear upsample to HR size
    const int ph = packed.dim(1), pw = packed.dim(2);
    Tensor rgb({1, 3, ph, pw});
    for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x) {
            rgb(0, 0, y, x) = packed(0, y, x);
            rgb(0, 1, y, x) = 0.5f * (packed(1, y, x) + packed(2, y, x));
            rgb(0, 2, y, x) = packed(3, y, x);
        }
    Tensor up = ops::resize_bilinear(rgb, 128, 128).reshaped({3, 128, 128});
    CHECK(burstforge::metrics::psnr(up, hr, 1.0) > 25.0);
}

TEST_CASE("generate_burst shapes, zero-motion degeneracy, determinism") {
    sim::SyntheticBurstSpec spec;
    spec.n_frames = 14;
    spec.seed = 4242;
    Tensor hr = smooth_hr(384);
    auto [stack, gt] = sim::generate_burst(hr, spec);
    CHECK(stack.frame_count() == 14);
    CHECK(stack.frames[0].shape() == std::vector<int>{4, 48, 48});
    CHECK(gt.transforms.size() == 14);

    // zero noise + zero shift: all frames identical
    sim::SyntheticBurstSpec quiet;
    quiet.n_frames = 4;
    quiet.max_shift_px = 0.0f;
    quiet.max_rot_deg = 0.0f;
    quiet.read_noise = 0.0f;
    quiet.shot_noise = 0.0f;
    Tensor hr2 = smooth_hr(64);
    auto [qs, qgt] = sim::generate_burst(hr2, quiet);
    for (int i = 1; i < 4; ++i) CHECK(max_abs_diff(qs.frames[0], qs.frames[i]) == 0.0);

    // same seed, bit-identical stack
    auto [s1, g1] = sim::generate_burst(hr2, spec);
    auto [s2, g2] = sim::generate_burst(hr2, spec);
    REQUIRE(s1.frame_count() == s2.frame_count());
    for (int i = 0; i < s1.frame_count(); ++i)
        CHECK(max_abs_diff(s1.frames[i], s2.frames[i]) == 0.0);
}

TEST_CASE("degrade validates divisibility") {
    sim::SyntheticBurstSpec spec;
    Tensor hr({3, 60, 60});  // not divisible by 2*downscale=8
    Splitmix64 rng(12);
    CHECK_THROWS_AS(sim::degrade(hr, sim::FrameTransform{}, spec, rng), burstforge::shape_error);
}
