#include <doctest.h>

#include <cmath>

#include "burstforge/metrics.hpp"
#include "burstforge/rng.hpp"

using burstforge::Splitmix64;
using burstforge::Tensor;
namespace metrics = burstforge::metrics;

namespace {

Tensor random_tensor(Splitmix64& rng, std::vector<int> shape, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

}  // namespace

TEST_CASE("psnr hits the cap on identical images and is symmetric") {
    Splitmix64 rng(61);
    Tensor a = random_tensor(rng, {3, 8, 8});
    CHECK(metrics::psnr(a, a, 1.0) == 100.0);
    Tensor b = random_tensor(rng, {3, 8, 8});
    CHECK(metrics::psnr(a, b, 1.0) == doctest::Approx(metrics::psnr(b, a, 1.0)));
    CHECK_THROWS_AS(metrics::psnr(a, random_tensor(rng, {3, 8, 9}), 1.0),
                    burstforge::shape_error);
}

TEST_CASE("psnr closed form: peak 255 at unit MSE") {
    Tensor a({4, 4});
    Tensor b({4, 4});
    for (int64_t i = 0; i < b.numel(); ++i) b.data()[i] = 1.0f;  // every diff is 1
    CHECK(std::abs(metrics::psnr(a, b, 255.0) - 48.1308) < 1e-3);
}

TEST_CASE("psnr against a 64-bit oracle and noise monotonicity") {
    Splitmix64 rng(62);
    Tensor a = random_tensor(rng, {1, 6, 6});
    Tensor b = random_tensor(rng, {1, 6, 6});
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    CHECK(std::abs(metrics::psnr(a, b, 1.0) - 10.0 * std::log10(1.0 / mse)) < 1e-6);

    double prev = 1e9;
    for (double sigma = 0.01; sigma < 0.3; sigma *= 2.0) {
        Tensor noisy = a;
        Splitmix64 nrng(63);
        for (int64_t i = 0; i < noisy.numel(); ++i)
            noisy.data()[i] += static_cast<float>(sigma * nrng.gaussian());
        const double p = metrics::psnr(a, noisy, 1.0);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("ssim is exactly one on identical images") {
    Splitmix64 rng(64);
    Tensor a = random_tensor(rng, {1, 16, 16});
    CHECK(metrics::ssim(a, a) == 1.0);
    Tensor c3 = random_tensor(rng, {3, 16, 16});
    CHECK(metrics::ssim(c3, c3) == 1.0);
    Tensor tiny({1, 8, 8});
    CHECK_THROWS_AS(metrics::ssim(tiny, tiny), burstforge::shape_error);
}

TEST_CASE("ssim of an image against its negative is strongly negative") {
    Tensor a({1, 16, 16});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) a(0, y, x) = ((x + y) & 1) ? 1.0f : 0.0f;
    Tensor b({1, 16, 16});
    for (int64_t i = 0; i < b.numel(); ++i) b.data()[i] = 1.0f - a.data()[i];
    CHECK(metrics::ssim(a, b) < -0.9);
}

TEST_CASE("ssim closed-form luminance term for constant images") {
    const double c = 0.4, delta = 0.1, c1 = 0.01 * 0.01;
    Tensor a = Tensor::full({1, 16, 16}, static_cast<float>(c));
    Tensor b = Tensor::full({1, 16, 16}, static_cast<float>(c + delta));
    const double want = (2.0 * c * (c + delta) + c1) / (c * c + (c + delta) * (c + delta) + c1);
    CHECK(metrics::ssim(a, b) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("ssim matches a direct single-window oracle") {
    Splitmix64 rng(66);
    Tensor a = random_tensor(rng, {1, 11, 11});
    Tensor b = random_tensor(rng, {1, 11, 11});
    // recompute the single valid window with explicit double loops
    std::vector<double> g(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        g[static_cast<size_t>(i)] = std::exp(-(i - 5.0) * (i - 5.0) / (2.0 * 1.5 * 1.5));
        sum += g[static_cast<size_t>(i)];
    }
    for (double& v : g) v /= sum;
    double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x) {
            const double w = g[static_cast<size_t>(y)] * g[static_cast<size_t>(x)];
            ma += w * a(0, y, x);
            mb += w * b(0, y, x);
            va += w * a(0, y, x) * a(0, y, x);
            vb += w * b(0, y, x) * b(0, y, x);
            cov += w * a(0, y, x) * b(0, y, x);
        }
    va -= ma * ma;
    vb -= mb * mb;
    cov -= ma * mb;
    const double c1 = 1e-4, c2 = 9e-4;
    const double want =
        (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    CHECK(metrics::ssim(a, b) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("ssim shift invariance when local means agree") {
    Splitmix64 rng(67);
    Tensor a = random_tensor(rng, {1, 11, 11}, 0.3, 0.7);
    // perturbation with zero Gaussian-weighted mean over the single window
    std::vector<double> g(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        g[static_cast<size_t>(i)] = std::exp(-(i - 5.0) * (i - 5.0) / (2.0 * 1.5 * 1.5));
        sum += g[static_cast<size_t>(i)];
    }
    for (double& v : g) v /= sum;
    Tensor p = random_tensor(rng, {1, 11, 11}, -0.05, 0.05);
    double wmean = 0.0;
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x)
            wmean += g[static_cast<size_t>(y)] * g[static_cast<size_t>(x)] * p(0, y, x);
    Tensor b = a;
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x)
            b(0, y, x) += static_cast<float>(p(0, y, x) - wmean);

    const double base = metrics::ssim(a, b);
    Tensor a2 = a, b2 = b;
    for (int64_t i = 0; i < a2.numel(); ++i) {
        a2.data()[i] += 0.2f;
        b2.data()[i] += 0.2f;
    }
    CHECK(std::abs(metrics::ssim(a2, b2) - base) < 1e-6);
}

namespace {

Tensor stripes(int h, int w, int period) {
    Tensor img({1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img(0, y, x) = (x % period) < period / 2 ? 1.0f : 0.0f;
    return img;
}

}  // namespace

TEST_CASE("line pair contrast: ideal square wave reads 1, flat reads 0") {
    Tensor img = stripes(16, 64, 8);
    metrics::ProfileSegment seg{0.0, 8.0, 63.0, 8.0};
    CHECK(metrics::line_pair_contrast(img, seg, 8.0) == doctest::Approx(1.0));

    Tensor flat = Tensor::full({1, 16, 64}, 0.5f);
    CHECK(metrics::line_pair_contrast(flat, seg, 8.0) == 0.0);

    metrics::ProfileSegment tiny{0.0, 8.0, 10.0, 8.0};
    CHECK_THROWS_AS(metrics::line_pair_contrast(img, tiny, 8.0), burstforge::shape_error);
}

TEST_CASE("line pair contrast of a box-blurred square wave matches a scripted oracle") {
    const int period = 8, blur = 4;  // blur = period/2
    Tensor img({1, 16, 96});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 96; ++x) {
            double acc = 0.0;
            for (int t = -blur / 2; t < blur - blur / 2; ++t) {
                const int xx = std::clamp(x + t, 0, 95);
                acc += (xx % period) < period / 2 ? 1.0 : 0.0;
            }
            img(0, y, x) = static_cast<float>(acc / blur);
        }
    metrics::ProfileSegment seg{8.0, 8.0, 87.0, 8.0};
    const double got = metrics::line_pair_contrast(img, seg, 8.0);

    // oracle: the same robust-extrema definition evaluated in double on the
    // exact profile row
    std::vector<double> profile;
    for (int x = 8; x <= 87; ++x) profile.push_back(img(0, 8, x));
    const int per = period;
    const int periods = static_cast<int>(profile.size()) / per;
    double hi = 0.0, lo = 0.0;
    for (int p = 0; p < periods; ++p) {
        std::vector<double> chunk(profile.begin() + p * per, profile.begin() + (p + 1) * per);
        std::sort(chunk.begin(), chunk.end());
        const size_t q = chunk.size() / 4;
        double l = 0.0, h = 0.0;
        for (size_t i = 0; i < q; ++i) {
            l += chunk[i];
            h += chunk[chunk.size() - 1 - i];
        }
        lo += l / static_cast<double>(q);
        hi += h / static_cast<double>(q);
    }
    hi /= periods;
    lo /= periods;
    const double want = (hi - lo) / (hi + lo);
    CHECK(got == doctest::Approx(want).epsilon(0.02));
}

TEST_CASE("line pair contrast is invariant to positive intensity scaling") {
    Tensor img({1, 16, 64});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 64; ++x)
            img(0, y, x) = static_cast<float>(0.4 + 0.3 * std::sin(2.0 * M_PI * x / 8.0));
    Tensor scaled = img;
    for (int64_t i = 0; i < scaled.numel(); ++i) scaled.data()[i] *= 3.0f;
    metrics::ProfileSegment seg{0.0, 8.0, 63.0, 8.0};
    CHECK(metrics::line_pair_contrast(img, seg, 8.0) ==
          doctest::Approx(metrics::line_pair_contrast(scaled, seg, 8.0)).epsilon(1e-9));
}

TEST_CASE("chart reading to LP/mm reproduces the sensor-geometry bridge") {
    metrics::ChartGeometry g;
    CHECK(std::abs(metrics::chart_reading_to_lpmm(1.0, g) - 9.26) < 1e-3);
    CHECK(metrics::chart_reading_to_lpmm(6.0, g) == doctest::Approx(55.5556).epsilon(1e-4));
    CHECK(metrics::chart_reading_to_lpmm(7.128, g) == doctest::Approx(66.0).epsilon(1e-6));
    // linear in the reading
    CHECK(metrics::chart_reading_to_lpmm(3.0, g) ==
          doctest::Approx(3.0 * metrics::chart_reading_to_lpmm(1.0, g)));
    CHECK_THROWS_AS(metrics::chart_reading_to_lpmm(0.0, g), burstforge::shape_error);
    // geometry invariant: eval height consistent with pitch
    CHECK(g.eval_height_mm ==
          doctest::Approx(g.eval_height_px * g.pixel_pitch_um / 1000.0));
}
