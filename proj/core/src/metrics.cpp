#include "burstforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "burstforge/common.hpp"
#include "burstforge/ops.hpp"

namespace burstforge::metrics {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    if (!a.same_shape(b))
        throw shape_error("psnr: shapes differ, " + a.shape_str() + " vs " + b.shape_str());
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse < 1e-12) return 100.0;
    return 10.0 * std::log10(peak * peak / mse);
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<size_t>(size));
    const double c = (size - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        w[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
        sum += w[static_cast<size_t>(i)];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Single-plane SSIM, valid-region Gaussian-weighted local statistics.
double ssim_plane(const float* a, const float* b, int h, int w, int win, double sigma,
                  double c1, double c2) {
    const std::vector<double> g = gaussian_window(win, sigma);
    const int oh = h - win + 1, ow = w - win + 1;
    double total = 0.0;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double ma = 0.0, mb = 0.0, va = 0.0, vb = 0.0, cov = 0.0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    const double wij = g[static_cast<size_t>(i)] * g[static_cast<size_t>(j)];
                    const double pa = a[(y + i) * w + (x + j)];
                    const double pb = b[(y + i) * w + (x + j)];
                    ma += wij * pa;
                    mb += wij * pb;
                    va += wij * pa * pa;
                    vb += wij * pb * pb;
                    cov += wij * pa * pb;
                }
            va -= ma * ma;
            vb -= mb * mb;
            cov -= ma * mb;
            const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
        }
    return total / (static_cast<double>(oh) * ow);
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, int window, double sigma, double k1, double k2) {
    if (!a.same_shape(b))
        throw shape_error("ssim: shapes differ, " + a.shape_str() + " vs " + b.shape_str());
    int c = 1, h = 0, w = 0;
    if (a.rank() == 2) {
        h = a.dim(0);
        w = a.dim(1);
    } else if (a.rank() == 3) {
        c = a.dim(0);
        h = a.dim(1);
        w = a.dim(2);
    } else {
        throw shape_error("ssim: expected [H,W] or [C,H,W], got " + a.shape_str());
    }
    if (h < window || w < window)
        throw shape_error("ssim: image " + a.shape_str() + " smaller than the window");
    const double c1 = k1 * k1, c2 = k2 * k2;  // dynamic range 1.0
    double total = 0.0;
    for (int ch = 0; ch < c; ++ch)
        total += ssim_plane(a.data() + static_cast<int64_t>(ch) * h * w,
                            b.data() + static_cast<int64_t>(ch) * h * w, h, w, window, sigma,
                            c1, c2);
    return total / c;
}

double line_pair_contrast(const Tensor& image, const ProfileSegment& seg, double period_px,
                          bool robust) {
    int c = 1, h = 0, w = 0;
    if (image.rank() == 2) {
        h = image.dim(0);
        w = image.dim(1);
    } else if (image.rank() == 3) {
        c = image.dim(0);
        h = image.dim(1);
        w = image.dim(2);
    } else {
        throw shape_error("line_pair_contrast: expected [H,W] or [C,H,W]");
    }
    if (period_px <= 0.0) throw shape_error("line_pair_contrast: period must be positive");
    const double len = std::hypot(seg.x1 - seg.x0, seg.y1 - seg.y0);
    if (len < 2.0 * period_px)
        throw shape_error("line_pair_contrast: profile spans fewer than two periods");

    // one sample per pixel of arc length, intensity averaged over channels
    const int samples = static_cast<int>(std::floor(len)) + 1;
    std::vector<double> profile(static_cast<size_t>(samples));
    for (int i = 0; i < samples; ++i) {
        const double f = samples == 1 ? 0.0 : static_cast<double>(i) / (samples - 1);
        double sx = seg.x0 + f * (seg.x1 - seg.x0);
        double sy = seg.y0 + f * (seg.y1 - seg.y0);
        sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
        sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const int x1 = std::min(x0 + 1, w - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const double fx = sx - x0, fy = sy - y0;
        double v = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            const float* plane = image.data() + static_cast<int64_t>(ch) * h * w;
            const double v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
            const double v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
            v += (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                 fy * ((1.0 - fx) * v10 + fx * v11);
        }
        profile[static_cast<size_t>(i)] = v / c;
    }

    const double samples_per_px = samples == 1 ? 1.0 : (samples - 1) / len;
    const int per_period = std::max(2, static_cast<int>(std::floor(period_px * samples_per_px)));
    const int periods = samples / per_period;
    double hi_sum = 0.0, lo_sum = 0.0;
    for (int p = 0; p < periods; ++p) {
        std::vector<double> chunk(profile.begin() + p * per_period,
                                  profile.begin() + (p + 1) * per_period);
        std::sort(chunk.begin(), chunk.end());
        if (robust) {
            const size_t q = std::max<size_t>(1, chunk.size() / 4);
            double lo = 0.0, hi = 0.0;
            for (size_t i = 0; i < q; ++i) {
                lo += chunk[i];
                hi += chunk[chunk.size() - 1 - i];
            }
            lo_sum += lo / static_cast<double>(q);
            hi_sum += hi / static_cast<double>(q);
        } else {
            lo_sum += chunk.front();
            hi_sum += chunk.back();
        }
    }
    const double hi = hi_sum / periods, lo = lo_sum / periods;
    if (hi + lo < 1e-12) return 0.0;
    const double contrast = (hi - lo) / (hi + lo);
    return contrast < 0.0 ? 0.0 : contrast;
}

double chart_reading_to_lpmm(double reading_hundreds_lwph, const ChartGeometry& g) {
    if (reading_hundreds_lwph <= 0.0)
        throw shape_error("chart_reading_to_lpmm: reading must be positive");
    return reading_hundreds_lwph * 100.0 / (2.0 * g.eval_height_mm);
}

}  // namespace burstforge::metrics
