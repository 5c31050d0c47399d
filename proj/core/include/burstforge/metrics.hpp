#pragma once

#include "burstforge/tensor.hpp"

// PSNR, SSIM and ISO-style line-pair contrast with the sensor-geometry unit
// conversion between chart readings and LP/mm.
namespace burstforge::metrics {

// 10*log10(peak^2/MSE), capped at 100 dB when MSE < 1e-12.
double psnr(const Tensor& a, const Tensor& b, double peak);

// Mean local SSIM with a Gaussian window, standard constants, dynamic range
// 1.0 (images are stored in [0,1]). Multi-channel images are averaged over
// channels. Throws if the image is smaller than the window.
double ssim(const Tensor& a, const Tensor& b, int window = 11, double sigma = 1.5,
            double k1 = 0.01, double k2 = 0.03);

struct ChartGeometry {
    double pixel_pitch_um = 15.0;
    int sensor_rows = 512;
    int sensor_cols = 640;
    int eval_height_px = 360;
    double eval_height_mm = 5.4;  // eval_height_px * pixel_pitch_um / 1000
};

// Line segment in pixel coordinates, sampled bilinearly.
struct ProfileSegment {
    double x0 = 0.0, y0 = 0.0;
    double x1 = 0.0, y1 = 0.0;
};

// Michelson contrast of a periodic intensity profile. The profile must span
// at least two periods. With robust=true (default), per-period extrema are
// the means of the top and bottom quartiles; otherwise the raw min/max.
// A flat profile reads 0.
double line_pair_contrast(const Tensor& image, const ProfileSegment& seg, double period_px,
                          bool robust = true);

// Chart reading (hundreds of LW/PH) -> LP/mm: reading*100/(2*eval_height_mm).
double chart_reading_to_lpmm(double reading_hundreds_lwph, const ChartGeometry& g);

}  // namespace burstforge::metrics
