#include "burstforge/ops.hpp"

#include <algorithm>
#include <cmath>

#include "burstforge/common.hpp"

namespace burstforge::ops {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu(double x) { return x * sigmoid(x); }
double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, int groups) {
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(2) != weight.dim(3)) throw shape_error("conv2d: non-square kernel");
    if (k % 2 == 0) throw shape_error("conv2d: kernel size must be odd");
    if (padding < 0 || stride < 1) throw shape_error("conv2d: bad stride/padding");
    if (groups < 1 || cin % groups != 0 || cout % groups != 0)
        throw shape_error("conv2d: channels not divisible by groups");
    const int cin_g = cin / groups;
    if (weight.dim(1) != cin_g)
        throw shape_error("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                          " input channels per group, input has " + std::to_string(cin_g));
    if (!bias.empty() && bias.shape() != std::vector<int>{cout})
        throw shape_error("conv2d: bias shape mismatch");

    const int oh = (h + 2 * padding - k) / stride + 1;
    const int ow = (w + 2 * padding - k) / stride + 1;
    if (oh <= 0 || ow <= 0) throw shape_error("conv2d: empty output");

    Tensor out({n, cout, oh, ow});
    const int cout_g = cout / groups;
    parallel_for(0, static_cast<int64_t>(n) * cout, [&](int64_t idx) {
        const int b = static_cast<int>(idx / cout);
        const int oc = static_cast<int>(idx % cout);
        const int g = oc / cout_g;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = bias.empty() ? 0.0 : static_cast<double>(bias(oc));
                for (int ic = 0; ic < cin_g; ++ic) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int y = oy * stride + ky - padding;
                        if (y < 0 || y >= h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int x = ox * stride + kx - padding;
                            if (x < 0 || x >= w) continue;
                            acc += static_cast<double>(input(b, g * cin_g + ic, y, x)) *
                                   static_cast<double>(weight(oc, ic, ky, kx));
                        }
                    }
                }
                out(b, oc, oy, ox) = static_cast<float>(acc);
            }
        }
    });
    require_finite(out, "conv2d");
    return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(weight, 2, "linear weight");
    if (input.rank() < 1) throw shape_error("linear: scalar input");
    const int din = input.dim(input.rank() - 1);
    const int dout = weight.dim(0);
    if (weight.dim(1) != din)
        throw shape_error("linear: weight expects " + std::to_string(weight.dim(1)) +
                          " inputs, got " + std::to_string(din));
    if (!bias.empty() && bias.shape() != std::vector<int>{dout})
        throw shape_error("linear: bias shape mismatch");

    std::vector<int> out_shape = input.shape();
    out_shape.back() = dout;
    Tensor out(out_shape);
    const int64_t rows = input.numel() / din;
    const float* src = input.data();
    float* dst = out.data();
    parallel_for(0, rows, [&](int64_t r) {
        const float* x = src + r * din;
        float* y = dst + r * dout;
        for (int o = 0; o < dout; ++o) {
            double acc = bias.empty() ? 0.0 : static_cast<double>(bias(o));
            const float* wrow = weight.data() + static_cast<int64_t>(o) * din;
            for (int i = 0; i < din; ++i)
                acc += static_cast<double>(x[i]) * static_cast<double>(wrow[i]);
            y[o] = static_cast<float>(acc);
        }
    });
    require_finite(out, "linear");
    return out;
}

Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, float eps) {
    if (input.rank() < 1) throw shape_error("layer_norm: scalar input");
    const int d = input.dim(input.rank() - 1);
    require_shape(gamma, {d}, "layer_norm gamma");
    require_shape(beta, {d}, "layer_norm beta");

    Tensor out(input.shape());
    const int64_t rows = input.numel() / d;
    const float* src = input.data();
    float* dst = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* x = src + r * d;
        double mean = 0.0;
        for (int i = 0; i < d; ++i) mean += x[i];
        mean /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            const double dv = x[i] - mean;
            var += dv * dv;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        float* y = dst + r * d;
        for (int i = 0; i < d; ++i)
            y[i] = static_cast<float>((x[i] - mean) * inv * gamma(i) + beta(i));
    }
    require_finite(out, "layer_norm");
    return out;
}

Tensor softmax_lastdim(const Tensor& input) {
    if (input.rank() < 1) throw shape_error("softmax: scalar input");
    const int d = input.dim(input.rank() - 1);
    Tensor out(input.shape());
    const int64_t rows = input.numel() / d;
    const float* src = input.data();
    float* dst = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* x = src + r * d;
        double m = x[0];
        for (int i = 1; i < d; ++i) m = std::max(m, static_cast<double>(x[i]));
        double sum = 0.0;
        std::vector<double> e(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) {
            e[static_cast<size_t>(i)] = std::exp(x[i] - m);
            sum += e[static_cast<size_t>(i)];
        }
        float* y = dst + r * d;
        for (int i = 0; i < d; ++i)
            y[i] = static_cast<float>(e[static_cast<size_t>(i)] / sum);
    }
    require_finite(out, "softmax_lastdim");
    return out;
}

Tensor activation(const Tensor& input, Act kind, float slope) {
    Tensor out(input.shape());
    const float* x = input.data();
    float* y = out.data();
    const int64_t n = input.numel();
    switch (kind) {
        case Act::Silu:
            for (int64_t i = 0; i < n; ++i) y[i] = static_cast<float>(silu(x[i]));
            break;
        case Act::Gelu:
            for (int64_t i = 0; i < n; ++i) y[i] = static_cast<float>(gelu(x[i]));
            break;
        case Act::Sigmoid:
            for (int64_t i = 0; i < n; ++i) y[i] = static_cast<float>(sigmoid(x[i]));
            break;
        case Act::Relu:
            for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
            break;
        case Act::LeakyRelu:
            for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
            break;
    }
    require_finite(out, "activation");
    return out;
}

Tensor avg_pool2d(const Tensor& input, int k, int stride) {
    require_rank(input, 4, "avg_pool2d input");
    if (k < 1 || stride < 1) throw shape_error("avg_pool2d: bad window");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (k == stride && (h % k != 0 || w % k != 0))
        throw shape_error("avg_pool2d: dims " + input.shape_str() +
                          " not divisible by window " + std::to_string(k));
    const int oh = (h - k) / stride + 1;
    const int ow = (w - k) / stride + 1;
    if (oh <= 0 || ow <= 0) throw shape_error("avg_pool2d: empty output");

    Tensor out({n, c, oh, ow});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            acc += input(b, ch, oy * stride + ky, ox * stride + kx);
                    out(b, ch, oy, ox) = static_cast<float>(acc / (k * k));
                }
    require_finite(out, "avg_pool2d");
    return out;
}

Tensor pixel_shuffle(const Tensor& input, int upscale) {
    require_rank(input, 4, "pixel_shuffle input");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int u = upscale;
    if (u < 1 || c % (u * u) != 0)
        throw shape_error("pixel_shuffle: channels " + std::to_string(c) +
                          " not divisible by " + std::to_string(u * u));
    const int oc = c / (u * u);
    Tensor out({n, oc, h * u, w * u});
    for (int b = 0; b < n; ++b)
        for (int co = 0; co < oc; ++co)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int i = 0; i < u; ++i)
                        for (int j = 0; j < u; ++j)
                            out(b, co, y * u + i, x * u + j) =
                                input(b, co * u * u + i * u + j, y, x);
    return out;
}

Tensor pixel_unshuffle(const Tensor& input, int downscale) {
    require_rank(input, 4, "pixel_unshuffle input");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int u = downscale;
    if (u < 1 || h % u != 0 || w % u != 0)
        throw shape_error("pixel_unshuffle: spatial dims not divisible by " + std::to_string(u));
    Tensor out({n, c * u * u, h / u, w / u});
    for (int b = 0; b < n; ++b)
        for (int co = 0; co < c; ++co)
            for (int y = 0; y < h / u; ++y)
                for (int x = 0; x < w / u; ++x)
                    for (int i = 0; i < u; ++i)
                        for (int j = 0; j < u; ++j)
                            out(b, co * u * u + i * u + j, y, x) =
                                input(b, co, y * u + i, x * u + j);
    return out;
}

Tensor bilinear_sample(const Tensor& input, const Tensor& coords) {
    require_rank(input, 4, "bilinear_sample input");
    require_rank(coords, 4, "bilinear_sample coords");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (coords.dim(0) != n || coords.dim(1) != 2)
        throw shape_error("bilinear_sample: coords must be [N,2,H',W']");
    const int oh = coords.dim(2), ow = coords.dim(3);

    Tensor out({n, c, oh, ow});
    for (int b = 0; b < n; ++b)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double sx = coords(b, 0, oy, ox);
                double sy = coords(b, 1, oy, ox);
                sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
                sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
                const int x0 = static_cast<int>(std::floor(sx));
                const int y0 = static_cast<int>(std::floor(sy));
                const int x1 = std::min(x0 + 1, w - 1);
                const int y1 = std::min(y0 + 1, h - 1);
                const double fx = sx - x0;
                const double fy = sy - y0;
                for (int ch = 0; ch < c; ++ch) {
                    const double v00 = input(b, ch, y0, x0);
                    const double v01 = input(b, ch, y0, x1);
                    const double v10 = input(b, ch, y1, x0);
                    const double v11 = input(b, ch, y1, x1);
                    out(b, ch, oy, ox) = static_cast<float>(
                        (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                        fy * ((1.0 - fx) * v10 + fx * v11));
                }
            }
    require_finite(out, "bilinear_sample");
    return out;
}

Tensor pad_zero(const Tensor& input, int top, int bottom, int left, int right) {
    require_rank(input, 4, "pad_zero input");
    if (top < 0 || bottom < 0 || left < 0 || right < 0)
        throw shape_error("pad_zero: negative padding");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    Tensor out({n, c, h + top + bottom, w + left + right});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    out(b, ch, y + top, x + left) = input(b, ch, y, x);
    return out;
}

Tensor nchw_to_tokens(const Tensor& f) {
    require_rank(f, 4, "nchw_to_tokens");
    const int n = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
    Tensor out({n * h * w, c});
    int64_t row = 0;
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x, ++row)
                for (int ch = 0; ch < c; ++ch)
                    out.data()[row * c + ch] = f(b, ch, y, x);
    return out;
}

Tensor tokens_to_nchw(const Tensor& tokens, int n, int c, int h, int w) {
    require_rank(tokens, 2, "tokens_to_nchw");
    if (tokens.dim(0) != n * h * w || tokens.dim(1) != c)
        throw shape_error("tokens_to_nchw: token matrix does not match target dims");
    Tensor out({n, c, h, w});
    int64_t row = 0;
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x, ++row)
                for (int ch = 0; ch < c; ++ch)
                    out(b, ch, y, x) = tokens.data()[row * c + ch];
    return out;
}

Tensor layer_norm_channels(const Tensor& f, const Tensor& gamma, const Tensor& beta, float eps) {
    require_rank(f, 4, "layer_norm_channels");
    return tokens_to_nchw(layer_norm(nchw_to_tokens(f), gamma, beta, eps),
                          f.dim(0), f.dim(1), f.dim(2), f.dim(3));
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw shape_error("concat_channels: no inputs");
    const Tensor& first = *parts[0];
    require_rank(first, 4, "concat_channels");
    int total = 0;
    for (const Tensor* p : parts) {
        require_rank(*p, 4, "concat_channels");
        if (p->dim(0) != first.dim(0) || p->dim(2) != first.dim(2) || p->dim(3) != first.dim(3))
            throw shape_error("concat_channels: mismatched batch/spatial dims");
        total += p->dim(1);
    }
    const int n = first.dim(0), h = first.dim(2), w = first.dim(3);
    Tensor out({n, total, h, w});
    int base = 0;
    for (const Tensor* p : parts) {
        const int c = p->dim(1);
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        out(b, base + ch, y, x) = (*p)(b, ch, y, x);
        base += c;
    }
    return out;
}

Tensor resize_bilinear(const Tensor& f, int out_h, int out_w) {
    require_rank(f, 4, "resize_bilinear");
    const int n = f.dim(0);
    const double sy = static_cast<double>(f.dim(2)) / out_h;
    const double sx = static_cast<double>(f.dim(3)) / out_w;
    Tensor coords({n, 2, out_h, out_w});
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                coords(b, 0, y, x) = static_cast<float>((x + 0.5) * sx - 0.5);
                coords(b, 1, y, x) = static_cast<float>((y + 0.5) * sy - 0.5);
            }
    return bilinear_sample(f, coords);
}

}  // namespace burstforge::ops
