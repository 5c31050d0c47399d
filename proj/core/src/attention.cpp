#include "burstforge/attention.hpp"

#include <algorithm>
#include <cmath>

#include "burstforge/common.hpp"

namespace burstforge::attn {

int WindowSpec::kv_window_for(int p, float r) {
    if (p < 1) throw shape_error("WindowSpec: window must be positive");
    if (r < 0.0f) throw shape_error("WindowSpec: negative overlap rate");
    int pk = static_cast<int>(std::lround(static_cast<double>(p) * (1.0 + r)));
    if ((pk - p) % 2 != 0) ++pk;  // keep the per-side padding integral
    return pk;
}

int relpos_table_side(int p, int pk) { return p + pk - 1; }

std::vector<int> relpos_index_map(int p, int pk) {
    const int side = relpos_table_side(p, pk);
    const int offset = (p + pk) / 2 - 1;  // maps dy,dx into [0, side)
    const int pad = (pk - p) / 2;
    std::vector<int> map(static_cast<size_t>(p * p) * static_cast<size_t>(pk * pk));
    size_t i = 0;
    for (int qy = 0; qy < p; ++qy)
        for (int qx = 0; qx < p; ++qx)
            for (int ky = 0; ky < pk; ++ky)
                for (int kx = 0; kx < pk; ++kx, ++i) {
                    int dy = qy - ky + pad + offset;
                    int dx = qx - kx + pad + offset;
                    dy = std::clamp(dy, 0, side - 1);
                    dx = std::clamp(dx, 0, side - 1);
                    map[i] = dy * side + dx;
                }
    return map;
}

Tensor partition_q_windows(const Tensor& f, const WindowSpec& spec) {
    require_rank(f, 4, "partition_q_windows");
    const int b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
    const int p = spec.window;
    if (h % p != 0 || w % p != 0)
        throw shape_error("partition_q_windows: dims " + f.shape_str() +
                          " not divisible by window " + std::to_string(p));
    const int wy = h / p, wx = w / p;
    Tensor out({b * wy * wx, p * p, c});
    for (int bi = 0; bi < b; ++bi)
        for (int gy = 0; gy < wy; ++gy)
            for (int gx = 0; gx < wx; ++gx) {
                const int win = (bi * wy + gy) * wx + gx;
                for (int ty = 0; ty < p; ++ty)
                    for (int tx = 0; tx < p; ++tx)
                        for (int ch = 0; ch < c; ++ch)
                            out(win, ty * p + tx, ch) = f(bi, ch, gy * p + ty, gx * p + tx);
            }
    return out;
}

Tensor merge_q_windows(const Tensor& windows, const WindowSpec& spec, int b, int c, int h,
                       int w) {
    require_rank(windows, 3, "merge_q_windows");
    const int p = spec.window;
    const int wy = h / p, wx = w / p;
    if (windows.dim(0) != b * wy * wx || windows.dim(1) != p * p || windows.dim(2) != c)
        throw shape_error("merge_q_windows: window tensor does not match target dims");
    Tensor out({b, c, h, w});
    for (int bi = 0; bi < b; ++bi)
        for (int gy = 0; gy < wy; ++gy)
            for (int gx = 0; gx < wx; ++gx) {
                const int win = (bi * wy + gy) * wx + gx;
                for (int ty = 0; ty < p; ++ty)
                    for (int tx = 0; tx < p; ++tx)
                        for (int ch = 0; ch < c; ++ch)
                            out(bi, ch, gy * p + ty, gx * p + tx) = windows(win, ty * p + tx, ch);
            }
    return out;
}

Tensor extract_kv_windows(const Tensor& f, const WindowSpec& spec) {
    require_rank(f, 4, "extract_kv_windows");
    const int b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
    const int p = spec.window, pk = spec.kv_window(), pad = spec.pad();
    if (h % p != 0 || w % p != 0)
        throw shape_error("extract_kv_windows: dims not divisible by window");
    const int wy = h / p, wx = w / p;
    Tensor out({b * wy * wx, pk * pk, c});
    for (int bi = 0; bi < b; ++bi)
        for (int gy = 0; gy < wy; ++gy)
            for (int gx = 0; gx < wx; ++gx) {
                const int win = (bi * wy + gy) * wx + gx;
                for (int ty = 0; ty < pk; ++ty)
                    for (int tx = 0; tx < pk; ++tx) {
                        const int y = gy * p + ty - pad;
                        const int x = gx * p + tx - pad;
                        const bool in = y >= 0 && y < h && x >= 0 && x < w;
                        for (int ch = 0; ch < c; ++ch)
                            out(win, ty * pk + tx, ch) = in ? f(bi, ch, y, x) : 0.0f;
                    }
            }
    return out;
}

Tensor window_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const RelPosBias& bias, int heads,
                        const Tensor& proj_w, const Tensor& proj_b) {
    require_rank(q, 3, "window_attention q");
    require_rank(k, 3, "window_attention k");
    require_rank(v, 3, "window_attention v");
    const int t = q.dim(0), nq = q.dim(1), c = q.dim(2);
    const int nk = k.dim(1);
    if (k.dim(0) != t || v.dim(0) != t || v.dim(1) != nk || k.dim(2) != c || v.dim(2) != c)
        throw shape_error("window_attention: Q/K/V dims disagree");
    if (heads < 1 || c % heads != 0)
        throw shape_error("window_attention: channels " + std::to_string(c) +
                          " not divisible by " + std::to_string(heads) + " heads");
    const int d = c / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    const int p = static_cast<int>(std::lround(std::sqrt(static_cast<double>(nq))));
    const int pk = static_cast<int>(std::lround(std::sqrt(static_cast<double>(nk))));
    if (p * p != nq || pk * pk != nk)
        throw shape_error("window_attention: token counts must be square window sizes");
    const int side = relpos_table_side(p, pk);
    require_shape(bias.table, {heads, side * side}, "window_attention bias table");
    const std::vector<int> idx = relpos_index_map(p, pk);

    Tensor ctx({t, nq, c});
    parallel_for(0, t, [&](int64_t win) {
        std::vector<double> scores(static_cast<size_t>(nk));
        for (int hd = 0; hd < heads; ++hd) {
            const int cb = hd * d;
            for (int qi = 0; qi < nq; ++qi) {
                double m = -1e300;
                for (int ki = 0; ki < nk; ++ki) {
                    double s = 0.0;
                    for (int e = 0; e < d; ++e)
                        s += static_cast<double>(q(static_cast<int>(win), qi, cb + e)) *
                             static_cast<double>(k(static_cast<int>(win), ki, cb + e));
                    s = s * scale +
                        bias.table(hd, idx[static_cast<size_t>(qi) * nk + ki]);
                    scores[static_cast<size_t>(ki)] = s;
                    m = std::max(m, s);
                }
                double sum = 0.0;
                for (int ki = 0; ki < nk; ++ki) {
                    scores[static_cast<size_t>(ki)] = std::exp(scores[static_cast<size_t>(ki)] - m);
                    sum += scores[static_cast<size_t>(ki)];
                }
                for (int e = 0; e < d; ++e) {
                    double acc = 0.0;
                    for (int ki = 0; ki < nk; ++ki)
                        acc += scores[static_cast<size_t>(ki)] *
                               static_cast<double>(v(static_cast<int>(win), ki, cb + e));
                    ctx(static_cast<int>(win), qi, cb + e) = static_cast<float>(acc / sum);
                }
            }
        }
    });
    Tensor out = ops::linear(ctx, proj_w, proj_b);
    require_finite(out, "window_attention");
    return out;
}

namespace {

// Pads [B,C,H,W] symmetrically so both spatial dims divide by p.
Tensor pad_to_multiple(const Tensor& f, int p, int& top, int& left) {
    const int h = f.dim(2), w = f.dim(3);
    const int ph = (p - h % p) % p;
    const int pw = (p - w % p) % p;
    top = ph / 2;
    left = pw / 2;
    if (ph == 0 && pw == 0) return f;
    return ops::pad_zero(f, top, ph - top, left, pw - left);
}

Tensor crop(const Tensor& f, int top, int left, int h, int w) {
    if (f.dim(2) == h && f.dim(3) == w) return f;
    Tensor out({f.dim(0), f.dim(1), h, w});
    for (int b = 0; b < f.dim(0); ++b)
        for (int c = 0; c < f.dim(1); ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    out(b, c, y, x) = f(b, c, y + top, x + left);
    return out;
}

}  // namespace

Tensor cwa_block(const Tensor& f, const CwaParams& p, const WindowSpec& spec) {
    require_rank(f, 4, "cwa_block");
    const int b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
    Tensor xq = ops::conv2d(f, p.q_w, p.q_b);
    Tensor xk = ops::conv2d(f, p.k_w, p.k_b);
    Tensor xv = ops::conv2d(f, p.v_w, p.v_b);

    int top = 0, left = 0;
    xq = pad_to_multiple(xq, spec.window, top, left);
    xk = pad_to_multiple(xk, spec.window, top, left);
    xv = pad_to_multiple(xv, spec.window, top, left);
    const int hp = xq.dim(2), wp = xq.dim(3);

    Tensor q = partition_q_windows(xq, spec);
    Tensor k = extract_kv_windows(xk, spec);
    Tensor v = extract_kv_windows(xv, spec);
    Tensor attended = window_attention(q, k, v, p.bias, spec.heads, p.proj_w, p.proj_b);
    Tensor merged = merge_q_windows(attended, spec, b, c, hp, wp);
    return crop(merged, top, left, h, w);
}

Tensor cfa_gate(const Tensor& f, const CfaParams& p) {
    require_rank(f, 4, "cfa_gate");
    const int c = f.dim(1);
    if (p.conv1_w.dim(1) != c)
        throw shape_error("cfa_gate: params expect " + std::to_string(p.conv1_w.dim(1)) +
                          " channels, got " + std::to_string(c));
    Tensor t = ops::conv2d(f, p.conv1_w, p.conv1_b, 1, 1);
    t = ops::activation(t, ops::Act::Relu);
    t = ops::conv2d(t, p.conv2_w, p.conv2_b, 1, 1);
    // global average pool, then the sigmoid gate
    const int n = t.dim(0), h = t.dim(2), w = t.dim(3);
    Tensor gate({n, c});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) acc += t(b, ch, y, x);
            gate(b, ch) = static_cast<float>(ops::sigmoid(acc / (static_cast<double>(h) * w)));
        }
    return gate;
}

Tensor cfa_block(const Tensor& f, const CfaParams& p) {
    Tensor gate = cfa_gate(f, p);
    Tensor out(f.shape());
    const int n = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const float g = gate(b, ch);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out(b, ch, y, x) = f(b, ch, y, x) * g;
        }
    require_finite(out, "cfa_block");
    return out;
}

Tensor mca_encoder_block(const Tensor& f0, const McaParams& p, const WindowSpec& spec,
                         float alpha) {
    require_rank(f0, 4, "mca_encoder_block");
    const int n = f0.dim(0), c = f0.dim(1), h = f0.dim(2), w = f0.dim(3);

    Tensor normed = ops::layer_norm_channels(f0, p.ln1_g, p.ln1_b);
    Tensor f_lw = cwa_block(normed, p.cwa, spec);

    // Cross-frame branch sees all frames stacked along the channel axis.
    Tensor stacked = normed.reshaped({1, n * c, h, w});
    Tensor f_cf = cfa_block(stacked, p.cfa).reshaped({n, c, h, w});

    Tensor f_mc({n, c, h, w});
    for (int64_t i = 0; i < f_mc.numel(); ++i)
        f_mc.data()[i] = f_lw.data()[i] + alpha * f_cf.data()[i] + f0.data()[i];

    Tensor tokens = ops::nchw_to_tokens(ops::layer_norm_channels(f_mc, p.ln2_g, p.ln2_b));
    tokens = ops::linear(tokens, p.mlp1_w, p.mlp1_b);
    tokens = ops::activation(tokens, ops::Act::Gelu);
    tokens = ops::linear(tokens, p.mlp2_w, p.mlp2_b);
    Tensor mlp_out = ops::tokens_to_nchw(tokens, n, c, h, w);

    Tensor out({n, c, h, w});
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data()[i] = mlp_out.data()[i] + f_mc.data()[i];
    require_finite(out, "mca_encoder_block");
    return out;
}

}  // namespace burstforge::attn
