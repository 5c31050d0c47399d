#include "burstforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "burstforge/common.hpp"
#include "burstforge/ops.hpp"

namespace burstforge::model {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
    ModelConfig c;
    c.n_frames = 14;
    return c;
}

void ModelConfig::validate() const {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw shape_error("ModelConfig: " + msg);
    };
    need(n_frames >= 1, "n_frames must be >= 1");
    need(enc_channels >= 4 && enc_channels % 4 == 0, "enc_channels must divide by 4");
    need(enc_channels % heads == 0, "enc_channels must divide by heads");
    need(beta >= 1 && (n_frames * enc_channels) % beta == 0,
         "stacked encoder channels must divide by beta");
    need(fused_channels % beta == 0, "fused_channels must divide by beta");
    need(fused_channels % s_bottleneck == 0, "fused_channels must divide by s_bottleneck");
    need(fused_channels % deform_groups == 0, "fused_channels must divide by deform_groups");
    need(expand >= 1, "expand must be >= 1");
    need(d_state >= 1, "d_state must be >= 1");
    need(upscale == 4, "upscale is fixed at 4");
    need(window >= 1 && overlap >= 0.0f, "bad window spec");
    need(heads >= 1, "heads must be >= 1");
    need(n_encoders >= 1 && n_decoders >= 1, "need at least one encoder and decoder");
    need(pyramid_levels >= 1, "pyramid_levels must be >= 1");
    need(max_flow > 0.0f && max_offset > 0.0f, "flow/offset bounds must be positive");
}

namespace {

attn::McaParams make_encoder(const ModelConfig& cfg) {
    const int c = cfg.enc_channels;
    const int nc = cfg.n_frames * c;
    const int p = cfg.window;
    const int pk = attn::WindowSpec::kv_window_for(p, cfg.overlap);
    const int side = attn::relpos_table_side(p, pk);
    attn::McaParams e;
    e.ln1_g = Tensor({c});
    e.ln1_b = Tensor({c});
    e.cwa.q_w = Tensor({c, c, 1, 1});
    e.cwa.q_b = Tensor({c});
    e.cwa.k_w = Tensor({c, c, 1, 1});
    e.cwa.k_b = Tensor({c});
    e.cwa.v_w = Tensor({c, c, 1, 1});
    e.cwa.v_b = Tensor({c});
    e.cwa.proj_w = Tensor({c, c});
    e.cwa.proj_b = Tensor({c});
    e.cwa.bias.table = Tensor({cfg.heads, side * side});
    e.cfa.conv1_w = Tensor({nc / cfg.beta, nc, 3, 3});
    e.cfa.conv1_b = Tensor({nc / cfg.beta});
    e.cfa.conv2_w = Tensor({nc, nc / cfg.beta, 3, 3});
    e.cfa.conv2_b = Tensor({nc});
    e.ln2_g = Tensor({c});
    e.ln2_b = Tensor({c});
    e.mlp1_w = Tensor({2 * c, c});
    e.mlp1_b = Tensor({2 * c});
    e.mlp2_w = Tensor({c, 2 * c});
    e.mlp2_b = Tensor({c});
    return e;
}

align::AlignLevelParams make_align_level(const ModelConfig& cfg) {
    const int cp = cfg.fused_channels;
    const int off_ch = 2 * 9 * cfg.deform_groups;
    align::AlignLevelParams lv;
    lv.offset.conv1_w = Tensor({cp, 2 * cp + 2 + off_ch, 3, 3});
    lv.offset.conv1_b = Tensor({cp});
    lv.offset.conv2_w = Tensor({off_ch, cp, 3, 3});
    lv.offset.conv2_b = Tensor({off_ch});
    lv.dcn1_w = Tensor({cp, cp, 3, 3});
    lv.dcn1_b = Tensor({cp});
    lv.dcn2_w = Tensor({cp, cp, 3, 3});
    lv.dcn2_b = Tensor({cp});
    lv.merge_w = Tensor({cp, 2 * cp, 1, 1});
    lv.merge_b = Tensor({cp});
    return lv;
}

ssm::SsmParams make_scan(const ModelConfig& cfg) {
    const int d = cfg.expand * cfg.fused_channels;
    const int s = cfg.d_state;
    ssm::SsmParams p;
    p.a_log = Tensor({d, s});
    p.skip_d = Tensor({d});
    p.delta_w = Tensor({d, d});
    p.delta_bias = Tensor({d});
    p.b_w = Tensor({s, d});
    p.b_bias = Tensor({s});
    p.c_w = Tensor({s, d});
    p.c_bias = Tensor({s});
    return p;
}

ssm::DecoderParams make_decoder(const ModelConfig& cfg) {
    const int cp = cfg.fused_channels;
    const int inner = cfg.expand * cp;
    ssm::DecoderParams d;
    d.ln_g = Tensor({cp});
    d.ln_b = Tensor({cp});
    d.rmb.in_a_w = Tensor({inner, cp});
    d.rmb.in_a_b = Tensor({inner});
    d.rmb.dw_w = Tensor({inner, 1, 3, 3});
    d.rmb.dw_b = Tensor({inner});
    for (auto& s : d.rmb.scans) s = make_scan(cfg);
    d.rmb.ln1_g = Tensor({inner});
    d.rmb.ln1_b = Tensor({inner});
    d.rmb.in_b_w = Tensor({inner, cp});
    d.rmb.in_b_b = Tensor({inner});
    d.rmb.out_w = Tensor({cp, inner});
    d.rmb.out_b = Tensor({cp});
    d.rmb.ln2_g = Tensor({cp});
    d.rmb.ln2_b = Tensor({cp});
    d.rmb.local1_w = Tensor({cp / cfg.s_bottleneck, cp, 3, 3});
    d.rmb.local1_b = Tensor({cp / cfg.s_bottleneck});
    d.rmb.local2_w = Tensor({cp, cp / cfg.s_bottleneck, 3, 3});
    d.rmb.local2_b = Tensor({cp});
    d.gamma = Tensor({cp});
    d.ln2_g = Tensor({cp});
    d.ln2_b = Tensor({cp});
    d.conv_w = Tensor({cp, cp, 3, 3});
    d.conv_b = Tensor({cp});
    d.cfa.conv1_w = Tensor({cp / cfg.beta, cp, 3, 3});
    d.cfa.conv1_b = Tensor({cp / cfg.beta});
    d.cfa.conv2_w = Tensor({cp, cp / cfg.beta, 3, 3});
    d.cfa.conv2_b = Tensor({cp});
    d.s_prime = Tensor({cp});
    return d;
}

}  // namespace

Model::Model(const ModelConfig& config) : cfg(config) {
    cfg.validate();
    const int c = cfg.enc_channels, cp = cfg.fused_channels;
    shallow_w = Tensor({c, 4, 3, 3});
    shallow_b = Tensor({c});
    flowrgb_w = Tensor({3, 1, 3, 3});
    flowrgb_b = Tensor({3});
    for (int i = 0; i < cfg.n_encoders; ++i) encoders.push_back(make_encoder(cfg));
    lift_w = Tensor({cp, c / 4, 1, 1});
    lift_b = Tensor({cp});
    align.max_offset = cfg.max_offset;
    align.groups = cfg.deform_groups;
    for (int l = 0; l < cfg.pyramid_levels; ++l) align.levels.push_back(make_align_level(cfg));
    fuse_w = Tensor({cp, cfg.n_frames * cp, 1, 1});
    fuse_b = Tensor({cp});
    for (int i = 0; i < cfg.n_decoders; ++i) decoders.push_back(make_decoder(cfg));
    recon.stage1_w = Tensor({4 * cp, cp, 3, 3});
    recon.stage1_b = Tensor({4 * cp});
    recon.skip1_w = Tensor({cp, cp, 1, 1});
    recon.skip1_b = Tensor({cp});
    recon.stage2_w = Tensor({4 * cp, cp, 3, 3});
    recon.stage2_b = Tensor({4 * cp});
    recon.skip2_w = Tensor({cp, cp, 1, 1});
    recon.skip2_b = Tensor({cp});
    recon.out_w = Tensor({3, cp, 3, 3});
    recon.out_b = Tensor({3});
}

void visit_params(Model& m, const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("shallow.weight", m.shallow_w);
    fn("shallow.bias", m.shallow_b);
    fn("flow_rgb.weight", m.flowrgb_w);
    fn("flow_rgb.bias", m.flowrgb_b);
    for (size_t i = 0; i < m.encoders.size(); ++i) {
        const std::string p = "enc" + std::to_string(i) + ".";
        attn::McaParams& e = m.encoders[i];
        fn(p + "ln1.gamma", e.ln1_g);
        fn(p + "ln1.beta", e.ln1_b);
        fn(p + "cwa.q.weight", e.cwa.q_w);
        fn(p + "cwa.q.bias", e.cwa.q_b);
        fn(p + "cwa.k.weight", e.cwa.k_w);
        fn(p + "cwa.k.bias", e.cwa.k_b);
        fn(p + "cwa.v.weight", e.cwa.v_w);
        fn(p + "cwa.v.bias", e.cwa.v_b);
        fn(p + "cwa.proj.weight", e.cwa.proj_w);
        fn(p + "cwa.proj.bias", e.cwa.proj_b);
        fn(p + "cwa.relpos", e.cwa.bias.table);
        fn(p + "cfa.conv1.weight", e.cfa.conv1_w);
        fn(p + "cfa.conv1.bias", e.cfa.conv1_b);
        fn(p + "cfa.conv2.weight", e.cfa.conv2_w);
        fn(p + "cfa.conv2.bias", e.cfa.conv2_b);
        fn(p + "ln2.gamma", e.ln2_g);
        fn(p + "ln2.beta", e.ln2_b);
        fn(p + "mlp.fc1.weight", e.mlp1_w);
        fn(p + "mlp.fc1.bias", e.mlp1_b);
        fn(p + "mlp.fc2.weight", e.mlp2_w);
        fn(p + "mlp.fc2.bias", e.mlp2_b);
    }
    fn("lift.weight", m.lift_w);
    fn("lift.bias", m.lift_b);
    for (size_t l = 0; l < m.align.levels.size(); ++l) {
        const std::string p = "align.lv" + std::to_string(l) + ".";
        align::AlignLevelParams& lv = m.align.levels[l];
        fn(p + "offset.conv1.weight", lv.offset.conv1_w);
        fn(p + "offset.conv1.bias", lv.offset.conv1_b);
        fn(p + "offset.conv2.weight", lv.offset.conv2_w);
        fn(p + "offset.conv2.bias", lv.offset.conv2_b);
        fn(p + "dcn1.weight", lv.dcn1_w);
        fn(p + "dcn1.bias", lv.dcn1_b);
        fn(p + "dcn2.weight", lv.dcn2_w);
        fn(p + "dcn2.bias", lv.dcn2_b);
        fn(p + "merge.weight", lv.merge_w);
        fn(p + "merge.bias", lv.merge_b);
    }
    fn("fuse.weight", m.fuse_w);
    fn("fuse.bias", m.fuse_b);
    for (size_t i = 0; i < m.decoders.size(); ++i) {
        const std::string p = "dec" + std::to_string(i) + ".";
        ssm::DecoderParams& d = m.decoders[i];
        fn(p + "ln.gamma", d.ln_g);
        fn(p + "ln.beta", d.ln_b);
        fn(p + "rmb.in_a.weight", d.rmb.in_a_w);
        fn(p + "rmb.in_a.bias", d.rmb.in_a_b);
        fn(p + "rmb.dw.weight", d.rmb.dw_w);
        fn(p + "rmb.dw.bias", d.rmb.dw_b);
        for (size_t s = 0; s < 4; ++s) {
            const std::string q = p + "rmb.scan" + std::to_string(s) + ".";
            ssm::SsmParams& sp = d.rmb.scans[s];
            fn(q + "a_log", sp.a_log);
            fn(q + "skip_d", sp.skip_d);
            fn(q + "delta.weight", sp.delta_w);
            fn(q + "delta.bias", sp.delta_bias);
            fn(q + "b.weight", sp.b_w);
            fn(q + "b.bias", sp.b_bias);
            fn(q + "c.weight", sp.c_w);
            fn(q + "c.bias", sp.c_bias);
        }
        fn(p + "rmb.ln1.gamma", d.rmb.ln1_g);
        fn(p + "rmb.ln1.beta", d.rmb.ln1_b);
        fn(p + "rmb.in_b.weight", d.rmb.in_b_w);
        fn(p + "rmb.in_b.bias", d.rmb.in_b_b);
        fn(p + "rmb.out.weight", d.rmb.out_w);
        fn(p + "rmb.out.bias", d.rmb.out_b);
        fn(p + "rmb.ln2.gamma", d.rmb.ln2_g);
        fn(p + "rmb.ln2.beta", d.rmb.ln2_b);
        fn(p + "rmb.local1.weight", d.rmb.local1_w);
        fn(p + "rmb.local1.bias", d.rmb.local1_b);
        fn(p + "rmb.local2.weight", d.rmb.local2_w);
        fn(p + "rmb.local2.bias", d.rmb.local2_b);
        fn(p + "gamma", d.gamma);
        fn(p + "ln2.gamma", d.ln2_g);
        fn(p + "ln2.beta", d.ln2_b);
        fn(p + "conv.weight", d.conv_w);
        fn(p + "conv.bias", d.conv_b);
        fn(p + "cfa.conv1.weight", d.cfa.conv1_w);
        fn(p + "cfa.conv1.bias", d.cfa.conv1_b);
        fn(p + "cfa.conv2.weight", d.cfa.conv2_w);
        fn(p + "cfa.conv2.bias", d.cfa.conv2_b);
        fn(p + "s_prime", d.s_prime);
    }
    fn("recon.stage1.weight", m.recon.stage1_w);
    fn("recon.stage1.bias", m.recon.stage1_b);
    fn("recon.skip1.weight", m.recon.skip1_w);
    fn("recon.skip1.bias", m.recon.skip1_b);
    fn("recon.stage2.weight", m.recon.stage2_w);
    fn("recon.stage2.bias", m.recon.stage2_b);
    fn("recon.skip2.weight", m.recon.skip2_w);
    fn("recon.skip2.bias", m.recon.skip2_b);
    fn("recon.out.weight", m.recon.out_w);
    fn("recon.out.bias", m.recon.out_b);
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void init_random(Model& m, uint64_t seed) {
    Splitmix64 root(seed);
    uint64_t ordinal = 0;
    visit_params(m, [&](const std::string& name, Tensor& t) {
        Splitmix64 rng = root.substream(ordinal++);
        if (ends_with(name, ".gamma")) {
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 1.0f;
        } else if (ends_with(name, ".beta") || ends_with(name, ".relpos")) {
            // zero
        } else if (ends_with(name, ".a_log")) {
            // A log-spaced over [-1, -1/16] per state
            const int s = t.dim(1);
            for (int c = 0; c < t.dim(0); ++c)
                for (int e = 0; e < s; ++e) {
                    const double frac = s == 1 ? 1.0 : static_cast<double>(e) / (s - 1);
                    const double mag = std::exp(std::log(1.0 / 16.0) + frac * std::log(16.0));
                    t(c, e) = static_cast<float>(std::log(mag));
                }
        } else if (ends_with(name, ".skip_d") || ends_with(name, ".s_prime")) {
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 1.0f;
        } else if (ends_with(name, "delta.bias")) {
            // softplus(delta_bias) ~ 0.05
            const float db = static_cast<float>(std::log(std::exp(0.05) - 1.0));
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = db;
        } else if (ends_with(name, ".bias")) {
            // zero
        } else {
            // fan-in-scaled uniform for convs and linears
            int64_t fan_in = 1;
            if (t.rank() == 4)
                fan_in = static_cast<int64_t>(t.dim(1)) * t.dim(2) * t.dim(3);
            else if (t.rank() == 2)
                fan_in = t.dim(1);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (int64_t i = 0; i < t.numel(); ++i)
                t.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
        }
    });
}

void init_identity_biased(Model& m) {
    visit_params(m, [](const std::string&, Tensor& t) {
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 0.0f;
    });
    m.cfg.alpha = 0.0f;
    m.cfg.s_res = 0.0f;
    const int cp = m.cfg.fused_channels;
    const int n = m.cfg.n_frames;

    // shallow: channels 0..3 each carry the RGGB mean, so the ensuing
    // pixel shuffle reproduces it at mosaic resolution
    for (int oc = 0; oc < 4; ++oc)
        for (int ic = 0; ic < 4; ++ic) m.shallow_w(oc, ic, 1, 1) = 0.25f;
    // encoders stay zero: every branch dies, the residual passes f0 through
    m.lift_w(0, 0, 0, 0) = 1.0f;
    for (auto& lv : m.align.levels) {
        for (int c = 0; c < cp; ++c) {
            lv.dcn1_w(c, c, 1, 1) = 1.0f;
            lv.dcn2_w(c, c, 1, 1) = 1.0f;
            lv.merge_w(c, c, 0, 0) = 1.0f;  // current level only
        }
    }
    for (int c = 0; c < cp; ++c)
        for (int f = 0; f < n; ++f) m.fuse_w(c, f * cp + c, 0, 0) = 1.0f / n;
    for (auto& d : m.decoders) {
        for (int c = 0; c < cp; ++c) {
            d.gamma(c) = 1.0f;
            d.s_prime(c) = 1.0f;
        }
        // keep the scan step positive; everything else stays zero
        for (auto& s : d.rmb.scans)
            for (int64_t i = 0; i < s.delta_bias.numel(); ++i) s.delta_bias.data()[i] = 0.0f;
    }
    for (int j = 0; j < 4; ++j) {
        m.recon.stage1_w(j, 0, 1, 1) = 1.0f;
        m.recon.stage2_w(j, 0, 1, 1) = 1.0f;
    }
    for (int r = 0; r < 3; ++r) m.recon.out_w(r, 0, 1, 1) = 1.0f;
}

align::FlowField ZeroFlowEstimator::estimate(const sim::BurstStack& burst, int) const {
    return align::zero_flow(2 * burst.packed_height(), 2 * burst.packed_width());
}

namespace {

// Mean of the four RGGB planes, bilinearly upsampled to the mosaic grid.
Tensor packed_luma_up(const Tensor& packed) {
    const int h = packed.dim(1), w = packed.dim(2);
    Tensor luma({1, 1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            luma(0, 0, y, x) = 0.25f * (packed(0, y, x) + packed(1, y, x) +
                                        packed(2, y, x) + packed(3, y, x));
    return ops::resize_bilinear(luma, 2 * h, 2 * w).reshaped({1, 2 * h, 2 * w});
}

}  // namespace

align::FlowField BlockMatchingFlowEstimator::estimate(const sim::BurstStack& burst,
                                                      int frame) const {
    const int h = 2 * burst.packed_height(), w = 2 * burst.packed_width();
    if (frame == 0) return align::zero_flow(h, w);
    Tensor ref = packed_luma_up(burst.frames.at(0));
    Tensor src = packed_luma_up(burst.frames.at(static_cast<size_t>(frame)));
    return align::block_matching_flow(ref, src, search_radius, block);
}

align::FlowField PrecomputedFlowEstimator::estimate(const sim::BurstStack& burst,
                                                    int frame) const {
    if (frame < 0 || frame >= static_cast<int>(flows.size()))
        throw shape_error("PrecomputedFlowEstimator: no flow for frame " +
                          std::to_string(frame));
    const align::FlowField& f = flows[static_cast<size_t>(frame)];
    if (f.height() != 2 * burst.packed_height() || f.width() != 2 * burst.packed_width())
        throw shape_error("PrecomputedFlowEstimator: flow dims for frame " +
                          std::to_string(frame) + " do not match the burst");
    return f;
}

namespace {

Tensor slice_frame(const Tensor& stack, int i) {
    const int c = stack.dim(1), h = stack.dim(2), w = stack.dim(3);
    Tensor out({1, c, h, w});
    const int64_t len = static_cast<int64_t>(c) * h * w;
    std::copy_n(stack.data() + i * len, len, out.data());
    return out;
}

void set_frame(Tensor& stack, int i, const Tensor& frame) {
    const int64_t len = frame.numel();
    std::copy_n(frame.data(), len, stack.data() + i * len);
}

}  // namespace

Tensor shallow_extract(const Model& m, const sim::BurstStack& burst) {
    if (burst.frame_count() < 1) throw shape_error("shallow_extract: empty burst");
    const int h = burst.packed_height(), w = burst.packed_width();
    Tensor in({burst.frame_count(), 4, h, w});
    for (int i = 0; i < burst.frame_count(); ++i) {
        const Tensor& f = burst.frames[static_cast<size_t>(i)];
        if (f.shape() != std::vector<int>{4, h, w})
            throw shape_error("shallow_extract: frame " + std::to_string(i) +
                              " is not packed RGGB [4,h,w]: " + f.shape_str());
        set_frame(in, i, f.reshaped({1, 4, h, w}));
    }
    return ops::conv2d(in, m.shallow_w, m.shallow_b, 1, 1);
}

Tensor encode(const Model& m, const Tensor& f0) {
    Tensor f = f0;
    const attn::WindowSpec spec = m.cfg.window_spec();
    for (const auto& e : m.encoders) f = attn::mca_encoder_block(f, e, spec, m.cfg.alpha);
    return f;
}

Tensor to_rgb_for_flow(const Model& m, const sim::BurstStack& burst) {
    const int n = burst.frame_count();
    const int h = burst.packed_height(), w = burst.packed_width();
    Tensor out({n, 3, 2 * h, 2 * w});
    for (int i = 0; i < n; ++i) {
        Tensor mosaic = ops::pixel_shuffle(
            burst.frames[static_cast<size_t>(i)].reshaped({1, 4, h, w}), 2);
        set_frame(out, i, ops::conv2d(mosaic, m.flowrgb_w, m.flowrgb_b, 1, 1));
    }
    return out;
}

Tensor lift_frames(const Model& m, const Tensor& fd) {
    require_rank(fd, 4, "lift_frames");
    const int n = fd.dim(0), c = fd.dim(1), h = fd.dim(2), w = fd.dim(3);
    if (c % 4 != 0) throw shape_error("lift_frames: channels must divide by 4");
    Tensor out({n, m.cfg.fused_channels, 2 * h, 2 * w});
    for (int i = 0; i < n; ++i) {
        Tensor lifted = ops::pixel_shuffle(slice_frame(fd, i), 2);
        set_frame(out, i, ops::conv2d(lifted, m.lift_w, m.lift_b));
    }
    return out;
}

namespace {

Tensor align_frames(const Model& m, const Tensor& lifted,
                    const std::vector<align::FlowField>& flows) {
    const int n = lifted.dim(0), cp = lifted.dim(1), h = lifted.dim(2), w = lifted.dim(3);
    if (static_cast<int>(flows.size()) != n)
        throw shape_error("align: got " + std::to_string(flows.size()) + " flows for " +
                          std::to_string(n) + " frames");
    Tensor ref = slice_frame(lifted, 0).reshaped({cp, h, w});
    Tensor out({n, cp, h, w});
    for (int i = 0; i < n; ++i) {
        align::FlowField flow = flows[static_cast<size_t>(i)];
        for (int64_t j = 0; j < flow.data.numel(); ++j)
            flow.data.data()[j] =
                std::clamp(flow.data.data()[j], -m.cfg.max_flow, m.cfg.max_flow);
        align::FlowPyramid pyr = align::build_flow_pyramid(flow, m.cfg.pyramid_levels);
        Tensor feat = slice_frame(lifted, i).reshaped({cp, h, w});
        Tensor aligned = align::pyramid_align(feat, ref, pyr, m.align);
        set_frame(out, i, aligned.reshaped({1, cp, h, w}));
    }
    return out;
}

}  // namespace

Tensor lift_and_align(const Model& m, const Tensor& fd,
                      const std::vector<align::FlowField>& flows) {
    return align_frames(m, lift_frames(m, fd), flows);
}

Tensor fuse_decode(const Model& m, const Tensor& fa) {
    require_rank(fa, 4, "fuse_decode");
    const int n = fa.dim(0), cp = fa.dim(1), h = fa.dim(2), w = fa.dim(3);
    Tensor merged = ops::conv2d(fa.reshaped({1, n * cp, h, w}), m.fuse_w, m.fuse_b);
    Tensor x = merged.reshaped({cp, h, w});
    for (const auto& d : m.decoders) x = ssm::decoder_block(x, d);
    for (int64_t i = 0; i < x.numel(); ++i)
        x.data()[i] += m.cfg.s_res * merged.data()[i];
    return x;
}

Tensor reconstruct(const Model& m, const Tensor& ff, const Tensor& ref_skip) {
    require_rank(ff, 3, "reconstruct");
    require_rank(ref_skip, 3, "reconstruct ref_skip");
    const int cp = ff.dim(0), h = ff.dim(1), w = ff.dim(2);
    Tensor skip4 = ref_skip.reshaped({1, ref_skip.dim(0), ref_skip.dim(1), ref_skip.dim(2)});

    Tensor x = ff.reshaped({1, cp, h, w});
    x = ops::pixel_shuffle(ops::conv2d(x, m.recon.stage1_w, m.recon.stage1_b, 1, 1), 2);
    Tensor s1 = ops::conv2d(ops::resize_bilinear(skip4, 2 * h, 2 * w), m.recon.skip1_w,
                            m.recon.skip1_b);
    for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] += s1.data()[i];
    x = ops::activation(x, ops::Act::LeakyRelu, 0.1f);

    x = ops::pixel_shuffle(ops::conv2d(x, m.recon.stage2_w, m.recon.stage2_b, 1, 1), 2);
    Tensor s2 = ops::conv2d(ops::resize_bilinear(skip4, 4 * h, 4 * w), m.recon.skip2_w,
                            m.recon.skip2_b);
    for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] += s2.data()[i];
    x = ops::activation(x, ops::Act::LeakyRelu, 0.1f);

    Tensor out = ops::conv2d(x, m.recon.out_w, m.recon.out_b, 1, 1);
    return out.reshaped({3, 4 * h, 4 * w});
}

Tensor forward(const Model& m, const sim::BurstStack& burst, const FlowEstimator& flow) {
    if (burst.frame_count() != m.cfg.n_frames)
        throw shape_error("forward: burst has " + std::to_string(burst.frame_count()) +
                          " frames, config expects " + std::to_string(m.cfg.n_frames));
    Tensor f0 = shallow_extract(m, burst);
    Tensor fd = encode(m, f0);
    std::vector<align::FlowField> flows;
    flows.reserve(static_cast<size_t>(burst.frame_count()));
    for (int i = 0; i < burst.frame_count(); ++i) flows.push_back(flow.estimate(burst, i));
    Tensor lifted = lift_frames(m, fd);
    Tensor fa = align_frames(m, lifted, flows);
    Tensor ff = fuse_decode(m, fa);
    const int cp = m.cfg.fused_channels;
    Tensor ref_skip =
        slice_frame(lifted, 0).reshaped({cp, lifted.dim(2), lifted.dim(3)});
    Tensor out = reconstruct(m, ff, ref_skip);
    require_finite(out, "forward");
    return out;
}

double l1_loss(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw shape_error("l1_loss: shapes differ, " + a.shape_str() + " vs " + b.shape_str());
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        acc += std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]));
    return acc / static_cast<double>(a.numel());
}

Checkpoint to_checkpoint(const Model& m) {
    Checkpoint c;
    c.config = m.cfg;
    Model& mut = const_cast<Model&>(m);  // read-only traversal
    visit_params(mut, [&](const std::string& name, Tensor& t) {
        c.tensors.emplace_back(name, t);
    });
    return c;
}

Model from_checkpoint(const Checkpoint& c) {
    Model m(c.config);
    std::map<std::string, Tensor*> slots;
    std::vector<std::string> order;
    visit_params(m, [&](const std::string& name, Tensor& t) {
        slots[name] = &t;
        order.push_back(name);
    });
    std::map<std::string, int> seen;
    for (const auto& [name, tensor] : c.tensors) {
        auto it = slots.find(name);
        if (it == slots.end())
            throw shape_error("checkpoint: unexpected tensor '" + name + "'");
        if (++seen[name] > 1)
            throw shape_error("checkpoint: duplicate tensor '" + name + "'");
        if (tensor.shape() != it->second->shape())
            throw shape_error("checkpoint: tensor '" + name + "' has shape " +
                              tensor.shape_str() + ", expected " + it->second->shape_str());
        *it->second = tensor;
    }
    for (const std::string& name : order)
        if (!seen.count(name))
            throw shape_error("checkpoint: missing tensor '" + name + "'");
    return m;
}

}  // namespace burstforge::model
