// burstforge: synthetic RAW burst generation, burst super-resolution
// inference with pluggable flow estimation, image quality metrics, chart
// analysis, kernel self-verification and micro-benchmarks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "burstforge/alignment.hpp"
#include "burstforge/common.hpp"
#include "burstforge/io.hpp"
#include "burstforge/metrics.hpp"
#include "burstforge/model.hpp"
#include "burstforge/rng.hpp"
#include "burstforge/selfcheck.hpp"
#include "burstforge/simulator.hpp"
#include "burstforge/state_space.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace burstforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

struct RunConfig {
    uint64_t seed = 0;
    std::optional<int> threads;
    std::optional<model::ModelConfig> model_cfg;
    sim::SyntheticBurstSpec burst;
};

sim::SyntheticBurstSpec burst_from_json(const json& j) {
    sim::SyntheticBurstSpec s;
    static const char* known[] = {"n_frames",   "max_shift_px", "max_rot_deg",
                                  "downscale",  "read_noise",   "shot_noise"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw io_error("config: unknown burst field '" + it.key() + "'");
    }
    if (j.contains("n_frames")) s.n_frames = j.at("n_frames").get<int>();
    if (j.contains("max_shift_px")) s.max_shift_px = j.at("max_shift_px").get<float>();
    if (j.contains("max_rot_deg")) s.max_rot_deg = j.at("max_rot_deg").get<float>();
    if (j.contains("downscale")) s.downscale = j.at("downscale").get<int>();
    if (j.contains("read_noise")) s.read_noise = j.at("read_noise").get<float>();
    if (j.contains("shot_noise")) s.shot_noise = j.at("shot_noise").get<float>();
    return s;
}

RunConfig load_run_config(const std::string& path) {
    RunConfig rc;
    if (path.empty()) return rc;
    std::ifstream f(path);
    if (!f) throw io_error(path + ": cannot open for reading");
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw io_error(path + ": " + e.what());
    }
    static const char* known[] = {"seed", "threads", "model", "burst"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw io_error(path + ": unknown field '" + it.key() + "'");
    }
    if (j.contains("seed")) rc.seed = j.at("seed").get<uint64_t>();
    if (j.contains("threads")) rc.threads = j.at("threads").get<int>();
    if (j.contains("model")) rc.model_cfg = io::config_from_json(j.at("model").dump());
    if (j.contains("burst")) rc.burst = burst_from_json(j.at("burst"));
    return rc;
}

std::unique_ptr<model::FlowEstimator> make_flow(const std::string& mode,
                                                const std::string& flow_dir, int n_frames,
                                                int radius, int block) {
    if (mode == "zero") return std::make_unique<model::ZeroFlowEstimator>();
    if (mode == "blockmatch") {
        auto est = std::make_unique<model::BlockMatchingFlowEstimator>();
        est->search_radius = radius;
        est->block = block;
        return est;
    }
    if (mode == "file") {
        if (flow_dir.empty()) throw io_error("flow mode 'file' requires --flow-dir");
        auto est = std::make_unique<model::PrecomputedFlowEstimator>();
        for (int i = 0; i < n_frames; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "flow_%03d.flw", i);
            const fs::path p = fs::path(flow_dir) / name;
            if (i == 0 && !fs::exists(p)) {
                est->flows.push_back(align::FlowField{Tensor({2, 1, 1})});  // replaced below
                continue;
            }
            est->flows.push_back(io::read_flow(p));
        }
        return est;
    }
    throw io_error("unknown flow mode '" + mode + "' (zero|blockmatch|file)");
}

std::vector<fs::path> list_images(const fs::path& p) {
    std::vector<fs::path> out;
    if (fs::is_directory(p)) {
        for (const auto& e : fs::directory_iterator(p)) {
            const std::string ext = e.path().extension().string();
            if (ext == ".ppm" || ext == ".pgm") out.push_back(e.path());
        }
        std::sort(out.begin(), out.end());
        if (out.empty()) throw io_error(p.string() + ": no .ppm/.pgm images found");
    } else {
        out.push_back(p);
    }
    return out;
}

Tensor force_rgb(const Tensor& img) {
    if (img.dim(0) == 3) return img;
    Tensor rgb({3, img.dim(1), img.dim(2)});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.dim(1); ++y)
            for (int x = 0; x < img.dim(2); ++x) rgb(c, y, x) = img(0, y, x);
    return rgb;
}

int cmd_init(const RunConfig& rc, const std::string& out, const std::string& mode,
             const std::string& preset) {
    model::ModelConfig cfg = rc.model_cfg ? *rc.model_cfg
                             : preset == "full" ? model::ModelConfig::full()
                                                 : model::ModelConfig::desk();
    model::Model m(cfg);
    if (mode == "identity") {
        model::init_identity_biased(m);
    } else if (mode == "random") {
        model::init_random(m, rc.seed);
    } else {
        throw io_error("unknown init mode '" + mode + "' (random|identity)");
    }
    io::save_checkpoint(out, model::to_checkpoint(m));
    std::cout << "wrote " << out << " (" << model::to_checkpoint(m).tensors.size()
              << " tensors, mode " << mode << ")\n";
    return kExitOk;
}

int cmd_generate(const RunConfig& rc, const std::string& hr_path, const std::string& out_dir) {
    sim::SyntheticBurstSpec spec = rc.burst;
    const std::vector<fs::path> images = list_images(hr_path);
    Splitmix64 root(rc.seed);
    for (size_t i = 0; i < images.size(); ++i) {
        spec.seed = root.substream(i).next();
        Tensor hr = force_rgb(io::read_image(images[i]));
        auto [stack, gt] = sim::generate_burst(hr, spec);
        const fs::path dir = fs::path(out_dir) / images[i].stem();
        io::write_burst(dir, stack);
        io::write_image(dir / "ground_truth.ppm", gt.hr_rgb, 65535);
        std::cout << "burst " << dir.string() << ": " << stack.frame_count() << " frames "
                  << stack.packed_height() << "x" << stack.packed_width() << " packed\n";
    }
    return kExitOk;
}

int cmd_infer(const std::string& burst_dir, const std::string& ckpt_path,
              const std::string& out_path, const std::string& flow_mode,
              const std::string& flow_dir, int radius, int block) {
    sim::BurstStack burst = io::read_burst(burst_dir);
    model::Checkpoint ckpt = io::load_checkpoint(ckpt_path);
    model::Model m = model::from_checkpoint(ckpt);

    auto flow = make_flow(flow_mode, flow_dir, burst.frame_count(), radius, block);
    if (flow_mode == "file") {
        auto* pre = dynamic_cast<model::PrecomputedFlowEstimator*>(flow.get());
        if (pre->flows[0].data.dim(1) == 1)  // reference defaults to zero flow
            pre->flows[0] = align::zero_flow(2 * burst.packed_height(), 2 * burst.packed_width());
    }
    Tensor sr = model::forward(m, burst, *flow);
    for (int64_t i = 0; i < sr.numel(); ++i) sr.data()[i] = std::clamp(sr.data()[i], 0.0f, 1.0f);
    io::write_image(out_path, sr, 65535);
    std::cout << "wrote " << out_path << " (" << sr.dim(1) << "x" << sr.dim(2) << ")\n";
    return kExitOk;
}

int cmd_eval(const std::string& sr, const std::string& gt, const std::string& sr_dir,
             const std::string& gt_dir, const std::string& json_out) {
    struct Row {
        std::string id;
        double psnr, ssim;
    };
    std::vector<Row> rows;
    auto eval_pair = [&](const fs::path& a, const fs::path& b, const std::string& id) {
        Tensor sa = io::read_image(a);
        Tensor sb = io::read_image(b);
        rows.push_back({id, metrics::psnr(sa, sb, 1.0), metrics::ssim(sa, sb)});
    };
    if (!sr.empty()) {
        eval_pair(sr, gt, fs::path(sr).stem().string());
    } else {
        for (const fs::path& p : list_images(sr_dir)) {
            const fs::path q = fs::path(gt_dir) / p.filename();
            if (!fs::exists(q)) throw io_error(q.string() + ": ground-truth image missing");
            eval_pair(p, q, p.stem().string());
        }
    }
    double psum = 0.0, ssum = 0.0;
    for (const Row& r : rows) {
        std::printf("psnr %.6f %s\n", r.psnr, r.id.c_str());
        std::printf("ssim %.6f %s\n", r.ssim, r.id.c_str());
        psum += r.psnr;
        ssum += r.ssim;
    }
    if (rows.size() > 1) {
        std::printf("psnr_mean %.6f all\n", psum / rows.size());
        std::printf("ssim_mean %.6f all\n", ssum / rows.size());
    }
    if (!json_out.empty()) {
        json arr = json::array();
        for (const Row& r : rows)
            arr.push_back({{"id", r.id}, {"psnr", r.psnr}, {"ssim", r.ssim}});
        json doc{{"images", arr},
                 {"mean",
                  {{"psnr", psum / rows.size()}, {"ssim", ssum / rows.size()}}},
                 {"lpips", "n/a"}};
        if (json_out == "-") {
            std::cout << doc.dump(2) << "\n";
        } else {
            std::ofstream f(json_out, std::ios::trunc);
            if (!f) throw io_error(json_out + ": cannot open for writing");
            f << doc.dump(2) << "\n";
        }
    }
    return kExitOk;
}

int cmd_chart(const std::string& image, double x0, double y0, double x1, double y1,
              double period, double reading, bool raw, double pitch_um, int eval_px,
              const std::string& json_out) {
    metrics::ChartGeometry geom;
    geom.pixel_pitch_um = pitch_um;
    geom.eval_height_px = eval_px;
    geom.eval_height_mm = eval_px * pitch_um / 1000.0;

    json doc;
    if (!image.empty()) {
        Tensor img = io::read_image(image);
        const double contrast =
            metrics::line_pair_contrast(img, {x0, y0, x1, y1}, period, !raw);
        std::printf("contrast %.6f %s\n", contrast, fs::path(image).stem().string().c_str());
        std::printf("resolved %s threshold 0.1\n", contrast >= 0.1 ? "yes" : "no");
        doc["contrast"] = contrast;
        doc["resolved"] = contrast >= 0.1;
    }
    if (reading > 0.0) {
        const double lpmm = metrics::chart_reading_to_lpmm(reading, geom);
        std::printf("lpmm %.6f reading %.3f\n", lpmm, reading);
        doc["lpmm"] = lpmm;
        doc["reading"] = reading;
    }
    if (!json_out.empty()) {
        std::ofstream f(json_out, std::ios::trunc);
        if (!f) throw io_error(json_out + ": cannot open for writing");
        f << doc.dump(2) << "\n";
    }
    return kExitOk;
}

int cmd_selftest(uint64_t seed, int instances, const std::string& perturb) {
    const auto results = selfcheck::run_all(seed, instances, perturb);
    bool all_pass = true;
    std::printf("%-28s %-6s %-10s %s\n", "check", "state", "seconds", "detail");
    for (const auto& r : results) {
        all_pass = all_pass && r.pass;
        std::printf("%-28s %-6s %-10.3f %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL",
                    r.seconds, r.detail.c_str());
    }
    std::printf("%s\n", all_pass ? "all checks passed" : "FAILURES detected");
    return all_pass ? kExitOk : kExitNumeric;
}

// Median-of-runs timing for the three hot kernels.
struct BenchRow {
    std::string kernel;
    std::string size;
    double elems_per_s;
    double ms;
    double spread;  // relative deviation across repeats
};

template <typename Fn>
BenchRow bench_one(const std::string& kernel, const std::string& size, int64_t elems, Fn&& fn,
                   int iters) {
    fn();  // warmup
    std::vector<double> per_iter;
    for (int run = 0; run < 5; ++run) {
        const auto start = std::chrono::steady_clock::now();
        for (int i = 0; i < iters; ++i) fn();
        const double s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        per_iter.push_back(s / iters);
    }
    std::sort(per_iter.begin(), per_iter.end());
    const double med = per_iter[2];
    // spread over the middle three runs; single outliers do not count
    const double spread = (per_iter[3] - per_iter[1]) / med;
    return {kernel, size, static_cast<double>(elems) / med, med * 1e3, spread};
}

int cmd_bench(bool sweep, bool quick) {
    Splitmix64 rng(1234);
    auto rnd = [&rng](std::vector<int> shape) {
        Tensor t(std::move(shape));
        for (int64_t i = 0; i < t.numel(); ++i)
            t.data()[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
        return t;
    };
    const int iters = quick ? 2 : 8;
    std::vector<BenchRow> rows;

    std::vector<int> attn_hw = sweep ? std::vector<int>{16, 32, 48} : std::vector<int>{32};
    for (int hw : attn_hw) {
        const int c = 24;
        attn::WindowSpec spec{8, 0.5f, 4};
        const int side = attn::relpos_table_side(spec.window, spec.kv_window());
        attn::CwaParams p;
        p.q_w = rnd({c, c, 1, 1});
        p.q_b = rnd({c});
        p.k_w = rnd({c, c, 1, 1});
        p.k_b = rnd({c});
        p.v_w = rnd({c, c, 1, 1});
        p.v_b = rnd({c});
        p.proj_w = rnd({c, c});
        p.proj_b = rnd({c});
        p.bias.table = rnd({spec.heads, side * side});
        Tensor f = rnd({1, c, hw, hw});
        rows.push_back(bench_one("window_attention",
                                 std::to_string(hw) + "x" + std::to_string(hw) + "x" +
                                     std::to_string(c),
                                 static_cast<int64_t>(hw) * hw * c,
                                 [&] { attn::cwa_block(f, p, spec); }, iters));
    }

    std::vector<int> scan_l = sweep ? std::vector<int>{1024, 4096, 9216} : std::vector<int>{4096};
    for (int l : scan_l) {
        const int d = 32, s = 16;
        ssm::SsmParams p;
        p.a_log = rnd({d, s});
        p.skip_d = rnd({d});
        p.delta_w = rnd({d, d});
        p.delta_bias = rnd({d});
        p.b_w = rnd({s, d});
        p.b_bias = rnd({s});
        p.c_w = rnd({s, d});
        p.c_bias = rnd({s});
        Tensor x = rnd({l, d});
        rows.push_back(bench_one("selective_scan", std::to_string(l) + "x" + std::to_string(d),
                                 static_cast<int64_t>(l) * d,
                                 [&] { ssm::selective_scan_1d(x, p); }, iters));
    }

    std::vector<int> dcn_hw = sweep ? std::vector<int>{16, 24, 32} : std::vector<int>{24};
    for (int hw : dcn_hw) {
        const int c = 32, g = 4;
        Tensor f = rnd({c, hw, hw});
        Tensor off = rnd({2 * 9 * g, hw, hw});
        Tensor w = rnd({c, c, 3, 3});
        Tensor b = rnd({c});
        rows.push_back(bench_one("deform_conv",
                                 std::to_string(hw) + "x" + std::to_string(hw) + "x" +
                                     std::to_string(c),
                                 static_cast<int64_t>(hw) * hw * c,
                                 [&] { align::deform_conv(f, off, w, b, g); }, iters));
    }

    std::printf("%-18s %-14s %14s %12s %9s\n", "kernel", "size", "elems/s", "ms/iter", "spread");
    for (const auto& r : rows)
        std::printf("%-18s %-14s %14.0f %12.3f %8.1f%%\n", r.kernel.c_str(), r.size.c_str(),
                    r.elems_per_s, r.ms, 100.0 * r.spread);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"burst super-resolution forward-inference toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    uint64_t seed = 0;
    bool seed_given = false;
    int threads = 0;
    app.add_option("--config", config_path, "run configuration JSON file");
    app.add_option("--seed", seed, "global random seed")->each([&](const std::string&) {
        seed_given = true;
    });
    app.add_option("--threads", threads, "intra-op worker count (1 = reference mode)");

    // init
    auto* init = app.add_subcommand("init", "create a checkpoint file");
    std::string init_out, init_mode = "random", init_preset = "desk";
    init->add_option("--out", init_out, "checkpoint path")->required();
    init->add_option("--mode", init_mode, "random|identity");
    init->add_option("--preset", init_preset, "desk|full");

    // generate
    auto* gen = app.add_subcommand("generate", "synthesize RAW bursts from HR images");
    std::string gen_hr, gen_out;
    int gen_frames = -1;
    double gen_shift = -1.0, gen_rot = -1.0, gen_read = -1.0, gen_shot = -1.0;
    gen->add_option("--hr", gen_hr, "HR image file or directory")->required();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--frames", gen_frames, "burst length");
    gen->add_option("--max-shift", gen_shift, "max LR shift in pixels");
    gen->add_option("--max-rot", gen_rot, "max rotation in degrees");
    gen->add_option("--read-noise", gen_read, "read noise sigma");
    gen->add_option("--shot-noise", gen_shot, "shot noise scale");

    // infer
    auto* inf = app.add_subcommand("infer", "super-resolve a burst container");
    std::string inf_burst, inf_ckpt, inf_out, inf_flow = "blockmatch", inf_flow_dir;
    int inf_radius = 4, inf_block = 8;
    inf->add_option("--burst", inf_burst, "burst container directory")->required();
    inf->add_option("--checkpoint", inf_ckpt, "BFCK checkpoint")->required();
    inf->add_option("--out", inf_out, "output PPM path")->required();
    inf->add_option("--flow", inf_flow, "zero|blockmatch|file");
    inf->add_option("--flow-dir", inf_flow_dir, "directory of flow_%03d.flw files");
    inf->add_option("--bm-radius", inf_radius, "block matching search radius");
    inf->add_option("--bm-block", inf_block, "block matching block size");

    // eval
    auto* ev = app.add_subcommand("eval", "PSNR/SSIM report");
    std::string ev_sr, ev_gt, ev_sr_dir, ev_gt_dir, ev_json;
    ev->add_option("--sr", ev_sr, "super-resolved image");
    ev->add_option("--gt", ev_gt, "ground-truth image");
    ev->add_option("--sr-dir", ev_sr_dir, "directory of SR images");
    ev->add_option("--gt-dir", ev_gt_dir, "directory of GT images");
    ev->add_option("--json", ev_json, "write a JSON report here ('-' for stdout)");

    // chart
    auto* ch = app.add_subcommand("chart", "line-pair contrast and LP/mm conversion");
    std::string ch_image, ch_json;
    double ch_x0 = 0, ch_y0 = 0, ch_x1 = 0, ch_y1 = 0, ch_period = 0, ch_reading = 0;
    double ch_pitch = 15.0;
    int ch_eval_px = 360;
    bool ch_raw = false;
    ch->add_option("--image", ch_image, "chart image");
    ch->add_option("--x0", ch_x0, "profile start x");
    ch->add_option("--y0", ch_y0, "profile start y");
    ch->add_option("--x1", ch_x1, "profile end x");
    ch->add_option("--y1", ch_y1, "profile end y");
    ch->add_option("--period", ch_period, "line-pair period in pixels");
    ch->add_option("--reading", ch_reading, "chart reading in hundreds of LW/PH");
    ch->add_flag("--raw-extrema", ch_raw, "use raw per-period min/max");
    ch->add_option("--pixel-pitch-um", ch_pitch, "sensor pixel pitch");
    ch->add_option("--eval-height-px", ch_eval_px, "evaluated chart height in pixels");
    ch->add_option("--json", ch_json, "write a JSON report here");

    // selftest
    auto* st = app.add_subcommand("selftest", "run the kernel oracle suite");
    int st_instances = 100;
    std::string st_perturb;
    st->add_option("--instances", st_instances, "random instances per check");
    st->add_option("--perturb", st_perturb, "inject an error into the named check");

    // bench
    auto* be = app.add_subcommand("bench", "kernel throughput table");
    bool be_sweep = false, be_quick = false;
    be->add_flag("--sweep", be_sweep, "sweep over sizes");
    be->add_flag("--quick", be_quick, "fewer iterations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        RunConfig rc = load_run_config(config_path);
        if (seed_given) rc.seed = seed;

        int worker_count = 1;
        if (threads > 0) {
            worker_count = threads;
        } else if (rc.threads) {
            worker_count = *rc.threads;
        } else if (const char* env = std::getenv("BURSTFORGE_THREADS")) {
            worker_count = std::atoi(env);
        }
        set_thread_count(worker_count);

        if (*init) return cmd_init(rc, init_out, init_mode, init_preset);
        if (*gen) {
            if (gen_frames > 0) rc.burst.n_frames = gen_frames;
            if (gen_shift >= 0.0) rc.burst.max_shift_px = static_cast<float>(gen_shift);
            if (gen_rot >= 0.0) rc.burst.max_rot_deg = static_cast<float>(gen_rot);
            if (gen_read >= 0.0) rc.burst.read_noise = static_cast<float>(gen_read);
            if (gen_shot >= 0.0) rc.burst.shot_noise = static_cast<float>(gen_shot);
            return cmd_generate(rc, gen_hr, gen_out);
        }
        if (*inf)
            return cmd_infer(inf_burst, inf_ckpt, inf_out, inf_flow, inf_flow_dir, inf_radius,
                             inf_block);
        if (*ev) {
            const bool single = !ev_sr.empty() || !ev_gt.empty();
            const bool batch = !ev_sr_dir.empty() || !ev_gt_dir.empty();
            if (single == batch || (single && (ev_sr.empty() || ev_gt.empty())) ||
                (batch && (ev_sr_dir.empty() || ev_gt_dir.empty()))) {
                std::cerr << "eval: pass --sr/--gt or --sr-dir/--gt-dir\n";
                return kExitUsage;
            }
            return cmd_eval(ev_sr, ev_gt, ev_sr_dir, ev_gt_dir, ev_json);
        }
        if (*ch) {
            if (ch_image.empty() && ch_reading <= 0.0) {
                std::cerr << "chart: pass --image with a profile, or --reading\n";
                return kExitUsage;
            }
            if (!ch_image.empty() && ch_period <= 0.0) {
                std::cerr << "chart: --period is required with --image\n";
                return kExitUsage;
            }
            return cmd_chart(ch_image, ch_x0, ch_y0, ch_x1, ch_y1, ch_period, ch_reading,
                             ch_raw, ch_pitch, ch_eval_px, ch_json);
        }
        if (*st) return cmd_selftest(rc.seed, st_instances, st_perturb);
        if (*be) return cmd_bench(be_sweep, be_quick);
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const shape_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const numeric_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
