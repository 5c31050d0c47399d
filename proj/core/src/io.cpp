#include "burstforge/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "burstforge/common.hpp"

namespace burstforge::io {

namespace {

using nlohmann::json;

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error(path.string() + ": cannot open for reading");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    return buf;
}

void spill(const std::filesystem::path& path, const std::vector<unsigned char>& buf) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error(path.string() + ": cannot open for writing");
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
    if (!f) throw io_error(path.string() + ": write failed");
}

// Bounded little-endian reader with position-bearing errors.
class Reader {
public:
    Reader(const std::vector<unsigned char>& buf, std::string origin)
        : buf_(buf), origin_(std::move(origin)) {}

    size_t pos() const { return pos_; }
    size_t remaining() const { return buf_.size() - pos_; }

    void need(size_t n, const char* what) const {
        if (pos_ + n > buf_.size())
            throw io_error(origin_ + ": " + what + " truncated at byte " +
                           std::to_string(pos_));
    }

    void bytes(void* dst, size_t n, const char* what) {
        need(n, what);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }

    uint32_t u32(const char* what) {
        unsigned char b[4];
        bytes(b, 4, what);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }

    uint64_t u64(const char* what) {
        uint64_t lo = u32(what);
        uint64_t hi = u32(what);
        return lo | (hi << 32);
    }

    void f32_block(float* dst, size_t count, const char* what) {
        need(count * 4, what);
        std::memcpy(dst, buf_.data() + pos_, count * 4);
        pos_ += count * 4;
    }

    void magic(const char* expect, const char* what) {
        char m[4];
        bytes(m, 4, what);
        if (std::memcmp(m, expect, 4) != 0)
            throw io_error(origin_ + ": bad magic in field '" + what + "' at byte 0");
    }

    std::string error(const std::string& msg) const {
        return origin_ + ": " + msg + " at byte " + std::to_string(pos_);
    }

private:
    const std::vector<unsigned char>& buf_;
    std::string origin_;
    size_t pos_ = 0;
};

class Writer {
public:
    void bytes(const void* src, size_t n) {
        const auto* p = static_cast<const unsigned char*>(src);
        buf_.insert(buf_.end(), p, p + n);
    }
    void u32(uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        bytes(b, 4);
    }
    void u64(uint64_t v) {
        u32(static_cast<uint32_t>(v));
        u32(static_cast<uint32_t>(v >> 32));
    }
    void f32_block(const float* src, size_t count) { bytes(src, count * 4); }
    const std::vector<unsigned char>& data() const { return buf_; }

private:
    std::vector<unsigned char> buf_;
};

}  // namespace

// ---- PGM / PPM ----

namespace {

// Consumes PNM whitespace and '#' comments ahead of a header token.
int pnm_int(Reader& r, const char* what) {
    unsigned char c = 0;
    for (;;) {
        r.bytes(&c, 1, what);
        if (c == '#') {
            while (c != '\n') r.bytes(&c, 1, what);
        } else if (!std::isspace(c)) {
            break;
        }
    }
    if (!std::isdigit(c)) throw io_error(r.error(std::string("expected digit in ") + what));
    long v = 0;
    for (;;) {
        v = v * 10 + (c - '0');
        if (v > 1 << 30) throw io_error(r.error(std::string(what) + " out of range"));
        if (r.remaining() == 0) break;
        r.bytes(&c, 1, what);
        if (!std::isdigit(c)) {
            if (!std::isspace(c))
                throw io_error(r.error(std::string("bad character after ") + what));
            break;
        }
    }
    return static_cast<int>(v);
}

}  // namespace

ImageFile read_image_file(const std::filesystem::path& path) {
    const std::vector<unsigned char> buf = slurp(path);
    Reader r(buf, path.string());
    char m[2];
    r.bytes(m, 2, "format tag");
    ImageFile img;
    if (m[0] == 'P' && m[1] == '5')
        img.channels = 1;
    else if (m[0] == 'P' && m[1] == '6')
        img.channels = 3;
    else
        throw io_error(path.string() + ": field 'format tag' is not P5 or P6");
    img.width = pnm_int(r, "width");
    img.height = pnm_int(r, "height");
    img.max_value = pnm_int(r, "maxval");
    if (img.width <= 0 || img.height <= 0)
        throw io_error(path.string() + ": field 'size' is empty");
    if (img.max_value <= 0 || img.max_value > 65535)
        throw io_error(path.string() + ": field 'maxval' out of range");

    const size_t count =
        static_cast<size_t>(img.width) * img.height * static_cast<size_t>(img.channels);
    img.samples.resize(count);
    if (img.max_value < 256) {
        r.need(count, "pixel data");
        for (size_t i = 0; i < count; ++i) {
            unsigned char b;
            r.bytes(&b, 1, "pixel data");
            img.samples[i] = b;
        }
    } else {
        r.need(count * 2, "pixel data");
        for (size_t i = 0; i < count; ++i) {
            unsigned char b[2];
            r.bytes(b, 2, "pixel data");
            img.samples[i] = static_cast<uint16_t>((b[0] << 8) | b[1]);  // big-endian
        }
    }
    return img;
}

void write_image_file(const std::filesystem::path& path, const ImageFile& img) {
    if (img.channels != 1 && img.channels != 3)
        throw io_error(path.string() + ": field 'channels' must be 1 or 3");
    Writer w;
    const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" +
                               std::to_string(img.width) + " " + std::to_string(img.height) +
                               "\n" + std::to_string(img.max_value) + "\n";
    w.bytes(header.data(), header.size());
    for (uint16_t s : img.samples) {
        if (img.max_value < 256) {
            unsigned char b = static_cast<unsigned char>(s);
            w.bytes(&b, 1);
        } else {
            unsigned char b[2] = {static_cast<unsigned char>(s >> 8),
                                  static_cast<unsigned char>(s & 0xFF)};
            w.bytes(b, 2);
        }
    }
    spill(path, w.data());
}

Tensor to_tensor(const ImageFile& img) {
    Tensor t({img.channels, img.height, img.width});
    const float scale = 1.0f / static_cast<float>(img.max_value);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                t(c, y, x) = scale * img.samples[(static_cast<size_t>(y) * img.width + x) *
                                                     img.channels +
                                                 c];
    return t;
}

ImageFile to_image_file(const Tensor& t, int max_value) {
    require_rank(t, 3, "to_image_file");
    if (t.dim(0) != 1 && t.dim(0) != 3)
        throw shape_error("to_image_file: need 1 or 3 channels, got " + t.shape_str());
    ImageFile img;
    img.channels = t.dim(0);
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.max_value = max_value;
    img.samples.resize(static_cast<size_t>(img.width) * img.height * img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                const double v = std::clamp(static_cast<double>(t(c, y, x)), 0.0, 1.0);
                img.samples[(static_cast<size_t>(y) * img.width + x) * img.channels + c] =
                    static_cast<uint16_t>(std::lround(v * max_value));
            }
    return img;
}

Tensor read_image(const std::filesystem::path& path) { return to_tensor(read_image_file(path)); }

void write_image(const std::filesystem::path& path, const Tensor& t, int max_value) {
    write_image_file(path, to_image_file(t, max_value));
}

// ---- BFT1 raw tensors ----

Tensor read_tensor(const std::filesystem::path& path) {
    const std::vector<unsigned char> buf = slurp(path);
    Reader r(buf, path.string());
    r.magic("BFT1", "magic");
    const uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw io_error(r.error("field 'rank' out of range"));
    std::vector<int> shape;
    int64_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        const uint32_t d = r.u32("dims");
        if (d == 0 || d > (1u << 24)) throw io_error(r.error("field 'dims' out of range"));
        shape.push_back(static_cast<int>(d));
        count *= d;
        if (count > (1LL << 31)) throw io_error(r.error("field 'dims' overflow"));
    }
    Tensor t(shape);
    r.f32_block(t.data(), static_cast<size_t>(count), "payload");
    if (r.remaining() != 0)
        throw io_error(r.error("trailing bytes after declared payload"));
    return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    Writer w;
    w.bytes("BFT1", 4);
    w.u32(static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) w.u32(static_cast<uint32_t>(t.dim(i)));
    w.f32_block(t.data(), static_cast<size_t>(t.numel()));
    spill(path, w.data());
}

// ---- FLW1 flow fields ----

align::FlowField read_flow(const std::filesystem::path& path) {
    const std::vector<unsigned char> buf = slurp(path);
    Reader r(buf, path.string());
    r.magic("FLW1", "magic");
    const uint32_t h = r.u32("height");
    const uint32_t w = r.u32("width");
    if (h == 0 || w == 0 || h > (1u << 16) || w > (1u << 16))
        throw io_error(r.error("field 'size' out of range"));
    align::FlowField f = align::zero_flow(static_cast<int>(h), static_cast<int>(w));
    r.f32_block(f.data.data(), static_cast<size_t>(h) * w, "dx plane");
    r.f32_block(f.data.data() + static_cast<size_t>(h) * w, static_cast<size_t>(h) * w,
                "dy plane");
    if (r.remaining() != 0) throw io_error(r.error("trailing bytes after dy plane"));
    return f;
}

void write_flow(const std::filesystem::path& path, const align::FlowField& f) {
    Writer w;
    w.bytes("FLW1", 4);
    w.u32(static_cast<uint32_t>(f.height()));
    w.u32(static_cast<uint32_t>(f.width()));
    w.f32_block(f.data.data(), static_cast<size_t>(f.data.numel()));
    spill(path, w.data());
}

// ---- config JSON ----

namespace {

json config_to_json_obj(const model::ModelConfig& c) {
    return json{{"n_frames", c.n_frames},
                {"enc_channels", c.enc_channels},
                {"fused_channels", c.fused_channels},
                {"n_encoders", c.n_encoders},
                {"n_decoders", c.n_decoders},
                {"window", c.window},
                {"overlap", c.overlap},
                {"heads", c.heads},
                {"alpha", c.alpha},
                {"beta", c.beta},
                {"expand", c.expand},
                {"d_state", c.d_state},
                {"s_res", c.s_res},
                {"s_bottleneck", c.s_bottleneck},
                {"upscale", c.upscale},
                {"max_flow", c.max_flow},
                {"max_offset", c.max_offset},
                {"deform_groups", c.deform_groups},
                {"pyramid_levels", c.pyramid_levels}};
}

model::ModelConfig config_from_json_obj(const json& j, const std::string& origin) {
    if (!j.is_object()) throw io_error(origin + ": field 'config' is not an object");
    model::ModelConfig c;
    auto geti = [&](const char* key, int& dst) {
        if (!j.contains(key)) throw io_error(origin + ": missing config field '" + key + "'");
        if (!j.at(key).is_number())
            throw io_error(origin + ": config field '" + key + "' is not a number");
        dst = j.at(key).get<int>();
    };
    auto getf = [&](const char* key, float& dst) {
        if (!j.contains(key)) throw io_error(origin + ": missing config field '" + key + "'");
        if (!j.at(key).is_number())
            throw io_error(origin + ": config field '" + key + "' is not a number");
        dst = j.at(key).get<float>();
    };
    geti("n_frames", c.n_frames);
    geti("enc_channels", c.enc_channels);
    geti("fused_channels", c.fused_channels);
    geti("n_encoders", c.n_encoders);
    geti("n_decoders", c.n_decoders);
    geti("window", c.window);
    getf("overlap", c.overlap);
    geti("heads", c.heads);
    getf("alpha", c.alpha);
    geti("beta", c.beta);
    geti("expand", c.expand);
    geti("d_state", c.d_state);
    getf("s_res", c.s_res);
    geti("s_bottleneck", c.s_bottleneck);
    geti("upscale", c.upscale);
    getf("max_flow", c.max_flow);
    getf("max_offset", c.max_offset);
    geti("deform_groups", c.deform_groups);
    geti("pyramid_levels", c.pyramid_levels);
    static const char* known[] = {"n_frames", "enc_channels", "fused_channels", "n_encoders",
                                  "n_decoders", "window", "overlap", "heads", "alpha", "beta",
                                  "expand", "d_state", "s_res", "s_bottleneck", "upscale",
                                  "max_flow", "max_offset", "deform_groups", "pyramid_levels"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw io_error(origin + ": unknown config field '" + it.key() + "'");
    }
    return c;
}

}  // namespace

std::string config_to_json(const model::ModelConfig& c) { return config_to_json_obj(c).dump(); }

model::ModelConfig config_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw io_error(std::string("config: ") + e.what());
    }
    return config_from_json_obj(j, "config");
}

// ---- BFCK checkpoints ----

model::Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::vector<unsigned char> buf = slurp(path);
    Reader r(buf, path.string());
    r.magic("BFCK", "magic");
    model::Checkpoint c;
    c.version = r.u32("version");
    if (c.version != 1)
        throw io_error(path.string() + ": field 'version' " + std::to_string(c.version) +
                       " unsupported (expected 1)");
    const uint64_t hlen = r.u64("header length");
    if (hlen > r.remaining())
        throw io_error(r.error("field 'header length' exceeds file size"));
    std::string header(hlen, '\0');
    r.bytes(header.data(), static_cast<size_t>(hlen), "header");

    json j;
    try {
        j = json::parse(header);
    } catch (const json::parse_error& e) {
        throw io_error(path.string() + ": header JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("config") || !j.contains("tensors"))
        throw io_error(path.string() + ": header missing field 'config' or 'tensors'");
    c.config = config_from_json_obj(j.at("config"), path.string());

    const size_t payload_start = r.pos();
    const size_t payload_len = r.remaining();
    if (!j.at("tensors").is_array())
        throw io_error(path.string() + ": field 'tensors' is not an array");
    size_t expected_end = 0;
    for (const json& e : j.at("tensors")) {
        if (!e.is_object() || !e.contains("name") || !e.contains("shape") ||
            !e.contains("offset"))
            throw io_error(path.string() + ": tensor entry missing 'name', 'shape' or 'offset'");
        const std::string name = e.at("name").get<std::string>();
        if (!e.at("shape").is_array() || e.at("shape").empty())
            throw io_error(path.string() + ": tensor '" + name + "': field 'shape' invalid");
        std::vector<int> shape;
        int64_t count = 1;
        for (const json& d : e.at("shape")) {
            if (!d.is_number_integer() || d.get<int64_t>() <= 0)
                throw io_error(path.string() + ": tensor '" + name +
                               "': field 'shape' has a nonpositive dim");
            shape.push_back(d.get<int>());
            count *= shape.back();
            if (count > (1LL << 31))
                throw io_error(path.string() + ": tensor '" + name + "': field 'shape' overflow");
        }
        if (!e.at("offset").is_number_integer() ||
            (e.at("offset").is_number_integer() && !e.at("offset").is_number_unsigned() &&
             e.at("offset").get<int64_t>() < 0))
            throw io_error(path.string() + ": tensor '" + name + "': field 'offset' invalid");
        const uint64_t offset = e.at("offset").get<uint64_t>();
        const uint64_t bytes = static_cast<uint64_t>(count) * 4;
        if (offset + bytes > payload_len)
            throw io_error(path.string() + ": tensor '" + name + "': field 'offset' " +
                           std::to_string(offset) + " exceeds payload of " +
                           std::to_string(payload_len) + " bytes");
        Tensor t(shape);
        std::memcpy(t.data(), buf.data() + payload_start + offset, bytes);
        c.tensors.emplace_back(name, std::move(t));
        expected_end = std::max(expected_end, static_cast<size_t>(offset + bytes));
    }
    if (expected_end != payload_len)
        throw io_error(path.string() + ": payload has " + std::to_string(payload_len) +
                       " bytes but the directory covers " + std::to_string(expected_end));
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const model::Checkpoint& c) {
    json dir = json::array();
    uint64_t offset = 0;
    for (const auto& [name, tensor] : c.tensors) {
        json shape = json::array();
        for (int i = 0; i < tensor.rank(); ++i) shape.push_back(tensor.dim(i));
        dir.push_back(json{{"name", name}, {"shape", shape}, {"offset", offset}});
        offset += static_cast<uint64_t>(tensor.numel()) * 4;
    }
    const std::string header =
        json{{"config", config_to_json_obj(c.config)}, {"tensors", dir}}.dump();

    Writer w;
    w.bytes("BFCK", 4);
    w.u32(c.version);
    w.u64(header.size());
    w.bytes(header.data(), header.size());
    for (const auto& [name, tensor] : c.tensors)
        w.f32_block(tensor.data(), static_cast<size_t>(tensor.numel()));
    spill(path, w.data());
}

// ---- burst containers ----

namespace {

std::string frame_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%03d.bft", i);
    return buf;
}

}  // namespace

void write_burst(const std::filesystem::path& dir, const sim::BurstStack& burst) {
    std::filesystem::create_directories(dir);
    json transforms = json::array();
    json frames = json::array();
    for (int i = 0; i < burst.frame_count(); ++i) {
        const sim::FrameTransform& t = burst.transforms.at(static_cast<size_t>(i));
        transforms.push_back(json::array({t.dx, t.dy, t.rot_deg}));
        frames.push_back(frame_name(i));
        write_tensor(dir / frame_name(i), burst.frames[static_cast<size_t>(i)]);
    }
    const json manifest{{"format", "burstforge-burst-v1"},
                        {"spec",
                         {{"n_frames", burst.spec.n_frames},
                          {"max_shift_px", burst.spec.max_shift_px},
                          {"max_rot_deg", burst.spec.max_rot_deg},
                          {"downscale", burst.spec.downscale},
                          {"read_noise", burst.spec.read_noise},
                          {"shot_noise", burst.spec.shot_noise},
                          {"seed", burst.spec.seed}}},
                        {"transforms", transforms},
                        {"frames", frames}};
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) throw io_error((dir / "manifest.json").string() + ": cannot open for writing");
    f << manifest.dump(2) << "\n";
}

sim::BurstStack read_burst(const std::filesystem::path& dir) {
    const std::filesystem::path mpath = dir / "manifest.json";
    std::vector<unsigned char> buf = slurp(mpath);
    json j;
    try {
        j = json::parse(buf.begin(), buf.end());
    } catch (const json::parse_error& e) {
        throw io_error(mpath.string() + ": " + e.what());
    }
    auto field = [&](const char* key) -> const json& {
        if (!j.contains(key))
            throw io_error(mpath.string() + ": missing field '" + std::string(key) + "'");
        return j.at(key);
    };
    if (field("format").get<std::string>() != "burstforge-burst-v1")
        throw io_error(mpath.string() + ": field 'format' is not burstforge-burst-v1");

    sim::BurstStack burst;
    const json& spec = field("spec");
    auto sfield = [&](const char* key) -> const json& {
        if (!spec.contains(key))
            throw io_error(mpath.string() + ": missing field 'spec." + std::string(key) + "'");
        return spec.at(key);
    };
    burst.spec.n_frames = sfield("n_frames").get<int>();
    burst.spec.max_shift_px = sfield("max_shift_px").get<float>();
    burst.spec.max_rot_deg = sfield("max_rot_deg").get<float>();
    burst.spec.downscale = sfield("downscale").get<int>();
    burst.spec.read_noise = sfield("read_noise").get<float>();
    burst.spec.shot_noise = sfield("shot_noise").get<float>();
    burst.spec.seed = sfield("seed").get<uint64_t>();

    const json& transforms = field("transforms");
    const json& frames = field("frames");
    if (!transforms.is_array() || !frames.is_array() || transforms.size() != frames.size())
        throw io_error(mpath.string() + ": fields 'transforms' and 'frames' must be equal-size arrays");
    if (frames.empty()) throw io_error(mpath.string() + ": field 'frames' is empty");

    for (const json& t : transforms) {
        if (!t.is_array() || t.size() != 3)
            throw io_error(mpath.string() + ": field 'transforms' entry is not [dx,dy,rot]");
        burst.transforms.push_back(
            sim::FrameTransform{t[0].get<float>(), t[1].get<float>(), t[2].get<float>()});
    }
    for (const json& name : frames) {
        const std::filesystem::path fpath = dir / name.get<std::string>();
        if (!std::filesystem::exists(fpath))
            throw io_error(mpath.string() + ": frame file '" + name.get<std::string>() +
                           "' is missing");
        Tensor t = read_tensor(fpath);
        if (t.rank() != 3 || t.dim(0) != 4)
            throw io_error(fpath.string() + ": frame is not packed RGGB [4,h,w]: " +
                           t.shape_str());
        if (!burst.frames.empty() && !t.same_shape(burst.frames.front()))
            throw io_error(fpath.string() + ": frame shape differs from frame_000");
        burst.frames.push_back(std::move(t));
    }
    return burst;
}

}  // namespace burstforge::io
