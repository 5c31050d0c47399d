#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "burstforge/alignment.hpp"
#include "burstforge/model.hpp"
#include "burstforge/simulator.hpp"
#include "burstforge/tensor.hpp"

// Bit-exact readers and writers for images (binary PGM/PPM), raw tensors
// (BFT1), flow fields (FLW1), checkpoints (BFCK) and burst containers.
// Every parse failure throws io_error naming the offending byte position or
// field; no reader consumes past the declared payload.
namespace burstforge::io {

// Integer-sample image: 1 (gray) or 3 (RGB) channels, samples interleaved
// row-major, max_value in [1,65535].
struct ImageFile {
    int width = 0;
    int height = 0;
    int channels = 1;
    int max_value = 255;
    std::vector<uint16_t> samples;
};

ImageFile read_image_file(const std::filesystem::path& path);
void write_image_file(const std::filesystem::path& path, const ImageFile& img);

// Image as a [C,H,W] tensor in [0,1] (samples divided by max_value).
Tensor read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Tensor& t, int max_value = 255);

Tensor to_tensor(const ImageFile& img);
ImageFile to_image_file(const Tensor& t, int max_value = 255);

// BFT1: magic, u32 rank, u32 dims, little-endian f32 payload.
Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const Tensor& t);

// FLW1: magic, u32 H, u32 W, dx plane, dy plane.
align::FlowField read_flow(const std::filesystem::path& path);
void write_flow(const std::filesystem::path& path, const align::FlowField& f);

// BFCK: magic, u32 version, u64 header length, JSON header (config echo +
// tensor directory), raw little-endian f32 payloads.
model::Checkpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const std::filesystem::path& path, const model::Checkpoint& c);

// Burst container: directory with manifest.json plus one BFT1 per frame.
sim::BurstStack read_burst(const std::filesystem::path& dir);
void write_burst(const std::filesystem::path& dir, const sim::BurstStack& burst);

// Strict JSON <-> config used by the checkpoint header and the CLI run
// config; unknown keys are rejected.
std::string config_to_json(const model::ModelConfig& c);
model::ModelConfig config_from_json(const std::string& json_text);

}  // namespace burstforge::io
