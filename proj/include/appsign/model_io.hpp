#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "appsign/dataset.hpp"
#include "appsign/network.hpp"

namespace appsign {

// Model persistence: a JSON manifest describing the architecture and the
// tensor layout, plus a sibling .bin blob of raw little-endian float32
// values. Offsets in the manifest partition the blob exactly and a
// save -> load -> save round trip is byte-identical.
void save_model(const NetworkSpec& net, const std::string& manifest_path);
NetworkSpec load_model(const std::string& manifest_path);

std::string model_blob_path(const std::string& manifest_path);

// P6 binary pixmap, maxval 255 only. Produces 3xHxW with values in [0,1].
Tensor decode_ppm(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_ppm(const Tensor& img);

// Channel-wise bilinear interpolation with half-pixel-center mapping.
Tensor resize_bilinear(const Tensor& img, int out_h, int out_w);

// Text manifest, one "relative/path.ppm,label" per line. Images are
// decoded, resized to target, and kept in manifest order.
Dataset load_dataset(const std::string& manifest_path, int target_h,
                     int target_w);

// Seeded parametric glyphs (shape x color per class) with jittered
// position/scale and additive noise. Deterministic for fixed arguments.
Dataset gen_synthetic_dataset(int classes, int per_class, int size,
                              std::uint64_t seed);

// Write-to-temp-then-rename; the destination appears only complete.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::vector<unsigned char> read_file_bytes(const std::string& path);

}  // namespace appsign
