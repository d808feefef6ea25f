#pragma once

#include "frepa/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace frepa {

// ---------------------------------------------------------------------------
// FRPT container: "FRPT", u8 rank, rank x u32 LE dims, f32 LE row-major data.

std::vector<std::uint8_t> encode_frpt(const Tensor& tensor);
Tensor decode_frpt(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// PNG ingestion. 8- and 16-bit gray/RGB (alpha dropped, palettes expanded);
// values are scaled to [0, 1] by the bit depth's full scale.

Tensor read_png(const std::filesystem::path& path);
/// Writes a [1|3, H, W] tensor with values clipped to [0, 1].
void write_png(const std::filesystem::path& path, const Tensor& image, int bit_depth = 8);

// ---------------------------------------------------------------------------
// Intensity normalization

struct WindowSpec {
  double low;
  double high;
  std::string name;
};

/// Named CT windows: lung, abdomen, brain, bone.
std::optional<WindowSpec> ct_window(const std::string& name);

/// clip((v - low) / (high - low), 0, 1)
Tensor normalize_ct(const Tensor& volume, const WindowSpec& window);

/// Percentile with linear interpolation between order statistics, q in [0, 100].
double percentile(std::vector<double> values, double q);

/// Clip to the [0.5, 99.5] percentile range, then rescale to [0, 1].
Tensor normalize_percentile(const Tensor& image);

// ---------------------------------------------------------------------------
// Geometry

/// Aspect-preserving Catmull-Rom resize so the longer side equals `target`,
/// symmetric zero pad to target x target, gray replicated to three channels.
Tensor resize_pad(const Tensor& image, Index target = 512);

/// Catmull-Rom resample of every channel to (height, width), replicate edges.
Tensor resize_bicubic(const Tensor& image, Index height, Index width);

// ---------------------------------------------------------------------------
// Dataset manifest

struct ManifestEntry {
  std::filesystem::path path;  ///< resolved against the manifest directory
  std::string modality;
  std::string window;  ///< CT window name, "percentile", or "none"
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries);

/// Loads one entry (PNG or FRPT) and applies its normalization rule.
Tensor load_entry(const ManifestEntry& entry);

}  // namespace frepa
