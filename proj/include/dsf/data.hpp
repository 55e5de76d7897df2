#pragma once

#include "dsf/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace dsf {

/// Aligned infrared / visible pair, values in [0, 1], optional labels.
struct ImagePair {
  std::string id;
  Raster infrared;
  std::array<Raster, 3> visible;  // R, G, B
  std::optional<LabelRaster> label;

  [[nodiscard]] int height() const { return static_cast<int>(infrared.rows()); }
  [[nodiscard]] int width() const { return static_cast<int>(infrared.cols()); }

  /// Throws if shapes disagree or values leave their ranges.
  void validate(int num_classes = 256) const;
};

struct PairRef {
  std::string id;
  std::filesystem::path infrared;
  std::filesystem::path visible;
  std::optional<std::filesystem::path> label;
};

enum class Split { train, test };

/// Matches dir/ir/<id>.png with dir/vi/<id>.png (and dir/labels/<id>.png).
std::vector<PairRef> scan_dataset(const std::filesystem::path& dir);

/// Scans root/{train,test}.
std::vector<PairRef> scan_dataset(const std::filesystem::path& root, Split split);

ImagePair load_pair(const PairRef& ref);

// ---------------------------------------------------------------------------
// 8-bit PNG I/O

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

/// Decodes to 8 bits per sample. With `raw_indices`, palette images keep
/// their indices instead of expanding to RGB (used for label maps).
Image8 read_png(const std::filesystem::path& path, bool raw_indices = false);
void write_png(const std::filesystem::path& path, const Image8& image);

Raster to_unit_raster(const Image8& image, int channel);
Image8 to_image8(const Raster& gray);
Image8 to_image8(const std::array<Raster, 3>& rgb);
Image8 to_image8(const LabelRaster& labels);

void save_pair(const ImagePair& pair, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Cropping

enum class EdgePolicy { clamp_last };

struct PatchGridSpec {
  int patch_size = 256;
  int stride = 100;
  EdgePolicy edge_policy = EdgePolicy::clamp_last;
};

/// {0, stride, 2*stride, ...} up to extent - patch, plus extent - patch.
std::vector<int> patch_starts(int extent, const PatchGridSpec& spec);

std::vector<ImagePair> crop_patches(const ImagePair& pair, const PatchGridSpec& spec);

// ---------------------------------------------------------------------------
// Colour handling (BT.601 full range)

struct LumaChroma {
  Raster y, cb, cr;
};

LumaChroma to_luma_chroma(const std::array<Raster, 3>& rgb);
std::array<Raster, 3> recombine(const Raster& y, const Raster& cb, const Raster& cr);

/// Reflect-pads bottom/right so both dims are multiples of `multiple`.
Raster pad_reflect(const Raster& image, int multiple);
LabelRaster pad_reflect(const LabelRaster& image, int multiple);

// ---------------------------------------------------------------------------
// Training samples: infrared, visible luminance, labels

struct TrainingSample {
  std::string id;
  Raster infrared;
  Raster visible_luma;
  LabelRaster label;
};

/// Requires a label; converts the visible image to luminance.
TrainingSample to_sample(const ImagePair& pair);

/// Loads, validates and crops every referenced pair into labelled patches.
std::vector<TrainingSample> prepare_samples(const std::vector<PairRef>& refs, const PatchGridSpec& grid,
                                            int num_classes);

struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Seeded shuffle; round(fraction * n) items (at least one when n >= 2 and
/// fraction > 0) go to validation. Both lists come back sorted.
HoldoutSplit holdout_split(std::size_t n, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic two-class shapes data (discs and squares on textured background)

struct ShapesOptions {
  int size = 32;
  int min_shapes = 1;
  int max_shapes = 3;
};

ImagePair make_shapes_pair(const std::string& id, std::mt19937_64& rng, const ShapesOptions& options = {});

/// Writes `count` pairs into dir/{ir,vi,labels}/<id>.png.
void write_shapes_dataset(const std::filesystem::path& dir, int count, std::uint64_t seed,
                          const ShapesOptions& options = {});

}  // namespace dsf
