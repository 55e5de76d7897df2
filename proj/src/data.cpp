#include "dsf/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace dsf {

namespace fs = std::filesystem;

namespace {

std::string shape_of(const Image8& img) {
  return std::to_string(img.height) + "x" + std::to_string(img.width) + "x" + std::to_string(img.channels);
}

std::map<std::string, fs::path> list_pngs(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().extension() != ".png") continue;
    out.emplace(entry.path().stem().string(), entry.path());
  }
  return out;
}

float clamp_unit(float v) { return std::clamp(v, 0.0F, 1.0F); }

std::uint8_t quantize(float v) { return static_cast<std::uint8_t>(std::lround(clamp_unit(v) * 255.0F)); }

}  // namespace

void ImagePair::validate(int num_classes) const {
  const auto h = infrared.rows();
  const auto w = infrared.cols();
  auto shape = [](Eigen::Index r, Eigen::Index c) { return std::to_string(r) + "x" + std::to_string(c); };
  for (const auto& ch : visible) {
    if (ch.rows() != h || ch.cols() != w) {
      throw std::invalid_argument(id + ": infrared " + shape(h, w) + " vs visible " + shape(ch.rows(), ch.cols()));
    }
    if ((ch < 0.0F).any() || (ch > 1.0F).any()) throw std::invalid_argument(id + ": visible values outside [0,1]");
  }
  if ((infrared < 0.0F).any() || (infrared > 1.0F).any()) {
    throw std::invalid_argument(id + ": infrared values outside [0,1]");
  }
  if (label) {
    if (label->rows() != h || label->cols() != w) {
      throw std::invalid_argument(id + ": infrared " + shape(h, w) + " vs label " +
                                  shape(label->rows(), label->cols()));
    }
    for (Eigen::Index i = 0; i < label->size(); ++i) {
      const auto v = label->data()[i];
      if (v != kIgnoreLabel && v >= num_classes) {
        throw std::invalid_argument(id + ": label value " + std::to_string(v) + " outside " +
                                    std::to_string(num_classes) + " classes");
      }
    }
  }
}

std::vector<PairRef> scan_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory " + dir.string() + " does not exist");
  const auto ir = list_pngs(dir / "ir");
  const auto vi = list_pngs(dir / "vi");
  const auto labels = list_pngs(dir / "labels");
  if (ir.empty() && vi.empty()) throw std::runtime_error("dataset directory " + dir.string() + " has no images");
  for (const auto& [id, _] : ir) {
    if (!vi.contains(id)) throw std::runtime_error("missing visible for " + id);
  }
  for (const auto& [id, _] : vi) {
    if (!ir.contains(id)) throw std::runtime_error("missing infrared for " + id);
  }
  for (const auto& [id, _] : labels) {
    if (!ir.contains(id)) throw std::runtime_error("missing infrared for label " + id);
  }
  std::vector<PairRef> refs;
  for (const auto& [id, path] : ir) {  // std::map iterates in lexicographic id order
    PairRef ref{id, path, vi.at(id), std::nullopt};
    if (auto it = labels.find(id); it != labels.end()) ref.label = it->second;
    refs.push_back(std::move(ref));
  }
  return refs;
}

std::vector<PairRef> scan_dataset(const fs::path& root, Split split) {
  return scan_dataset(root / (split == Split::train ? "train" : "test"));
}

Raster to_unit_raster(const Image8& image, int channel) {
  Raster r(image.height, image.width);
  const auto n = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < n; ++i) {
    r.data()[i] = static_cast<float>(image.pixels[i * static_cast<std::size_t>(image.channels) +
                                                  static_cast<std::size_t>(channel)]) /
                  255.0F;
  }
  return r;
}

ImagePair load_pair(const PairRef& ref) {
  const Image8 ir = read_png(ref.infrared);
  const Image8 vi = read_png(ref.visible);
  if (ir.height != vi.height || ir.width != vi.width) {
    throw std::runtime_error(ref.id + ": infrared " + shape_of(ir) + " vs visible " + shape_of(vi));
  }
  ImagePair pair;
  pair.id = ref.id;
  // Infrared saved as 3-channel grayscale: channel 0 is used.
  pair.infrared = to_unit_raster(ir, 0);
  for (int c = 0; c < 3; ++c) pair.visible[static_cast<std::size_t>(c)] = to_unit_raster(vi, vi.channels >= 3 ? c : 0);
  if (ref.label) {
    const Image8 lab = read_png(*ref.label, true);
    if (lab.height != ir.height || lab.width != ir.width) {
      throw std::runtime_error(ref.id + ": infrared " + shape_of(ir) + " vs label " + shape_of(lab));
    }
    LabelRaster l(lab.height, lab.width);
    for (Eigen::Index i = 0; i < l.size(); ++i) {
      l.data()[i] = lab.pixels[static_cast<std::size_t>(i) * static_cast<std::size_t>(lab.channels)];
    }
    pair.label = std::move(l);
  }
  return pair;
}

Image8 to_image8(const Raster& gray) {
  Image8 img{static_cast<int>(gray.cols()), static_cast<int>(gray.rows()), 1, {}};
  img.pixels.resize(static_cast<std::size_t>(gray.size()));
  for (Eigen::Index i = 0; i < gray.size(); ++i) img.pixels[static_cast<std::size_t>(i)] = quantize(gray.data()[i]);
  return img;
}

Image8 to_image8(const std::array<Raster, 3>& rgb) {
  Image8 img{static_cast<int>(rgb[0].cols()), static_cast<int>(rgb[0].rows()), 3, {}};
  img.pixels.resize(static_cast<std::size_t>(rgb[0].size()) * 3);
  for (Eigen::Index i = 0; i < rgb[0].size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) img.pixels[static_cast<std::size_t>(i) * 3 + c] = quantize(rgb[c].data()[i]);
  }
  return img;
}

Image8 to_image8(const LabelRaster& labels) {
  Image8 img{static_cast<int>(labels.cols()), static_cast<int>(labels.rows()), 1, {}};
  img.pixels.assign(labels.data(), labels.data() + labels.size());
  return img;
}

void save_pair(const ImagePair& pair, const fs::path& dir) {
  fs::create_directories(dir / "ir");
  fs::create_directories(dir / "vi");
  write_png(dir / "ir" / (pair.id + ".png"), to_image8(pair.infrared));
  write_png(dir / "vi" / (pair.id + ".png"), to_image8(pair.visible));
  if (pair.label) {
    fs::create_directories(dir / "labels");
    write_png(dir / "labels" / (pair.id + ".png"), to_image8(*pair.label));
  }
}

std::vector<int> patch_starts(int extent, const PatchGridSpec& spec) {
  if (spec.stride <= 0 || spec.stride > spec.patch_size) {
    throw std::invalid_argument("patch grid needs 0 < stride <= patch_size");
  }
  if (extent < spec.patch_size) {
    throw std::invalid_argument("image extent " + std::to_string(extent) + " smaller than patch size " +
                                std::to_string(spec.patch_size));
  }
  std::vector<int> starts;
  const int last = extent - spec.patch_size;
  for (int s = 0; s <= last; s += spec.stride) starts.push_back(s);
  if (starts.back() != last) starts.push_back(last);
  return starts;
}

std::vector<ImagePair> crop_patches(const ImagePair& pair, const PatchGridSpec& spec) {
  const auto rows = patch_starts(pair.height(), spec);
  const auto cols = patch_starts(pair.width(), spec);
  const int p = spec.patch_size;
  std::vector<ImagePair> out;
  out.reserve(rows.size() * cols.size());
  for (const int r : rows) {
    for (const int c : cols) {
      ImagePair patch;
      patch.id = pair.id + "_r" + std::to_string(r) + "_c" + std::to_string(c);
      patch.infrared = pair.infrared.block(r, c, p, p);
      for (std::size_t k = 0; k < 3; ++k) patch.visible[k] = pair.visible[k].block(r, c, p, p);
      if (pair.label) patch.label = LabelRaster(pair.label->block(r, c, p, p));
      out.push_back(std::move(patch));
    }
  }
  return out;
}

LumaChroma to_luma_chroma(const std::array<Raster, 3>& rgb) {
  const auto& r = rgb[0];
  const auto& g = rgb[1];
  const auto& b = rgb[2];
  LumaChroma out;
  out.y = 0.299F * r + 0.587F * g + 0.114F * b;
  out.cb = -0.168736F * r - 0.331264F * g + 0.5F * b + 0.5F;
  out.cr = 0.5F * r - 0.418688F * g - 0.081312F * b + 0.5F;
  return out;
}

std::array<Raster, 3> recombine(const Raster& y, const Raster& cb, const Raster& cr) {
  const Raster u = cb - 0.5F;
  const Raster v = cr - 0.5F;
  return {(y + 1.402F * v).cwiseMax(0.0F).cwiseMin(1.0F),
          (y - 0.344136F * u - 0.714136F * v).cwiseMax(0.0F).cwiseMin(1.0F),
          (y + 1.772F * u).cwiseMax(0.0F).cwiseMin(1.0F)};
}

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

template <typename R>
R pad_reflect_impl(const R& image, int multiple) {
  const auto h = static_cast<int>(image.rows());
  const auto w = static_cast<int>(image.cols());
  const int ph = (h + multiple - 1) / multiple * multiple;
  const int pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return image;
  R out(ph, pw);
  for (int y = 0; y < ph; ++y) {
    for (int x = 0; x < pw; ++x) out(y, x) = image(reflect_index(y, h), reflect_index(x, w));
  }
  return out;
}

}  // namespace

Raster pad_reflect(const Raster& image, int multiple) { return pad_reflect_impl(image, multiple); }
LabelRaster pad_reflect(const LabelRaster& image, int multiple) { return pad_reflect_impl(image, multiple); }

TrainingSample to_sample(const ImagePair& pair) {
  if (!pair.label) throw std::runtime_error(pair.id + ": training sample has no label");
  return {pair.id, pair.infrared, to_luma_chroma(pair.visible).y, *pair.label};
}

std::vector<TrainingSample> prepare_samples(const std::vector<PairRef>& refs, const PatchGridSpec& grid,
                                            int num_classes) {
  std::vector<TrainingSample> out;
  for (const auto& ref : refs) {
    if (!ref.label) throw std::runtime_error("missing labels for " + ref.id);
    const ImagePair pair = load_pair(ref);
    pair.validate(num_classes);
    for (const auto& patch : crop_patches(pair, grid)) out.push_back(to_sample(patch));
  }
  return out;
}

HoldoutSplit holdout_split(std::size_t n, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto held = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && n >= 2) held = std::max<std::size_t>(held, 1);
  held = std::min(held, n == 0 ? 0 : n - 1);
  HoldoutSplit split;
  split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

ImagePair make_shapes_pair(const std::string& id, std::mt19937_64& rng, const ShapesOptions& options) {
  const int s = options.size;
  std::uniform_real_distribution<float> unit(0.0F, 1.0F);
  std::normal_distribution<float> noise(0.0F, 1.0F);
  std::uniform_int_distribution<int> count_dist(options.min_shapes, options.max_shapes);

  ImagePair pair;
  pair.id = id;
  LabelRaster label = LabelRaster::Zero(s, s);
  Raster ir(s, s);
  std::array<Raster, 3> vi{Raster(s, s), Raster(s, s), Raster(s, s)};

  // Cool, smooth infrared background; textured, lit visible background.
  const float tilt = 0.1F * unit(rng);
  const float phase = 6.2831853F * unit(rng);
  const float freq = 0.6F + 0.6F * unit(rng);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const float fy = static_cast<float>(y) / static_cast<float>(s);
      ir(y, x) = 0.15F + tilt * fy + 0.01F * noise(rng);
      const float texture = 0.08F * std::sin(freq * static_cast<float>(x + y) + phase);
      const float light = 0.35F + 0.25F * (1.0F - fy);
      vi[0](y, x) = light + texture;
      vi[1](y, x) = light + 0.05F + texture;
      vi[2](y, x) = light + 0.12F + texture;
    }
  }

  const int shapes = count_dist(rng);
  for (int k = 0; k < shapes; ++k) {
    const bool disc = unit(rng) < 0.5F;
    const float radius = static_cast<float>(s) * (0.12F + 0.12F * unit(rng));
    const float cy = radius + (static_cast<float>(s) - 2 * radius) * unit(rng);
    const float cx = radius + (static_cast<float>(s) - 2 * radius) * unit(rng);
    const float heat = disc ? 0.8F + 0.15F * unit(rng) : 0.5F + 0.1F * unit(rng);
    const std::array<float, 3> colour{0.2F + 0.6F * unit(rng), 0.2F + 0.6F * unit(rng), 0.2F + 0.6F * unit(rng)};
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const float dy = static_cast<float>(y) + 0.5F - cy;
        const float dx = static_cast<float>(x) + 0.5F - cx;
        const bool inside = disc ? dx * dx + dy * dy <= radius * radius
                                 : std::abs(dx) <= radius * 0.85F && std::abs(dy) <= radius * 0.85F;
        if (!inside) continue;
        label(y, x) = 1;
        ir(y, x) = heat + 0.01F * noise(rng);
        // Discs are dim in the visible band; squares carry a checker texture.
        const float checker = ((x / 2 + y / 2) % 2 == 0) ? 0.1F : -0.1F;
        for (std::size_t c = 0; c < 3; ++c) {
          vi[c](y, x) = disc ? 0.5F * vi[c](y, x) : colour[c] + checker;
        }
      }
    }
  }
  pair.infrared = ir.cwiseMax(0.0F).cwiseMin(1.0F);
  for (auto& ch : vi) ch = ch.cwiseMax(0.0F).cwiseMin(1.0F);
  pair.visible = std::move(vi);
  pair.label = std::move(label);
  return pair;
}

void write_shapes_dataset(const fs::path& dir, int count, std::uint64_t seed, const ShapesOptions& options) {
  std::mt19937_64 rng(seed);
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "shape%05d", i);
    save_pair(make_shapes_pair(id, rng, options), dir);
  }
}

}  // namespace dsf
