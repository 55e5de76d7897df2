#include "dsf/data.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace dsf {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors via longjmp; only trivially destructible state may
// live between setjmp and the libpng calls.
bool decode(std::FILE* file, bool raw_indices, Image8& out, char* message, std::size_t message_size) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) {
    std::snprintf(message, message_size, "png_create_read_struct failed");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    std::snprintf(message, message_size, "png_create_info_struct failed");
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::snprintf(message, message_size, "corrupt or unsupported PNG data");
    return false;
  }
  png_init_io(png, file);
  int transforms = PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_PACKING | PNG_TRANSFORM_STRIP_ALPHA;
  if (!raw_indices) transforms |= PNG_TRANSFORM_EXPAND;
  png_read_png(png, info, transforms, nullptr);

  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int channels = png_get_channels(png, info);
  const auto rowbytes = png_get_rowbytes(png, info);
  png_bytepp rows = png_get_rows(png, info);
  out.width = static_cast<int>(width);
  out.height = static_cast<int>(height);
  out.channels = channels;
  out.pixels.resize(static_cast<std::size_t>(width) * height * static_cast<std::size_t>(channels));
  const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  if (rowbytes < stride) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::snprintf(message, message_size, "unexpected PNG row layout");
    return false;
  }
  for (png_uint_32 y = 0; y < height; ++y) {
    std::copy(rows[y], rows[y] + stride, out.pixels.begin() + static_cast<std::ptrdiff_t>(y * stride));
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

}  // namespace

Image8 read_png(const std::filesystem::path& path, bool raw_indices) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw std::runtime_error("cannot open " + path.string());
  png_byte signature[8];
  if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
    throw std::runtime_error(path.string() + " is not a PNG file");
  }
  std::rewind(file.get());
  Image8 image;
  char message[128] = {0};
  if (!decode(file.get(), raw_indices, image, message, sizeof(message))) {
    throw std::runtime_error(path.string() + ": " + message);
  }
  return image;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("write_png supports 1 or 3 channels");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw std::invalid_argument("write_png: pixel buffer does not match dimensions");
  }
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.width);
  desc.height = static_cast<png_uint_32>(image.height);
  desc.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (png_image_write_to_file(&desc, path.c_str(), 0, image.pixels.data(), 0, nullptr) == 0) {
    const std::string why = desc.message;
    png_image_free(&desc);
    throw std::runtime_error("cannot write " + path.string() + ": " + why);
  }
}

}  // namespace dsf
