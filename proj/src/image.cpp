#include "rulelab/image.hpp"

#include <png.h>

#include "rulelab/error.hpp"

namespace rulelab {

RasterImage::RasterImage(int w, int h, Rgb8 fill) : width(w), height(h) {
  rgb.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill.r;
    rgb[i + 1] = fill.g;
    rgb[i + 2] = fill.b;
  }
}

void write_png(const std::filesystem::path& path, const RasterImage& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.rgb.data(), 0, nullptr))
    throw Error("PNG write failed for " + path.string() + ": " + img.message);
}

RasterImage read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw Error("unreadable PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  RasterImage out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  png_color white{255, 255, 255};
  if (!png_image_finish_read(&img, &white, out.rgb.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw Error("unreadable PNG " + path.string() + ": " + msg);
  }
  return out;
}

RasterImage upscale_nearest(const RasterImage& image, int factor) {
  if (factor < 1) throw ConfigError("upscale factor must be >= 1");
  if (factor == 1) return image;
  RasterImage out(image.width * factor, image.height * factor);
  for (int i = 0; i < out.height; ++i)
    for (int j = 0; j < out.width; ++j) out.set(i, j, image.at(i / factor, j / factor));
  return out;
}

}  // namespace rulelab
