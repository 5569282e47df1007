#include "hmflow/image.hpp"

#include <png.h>

namespace hmflow {

Image read_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw IoError("read_png: cannot open '" + path + "': " + png.message);
  png.format = PNG_FORMAT_RGB;
  Image img(static_cast<int>(png.width), static_cast<int>(png.height), 3);
  if (!png_image_finish_read(&png, nullptr, img.data.data(), 0, nullptr)) {
    png_image_free(&png);
    throw IoError("read_png: decode failed for '" + path + "': " + png.message);
  }
  return img;
}

void write_png(const Image& img, const std::string& path) {
  if (img.width <= 0 || img.height <= 0 ||
      (img.channels != 1 && img.channels != 3))
    throw ShapeError("write_png: empty or malformed image");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.data.data(), 0,
                               nullptr))
    throw IoError("write_png: cannot write '" + path + "': " + png.message);
}

}  // namespace hmflow
