#include "serialreg/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>

namespace serialreg {

RgbImage make_rgb(int width, int height, float r, float g, float b) {
  if (width < 0 || height < 0) throw Error("image dimensions must be non-negative");
  RgbImage img;
  img.width = width;
  img.height = height;
  img.data.resize(3 * static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < img.data.size(); i += 3) {
    img.data[i] = r;
    img.data[i + 1] = g;
    img.data[i + 2] = b;
  }
  return img;
}

RgbImage to_rgb(const ImageGrid &gray) {
  RgbImage img = make_rgb(gray.width, gray.height);
  for (std::size_t i = 0; i < gray.data.size(); ++i) {
    img.data[3 * i] = img.data[3 * i + 1] = img.data[3 * i + 2] = gray.data[i];
  }
  return img;
}

RgbImage load_rgb(const std::string &path) {
  cv::Mat mat = cv::imread(path, cv::IMREAD_COLOR);
  if (mat.empty()) {
    throw DecodeError("cannot decode image: " + path);
  }
  RgbImage img = make_rgb(mat.cols, mat.rows);
  for (int y = 0; y < mat.rows; ++y) {
    const cv::Vec3b *row = mat.ptr<cv::Vec3b>(y); // BGR
    for (int x = 0; x < mat.cols; ++x) {
      img.set_pixel(x, y, row[x][2] / 255.0f, row[x][1] / 255.0f,
                    row[x][0] / 255.0f);
    }
  }
  return img;
}

namespace {

unsigned char to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(c * 255.0f + 0.5f);
}

} // namespace

void save_rgb_png(const RgbImage &img, const std::string &path) {
  cv::Mat mat(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    cv::Vec3b *row = mat.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      const auto p = img.pixel(x, y);
      row[x] = cv::Vec3b(to_byte(p[2]), to_byte(p[1]), to_byte(p[0]));
    }
  }
  try {
    if (!cv::imwrite(path, mat)) throw WriteError("cannot write image: " + path);
  } catch (const cv::Exception &e) {
    throw WriteError("cannot write image " + path + ": " + e.what());
  }
}

void save_gray_png(const ImageGrid &img, const std::string &path) {
  cv::Mat mat(img.height, img.width, CV_8UC1);
  for (int y = 0; y < img.height; ++y) {
    unsigned char *row = mat.ptr<unsigned char>(y);
    for (int x = 0; x < img.width; ++x) row[x] = to_byte(img.at(x, y));
  }
  try {
    if (!cv::imwrite(path, mat)) throw WriteError("cannot write image: " + path);
  } catch (const cv::Exception &e) {
    throw WriteError("cannot write image " + path + ": " + e.what());
  }
}

bool sniff_raster_magic(const std::string &path) {
  std::FILE *f = std::fopen(path.c_str(), "rb");
  if (!f) return false;
  unsigned char head[8] = {0};
  const std::size_t n = std::fread(head, 1, sizeof(head), f);
  std::fclose(f);
  if (n < 4) return false;
  if (head[0] == 0x89 && head[1] == 'P' && head[2] == 'N' && head[3] == 'G')
    return true; // PNG
  if (head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF) return true; // JPEG
  if ((head[0] == 'I' && head[1] == 'I' && head[2] == 42 && head[3] == 0) ||
      (head[0] == 'M' && head[1] == 'M' && head[2] == 0 && head[3] == 42))
    return true; // TIFF
  if (head[0] == 'B' && head[1] == 'M') return true; // BMP
  return false;
}

} // namespace serialreg
