#include "pv/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "pv/errors.hpp"

namespace pv {
namespace {

Image from_mat(const cv::Mat& src, const std::string& what) {
  if (src.empty()) throw IngestionError("cannot decode image " + what);
  cv::Mat rgb;
  switch (src.channels()) {
    case 1: cv::cvtColor(src, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(src, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(src, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw IngestionError("unsupported channel count in " + what);
  }
  // Divide rather than multiply by a reciprocal so 8-bit values land exactly
  // on the grid quantize8 produces.
  double scale = 1.0;
  switch (rgb.depth()) {
    case CV_8U: scale = 255.0; break;
    case CV_16U: scale = 65535.0; break;
    case CV_32F:
    case CV_64F: scale = 1.0; break;
    default: throw IngestionError("unsupported pixel depth in " + what);
  }
  cv::Mat f;
  rgb.convertTo(f, CV_64FC3);
  Image out(f.rows, f.cols, 3);
  for (int y = 0; y < f.rows; ++y) {
    const auto* row = f.ptr<cv::Vec3d>(y);
    for (int x = 0; x < f.cols; ++x)
      for (int k = 0; k < 3; ++k) out.at(y, x, k) = std::clamp(row[x][k] / scale, 0.0, 1.0);
  }
  return out;
}

cv::Mat to_mat8(const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw ShapeError("PNG export needs 1 or 3 channels");
  cv::Mat m(image.height, image.width, image.channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < image.width; ++x)
      for (int k = 0; k < image.channels; ++k) {
        // OpenCV stores BGR.
        const int dst = image.channels == 3 ? 2 - k : 0;
        const double v = std::clamp(image.at(y, x, k), 0.0, 1.0);
        row[x * image.channels + dst] = static_cast<unsigned char>(std::lround(255.0 * v));
      }
  }
  return m;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IngestionError("image file '" + path.string() + "' not found");
  return from_mat(cv::imread(path.string(), cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH), "'" + path.string() + "'");
}

Image decode_image(const std::string& bytes) {
  std::vector<unsigned char> buf(bytes.begin(), bytes.end());
  return from_mat(cv::imdecode(buf, cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH), "from memory");
}

std::string encode_png(const Image& image) {
  std::vector<unsigned char> buf;
  if (!cv::imencode(".png", to_mat8(image), buf)) throw Error(ErrorKind::runtime, "PNG encoding failed");
  return {buf.begin(), buf.end()};
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const std::string bytes = encode_png(image);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::runtime, "cannot write '" + path.string() + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image quantize8(const Image& image) {
  Image out = image;
  for (double& v : out.data) v = std::lround(255.0 * std::clamp(v, 0.0, 1.0)) / 255.0;
  return out;
}

}  // namespace pv
