#include "idgan/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "idgan/errors.hpp"

namespace idgan {

std::vector<std::uint8_t> quantize_image(const torch::Tensor& image) {
  if (image.dim() != 3) throw ShapeError("quantize_image expects a C×H×W tensor");
  auto hwc = image.detach()
                 .to(torch::kCPU, torch::kFloat64)
                 .clamp(-1.0, 1.0)
                 .add(1.0)
                 .mul(255.0 / 2.0)
                 .round()
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  const auto* data = hwc.data_ptr<std::uint8_t>();
  return {data, data + hwc.numel()};
}

torch::Tensor dequantize_image(const std::vector<std::uint8_t>& bytes, int64_t height,
                               int64_t width, int64_t channels) {
  if (static_cast<int64_t>(bytes.size()) != height * width * channels) {
    throw ShapeError("dequantize_image: byte count does not match shape");
  }
  auto hwc = torch::from_blob(const_cast<std::uint8_t*>(bytes.data()), {height, width, channels},
                              torch::kUInt8)
                 .to(torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous().mul(2.0 / 255.0).sub(1.0);
}

void write_png(const torch::Tensor& image, const std::filesystem::path& path) {
  if (image.dim() != 3 || (image.size(0) != 1 && image.size(0) != 3)) {
    throw ShapeError("write_png expects a 1×H×W or 3×H×W tensor");
  }
  const int height = static_cast<int>(image.size(1));
  const int width = static_cast<int>(image.size(2));
  const int channels = static_cast<int>(image.size(0));
  auto bytes = quantize_image(image);
  cv::Mat mat(height, width, channels == 3 ? CV_8UC3 : CV_8UC1, bytes.data());
  cv::Mat out;
  if (channels == 3) {
    cv::cvtColor(mat, out, cv::COLOR_RGB2BGR);
  } else {
    out = mat;
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) {
    throw Error("failed to write PNG: " + path.string());
  }
}

std::optional<torch::Tensor> read_image(const std::filesystem::path& path, int64_t resolution) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) return std::nullopt;
  const int side = std::min(bgr.rows, bgr.cols);
  const cv::Rect crop((bgr.cols - side) / 2, (bgr.rows - side) / 2, side, side);
  cv::Mat square = bgr(crop);
  cv::Mat resized;
  const auto res = static_cast<int>(resolution);
  if (side == res) {
    resized = square.clone();
  } else {
    cv::resize(square, resized, cv::Size(res, res), 0, 0,
               side > res ? cv::INTER_AREA : cv::INTER_LINEAR);
  }
  cv::Mat rgb;
  cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
  std::vector<std::uint8_t> bytes(rgb.datastart, rgb.dataend);
  return dequantize_image(bytes, res, res, 3);
}

bool is_image_file(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace idgan
