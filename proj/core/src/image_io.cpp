#include "rmfn/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>
#include <png.h>

namespace rmfn {

Tensor load_png(const std::string& path) {
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str()))
    throw std::runtime_error("cannot read PNG '" + path + "': " + im.message);

  const bool color = (im.format & PNG_FORMAT_FLAG_COLOR) != 0;
  im.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int64_t channels = color ? 3 : 1;

  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(im));
  const png_color white{255, 255, 255};
  if (!png_image_finish_read(&im, &white, buf.data(), 0, nullptr)) {
    png_image_free(&im);
    throw std::runtime_error("cannot decode PNG '" + path + "': " + im.message);
  }

  Tensor out({static_cast<int64_t>(im.height), static_cast<int64_t>(im.width), channels});
  for (int64_t i = 0; i < out.size(); ++i) out[i] = buf[static_cast<size_t>(i)] / 255.0;
  return out;
}

void save_png(const std::string& path, const Tensor& image) {
  int64_t h = 0, w = 0, channels = 1;
  if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 3 && (image.dim(2) == 1 || image.dim(2) == 3)) {
    h = image.dim(0);
    w = image.dim(1);
    channels = image.dim(2);
  } else {
    throw std::invalid_argument("save_png expects [H,W] or [H,W,{1,3}], got " +
                                image.shape_str());
  }

  std::vector<uint8_t> buf(static_cast<size_t>(h * w * channels));
  for (int64_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    buf[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v * 255.0));
  }

  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(w);
  im.height = static_cast<png_uint_32>(h);
  im.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG '" + path + "': " + im.message);
}

void save_spectrum_png(const std::string& path, const Tensor& magnitude) {
  if (magnitude.rank() != 2)
    throw std::invalid_argument("spectrum heat map expects a 2D magnitude array");
  Tensor scaled(magnitude.shape());
  double peak = 0.0;
  for (int64_t i = 0; i < magnitude.size(); ++i) {
    scaled[i] = std::log10(1.0 + magnitude[i]);
    peak = std::max(peak, scaled[i]);
  }
  if (peak > 0.0)
    for (int64_t i = 0; i < scaled.size(); ++i) scaled[i] /= peak;
  save_png(path, scaled);
}

void save_tensor_json(const std::string& path, const Tensor& t) {
  nlohmann::json j;
  j["shape"] = t.shape();
  std::vector<double> data(static_cast<size_t>(t.size()));
  for (int64_t i = 0; i < t.size(); ++i) data[static_cast<size_t>(i)] = t[i];
  j["data"] = std::move(data);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << j.dump() << "\n";
}

Tensor load_tensor_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  nlohmann::json j;
  f >> j;
  const std::vector<int64_t> shape = j.at("shape").get<std::vector<int64_t>>();
  const std::vector<double> data = j.at("data").get<std::vector<double>>();
  if (Tensor::shape_size(shape) != static_cast<int64_t>(data.size()))
    throw std::runtime_error("tensor JSON shape/data mismatch in '" + path + "'");
  return Tensor(shape, data);
}

}  // namespace rmfn
