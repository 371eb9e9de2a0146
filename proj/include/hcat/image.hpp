#pragma once

#include <string>
#include <vector>

#include "hcat/common.hpp"

namespace hcat {

// Planar RGB raster, values in [0, 1], layout [3][height][width].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  static Image filled(int height, int width, const double rgb[3]);
  double& at(int channel, int y, int x) {
    return data[(static_cast<size_t>(channel) * height + y) * width + x];
  }
  double at(int channel, int y, int x) const {
    return data[(static_cast<size_t>(channel) * height + y) * width + x];
  }
  bool empty() const { return height == 0 || width == 0; }
};

// Fixed per-channel normalization constants. Crops are padded with the mean,
// so padded area maps to zero after normalization.
inline constexpr double kPixelMean[3] = {0.485, 0.456, 0.406};
inline constexpr double kPixelStd[3] = {0.229, 0.224, 0.225};

// Binary PPM (P6, maxval 255) readers/writers; the only on-disk frame format
// the CLI accepts.
Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);

}  // namespace hcat
