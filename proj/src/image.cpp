#include "hcat/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace hcat {

Image Image::filled(int height, int width, const double rgb[3]) {
  check(height > 0 && width > 0, "image: bad size ", height, "x", width);
  Image img;
  img.height = height;
  img.width = width;
  img.data.resize(static_cast<size_t>(3) * height * width);
  for (int c = 0; c < 3; ++c)
    std::fill_n(img.data.begin() + static_cast<size_t>(c) * height * width,
                static_cast<size_t>(height) * width, rgb[c]);
  return img;
}

Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "read_ppm: cannot open ", path);
  std::string magic;
  f >> magic;
  check(magic == "P6", "read_ppm: ", path, " is not a binary PPM (P6)");

  auto next_int = [&]() {
    // Skips whitespace and '#' comment lines between header fields.
    while (true) {
      int ch = f.peek();
      if (ch == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(ch)) {
        f.get();
      } else {
        break;
      }
    }
    int v = -1;
    f >> v;
    check(f.good() && v >= 0, "read_ppm: malformed header in ", path);
    return v;
  };

  const int width = next_int();
  const int height = next_int();
  const int maxval = next_int();
  check(maxval == 255, "read_ppm: only maxval 255 supported, got ", maxval);
  f.get();  // single whitespace before payload

  std::vector<unsigned char> raw(static_cast<size_t>(3) * width * height);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  check(f.gcount() == static_cast<std::streamsize>(raw.size()),
        "read_ppm: truncated payload in ", path);

  Image img;
  img.height = height;
  img.width = width;
  img.data.resize(raw.size());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = raw[(static_cast<size_t>(y) * width + x) * 3 + c] / 255.0;
  return img;
}

void write_ppm(const std::string& path, const Image& img) {
  check(!img.empty(), "write_ppm: empty image");
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "write_ppm: cannot open ", path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(static_cast<size_t>(3) * img.width * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        raw[(static_cast<size_t>(y) * img.width + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
  f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  check(f.good(), "write_ppm: write failed for ", path);
}

}  // namespace hcat
