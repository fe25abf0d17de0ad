#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "unimot/errors.hpp"

namespace unimot {

// Small RGB image, float channels in [0,1], row-major.
struct ToyImage {
  int h = 0, w = 0;
  std::vector<float> rgb;

  ToyImage() = default;
  ToyImage(int h_, int w_) : h(h_), w(w_), rgb(size_t(h_) * w_ * 3, 0.f) {}

  float* px(int r, int c) { return rgb.data() + (size_t(r) * w + c) * 3; }
  const float* px(int r, int c) const {
    return rgb.data() + (size_t(r) * w + c) * 3;
  }
};

inline void write_ppm(const ToyImage& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("ppm: cannot open " + path + " for writing");
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> bytes(img.rgb.size());
  for (size_t i = 0; i < img.rgb.size(); i++) {
    float v = std::clamp(img.rgb[i], 0.f, 1.f);
    bytes[i] = (unsigned char)std::lround(v * 255.f);
  }
  f.write((const char*)bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw ConfigError("ppm: short write to " + path);
}

inline ToyImage read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw ConfigError("ppm: not a P6 file: " + path);
  int w, h, maxv;
  f >> w >> h >> maxv;
  if (!f || w <= 0 || h <= 0 || maxv != 255)
    throw ConfigError("ppm: malformed header in " + path);
  f.get();
  ToyImage img(h, w);
  std::vector<unsigned char> bytes(size_t(h) * w * 3);
  f.read((char*)bytes.data(), std::streamsize(bytes.size()));
  if (size_t(f.gcount()) != bytes.size())
    throw ConfigError("ppm: truncated pixel data in " + path);
  for (size_t i = 0; i < bytes.size(); i++) img.rgb[i] = bytes[i] / 255.f;
  return img;
}

}  // namespace unimot
