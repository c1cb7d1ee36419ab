// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dynavol/common.hpp"

namespace dynavol {

// RGB image, row-major, values in [0,1]. Stored on disk as binary PPM (P6).
struct Image {
  int width = 0, height = 0;
  std::vector<float> rgb;  // 3 * width * height

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(size_t(3) * w * h, 0.0f) {}

  float* pixel(int x, int y) { return &rgb[3 * (size_t(y) * width + x)]; }
  const float* pixel(int x, int y) const { return &rgb[3 * (size_t(y) * width + x)]; }
};

// Single-channel label/mask image; id 0 is background. Stored as PGM (P5).
struct MaskImage {
  int width = 0, height = 0;
  std::vector<uint8_t> ids;

  MaskImage() = default;
  MaskImage(int w, int h) : width(w), height(h), ids(size_t(w) * h, 0) {}

  uint8_t& at(int x, int y) { return ids[size_t(y) * width + x]; }
  uint8_t at(int x, int y) const { return ids[size_t(y) * width + x]; }
};

inline uint8_t quantize8(float v) {
  float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return uint8_t(c * 255.0f + 0.5f);
}

inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), ErrorKind::Data, "cannot open image file for writing: " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> buf(img.rgb.size());
  for (size_t i = 0; i < img.rgb.size(); i++) buf[i] = quantize8(img.rgb[i]);
  f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  check(f.good(), ErrorKind::Data, "short write on image file: " + path);
}

namespace detail {

// Reads one whitespace/comment-delimited token from a PNM header.
inline std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {}
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(char(c));
  }
  return tok;
}

inline void read_pnm_header(std::istream& in, const std::string& path, const char* magic, int& w,
                            int& h) {
  check(pnm_token(in) == magic, ErrorKind::Data,
        std::string("cannot decode image file '") + path + "': bad magic");
  try {
    w = std::stoi(pnm_token(in));
    h = std::stoi(pnm_token(in));
    int maxval = std::stoi(pnm_token(in));
    check(maxval == 255, ErrorKind::Data,
          "cannot decode image file '" + path + "': unsupported maxval");
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw_data("cannot decode image file '" + path + "': malformed header");
  }
  check(w > 0 && h > 0, ErrorKind::Data, "cannot decode image file '" + path + "': bad size");
}

}  // namespace detail

inline Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), ErrorKind::Data, "cannot open image file: " + path);
  int w, h;
  detail::read_pnm_header(f, path, "P6", w, h);
  Image img(w, h);
  std::vector<uint8_t> buf(size_t(3) * w * h);
  f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  check(size_t(f.gcount()) == buf.size(), ErrorKind::Data,
        "cannot decode image file '" + path + "': truncated pixel data");
  for (size_t i = 0; i < buf.size(); i++) img.rgb[i] = float(buf[i]) / 255.0f;
  return img;
}

inline void write_pgm(const std::string& path, const MaskImage& m) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), ErrorKind::Data, "cannot open image file for writing: " + path);
  f << "P5\n" << m.width << " " << m.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(m.ids.data()), std::streamsize(m.ids.size()));
  check(f.good(), ErrorKind::Data, "short write on image file: " + path);
}

inline MaskImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), ErrorKind::Data, "cannot open image file: " + path);
  int w, h;
  detail::read_pnm_header(f, path, "P5", w, h);
  MaskImage m(w, h);
  f.read(reinterpret_cast<char*>(m.ids.data()), std::streamsize(m.ids.size()));
  check(size_t(f.gcount()) == m.ids.size(), ErrorKind::Data,
        "cannot decode image file '" + path + "': truncated pixel data");
  return m;
}

}  // namespace dynavol
