#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridsight {

// Row-major interleaved image. channels is 1 (grayscale / labels / disparity)
// or 3 (RGB).
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c, T fill = T{})
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  T& at(int y, int x, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  const T& at(int y, int x, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool same_size(const Image& other) const {
    return width == other.width && height == other.height && channels == other.channels;
  }
};

using ImageU8 = Image<std::uint8_t>;
using ImageF32 = Image<float>;

namespace detail {

inline std::string pnm_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return tok;
}

inline int pnm_int(std::istream& in, const std::string& what, const std::string& path) {
  std::string tok = pnm_token(in);
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
    throw std::runtime_error("malformed " + what + " in " + path);
  }
  return std::stoi(tok);
}

inline bool host_is_little_endian() {
  const std::uint16_t probe = 1;
  return *reinterpret_cast<const std::uint8_t*>(&probe) == 1;
}

}  // namespace detail

inline ImageU8 read_pnm_u8(const std::string& path, int expect_channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string magic = detail::pnm_token(in);
  int channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw std::runtime_error("malformed header (expected P5/P6) in " + path);
  if (expect_channels != 0 && channels != expect_channels) {
    throw std::runtime_error("unexpected PNM type " + magic + " in " + path);
  }
  int w = detail::pnm_int(in, "width", path);
  int h = detail::pnm_int(in, "height", path);
  int maxval = detail::pnm_int(in, "maxval", path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw std::runtime_error("malformed header in " + path);
  }
  ImageU8 img(w, h, channels);
  in.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.data.size())) {
    throw std::runtime_error("truncated pixel data in " + path);
  }
  return img;
}

inline ImageU8 read_pgm(const std::string& path) { return read_pnm_u8(path, 1); }
inline ImageU8 read_ppm(const std::string& path) { return read_pnm_u8(path, 3); }

inline void write_pnm_u8(const ImageU8& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3) {
    throw std::invalid_argument("write_pnm_u8: channels must be 1 or 3");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_pgm(const ImageU8& img, const std::string& path) {
  if (img.channels != 1) throw std::invalid_argument("write_pgm: 1-channel image required");
  write_pnm_u8(img, path);
}

inline void write_ppm(const ImageU8& img, const std::string& path) {
  if (img.channels != 3) throw std::invalid_argument("write_ppm: 3-channel image required");
  write_pnm_u8(img, path);
}

// Grayscale PFM ("Pf"). Scale -1.0 marks little-endian payload; rows are
// stored bottom-to-top per the PFM convention.
inline void write_pfm(const ImageF32& img, const std::string& path) {
  if (img.channels != 1) throw std::invalid_argument("write_pfm: 1-channel image required");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(img.width));
  for (int y = img.height - 1; y >= 0; --y) {
    std::memcpy(row.data(), &img.data[static_cast<std::size_t>(y) * img.width],
                sizeof(float) * img.width);
    if (!detail::host_is_little_endian()) {
      for (float& v : row) {
        auto* b = reinterpret_cast<std::uint8_t*>(&v);
        std::swap(b[0], b[3]);
        std::swap(b[1], b[2]);
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(sizeof(float) * img.width));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline ImageF32 read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string magic = detail::pnm_token(in);
  if (magic != "Pf") throw std::runtime_error("malformed header (expected Pf) in " + path);
  int w = detail::pnm_int(in, "width", path);
  int h = detail::pnm_int(in, "height", path);
  std::string scale_tok = detail::pnm_token(in);
  double scale = std::strtod(scale_tok.c_str(), nullptr);
  if (scale == 0.0) throw std::runtime_error("malformed scale in " + path);
  const bool file_little = scale < 0.0;
  ImageF32 img(w, h, 1);
  std::vector<float> row(static_cast<std::size_t>(w));
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(sizeof(float) * w));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(float) * w)) {
      throw std::runtime_error("truncated pixel data in " + path);
    }
    if (file_little != detail::host_is_little_endian()) {
      for (float& v : row) {
        auto* b = reinterpret_cast<std::uint8_t*>(&v);
        std::swap(b[0], b[3]);
        std::swap(b[1], b[2]);
      }
    }
    std::memcpy(&img.data[static_cast<std::size_t>(y) * w], row.data(), sizeof(float) * w);
  }
  return img;
}

enum class Interp { kBilinear, kNearest };

// Resample to (out_w, out_h); pixel centers map proportionally, samples
// outside the source are clamped to the edge.
template <typename T>
Image<T> resize(const Image<T>& src, int out_w, int out_h, Interp interp) {
  Image<T> dst(out_w, out_h, src.channels);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      if (interp == Interp::kNearest) {
        int iy = std::clamp(static_cast<int>(std::lround(fy)), 0, src.height - 1);
        int ix = std::clamp(static_cast<int>(std::lround(fx)), 0, src.width - 1);
        for (int c = 0; c < src.channels; ++c) dst.at(y, x, c) = src.at(iy, ix, c);
      } else {
        int y0 = static_cast<int>(std::floor(fy));
        int x0 = static_cast<int>(std::floor(fx));
        double wy = fy - y0, wx = fx - x0;
        int y0c = std::clamp(y0, 0, src.height - 1);
        int y1c = std::clamp(y0 + 1, 0, src.height - 1);
        int x0c = std::clamp(x0, 0, src.width - 1);
        int x1c = std::clamp(x0 + 1, 0, src.width - 1);
        for (int c = 0; c < src.channels; ++c) {
          double v = (1 - wy) * ((1 - wx) * src.at(y0c, x0c, c) + wx * src.at(y0c, x1c, c)) +
                     wy * ((1 - wx) * src.at(y1c, x0c, c) + wx * src.at(y1c, x1c, c));
          if constexpr (std::is_integral_v<T>) {
            dst.at(y, x, c) = static_cast<T>(std::lround(v));
          } else {
            dst.at(y, x, c) = static_cast<T>(v);
          }
        }
      }
    }
  }
  return dst;
}

// Box average over an integer downscale factor. Exact and cheap for the
// camera-to-network resolution reduction.
inline ImageU8 downscale_box(const ImageU8& src, int factor) {
  if (factor < 1 || src.width % factor != 0 || src.height % factor != 0) {
    throw std::invalid_argument("downscale_box: size not divisible by factor");
  }
  ImageU8 dst(src.width / factor, src.height / factor, src.channels);
  const int f2 = factor * factor;
  for (int y = 0; y < dst.height; ++y) {
    for (int x = 0; x < dst.width; ++x) {
      for (int c = 0; c < src.channels; ++c) {
        int sum = 0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) {
            sum += src.at(y * factor + dy, x * factor + dx, c);
          }
        }
        dst.at(y, x, c) = static_cast<std::uint8_t>((sum + f2 / 2) / f2);
      }
    }
  }
  return dst;
}

}  // namespace gridsight
