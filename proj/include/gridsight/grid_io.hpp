#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "gridsight/grid.hpp"
#include "gridsight/image.hpp"

namespace gridsight {

namespace detail {

inline std::string strip_grid_suffix(const std::string& path) {
  std::filesystem::path p(path);
  if (p.extension() == ".json" || p.extension() == ".pgm") p.replace_extension();
  return p.string();
}

}  // namespace detail

// A grid on disk is the pair <base>.pgm (P5, pixel value = class id, rows
// far-to-near) and <base>.json metadata, plus the mask PGM named there
// (0 = ignore, 255 = evaluate).
inline void write_grid(const GridMap& map, const std::string& path) {
  map.validate();
  const std::string base = detail::strip_grid_suffix(path);
  const std::string mask_name = std::filesystem::path(base).filename().string() + "_mask.pgm";

  ImageU8 cls_img(map.spec.cols, map.spec.rows, 1);
  ImageU8 mask_img(map.spec.cols, map.spec.rows, 1);
  for (int i = 0; i < map.spec.rows; ++i) {
    for (int j = 0; j < map.spec.cols; ++j) {
      cls_img.at(i, j) = map.cls(i, j);
      mask_img.at(i, j) = map.mask(i, j) ? 255 : 0;
    }
  }
  write_pgm(cls_img, base + ".pgm");
  write_pgm(mask_img, (std::filesystem::path(base).parent_path() / mask_name).string());

  nlohmann::json meta = {
      {"rows", map.spec.rows},
      {"cols", map.spec.cols},
      {"cell_size_m", map.spec.cell_size_m},
      {"x_offset_m", map.spec.x_offset_m},
      {"mask_file", mask_name},
  };
  std::ofstream out(base + ".json");
  if (!out) throw std::runtime_error("cannot write " + base + ".json");
  out << meta.dump(2) << "\n";
}

inline GridMap read_grid(const std::string& path) {
  const std::string base = detail::strip_grid_suffix(path);
  std::ifstream in(base + ".json");
  if (!in) throw std::runtime_error("cannot open " + base + ".json");
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed grid metadata " + base + ".json: " + e.what());
  }

  GridSpec spec;
  try {
    spec.rows = meta.at("rows").get<int>();
    spec.cols = meta.at("cols").get<int>();
    spec.cell_size_m = meta.at("cell_size_m").get<double>();
    spec.x_offset_m = meta.at("x_offset_m").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed grid metadata " + base + ".json: " + e.what());
  }
  spec.validate();

  ImageU8 cls_img = read_pgm(base + ".pgm");
  if (cls_img.width != spec.cols || cls_img.height != spec.rows) {
    throw std::runtime_error("grid dimension mismatch in " + base + ".pgm");
  }
  const std::string mask_file = meta.at("mask_file").get<std::string>();
  ImageU8 mask_img =
      read_pgm((std::filesystem::path(base).parent_path() / mask_file).string());
  if (mask_img.width != spec.cols || mask_img.height != spec.rows) {
    throw std::runtime_error("mask dimension mismatch for " + base);
  }

  GridMap map(spec);
  for (int i = 0; i < spec.rows; ++i) {
    for (int j = 0; j < spec.cols; ++j) {
      const std::uint8_t c = cls_img.at(i, j);
      if (!is_valid_class(c)) {
        throw std::runtime_error("class value outside {0..3} in " + base + ".pgm");
      }
      map.cls(i, j) = c;
      map.mask(i, j) = mask_img.at(i, j) != 0;
    }
  }
  return map;
}

// Fixed render palette: 0 black, road purple, sidewalk pink, terrain green.
// Masked-out cells are darkened to half brightness.
inline ImageU8 render_grid_image(const GridMap& map) {
  static constexpr std::uint8_t kPalette[kNumClasses][3] = {
      {0, 0, 0}, {128, 64, 128}, {244, 35, 232}, {152, 251, 152}};
  ImageU8 img(map.spec.cols, map.spec.rows, 3);
  for (int i = 0; i < map.spec.rows; ++i) {
    for (int j = 0; j < map.spec.cols; ++j) {
      const std::uint8_t* rgb = kPalette[map.cls(i, j)];
      const int shade = map.mask(i, j) ? 2 : 1;  // 50% darken outside the mask
      for (int c = 0; c < 3; ++c) img.at(i, j, c) = static_cast<std::uint8_t>(rgb[c] * shade / 2);
    }
  }
  return img;
}

}  // namespace gridsight
