#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "gridsight/grid.hpp"

namespace gridsight {

// Front-view label id -> grid class. Ids map to a ground class (1..3), to
// non-ground (tallied as class 0), or are ignored entirely. Unlisted ids are
// non-ground.
class ClassMapping {
 public:
  static constexpr std::uint8_t kNonGround = 0;
  static constexpr std::uint8_t kIgnoreId = 255;

  ClassMapping() { table_.fill(kNonGround); }

  void set_ground(int label_id, std::uint8_t grid_class) {
    check_id(label_id);
    if (grid_class < 1 || grid_class > 3) {
      throw std::invalid_argument("ClassMapping: ground class must be in {1,2,3}");
    }
    table_[label_id] = grid_class;
  }

  void set_ignore(int label_id) {
    check_id(label_id);
    table_[label_id] = kIgnoreId;
  }

  bool is_ignored(std::uint8_t label_id) const { return table_[label_id] == kIgnoreId; }

  // Grid class for a non-ignored label id (0 for non-ground).
  std::uint8_t grid_class(std::uint8_t label_id) const { return table_[label_id]; }

  // A usable mapping names at least one label id per ground class.
  void validate() const {
    std::array<bool, kNumClasses> seen{};
    for (int id = 0; id < 256; ++id) {
      if (table_[id] >= 1 && table_[id] <= 3) seen[table_[id]] = true;
    }
    if (!seen[1] || !seen[2] || !seen[3]) {
      throw std::invalid_argument(
          "ClassMapping: empty mapping (each ground class needs at least one label id)");
    }
  }

  static ClassMapping from_json(const nlohmann::json& j) {
    ClassMapping m;
    try {
      for (auto& [key, value] : j.at("ground").items()) {
        m.set_ground(std::stoi(key), value.get<std::uint8_t>());
      }
      if (j.contains("ignore")) {
        for (int id : j.at("ignore").get<std::vector<int>>()) m.set_ignore(id);
      }
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(std::string("malformed class mapping JSON: ") + e.what());
    }
    m.validate();
    return m;
  }

  nlohmann::json to_json() const {
    nlohmann::json ground = nlohmann::json::object();
    nlohmann::json ignore = nlohmann::json::array();
    for (int id = 0; id < 256; ++id) {
      if (table_[id] >= 1 && table_[id] <= 3) ground[std::to_string(id)] = table_[id];
      if (table_[id] == kIgnoreId) ignore.push_back(id);
    }
    return nlohmann::json{{"ground", ground}, {"ignore", ignore}};
  }

 private:
  static void check_id(int id) {
    if (id < 0 || id > 255) throw std::invalid_argument("ClassMapping: label id outside 0..255");
  }

  std::array<std::uint8_t, 256> table_;
};

inline ClassMapping read_class_mapping(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed class mapping JSON " + path + ": " + e.what());
  }
  return ClassMapping::from_json(j);
}

inline void write_class_mapping(const ClassMapping& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << m.to_json().dump(2) << "\n";
}

}  // namespace gridsight
