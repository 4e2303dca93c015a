#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridsight/class_mapping.hpp"
#include "gridsight/flatplane.hpp"
#include "gridsight/grid_io.hpp"
#include "gridsight/metrics.hpp"
#include "gridsight/perturb.hpp"
#include "gridsight/synth.hpp"
#include "gridsight/ved.hpp"

namespace gridsight {

enum class MapMethod { kFlatplane, kVed, kVedNoSampling };

inline std::string method_name(MapMethod m) {
  switch (m) {
    case MapMethod::kFlatplane: return "flatplane";
    case MapMethod::kVed: return "ved";
    case MapMethod::kVedNoSampling: return "ved-no-sampling";
  }
  return "?";
}

inline MapMethod method_from_name(const std::string& name) {
  if (name == "flatplane") return MapMethod::kFlatplane;
  if (name == "ved") return MapMethod::kVed;
  if (name == "ved-no-sampling") return MapMethod::kVedNoSampling;
  throw std::invalid_argument("unknown method " + name);
}

struct PerturbSpec {
  enum Kind { kNone, kPitch, kRoll } kind = kNone;
  double degrees = 0.0;  // signed
};

// Runs one mapper over a manifest under a single signed perturbation applied
// to its camera-resolution input, and evaluates against the true grids.
inline SetMetrics evaluate_method(MapMethod method, const std::vector<ManifestEntry>& entries,
                                  const std::string& base_dir, const ClassMapping& mapping,
                                  Checkpoint* ckpt, const PerturbSpec& perturb) {
  if (entries.empty()) throw std::invalid_argument("evaluate_method: empty manifest");
  if (method != MapMethod::kFlatplane && ckpt == nullptr) {
    throw std::invalid_argument("evaluate_method: missing checkpoint for network method");
  }
  namespace fs = std::filesystem;
  std::map<std::string, CameraRig> rig_cache;
  std::map<std::string, std::vector<std::uint8_t>> mask_cache;

  std::vector<std::pair<GridMap, GridMap>> pairs;
  pairs.reserve(entries.size());
  for (const ManifestEntry& e : entries) {
    auto rig_it = rig_cache.find(e.rig);
    if (rig_it == rig_cache.end()) {
      rig_it = rig_cache.emplace(e.rig, read_rig((fs::path(base_dir) / e.rig).string())).first;
    }
    const CameraRig& rig = rig_it->second;
    GridMap truth = read_grid((fs::path(base_dir) / e.true_grid).string());

    GridMap pred;
    if (method == MapMethod::kFlatplane) {
      ImageU8 labels = read_pgm((fs::path(base_dir) / e.labels).string());
      if (perturb.kind == PerturbSpec::kPitch) {
        labels = apply_pitch(labels, rig.intrinsics.fy, perturb.degrees);
      } else if (perturb.kind == PerturbSpec::kRoll) {
        labels = apply_roll(labels, perturb.degrees, Interp::kNearest);
      }
      pred = flatplane_map(labels, rig, truth.spec, mapping);
    } else {
      ImageU8 rgb = read_ppm((fs::path(base_dir) / e.rgb).string());
      if (perturb.kind == PerturbSpec::kPitch) {
        rgb = apply_pitch(rgb, rig.intrinsics.fy, perturb.degrees);
      } else if (perturb.kind == PerturbSpec::kRoll) {
        rgb = apply_roll(rgb, perturb.degrees, Interp::kBilinear);
      }
      auto mask_it = mask_cache.find(e.rig);
      if (mask_it == mask_cache.end()) {
        mask_it = mask_cache.emplace(e.rig, fov_mask(rig, truth.spec)).first;
      }
      pred = ved_infer(*ckpt, rgb, &mask_it->second);
      pred.spec = truth.spec;  // same geometry; keep specs comparable
    }
    pairs.emplace_back(std::move(pred), std::move(truth));
  }
  return evaluate_set(pairs);
}

struct SweepRow {
  std::string method;
  std::string perturbation;
  double mean_accuracy = 0;
  double mean_iou = 0;
  double acc_downgrade = 0;  // baseline minus perturbed, positive = worse
  double iou_downgrade = 0;
};

// Rows: no perturbation, then each +-setting evaluated at both signs and
// averaged, with downgrades relative to the unperturbed row.
inline std::vector<SweepRow> perturbation_sweep(MapMethod method,
                                                const std::vector<ManifestEntry>& entries,
                                                const std::string& base_dir,
                                                const ClassMapping& mapping, Checkpoint* ckpt,
                                                double pitch_degrees = 1.5,
                                                double roll_degrees = 5.0) {
  std::vector<SweepRow> rows;
  const SetMetrics base =
      evaluate_method(method, entries, base_dir, mapping, ckpt, PerturbSpec{});
  rows.push_back({method_name(method), "none", base.mean_accuracy, base.mean_iou, 0.0, 0.0});

  const auto signed_pair = [&](PerturbSpec::Kind kind, double degrees, const std::string& name) {
    SetMetrics plus =
        evaluate_method(method, entries, base_dir, mapping, ckpt, PerturbSpec{kind, degrees});
    SetMetrics minus =
        evaluate_method(method, entries, base_dir, mapping, ckpt, PerturbSpec{kind, -degrees});
    const double acc = (plus.mean_accuracy + minus.mean_accuracy) / 2.0;
    const double iou = (plus.mean_iou + minus.mean_iou) / 2.0;
    rows.push_back({method_name(method), name, acc, iou, base.mean_accuracy - acc,
                    base.mean_iou - iou});
  };
  char name[48];
  std::snprintf(name, sizeof(name), "pitch+-%g", pitch_degrees);
  signed_pair(PerturbSpec::kPitch, pitch_degrees, name);
  std::snprintf(name, sizeof(name), "roll+-%g", roll_degrees);
  signed_pair(PerturbSpec::kRoll, roll_degrees, name);
  return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "method,perturbation,mean_accuracy,mean_iou,acc_downgrade,iou_downgrade\n";
  char buf[256];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%.17g,%.17g\n", r.method.c_str(),
                  r.perturbation.c_str(), r.mean_accuracy, r.mean_iou, r.acc_downgrade,
                  r.iou_downgrade);
    out << buf;
  }
}

inline std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty CSV " + path);
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      fields.push_back(line.substr(pos, comma == std::string::npos ? comma : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (fields.size() != 6) throw std::runtime_error("malformed CSV row in " + path);
    SweepRow r;
    r.method = fields[0];
    r.perturbation = fields[1];
    r.mean_accuracy = std::stod(fields[2]);
    r.mean_iou = std::stod(fields[3]);
    r.acc_downgrade = std::stod(fields[4]);
    r.iou_downgrade = std::stod(fields[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace gridsight
