// gridsight: front-view camera data to top-view semantic occupancy grids.
//
// Subcommands cover dataset synthesis, weak ground-truth generation, the
// flat-plane baseline, VED training/inference, evaluation sweeps, latent
// analysis, map rendering, and an inference benchmark.

#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gridsight/camera.hpp"
#include "gridsight/class_mapping.hpp"
#include "gridsight/flatplane.hpp"
#include "gridsight/grid_io.hpp"
#include "gridsight/gt_pipeline.hpp"
#include "gridsight/metrics.hpp"
#include "gridsight/pca.hpp"
#include "gridsight/perturb.hpp"
#include "gridsight/sweep.hpp"
#include "gridsight/synth.hpp"
#include "gridsight/ved.hpp"

namespace fs = std::filesystem;
using namespace gridsight;

namespace {

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed JSON " + path + ": " + e.what());
  }
  return j;
}

VedConfig ved_config_from_arg(const std::string& arg) {
  if (arg == "desk") return VedConfig::desk();
  if (arg == "paper") return VedConfig::paper();
  if (arg == "compact") return VedConfig::compact();
  return VedConfig::from_json(load_json_file(arg));
}

std::string grid_basename(const std::string& grid_rel) {
  return fs::path(grid_rel).filename().replace_extension().string();
}

// ---- synth ----------------------------------------------------------------

int cmd_synth_gen(int n, const std::string& out, std::uint64_t seed,
                  const std::string& config_path) {
  GenConfig cfg;
  if (!config_path.empty()) cfg = GenConfig::from_json(load_json_file(config_path));
  const std::string manifest = generate_dataset(n, cfg, seed, out);
  std::cout << "wrote " << n << " scenes, manifest " << manifest << "\n";
  return 0;
}

// ---- gt / flatplane ---------------------------------------------------------

int cmd_gt_build(const std::string& manifest_path, const std::string& rig_path,
                 const std::string& mapping_path, const std::string& out,
                 std::optional<double> ceiling) {
  auto entries = load_manifest(manifest_path);
  const std::string base = fs::path(manifest_path).parent_path().string();
  const CameraRig rig = read_rig(rig_path);
  const ClassMapping mapping = read_class_mapping(mapping_path);
  fs::create_directories(out);
  for (const auto& e : entries) {
    ImageF32 disparity = read_pfm((fs::path(base) / e.disparity).string());
    ImageU8 labels = read_pgm((fs::path(base) / e.labels).string());
    GridMap truth = read_grid((fs::path(base) / e.true_grid).string());
    GridMap weak =
        project_labeled_cloud(disparity, labels, rig, truth.spec, mapping, ceiling);
    write_grid(weak, (fs::path(out) / grid_basename(e.true_grid)).string());
  }
  std::cout << "wrote " << entries.size() << " weak grids to " << out << "\n";
  return 0;
}

int cmd_flatplane_run(const std::string& manifest_path, const std::string& rig_path,
                      const std::string& mapping_path, const std::string& out) {
  auto entries = load_manifest(manifest_path);
  const std::string base = fs::path(manifest_path).parent_path().string();
  const CameraRig rig = read_rig(rig_path);
  const ClassMapping mapping = read_class_mapping(mapping_path);
  fs::create_directories(out);
  for (const auto& e : entries) {
    ImageU8 labels = read_pgm((fs::path(base) / e.labels).string());
    GridMap truth = read_grid((fs::path(base) / e.true_grid).string());
    GridMap pred = flatplane_map(labels, rig, truth.spec, mapping);
    write_grid(pred, (fs::path(out) / grid_basename(e.true_grid)).string());
  }
  std::cout << "wrote " << entries.size() << " flat-plane grids to " << out << "\n";
  return 0;
}

// ---- ved ---------------------------------------------------------------------

int cmd_ved_train(const std::string& manifest_path, const std::string& config_arg,
                  const std::string& out, bool no_sampling, int epochs, int batch,
                  double lr, std::uint64_t seed, bool seed_set, const std::string& grids_dir,
                  const std::string& log_path) {
  VedConfig cfg = ved_config_from_arg(config_arg);
  if (no_sampling) cfg.sampling_enabled = false;
  if (seed_set) cfg.seed = seed;
  TrainOptions opts;
  opts.epochs = epochs;
  opts.batch_size = batch;
  opts.lr = lr;
  opts.grids_dir = grids_dir;
  opts.log_path = log_path;
  auto entries = load_manifest(manifest_path);
  const std::string base = fs::path(manifest_path).parent_path().string();
  TrainResult result = ved_train(entries, base, cfg, opts);
  save_checkpoint(result.checkpoint, out);
  std::cout << "checkpoint " << out << " final loss "
            << result.checkpoint.final_metrics.value("loss", 0.0) << "\n";
  return 0;
}

int cmd_ved_infer(const std::string& ckpt_path, const std::string& image_path,
                  const std::string& rig_path, const std::string& out) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  ImageU8 rgb = read_ppm(image_path);
  GridMap map;
  if (!rig_path.empty()) {
    const CameraRig rig = read_rig(rig_path);
    auto mask = fov_mask(rig, grid_spec_for(ckpt.config.grid_size));
    map = ved_infer(ckpt, rgb, &mask);
  } else {
    map = ved_infer(ckpt, rgb);
  }
  write_grid(map, out);
  std::cout << "wrote grid " << out << "\n";
  return 0;
}

int cmd_ved_encode(const std::string& ckpt_path, const std::string& manifest_path,
                   const std::string& out) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  auto entries = load_manifest(manifest_path);
  const std::string base = fs::path(manifest_path).parent_path().string();
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out);
  for (const auto& e : entries) {
    ImageU8 rgb = read_ppm((fs::path(base) / e.rgb).string());
    std::vector<float> mu = ved_encode(ckpt, rgb);
    f << nlohmann::json{{"id", e.id}, {"mu", mu}}.dump() << "\n";
  }
  std::cout << "wrote " << entries.size() << " embeddings to " << out << "\n";
  return 0;
}

// ---- eval --------------------------------------------------------------------

int cmd_eval_run(const std::string& pred_dir, const std::string& truth_dir,
                 const std::string& out) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(pred_dir)) {
    if (entry.path().extension() == ".json") names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("no grid metadata files in " + pred_dir);

  std::ofstream csv(out);
  if (!csv) throw std::runtime_error("cannot write " + out);
  csv << "id,mean_accuracy,mean_iou\n";
  std::vector<std::pair<GridMap, GridMap>> pairs;
  char buf[256];
  for (const auto& name : names) {
    GridMap pred = read_grid((fs::path(pred_dir) / name).string());
    GridMap truth = read_grid((fs::path(truth_dir) / name).string());
    ConfusionMatrix cm = confusion(pred, truth);
    if (cm.total() > 0) {
      std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g\n",
                    fs::path(name).replace_extension().string().c_str(), mean_accuracy(cm),
                    mean_iou(cm));
      csv << buf;
    }
    pairs.emplace_back(std::move(pred), std::move(truth));
  }
  SetMetrics m = evaluate_set(pairs);
  std::snprintf(buf, sizeof(buf), "mean,%.17g,%.17g\n", m.mean_accuracy, m.mean_iou);
  csv << buf;
  std::cout << "mean_accuracy " << m.mean_accuracy << " mean_iou " << m.mean_iou << " over "
            << m.samples_used << " samples (" << m.samples_skipped << " skipped)\n";
  return 0;
}

int cmd_eval_sweep(const std::string& method_name, const std::string& manifest_path,
                   const std::string& ckpt_path, const std::string& mapping_path,
                   const std::string& out) {
  const MapMethod method = method_from_name(method_name);
  auto entries = load_manifest(manifest_path);
  const std::string base = fs::path(manifest_path).parent_path().string();
  const ClassMapping mapping = read_class_mapping(mapping_path);
  Checkpoint ckpt;
  Checkpoint* ckpt_ptr = nullptr;
  if (method != MapMethod::kFlatplane) {
    if (ckpt_path.empty()) throw std::runtime_error("missing checkpoint for method " + method_name);
    ckpt = load_checkpoint(ckpt_path);
    if (method == MapMethod::kVedNoSampling && ckpt.config.sampling_enabled) {
      throw std::runtime_error("checkpoint was trained with sampling enabled");
    }
    ckpt_ptr = &ckpt;
  }
  auto rows = perturbation_sweep(method, entries, base, mapping, ckpt_ptr);
  write_sweep_csv(rows, out);
  std::cout << "wrote sweep table " << out << "\n";
  return 0;
}

// ---- pca ----------------------------------------------------------------------

std::vector<std::vector<float>> load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<float>> embeddings;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    embeddings.push_back(j.at("mu").get<std::vector<float>>());
  }
  return embeddings;
}

int cmd_pca_fit(const std::string& embeddings_path, const std::string& out) {
  PcaModel model = pca_fit(load_embeddings(embeddings_path));
  write_pca(model, out);
  std::cout << "wrote PCA model " << out << " (dim " << model.dim() << ")\n";
  return 0;
}

int cmd_pca_sweep(const std::string& ckpt_path, const std::string& pca_path, int axis,
                  const std::vector<double>& amounts, const std::string& out_dir,
                  const std::string& image_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  PcaModel pca = read_pca(pca_path);
  std::vector<float> base(pca.dim());
  if (!image_path.empty()) {
    base = ved_encode(ckpt, read_ppm(image_path));
  } else {
    for (std::size_t i = 0; i < pca.dim(); ++i) base[i] = static_cast<float>(pca.mean[i]);
  }
  fs::create_directories(out_dir);
  const int g = ckpt.config.grid_size;
  for (double amount : amounts) {
    std::vector<float> z = perturb_axis(base, pca, axis, amount);
    Tensor probs = ved_decode(ckpt, z);
    GridMap map(grid_spec_for(g));
    for (int i = 0; i < g; ++i) {
      for (int j = 0; j < g; ++j) {
        float best = -1.0f;
        std::uint8_t best_c = 0;
        for (int c = 0; c < kNumClasses; ++c) {
          const float p = probs.data()[(static_cast<std::size_t>(c) * g + i) * g + j];
          if (p > best) {
            best = p;
            best_c = static_cast<std::uint8_t>(c);
          }
        }
        map.cls(i, j) = best_c;
      }
    }
    char name[64];
    std::snprintf(name, sizeof(name), "axis%d_%+.3f.ppm", axis, amount);
    write_ppm(render_grid_image(map), (fs::path(out_dir) / name).string());
  }
  std::cout << "wrote " << amounts.size() << " decoded maps to " << out_dir << "\n";
  return 0;
}

// ---- render / bench -------------------------------------------------------------

int cmd_render_map(const std::string& grid_path, const std::string& out) {
  GridMap map = read_grid(grid_path);
  write_ppm(render_grid_image(map), out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_bench_infer(const std::string& ckpt_path, const std::string& config_arg, int n) {
  Checkpoint ckpt;
  if (!ckpt_path.empty()) {
    ckpt = load_checkpoint(ckpt_path);
  } else {
    ckpt.config = ved_config_from_arg(config_arg.empty() ? "desk" : config_arg);
    ckpt.params = ved_init(ckpt.config);
  }
  const VedConfig& cfg = ckpt.config;
  ImageU8 rgb(cfg.input_w, cfg.input_h, 3, 127);
  ved_infer(ckpt, rgb);  // warm-up
  std::vector<double> ms(n);
  for (int i = 0; i < n; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    ved_infer(ckpt, rgb);
    const auto t1 = std::chrono::steady_clock::now();
    ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::sort(ms.begin(), ms.end());
  double mean = 0;
  for (double v : ms) mean += v;
  mean /= n;
  const double median = ms[n / 2];
  std::cout << "input " << cfg.input_h << "x" << cfg.input_w << " grid " << cfg.grid_size
            << ": mean " << mean << " ms, median " << median << " ms, " << 1000.0 / mean
            << " Hz over " << n << " runs\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"front-view camera to top-view semantic occupancy grids"};
  app.require_subcommand(1);

  // synth gen
  auto* synth = app.add_subcommand("synth", "synthetic scene generation");
  synth->require_subcommand(1);
  auto* gen = synth->add_subcommand("gen", "generate a dataset with manifest");
  int gen_n = 1;
  std::string gen_out, gen_config;
  std::uint64_t gen_seed = 0;
  gen->add_option("--n", gen_n, "number of scenes")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "dataset seed")->required();
  gen->add_option("--config", gen_config, "generator config JSON");

  // gt build
  auto* gt = app.add_subcommand("gt", "weak ground truth");
  gt->require_subcommand(1);
  auto* gtb = gt->add_subcommand("build", "project labeled disparity into weak-GT grids");
  std::string gtb_manifest, gtb_rig, gtb_mapping, gtb_out;
  double gtb_ceiling = 0.0;
  gtb->add_option("--manifest", gtb_manifest)->required();
  gtb->add_option("--rig", gtb_rig)->required();
  gtb->add_option("--mapping", gtb_mapping)->required();
  gtb->add_option("--out", gtb_out)->required();
  auto* ceiling_opt = gtb->add_option("--ceiling", gtb_ceiling, "drop points above this height");

  // flatplane run
  auto* fp = app.add_subcommand("flatplane", "flat-plane monocular baseline");
  fp->require_subcommand(1);
  auto* fpr = fp->add_subcommand("run", "back-project ground labels through z=0");
  std::string fpr_manifest, fpr_rig, fpr_mapping, fpr_out;
  fpr->add_option("--manifest", fpr_manifest)->required();
  fpr->add_option("--rig", fpr_rig)->required();
  fpr->add_option("--mapping", fpr_mapping)->required();
  fpr->add_option("--out", fpr_out)->required();

  // ved train/infer/encode
  auto* ved = app.add_subcommand("ved", "variational encoder-decoder");
  ved->require_subcommand(1);
  auto* vt = ved->add_subcommand("train", "train a model from a manifest");
  std::string vt_manifest, vt_config = "desk", vt_out, vt_grids, vt_log;
  bool vt_nosampling = false;
  int vt_epochs = 60, vt_batch = 8;
  double vt_lr = 1e-4;
  std::uint64_t vt_seed = 0;
  vt->add_option("--manifest", vt_manifest)->required();
  vt->add_option("--config", vt_config, "desk|paper|compact or a JSON file");
  vt->add_option("--out", vt_out)->required();
  vt->add_flag("--no-sampling", vt_nosampling, "ablation: bypass variational sampling");
  vt->add_option("--epochs", vt_epochs);
  vt->add_option("--batch", vt_batch);
  vt->add_option("--lr", vt_lr);
  auto* seed_opt = vt->add_option("--seed", vt_seed, "overrides the config seed");
  vt->add_option("--grids-dir", vt_grids, "take target grids from this directory");
  vt->add_option("--log", vt_log, "epoch losses as JSON lines");

  auto* vi = ved->add_subcommand("infer", "predict a grid map for one image");
  std::string vi_ckpt, vi_image, vi_rig, vi_out;
  vi->add_option("--ckpt", vi_ckpt)->required();
  vi->add_option("--image", vi_image)->required();
  vi->add_option("--rig", vi_rig, "rig JSON for the evaluation mask");
  vi->add_option("--out", vi_out)->required();

  auto* ve = ved->add_subcommand("encode", "latent means for every manifest image");
  std::string ve_ckpt, ve_manifest, ve_out;
  ve->add_option("--ckpt", ve_ckpt)->required();
  ve->add_option("--manifest", ve_manifest)->required();
  ve->add_option("--out", ve_out)->required();

  // eval run/sweep
  auto* ev = app.add_subcommand("eval", "metrics and sweeps");
  ev->require_subcommand(1);
  auto* evr = ev->add_subcommand("run", "evaluate prediction grids against truth grids");
  std::string evr_pred, evr_truth, evr_out;
  evr->add_option("--pred-dir", evr_pred)->required();
  evr->add_option("--truth-dir", evr_truth)->required();
  evr->add_option("--out", evr_out)->required();

  auto* evs = ev->add_subcommand("sweep", "perturbation robustness table");
  std::string evs_method, evs_manifest, evs_ckpt, evs_mapping, evs_out;
  evs->add_option("--method", evs_method, "flatplane|ved|ved-no-sampling")->required();
  evs->add_option("--manifest", evs_manifest)->required();
  evs->add_option("--ckpt", evs_ckpt);
  evs->add_option("--mapping", evs_mapping)->required();
  evs->add_option("--out", evs_out)->required();

  // pca fit/sweep
  auto* pca = app.add_subcommand("pca", "latent analysis");
  pca->require_subcommand(1);
  auto* pf = pca->add_subcommand("fit", "principal axes of encoder embeddings");
  std::string pf_embeddings, pf_out;
  pf->add_option("--embeddings", pf_embeddings)->required();
  pf->add_option("--out", pf_out)->required();

  auto* ps = pca->add_subcommand("sweep", "decode perturbations along one principal axis");
  std::string ps_ckpt, ps_pca, ps_outdir, ps_image;
  int ps_axis = 0;
  std::vector<double> ps_amounts;
  ps->add_option("--ckpt", ps_ckpt)->required();
  ps->add_option("--pca", ps_pca)->required();
  ps->add_option("--axis", ps_axis)->required();
  ps->add_option("--amounts", ps_amounts, "perturbation values")->required()->delimiter(',');
  ps->add_option("--out-dir", ps_outdir)->required();
  ps->add_option("--image", ps_image, "seed latent from this image instead of the PCA mean");

  // render map
  auto* rn = app.add_subcommand("render", "visualization");
  rn->require_subcommand(1);
  auto* rm = rn->add_subcommand("map", "palette rendering of a grid file");
  std::string rm_grid, rm_out;
  rm->add_option("--grid", rm_grid)->required();
  rm->add_option("--out", rm_out)->required();

  // bench infer
  auto* bench = app.add_subcommand("bench", "performance");
  bench->require_subcommand(1);
  auto* bi = bench->add_subcommand("infer", "inference latency and rate");
  std::string bi_ckpt, bi_config;
  int bi_n = 100;
  bi->add_option("--ckpt", bi_ckpt, "trained checkpoint");
  bi->add_option("--config", bi_config, "desk|paper|compact or JSON (random weights)");
  bi->add_option("--n", bi_n, "number of timed runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_synth_gen(gen_n, gen_out, gen_seed, gen_config);
    if (gtb->parsed()) {
      return cmd_gt_build(gtb_manifest, gtb_rig, gtb_mapping, gtb_out,
                          ceiling_opt->count() ? std::optional<double>(gtb_ceiling)
                                               : std::nullopt);
    }
    if (fpr->parsed()) return cmd_flatplane_run(fpr_manifest, fpr_rig, fpr_mapping, fpr_out);
    if (vt->parsed()) {
      return cmd_ved_train(vt_manifest, vt_config, vt_out, vt_nosampling, vt_epochs, vt_batch,
                           vt_lr, vt_seed, seed_opt->count() > 0, vt_grids, vt_log);
    }
    if (vi->parsed()) return cmd_ved_infer(vi_ckpt, vi_image, vi_rig, vi_out);
    if (ve->parsed()) return cmd_ved_encode(ve_ckpt, ve_manifest, ve_out);
    if (evr->parsed()) return cmd_eval_run(evr_pred, evr_truth, evr_out);
    if (evs->parsed()) return cmd_eval_sweep(evs_method, evs_manifest, evs_ckpt, evs_mapping,
                                             evs_out);
    if (pf->parsed()) return cmd_pca_fit(pf_embeddings, pf_out);
    if (ps->parsed()) return cmd_pca_sweep(ps_ckpt, ps_pca, ps_axis, ps_amounts, ps_outdir,
                                           ps_image);
    if (rm->parsed()) return cmd_render_map(rm_grid, rm_out);
    if (bi->parsed()) return cmd_bench_infer(bi_ckpt, bi_config, bi_n);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 2;
}
