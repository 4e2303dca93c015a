#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "gridsight/grid_io.hpp"
#include "gridsight/image.hpp"
#include "gridsight/sweep.hpp"
#include "gridsight/synth.hpp"
#include "test_util.hpp"

using namespace gridsight;

namespace {

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(GRIDSIGHT_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string output;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe) != nullptr) output += buf;
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, output};
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Small generator config so CLI runs stay fast.
std::string write_small_gen_config(const testutil::TempDir& tmp) {
  nlohmann::json rig = rig_to_json(
      CameraRig::level(Intrinsics{300.0, 300.0, 128.0, 32.0, 256, 128}, 0.22, 1.7));
  nlohmann::json cfg = {{"image_width", 256}, {"image_height", 128}, {"rig", rig}};
  const std::string path = tmp.str("gen.json");
  std::ofstream out(path);
  out << cfg.dump();
  return path;
}

}  // namespace

TEST_CASE("cli: argument errors exit 2, module errors exit 1") {
  CHECK(run_cli("synth gen --bogus").exit_code == 2);
  CHECK(run_cli("nonsense").exit_code == 2);
  RunResult missing = run_cli("render map --grid /nonexistent/g.json --out /tmp/x.ppm");
  CHECK(missing.exit_code == 1);
  CHECK(missing.output.find("error:") != std::string::npos);
}

TEST_CASE("cli: synth gen is deterministic and feeds the downstream pipeline") {
  testutil::TempDir tmp("cli");
  const std::string gen_cfg = write_small_gen_config(tmp);

  RunResult a = run_cli("synth gen --n 3 --seed 7 --out " + tmp.str("a") + " --config " + gen_cfg);
  REQUIRE(a.exit_code == 0);
  RunResult b = run_cli("synth gen --n 3 --seed 7 --out " + tmp.str("b") + " --config " + gen_cfg);
  REQUIRE(b.exit_code == 0);
  CHECK(file_bytes(tmp.str("a/manifest.jsonl")) == file_bytes(tmp.str("b/manifest.jsonl")));
  CHECK(file_bytes(tmp.str("a/scene_0001_rgb.ppm")) == file_bytes(tmp.str("b/scene_0001_rgb.ppm")));
  CHECK(file_bytes(tmp.str("a/scene_0002_grid.pgm")) == file_bytes(tmp.str("b/scene_0002_grid.pgm")));

  SUBCASE("gt build and flatplane run emit grids named after the truth grids") {
    RunResult gt = run_cli("gt build --manifest " + tmp.str("a/manifest.jsonl") + " --rig " +
                           tmp.str("a/rig.json") + " --mapping " + tmp.str("a/mapping.json") +
                           " --out " + tmp.str("weak"));
    REQUIRE(gt.exit_code == 0);
    CHECK(std::filesystem::exists(tmp.str("weak/scene_0000_grid.json")));
    CHECK(std::filesystem::exists(tmp.str("weak/scene_0002_grid.pgm")));

    RunResult fp = run_cli("flatplane run --manifest " + tmp.str("a/manifest.jsonl") + " --rig " +
                           tmp.str("a/rig.json") + " --mapping " + tmp.str("a/mapping.json") +
                           " --out " + tmp.str("flat"));
    REQUIRE(fp.exit_code == 0);

    // Self-evaluation of the truth grids gives perfect metrics.
    std::filesystem::create_directories(tmp.str("truth"));
    for (int i = 0; i < 3; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "scene_%04d_grid", i);
      GridMap g = read_grid(tmp.str("a/") + name + ".json");
      write_grid(g, tmp.str("truth/") + name);
    }
    RunResult ev = run_cli("eval run --pred-dir " + tmp.str("truth") + " --truth-dir " +
                           tmp.str("truth") + " --out " + tmp.str("eval.csv"));
    REQUIRE(ev.exit_code == 0);
    const std::string csv = file_bytes(tmp.str("eval.csv"));
    CHECK(csv.find("mean,1,1") != std::string::npos);
  }
}

TEST_CASE("cli: render map uses the fixed palette with mask darkening") {
  testutil::TempDir tmp("render");
  GridMap map((GridSpec()));
  map.cls(0, 0) = kClassRoad;
  map.cls(0, 1) = kClassSidewalk;
  map.cls(0, 2) = kClassTerrain;
  map.mask(0, 3) = 0;
  map.cls(0, 3) = kClassRoad;
  write_grid(map, tmp.str("g"));
  RunResult r = run_cli("render map --grid " + tmp.str("g.json") + " --out " + tmp.str("g.ppm"));
  REQUIRE(r.exit_code == 0);
  ImageU8 img = read_ppm(tmp.str("g.ppm"));
  CHECK(img.at(0, 0, 0) == 128);  // road purple
  CHECK(img.at(0, 0, 1) == 64);
  CHECK(img.at(0, 1, 0) == 244);  // sidewalk pink
  CHECK(img.at(0, 2, 1) == 251);  // terrain green
  CHECK(img.at(0, 3, 0) == 64);   // masked road darkened 50%
  CHECK(img.at(0, 63, 0) == 0);   // class 0 black
}

TEST_CASE("cli: train, infer, encode, pca, sweep, and bench run end to end") {
  testutil::TempDir tmp("cli_e2e");
  const std::string gen_cfg = write_small_gen_config(tmp);
  REQUIRE(run_cli("synth gen --n 8 --seed 3 --out " + tmp.str("d") + " --config " + gen_cfg)
              .exit_code == 0);

  // Tiny training configuration keeps this test in seconds.
  {
    nlohmann::json cfg = VedConfig::compact().to_json();
    std::ofstream out(tmp.str("ved.json"));
    out << cfg.dump();
  }
  RunResult train = run_cli("ved train --manifest " + tmp.str("d/manifest.jsonl") +
                            " --config " + tmp.str("ved.json") + " --epochs 2 --batch 4" +
                            " --seed 5 --out " + tmp.str("m.ckpt"));
  REQUIRE(train.exit_code == 0);

  SUBCASE("checkpoint determinism across reruns") {
    RunResult again = run_cli("ved train --manifest " + tmp.str("d/manifest.jsonl") +
                              " --config " + tmp.str("ved.json") + " --epochs 2 --batch 4" +
                              " --seed 5 --out " + tmp.str("m2.ckpt"));
    REQUIRE(again.exit_code == 0);
    CHECK(file_bytes(tmp.str("m.ckpt")) == file_bytes(tmp.str("m2.ckpt")));
  }

  SUBCASE("infer writes a grid pair") {
    RunResult infer = run_cli("ved infer --ckpt " + tmp.str("m.ckpt") + " --image " +
                              tmp.str("d/scene_0000_rgb.ppm") + " --rig " + tmp.str("d/rig.json") +
                              " --out " + tmp.str("pred"));
    REQUIRE(infer.exit_code == 0);
    GridMap pred = read_grid(tmp.str("pred.json"));
    CHECK(pred.spec.rows == 64);
  }

  SUBCASE("encode, pca fit, pca sweep") {
    RunResult enc = run_cli("ved encode --ckpt " + tmp.str("m.ckpt") + " --manifest " +
                            tmp.str("d/manifest.jsonl") + " --out " + tmp.str("emb.jsonl"));
    REQUIRE(enc.exit_code == 0);
    RunResult fit = run_cli("pca fit --embeddings " + tmp.str("emb.jsonl") + " --out " +
                            tmp.str("pca.json"));
    REQUIRE(fit.exit_code == 0);
    RunResult sweep = run_cli("pca sweep --ckpt " + tmp.str("m.ckpt") + " --pca " +
                              tmp.str("pca.json") + " --axis 0 --amounts -2,0,2 --out-dir " +
                              tmp.str("pca_maps"));
    REQUIRE(sweep.exit_code == 0);
    int maps = 0;
    for (const auto& e : std::filesystem::directory_iterator(tmp.str("pca_maps"))) {
      CHECK(e.path().extension() == ".ppm");
      ++maps;
    }
    CHECK(maps == 3);
  }

  SUBCASE("eval sweep emits the declared CSV schema and round-trips") {
    RunResult sweep = run_cli("eval sweep --method flatplane --manifest " +
                              tmp.str("d/manifest.jsonl") + " --mapping " +
                              tmp.str("d/mapping.json") + " --out " + tmp.str("sweep.csv"));
    REQUIRE(sweep.exit_code == 0);
    auto rows = read_sweep_csv(tmp.str("sweep.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].perturbation == "none");
    CHECK(rows[0].acc_downgrade == 0.0);
    CHECK(rows[1].perturbation == "pitch+-1.5");
    CHECK(rows[2].perturbation == "roll+-5");
    // Writing the parsed rows back reproduces the file byte for byte.
    write_sweep_csv(rows, tmp.str("sweep2.csv"));
    CHECK(file_bytes(tmp.str("sweep.csv")) == file_bytes(tmp.str("sweep2.csv")));
  }

  SUBCASE("bench infer reports a rate") {
    RunResult bench = run_cli("bench infer --ckpt " + tmp.str("m.ckpt") + " --n 3");
    REQUIRE(bench.exit_code == 0);
    CHECK(bench.output.find("Hz") != std::string::npos);
  }
}
