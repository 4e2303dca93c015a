#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridsight/adam.hpp"
#include "gridsight/grid.hpp"
#include "gridsight/grid_io.hpp"
#include "gridsight/image.hpp"
#include "gridsight/rng.hpp"
#include "gridsight/synth.hpp"
#include "gridsight/tensor.hpp"

namespace gridsight {

// Architecture and loss hyperparameters. The desk preset trains in minutes on
// a CPU; the paper preset reproduces the published input/latent/output
// dimensions for shape and throughput checks.
struct VedConfig {
  int input_h = 64;
  int input_w = 128;
  std::vector<int> encoder_widths{32, 64, 128, 256};
  int latent_dim = 128;
  int decoder_seed_ch = 256;
  int decoder_seed_hw = 4;
  std::vector<int> decoder_widths{128, 64, 32, 32};
  int grid_size = 64;
  double lambda1 = 0.1;
  double lambda2 = 0.9;
  bool sampling_enabled = true;
  std::uint64_t seed = 1;

  static VedConfig desk() { return VedConfig{}; }

  static VedConfig paper() {
    VedConfig c;
    c.input_h = 256;
    c.input_w = 512;
    c.encoder_widths = {64, 128, 256, 512, 512, 512};
    c.latent_dim = 512;
    c.decoder_seed_ch = 512;
    c.decoder_seed_hw = 4;
    c.decoder_widths = {512, 256, 128, 64};
    return c;
  }

  // Small variant for statistical multi-seed experiments and fast tests.
  static VedConfig compact() {
    VedConfig c;
    c.input_h = 32;
    c.input_w = 64;
    c.encoder_widths = {16, 32, 64, 128};
    c.latent_dim = 64;
    c.decoder_seed_ch = 128;
    c.decoder_seed_hw = 4;
    c.decoder_widths = {64, 32, 16, 16};
    return c;
  }

  void validate() const {
    if (std::abs(lambda1 + lambda2 - 1.0) > 1e-9) {
      throw std::invalid_argument("VedConfig: lambda1 + lambda2 must equal 1");
    }
    if (latent_dim < 1) throw std::invalid_argument("VedConfig: latent_dim must be >= 1");
    if (encoder_widths.empty() || decoder_widths.empty()) {
      throw std::invalid_argument("VedConfig: encoder/decoder widths must be nonempty");
    }
    int h = input_h, w = input_w;
    for (std::size_t i = 0; i < encoder_widths.size(); ++i) {
      if (encoder_widths[i] < 1) throw std::invalid_argument("VedConfig: bad encoder width");
      if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("VedConfig: input not divisible by encoder pooling");
      }
      h /= 2;
      w /= 2;
    }
    if (h < 1 || w < 1) throw std::invalid_argument("VedConfig: encoder collapses the input");
    int g = decoder_seed_hw;
    for (std::size_t i = 0; i < decoder_widths.size(); ++i) {
      if (decoder_widths[i] < 1) throw std::invalid_argument("VedConfig: bad decoder width");
      g *= 2;
    }
    if (g != grid_size) {
      throw std::invalid_argument("VedConfig: decoder output does not match grid_size");
    }
    if (decoder_seed_ch < 1 || decoder_seed_hw < 1) {
      throw std::invalid_argument("VedConfig: bad decoder seed");
    }
  }

  std::pair<int, int> encoder_out_hw() const {
    int h = input_h, w = input_w;
    for (std::size_t i = 0; i < encoder_widths.size(); ++i) {
      h /= 2;
      w /= 2;
    }
    return {h, w};
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"input_h", input_h},
                          {"input_w", input_w},
                          {"encoder_widths", encoder_widths},
                          {"latent_dim", latent_dim},
                          {"decoder_seed_ch", decoder_seed_ch},
                          {"decoder_seed_hw", decoder_seed_hw},
                          {"decoder_widths", decoder_widths},
                          {"grid_size", grid_size},
                          {"lambda1", lambda1},
                          {"lambda2", lambda2},
                          {"sampling_enabled", sampling_enabled},
                          {"seed", seed}};
  }

  static VedConfig from_json(const nlohmann::json& j) {
    VedConfig c;
    c.input_h = j.value("input_h", c.input_h);
    c.input_w = j.value("input_w", c.input_w);
    if (j.contains("encoder_widths")) c.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.decoder_seed_ch = j.value("decoder_seed_ch", c.decoder_seed_ch);
    c.decoder_seed_hw = j.value("decoder_seed_hw", c.decoder_seed_hw);
    if (j.contains("decoder_widths")) c.decoder_widths = j.at("decoder_widths").get<std::vector<int>>();
    c.grid_size = j.value("grid_size", c.grid_size);
    c.lambda1 = j.value("lambda1", c.lambda1);
    c.lambda2 = j.value("lambda2", c.lambda2);
    c.sampling_enabled = j.value("sampling_enabled", c.sampling_enabled);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

// Named parameter tensors plus batchnorm running statistics.
struct VedParams {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, BnStats> bn;

  Tensor& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::invalid_argument("VedParams: unknown tensor " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::invalid_argument("VedParams: unknown tensor " + name);
    return it->second;
  }
};

namespace detail {

inline void add_conv(VedParams& p, Rng& rng, const std::string& prefix, int cin, int cout,
                     bool with_bn = true) {
  const float std = std::sqrt(2.0f / (cin * 9));
  p.tensors[prefix + ".w"] = Tensor::randn({cout, cin, 3, 3}, rng, std, true);
  p.tensors[prefix + ".b"] = Tensor::zeros({cout}, true);
  if (with_bn) {
    p.tensors[prefix + ".bn.gamma"] = Tensor::full({cout}, 1.0f, true);
    p.tensors[prefix + ".bn.beta"] = Tensor::zeros({cout}, true);
    p.bn.emplace(prefix + ".bn", BnStats(cout));
  }
}

inline void add_upconv(VedParams& p, Rng& rng, const std::string& prefix, int cin, int cout) {
  const float std = std::sqrt(2.0f / cin);
  p.tensors[prefix + ".w"] = Tensor::randn({cin, cout, 2, 2}, rng, std, true);
  p.tensors[prefix + ".b"] = Tensor::zeros({cout}, true);
  p.tensors[prefix + ".bn.gamma"] = Tensor::full({cout}, 1.0f, true);
  p.tensors[prefix + ".bn.beta"] = Tensor::zeros({cout}, true);
  p.bn.emplace(prefix + ".bn", BnStats(cout));
}

inline void add_linear(VedParams& p, Rng& rng, const std::string& prefix, int din, int dout) {
  const float std = std::sqrt(2.0f / din);
  p.tensors[prefix + ".w"] = Tensor::randn({din, dout}, rng, std, true);
  p.tensors[prefix + ".b"] = Tensor::zeros({dout}, true);
}

inline Tensor conv_bn_relu(VedParams& p, const std::string& prefix, const Tensor& x,
                           bool training) {
  Tensor y = conv2d(x, p.at(prefix + ".w"), p.at(prefix + ".b"));
  y = batchnorm(y, p.at(prefix + ".bn.gamma"), p.at(prefix + ".bn.beta"),
                p.bn.at(prefix + ".bn"), training);
  return relu(y);
}

}  // namespace detail

// Fresh parameters drawn from the config seed; identical seeds give
// bit-identical initializations.
inline VedParams ved_init(const VedConfig& config) {
  config.validate();
  VedParams p;
  Rng rng(config.seed);
  int cin = 3;
  for (std::size_t i = 0; i < config.encoder_widths.size(); ++i) {
    const int cout = config.encoder_widths[i];
    detail::add_conv(p, rng, "enc" + std::to_string(i) + ".conv0", cin, cout);
    detail::add_conv(p, rng, "enc" + std::to_string(i) + ".conv1", cout, cout);
    cin = cout;
  }
  auto [eh, ew] = config.encoder_out_hw();
  const int flat = cin * eh * ew;
  detail::add_linear(p, rng, "enc_mu", flat, config.latent_dim);
  detail::add_linear(p, rng, "enc_logvar", flat, config.latent_dim);
  detail::add_linear(p, rng, "dec_seed", config.latent_dim,
                     config.decoder_seed_ch * config.decoder_seed_hw * config.decoder_seed_hw);
  cin = config.decoder_seed_ch;
  for (std::size_t i = 0; i < config.decoder_widths.size(); ++i) {
    const int cout = config.decoder_widths[i];
    detail::add_upconv(p, rng, "dec" + std::to_string(i) + ".up", cin, cout);
    detail::add_conv(p, rng, "dec" + std::to_string(i) + ".conv0", cout, cout);
    detail::add_conv(p, rng, "dec" + std::to_string(i) + ".conv1", cout, cout);
    cin = cout;
  }
  detail::add_conv(p, rng, "out", cin, kNumClasses, /*with_bn=*/false);
  return p;
}

struct VedOutput {
  Tensor logits;  // N,4,G,G — pre-softmax, feeds the mapping loss
  Tensor probs;   // N,4,G,G — softmax over channels, detached
  Tensor mu;      // N,L
  Tensor logvar;  // N,L
};

// Full differentiable pass. Train mode with sampling draws z = mu +
// exp(0.5 logvar) * eps from rng; eval mode (or sampling disabled) uses
// z = mu.
inline VedOutput ved_forward(VedParams& params, const VedConfig& config, const Tensor& images,
                             bool training, Rng* rng = nullptr) {
  config.validate();
  if (images.ndim() != 4 || images.dim(1) != 3 || images.dim(2) != config.input_h ||
      images.dim(3) != config.input_w) {
    throw std::invalid_argument("ved_forward: image batch does not match config input size");
  }
  const std::int64_t N = images.dim(0);

  Tensor x = images;
  for (std::size_t i = 0; i < config.encoder_widths.size(); ++i) {
    const std::string b = "enc" + std::to_string(i);
    x = detail::conv_bn_relu(params, b + ".conv0", x, training);
    x = detail::conv_bn_relu(params, b + ".conv1", x, training);
    x = maxpool2(x);
  }
  auto [eh, ew] = config.encoder_out_hw();
  const std::int64_t flat = config.encoder_widths.back() * static_cast<std::int64_t>(eh) * ew;
  Tensor features = reshape(x, {N, flat});

  Tensor mu = linear(features, params.at("enc_mu.w"), params.at("enc_mu.b"));
  Tensor logvar = linear(features, params.at("enc_logvar.w"), params.at("enc_logvar.b"));

  Tensor z = mu;
  if (training && config.sampling_enabled) {
    if (rng == nullptr) {
      throw std::invalid_argument("ved_forward: sampling in train mode requires an rng");
    }
    Tensor eps = Tensor::randn({N, config.latent_dim}, *rng);
    z = add(mu, mul(texp(scale(logvar, 0.5)), eps));
  }

  Tensor seed = relu(linear(z, params.at("dec_seed.w"), params.at("dec_seed.b")));
  Tensor d = reshape(seed, {N, config.decoder_seed_ch, config.decoder_seed_hw,
                            config.decoder_seed_hw});
  for (std::size_t i = 0; i < config.decoder_widths.size(); ++i) {
    const std::string b = "dec" + std::to_string(i);
    Tensor up = upconv2(d, params.at(b + ".up.w"), params.at(b + ".up.b"));
    up = batchnorm(up, params.at(b + ".up.bn.gamma"), params.at(b + ".up.bn.beta"),
                   params.bn.at(b + ".up.bn"), training);
    d = relu(up);
    d = detail::conv_bn_relu(params, b + ".conv0", d, training);
    d = detail::conv_bn_relu(params, b + ".conv1", d, training);
  }
  Tensor logits = conv2d(d, params.at("out.w"), params.at("out.b"));

  const auto finite = [](const Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      if (!std::isfinite(t.data()[i])) return false;
    }
    return true;
  };
  if (!finite(logits) || !finite(mu) || !finite(logvar)) {
    throw std::runtime_error("ved_forward: non-finite activations");
  }

  VedOutput out;
  out.logits = logits;
  out.probs = softmax_channels(logits);
  out.mu = mu;
  out.logvar = logvar;
  return out;
}

// Eq.-style composite objective: lambda1 * KL + lambda2 * CE, with the CE fed
// pre-softmax logits.
inline Tensor ved_loss(const VedOutput& out, const Tensor& target_onehot, double lambda1,
                       double lambda2) {
  Tensor ce = softmax_ce(out.logits, target_onehot);
  Tensor kl = kl_diag_gaussian(out.mu, out.logvar);
  return add(scale(kl, lambda1), scale(ce, lambda2));
}

// ---- checkpoint I/O -------------------------------------------------------

struct Checkpoint {
  VedConfig config;
  VedParams params;
  nlohmann::json final_metrics = nlohmann::json::object();
};

namespace detail {

inline void write_u32(std::ofstream& out, std::uint32_t v) {
  std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                       static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
  std::uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw std::runtime_error("truncated checkpoint " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_record(std::ofstream& out, const std::string& name, const Shape& shape,
                         const std::vector<float>& data) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::int64_t d : shape) write_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(sizeof(float) * data.size()));
}

}  // namespace detail

inline constexpr char kCheckpointMagic[9] = "VEDCKPT1";

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(kCheckpointMagic, 8);
  nlohmann::json header = {{"config", ckpt.config.to_json()}, {"final", ckpt.final_metrics}};
  const std::string header_str = header.dump();
  detail::write_u32(out, static_cast<std::uint32_t>(header_str.size()));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, tensor] : ckpt.params.tensors) {
    detail::write_record(out, name, tensor.shape(), tensor.vec());
  }
  for (const auto& [name, stats] : ckpt.params.bn) {
    const Shape s{static_cast<std::int64_t>(stats.mean.size())};
    detail::write_record(out, name + ".running_mean", s, stats.mean);
    detail::write_record(out, name + ".running_var", s, stats.var);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("not a VED checkpoint: " + path);
  }
  const std::uint32_t header_len = detail::read_u32(in, path);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), header_len);
  if (in.gcount() != static_cast<std::streamsize>(header_len)) {
    throw std::runtime_error("truncated checkpoint " + path);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint header in " + path + ": " + e.what());
  }

  Checkpoint ckpt;
  ckpt.config = VedConfig::from_json(header.at("config"));
  ckpt.final_metrics = header.value("final", nlohmann::json::object());

  while (true) {
    std::uint8_t peek;
    in.read(reinterpret_cast<char*>(&peek), 1);
    if (in.gcount() != 1) break;
    in.putback(static_cast<char>(peek));
    const std::uint32_t name_len = detail::read_u32(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rank = detail::read_u32(in, path);
    Shape shape(rank);
    std::int64_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape[r] = detail::read_u32(in, path);
      numel *= shape[r];
    }
    std::vector<float> data(static_cast<std::size_t>(numel));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(sizeof(float) * data.size()));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(float) * data.size())) {
      throw std::runtime_error("truncated checkpoint " + path);
    }
    const auto ends_with = [&name](const char* suffix) {
      const std::size_t n = std::strlen(suffix);
      return name.size() > n && name.compare(name.size() - n, n, suffix) == 0;
    };
    if (ends_with(".running_mean")) {
      const std::string bn_name = name.substr(0, name.size() - std::strlen(".running_mean"));
      auto [it, _] = ckpt.params.bn.try_emplace(bn_name, BnStats(numel));
      it->second.mean = std::move(data);
    } else if (ends_with(".running_var")) {
      const std::string bn_name = name.substr(0, name.size() - std::strlen(".running_var"));
      auto [it, _] = ckpt.params.bn.try_emplace(bn_name, BnStats(numel));
      it->second.var = std::move(data);
    } else {
      ckpt.params.tensors[name] = Tensor::from_data(std::move(shape), std::move(data), true);
    }
  }
  return ckpt;
}

// ---- training ------------------------------------------------------------

struct TrainOptions {
  int epochs = 60;
  int batch_size = 8;
  double lr = 1e-4;       // paper optimizer setting
  std::string log_path;   // JSON lines per epoch when set
  std::string grids_dir;  // substitute directory for the target grids
};

struct EpochLoss {
  double total = 0, latent = 0, mapping = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLoss> curve;
};

// Converts a camera image to a network input tensor in [0, 1].
inline std::vector<float> image_to_input(const ImageU8& rgb, int in_h, int in_w) {
  if (rgb.channels != 3) throw std::invalid_argument("image_to_input: RGB image required");
  ImageU8 scaled;
  if (rgb.width == in_w && rgb.height == in_h) {
    scaled = rgb;
  } else if (rgb.width % in_w == 0 && rgb.height % in_h == 0 &&
             rgb.width / in_w == rgb.height / in_h) {
    scaled = downscale_box(rgb, rgb.width / in_w);
  } else {
    scaled = resize(rgb, in_w, in_h, Interp::kBilinear);
  }
  std::vector<float> out(static_cast<std::size_t>(3) * in_h * in_w);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < in_h; ++y) {
      for (int x = 0; x < in_w; ++x) {
        out[(static_cast<std::size_t>(c) * in_h + y) * in_w + x] = scaled.at(y, x, c) / 255.0f;
      }
    }
  }
  return out;
}

// One-hot target over every cell; out-of-FOV cells are included.
inline std::vector<float> grid_to_onehot(const GridMap& map) {
  const int g = map.spec.rows;
  std::vector<float> out(static_cast<std::size_t>(kNumClasses) * g * g, 0.0f);
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      out[(static_cast<std::size_t>(map.cls(i, j)) * g + i) * g + j] = 1.0f;
    }
  }
  return out;
}

inline TrainResult ved_train(const std::vector<ManifestEntry>& entries,
                             const std::string& base_dir, const VedConfig& config,
                             const TrainOptions& opts) {
  config.validate();
  if (entries.empty()) throw std::invalid_argument("ved_train: empty manifest");
  if (opts.batch_size < 2) throw std::invalid_argument("ved_train: batch_size must be >= 2");
  if (static_cast<int>(entries.size()) < opts.batch_size) {
    throw std::invalid_argument("ved_train: fewer samples than one batch");
  }
  namespace fs = std::filesystem;

  // Preload the full dataset; desk-scale sets fit comfortably in memory.
  const std::size_t in_sz = static_cast<std::size_t>(3) * config.input_h * config.input_w;
  const std::size_t out_sz =
      static_cast<std::size_t>(kNumClasses) * config.grid_size * config.grid_size;
  std::vector<std::vector<float>> inputs(entries.size());
  std::vector<std::vector<float>> targets(entries.size());
  for (std::size_t s = 0; s < entries.size(); ++s) {
    const ImageU8 rgb = read_ppm((fs::path(base_dir) / entries[s].rgb).string());
    inputs[s] = image_to_input(rgb, config.input_h, config.input_w);
    std::string grid_path = (fs::path(base_dir) / entries[s].true_grid).string();
    if (!opts.grids_dir.empty()) {
      grid_path = (fs::path(opts.grids_dir) / fs::path(entries[s].true_grid).filename()).string();
    }
    const GridMap grid = read_grid(grid_path);
    if (grid.spec.rows != config.grid_size || grid.spec.cols != config.grid_size) {
      throw std::invalid_argument("ved_train: grid size does not match config for " +
                                  entries[s].id);
    }
    targets[s] = grid_to_onehot(grid);
  }

  VedParams params = ved_init(config);
  AdamState adam;  // beta/eps stay at the paper settings
  adam.cfg.lr = static_cast<float>(opts.lr);
  Rng rng(config.seed ^ 0x5eedULL);
  // Ablation contract: disabling sampling also removes the KL pressure.
  const double lambda1 = config.sampling_enabled ? config.lambda1 : 0.0;
  const double lambda2 = config.lambda2;

  std::ofstream log;
  if (!opts.log_path.empty()) {
    log.open(opts.log_path);
    if (!log) throw std::runtime_error("cannot write " + opts.log_path);
  }

  std::vector<int> order(entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  const int batches = static_cast<int>(entries.size()) / opts.batch_size;

  TrainResult result;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(order);
    EpochLoss acc;
    for (int bi = 0; bi < batches; ++bi) {
      const int bs = opts.batch_size;
      Tensor batch = Tensor::zeros({bs, 3, config.input_h, config.input_w});
      Tensor target = Tensor::zeros({bs, kNumClasses, config.grid_size, config.grid_size});
      for (int k = 0; k < bs; ++k) {
        const int s = order[static_cast<std::size_t>(bi) * bs + k];
        std::memcpy(batch.data() + static_cast<std::size_t>(k) * in_sz, inputs[s].data(),
                    sizeof(float) * in_sz);
        std::memcpy(target.data() + static_cast<std::size_t>(k) * out_sz, targets[s].data(),
                    sizeof(float) * out_sz);
      }

      VedOutput out = ved_forward(params, config, batch, /*training=*/true, &rng);
      Tensor ce = softmax_ce(out.logits, target);
      Tensor kl = kl_diag_gaussian(out.mu, out.logvar);
      Tensor loss = add(scale(kl, lambda1), scale(ce, lambda2));
      if (!std::isfinite(loss.item())) {
        throw std::runtime_error("ved_train: non-finite loss at epoch " + std::to_string(epoch) +
                                 " batch " + std::to_string(bi));
      }
      acc.total += loss.item();
      acc.latent += kl.item();
      acc.mapping += ce.item();

      backward(loss);
      adam.step(params.tensors);
      for (auto& [name, t] : params.tensors) t.zero_grad();
    }
    acc.total /= batches;
    acc.latent /= batches;
    acc.mapping /= batches;
    result.curve.push_back(acc);
    if (log.is_open()) {
      log << nlohmann::json{{"epoch", epoch},
                            {"loss", acc.total},
                            {"latent_loss", acc.latent},
                            {"mapping_loss", acc.mapping}}
                 .dump()
          << "\n";
    }
  }

  result.checkpoint.config = config;
  result.checkpoint.params = std::move(params);
  if (!result.curve.empty()) {
    const EpochLoss& last = result.curve.back();
    result.checkpoint.final_metrics = {{"loss", last.total},
                                       {"latent_loss", last.latent},
                                       {"mapping_loss", last.mapping},
                                       {"epochs", opts.epochs}};
  }
  return result;
}

// ---- inference -------------------------------------------------------------

inline GridSpec grid_spec_for(int grid_size) {
  GridSpec spec;
  spec.rows = spec.cols = grid_size;
  spec.cell_size_m = 32.0 / grid_size;  // fixed 32 x 32 m footprint
  spec.x_offset_m = 5.0;
  return spec;
}

// Eval-mode forward with z = mu; per-cell argmax with ties to the lower
// class id. The eval mask comes from the caller (typically fov_mask).
inline GridMap ved_infer(Checkpoint& ckpt, const ImageU8& rgb,
                         const std::vector<std::uint8_t>* eval_mask = nullptr) {
  NoGradGuard no_grad;
  const VedConfig& cfg = ckpt.config;
  std::vector<float> input = image_to_input(rgb, cfg.input_h, cfg.input_w);
  Tensor batch = Tensor::from_data({1, 3, cfg.input_h, cfg.input_w}, std::move(input));
  VedOutput out = ved_forward(ckpt.params, cfg, batch, /*training=*/false);

  GridMap map(grid_spec_for(cfg.grid_size));
  const int g = cfg.grid_size;
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      float best = -1.0f;
      std::uint8_t best_c = 0;
      for (int c = 0; c < kNumClasses; ++c) {
        const float p = out.probs.data()[(static_cast<std::size_t>(c) * g + i) * g + j];
        if (p > best) {
          best = p;
          best_c = static_cast<std::uint8_t>(c);
        }
      }
      map.cls(i, j) = best_c;
    }
  }
  if (eval_mask != nullptr) {
    if (eval_mask->size() != map.eval_mask.size()) {
      throw std::invalid_argument("ved_infer: eval mask size mismatch");
    }
    map.eval_mask = *eval_mask;
  }
  return map;
}

// Eval-mode encoder only; returns the latent mean.
inline std::vector<float> ved_encode(Checkpoint& ckpt, const ImageU8& rgb) {
  NoGradGuard no_grad;
  const VedConfig& cfg = ckpt.config;
  VedParams& params = ckpt.params;
  std::vector<float> input = image_to_input(rgb, cfg.input_h, cfg.input_w);
  Tensor x = Tensor::from_data({1, 3, cfg.input_h, cfg.input_w}, std::move(input));
  for (std::size_t i = 0; i < cfg.encoder_widths.size(); ++i) {
    const std::string b = "enc" + std::to_string(i);
    x = detail::conv_bn_relu(params, b + ".conv0", x, false);
    x = detail::conv_bn_relu(params, b + ".conv1", x, false);
    x = maxpool2(x);
  }
  auto [eh, ew] = cfg.encoder_out_hw();
  Tensor features = reshape(x, {1, cfg.encoder_widths.back() * static_cast<std::int64_t>(eh) * ew});
  Tensor mu = linear(features, params.at("enc_mu.w"), params.at("enc_mu.b"));
  return mu.vec();
}

// Decode an arbitrary latent vector to class probabilities (latent analysis).
inline Tensor ved_decode(Checkpoint& ckpt, const std::vector<float>& z_values) {
  NoGradGuard no_grad;
  const VedConfig& cfg = ckpt.config;
  VedParams& params = ckpt.params;
  if (static_cast<int>(z_values.size()) != cfg.latent_dim) {
    throw std::invalid_argument("ved_decode: latent size mismatch");
  }
  Tensor z = Tensor::from_data({1, cfg.latent_dim}, std::vector<float>(z_values));
  Tensor seed = relu(linear(z, params.at("dec_seed.w"), params.at("dec_seed.b")));
  Tensor d = reshape(seed, {1, cfg.decoder_seed_ch, cfg.decoder_seed_hw, cfg.decoder_seed_hw});
  for (std::size_t i = 0; i < cfg.decoder_widths.size(); ++i) {
    const std::string b = "dec" + std::to_string(i);
    Tensor up = upconv2(d, params.at(b + ".up.w"), params.at(b + ".up.b"));
    up = batchnorm(up, params.at(b + ".up.bn.gamma"), params.at(b + ".up.bn.beta"),
                   params.bn.at(b + ".up.bn"), false);
    d = relu(up);
    d = detail::conv_bn_relu(params, b + ".conv0", d, false);
    d = detail::conv_bn_relu(params, b + ".conv1", d, false);
  }
  Tensor logits = conv2d(d, params.at("out.w"), params.at("out.b"));
  return softmax_channels(logits);
}

}  // namespace gridsight
