#pragma once

#include <optional>

#include "json.hpp"
#include "vrn/guidance.hpp"
#include "vrn/isosurface.hpp"
#include "vrn/nn/checkpoint.hpp"
#include "vrn/nn/gradcheck.hpp"
#include "vrn/synthetic.hpp"

namespace vrn {

struct ConfigError : Error { using Error::Error; };

// vrn            RGB -> volume, two hourglasses in sequence
// vrn-guided     RGB + 68 landmark heatmaps -> volume, same trunk
// vrn-multitask  RGB -> shared hourglass forking into a volume hourglass and
//                a landmark-heatmap hourglass
// vrn-frontal    as vrn, trained on volumes in the canonical orientation
struct ModelConfig {
  std::string variant = "vrn";
  int input_size = 64;     // square input, equal to volume width/height
  int volume_depth = 36;   // output channels of the volume head
  int features = 32;
  int hourglass_depth = 2;
  double guidance_sigma = 1.0;
  double branch_gain = 0.5;  // init scale of the last conv in each residual branch
  std::uint64_t init_seed = 1;
  VolumeMeta meta = synthetic_meta(64, 36);

  bool guided() const { return variant == "vrn-guided"; }
  bool multitask() const { return variant == "vrn-multitask"; }
  bool frontal() const { return variant == "vrn-frontal"; }
  int input_channels() const { return guided() ? 3 + kNumLandmarks : 3; }
  int hourglasses() const { return multitask() ? 3 : 2; }

  void validate() const {
    if (variant != "vrn" && variant != "vrn-guided" && variant != "vrn-multitask" && variant != "vrn-frontal")
      throw ConfigError("unknown model variant '" + variant + "'");
    if (features < 2 || volume_depth < 2 || hourglass_depth < 1) throw ConfigError("model sizes must be positive");
    const int f = 1 << (hourglass_depth + 1);
    if (input_size < f || input_size % f != 0)
      throw ConfigError("input_size " + std::to_string(input_size) + " must be a multiple of " + std::to_string(f));
    if (int(meta.width) != input_size || int(meta.height) != input_size || int(meta.depth) != volume_depth)
      throw ConfigError("volume meta does not match input_size x input_size x volume_depth");
    if (!(guidance_sigma > 0)) throw ConfigError("guidance_sigma must be > 0");
    meta.check();
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"variant", c.variant},
                     {"input_size", c.input_size},
                     {"input_channels", c.input_channels()},
                     {"hourglasses", c.hourglasses()},
                     {"volume_depth", c.volume_depth},
                     {"features", c.features},
                     {"hourglass_depth", c.hourglass_depth},
                     {"guidance_sigma", c.guidance_sigma},
                     {"branch_gain", c.branch_gain},
                     {"init_seed", c.init_seed},
                     {"volume",
                      {{"pixel_pitch", c.meta.pixel_pitch},
                       {"depth_pitch", c.meta.depth_pitch},
                       {"origin", {c.meta.origin.x(), c.meta.origin.y(), c.meta.origin.z()}}}}};
}

// Unknown keys are rejected; input_channels and hourglasses are derived from
// the variant and, when present, must agree with it.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"variant",         "input_size",     "input_channels", "hourglasses",
                                              "volume_depth",    "features",       "hourglass_depth", "guidance_sigma",
                                              "branch_gain",     "init_seed",      "volume"};
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw ConfigError("unknown model config key '" + k + "'");
  ModelConfig c;
  try {
    c.variant = j.value("variant", c.variant);
    c.input_size = j.value("input_size", c.input_size);
    c.volume_depth = j.value("volume_depth", c.volume_depth);
    c.features = j.value("features", c.features);
    c.hourglass_depth = j.value("hourglass_depth", c.hourglass_depth);
    c.guidance_sigma = j.value("guidance_sigma", c.guidance_sigma);
    c.branch_gain = j.value("branch_gain", c.branch_gain);
    c.init_seed = j.value("init_seed", c.init_seed);
    c.meta = synthetic_meta(std::uint32_t(std::max(1, c.input_size)), std::uint32_t(std::max(1, c.volume_depth)));
    if (j.contains("volume")) {
      const auto& v = j.at("volume");
      c.meta.pixel_pitch = v.value("pixel_pitch", c.meta.pixel_pitch);
      c.meta.depth_pitch = v.value("depth_pitch", c.meta.depth_pitch);
      if (v.contains("origin")) {
        const auto o = v.at("origin").get<std::vector<double>>();
        if (o.size() != 3) throw ConfigError("volume.origin needs 3 numbers");
        c.meta.origin = Vec3(o[0], o[1], o[2]);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  if (j.contains("input_channels") && j.at("input_channels") != c.input_channels())
    throw ConfigError("variant " + c.variant + " takes " + std::to_string(c.input_channels()) + " input channels, config says " +
                      j.at("input_channels").dump());
  if (j.contains("hourglasses") && j.at("hourglasses") != c.hourglasses())
    throw ConfigError("variant " + c.variant + " has " + std::to_string(c.hourglasses()) + " hourglasses, config says " +
                      j.at("hourglasses").dump());
  c.validate();
  return c;
}

inline ModelConfig load_model_config(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return model_config_from_json(j);
}

namespace nn {

// One refinement stage: hourglass -> residual -> 1x1 conv + ReLU.
template <typename T>
struct Stage {
  Hourglass<T> hourglass;
  Residual<T> residual;
  Conv<T> mix;

  Stage() = default;
  Stage(ParamSet<T>& ps, const std::string& name, const ModelConfig& c)
      : hourglass(ps, name + ".hg", c.hourglass_depth, c.features),
        residual(ps, name + ".res", c.features, c.features),
        mix(ps, name + ".mix", c.features, c.features, 1) {}

  void init(std::mt19937_64& rng, double gain) {
    hourglass.init(rng, gain);
    residual.init(rng, gain);
    mix.init(rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return relu(mix(residual(hourglass(x)))); }
};

// Stem (stride-2 conv + residual) at half resolution, hourglass stages, and
// heads that upsample back to the input resolution.
template <typename T>
class Network {
 public:
  struct Output {
    Tensor<T> volume;    // [N, D, S, S] logits
    Tensor<T> heatmaps;  // [N, 68, S, S], multitask only
  };

  explicit Network(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int F = cfg_.features;
    stem_ = Conv<T>(params_, "stem.conv", cfg_.input_channels(), F, 3, 2);
    stem_res_ = Residual<T>(params_, "stem.res", F, F);
    if (cfg_.multitask()) {
      stages_.emplace_back(params_, "shared", cfg_);
      stages_.emplace_back(params_, "volume", cfg_);
      lm_stage_ = Stage<T>(params_, "landmarks", cfg_);
    } else {
      for (int i = 0; i < cfg_.hourglasses(); ++i) stages_.emplace_back(params_, "stack" + std::to_string(i), cfg_);
    }
    volume_head_ = Conv<T>(params_, "head.volume", F, cfg_.volume_depth, 3);
    if (cfg_.multitask()) lm_head_ = Conv<T>(params_, "head.landmarks", F, kNumLandmarks, 3);

    std::mt19937_64 rng(cfg_.init_seed);
    stem_.init(rng);
    if (cfg_.guided()) {
      // Give the RGB slice of the stem the same scale it has without guidance.
      const T s = static_cast<T>(std::sqrt(double(cfg_.input_channels()) / 3.0));
      const std::size_t per_in = std::size_t(9), per_out = std::size_t(cfg_.input_channels()) * per_in;
      for (int o = 0; o < F; ++o)
        for (std::size_t i = 0; i < 3 * per_in; ++i) stem_.weight.data()[std::size_t(o) * per_out + i] *= s;
    }
    stem_res_.init(rng, cfg_.branch_gain);
    for (auto& s : stages_) s.init(rng, cfg_.branch_gain);
    if (cfg_.multitask()) lm_stage_.init(rng, cfg_.branch_gain);
    volume_head_.init(rng, 0.1);
    if (cfg_.multitask()) lm_head_.init(rng, 0.1);
  }

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  Output forward(const Tensor<T>& x) const {
    const int S = cfg_.input_size;
    if (x.shape().size() != 4 || x.dim(1) != cfg_.input_channels() || x.dim(2) != S || x.dim(3) != S)
      throw ShapeError("network expects input [N," + std::to_string(cfg_.input_channels()) + "," + std::to_string(S) +
                       "," + std::to_string(S) + "], got " + to_string(x.shape()));
    Tensor<T> h = stem_res_(relu(stem_(x)));
    Output out;
    if (cfg_.multitask()) {
      const Tensor<T> shared = stages_[0](h);
      out.volume = volume_head_(upsample2(stages_[1](shared)));
      out.heatmaps = lm_head_(upsample2(lm_stage_(shared)));
    } else {
      for (const auto& s : stages_) h = s(h);
      out.volume = volume_head_(upsample2(h));
    }
    return out;
  }

  const ModelConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

 private:
  ModelConfig cfg_;
  ParamSet<T> params_;
  Conv<T> stem_;
  Residual<T> stem_res_;
  std::vector<Stage<T>> stages_;
  Stage<T> lm_stage_;
  Conv<T> volume_head_, lm_head_;
};

}  // namespace nn

using Model = nn::Network<float>;

// Input planes for one sample: RGB, plus rendered guidance for vrn-guided.
inline std::vector<float> model_input(const ModelConfig& cfg, const Image& img, const LandmarkSet* lms) {
  if (img.width != cfg.input_size || img.height != cfg.input_size)
    throw nn::ShapeError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) + ", model expects " +
                     std::to_string(cfg.input_size) + "x" + std::to_string(cfg.input_size));
  if (!cfg.guided()) return img.data;
  if (!lms) throw Error("vrn-guided needs landmarks");
  return stack_input(img, render_heatmaps(*lms, img.width, img.height, cfg.guidance_sigma));
}

struct Prediction {
  SoftVolume volume;
  std::optional<HeatmapStack> heatmaps;
};

template <typename T>
std::vector<Prediction> predict_batch(const nn::Network<T>& net, const nn::Tensor<T>& input) {
  nn::NoGradGuard ng;
  const auto out = net.forward(input);
  const auto& cfg = net.config();
  const std::size_t vsize = cfg.meta.size(), hsize = std::size_t(kNumLandmarks) * cfg.input_size * cfg.input_size;
  std::vector<Prediction> preds(std::size_t(input.dim(0)));
  for (std::size_t b = 0; b < preds.size(); ++b) {
    auto& p = preds[b];
    p.volume = SoftVolume(cfg.meta);
    for (std::size_t i = 0; i < vsize; ++i) p.volume.data[i] = static_cast<float>(nn::sigmoid(out.volume.data()[b * vsize + i]));
    if (out.heatmaps.defined()) {
      const auto* src = out.heatmaps.data().data() + b * hsize;
      p.heatmaps = HeatmapStack{cfg.input_size, cfg.input_size, cfg.guidance_sigma, std::vector<float>(src, src + hsize)};
    }
  }
  return preds;
}

inline Prediction predict(const Model& net, const Image& img, const LandmarkSet* lms = nullptr) {
  const auto& c = net.config();
  nn::Tensor<float> x({1, c.input_channels(), c.input_size, c.input_size}, model_input(c, img, lms));
  return std::move(predict_batch(net, x).front());
}

// Mesh of the 0.5 level set in scene coordinates. The volume is padded with
// one empty voxel so the surface closes at the frame border.
inline Mesh surface_from_prediction(const SoftVolume& v) { return extract_isosurface(pad_volume<float>(v, 1, 0.0f), 0.5); }

inline Mesh reconstruct(const Model& net, const Image& img, const LandmarkSet* lms = nullptr) {
  return surface_from_prediction(predict(net, img, lms).volume);
}

// Finite-difference check of every parameter tensor of a double-precision
// copy of the network. The outputs are projected onto fixed random weights:
// a summed loss over every voxel is ~1e5 and its last-bit rounding would swamp
// small gradient entries. Loss gradients are checked per op. Biases start off
// zero so no ReLU sits on its kink.
inline nn::GradCheckReport check_network_gradients(const ModelConfig& cfg, nn::GradCheckOptions opts = {}) {
  nn::Network<double> net(cfg);
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> g(0, 1), jitter(0, 0.1);
  for (auto& [name, t] : net.params())
    if (name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0)
      for (auto& v : t.data()) v += jitter(rng);
  const int S = cfg.input_size;
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> xv(std::size_t(cfg.input_channels()) * S * S), rv(cfg.meta.size()),
      rh(cfg.multitask() ? std::size_t(kNumLandmarks) * S * S : 0);
  for (auto& v : xv) v = u(rng);
  for (auto& v : rv) v = g(rng);
  for (auto& v : rh) v = g(rng);
  const nn::Tensor<double> x({1, cfg.input_channels(), S, S}, xv);
  std::vector<std::pair<std::string, nn::Tensor<double>>> params(net.params().begin(), net.params().end());
  return nn::gradient_check(params, [&] {
    const auto out = net.forward(x);
    auto loss = nn::dot(out.volume, rv);
    return cfg.multitask() ? nn::add_scalars(loss, nn::dot(out.heatmaps, rh)) : loss;
  }, opts);
}

// Weights in VRNW at `path`, configuration as JSON in `path` + ".json".
template <typename T>
void save_model(const nn::Network<T>& net, const std::filesystem::path& path) {
  nn::save_checkpoint(net.params(), path);
  auto out = detail::open_out(detail::sidecar_path(path));
  out << nlohmann::json(net.config()).dump(2) << '\n';
  if (!out) throw IoError("write failed for model config of '" + path.string() + "'");
}

inline std::unique_ptr<Model> load_model(const std::filesystem::path& path) {
  const auto cfg_path = detail::sidecar_path(path);
  if (!std::filesystem::exists(cfg_path)) throw IoError("missing model config '" + cfg_path.string() + "'");
  auto net = std::make_unique<Model>(load_model_config(cfg_path));
  nn::load_checkpoint(net->params(), path);
  return net;
}

}  // namespace vrn
