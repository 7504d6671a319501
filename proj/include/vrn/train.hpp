#pragma once

#include <chrono>
#include <functional>
#include <iostream>

#include "vrn/augment.hpp"
#include "vrn/dataset.hpp"
#include "vrn/metrics.hpp"
#include "vrn/models.hpp"
#include "vrn/nn/optim.hpp"
#include "vrn/parallel.hpp"

namespace vrn {

struct TrainConfig {
  ModelConfig model;
  std::filesystem::path dataset;      // manifest.json
  std::filesystem::path output_dir;   // checkpoint.vrnw(.json), loss.csv, epochs.csv
  int epochs = 50;
  int batch_size = 4;
  std::uint64_t seed = 1;
  nn::LrSchedule lr;
  double rmsprop_decay = 0.99;
  bool augment = true;
  AugmentRanges augment_ranges;
  double heatmap_weight = 1.0;        // multitask: loss = volume CE + weight * heatmap L2
  double landmark_noise_px = 0.0;     // vrn-guided: Gaussian jitter on guidance landmarks
  std::size_t max_samples = 0;        // 0 uses the whole training list

  void validate() const {
    model.validate();
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr.initial > 0) || !(lr.decayed > 0)) throw ConfigError("learning rates must be > 0");
    if (lr.boundary < 0 || lr.boundary > epochs)
      throw ConfigError("lr boundary " + std::to_string(lr.boundary) + " must lie in [0, epochs=" + std::to_string(epochs) + "]");
    if (!(rmsprop_decay > 0 && rmsprop_decay < 1)) throw ConfigError("rmsprop_decay must be in (0,1)");
    if (heatmap_weight < 0 || landmark_noise_px < 0) throw ConfigError("weights and noise must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  const auto& a = c.augment_ranges;
  j = nlohmann::json{{"model", c.model},
                     {"dataset", c.dataset.string()},
                     {"output_dir", c.output_dir.string()},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"lr", c.lr.initial},
                     {"lr_decayed", c.lr.decayed},
                     {"lr_boundary", c.lr.boundary},
                     {"rmsprop_decay", c.rmsprop_decay},
                     {"augment", c.augment},
                     {"augment_ranges",
                      {{"rotation_deg", a.rotation_deg},
                       {"translation_px", a.translation_px},
                       {"scale_min", a.scale_min},
                       {"scale_max", a.scale_max},
                       {"flip_prob", a.flip_prob},
                       {"gain_min", a.gain_min},
                       {"gain_max", a.gain_max}}},
                     {"heatmap_weight", c.heatmap_weight},
                     {"landmark_noise_px", c.landmark_noise_px},
                     {"max_samples", c.max_samples}};
}

// Relative dataset/output paths resolve against `base` (the config file's
// directory). "model" is an inline object or a path to a model JSON.
inline TrainConfig train_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  static const std::set<std::string> known = {"model",         "dataset",       "output_dir",     "epochs",
                                              "batch_size",    "seed",          "lr",             "lr_decayed",
                                              "lr_boundary",   "rmsprop_decay", "augment",        "augment_ranges",
                                              "heatmap_weight", "landmark_noise_px", "max_samples"};
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw ConfigError("unknown training config key '" + k + "'");
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path q(p);
    return q.is_absolute() || base.empty() ? q : base / q;
  };
  TrainConfig c;
  try {
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model = m.is_string() ? load_model_config(resolve(m.get<std::string>())) : model_config_from_json(m);
    }
    if (!j.contains("dataset")) throw ConfigError("training config needs \"dataset\"");
    c.dataset = resolve(j.at("dataset").get<std::string>());
    c.output_dir = resolve(j.value("output_dir", std::string("train_out")));
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.lr.initial = j.value("lr", c.lr.initial);
    c.lr.decayed = j.value("lr_decayed", c.lr.decayed);
    c.lr.boundary = j.value("lr_boundary", c.lr.boundary);
    c.rmsprop_decay = j.value("rmsprop_decay", c.rmsprop_decay);
    c.augment = j.value("augment", c.augment);
    if (j.contains("augment_ranges")) {
      const auto& a = j.at("augment_ranges");
      auto& r = c.augment_ranges;
      r.rotation_deg = a.value("rotation_deg", r.rotation_deg);
      r.translation_px = a.value("translation_px", r.translation_px);
      r.scale_min = a.value("scale_min", r.scale_min);
      r.scale_max = a.value("scale_max", r.scale_max);
      r.flip_prob = a.value("flip_prob", r.flip_prob);
      r.gain_min = a.value("gain_min", r.gain_min);
      r.gain_max = a.value("gain_max", r.gain_max);
    }
    c.heatmap_weight = j.value("heatmap_weight", c.heatmap_weight);
    c.landmark_noise_px = j.value("landmark_noise_px", c.landmark_noise_px);
    c.max_samples = j.value("max_samples", c.max_samples);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return train_config_from_json(j, path.parent_path());
}

struct LossRecord {
  int epoch;
  long step;
  double loss;  // per-sample mean over the batch
  double lr;
};

struct TrainHistory {
  std::vector<LossRecord> steps;
  std::vector<double> epoch_loss;  // mean per-sample loss of each epoch
  std::vector<double> epoch_lr;
  double seconds = 0;
};

inline void write_loss_csv(const TrainHistory& h, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out.precision(17);
  out << "epoch,step,loss,lr\n";
  for (const auto& r : h.steps) out << r.epoch << ',' << r.step << ',' << r.loss << ',' << r.lr << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline void write_epoch_csv(const TrainHistory& h, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out.precision(17);
  out << "epoch,loss,lr\n";
  for (std::size_t e = 0; e < h.epoch_loss.size(); ++e) out << e + 1 << ',' << h.epoch_loss[e] << ',' << h.epoch_lr[e] << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// One training example after augmentation, laid out for the network.
struct PreparedSample {
  std::vector<float> input;     // C x S x S
  std::vector<float> volume;    // D x S x S occupancy
  std::vector<float> heatmaps;  // 68 x S x S, multitask only
};

inline LandmarkSet jitter_landmarks(const LandmarkSet& lms, double sigma_px, std::uint64_t seed) {
  if (sigma_px <= 0) return lms;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma_px);
  LandmarkSet out = lms;
  for (auto& p : out.points) {
    p.x() += n(rng);
    p.y() += n(rng);
  }
  return out;
}

// Deterministic in (config seed, epoch, sample index).
// Frontal targets must already be filled in.
inline PreparedSample prepare_sample(const TrainConfig& cfg, const DatasetSample& s, int epoch, std::size_t index) {
  const ModelConfig& mc = cfg.model;
  const bool frontal = mc.frontal();
  if ((mc.guided() || mc.multitask()) && !s.landmarks) throw Error("sample " + s.id + " has no landmarks");
  if (frontal && s.frontal_volume.data.empty()) throw Error("sample " + s.id + " has no frontal target");
  const BinaryVolume& target = frontal ? s.frontal_volume : s.volume;
  LandmarkSet lms = s.landmarks.value_or(LandmarkSet{});

  AugmentSample aug;
  if (cfg.augment) {
    aug = sample_augmentation(derive_seed(cfg.seed, std::uint64_t(epoch), index), cfg.augment_ranges);
    // A canonical-orientation target cannot follow an in-plane scale.
    if (frontal) aug.scale = 1.0;
  }
  Image img = s.image;
  BinaryVolume vol = target;
  if (!aug.is_identity()) {
    if (frontal) {
      AugmentSample mirror_only;
      mirror_only.flip = aug.flip;
      std::tie(img, std::ignore, lms) = apply_augmentation(aug, s.image, s.volume, lms);
      std::tie(std::ignore, vol, std::ignore) = apply_augmentation(mirror_only, s.image, target, s.landmarks.value_or(LandmarkSet{}));
    } else {
      std::tie(img, vol, lms) = apply_augmentation(aug, s.image, target, lms);
    }
  }

  PreparedSample p;
  const LandmarkSet guide = jitter_landmarks(lms, cfg.landmark_noise_px, derive_seed(cfg.seed, std::uint64_t(epoch), index, 7));
  p.input = model_input(mc, img, mc.guided() ? &guide : nullptr);
  p.volume.assign(vol.data.begin(), vol.data.end());
  if (mc.multitask()) p.heatmaps = render_heatmaps(lms, mc.input_size, mc.input_size, mc.guidance_sigma).data;
  return p;
}

struct TrainOptions {
  bool write_files = true;  // checkpoint each epoch, loss CSVs
  std::ostream* log = nullptr;
  std::function<void(int epoch, double loss)> on_epoch;
};

// Epoch: one pass over the training list in seeded shuffled order, batches
// of batch_size (the last may be smaller). Summed losses; RMSProp step per
// batch. Throws NonFiniteError if the loss or a gradient stops being finite.
inline TrainHistory train(Model& net, const TrainConfig& cfg, Dataset& data, TrainOptions opts = {}) {
  cfg.validate();
  const ModelConfig& mc = net.config();
  if (data.samples.empty()) throw Error("training set is empty");
  if (int(data.meta.width) != mc.input_size || int(data.meta.height) != mc.input_size ||
      int(data.meta.depth) != mc.volume_depth)
    throw ConfigError("dataset volume " + std::to_string(data.meta.width) + "x" + std::to_string(data.meta.height) + "x" +
                      std::to_string(data.meta.depth) + " does not match the model output");
  const std::size_t n = cfg.max_samples ? std::min(cfg.max_samples, data.samples.size()) : data.samples.size();
  if (opts.write_files) std::filesystem::create_directories(cfg.output_dir);
  if (mc.frontal())
    for (std::size_t i = 0; i < n; ++i) frontal_target(data.samples[i], data.meta);

  nn::RmsProp<float> opt(net.params(), cfg.rmsprop_decay);
  TrainHistory hist;
  const auto t0 = std::chrono::steady_clock::now();
  const int S = mc.input_size, C = mc.input_channels();
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.lr.at(epoch);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuf(derive_seed(cfg.seed, 0xE90C, std::uint64_t(epoch)));
    std::shuffle(order.begin(), order.end(), shuf);

    double epoch_sum = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += std::size_t(cfg.batch_size)) {
      const std::size_t bn = std::min(std::size_t(cfg.batch_size), n - b0);
      std::vector<PreparedSample> batch(bn);
      parallel_for(bn, [&](std::size_t i) {
        batch[i] = prepare_sample(cfg, data.samples[order[b0 + i]], epoch, order[b0 + i]);
      });
      nn::Tensor<float> x({int(bn), C, S, S});
      std::vector<float> vt, ht;
      for (std::size_t i = 0; i < bn; ++i) {
        std::copy(batch[i].input.begin(), batch[i].input.end(), x.data().begin() + std::ptrdiff_t(i * batch[i].input.size()));
        vt.insert(vt.end(), batch[i].volume.begin(), batch[i].volume.end());
        ht.insert(ht.end(), batch[i].heatmaps.begin(), batch[i].heatmaps.end());
      }
      const auto out = net.forward(x);
      nn::Tensor<float> loss = nn::sigmoid_ce_loss(out.volume, vt);
      if (mc.multitask()) {
        nn::Tensor<float> hl = nn::squared_error_loss(out.heatmaps, ht);
        if (cfg.heatmap_weight != 1.0) hl = nn::dot(hl, std::vector<float>{float(cfg.heatmap_weight)});
        loss = nn::add_scalars(loss, hl);
      }
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw nn::NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step + 1));
      net.params().zero_grad();
      nn::backward(loss);
      opt.step(lr);
      ++step;
      epoch_sum += lv;
      hist.steps.push_back({epoch, step, lv / double(bn), lr});
    }
    hist.epoch_loss.push_back(epoch_sum / double(n));
    hist.epoch_lr.push_back(lr);
    if (opts.write_files) {
      save_model(net, cfg.output_dir / "checkpoint.vrnw");
      write_loss_csv(hist, cfg.output_dir / "loss.csv");
      write_epoch_csv(hist, cfg.output_dir / "epochs.csv");
    }
    if (opts.log)
      *opts.log << "epoch " << epoch << "/" << cfg.epochs << " loss " << hist.epoch_loss.back() << " lr " << lr << '\n';
    if (opts.on_epoch) opts.on_epoch(epoch, hist.epoch_loss.back());
  }
  hist.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return hist;
}

struct EvalOptions {
  bool apply_rigid = false;
  double landmark_noise_px = 0.0;  // guidance jitter at test time
  std::uint64_t seed = 1;
  IcpOptions icp;
  unsigned threads = num_threads();
  std::ostream* log = nullptr;
};

struct EvalResult {
  std::vector<EvalReport> reports;
  std::vector<double> soft_iou;  // parallel to reports
  std::vector<std::pair<std::string, std::string>> skipped;  // (id, reason)
};

// Per sample: predict, extract the 0.5 surface, match it to the ground-truth
// evaluation region and compute NME. A failing sample is skipped with its
// reason; the sweep always completes.
inline EvalResult evaluate(const Model& net, const Dataset& data, const EvalOptions& opts = {}) {
  const ModelConfig& mc = net.config();
  const std::size_t n = data.samples.size();
  std::vector<std::optional<EvalReport>> reports(n);
  std::vector<double> ious(n, 0.0);
  std::vector<std::string> errors(n);
  parallel_for(
      n,
      [&](std::size_t i) {
        const DatasetSample& s = data.samples[i];
        try {
          if (!s.eye_corners) throw MetricError("no eye-corner vertices");
          std::optional<LandmarkSet> guide;
          if (mc.guided()) {
            if (!s.landmarks) throw Error("no landmarks for guidance");
            guide = jitter_landmarks(*s.landmarks, opts.landmark_noise_px, derive_seed(opts.seed, i, 0x6E));
          }
          const Prediction pred = predict(net, s.image, guide ? &*guide : nullptr);
          const Mesh gt = mc.frontal() ? s.frontal_mesh() : s.mesh;
          const BinaryVolume* target = &s.volume;
          BinaryVolume frontal;
          if (mc.frontal()) {
            frontal = s.frontal_volume.data.empty() ? voxelize(gt, data.meta, nullptr, 1) : s.frontal_volume;
            target = &frontal;
          }
          ious[i] = soft_iou(pred.volume, *target);
          const Mesh rec = surface_from_prediction(pred.volume);
          const Correspondence corr = establish_correspondence(rec, gt, opts.apply_rigid, opts.icp);
          EvalReport r = nme(rec, gt, corr, interocular_distance(gt, (*s.eye_corners)[0], (*s.eye_corners)[1]));
          r.id = s.id;
          r.tags = s.tags;
          reports[i] = std::move(r);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      },
      opts.threads);
  EvalResult res;
  for (std::size_t i = 0; i < n; ++i) {
    if (reports[i]) {
      res.reports.push_back(std::move(*reports[i]));
      res.soft_iou.push_back(ious[i]);
    } else {
      res.skipped.emplace_back(data.samples[i].id, errors[i]);
      if (opts.log) *opts.log << "skipped " << data.samples[i].id << ": " << errors[i] << '\n';
    }
  }
  return res;
}

// Mean soft IoU of predicted volumes against their targets; no surface
// extraction, so untrained models are fine.
inline double mean_soft_iou(const Model& net, const Dataset& data, unsigned threads = num_threads()) {
  const ModelConfig& mc = net.config();
  std::vector<double> v(data.samples.size(), 0.0);
  parallel_for(
      data.samples.size(),
      [&](std::size_t i) {
        const DatasetSample& s = data.samples[i];
        const LandmarkSet* g = mc.guided() && s.landmarks ? &*s.landmarks : nullptr;
        const Prediction p = predict(net, s.image, g);
        const BinaryVolume target = mc.frontal() ? (s.frontal_volume.data.empty() ? voxelize(s.frontal_mesh(), data.meta, nullptr, 1)
                                                                                  : s.frontal_volume)
                                                 : s.volume;
        v[i] = soft_iou(p.volume, target);
      },
      threads);
  double sum = 0;
  for (double x : v) sum += x;
  return v.empty() ? 0.0 : sum / double(v.size());
}

}  // namespace vrn
