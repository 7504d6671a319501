#include <sstream>

#include "test_util.hpp"
#include "vrn/train.hpp"

using namespace vrn;

namespace {

ModelConfig small_model(const std::string& variant = "vrn") {
  ModelConfig c;
  c.variant = variant;
  c.input_size = 32;
  c.volume_depth = 16;
  c.features = 8;
  c.meta = synthetic_meta(32, 16);
  return c;
}

// Generated once per process; tests copy it because training may fill in
// frontal targets.
const Dataset& small_dataset() {
  static const Dataset ds = [] {
    test::TempDir dir("vrn_train");
    SynthOptions o;
    o.count = 6;
    o.seed = 3;
    o.image_size = 32;
    o.depth = 16;
    return load_dataset(write_synthetic_dataset(o, dir.path()));
  }();
  return ds;
}

TrainConfig small_train(const std::string& variant = "vrn") {
  TrainConfig c;
  c.model = small_model(variant);
  c.epochs = 2;
  c.lr.boundary = 2;
  c.batch_size = 4;
  c.augment_ranges.translation_px = 2;
  return c;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(LrSchedule, DropsAfterTheBoundary) {
  nn::LrSchedule s;
  EXPECT_EQ(s.at(1), 1e-4);
  EXPECT_EQ(s.at(40), 1e-4);
  EXPECT_EQ(s.at(41), 1e-5);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 30;
  EXPECT_THROW(c.validate(), ConfigError);  // boundary 40 > epochs
  c.lr.boundary = 30;
  EXPECT_NO_THROW(c.validate());
  c.lr.decayed = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.lr.decayed = 1e-5;
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.epochs = 30;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainConfig, JsonRoundTripAndPaths) {
  test::TempDir dir;
  TrainConfig c = small_train("vrn-guided");
  c.dataset = "data/manifest.json";
  c.output_dir = "/abs/out";
  c.seed = 12;
  c.augment_ranges.rotation_deg = 10;
  const auto back = train_config_from_json(nlohmann::json(c), "/base");
  EXPECT_EQ(back.dataset, std::filesystem::path("/base/data/manifest.json"));
  EXPECT_EQ(back.output_dir, std::filesystem::path("/abs/out"));
  EXPECT_EQ(back.seed, 12u);
  EXPECT_EQ(back.model.variant, "vrn-guided");
  EXPECT_EQ(back.augment_ranges.rotation_deg, 10);
  EXPECT_EQ(back.lr.boundary, 2);

  test::write_text(dir / "model.json", R"({"variant": "vrn-multitask", "input_size": 32, "volume_depth": 16})");
  test::write_text(dir / "train.json", R"({"model": "model.json", "dataset": "d/manifest.json", "epochs": 3,
    "lr_boundary": 3, "augment_ranges": {"flip_prob": 0.5}})");
  const auto f = load_train_config(dir / "train.json");
  EXPECT_EQ(f.model.hourglasses(), 3);
  EXPECT_EQ(f.dataset, dir / "d/manifest.json");
  EXPECT_EQ(f.augment_ranges.flip_prob, 0.5);
  EXPECT_EQ(f.augment_ranges.rotation_deg, 45);

  EXPECT_THROW(train_config_from_json(nlohmann::json{{"epochs", 3}}), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"dataset", "x"}, {"epoch", 3}}), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"dataset", "x"}, {"epochs", 3}}), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"dataset", 5}}), ConfigError);
}

TEST(PrepareSample, DeterministicAndShaped) {
  const auto& ds = small_dataset();
  const TrainConfig cfg = small_train("vrn-multitask");
  const auto a = prepare_sample(cfg, ds.samples[0], 3, 0);
  const auto b = prepare_sample(cfg, ds.samples[0], 3, 0);
  const auto c = prepare_sample(cfg, ds.samples[0], 4, 0);
  EXPECT_EQ(a.input, b.input);
  EXPECT_EQ(a.volume, b.volume);
  EXPECT_NE(a.input, c.input);
  EXPECT_EQ(a.input.size(), 3u * 32 * 32);
  EXPECT_EQ(a.volume.size(), 16u * 32 * 32);
  EXPECT_EQ(a.heatmaps.size(), 68u * 32 * 32);
}

TEST(PrepareSample, NoAugmentationKeepsTheSample) {
  const auto& ds = small_dataset();
  TrainConfig cfg = small_train("vrn-guided");
  cfg.augment = false;
  const auto p = prepare_sample(cfg, ds.samples[1], 1, 1);
  EXPECT_EQ(p.input, stack_input(ds.samples[1].image, render_heatmaps(*ds.samples[1].landmarks, 32, 32, 1.0)));
  EXPECT_EQ(p.volume, std::vector<float>(ds.samples[1].volume.data.begin(), ds.samples[1].volume.data.end()));
}

TEST(PrepareSample, FrontalTargetIsOnlyMirrored) {
  Dataset ds = small_dataset();
  TrainConfig cfg = small_train("vrn-frontal");
  auto& s = ds.samples[2];
  frontal_target(s, ds.meta);
  for (int epoch = 1; epoch <= 12; ++epoch) {
    const auto a = sample_augmentation(derive_seed(cfg.seed, std::uint64_t(epoch), 2), cfg.augment_ranges);
    AugmentSample mirror;
    mirror.flip = a.flip;
    const auto expect = std::get<1>(apply_augmentation(mirror, s.image, s.frontal_volume, *s.landmarks));
    const auto p = prepare_sample(cfg, s, epoch, 2);
    EXPECT_EQ(p.volume, std::vector<float>(expect.data.begin(), expect.data.end())) << epoch;
  }
}

TEST(JitterLandmarks, ZeroNoiseIsIdentity) {
  LandmarkSet l;
  for (int k = 0; k < int(kNumLandmarks); ++k) l.points[k] = Vec3(k, 2 * k, 0.5);
  const auto same = jitter_landmarks(l, 0.0, 1);
  EXPECT_EQ(same.points, l.points);
  const auto moved = jitter_landmarks(l, 1.0, 1);
  EXPECT_NE(moved.points, l.points);
  EXPECT_EQ(moved.points[0].z(), 0.5);
  EXPECT_EQ(jitter_landmarks(l, 1.0, 1).points, moved.points);
}

TEST(Train, FixedSeedReproducesLossCsv) {
  test::TempDir dir;
  Dataset ds = small_dataset();
  TrainConfig cfg = small_train();
  cfg.output_dir = dir / "a";
  Model a(cfg.model);
  train(a, cfg, ds);
  cfg.output_dir = dir / "b";
  Model b(cfg.model);
  train(b, cfg, ds);
  const std::string la = read_text(dir / "a/loss.csv");
  EXPECT_FALSE(la.empty());
  EXPECT_EQ(la, read_text(dir / "b/loss.csv"));
  EXPECT_EQ(read_text(dir / "a/epochs.csv"), read_text(dir / "b/epochs.csv"));
  // 6 samples in batches of 4: two steps per epoch.
  EXPECT_EQ(std::count(la.begin(), la.end(), '\n'), 1 + 2 * 2);

  const auto loaded = load_model(dir / "a/checkpoint.vrnw");
  Image img = ds.samples[0].image;
  EXPECT_EQ(predict(*loaded, img).volume.data, predict(a, img).volume.data);
}

TEST(Train, RecordsTheLearningRateSchedule) {
  Dataset ds = small_dataset();
  TrainConfig cfg = small_train();
  cfg.epochs = 4;
  cfg.lr = {2e-4, 2e-5, 2};
  cfg.max_samples = 2;
  Model net(cfg.model);
  TrainOptions o;
  o.write_files = false;
  const auto h = train(net, cfg, ds, o);
  EXPECT_EQ(h.epoch_lr, (std::vector<double>{2e-4, 2e-4, 2e-5, 2e-5}));
  ASSERT_EQ(h.steps.size(), 4u);
  EXPECT_EQ(h.steps.back().lr, 2e-5);
}

TEST(Train, DefaultScheduleDropsAtEpoch41) {
  TrainConfig cfg = small_train();
  cfg.epochs = 41;
  cfg.lr = {};
  cfg.max_samples = 1;
  cfg.model.input_size = 8;
  cfg.model.volume_depth = 4;
  cfg.model.features = 4;
  cfg.model.hourglass_depth = 1;
  cfg.model.meta = synthetic_meta(8, 4);
  Dataset tiny;
  tiny.meta = cfg.model.meta;
  DatasetSample s;
  s.image = Image(8, 8, 0.5f);
  s.volume = BinaryVolume(tiny.meta, 1);
  tiny.samples.push_back(s);
  Model net(cfg.model);
  TrainOptions o;
  o.write_files = false;
  const auto h = train(net, cfg, tiny, o);
  EXPECT_EQ(h.epoch_lr[39], 1e-4);
  EXPECT_EQ(h.epoch_lr[40], 1e-5);
}

TEST(Train, NonFiniteLossAborts) {
  Dataset ds = small_dataset();
  TrainConfig cfg = small_train();
  Model net(cfg.model);
  for (auto& [name, t] : net.params()) t.data()[0] = std::numeric_limits<float>::quiet_NaN();
  TrainOptions o;
  o.write_files = false;
  EXPECT_THROW(train(net, cfg, ds, o), nn::NonFiniteError);
}

TEST(Train, RejectsMismatchedDataset) {
  Dataset ds = small_dataset();
  TrainConfig cfg = small_train();
  cfg.model = ModelConfig{};  // 64x64x36
  Model net(cfg.model);
  EXPECT_THROW(train(net, cfg, ds), ConfigError);
  Dataset empty;
  empty.meta = ds.meta;
  Model small(small_model());
  EXPECT_THROW(train(small, small_train(), empty), Error);
}

TEST(Train, MultitaskAndFrontalRun) {
  for (const std::string v : {"vrn-multitask", "vrn-frontal", "vrn-guided"}) {
    Dataset ds = small_dataset();
    TrainConfig cfg = small_train(v);
    cfg.epochs = 1;
    cfg.lr.boundary = 1;
    cfg.landmark_noise_px = 1.0;
    Model net(cfg.model);
    TrainOptions o;
    o.write_files = false;
    const auto h = train(net, cfg, ds, o);
    ASSERT_EQ(h.epoch_loss.size(), 1u);
    EXPECT_TRUE(std::isfinite(h.epoch_loss[0])) << v;
  }
}

TEST(Evaluate, SkipsBrokenSamplesAndKeepsGoing) {
  Dataset ds = small_dataset();
  ds.samples[1].eye_corners.reset();
  ds.samples[3].eye_corners = std::array<std::uint32_t, 2>{0, 0};  // zero interocular distance
  TrainConfig cfg = small_train();
  cfg.epochs = 2;
  Model net(cfg.model);
  TrainOptions o;
  o.write_files = false;
  train(net, cfg, ds, o);
  std::ostringstream log;
  EvalOptions eo;
  eo.log = &log;
  const auto r = evaluate(net, ds, eo);
  EXPECT_EQ(r.reports.size() + r.skipped.size(), ds.samples.size());
  ASSERT_GE(r.skipped.size(), 2u);
  EXPECT_NE(log.str().find(ds.samples[1].id), std::string::npos);
  for (const auto& rep : r.reports) {
    EXPECT_TRUE(std::isfinite(rep.nme));
    EXPECT_TRUE(rep.tags.count("yaw_bucket"));
  }
}

TEST(Evaluate, UntrainedModelDoesNotAbort) {
  const Dataset& ds = small_dataset();
  Model net(small_model());
  EXPECT_NO_THROW(evaluate(net, ds));
  const double iou = mean_soft_iou(net, ds);
  EXPECT_GE(iou, 0.0);
  EXPECT_LE(iou, 1.0);
}
