#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vrn/dataset.hpp"
#include "vrn/metrics.hpp"
#include "vrn/models.hpp"
#include "vrn/train.hpp"
#include "vrn/voxelizer.hpp"

namespace fs = std::filesystem;
using namespace vrn;

namespace {

// Writes through a temporary sibling so a failed command leaves no partial file.
template <typename F>
void write_atomic(const fs::path& path, F&& write) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".partial";
  try {
    write(tmp);
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

std::array<std::uint32_t, 3> parse_dims(const std::string& s) {
  std::array<std::uint32_t, 3> d{};
  char x1 = 0, x2 = 0;
  std::istringstream in(s);
  if (!(in >> d[0] >> x1 >> d[1] >> x2 >> d[2]) || x1 != 'x' || x2 != 'x' || !in.eof() || !d[0] || !d[1] || !d[2])
    throw Error("--dims must look like WxHxD with positive sizes, got '" + s + "'");
  return d;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

struct VoxelizeArgs {
  std::string mesh, dims, out, pose;
  double margin = 0.1;
};

int cmd_voxelize(const VoxelizeArgs& a) {
  const auto [w, h, d] = parse_dims(a.dims);
  Mesh mesh = load_mesh(a.mesh);
  if (!a.pose.empty()) mesh = frontalize_target(mesh, detail::pose_from_json(read_json(a.pose)));
  const VolumeMeta meta = fit_meta(mesh, w, h, d, a.margin);
  VoxelizeStats stats;
  const BinaryVolume vol = voxelize(mesh, meta, &stats);
  write_atomic(a.out, [&](const fs::path& p) { vxv::write(vol, p); });
  const std::size_t occ = count_occupied(vol);
  const double voxel = meta.pixel_pitch * meta.pixel_pitch * meta.depth_pitch;
  std::cout << "wrote " << a.out << " (" << w << "x" << h << "x" << d << ")\n"
            << "occupied " << occ << " voxels, fraction " << double(occ) / double(meta.size()) << ", volume "
            << double(occ) * voxel << " (mesh units^3)";
  if (stats.odd_columns) std::cout << ", " << stats.odd_columns << " columns with an odd crossing count";
  std::cout << "\n";
  return 0;
}

int cmd_train(const std::string& config) {
  const TrainConfig cfg = load_train_config(config);
  Dataset data = load_dataset(cfg.dataset);
  Model net(cfg.model);
  std::cout << "training " << cfg.model.variant << " on " << data.samples.size() << " samples for " << cfg.epochs
            << " epochs\n";
  TrainOptions opts;
  opts.log = &std::cout;
  const auto hist = train(net, cfg, data, opts);
  std::cout << "final epoch loss " << hist.epoch_loss.back() << "; outputs in " << cfg.output_dir.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, out_dir, tag = "yaw_bucket";
  bool rigid = false;
  double landmark_noise = 0.0, curve_max = 0.1;
  std::size_t curve_steps = 101;
  std::uint64_t seed = 1;
};

int cmd_eval(const EvalArgs& a) {
  const auto net = load_model(a.checkpoint);
  const Dataset data = load_dataset(a.data);
  EvalOptions o;
  o.apply_rigid = a.rigid;
  o.landmark_noise_px = a.landmark_noise;
  o.seed = a.seed;
  o.log = &std::cerr;
  const EvalResult r = evaluate(*net, data, o);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  write_atomic(dir / "reports.csv", [&](const fs::path& p) { write_reports_csv(r.reports, p); });
  const auto grid = linear_grid(0, a.curve_max, a.curve_steps);
  const auto curve = cumulative_curve(r.reports, grid);
  write_atomic(dir / "curve.csv", [&](const fs::path& p) { write_curve_csv(curve, p); });
  write_atomic(dir / "curve.svg", [&](const fs::path& p) { write_curve_svg({{net->config().variant, curve}}, p); });
  const auto buckets = bucketed_eval(r.reports, a.tag);
  write_atomic(dir / "buckets.csv", [&](const fs::path& p) {
    auto out = detail::open_out(p);
    out << a.tag << ",mean_nme\n" << std::setprecision(9);
    for (const auto& [k, v] : buckets) out << k << "," << v << "\n";
    if (!out) throw IoError("write failed for '" + p.string() + "'");
  });
  double iou = 0;
  for (double v : r.soft_iou) iou += v;
  std::cout << "evaluated " << r.reports.size() << " of " << data.samples.size() << " samples";
  if (!r.skipped.empty()) std::cout << " (" << r.skipped.size() << " skipped)";
  std::cout << "\nmean NME " << (r.reports.empty() ? 0.0 : mean_nme(r.reports)) << ", mean soft-IoU "
            << (r.soft_iou.empty() ? 0.0 : iou / double(r.soft_iou.size())) << "\n";
  for (const auto& [k, v] : buckets) std::cout << "  " << a.tag << " " << k << ": " << v << "\n";
  std::cout << "outputs in " << dir.string() << "\n";
  return 0;
}

int cmd_reconstruct(const std::string& checkpoint, const std::string& image, const std::string& landmarks,
                    const std::string& out, const std::string& volume_out) {
  const auto net = load_model(checkpoint);
  const Image img = load_ppm(image);
  std::optional<LandmarkSet> lms;
  if (!landmarks.empty()) lms = load_landmarks(landmarks);
  const Prediction pred = predict(*net, img, lms ? &*lms : nullptr);
  const Mesh mesh = surface_from_prediction(pred.volume);
  if (!fs::path(out).parent_path().empty()) fs::create_directories(fs::path(out).parent_path());
  save_mesh(mesh, out);
  std::cout << "wrote " << out << " (" << mesh.vertices.size() << " vertices, " << mesh.triangles.size() << " triangles)\n";
  if (!volume_out.empty()) {
    write_atomic(volume_out, [&](const fs::path& p) { vxv::write(pred.volume, p); });
    std::cout << "wrote " << volume_out << "\n";
  }
  return 0;
}

int cmd_curve(const std::vector<std::string>& reports, std::vector<std::string> labels, const std::string& out,
              const std::string& svg, double max, std::size_t steps) {
  if (!labels.empty() && labels.size() != reports.size())
    throw Error("got " + std::to_string(labels.size()) + " labels for " + std::to_string(reports.size()) + " reports");
  if (labels.empty())
    for (const auto& r : reports) labels.push_back(fs::path(r).stem().string());
  const auto grid = linear_grid(0, max, steps);
  std::vector<std::pair<std::string, std::vector<CurvePoint>>> curves;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto rep = read_reports_csv(reports[i]);
    curves.emplace_back(labels[i], cumulative_curve(rep, grid));
    std::cout << labels[i] << ": " << rep.size() << " samples, mean NME " << (rep.empty() ? 0.0 : mean_nme(rep)) << "\n";
  }
  write_atomic(out, [&](const fs::path& p) {
    if (curves.size() == 1) return write_curve_csv(curves[0].second, p);
    auto os = detail::open_out(p);
    os << "threshold";
    for (const auto& c : curves) os << "," << c.first;
    os << "\n" << std::setprecision(9);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      os << grid[k];
      for (const auto& c : curves) os << "," << c.second[k].fraction;
      os << "\n";
    }
    if (!os) throw IoError("write failed for '" + p.string() + "'");
  });
  std::cout << "wrote " << out << "\n";
  if (!svg.empty()) {
    write_atomic(svg, [&](const fs::path& p) { write_curve_svg(curves, p); });
    std::cout << "wrote " << svg << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& model_config, std::size_t samples, double step, double tol, std::uint64_t seed) {
  const ModelConfig cfg = model_config.empty() ? ModelConfig{} : load_model_config(model_config);
  nn::GradCheckOptions o;
  o.samples_per_tensor = samples;
  o.step = step;
  o.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = check_network_gradients(cfg, o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "checked " << rep.checked << " entries of " << cfg.variant << " (" << rep.retried
            << " retried with a smaller step after crossing a ReLU kink, " << rep.kinked << " left unchecked)" << " in " << std::fixed << std::setprecision(1)
            << secs << " s\n"
            << std::scientific << std::setprecision(3) << "max rel. err " << rep.max_rel_error << " at " << rep.worst
            << " (analytic " << rep.worst_analytic << ", numeric " << rep.worst_numeric << ")"
            << (rep.passed(tol) ? " (pass)" : " (FAIL)") << "\n";
  return rep.passed(tol) ? 0 : 1;
}

int cmd_synth(SynthOptions o, const std::string& out_dir) {
  const auto manifest = write_synthetic_dataset(o, out_dir);
  std::cout << "wrote " << o.count << " samples, manifest " << manifest.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric face reconstruction toolkit"};
  app.require_subcommand(1);

  VoxelizeArgs vx;
  auto* voxel = app.add_subcommand("voxelize", "Voxelize a mesh into a VXV1 volume");
  voxel->add_option("--mesh", vx.mesh, "OBJ or PLY mesh")->required();
  voxel->add_option("--dims", vx.dims, "WxHxD")->required();
  voxel->add_option("--out", vx.out, "VXV1 output")->required();
  voxel->add_option("--frontalize", vx.pose, "pose JSON; voxelize the frontalized mesh");
  voxel->add_option("--margin", vx.margin, "relative xy margin around the mesh")->capture_default_str();

  std::string train_cfg;
  auto* tr = app.add_subcommand("train", "Train a model from a JSON config");
  tr->add_option("--config", train_cfg)->required();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", ev.checkpoint)->required();
  eval->add_option("--data", ev.data, "dataset manifest")->required();
  eval->add_option("--out-dir", ev.out_dir)->required();
  eval->add_flag("--rigid", ev.rigid, "apply the ICP rigid transform before measuring");
  eval->add_option("--landmark-noise", ev.landmark_noise, "guidance jitter in pixels")->capture_default_str();
  eval->add_option("--tag", ev.tag, "sample tag to bucket by")->capture_default_str();
  eval->add_option("--curve-max", ev.curve_max)->capture_default_str();
  eval->add_option("--curve-steps", ev.curve_steps)->capture_default_str();
  eval->add_option("--seed", ev.seed)->capture_default_str();

  std::string rc_ckpt, rc_image, rc_lms, rc_out, rc_vol;
  auto* rec = app.add_subcommand("reconstruct", "Reconstruct a mesh from one image");
  rec->add_option("--checkpoint", rc_ckpt)->required();
  rec->add_option("--image", rc_image, "PPM image")->required();
  rec->add_option("--landmarks", rc_lms, "landmarks for vrn-guided");
  rec->add_option("--out", rc_out, "OBJ or PLY output")->required();
  rec->add_option("--volume", rc_vol, "also write the soft volume (VXV1)");

  std::vector<std::string> cv_reports, cv_labels;
  std::string cv_out, cv_svg;
  double cv_max = 0.1;
  std::size_t cv_steps = 101;
  auto* curve = app.add_subcommand("curve", "Cumulative error curves from report CSVs");
  curve->add_option("--reports", cv_reports)->required();
  curve->add_option("--labels", cv_labels);
  curve->add_option("--out", cv_out, "CSV output")->required();
  curve->add_option("--svg", cv_svg, "SVG output");
  curve->add_option("--max", cv_max)->capture_default_str();
  curve->add_option("--steps", cv_steps)->capture_default_str();

  std::string gc_cfg;
  std::size_t gc_samples = 4;
  double gc_tol = 1e-4, gc_step = 1e-5;
  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of a model's gradients");
  gc->add_option("--model-config", gc_cfg, "model JSON; defaults to the toy model");
  gc->add_option("--samples", gc_samples, "entries per parameter tensor, 0 for all")->capture_default_str();
  gc->add_option("--step", gc_step, "central difference step")->capture_default_str();
  gc->add_option("--tol", gc_tol)->capture_default_str();
  gc->add_option("--seed", gc_seed)->capture_default_str();

  SynthOptions so;
  std::string so_dir;
  auto* syn = app.add_subcommand("synth", "Generate a synthetic face dataset");
  syn->add_option("--n", so.count)->required();
  syn->add_option("--seed", so.seed)->required();
  syn->add_option("--out-dir", so_dir)->required();
  syn->add_option("--size", so.image_size)->capture_default_str();
  syn->add_option("--depth", so.depth)->capture_default_str();
  syn->add_option("--yaws", so.yaws, "fixed |yaw| values, cycled over samples")->delimiter(',');
  syn->add_option("--prefix", so.prefix)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "vrn: " << e.what() << "\n";
    return 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (*voxel) return cmd_voxelize(vx);
    if (*tr) return cmd_train(train_cfg);
    if (*eval) return cmd_eval(ev);
    if (*rec) return cmd_reconstruct(rc_ckpt, rc_image, rc_lms, rc_out, rc_vol);
    if (*curve) return cmd_curve(cv_reports, cv_labels, cv_out, cv_svg, cv_max, cv_steps);
    if (*gc) return cmd_gradcheck(gc_cfg, gc_samples, gc_step, gc_tol, gc_seed);
    if (*syn) return cmd_synth(so, so_dir);
  } catch (const std::exception& e) {
    std::cerr << "vrn " << name << ": " << e.what() << "\n";
    return 1;
  }
  return 1;
}
