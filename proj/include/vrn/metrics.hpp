#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "vrn/mesh_io.hpp"
#include "vrn/registration.hpp"

namespace vrn {

struct MetricError : Error { using Error::Error; };

struct EvalReport {
  std::string id;
  std::vector<double> per_vertex_errors;  // ||x_k - y_k|| / d
  double nme = 0.0;
  double d = 1.0;
  std::map<std::string, std::string> tags;
};

inline double interocular_distance(const Mesh& gt, std::uint32_t left_outer, std::uint32_t right_outer) {
  if (left_outer >= gt.vertices.size() || right_outer >= gt.vertices.size())
    throw IndexError("eye-corner vertex index out of range");
  const double d = (gt.vertices[left_outer] - gt.vertices[right_outer]).norm();
  if (!(d > 0)) throw MetricError("eye corners coincide: interocular distance is zero");
  return d;
}

// Normalised mean error over the correspondence pairs (the gt evaluation region).
inline EvalReport nme(const Mesh& pred, const Mesh& gt, const Correspondence& corr, double d) {
  if (!(d > 0)) throw MetricError("interocular distance must be positive");
  if (corr.pairs.empty()) throw MetricError("empty evaluation region");
  EvalReport r;
  r.d = d;
  r.per_vertex_errors.reserve(corr.pairs.size());
  double sum = 0;
  for (const auto& [pi, gi] : corr.pairs) {
    if (pi >= pred.vertices.size() || gi >= gt.vertices.size()) throw IndexError("correspondence index out of range");
    const Vec3 x = corr.apply_rigid ? corr.rigid.apply(pred.vertices[pi]) : pred.vertices[pi];
    const double e = (x - gt.vertices[gi]).norm() / d;
    r.per_vertex_errors.push_back(e);
    sum += e;
  }
  r.nme = sum / double(r.per_vertex_errors.size());
  return r;
}

struct CurvePoint {
  double threshold;
  double fraction;  // share of reports with nme <= threshold
};

inline std::vector<CurvePoint> cumulative_curve(std::span<const EvalReport> reports, std::span<const double> thresholds) {
  if (thresholds.empty()) throw MetricError("cumulative_curve: empty threshold grid");
  if (reports.empty()) throw MetricError("cumulative_curve: no reports");
  std::vector<double> sorted;
  sorted.reserve(reports.size());
  for (const auto& r : reports) sorted.push_back(r.nme);
  std::sort(sorted.begin(), sorted.end());
  std::vector<CurvePoint> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto n = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    out.push_back({t, double(n) / double(sorted.size())});
  }
  return out;
}

inline std::vector<double> linear_grid(double lo, double hi, std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = n == 1 ? lo : lo + (hi - lo) * double(i) / double(n - 1);
  return g;
}

// Mean NME per value of `tag`. Reports without the tag are skipped; empty
// buckets never appear.
inline std::map<std::string, double> bucketed_eval(std::span<const EvalReport> reports, const std::string& tag) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& r : reports) {
    auto it = r.tags.find(tag);
    if (it == r.tags.end()) continue;
    auto& a = acc[it->second];
    a.first += r.nme;
    a.second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [k, a] : acc) out[k] = a.first / double(a.second);
  return out;
}

inline double mean_nme(std::span<const EvalReport> reports) {
  if (reports.empty()) throw MetricError("mean_nme: no reports");
  double s = 0;
  for (const auto& r : reports) s += r.nme;
  return s / double(reports.size());
}

// CSV: id,nme,<tag columns in sorted key order>
inline void write_reports_csv(std::span<const EvalReport> reports, const std::filesystem::path& path) {
  std::set<std::string> keys;
  for (const auto& r : reports)
    for (const auto& [k, v] : r.tags) keys.insert(k);
  auto out = detail::open_out(path);
  out << "id,nme";
  for (const auto& k : keys) out << ',' << k;
  out << '\n';
  out.precision(17);
  for (const auto& r : reports) {
    out << r.id << ',' << r.nme;
    for (const auto& k : keys) {
      auto it = r.tags.find(k);
      out << ',' << (it == r.tags.end() ? "" : it->second);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::vector<EvalReport> read_reports_csv(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty report CSV");
  const auto header = split(line);
  if (header.size() < 2 || header[0] != "id" || header[1] != "nme") throw ParseError("report CSV must start with id,nme");
  std::vector<EvalReport> reports;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw ParseError("report CSV line " + std::to_string(line_no) + ": wrong column count");
    EvalReport r;
    r.id = cells[0];
    try {
      r.nme = std::stod(cells[1]);
    } catch (const std::exception&) {
      throw ParseError("report CSV line " + std::to_string(line_no) + ": bad nme '" + cells[1] + "'");
    }
    for (std::size_t k = 2; k < header.size(); ++k)
      if (!cells[k].empty()) r.tags[header[k]] = cells[k];
    reports.push_back(std::move(r));
  }
  return reports;
}

inline void write_curve_csv(std::span<const CurvePoint> curve, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out.precision(17);
  out << "threshold,fraction\n";
  for (const auto& p : curve) out << p.threshold << ',' << p.fraction << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// Step plot of one or more cumulative curves.
inline void write_curve_svg(const std::vector<std::pair<std::string, std::vector<CurvePoint>>>& curves,
                            const std::filesystem::path& path) {
  constexpr double W = 480, H = 360, M = 48;
  double tmax = 0;
  for (const auto& [_, c] : curves)
    for (const auto& p : c) tmax = std::max(tmax, p.threshold);
  if (tmax <= 0) tmax = 1;
  auto X = [&](double t) { return M + (W - 2 * M) * t / tmax; };
  auto Y = [&](double f) { return H - M - (H - 2 * M) * f; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  auto out = detail::open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << M << "\" y1=\"" << H - M << "\" x2=\"" << W - M << "\" y2=\"" << H - M << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << M << "\" y1=\"" << M << "\" x2=\"" << M << "\" y2=\"" << H - M << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">NME (max "
      << tmax << ")</text>\n"
      << "<text x=\"14\" y=\"" << H / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << H / 2
      << ")\" text-anchor=\"middle\">fraction of meshes</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& [name, c] = curves[i];
    const char* col = colors[i % 5];
    out << "<polyline fill=\"none\" stroke=\"" << col << "\" points=\"";
    double prev = 0;
    for (const auto& p : c) {
      out << X(p.threshold) << ',' << Y(prev) << ' ' << X(p.threshold) << ',' << Y(p.fraction) << ' ';
      prev = p.fraction;
    }
    out << "\"/>\n<text x=\"" << W - M - 4 << "\" y=\"" << M + 14 * (i + 1) << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
        << col << "\">" << name << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace vrn
