#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "scoreflow/harness/run.hpp"

namespace scoreflow {

inline constexpr std::string_view kCsvHeader =
    "run_id,sampler,grid,steps,nfe,order,guidance_scale,seed,sw2,mean_err,cov_err,mode_mass_err,wall_ms";
inline constexpr int kReportSchemaVersion = 1;

inline std::string csv_row(const MetricsRow& r) {
  using config_detail::fmt;
  std::string out;
  out += r.run_id + ',' + r.sampler + ',' + r.grid + ',' + std::to_string(r.steps) + ',' + std::to_string(r.nfe) + ',';
  out += std::to_string(r.order) + ',' + fmt(r.guidance_scale) + ',' + std::to_string(r.seed) + ',';
  out += fmt(r.sw2) + ',' + fmt(r.mean_err) + ',' + fmt(r.cov_err) + ',' + fmt(r.mode_mass_err) + ',' + fmt(r.wall_ms);
  return out;
}

inline std::string report_csv(const std::vector<MetricsRow>& rows) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& r : rows) out += csv_row(r) + '\n';
  return out;
}

inline nlohmann::json row_to_json(const MetricsRow& r) {
  return {{"run_id", r.run_id}, {"sampler", r.sampler},   {"grid", r.grid},     {"steps", r.steps},
          {"nfe", r.nfe},       {"order", r.order},       {"guidance_scale", r.guidance_scale},
          {"seed", r.seed},     {"sw2", r.sw2},           {"mean_err", r.mean_err},
          {"cov_err", r.cov_err}, {"mode_mass_err", r.mode_mass_err}, {"wall_ms", r.wall_ms},
          {"w2_axes", r.w2_axes}};
}

inline MetricsRow row_from_json(const nlohmann::json& j) {
  MetricsRow r;
  r.run_id = j.at("run_id").get<std::string>();
  r.sampler = j.at("sampler").get<std::string>();
  r.grid = j.at("grid").get<std::string>();
  r.steps = j.at("steps").get<std::size_t>();
  r.nfe = j.at("nfe").get<std::uint64_t>();
  r.order = j.at("order").get<int>();
  r.guidance_scale = j.at("guidance_scale").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.sw2 = j.at("sw2").get<double>();
  r.mean_err = j.at("mean_err").get<double>();
  r.cov_err = j.at("cov_err").get<double>();
  r.mode_mass_err = j.at("mode_mass_err").get<double>();
  r.wall_ms = j.at("wall_ms").get<double>();
  r.w2_axes = j.at("w2_axes").get<Vec>();
  return r;
}

inline nlohmann::json report_to_json(const GridReport& rep) {
  nlohmann::json j;
  j["schema"] = "scoreflow.report";
  j["version"] = kReportSchemaVersion;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rep.rows) j["rows"].push_back(row_to_json(r));
  j["failures"] = nlohmann::json::array();
  for (const auto& f : rep.failures) j["failures"].push_back({{"run_id", f.run_id}, {"message", f.message}});
  j["best"] = rep.best;
  return j;
}

inline GridReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema") != "scoreflow.report" || j.at("version").get<int>() != kReportSchemaVersion)
      throw InvalidParameter("report: unsupported schema");
    GridReport rep;
    for (const auto& r : j.at("rows")) rep.rows.push_back(row_from_json(r));
    for (const auto& f : j.at("failures"))
      rep.failures.push_back({f.at("run_id").get<std::string>(), f.at("message").get<std::string>()});
    rep.best = j.at("best").get<std::map<std::string, std::string>>();
    return rep;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidParameter(std::string("report: malformed document: ") + e.what());
  }
}

/// Log-log chart of SW2 against NFE with one polyline per sampler (kind + order).
inline std::string report_svg(const std::vector<MetricsRow>& rows) {
  const double width = 640, height = 420, margin = 60;
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
  for (const auto& r : rows) {
    if (r.nfe == 0 || !(r.sw2 > 0.0)) continue;
    const double x = std::log10(static_cast<double>(r.nfe)), y = std::log10(r.sw2);
    series[r.sampler + std::to_string(r.order)].push_back({x, y});
    x_lo = std::min(x_lo, x), x_hi = std::max(x_hi, x);
    y_lo = std::min(y_lo, y), y_hi = std::max(y_hi, y);
  }
  if (series.empty()) x_lo = y_lo = 0, x_hi = y_hi = 1;
  if (x_hi - x_lo < 1e-9) x_lo -= 0.5, x_hi += 0.5;
  if (y_hi - y_lo < 1e-9) y_lo -= 0.5, y_hi += 0.5;
  auto px = [&](double x) { return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin); };
  auto py = [&](double y) { return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin << "\" y2=\"" << height - margin
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\"" << height - margin
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << width / 2 << "\" y=\"" << height - 15 << "\" text-anchor=\"middle\">NFE (log10 "
    << config_detail::fmt(x_lo) << " to " << config_detail::fmt(x_hi) << ")</text>\n";
  s << "<text x=\"15\" y=\"" << height / 2 << "\" transform=\"rotate(-90 15 " << height / 2
    << ")\" text-anchor=\"middle\">SW2 (log10)</text>\n";
  std::size_t k = 0;
  for (auto& [name, pts] : series) {
    std::sort(pts.begin(), pts.end());
    const char* color = colors[k % (sizeof colors / sizeof *colors)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts) s << px(x) << ',' << py(y) << ' ';
    s << "\"/>\n";
    s << "<text x=\"" << width - margin + 5 << "\" y=\"" << margin + 16.0 * static_cast<double>(k) << "\" fill=\"" << color
      << "\">" << name << "</text>\n";
    ++k;
  }
  s << "</svg>\n";
  return s.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

/// Writes report.csv / report.json / report.svg into `dir` for the requested formats.
inline std::vector<std::filesystem::path> emit_report(const GridReport& rep, const std::filesystem::path& dir,
                                                      const std::vector<std::string>& formats) {
  if (rep.rows.empty() && rep.failures.empty()) throw InvalidParameter("emit_report: no rows");
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const std::set<std::string> want(formats.begin(), formats.end());
  if (want.count("csv")) write_text(written.emplace_back(dir / "report.csv"), report_csv(rep.rows));
  if (want.count("json")) write_text(written.emplace_back(dir / "report.json"), report_to_json(rep).dump(2) + "\n");
  if (want.count("svg")) write_text(written.emplace_back(dir / "report.svg"), report_svg(rep.rows));
  return written;
}

/// One point per line, comma-separated coordinates.
inline void write_samples(const std::filesystem::path& path, const std::vector<Vec>& samples) {
  std::string out;
  for (const auto& p : samples) {
    for (std::size_t j = 0; j < p.size(); ++j) out += (j ? "," : "") + config_detail::fmt(p[j]);
    out += '\n';
  }
  write_text(path, out);
}

inline std::vector<Vec> read_samples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<Vec> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (config_detail::trim(line).empty()) continue;
    Vec p;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        p.push_back(config_detail::parse_double(item));
      } catch (const config_detail::BadValue& e) {
        throw ParseError("", number, path.string() + ": " + e.msg);
      }
    }
    if (!out.empty() && p.size() != out.front().size()) throw ParseError("", number, path.string() + ": ragged row");
    out.push_back(std::move(p));
  }
  if (out.empty()) throw ParseError("", 0, path.string() + ": no samples");
  return out;
}

inline nlohmann::json trajectories_to_json(const std::vector<Trajectory>& ts) {
  nlohmann::json j;
  j["schema"] = "scoreflow.trajectories";
  j["version"] = kReportSchemaVersion;
  j["trajectories"] = nlohmann::json::array();
  for (const auto& t : ts) {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : t.records) {
      nlohmann::json e = {{"sigma", r.sigma}, {"x", r.x}};
      if (r.denoised) e["denoised"] = *r.denoised;
      recs.push_back(std::move(e));
    }
    j["trajectories"].push_back(std::move(recs));
  }
  return j;
}

}  // namespace scoreflow
