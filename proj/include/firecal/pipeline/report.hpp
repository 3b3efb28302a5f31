#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "firecal/material.hpp"
#include "firecal/pipeline/stages.hpp"

namespace firecal::pipeline {

inline constexpr std::size_t kCurveDraws = 1000;

namespace svg {

struct Series {
  std::vector<double> x, y;
  std::string color = "#1f77b4";
  double opacity = 1.0;
  double width = 1.0;
};

/// Plain line chart with linear axes.
inline std::string chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                         const std::vector<Series>& series) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!(x1 > x0)) x1 = x0 + 1.0;
  if (!(y1 > y0)) y1 = y0 + 1.0;
  const double w = 640, h = 400, ml = 70, mr = 20, mt = 30, mb = 50;
  const auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); };
  const auto py = [&](double y) { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << h - mb + 16 << "\" text-anchor=\"middle\" font-size=\"11\">" << xv
       << "</text>\n";
    os << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << yv
       << "</text>\n";
  }
  os << "<text x=\"" << w / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\" font-size=\"12\">" << xlabel
     << "</text>\n";
  os << "<text x=\"15\" y=\"" << h / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 15 "
     << h / 2 << ")\">" << ylabel << "</text>\n";
  for (const auto& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-opacity=\"" << s.opacity
       << "\" stroke-width=\"" << s.width << "\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.y[i])) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace svg

/// Artifacts a completed calibration leaves in its run directory.
inline std::vector<fs::path> required_artifacts(const RunPaths& paths) {
  return {paths.calibration(), paths.samples(), paths.summary(), paths.map(), paths.predictive(), paths.snapshots()};
}

inline void require_artifacts(const RunPaths& paths) {
  std::vector<std::string> missing;
  for (const auto& p : required_artifacts(paths))
    if (!fs::exists(p)) missing.push_back(p.filename().string());
  if (!missing.empty())
    throw ConfigError("incomplete run directory " + paths.dir.string() + ": missing " + join(missing, ", "));
}

/// Property curves at 1 °C resolution for `rows` of a parameter table.
inline void write_curves(const fs::path& p, const std::string& kind, const std::string& hash,
                         const Eigen::MatrixXd& params, const std::vector<Eigen::Index>& rows,
                         const std::function<double(double, const MaterialParams&)>& property) {
  write_atomic(p, [&](std::ostream& os) {
    os << header_line(kind, hash);
    os << "draw,row";
    for (int t = 0; t <= 1200; ++t) os << ",T" << t;
    os << '\n';
    std::vector<double> row;
    for (std::size_t d = 0; d < rows.size(); ++d) {
      const Eigen::VectorXd x = params.row(rows[d]).transpose();
      const auto mp = MaterialParams::from_range(x.head(bayes::kModelDim));
      row.assign({static_cast<double>(d), static_cast<double>(rows[d])});
      for (int t = 0; t <= 1200; ++t) row.push_back(property(static_cast<double>(t), mp));
      write_row(os, row);
    }
  });
}

inline svg::Series curve_series(const Eigen::VectorXd& x, const std::function<double(double, const MaterialParams&)>& property,
                                const std::string& color, double opacity) {
  svg::Series s;
  s.color = color;
  s.opacity = opacity;
  const auto mp = MaterialParams::from_range(x.head(bayes::kModelDim));
  for (int t = 0; t <= 1200; t += 5) {
    s.x.push_back(t);
    s.y.push_back(property(static_cast<double>(t), mp));
  }
  return s;
}

struct ReportFile {
  std::string name;
  std::string kind;
};

/// Collates a completed run into `report/`: a Markdown summary, 1000 posterior
/// and prior draws of the λ, c and ρ curves, and SVG renderings. Returns the files written.
inline std::vector<ReportFile> run_report(const RunConfig& c, const RunPaths& paths) {
  require_artifacts(paths);
  const json info = read_json(paths.calibration());
  Eigen::VectorXd lp;
  const Eigen::MatrixXd samples = read_samples(paths.samples(), &lp);
  if (samples.rows() == 0) throw ConfigError(paths.samples().string() + ": no samples");
  const auto hash = Hasher().add("report").add(file_hash(paths.samples())).add(file_hash(paths.calibration())).hex();
  const fs::path dir = paths.report_dir();
  fs::create_directories(dir);
  std::vector<ReportFile> files;

  std::mt19937_64 rng(stage_seed(c.seed, "report"));
  std::uniform_int_distribution<Eigen::Index> pick(0, samples.rows() - 1);
  std::vector<Eigen::Index> post_rows(kCurveDraws);
  for (auto& r : post_rows) r = pick(rng);
  Eigen::MatrixXd prior_draws(static_cast<Eigen::Index>(kCurveDraws), static_cast<Eigen::Index>(bayes::kModelDim));
  std::vector<Eigen::Index> prior_rows(kCurveDraws);
  for (std::size_t d = 0; d < kCurveDraws; ++d) {
    prior_rows[d] = static_cast<Eigen::Index>(d);
    for (std::size_t k = 0; k < bayes::kModelDim; ++k)
      prior_draws(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k)) =
          c.prior.lower[k] + (c.prior.upper[k] - c.prior.lower[k]) * aies::uniform01(rng);
  }

  using Property = std::function<double(double, const MaterialParams&)>;
  ProductConfig product;
  for (const auto& l : c.layup.layers)
    if (const auto* cl = std::get_if<CalibratedLayer>(&l.source)) product = cl->product;
  const Property lambda = [](double t, const MaterialParams& p) { return conductivity(t, p); };
  const Property heat = [](double t, const MaterialParams& p) { return specific_heat(t, p); };
  const Property rho = [product](double t, const MaterialParams& p) { return density(t, p, product); };
  const std::pair<const char*, Property> props[] = {
      {"conductivity", lambda}, {"specific_heat", heat}, {"density", rho}};
  for (const auto& [name, f] : props) {
    write_curves(dir / (std::string(name) + "_posterior.csv"), std::string(name) + "_posterior", hash, samples,
                 post_rows, f);
    write_curves(dir / (std::string(name) + "_prior.csv"), std::string(name) + "_prior", hash, prior_draws,
                 prior_rows, f);
    files.push_back({std::string(name) + "_posterior.csv", std::string(name) + "_posterior"});
    files.push_back({std::string(name) + "_prior.csv", std::string(name) + "_prior"});
  }

  // Renderings: 100 curves each to keep the files small.
  std::vector<svg::Series> lam;
  for (std::size_t d = 0; d < 100; ++d)
    lam.push_back(curve_series(prior_draws.row(static_cast<Eigen::Index>(d)).transpose(), lambda, "#999999", 0.2));
  for (std::size_t d = 0; d < 100; ++d)
    lam.push_back(curve_series(samples.row(post_rows[d]).transpose(), lambda, "#d62728", 0.2));
  write_atomic(dir / "conductivity.svg", [&](std::ostream& os) {
    os << svg::chart("Conductivity: prior (grey) and posterior (red) draws", "T [C]", "lambda [W/(m K)]", lam);
  });
  files.push_back({"conductivity.svg", "svg"});

  const Table band = read_table(paths.predictive());
  std::map<double, std::array<svg::Series, 4>> per_sensor;
  const auto ci = band.col("interface"), ct = band.col("time");
  const std::size_t cols[] = {band.col("lower"), band.col("mean"), band.col("upper"), band.col("data")};
  const char* colors[] = {"#1f77b4", "#000000", "#1f77b4", "#d62728"};
  for (const auto& row : band.rows) {
    auto& s = per_sensor[row[ci]];
    for (int k = 0; k < 4; ++k) {
      s[static_cast<std::size_t>(k)].x.push_back(row[ct]);
      s[static_cast<std::size_t>(k)].y.push_back(row[cols[k]]);
      s[static_cast<std::size_t>(k)].color = colors[k];
    }
  }
  std::vector<svg::Series> traj;
  for (auto& [iface, s] : per_sensor)
    for (auto& x : s) traj.push_back(x);
  write_atomic(dir / "predictive_band.svg", [&](std::ostream& os) {
    os << svg::chart("Posterior predictive 95% band (blue), mean (black), data (red)", "time [s]", "T [C]", traj);
  });
  files.push_back({"predictive_band.svg", "svg"});

  if (fs::exists(paths.sobol())) {
    const Table sob = read_table(paths.sobol());
    std::vector<svg::Series> ss;
    const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
    const double first_iface = sob.rows.empty() ? 0.0 : sob.rows.front()[1];
    for (std::size_t k = 0; k < bayes::kModelDim; ++k) {
      svg::Series s;
      s.color = palette[k];
      for (const auto& row : sob.rows)
        if (row[1] == first_iface) {
          s.x.push_back(row[0]);
          s.y.push_back(row[2 + k]);
        }
      ss.push_back(std::move(s));
    }
    write_atomic(dir / "sobol.svg", [&](std::ostream& os) {
      os << svg::chart("Total Sobol' indices x1..x6", "time [s]", "index", ss);
    });
    files.push_back({"sobol.svg", "svg"});
  }

  std::ostringstream md;
  md << "# Calibration report: " << info.value("name", c.name) << "\n\n";
  md << "- surrogate error estimate: " << info.at("eta").dump() << " (threshold " << info.at("eta_threshold").dump()
     << ")\n";
  md << "- retained principal components: " << info.at("n_components").dump() << "\n";
  md << "- acceptance rate: " << info.at("acceptance_rate").dump() << "\n";
  md << "- posterior samples: " << samples.rows() << "\n";
  md << "- posterior predictive coverage of the data: " << info.at("predictive_coverage").dump() << "\n\n";
  md << "| parameter | MAP | mean | sd | CoV | 2.5 % | 97.5 % | prior sd |\n";
  md << "|---|---|---|---|---|---|---|---|\n";
  {
    std::ifstream in(paths.summary());
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      if (header) {
        header = false;
        continue;
      }
      md << "| " << join(split_fields(line), " | ") << " |\n";
    }
  }
  md << "\nFiles: predictive.csv, predictive_snapshots.csv, posterior_samples.csv, posterior_summary.csv, map.json";
  for (const auto& f : files) md << ", report/" << f.name;
  md << "\n";
  write_atomic(dir / "report.md", [&](std::ostream& os) {
    os << "<!-- firecal report schema=" << kSchemaVersion << " input_hash=" << hash << " -->\n" << md.str();
  });
  files.push_back({"report.md", "report"});

  json manifest{{"kind", "manifest"}, {"schema", kSchemaVersion}, {"input_hash", hash}};
  for (const auto& f : files) manifest["files"].push_back({{"name", f.name}, {"kind", f.kind}});
  write_json(dir / "manifest.json", manifest);
  return files;
}

}  // namespace firecal::pipeline
