#pragma once

// Report emission: JSON + CSV metric tables and static SVG plots. All output
// is a pure function of the evaluation results and the config hash — no
// timestamps or machine identifiers — so identical runs produce byte-identical
// artifacts.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdos/metrics.hpp"

namespace tdos {

struct EvalReport {
  std::uint64_t config_hash = 0;
  std::string dataset = "toy-eval";
  int num_scenes = 0;
  PixelEval pixel;  // pooled over all eval pixels
  double mean_auiou = 0.0;
  double mean_best_iou = 0.0;
  double mean_f1 = 0.0;
  std::vector<ObjectEval> per_image;
  std::vector<double> grid;  // threshold grid shared by all object evals
};

inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline EvalReport summarize(std::uint64_t config_hash,
                            const std::string& dataset,
                            const PixelEval& pixel,
                            std::vector<ObjectEval> per_image,
                            std::vector<double> grid) {
  EvalReport r;
  r.config_hash = config_hash;
  r.dataset = dataset;
  r.num_scenes = static_cast<int>(per_image.size());
  r.pixel = pixel;
  r.per_image = std::move(per_image);
  r.grid = std::move(grid);
  for (const auto& o : r.per_image) {
    r.mean_auiou += o.auiou;
    r.mean_best_iou += o.best_iou;
    r.mean_f1 += o.mean_f1;
  }
  if (!r.per_image.empty()) {
    r.mean_auiou /= r.per_image.size();
    r.mean_best_iou /= r.per_image.size();
    r.mean_f1 /= r.per_image.size();
  }
  return r;
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["config_hash"] = r.config_hash;
  j["dataset"] = r.dataset;
  j["num_scenes"] = r.num_scenes;
  j["pixel"] = {{"auprc", r.pixel.auprc}, {"fpr95", r.pixel.fpr95}};
  j["object"] = {{"auiou", r.mean_auiou},
                 {"iou", r.mean_best_iou},
                 {"mean_f1", r.mean_f1}};
  nlohmann::json per = nlohmann::json::array();
  for (const auto& o : r.per_image)
    per.push_back({{"auiou", o.auiou},
                   {"iou", o.best_iou},
                   {"mean_f1", o.mean_f1}});
  j["per_image"] = per;
  return j;
}

// One row per dataset, higher-is-better columns marked with an up arrow.
inline std::string report_csv(const EvalReport& r) {
  std::string out = "# config_hash=" + std::to_string(r.config_hash) + "\n";
  out += "dataset,AuPRC↑,FPR95↓,AuIoU↑,IoU↑,meanF1↑\n";
  out += r.dataset + "," + fmt_num(r.pixel.auprc) + "," +
         fmt_num(r.pixel.fpr95) + "," + fmt_num(r.mean_auiou) + "," +
         fmt_num(r.mean_best_iou) + "," + fmt_num(r.mean_f1) + "\n";
  return out;
}

// PR curve points as CSV for offline replotting.
inline std::string curve_csv(const EvalReport& r) {
  std::string out = "# config_hash=" + std::to_string(r.config_hash) + "\n";
  out += "recall,precision\n";
  for (const auto& p : r.pixel.curve)
    out += fmt_num(p.recall) + "," + fmt_num(p.precision) + "\n";
  return out;
}

// Minimal static line plot: unit-square data mapped into a fixed viewport.
inline std::string svg_line_plot(const std::vector<std::pair<double, double>>& pts,
                                 const std::string& title,
                                 const std::string& xlabel,
                                 const std::string& ylabel,
                                 std::uint64_t config_hash) {
  const double w = 480, h = 360, ml = 56, mr = 16, mt = 36, mb = 44;
  const double pw = w - ml - mr, ph = h - mt - mb;
  auto px = [&](double x) { return ml + x * pw; };
  auto py = [&](double y) { return mt + (1.0 - y) * ph; };
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt_num(w) +
       "\" height=\"" + fmt_num(h) + "\">\n";
  s += "<!-- config_hash=" + std::to_string(config_hash) + " -->\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt_num(w / 2) +
       "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + title +
       "</text>\n";
  // axes
  s += "<line x1=\"" + fmt_num(ml) + "\" y1=\"" + fmt_num(mt) + "\" x2=\"" +
       fmt_num(ml) + "\" y2=\"" + fmt_num(mt + ph) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt_num(ml) + "\" y1=\"" + fmt_num(mt + ph) +
       "\" x2=\"" + fmt_num(ml + pw) + "\" y2=\"" + fmt_num(mt + ph) +
       "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double f = i / 4.0;
    s += "<text x=\"" + fmt_num(px(f)) + "\" y=\"" + fmt_num(mt + ph + 16) +
         "\" text-anchor=\"middle\" font-size=\"10\">" + fmt_num(f) +
         "</text>\n";
    s += "<text x=\"" + fmt_num(ml - 6) + "\" y=\"" + fmt_num(py(f) + 3) +
         "\" text-anchor=\"end\" font-size=\"10\">" + fmt_num(f) +
         "</text>\n";
  }
  s += "<text x=\"" + fmt_num(ml + pw / 2) + "\" y=\"" + fmt_num(h - 8) +
       "\" text-anchor=\"middle\" font-size=\"12\">" + xlabel + "</text>\n";
  s += "<text x=\"14\" y=\"" + fmt_num(mt + ph / 2) +
       "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 " +
       fmt_num(mt + ph / 2) + ")\">" + ylabel + "</text>\n";
  if (!pts.empty()) {
    s += "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" "
         "points=\"";
    for (const auto& [x, y] : pts)
      s += fmt_num(px(x)) + "," + fmt_num(py(y)) + " ";
    s += "\"/>\n";
  }
  s += "</svg>\n";
  return s;
}

inline std::string pr_curve_svg(const EvalReport& r) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : r.pixel.curve) pts.emplace_back(p.recall, p.precision);
  return svg_line_plot(pts, "Precision-Recall (" + r.dataset + ")", "recall",
                       "precision", r.config_hash);
}

// Mean IoU over images as a function of the binarization threshold.
inline std::string iou_curve_svg(const EvalReport& r) {
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < r.grid.size(); ++i) {
    double m = 0.0;
    for (const auto& o : r.per_image) m += o.per_threshold[i].iou;
    if (!r.per_image.empty()) m /= r.per_image.size();
    pts.emplace_back(r.grid[i], m);
  }
  return svg_line_plot(pts, "IoU vs threshold (" + r.dataset + ")",
                       "threshold", "IoU", r.config_hash);
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write " + path);
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
}

}  // namespace tdos
