#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "voxkit/common.hpp"
#include "voxkit/experiment.hpp"
#include "voxkit/train.hpp"

namespace voxkit {

// ---------------------------------------------------------------------------
// Text tables
// ---------------------------------------------------------------------------

inline void write_grid_table(std::ostream& os, const GridSummary& s) {
  os << "strategy\tdepth\tval_acc\tval_std\ttest_acc\ttest_std\tmean_epochs\truns_ok\truns_failed\n";
  char buf[200];
  for (const auto& c : s.cells) {
    std::snprintf(buf, sizeof buf, "%s\t%d\t%.4f\t%.4f\t%.4f\t%.4f\t%.1f\t%zu\t%zu\n",
                  to_string(c.strategy), c.depth, c.val.mean, c.val.std, c.test.mean,
                  c.test.std, c.mean_epochs, c.n_ok, c.n_failed);
    os << buf;
  }
  os << "# best: " << to_string(s.best_strategy) << " with " << s.best_depth
     << " conv layers\n";
}

inline void write_metric_report(std::ostream& os, const MetricReport& r) {
  const auto row = [&](const char* name, const MeanStd& m) {
    char buf[120];
    std::snprintf(buf, sizeof buf, "%s\t%.4f\t%.4f\n", name, m.mean, m.std);
    os << buf;
  };
  os << "metric\tmean\tstd\n";
  row("precision_cn", r.precision[0]);
  row("recall_cn", r.recall[0]);
  row("f1_cn", r.f1[0]);
  row("precision_ad", r.precision[1]);
  row("recall_ad", r.recall[1]);
  row("f1_ad", r.f1[1]);
  row("accuracy", r.accuracy);
  row("roc_auc", r.roc);
  row("pr_auc", r.pr);
}

// ---------------------------------------------------------------------------
// Minimal SVG canvas
// ---------------------------------------------------------------------------

class Svg {
 public:
  Svg(int width, int height) : w_(width), h_(height) {}

  void line(double x1, double y1, double x2, double y2, const char* stroke = "#404040",
            double width = 1.0, const char* dash = nullptr) {
    body_ << "<line x1=\"" << fmt(x1) << "\" y1=\"" << fmt(y1) << "\" x2=\"" << fmt(x2)
          << "\" y2=\"" << fmt(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\""
          << fmt(width) << "\"";
    if (dash) body_ << " stroke-dasharray=\"" << dash << "\"";
    body_ << "/>\n";
  }

  void polyline(const std::vector<std::array<double, 2>>& pts, const char* stroke,
                double width = 1.5) {
    if (pts.empty()) return;
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << fmt(width)
          << "\" points=\"";
    for (const auto& p : pts) body_ << fmt(p[0]) << ',' << fmt(p[1]) << ' ';
    body_ << "\"/>\n";
  }

  void circle(double cx, double cy, double r, const char* fill) {
    body_ << "<circle cx=\"" << fmt(cx) << "\" cy=\"" << fmt(cy) << "\" r=\"" << fmt(r)
          << "\" fill=\"" << fill << "\"/>\n";
  }

  void rect(double x, double y, double w, double h, const char* fill,
            const char* stroke = "none") {
    body_ << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\"" << fmt(w)
          << "\" height=\"" << fmt(h) << "\" fill=\"" << fill << "\" stroke=\"" << stroke
          << "\"/>\n";
  }

  void text(double x, double y, const std::string& s, double size = 11,
            const char* anchor = "start", const char* fill = "#202020") {
    body_ << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" font-size=\"" << fmt(size)
          << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\" fill=\"" << fill
          << "\">" << escape(s) << "</text>\n";
  }

  std::string str() const {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\"" << h_
       << "\" viewBox=\"0 0 " << w_ << ' ' << h_ << "\">\n"
       << "<rect width=\"" << w_ << "\" height=\"" << h_ << "\" fill=\"#ffffff\"/>\n"
       << body_.str() << "</svg>\n";
    return os.str();
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write plot: " + path);
    os << str();
  }

 private:
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
  }

  static std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '&') out += "&amp;";
      else if (c == '<') out += "&lt;";
      else if (c == '>') out += "&gt;";
      else out += c;
    }
    return out;
  }

  int w_, h_;
  std::ostringstream body_;
};

namespace detail {

struct AxisScale {
  double lo = 0, hi = 1;     // data range
  double p0 = 0, p1 = 1;     // pixel range
  double operator()(double v) const { return p0 + (v - lo) / (hi - lo) * (p1 - p0); }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Plots
// ---------------------------------------------------------------------------

/// Small multiples of validation accuracy per fold: one panel per
/// (strategy, depth) cell, trial values scattered over fold index with the
/// fold means joined.
inline void write_fold_small_multiples(const std::string& path, const GridSummary& summary,
                                       int k) {
  std::vector<Strategy> strategies;
  std::vector<int> depths;
  for (const auto& c : summary.cells) {
    if (std::find(strategies.begin(), strategies.end(), c.strategy) == strategies.end())
      strategies.push_back(c.strategy);
    if (std::find(depths.begin(), depths.end(), c.depth) == depths.end())
      depths.push_back(c.depth);
  }
  std::sort(depths.begin(), depths.end());
  std::sort(strategies.begin(), strategies.end());

  const int cell_w = 190, cell_h = 150, margin = 56, pad = 14;
  const int width = margin + static_cast<int>(depths.size()) * (cell_w + pad) + pad;
  const int height = margin + static_cast<int>(strategies.size()) * (cell_h + pad) + pad;
  Svg svg(width, height);
  svg.text(width / 2.0, 20, "Validation accuracy per fold", 14, "middle");

  double lo = 1.0, hi = 0.0;
  for (const auto& c : summary.cells)
    for (const auto& fold_vals : c.val_by_fold)
      for (double v : fold_vals) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (lo > hi) {
    lo = 0;
    hi = 1;
  }
  lo = std::max(0.0, lo - 0.05);
  hi = std::min(1.0, hi + 0.05);

  for (std::size_t si = 0; si < strategies.size(); ++si) {
    for (std::size_t di = 0; di < depths.size(); ++di) {
      const GridCell* cell = nullptr;
      for (const auto& c : summary.cells)
        if (c.strategy == strategies[si] && c.depth == depths[di]) cell = &c;
      const double x0 = margin + di * (cell_w + pad);
      const double y0 = margin + si * (cell_h + pad);
      svg.rect(x0, y0, cell_w, cell_h, "#fafafa", "#c0c0c0");
      std::ostringstream title;
      title << to_string(strategies[si]) << ", " << depths[di] << " CL";
      svg.text(x0 + cell_w / 2.0, y0 - 3, title.str(), 11, "middle");
      if (!cell) continue;

      detail::AxisScale xs{-0.5, k - 0.5, x0 + 8, x0 + cell_w - 8};
      detail::AxisScale ys{lo, hi, y0 + cell_h - 14, y0 + 8};
      std::vector<std::array<double, 2>> means;
      for (int f = 0; f < k && f < static_cast<int>(cell->val_by_fold.size()); ++f) {
        const auto& vals = cell->val_by_fold[f];
        double sum = 0;
        for (double v : vals) {
          svg.circle(xs(f), ys(v), 2.2, "#4878cf");
          sum += v;
        }
        if (!vals.empty())
          means.push_back({xs(f), ys(sum / static_cast<double>(vals.size()))});
        svg.text(xs(f), y0 + cell_h - 3, std::to_string(f), 8, "middle", "#606060");
      }
      svg.polyline(means, "#d1622b", 1.2);
    }
  }
  // shared y-axis labels
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", lo);
  svg.text(margin - 6, margin + (strategies.size()) * (cell_h + pad) - pad - 14, buf, 9, "end");
  std::snprintf(buf, sizeof buf, "%.2f", hi);
  svg.text(margin - 6, margin + 14, buf, 9, "end");
  svg.save(path);
}

/// Loss, accuracy and predicted-probability quantiles over epochs.
inline void write_training_curves(const std::string& path, const TrainHistory& h) {
  const int width = 640, panel_h = 170, pad = 38;
  const int height = pad + 3 * (panel_h + pad);
  Svg svg(width, height);
  const int n = static_cast<int>(h.records.size());
  if (n == 0) {
    svg.text(width / 2.0, height / 2.0, "empty history", 14, "middle");
    svg.save(path);
    return;
  }
  const double x_left = 52, x_right = width - 16;
  detail::AxisScale xs{1, static_cast<double>(std::max(2, n)), x_left, x_right};

  const auto panel = [&](int index, const char* title, double lo, double hi,
                         detail::AxisScale& ys) {
    const double y0 = pad + index * (panel_h + pad);
    ys = {lo, hi, y0 + panel_h, y0};
    svg.rect(x_left, y0, x_right - x_left, panel_h, "#fafafa", "#c0c0c0");
    svg.text(x_left, y0 - 6, title, 12);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", lo);
    svg.text(x_left - 4, y0 + panel_h, buf, 9, "end");
    std::snprintf(buf, sizeof buf, "%.3g", hi);
    svg.text(x_left - 4, y0 + 9, buf, 9, "end");
  };

  double loss_lo = h.records[0].train_loss, loss_hi = loss_lo;
  for (const auto& r : h.records) {
    loss_lo = std::min(loss_lo, r.train_loss);
    loss_hi = std::max(loss_hi, r.train_loss);
  }
  if (loss_hi == loss_lo) loss_hi = loss_lo + 1;

  detail::AxisScale ys;
  panel(0, "training loss", loss_lo, loss_hi, ys);
  std::vector<std::array<double, 2>> pts;
  for (const auto& r : h.records) pts.push_back({xs(r.epoch), ys(r.train_loss)});
  svg.polyline(pts, "#4878cf");

  panel(1, "accuracy (train blue, validation orange)", 0, 1, ys);
  pts.clear();
  for (const auto& r : h.records) pts.push_back({xs(r.epoch), ys(r.train_acc)});
  svg.polyline(pts, "#4878cf");
  pts.clear();
  for (const auto& r : h.records) pts.push_back({xs(r.epoch), ys(r.val_acc)});
  svg.polyline(pts, "#d1622b");

  panel(2, "predicted-class probability quantiles", 0.5, 1, ys);
  for (int q = 0; q < 5; ++q) {
    pts.clear();
    for (const auto& r : h.records)
      pts.push_back({xs(r.epoch), ys(std::max(0.5, r.prob_quantiles[q]))});
    svg.polyline(pts, q == 2 ? "#d1622b" : "#9cb8e8", q == 2 ? 1.6 : 1.0);
  }
  svg.text((x_left + x_right) / 2, height - 8, "epoch", 11, "middle");
  svg.save(path);
}

inline void write_roc_plot(const std::string& path,
                           const std::vector<std::array<double, 2>>& roc_curve, double auc) {
  const int size = 420, margin = 48;
  Svg svg(size, size);
  detail::AxisScale xs{0, 1, static_cast<double>(margin), static_cast<double>(size - 16)};
  detail::AxisScale ys{0, 1, static_cast<double>(size - margin), 16.0};
  svg.rect(xs(0), ys(1), xs(1) - xs(0), ys(0) - ys(1), "#fafafa", "#c0c0c0");
  svg.line(xs(0), ys(0), xs(1), ys(1), "#a0a0a0", 1.0, "4 3");
  std::vector<std::array<double, 2>> pts;
  for (const auto& p : roc_curve) pts.push_back({xs(p[0]), ys(p[1])});
  svg.polyline(pts, "#4878cf", 1.8);
  char buf[48];
  std::snprintf(buf, sizeof buf, "AUC = %.3f", auc);
  svg.text(xs(0.62), ys(0.08), buf, 12);
  svg.text((xs(0) + xs(1)) / 2, size - 10, "false positive rate", 11, "middle");
  svg.text(14, (ys(0) + ys(1)) / 2, "TPR", 11, "middle");
  svg.save(path);
}

/// 2D embedding scatter (t-SNE output), colored by label, train/test marked.
inline void write_embedding_plot(const std::string& path,
                                 const std::vector<std::array<double, 2>>& coords,
                                 const std::vector<int>& labels,
                                 const std::vector<int>& is_test, const std::string& title) {
  if (coords.size() != labels.size() || coords.size() != is_test.size())
    throw LengthMismatch("write_embedding_plot: inputs differ in length");
  const int size = 480, margin = 30;
  Svg svg(size, size);
  double lo_x = 0, hi_x = 1, lo_y = 0, hi_y = 1;
  if (!coords.empty()) {
    lo_x = hi_x = coords[0][0];
    lo_y = hi_y = coords[0][1];
    for (const auto& c : coords) {
      lo_x = std::min(lo_x, c[0]);
      hi_x = std::max(hi_x, c[0]);
      lo_y = std::min(lo_y, c[1]);
      hi_y = std::max(hi_y, c[1]);
    }
    if (hi_x == lo_x) hi_x = lo_x + 1;
    if (hi_y == lo_y) hi_y = lo_y + 1;
  }
  detail::AxisScale xs{lo_x, hi_x, static_cast<double>(margin), static_cast<double>(size - margin)};
  detail::AxisScale ys{lo_y, hi_y, static_cast<double>(size - margin), static_cast<double>(margin)};
  svg.text(size / 2.0, 18, title, 13, "middle");
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const char* color = labels[i] == 1 ? "#d1622b" : "#4878cf";
    if (is_test[i])
      svg.rect(xs(coords[i][0]) - 2.4, ys(coords[i][1]) - 2.4, 4.8, 4.8, "none", color);
    else
      svg.circle(xs(coords[i][0]), ys(coords[i][1]), 2.4, color);
  }
  svg.save(path);
}

}  // namespace voxkit
