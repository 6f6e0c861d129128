// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/plots.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "angiodiff/common.hpp"

namespace angiodiff {

double quantile7(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("quantile level outside [0,1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BoxStats box_stats(const std::vector<double>& values) {
  BoxStats b;
  b.q1 = quantile7(values, 0.25);
  b.median = quantile7(values, 0.5);
  b.q3 = quantile7(values, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr, hi_fence = b.q3 + 1.5 * iqr;
  b.whisker_low = b.q1;
  b.whisker_high = b.q3;
  bool any = false;
  for (double v : values) {
    if (v < lo_fence || v > hi_fence) {
      b.outliers.push_back(v);
      continue;
    }
    if (!any) {
      b.whisker_low = b.whisker_high = v;
      any = true;
    }
    b.whisker_low = std::min(b.whisker_low, v);
    b.whisker_high = std::max(b.whisker_high, v);
  }
  std::sort(b.outliers.begin(), b.outliers.end());
  return b;
}

MeanCi mean_ci(const std::vector<double>& values) {
  const auto s = summary_stat(values);
  if (!s.mean) throw ValidationError("mean of an empty sample");
  MeanCi ci{s.n, *s.mean, *s.mean, *s.mean};
  if (s.sd) {
    const double half = 1.96 * *s.sd / std::sqrt(static_cast<double>(s.n));
    ci.low = ci.mean - half;
    ci.high = ci.mean + half;
  }
  return ci;
}

namespace {

std::size_t study_row(ConditionId id) {
  for (std::size_t i = 0; i < kStudyConditionOrder.size(); ++i) {
    if (kStudyConditionOrder[i] == id) return i;
  }
  return 0;
}

std::string row_label(ConditionId id) {
  return fmt::format("{} {}", circulation_of(id) == Circulation::AC ? "AC" : "PC", plane_of(id) == Plane::A ? "A" : "B");
}

constexpr std::array<const char*, 3> kSegmentShort = {"Prox.", "Med.", "Peri."};
constexpr std::array<const char*, 5> kLikertColors = {"#b2182b", "#ef8a62", "#f7f7f7", "#67a9cf", "#2166ac"};
constexpr std::array<const char*, 4> kConditionColors = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a"};

class Svg {
 public:
  Svg(int w, int h, const std::string& title) {
    out_ = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
        "font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
        w, h);
    text(w / 2.0, 18, title, "middle", 13);
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none") {
    out_ += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\" stroke=\"{}\"/>\n",
                        x, y, w, h, fill, stroke);
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke = "black") {
    out_ += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"{}\"/>\n", x1, y1, x2,
                        y2, stroke);
  }
  void circle(double x, double y, double r, const std::string& fill) {
    out_ += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"{:.2f}\" fill=\"{}\"/>\n", x, y, r, fill);
  }
  void text(double x, double y, const std::string& s, const char* anchor = "start", int size = 11) {
    out_ += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"{}\" font-size=\"{}\">{}</text>\n", x, y,
                        anchor, size, s);
  }
  std::string finish() { return out_ + "</svg>\n"; }

 private:
  std::string out_;
};

/// Vertical Likert axis mapping [1,5] to [bottom, top].
struct LikertAxis {
  double top, bottom;
  double y(double v) const { return bottom - (v - 1.0) / 4.0 * (bottom - top); }
  void draw(Svg& svg, double x0, double x1) const {
    for (int v = 1; v <= 5; ++v) {
      svg.line(x0, y(v), x1, y(v), "#dddddd");
      svg.text(x0 - 6, y(v) + 4, std::to_string(v), "end");
    }
  }
};

std::string likert_bars(const LikertCounts& counts) {
  Svg svg(720, 340, "Likert rating distribution by condition and segment");
  const double x0 = 60, top = 40, height = 240, bar = 40, gap = 14;
  double x = x0;
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& hist = counts[c][s];
      const double total = static_cast<double>(std::accumulate(hist.begin(), hist.end(), std::uint64_t{0}));
      double y = top + height;
      for (std::size_t k = 0; k < 5; ++k) {
        const double h = total > 0 ? height * static_cast<double>(hist[k]) / total : 0.0;
        y -= h;
        svg.rect(x, y, bar, h, kLikertColors[k], "#555555");
      }
      svg.text(x + bar / 2, top + height + 14, kSegmentShort[s], "middle", 9);
      x += bar + 2;
    }
    svg.text(x - 1.5 * bar - 4, top + height + 30, row_label(kStudyConditionOrder[c]), "middle");
    x += gap;
  }
  for (std::size_t k = 0; k < 5; ++k) {
    svg.rect(x0 + 70.0 * static_cast<double>(k), 316, 10, 10, kLikertColors[k], "#555555");
    svg.text(x0 + 70.0 * static_cast<double>(k) + 14, 325, fmt::format("score {}", k + 1));
  }
  svg.text(20, top + height / 2, "share", "middle");
  return svg.finish();
}

std::string boxplots(const std::array<std::array<std::vector<double>, 3>, 4>& values) {
  Svg svg(720, 330, "Image-wise segment scores");
  const LikertAxis axis{40, 280};
  axis.draw(svg, 50, 700);
  double x = 60;
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t s = 0; s < 3; ++s) {
      const double w = 34, cx = x + w / 2;
      if (!values[c][s].empty()) {
        const auto b = box_stats(values[c][s]);
        svg.line(cx, axis.y(b.whisker_low), cx, axis.y(b.q1));
        svg.line(cx, axis.y(b.q3), cx, axis.y(b.whisker_high));
        svg.line(cx - 8, axis.y(b.whisker_low), cx + 8, axis.y(b.whisker_low));
        svg.line(cx - 8, axis.y(b.whisker_high), cx + 8, axis.y(b.whisker_high));
        svg.rect(x, axis.y(b.q3), w, axis.y(b.q1) - axis.y(b.q3), kConditionColors[c], "black");
        svg.line(x, axis.y(b.median), x + w, axis.y(b.median));
        for (double o : b.outliers) svg.circle(cx, axis.y(o), 2.5, "black");
      }
      svg.text(cx, 296, kSegmentShort[s], "middle", 9);
      x += w + 4;
    }
    svg.text(x - 58, 312, row_label(kStudyConditionOrder[c]), "middle");
    x += 20;
  }
  return svg.finish();
}

std::string heatmap(const std::array<std::array<std::optional<double>, 3>, 4>& cells) {
  Svg svg(420, 300, "Mean image-wise Likert score");
  const double x0 = 90, y0 = 50, cw = 90, ch = 50;
  for (std::size_t s = 0; s < 3; ++s) svg.text(x0 + cw * (s + 0.5), y0 - 8, kSegmentShort[s], "middle");
  for (std::size_t c = 0; c < 4; ++c) {
    svg.text(x0 - 8, y0 + ch * (c + 0.5) + 4, row_label(kStudyConditionOrder[c]), "end");
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& v = cells[c][s];
      std::string fill = "#eeeeee";
      if (v) {
        const double t = std::clamp((*v - 1.0) / 4.0, 0.0, 1.0);
        const int r = static_cast<int>(std::lround(247 - t * (247 - 33)));
        const int g = static_cast<int>(std::lround(251 - t * (251 - 102)));
        const int b = static_cast<int>(std::lround(255 - t * (255 - 172)));
        fill = fmt::format("#{:02x}{:02x}{:02x}", r, g, b);
      }
      svg.rect(x0 + cw * s, y0 + ch * c, cw, ch, fill, "white");
      svg.text(x0 + cw * (s + 0.5), y0 + ch * (c + 0.5) + 4, v ? fmt::format("{:.2f}", *v) : "-", "middle");
    }
  }
  return svg.finish();
}

std::string rater_plot(const std::map<std::string, std::array<std::optional<MeanCi>, 3>>& means,
                       const std::map<std::string, RaterRole>& roles) {
  const int width = std::max(360, 60 + 130 * static_cast<int>(means.size()));
  Svg svg(width, 320, "Rater-wise mean Likert score (95% CI)");
  const LikertAxis axis{40, 270};
  axis.draw(svg, 50, width - 10.0);
  double x = 70;
  for (const auto& [rater, cells] : means) {
    for (std::size_t s = 0; s < 3; ++s) {
      const double cx = x + 30.0 * static_cast<double>(s);
      if (const auto& ci = cells[s]) {
        svg.line(cx, axis.y(ci->low), cx, axis.y(ci->high));
        svg.circle(cx, axis.y(ci->mean), 4, kConditionColors[s]);
      }
      svg.text(cx, 286, kSegmentShort[s], "middle", 9);
    }
    const auto role = roles.count(rater) ? std::string(to_string(roles.at(rater))) : std::string("?");
    svg.text(x + 30, 302, fmt::format("{} ({})", rater, role), "middle");
    x += 130;
  }
  return svg.finish();
}

std::string prevalence_plot(const std::array<double, 4>& prevalence,
                            const std::array<std::optional<double>, 4>& overall) {
  Svg svg(420, 320, "Training prevalence vs. mean overall score");
  const double x0 = 60, x1 = 400, yb = 270;
  const LikertAxis axis{40, yb};
  axis.draw(svg, x0, x1);
  const double max_p = std::max(1e-9, *std::max_element(prevalence.begin(), prevalence.end()));
  const double scale_p = std::ceil(max_p * 10.0) / 10.0;
  for (int k = 0; k <= 4; ++k) {
    const double p = scale_p * k / 4.0;
    const double px = x0 + (x1 - x0) * p / scale_p;
    svg.text(px, yb + 16, fmt::format("{:.0f}%", 100.0 * p), "middle");
  }
  for (std::size_t c = 0; c < 4; ++c) {
    const auto id = kStudyConditionOrder[c];
    const auto& v = overall[c];
    if (!v) continue;
    const double px = x0 + (x1 - x0) * prevalence[static_cast<std::size_t>(id)] / scale_p;
    svg.circle(px, axis.y(*v), 5, kConditionColors[c]);
    svg.text(px + 8, axis.y(*v) - 6, row_label(id));
  }
  svg.text((x0 + x1) / 2, yb + 34, "share of arterial-phase training frames", "middle");
  return svg.finish();
}

}  // namespace

LikertCounts likert_counts(const std::vector<RatingRecord>& ratings,
                           const std::map<std::string, ConditionId>& conditions) {
  LikertCounts counts{};
  for (const auto& r : ratings) {
    if (r.external_circulation) continue;
    const auto it = conditions.find(r.image_id);
    if (it == conditions.end()) throw ValidationError(fmt::format("image {} has no condition", r.image_id));
    for (std::size_t s = 0; s < 3; ++s) {
      if (const int* v = std::get_if<int>(&r.segments[s])) ++counts[study_row(it->second)][s][*v - 1];
    }
  }
  return counts;
}

std::array<std::array<std::optional<double>, 3>, 4> heatmap_values(const std::vector<ConditionSummaryRow>& summary) {
  std::array<std::array<std::optional<double>, 3>, 4> out{};
  for (const auto& row : summary) {
    for (std::size_t s = 0; s < 3; ++s) out[study_row(row.condition)][s] = row.segments[s].mean;
  }
  return out;
}

std::map<std::string, std::array<std::optional<MeanCi>, 3>> rater_means(const std::vector<RatingRecord>& ratings) {
  std::map<std::string, std::array<std::vector<double>, 3>> values;
  for (const auto& r : ratings) {
    auto& v = values[r.rater_id];
    if (r.external_circulation) continue;
    for (std::size_t s = 0; s < 3; ++s) {
      if (const int* x = std::get_if<int>(&r.segments[s])) v[s].push_back(*x);
    }
  }
  std::map<std::string, std::array<std::optional<MeanCi>, 3>> out;
  for (const auto& [rater, segs] : values) {
    auto& cells = out[rater];
    for (std::size_t s = 0; s < 3; ++s) {
      if (!segs[s].empty()) cells[s] = mean_ci(segs[s]);
    }
  }
  return out;
}

std::vector<std::filesystem::path> emit_plots(const PlotInputs& inputs, const std::filesystem::path& out_dir) {
  if (inputs.ratings.empty()) throw ValidationError("no ratings to plot");
  const auto scores = aggregate_all(inputs.ratings);
  const auto summary = condition_summary(scores, inputs.conditions);

  std::array<std::array<std::vector<double>, 3>, 4> box_values;
  for (const auto& [id, score] : scores) {
    if (!score.ratable()) continue;
    const auto row = study_row(inputs.conditions.at(id));
    for (std::size_t s = 0; s < 3; ++s) {
      if (score.segments[s]) box_values[row][s].push_back(*score.segments[s]);
    }
  }
  std::map<std::string, RaterRole> roles;
  for (const auto& r : inputs.ratings) roles[r.rater_id] = r.rater_role;
  std::array<std::optional<double>, 4> overall{};
  for (std::size_t c = 0; c < 4; ++c) overall[c] = summary[c].overall.mean;

  const std::vector<std::pair<std::string, std::string>> files = {
      {"likert_bars.svg", likert_bars(likert_counts(inputs.ratings, inputs.conditions))},
      {"segment_boxplots.svg", boxplots(box_values)},
      {"mean_heatmap.svg", heatmap(heatmap_values(summary))},
      {"rater_means.svg", rater_plot(rater_means(inputs.ratings), roles)},
      {"prevalence_quality.svg", prevalence_plot(inputs.prevalence, overall)},
  };
  std::vector<std::filesystem::path> written;
  for (const auto& [name, content] : files) {
    write_text_file(out_dir / name, content);
    written.push_back(out_dir / name);
  }
  return written;
}

}  // namespace angiodiff
