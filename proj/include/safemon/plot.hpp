#pragma once

// SVG line charts of mean miss rate and classification power against epsilon.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "safemon/harness.hpp"

namespace safemon {

enum class PlotPanel { miss_rate, power };

inline std::string render_panel_svg(const std::vector<ResultRow>& rows, PlotPanel panel) {
  constexpr double W = 640, H = 420, L = 70, R = 150, T = 40, B = 60;
  const double pw = W - L - R, ph = H - T - B;

  std::map<std::string, std::vector<std::pair<double, double>>> series;
  double emax = 0.0;
  for (const auto& r : rows) {
    if (r.fit) continue;  // summary rows only
    series[r.method].push_back({r.epsilon, panel == PlotPanel::miss_rate ? r.miss_rate : r.power});
    emax = std::max(emax, r.epsilon);
  }
  if (emax <= 0.0) emax = 1.0;
  const double ymax = panel == PlotPanel::miss_rate ? std::max(emax, 0.05) : 1.0;
  auto x = [&](double e) { return L + pw * e / emax; };
  auto y = [&](double v) { return T + ph * (1.0 - std::clamp(v / ymax, 0.0, 1.0)); };

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      W, H);
  s += fmt::format("<text x=\"{}\" y=\"22\" font-size=\"15\">{}</text>\n", L,
                   panel == PlotPanel::miss_rate ? "Empirical miss rate vs. epsilon" : "Classification power vs. epsilon");
  s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", L, T, pw, ph);
  for (int i = 0; i <= 5; ++i) {
    const double ev = emax * i / 5.0, yv = ymax * i / 5.0;
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.2f}</text>\n", x(ev), T + ph + 18, ev);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.2f}</text>\n", L - 6, y(yv) + 4, yv);
  }
  s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">epsilon</text>\n", L + pw / 2, H - 15);
  if (panel == PlotPanel::miss_rate)
    s += fmt::format(
        "<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n", x(0), y(0),
        x(std::min(emax, ymax)), y(std::min(emax, ymax)));

  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  std::size_t ci = 0;
  for (auto& [name, pts] : series) {
    std::sort(pts.begin(), pts.end());
    const char* c = colors[ci % 6];
    std::string poly;
    for (const auto& [e, v] : pts) poly += fmt::format("{:.1f},{:.1f} ", x(e), y(v));
    s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", c, poly);
    for (const auto& [e, v] : pts) s += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"{}\"/>\n", x(e), y(v), c);
    const double ly = T + 16.0 * static_cast<double>(ci);
    s += fmt::format("<line x1=\"{}\" y1=\"{:.1f}\" x2=\"{}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"/>\n", W - R + 12, ly + 8,
                     W - R + 32, ly + 8, c);
    s += fmt::format("<text x=\"{}\" y=\"{:.1f}\">{}</text>\n", W - R + 38, ly + 12, name);
    ++ci;
  }
  s += "</svg>\n";
  return s;
}

}  // namespace safemon
