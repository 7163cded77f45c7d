#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "mclab/types.hpp"

namespace mclab {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Static log-log line chart. Non-finite and nonpositive points are skipped
// (log axes), which doubles as the NaN-sentinel handling for failed cells.
inline void write_svg_loglog(const std::string& path, const std::string& title,
                             const std::string& xlabel,
                             const std::string& ylabel,
                             const std::vector<PlotSeries>& series) {
  const int width = 720, height = 520;
  const int ml = 80, mr = 160, mt = 50, mb = 60;
  const double plot_w = width - ml - mr;
  const double plot_h = height - mt - mb;

  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  bool any = false;
  for (const auto& s : series) {
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!(s.x[k] > 0.0) || !(s.y[k] > 0.0) || !std::isfinite(s.y[k]))
        continue;
      const double lx = std::log10(s.x[k]), ly = std::log10(s.y[k]);
      if (!any) {
        xmin = xmax = lx;
        ymin = ymax = ly;
        any = true;
      } else {
        xmin = std::min(xmin, lx);
        xmax = std::max(xmax, lx);
        ymin = std::min(ymin, ly);
        ymax = std::max(ymax, ly);
      }
    }
  }
  if (!any) {
    xmin = ymin = -1;
    xmax = ymax = 1;
  }
  if (xmax - xmin < 1e-9) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-9) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  ymin -= 0.05 * (ymax - ymin);
  ymax += 0.05 * (ymax - ymin);

  const auto sx = [&](double lx) {
    return ml + (lx - xmin) / (xmax - xmin) * plot_w;
  };
  const auto sy = [&](double ly) {
    return mt + plot_h - (ly - ymin) / (ymax - ymin) * plot_h;
  };

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                  "#ff7f0e", "#9467bd", "#8c564b"};

  std::ofstream out(path);
  if (!out) throw ParameterError("write_svg_loglog: cannot open " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' '
      << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"16\">" << title
      << "</text>\n";

  // frame
  out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << plot_w
      << "\" height=\"" << plot_h
      << "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";

  // decade grid and tick labels
  for (int e = static_cast<int>(std::ceil(xmin));
       e <= static_cast<int>(std::floor(xmax)); ++e) {
    const double px = sx(e);
    out << "<line x1=\"" << px << "\" y1=\"" << mt << "\" x2=\"" << px
        << "\" y2=\"" << mt + plot_h
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << px << "\" y=\"" << mt + plot_h + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"11\">1e" << e << "</text>\n";
  }
  for (int e = static_cast<int>(std::ceil(ymin));
       e <= static_cast<int>(std::floor(ymax)); ++e) {
    const double py = sy(e);
    out << "<line x1=\"" << ml << "\" y1=\"" << py << "\" x2=\"" << ml + plot_w
        << "\" y2=\"" << py
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << ml - 6 << "\" y=\"" << py + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
        << "font-size=\"11\">1e" << e << "</text>\n";
  }

  out << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << height - 14
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"13\">" << xlabel << "</text>\n";
  out << "<text x=\"20\" y=\"" << mt + plot_h / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"13\" transform=\"rotate(-90 20 " << mt + plot_h / 2
      << ")\">" << ylabel << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = palette[si % 6];
    std::string points;
    for (std::size_t k = 0; k < series[si].x.size(); ++k) {
      const double xv = series[si].x[k], yv = series[si].y[k];
      if (!(xv > 0.0) || !(yv > 0.0) || !std::isfinite(yv)) continue;
      points += std::to_string(sx(std::log10(xv))) + ',' +
                std::to_string(sy(std::log10(yv))) + ' ';
      out << "<circle cx=\"" << sx(std::log10(xv)) << "\" cy=\""
          << sy(std::log10(yv)) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    if (!points.empty()) {
      out << "<polyline points=\"" << points
          << "\" fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.5\"/>\n";
    }
    const double ly = mt + 16 + 18.0 * static_cast<double>(si);
    out << "<line x1=\"" << ml + plot_w + 10 << "\" y1=\"" << ly
        << "\" x2=\"" << ml + plot_w + 34 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << ml + plot_w + 40 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << series[si].name
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace mclab
