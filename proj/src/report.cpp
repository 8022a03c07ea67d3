#include "distalign/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "distalign/error.hpp"

namespace distalign {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string render_markdown(const std::vector<TraceRow>& rows, const std::vector<std::string>& labels) {
  if (rows.empty()) throw InvalidInput("nothing to report: trace has no rows");
  const std::size_t n = rows.front().freq.size();
  std::vector<std::string> names = labels;
  if (names.size() != n) {
    names.clear();
    for (std::size_t i = 0; i < n; ++i) names.push_back("group " + std::to_string(i));
  }

  std::ostringstream out;
  out << "| iter |";
  for (const auto& name : names) out << ' ' << name << " |";
  out << " KL |\n|---:|";
  for (std::size_t i = 0; i < n; ++i) out << "---:|";
  out << "---:|\n";
  std::size_t best = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    out << "| " << row.iter << " |";
    for (double f : row.freq) out << ' ' << fixed(f, 3) << " |";
    out << ' ' << fixed(row.kl, 4) << " |\n";
    if (row.kl < rows[best].kl) best = r;
  }
  out << "\nBest iteration: " << rows[best].iter << " (KL " << fixed(rows[best].kl, 4) << ")\n";
  return out.str();
}

std::string render_svg(const std::vector<TraceRow>& rows) {
  if (rows.empty()) throw InvalidInput("nothing to plot: trace has no rows");
  constexpr double width = 640, height = 400, left = 70, right = 20, top = 20, bottom = 50;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const double max_iter = std::max<double>(1.0, static_cast<double>(rows.back().iter));
  double max_kl = 0.0;
  for (const auto& r : rows) max_kl = std::max(max_kl, r.kl);
  if (max_kl <= 0.0) max_kl = 1.0;

  auto px = [&](double iter) { return left + plot_w * iter / max_iter; };
  auto py = [&](double kl) { return top + plot_h * (1.0 - kl / max_kl); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double kl = max_kl * k / 4.0;
    out << "<text x=\"" << left - 6 << "\" y=\"" << py(kl) + 4 << "\" text-anchor=\"end\">" << fixed(kl, 3)
        << "</text>\n";
    const double iter = max_iter * k / 4.0;
    out << "<text x=\"" << px(iter) << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">"
        << fixed(iter, 0) << "</text>\n";
  }
  out << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\">iteration</text>\n";
  out << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << top + plot_h / 2 << ")\">KL divergence</text>\n";
  out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (const auto& r : rows) out << fixed(px(static_cast<double>(r.iter)), 2) << ',' << fixed(py(r.kl), 2) << ' ';
  out << "\"/>\n</svg>\n";
  return out.str();
}

}  // namespace distalign
