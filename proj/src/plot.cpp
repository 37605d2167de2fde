#include "cmkm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

namespace cmkm::plot {

namespace fs = std::filesystem;

namespace {

struct Series {
  std::string method;
  std::vector<double> x, mean, half;
};

std::vector<Series> group(const std::vector<evaluate::EvalResult>& rows) {
  std::vector<Series> out;
  for (const auto& r : rows) {
    if (!r.fraction) continue;
    auto it = std::find_if(out.begin(), out.end(), [&](const Series& s) { return s.method == r.method; });
    if (it == out.end()) {
      out.push_back({r.method, {}, {}, {}});
      it = out.end() - 1;
    }
    it->x.push_back(*r.fraction);
    it->mean.push_back(r.value);
    it->half.push_back(r.ci_half_width);
  }
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

}  // namespace

void write_semisup_svg(const fs::path& path, const std::vector<evaluate::EvalResult>& rows, const std::string& title) {
  const auto series = group(rows);
  if (series.empty()) throw std::invalid_argument("semisup plot: no rows with a label fraction");
  double xmin = 1, xmax = 0;
  for (const auto& s : series)
    for (double x : s.x) xmin = std::min(xmin, x), xmax = std::max(xmax, x);
  if (xmax <= xmin) xmin = xmax / 2;

  const double w = 640, h = 420, left = 70, right = 160, top = 40, bottom = 60;
  const double pw = w - left - right, ph = h - top - bottom;
  auto px = [&](double x) { return left + pw * (std::log10(x) - std::log10(xmin)) / (std::log10(xmax) - std::log10(xmin)); };
  auto py = [&](double y) { return top + ph * (1 - std::clamp(y, 0.0, 1.0)); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write plot: " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << left + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = i / 5.0;
    out << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(y) << "\" y2=\"" << py(y)
        << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << fmt("%.1f", y)
        << "</text>\n";
  }
  std::set<double> ticks;
  for (const auto& s : series) ticks.insert(s.x.begin(), s.x.end());
  for (double x : ticks)
    out << "<text x=\"" << px(x) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
        << fmt("%g%%", 100 * x) << "</text>\n";
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 16 << "\" text-anchor=\"middle\">labelled fraction</text>\n";
  out << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << to_string(rows.front().metric) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % 6];
    std::vector<std::size_t> order(s.x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.x[a] < s.x[b]; });
    std::string band, line;
    for (std::size_t i : order) band += fmt("%.2f,", px(s.x[i])) + fmt("%.2f ", py(s.mean[i] + s.half[i]));
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      band += fmt("%.2f,", px(s.x[*it])) + fmt("%.2f ", py(s.mean[*it] - s.half[*it]));
    for (std::size_t i : order) line += fmt("%.2f,", px(s.x[i])) + fmt("%.2f ", py(s.mean[i]));
    out << "<polygon points=\"" << band << "\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    out << "<polyline points=\"" << line << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    for (std::size_t i : order)
      out << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.mean[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = top + 16 + 20 * static_cast<double>(k);
    out << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 36 << "\" y1=\"" << ly << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + pw + 42 << "\" y=\"" << ly + 4 << "\">" << s.method << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_semisup_table(const fs::path& path, const std::vector<evaluate::EvalResult>& rows) {
  const auto series = group(rows);
  std::set<double> xs;
  for (const auto& s : series) xs.insert(s.x.begin(), s.x.end());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write table: " + path.string());
  out << "fraction";
  for (const auto& s : series) out << ',' << s.method << "_mean," << s.method << "_ci_low," << s.method << "_ci_high";
  out << '\n';
  for (double x : xs) {
    out << fmt("%g", x);
    for (const auto& s : series) {
      const auto it = std::find(s.x.begin(), s.x.end(), x);
      if (it == s.x.end()) {
        out << ",,,";
        continue;
      }
      const auto i = static_cast<std::size_t>(it - s.x.begin());
      out << ',' << fmt("%.6f", s.mean[i]) << ',' << fmt("%.6f", s.mean[i] - s.half[i]) << ','
          << fmt("%.6f", s.mean[i] + s.half[i]);
    }
    out << '\n';
  }
}

}  // namespace cmkm::plot
