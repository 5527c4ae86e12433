#ifndef SECDIFF_PLOTS_HPP
#define SECDIFF_PLOTS_HPP

// Deterministic SVG line charts for metric and convergence CSVs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace secdiff {

struct csv_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kMetricsHeader = "axis,method,mean_rsum,ci_low,ci_high,n";

struct MetricRow {
  std::string axis;
  std::string method;
  double mean = 0.0, ci_low = 0.0, ci_high = 0.0;
  std::size_t n = 0;
};

inline std::string fmt_num(double v, const char* spec = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kMetricsHeader << '\n';
  for (const auto& r : rows)
    out << r.axis << ',' << r.method << ',' << fmt_num(r.mean) << ',' << fmt_num(r.ci_low) << ','
        << fmt_num(r.ci_high) << ',' << r.n << '\n';
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw csv_error(where + ": not a number: '" + s + "'");
  }
}

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw csv_error("cannot read " + p.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace detail

inline std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& p) {
  const auto lines = detail::read_lines(p);
  if (lines.empty() || lines[0] != kMetricsHeader) throw csv_error(p.string() + ": missing metrics header");
  std::vector<MetricRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto c = detail::split_csv(lines[i]);
    const std::string where = p.filename().string() + ":" + std::to_string(i + 1);
    if (c.size() != 6) throw csv_error(where + ": expected 6 columns");
    rows.push_back({c[0], c[1], detail::parse_double(c[2], where), detail::parse_double(c[3], where),
                    detail::parse_double(c[4], where), static_cast<std::size_t>(detail::parse_double(c[5], where))});
  }
  return rows;
}

struct Curve {
  std::string value_name;
  std::vector<double> x, y;
};

inline Curve read_curve_csv(const std::filesystem::path& p) {
  const auto lines = detail::read_lines(p);
  if (lines.empty()) throw csv_error(p.string() + ": empty file");
  const auto h = detail::split_csv(lines[0]);
  if (h.size() != 2 || h[0] != "epoch") throw csv_error(p.string() + ": expected header epoch,<value>");
  Curve c{h[1], {}, {}};
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = detail::split_csv(lines[i]);
    const std::string where = p.filename().string() + ":" + std::to_string(i + 1);
    if (cells.size() != 2) throw csv_error(where + ": expected 2 columns");
    c.x.push_back(detail::parse_double(cells[0], where));
    c.y.push_back(detail::parse_double(cells[1], where));
  }
  if (c.x.empty()) throw csv_error(p.string() + ": no data rows");
  return c;
}

namespace svg {

struct Series {
  std::string name;
  std::vector<double> x, y, lo, hi;  // lo/hi empty: no band
};

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  return palette[i % 8];
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char ch : s) {
    if (ch == '<') o += "&lt;";
    else if (ch == '>') o += "&gt;";
    else if (ch == '&') o += "&amp;";
    else o += ch;
  }
  return o;
}

inline std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                              const std::vector<Series>& series) {
  if (series.empty()) throw csv_error("chart '" + title + "': no series to draw");
  const double W = 720, H = 440, L = 70, R = 170, Tm = 40, Bm = 55;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min({y0, s.y[i], s.lo.empty() ? s.y[i] : s.lo[i]});
      y1 = std::max({y1, s.y[i], s.hi.empty() ? s.y[i] : s.hi[i]});
    }
  }
  if (!(x1 > x0)) { x0 -= 0.5; x1 += 0.5; }
  if (!(y1 > y0)) { y0 -= 0.5; y1 += 0.5; }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - Bm - (y - y0) / (y1 - y0) * (H - Tm - Bm); };
  auto f = [](double v) { return fmt_num(v, "%.2f"); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << f(W / 2 - R / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
    << "</text>\n";
  o << "<line x1=\"" << f(L) << "\" y1=\"" << f(H - Bm) << "\" x2=\"" << f(W - R) << "\" y2=\"" << f(H - Bm)
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << f(L) << "\" y1=\"" << f(Tm) << "\" x2=\"" << f(L) << "\" y2=\"" << f(H - Bm)
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    o << "<text x=\"" << f(px(xv)) << "\" y=\"" << f(H - Bm + 16) << "\" text-anchor=\"middle\">"
      << fmt_num(xv, "%.4g") << "</text>\n";
    o << "<text x=\"" << f(L - 6) << "\" y=\"" << f(py(yv) + 4) << "\" text-anchor=\"end\">" << fmt_num(yv, "%.4g")
      << "</text>\n";
    o << "<line x1=\"" << f(L) << "\" y1=\"" << f(py(yv)) << "\" x2=\"" << f(W - R) << "\" y2=\"" << f(py(yv))
      << "\" stroke=\"#e0e0e0\"/>\n";
  }
  o << "<text x=\"" << f((L + W - R) / 2) << "\" y=\"" << f(H - 12) << "\" text-anchor=\"middle\">" << escape(xlabel)
    << "</text>\n";
  o << "<text x=\"16\" y=\"" << f((Tm + H - Bm) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << f((Tm + H - Bm) / 2) << ")\">" << escape(ylabel) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    if (!s.lo.empty() && s.x.size() > 1) {
      o << "<polygon fill=\"" << color(k) << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) o << f(px(s.x[i])) << ',' << f(py(s.hi[i])) << ' ';
      for (std::size_t i = s.x.size(); i-- > 0;) o << f(px(s.x[i])) << ',' << f(py(s.lo[i])) << ' ';
      o << "\"/>\n";
    }
    o << "<polyline fill=\"none\" stroke=\"" << color(k) << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << f(px(s.x[i])) << ',' << f(py(s.y[i])) << ' ';
    o << "\"/>\n";
    if (s.x.size() <= 40)
      for (std::size_t i = 0; i < s.x.size(); ++i)
        o << "<circle cx=\"" << f(px(s.x[i])) << "\" cy=\"" << f(py(s.y[i])) << "\" r=\"3\" fill=\"" << color(k)
          << "\"/>\n";
    const double ly = Tm + 10 + 20.0 * k;
    o << "<line x1=\"" << f(W - R + 15) << "\" y1=\"" << f(ly) << "\" x2=\"" << f(W - R + 40) << "\" y2=\"" << f(ly)
      << "\" stroke=\"" << color(k) << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << f(W - R + 46) << "\" y=\"" << f(ly + 4) << "\">" << escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace svg

/// Renders one SVG per CSV into out_dir, named after the CSV stem.  Metric
/// CSVs become one series per method with CI bands; curve CSVs become a
/// single convergence line.  Nothing is written if any input is malformed.
inline std::vector<std::filesystem::path> emit_plots(const std::vector<std::filesystem::path>& csvs,
                                                     const std::filesystem::path& out_dir) {
  std::vector<std::pair<std::filesystem::path, std::string>> pending;
  for (const auto& p : csvs) {
    const auto lines = detail::read_lines(p);
    if (lines.empty()) throw csv_error(p.string() + ": empty file");
    const std::string stem = p.stem().string();
    if (lines[0] == kMetricsHeader) {
      const auto rows = read_metrics_csv(p);
      std::vector<std::string> order;
      std::map<std::string, svg::Series> by;
      std::vector<std::string> axis_labels;
      bool numeric = true;
      for (const auto& r : rows) {
        try {
          (void)detail::parse_double(r.axis, "");
        } catch (const csv_error&) {
          numeric = false;
        }
        if (std::find(axis_labels.begin(), axis_labels.end(), r.axis) == axis_labels.end()) axis_labels.push_back(r.axis);
      }
      for (const auto& r : rows) {
        if (!by.count(r.method)) {
          order.push_back(r.method);
          by[r.method].name = r.method;
        }
        auto& s = by[r.method];
        const double x = numeric ? detail::parse_double(r.axis, "")
                                 : double(std::find(axis_labels.begin(), axis_labels.end(), r.axis) - axis_labels.begin());
        s.x.push_back(x);
        s.y.push_back(r.mean);
        s.lo.push_back(r.ci_low);
        s.hi.push_back(r.ci_high);
      }
      if (order.empty()) throw csv_error(p.string() + ": no methods to plot");
      std::vector<svg::Series> series;
      for (const auto& m : order) series.push_back(by[m]);
      pending.emplace_back(out_dir / (stem + ".svg"),
                           svg::line_chart(stem, numeric ? stem.substr(stem.find('_') + 1) : "case",
                                           "mean sum secrecy rate (bits/s/Hz)", series));
    } else {
      const Curve c = read_curve_csv(p);
      pending.emplace_back(out_dir / (stem + ".svg"),
                           svg::line_chart(stem, "epoch", c.value_name, {svg::Series{c.value_name, c.x, c.y, {}, {}}}));
    }
  }
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& [path, text] : pending) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    written.push_back(path);
  }
  return written;
}

}  // namespace secdiff

#endif  // SECDIFF_PLOTS_HPP
