#include "o2rnet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace o2r {

namespace {

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::vector<std::string> cells(const ReportRow& r) {
  const auto& s = r.summary;
  return {r.model, r.step, fmt3(s.ap), fmt3(s.ap50), fmt3(s.ap75), fmt3(s.ar), fmt3(s.ar50), fmt3(s.ar75), fmt3(s.f1)};
}

const std::vector<std::string> kHeader{"Model", "Step", "AP", "AP50", "AP75", "AR", "AR50", "AR75", "F1-Score"};

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  for (std::size_t i = 0; i < kHeader.size(); ++i) os << (i ? "," : "") << kHeader[i];
  os << '\n';
  for (const auto& r : rows) {
    const auto c = cells(r);
    for (std::size_t i = 0; i < c.size(); ++i) {
      std::string v = c[i];
      if (v.find_first_of(",\"") != std::string::npos) {
        std::string q = "\"";
        for (char ch : v) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
        v = q + "\"";
      }
      os << (i ? "," : "") << v;
    }
    os << '\n';
  }
  return os.str();
}

std::string report_text(const std::vector<ReportRow>& rows, int max_dets) {
  std::vector<std::vector<std::string>> table{kHeader};
  for (const auto& r : rows) table.push_back(cells(r));
  std::vector<std::size_t> width(kHeader.size(), 0);
  for (const auto& row : table)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream os;
  os << "# AR at maxDets=" << max_dets << "; F1 at IoU 0.5\n";
  for (std::size_t k = 0; k < table.size(); ++k) {
    for (std::size_t i = 0; i < table[k].size(); ++i) {
      const auto& v = table[k][i];
      const std::string pad(width[i] - v.size(), ' ');
      os << (i ? "  " : "") << (i < 2 ? v + pad : pad + v);
    }
    os << '\n';
    if (k == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return os.str();
}

std::vector<double> smooth(const std::vector<double>& v, double alpha) {
  std::vector<double> out;
  double acc = v.empty() ? 0.0 : v.front();
  for (double x : v) {
    acc = alpha * x + (1.0 - alpha) * acc;
    out.push_back(acc);
  }
  return out;
}

std::string svg_line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label) {
  const double W = 640, H = 420, L = 70, R = 160, T = 40, B = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return T + ph - (y - y0) / (y1 - y0) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title) << "</text>\n";
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0, fy = y0 + (y1 - y0) * k / 4.0;
    char bx[32], by[32];
    std::snprintf(bx, sizeof(bx), "%.3g", fx);
    std::snprintf(by, sizeof(by), "%.3g", fy);
    os << "<text x=\"" << px(fx) << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\">" << bx << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">" << by << "</text>\n";
    os << "<line x1=\"" << L << "\" x2=\"" << L + pw << "\" y1=\"" << py(fy) << "\" y2=\"" << py(fy)
       << "\" stroke=\"#ddd\"/>\n";
  }
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << escape_xml(x_label)
     << "</text>\n";
  os << "<text transform=\"translate(16," << T + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape_xml(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* col = colors[s % 8];
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i)
      if (std::isfinite(series[s].x[i]) && std::isfinite(series[s].y[i]))
        os << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
    os << "\"/>\n";
    const double ly = T + 14 + 18.0 * static_cast<double>(s);
    os << "<line x1=\"" << L + pw + 10 << "\" x2=\"" << L + pw + 30 << "\" y1=\"" << ly << "\" y2=\"" << ly
       << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << L + pw + 35 << "\" y=\"" << ly + 4 << "\">" << escape_xml(series[s].name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace o2r
