/**
 * @file report.cpp
 * @brief Sweep CSV and SVG emission.
 */
#include "csifb/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <iterator>
#include <sstream>

#include "csifb/errors.hpp"

namespace csifb::report {

namespace {

constexpr int kColumns = 9;

double parse_number(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw DataError(DataError::Kind::kCorrupt, "sweep csv: bad number '" + s + "'");
  }
  return v;
}

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

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

// Pixel formatting for coordinates only; data values use format_number.
std::string px(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << v;
  return os.str();
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string sweep_header() { return "schema,scenario,k,snr_db,gamma,nmse_db,nominal_bpp,entropy_bpp,measured_bpp"; }

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = sweep_header() + "\n";
  for (const auto& r : rows) {
    if (r.scenario.find_first_of(",\n\"") != std::string::npos) {
      throw UsageError("sweep csv: scenario names must not contain commas, quotes or newlines");
    }
    out += std::to_string(kSweepSchemaVersion) + "," + r.scenario + "," + std::to_string(r.k) + "," +
           format_number(r.snr_db) + "," + format_number(r.gamma) + "," + format_number(r.nmse_db) + "," +
           format_number(r.nominal_bpp) + "," + format_number(r.entropy_bpp) + "," + format_number(r.measured_bpp) +
           "\n";
  }
  return out;
}

std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != sweep_header()) {
    throw DataError(DataError::Kind::kCorrupt, "sweep csv: unexpected header");
  }
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != kColumns) throw DataError(DataError::Kind::kCorrupt, "sweep csv: expected 9 columns");
    if (f[0] != std::to_string(kSweepSchemaVersion)) {
      throw DataError(DataError::Kind::kVersionMismatch, "sweep csv: unsupported schema " + f[0]);
    }
    SweepRow r;
    r.scenario = f[1];
    r.k = static_cast<unsigned>(parse_number(f[2]));
    r.snr_db = parse_number(f[3]);
    r.gamma = parse_number(f[4]);
    r.nmse_db = parse_number(f[5]);
    r.nominal_bpp = parse_number(f[6]);
    r.entropy_bpp = parse_number(f[7]);
    r.measured_bpp = parse_number(f[8]);
    rows.push_back(r);
  }
  return rows;
}

std::vector<std::string> snr_trend_violations(const std::vector<SweepRow>& rows, const std::vector<unsigned>& k_order,
                                              double snr_tol_db, double floor_db) {
  // scenario -> k -> snr -> nmse
  std::map<std::string, std::map<unsigned, std::map<double, double>>> grid;
  for (const auto& r : rows) {
    if (std::isfinite(r.snr_db)) grid[r.scenario][r.k][r.snr_db] = r.nmse_db;
  }
  std::vector<std::string> out;
  for (const auto& [scenario, by_k] : grid) {
    std::vector<unsigned> ks;
    for (unsigned k : k_order) {
      if (by_k.count(k)) ks.push_back(k);
    }
    for (std::size_t i = 1; i < ks.size(); ++i) {
      for (const auto& [snr, hi] : by_k.at(ks[i])) {
        const auto lo = by_k.at(ks[i - 1]).find(snr);
        if (lo != by_k.at(ks[i - 1]).end() && hi > lo->second) {
          out.push_back(scenario + ": NMSE(k=" + std::to_string(ks[i]) + ") > NMSE(k=" + std::to_string(ks[i - 1]) +
                        ") at " + format_number(snr) + " dB");
        }
      }
    }
    for (const auto& [k, by_snr] : by_k) {
      for (auto it = std::next(by_snr.begin()); by_snr.size() > 1 && it != by_snr.end(); ++it) {
        const auto prev = std::prev(it);
        if (it->second > prev->second + snr_tol_db) {
          out.push_back(scenario + ": k=" + std::to_string(k) + " NMSE rises from " + format_number(prev->first) +
                        " to " + format_number(it->first) + " dB");
        }
      }
    }
    if (!ks.empty() && by_k.at(ks.front()).size() >= 2) {
      const auto& low = by_k.at(ks.front());
      const auto last = std::prev(low.end());
      const auto before = std::prev(last);
      if (before->second - last->second > floor_db) {
        out.push_back(scenario + ": k=" + std::to_string(ks.front()) + " shows no high-SNR floor (" +
                      format_number(before->second - last->second) + " dB gain)");
      }
    }
  }
  return out;
}

std::vector<std::string> rate_trend_violations(const std::vector<SweepRow>& rows, double tol_db) {
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  for (const auto& r : rows) series[r.scenario].push_back({r.measured_bpp, r.nmse_db});
  std::vector<std::string> out;
  for (auto& [scenario, pts] : series) {
    std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (pts[i].second > pts[i - 1].second + tol_db) {
        out.push_back(scenario + ": NMSE rises from " + format_number(pts[i - 1].second) + " to " +
                      format_number(pts[i].second) + " dB between " + format_number(pts[i - 1].first) + " and " +
                      format_number(pts[i].first) + " BPP");
      }
    }
  }
  return out;
}

std::string sweep_svg(const std::vector<SweepRow>& rows, XAxis axis, const std::string& title) {
  struct Point {
    double x, y;
  };
  // Series keep first-appearance order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<Point>> series;
  for (const auto& r : rows) {
    const double x = axis == XAxis::kSnr ? r.snr_db : r.measured_bpp;
    if (!std::isfinite(x) || !std::isfinite(r.nmse_db)) continue;
    const std::string name = axis == XAxis::kSnr ? r.scenario + " k=" + std::to_string(r.k) : r.scenario;
    if (!series.count(name)) order.push_back(name);
    series[name].push_back({x, r.nmse_db});
  }

  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (auto& [name, pts] : series) {
    std::stable_sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
    for (const auto& p : pts) {
      if (first) {
        x0 = x1 = p.x;
        y0 = y1 = p.y;
        first = false;
      }
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;

  const double width = 640, height = 420, left = 70, right = 150, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (y1 - y) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << px(left + pw / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape_xml(title)
     << "</text>\n";
  os << "<g stroke=\"black\" fill=\"none\"><rect x=\"" << px(left) << "\" y=\"" << px(top) << "\" width=\"" << px(pw)
     << "\" height=\"" << px(ph) << "\"/></g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    os << "<text x=\"" << px(sx(xv)) << "\" y=\"" << px(top + ph + 18) << "\" text-anchor=\"middle\">"
       << format_number(std::round(xv * 100) / 100) << "</text>\n";
    os << "<text x=\"" << px(left - 6) << "\" y=\"" << px(sy(yv) + 4) << "\" text-anchor=\"end\">"
       << format_number(std::round(yv * 100) / 100) << "</text>\n";
  }
  os << "<text x=\"" << px(left + pw / 2) << "\" y=\"" << px(height - 10) << "\" text-anchor=\"middle\">"
     << (axis == XAxis::kSnr ? "SNR (dB)" : "measured BPP") << "</text>\n";
  os << "<text transform=\"translate(18," << px(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">NMSE (dB)</text>\n";

  for (std::size_t s = 0; s < order.size(); ++s) {
    const auto& pts = series[order[s]];
    const char* color = kPalette[s % std::size(kPalette)];
    os << "<g class=\"series\" data-name=\"" << escape_xml(order[s]) << "\" stroke=\"" << color << "\" fill=\""
       << color << "\">\n";
    os << "<polyline fill=\"none\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) os << (i ? " " : "") << px(sx(pts[i].x)) << "," << px(sy(pts[i].y));
    os << "\"/>\n";
    for (const auto& p : pts) {
      os << "<circle cx=\"" << px(sx(p.x)) << "\" cy=\"" << px(sy(p.y)) << "\" r=\"3\" data-x=\"" << format_number(p.x)
         << "\" data-y=\"" << format_number(p.y) << "\"/>\n";
    }
    os << "</g>\n";
    const double ly = top + 14 + 18 * static_cast<double>(s);
    os << "<text x=\"" << px(left + pw + 12) << "\" y=\"" << px(ly) << "\" fill=\"" << color << "\">"
       << escape_xml(order[s]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace csifb::report
