#pragma once

// Figure data: per-source preference means with contrast intervals, written
// as a tidy CSV and as grouped bar charts in SVG.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wordpref/contrast.hpp"
#include "wordpref/error.hpp"
#include "wordpref/stats.hpp"
#include "wordpref/util.hpp"

namespace wordpref {

inline constexpr std::string_view kReportColumns = "source,figure,group,subgroup,mean,ci_low,ci_high,n_items";

struct BarStat {
  std::string source;
  std::string figure;
  std::string group;     // moderator level, or "all"
  std::string subgroup;  // stratum level, or "all"
  double mean = 0.0;
  std::optional<stats::Interval> ci;
  std::size_t n_items = 0;
};

struct FigureData {
  std::string name;
  std::string title;
  std::string units;
  std::vector<BarStat> bars;
};

// One bar per moderator level: mean preference over items and its contrast
// interval. When every row carries a demeaned value the interval takes its
// spread from those.
inline std::vector<BarStat> summarize_preferences(const PreferenceTable& pt, const ContrastSpec& spec,
                                                  const std::string& source, const std::string& figure,
                                                  const std::string& subgroup = "all", double level = 0.95) {
  std::vector<std::string> groups = {"all"};
  if (spec.moderator) groups = {spec.moderator->level1, spec.moderator->level2};
  std::vector<BarStat> out;
  for (const auto& g : groups) {
    std::vector<double> values, spread;
    for (const auto& r : pt.rows) {
      if (spec.moderator && r.levels.at(spec.moderator->factor) != g) continue;
      values.push_back(r.value);
      if (!std::isnan(r.spread_value)) spread.push_back(r.spread_value);
    }
    BarStat b;
    b.source = source;
    b.figure = figure;
    b.group = g;
    b.subgroup = subgroup;
    b.n_items = values.size();
    b.mean = values.empty() ? std::numeric_limits<double>::quiet_NaN() : stats::mean(values);
    if (values.size() >= 2)
      b.ci = spread.size() == values.size() ? stats::t_interval(b.mean, spread, level) : stats::t_interval(values, level);
    out.push_back(b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json to_json(const BarStat& b) {
  nlohmann::ordered_json j{{"source", b.source}, {"figure", b.figure}, {"group", b.group}, {"subgroup", b.subgroup}};
  j["mean"] = std::isnan(b.mean) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(b.mean);
  if (b.ci) {
    j["ci_low"] = b.ci->low;
    j["ci_high"] = b.ci->high;
  } else {
    j["ci_low"] = nullptr;
    j["ci_high"] = nullptr;
  }
  j["n_items"] = b.n_items;
  return j;
}

inline nlohmann::ordered_json to_json(const FigureData& f) {
  nlohmann::ordered_json j{{"figure", f.name}, {"title", f.title}, {"units", f.units}};
  auto bars = nlohmann::ordered_json::array();
  for (const auto& b : f.bars) bars.push_back(to_json(b));
  j["bars"] = bars;
  return j;
}

inline FigureData figure_from_json(const nlohmann::json& j) {
  try {
    FigureData f;
    f.name = j.at("figure").get<std::string>();
    f.title = j.value("title", f.name);
    f.units = j.value("units", "");
    for (const auto& bj : j.at("bars")) {
      BarStat b;
      b.source = bj.at("source").get<std::string>();
      b.figure = bj.at("figure").get<std::string>();
      b.group = bj.at("group").get<std::string>();
      b.subgroup = bj.at("subgroup").get<std::string>();
      b.mean = bj.at("mean").is_null() ? std::numeric_limits<double>::quiet_NaN() : bj.at("mean").get<double>();
      if (!bj.at("ci_low").is_null() && !bj.at("ci_high").is_null())
        b.ci = stats::Interval{bj.at("ci_low").get<double>(), bj.at("ci_high").get<double>()};
      b.n_items = bj.at("n_items").get<std::size_t>();
      f.bars.push_back(std::move(b));
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("figure data: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string report_csv(const std::vector<FigureData>& figures) {
  std::ostringstream out;
  out << kReportColumns << '\n';
  auto num = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  for (const auto& f : figures)
    for (const auto& b : f.bars) {
      out << csv_field(b.source) << ',' << csv_field(b.figure) << ',' << csv_field(b.group) << ','
          << csv_field(b.subgroup) << ',' << num(b.mean) << ',' << (b.ci ? num(b.ci->low) : "") << ','
          << (b.ci ? num(b.ci->high) : "") << ',' << b.n_items << '\n';
    }
  return out.str();
}

// ---------------------------------------------------------------------------
// SVG

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

struct AxisTicks {
  double lo = -1.0;
  double hi = 1.0;
  double step = 0.5;
  int decimals = 1;
};

// Round step of 1, 2 or 5 times a power of ten, about five ticks over
// [lo, hi], with zero always inside the range.
inline AxisTicks nice_ticks(double lo, double hi) {
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double raw = (hi - lo) / 5.0;
  const int e = static_cast<int>(std::floor(std::log10(raw)));
  const double base = std::pow(10.0, e);
  double m = raw / base;
  m = m <= 1.0 ? 1.0 : m <= 2.0 ? 2.0 : m <= 5.0 ? 5.0 : 10.0;
  AxisTicks t;
  t.step = m * base;
  t.lo = std::floor(lo / t.step - 1e-9) * t.step;
  t.hi = std::ceil(hi / t.step + 1e-9) * t.step;
  t.decimals = std::max(0, -(e + (m == 10.0 ? 1 : 0)));
  return t;
}

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

// Grouped bar chart: one group per moderator level, one bar per source,
// error bars from the contrast intervals. The plot element records the zero
// line and pixels per unit so bar heights can be read back as values.
inline std::string render_svg(const FigureData& fig) {
  std::vector<std::string> groups, sources;
  for (const auto& b : fig.bars) {
    if (std::find(groups.begin(), groups.end(), b.group) == groups.end()) groups.push_back(b.group);
    if (std::find(sources.begin(), sources.end(), b.source) == sources.end()) sources.push_back(b.source);
  }
  double lo = 0.0, hi = 0.0;
  for (const auto& b : fig.bars) {
    if (std::isnan(b.mean)) continue;
    lo = std::min(lo, b.mean);
    hi = std::max(hi, b.mean);
    if (b.ci) {
      lo = std::min(lo, b.ci->low);
      hi = std::max(hi, b.ci->high);
    }
  }
  const AxisTicks ticks = nice_ticks(lo, hi);

  const double left = 80, top = 50, plot_w = 120.0 * static_cast<double>(std::max<std::size_t>(groups.size(), 1)) + 40,
               plot_h = 300;
  const double legend_w = 160;
  const double width = left + plot_w + legend_w, height = top + plot_h + 60;
  const double scale = plot_h / (ticks.hi - ticks.lo);
  auto y_of = [&](double v) { return top + (ticks.hi - v) * scale; };
  const double zero_y = y_of(0.0);
  static const char* palette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << svg_num(width) << "\" height=\"" << svg_num(height)
    << "\" viewBox=\"0 0 " << svg_num(width) << ' ' << svg_num(height) << "\">\n";
  s << "  <title>" << xml_escape(fig.title) << "</title>\n";
  s << "  <rect x=\"0\" y=\"0\" width=\"" << svg_num(width) << "\" height=\"" << svg_num(height)
    << "\" fill=\"white\"/>\n";
  s << "  <text x=\"" << svg_num(left) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">"
    << xml_escape(fig.title) << "</text>\n";
  s << "  <g class=\"plot\" data-zero-y=\"" << svg_num(zero_y) << "\" data-px-per-unit=\"" << format_double(scale)
    << "\">\n";

  // y axis with numeric ticks
  s << "    <line class=\"axis\" x1=\"" << svg_num(left) << "\" y1=\"" << svg_num(top) << "\" x2=\"" << svg_num(left)
    << "\" y2=\"" << svg_num(top + plot_h) << "\" stroke=\"black\"/>\n";
  const int n_ticks = static_cast<int>(std::lround((ticks.hi - ticks.lo) / ticks.step));
  for (int k = 0; k <= n_ticks; ++k) {
    const double v = ticks.lo + k * ticks.step;
    char label[32];
    std::snprintf(label, sizeof(label), "%.*f", ticks.decimals, std::fabs(v) < ticks.step * 1e-9 ? 0.0 : v);
    s << "    <line class=\"tick\" x1=\"" << svg_num(left - 5) << "\" y1=\"" << svg_num(y_of(v)) << "\" x2=\""
      << svg_num(left + plot_w) << "\" y2=\"" << svg_num(y_of(v)) << "\" stroke=\"#dddddd\"/>\n";
    s << "    <text class=\"tick-label\" x=\"" << svg_num(left - 8) << "\" y=\"" << svg_num(y_of(v) + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << label << "</text>\n";
  }
  s << "    <line class=\"zero\" x1=\"" << svg_num(left) << "\" y1=\"" << svg_num(zero_y) << "\" x2=\""
    << svg_num(left + plot_w) << "\" y2=\"" << svg_num(zero_y) << "\" stroke=\"black\"/>\n";
  s << "    <text x=\"20\" y=\"" << svg_num(top + plot_h / 2) << "\" transform=\"rotate(-90 20 "
    << svg_num(top + plot_h / 2) << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
    << xml_escape("preference (" + fig.units + ")") << "</text>\n";

  const double group_w = (plot_w - 40) / static_cast<double>(std::max<std::size_t>(groups.size(), 1));
  const double bar_w = (group_w - 20) / static_cast<double>(std::max<std::size_t>(sources.size(), 1));
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const double gx = left + 20 + group_w * static_cast<double>(gi);
    s << "    <text class=\"group-label\" x=\"" << svg_num(gx + group_w / 2) << "\" y=\""
      << svg_num(top + plot_h + 20) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << xml_escape(groups[gi]) << "</text>\n";
    for (std::size_t si = 0; si < sources.size(); ++si) {
      const BarStat* b = nullptr;
      for (const auto& x : fig.bars)
        if (x.group == groups[gi] && x.source == sources[si]) b = &x;
      if (!b || std::isnan(b->mean)) continue;
      const double x = gx + 10 + bar_w * static_cast<double>(si);
      const double yv = y_of(b->mean);
      s << "    <rect class=\"bar\" data-group=\"" << xml_escape(b->group) << "\" data-source=\""
        << xml_escape(b->source) << "\" data-value=\"" << format_double(b->mean) << "\" x=\"" << svg_num(x)
        << "\" y=\"" << svg_num(std::min(yv, zero_y)) << "\" width=\"" << svg_num(bar_w - 4) << "\" height=\""
        << svg_num(std::fabs(yv - zero_y)) << "\" fill=\"" << palette[si % 8] << "\"/>\n";
      if (b->ci) {
        const double cx = x + (bar_w - 4) / 2;
        const double y1 = y_of(b->ci->high), y2 = y_of(b->ci->low);
        s << "    <g class=\"ci\" data-low=\"" << format_double(b->ci->low) << "\" data-high=\""
          << format_double(b->ci->high) << "\" stroke=\"black\">\n";
        s << "      <line x1=\"" << svg_num(cx) << "\" y1=\"" << svg_num(y1) << "\" x2=\"" << svg_num(cx) << "\" y2=\""
          << svg_num(y2) << "\"/>\n";
        for (double yy : {y1, y2})
          s << "      <line x1=\"" << svg_num(cx - 5) << "\" y1=\"" << svg_num(yy) << "\" x2=\"" << svg_num(cx + 5)
            << "\" y2=\"" << svg_num(yy) << "\"/>\n";
        s << "    </g>\n";
      }
    }
  }
  s << "  </g>\n";

  s << "  <g class=\"legend\">\n";
  for (std::size_t si = 0; si < sources.size(); ++si) {
    const double ly = top + 10 + 22.0 * static_cast<double>(si);
    const double lx = left + plot_w + 20;
    s << "    <rect x=\"" << svg_num(lx) << "\" y=\"" << svg_num(ly) << "\" width=\"14\" height=\"14\" fill=\""
      << palette[si % 8] << "\"/>\n";
    s << "    <text x=\"" << svg_num(lx + 20) << "\" y=\"" << svg_num(ly + 12)
      << "\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(sources[si]) << "</text>\n";
  }
  s << "  </g>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace wordpref
