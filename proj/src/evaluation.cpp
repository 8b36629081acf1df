#include "stdiff/evaluation.hpp"

#include "stdiff/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <fmt/core.h>

namespace stdiff {

MetricsReport masked_mae_rmse(const TimeSeriesTable& imputed, const std::vector<LedgerEntry>& ledger,
                              const ZScoreStats* z_space) {
  const auto states = imputed.state_channels();
  std::map<int, std::pair<double, double>> sums;  // channel -> (sum |e|, sum e^2)
  std::map<int, std::size_t> counts;
  for (const int c : states) {
    sums[c] = {0.0, 0.0};
    counts[c] = 0;
  }
  for (const auto& e : ledger) {
    if (imputed.channels().at(static_cast<std::size_t>(e.channel)).role != ChannelRole::state) continue;
    if (!imputed.observed(e.row, static_cast<std::size_t>(e.channel))) {
      throw Error(ErrorKind::coverage, fmt::format("no imputed value for '{}' at '{}'",
                                                   imputed.channels()[static_cast<std::size_t>(e.channel)].name,
                                                   imputed.timestamps()[e.row]));
    }
    double err = imputed.value(e.row, static_cast<std::size_t>(e.channel)) - e.true_value;
    if (z_space) err /= z_space->scale.at(static_cast<std::size_t>(e.channel));
    auto& [abs_sum, sq_sum] = sums[e.channel];
    abs_sum += std::abs(err);
    sq_sum += err * err;
    ++counts[e.channel];
  }
  MetricsReport report;
  for (const int c : states) {
    const auto n = counts[c];
    ChannelMetrics m{imputed.channels()[static_cast<std::size_t>(c)].name, 0.0, 0.0, n};
    if (n > 0) {
      m.mae = sums[c].first / static_cast<double>(n);
      m.rmse = std::sqrt(sums[c].second / static_cast<double>(n));
    }
    report.channels.push_back(std::move(m));
  }
  return report;
}

std::vector<CurveRow> curve_rows(const MetricsReport& report) {
  std::vector<CurveRow> rows;
  for (const auto& ch : report.channels) {
    rows.push_back({report.method, report.level, report.seed, ch.channel, ch.mae, ch.rmse});
  }
  return rows;
}

void write_curve_rows(std::ostream& out, const std::vector<CurveRow>& rows) {
  out << "method,level,seed,channel,mae,rmse\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.level << ',' << r.seed << ',' << r.channel << ',' << format_double(r.mae) << ','
        << format_double(r.rmse) << '\n';
  }
}

namespace {

template <typename T>
T parse_field(std::string_view text, std::size_t line_no) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorKind::ingestion, fmt::format("curve line {}: bad field '{}'", line_no, text));
  }
  return value;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (const double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string svg_escape(std::string_view s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::vector<CurveRow> read_curve_rows(std::istream& in) {
  std::vector<CurveRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("method,", 0) == 0) continue;
    std::vector<std::string_view> cells;
    std::string_view view(line);
    std::size_t start = 0;
    while (true) {
      const auto pos = view.find(',', start);
      cells.push_back(view.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    if (cells.size() != 6) throw Error(ErrorKind::ingestion, fmt::format("curve line {} needs 6 fields", line_no));
    rows.push_back({std::string(cells[0]), parse_field<int>(cells[1], line_no),
                    parse_field<std::uint64_t>(cells[2], line_no), std::string(cells[3]),
                    parse_field<double>(cells[4], line_no), parse_field<double>(cells[5], line_no)});
  }
  return rows;
}

std::vector<CurvePoint> summarize_curve(const std::vector<CurveRow>& rows) {
  // Keep methods and channels in first-seen order, levels ascending.
  std::vector<std::string> methods;
  std::vector<std::string> channels;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(channels.begin(), channels.end(), r.channel) == channels.end()) channels.push_back(r.channel);
  }
  std::set<int> levels;
  for (const auto& r : rows) levels.insert(r.level);

  std::vector<CurvePoint> points;
  for (const auto& ch : channels) {
    for (const auto& m : methods) {
      for (const int level : levels) {
        std::vector<double> mae;
        std::vector<double> rmse;
        for (const auto& r : rows) {
          if (r.method == m && r.channel == ch && r.level == level) {
            mae.push_back(r.mae);
            rmse.push_back(r.rmse);
          }
        }
        if (mae.empty()) continue;
        points.push_back({m, level, ch, mean_of(mae), std_of(mae), mean_of(rmse), std_of(rmse), mae.size()});
      }
    }
  }
  return points;
}

void write_curve_summary(std::ostream& out, const std::vector<CurvePoint>& points) {
  out << "method,level,channel,mae_mean,mae_std,rmse_mean,rmse_std,seeds\n";
  for (const auto& p : points) {
    out << p.method << ',' << p.level << ',' << p.channel << ',' << format_double(p.mae_mean) << ','
        << format_double(p.mae_std) << ',' << format_double(p.rmse_mean) << ',' << format_double(p.rmse_std) << ','
        << p.seeds << '\n';
  }
}

std::string render_degradation_svg(const std::vector<CurvePoint>& points) {
  std::vector<std::string> channels;
  std::vector<std::string> methods;
  std::set<int> level_set;
  for (const auto& p : points) {
    if (std::find(channels.begin(), channels.end(), p.channel) == channels.end()) channels.push_back(p.channel);
    if (std::find(methods.begin(), methods.end(), p.method) == methods.end()) methods.push_back(p.method);
    level_set.insert(p.level);
  }
  const std::vector<int> levels(level_set.begin(), level_set.end());
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

  const double width = 640.0;
  const double panel_h = 260.0;
  const double left = 70.0, right = 150.0, top = 30.0, bottom = 45.0;
  const double plot_w = width - left - right;
  const double plot_h = panel_h - top - bottom;
  const double height = panel_h * static_cast<double>(std::max<std::size_t>(1, channels.size()));

  std::ostringstream svg;
  svg << fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" "
                     "viewBox=\"0 0 {:.0f} {:.0f}\" font-family=\"sans-serif\" font-size=\"12\">\n",
                     width, height, width, height);
  svg << fmt::format("<rect width=\"{:.0f}\" height=\"{:.0f}\" fill=\"white\"/>\n", width, height);

  for (std::size_t ci = 0; ci < channels.size(); ++ci) {
    const double y0 = panel_h * static_cast<double>(ci);
    double ymax = 0.0;
    for (const auto& p : points) {
      if (p.channel == channels[ci]) ymax = std::max(ymax, p.mae_mean + p.mae_std);
    }
    if (!(ymax > 0.0)) ymax = 1.0;
    ymax *= 1.1;
    auto x_of = [&](std::size_t li) {
      return levels.size() == 1 ? left + plot_w / 2.0
                                : left + plot_w * static_cast<double>(li) / static_cast<double>(levels.size() - 1);
    };
    auto y_of = [&](double v) { return y0 + top + plot_h * (1.0 - v / ymax); };

    svg << fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-weight=\"bold\">{}</text>\n", left, y0 + 18.0,
                       svg_escape(channels[ci]));
    svg << fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"black\"/>\n", left,
                       y0 + top, y0 + top + plot_h);
    svg << fmt::format("<line x1=\"{0:.1f}\" y1=\"{2:.1f}\" x2=\"{1:.1f}\" y2=\"{2:.1f}\" stroke=\"black\"/>\n", left,
                       left + plot_w, y0 + top + plot_h);
    for (int tick = 0; tick <= 4; ++tick) {
      const double v = ymax * tick / 4.0;
      svg << fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", left - 6.0,
                         y_of(v) + 4.0, v);
    }
    for (std::size_t li = 0; li < levels.size(); ++li) {
      svg << fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}%</text>\n", x_of(li),
                         y0 + top + plot_h + 18.0, levels[li]);
    }
    svg << fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">block missingness</text>\n",
                       left + plot_w / 2.0, y0 + top + plot_h + 36.0);
    svg << fmt::format("<text transform=\"translate({:.1f},{:.1f}) rotate(-90)\" text-anchor=\"middle\">MAE</text>\n",
                       18.0, y0 + top + plot_h / 2.0);

    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      const char* color = kColors[mi % std::size(kColors)];
      std::string path;
      for (std::size_t li = 0; li < levels.size(); ++li) {
        const auto it = std::find_if(points.begin(), points.end(), [&](const CurvePoint& p) {
          return p.channel == channels[ci] && p.method == methods[mi] && p.level == levels[li];
        });
        if (it == points.end()) continue;
        const double x = x_of(li);
        path += fmt::format("{}{:.1f},{:.1f} ", path.empty() ? "M" : "L", x, y_of(it->mae_mean));
        svg << fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"{3}\"/>\n", x,
                           y_of(std::max(0.0, it->mae_mean - it->mae_std)), y_of(it->mae_mean + it->mae_std), color);
        svg << fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"{}\"/>\n", x, y_of(it->mae_mean), color);
      }
      if (!path.empty()) {
        svg << fmt::format("<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", path, color);
      }
      const double ly = y0 + top + 16.0 * static_cast<double>(mi);
      svg << fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                         left + plot_w + 15.0, ly, left + plot_w + 35.0, ly, color);
      svg << fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n", left + plot_w + 40.0, ly + 4.0,
                         svg_escape(methods[mi]));
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string format_summary_table(const std::vector<CurvePoint>& points) {
  std::vector<std::string> channels;
  std::vector<std::string> methods;
  std::set<int> level_set;
  for (const auto& p : points) {
    if (std::find(channels.begin(), channels.end(), p.channel) == channels.end()) channels.push_back(p.channel);
    if (std::find(methods.begin(), methods.end(), p.method) == methods.end()) methods.push_back(p.method);
    level_set.insert(p.level);
  }
  std::size_t name_w = 6;
  for (const auto& m : methods) name_w = std::max(name_w, m.size());

  std::string out;
  for (const auto& ch : channels) {
    out += fmt::format("{}: MAE and RMSE on masked entries\n", ch);
    std::string header = fmt::format("{:<{}}", "Model", name_w);
    for (const int level : level_set) header += fmt::format("  {:>9}", fmt::format("{}%", level));
    out += header + "\n" + std::string(header.size(), '-') + "\n";
    for (const bool rmse : {false, true}) {
      out += rmse ? "RMSE\n" : "MAE\n";
      for (const auto& m : methods) {
        std::string line = fmt::format("{:<{}}", m, name_w);
        for (const int level : level_set) {
          const auto it = std::find_if(points.begin(), points.end(), [&](const CurvePoint& p) {
            return p.channel == ch && p.method == m && p.level == level;
          });
          line += it == points.end() ? fmt::format("  {:>9}", "-")
                                     : fmt::format("  {:>9.4f}", rmse ? it->rmse_mean : it->mae_mean);
        }
        out += line + "\n";
      }
    }
    out += "\n";
  }
  return out;
}

DegradationResult degradation_curve(std::span<const ImputationMethod> methods, std::span<const int> levels,
                                    std::span<const std::uint64_t> seeds,
                                    const std::function<TimeSeriesTable(std::uint64_t seed)>& ground_truth,
                                    const MaskPlan& plan_template) {
  if (seeds.empty()) throw Error(ErrorKind::parameter, "degradation curve needs at least one seed");
  DegradationResult result;
  for (const auto seed : seeds) {
    const TimeSeriesTable truth = ground_truth(seed);
    for (const int level : levels) {
      MaskPlan plan = MaskPlan::scenario(level, seed);
      plan.mean_block_length = plan_template.mean_block_length;
      plan.cofailure_fraction = plan_template.cofailure_fraction;
      plan.tolerance = plan_template.tolerance;
      const MaskResult masked = generate_block_masks(truth, plan);
      for (const auto& method : methods) {
        MetricsReport report = masked_mae_rmse(method.impute(masked.masked, seed), masked.ledger);
        report.method = method.name;
        report.level = level;
        report.seed = seed;
        const auto rows = curve_rows(report);
        result.rows.insert(result.rows.end(), rows.begin(), rows.end());
      }
    }
  }
  result.summary = summarize_curve(result.rows);
  return result;
}

}  // namespace stdiff
