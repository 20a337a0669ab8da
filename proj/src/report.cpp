#include "kdts/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kdts/error.hpp"

namespace kdts::report {

std::string format_mean_std(double mean, double std_dev) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f±%.2f", mean, std_dev);
  return buf;
}

Table Table::empty(std::string title, std::string corner, std::vector<std::string> cols,
                   std::vector<std::string> rows) {
  Table t;
  t.title = std::move(title);
  t.corner = std::move(corner);
  t.col_labels = std::move(cols);
  t.row_labels = std::move(rows);
  t.cells.assign(t.row_labels.size(), std::vector<std::string>(t.col_labels.size(), "—"));
  return t;
}

std::string to_markdown(const Table& t) {
  std::ostringstream out;
  if (!t.title.empty()) out << "## " << t.title << "\n\n";
  out << "| " << t.corner << " |";
  for (const auto& c : t.col_labels) out << " " << c << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < t.col_labels.size(); ++i) out << "---|";
  out << "\n";
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    out << "| " << t.row_labels[r] << " |";
    for (const auto& cell : t.cells[r]) out << " " << cell << " |";
    out << "\n";
  }
  return out.str();
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

}  // namespace

std::string to_csv(const Table& t) {
  std::ostringstream out;
  out << csv_escape(t.corner);
  for (const auto& c : t.col_labels) out << "," << csv_escape(c);
  out << "\n";
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    out << csv_escape(t.row_labels[r]);
    for (const auto& cell : t.cells[r]) out << "," << csv_escape(cell);
    out << "\n";
  }
  return out.str();
}

void write_text_file(const std::filesystem::path& file, const std::string& content) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc | std::ios::binary);
  if (!out) throw UserError("report: cannot write " + file.string());
  out << content;
}

void write_curves_svg(const std::filesystem::path& file,
                      const std::map<std::string, std::vector<double>>& series,
                      const std::string& y_label) {
  const int width = 720, height = 420;
  const int ml = 56, mr = 150, mt = 24, mb = 40;
  const double plot_w = width - ml - mr, plot_h = height - mt - mb;

  std::size_t max_len = 1;
  double lo = 1e300, hi = -1e300;
  for (const auto& [name, ys] : series) {
    max_len = std::max(max_len, ys.size());
    for (double y : ys) {
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
  }
  if (series.empty() || hi < lo) {
    lo = 0.0;
    hi = 100.0;
  }
  if (hi - lo < 1e-9) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  auto fx = [&](double epoch) { return ml + plot_w * (max_len > 1 ? (epoch - 1) / (max_len - 1.0) : 0.5); };
  auto fy = [&](double v) { return mt + plot_h * (1.0 - (v - lo) / (hi - lo)); };
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof(b), "%.2f", v);
    return std::string(b);
  };

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + (int)plot_h << "\" x2=\"" << ml + (int)plot_w
      << "\" y2=\"" << mt + (int)plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << mt + (int)plot_h << "\" stroke=\"black\"/>\n";

  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    svg << "<text x=\"" << ml - 6 << "\" y=\"" << num(fy(v) + 4)
        << "\" font-size=\"11\" text-anchor=\"end\" font-family=\"sans-serif\">" << num(v)
        << "</text>\n";
  }
  svg << "<text x=\"14\" y=\"" << mt + plot_h / 2 << "\" font-size=\"12\" "
      << "font-family=\"sans-serif\" transform=\"rotate(-90 14 " << mt + plot_h / 2 << ")\" "
      << "text-anchor=\"middle\">" << y_label << "</text>\n";
  svg << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << height - 8
      << "\" font-size=\"12\" font-family=\"sans-serif\" text-anchor=\"middle\">epoch</text>\n";

  int color_idx = 0;
  int legend_y = mt + 12;
  for (const auto& [name, ys] : series) {
    const char* color = kColors[color_idx % 8];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) {
      svg << num(fx(static_cast<double>(i + 1))) << "," << num(fy(ys[i]));
      if (i + 1 < ys.size()) svg << " ";
    }
    svg << "\"/>\n";
    svg << "<line x1=\"" << width - mr + 8 << "\" y1=\"" << legend_y - 4 << "\" x2=\""
        << width - mr + 28 << "\" y2=\"" << legend_y - 4 << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << width - mr + 34 << "\" y=\"" << legend_y
        << "\" font-size=\"11\" font-family=\"sans-serif\">" << name << "</text>\n";
    legend_y += 16;
    ++color_idx;
  }
  svg << "</svg>\n";
  write_text_file(file, svg.str());
}

}  // namespace kdts::report
