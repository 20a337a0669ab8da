#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kdts/eval.hpp"

namespace kdts::report {

// "69.49±0.22", two decimals. Optional teacher accuracy renders in brackets
// on a second line: "(69.99)".
std::string format_mean_std(double mean, double std_dev);

struct Table {
  std::string title;
  std::string corner;  // header of the row-label column
  std::vector<std::string> col_labels;
  std::vector<std::string> row_labels;
  std::vector<std::vector<std::string>> cells;  // missing cells hold "—"

  static Table empty(std::string title, std::string corner,
                     std::vector<std::string> cols, std::vector<std::string> rows);
};

std::string to_markdown(const Table& t);
std::string to_csv(const Table& t);

// Per-epoch accuracy curves, one polyline per named series. Byte-stable for
// identical inputs.
void write_curves_svg(const std::filesystem::path& file,
                      const std::map<std::string, std::vector<double>>& series,
                      const std::string& y_label = "test accuracy (%)");

void write_text_file(const std::filesystem::path& file, const std::string& content);

}  // namespace kdts::report
