#pragma once

#include <string>
#include <utility>
#include <vector>

namespace clens {

// Points keep the exact text they were read from, and the SVG carries it in
// data-x / data-y attributes next to the drawn marker.
struct Series {
  std::string label;
  std::vector<std::pair<std::string, std::string>> points;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
};

std::string line_chart(const Axes& axes, const std::vector<Series>& series);

// Cells are row-major text values; empty text draws a blank cell.
std::string heatmap_chart(const Axes& axes, int rows, int cols, const std::vector<std::string>& cells);

std::string no_data_panel(const std::string& title);

}  // namespace clens
