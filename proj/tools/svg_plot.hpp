#pragma once

#include <string>
#include <vector>

namespace pbev::cli {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Standalone SVG line plot (axes, ticks, polylines, legend); no display
// server or plotting library involved. Output is byte-deterministic.
std::string render_line_plot(const std::string& title, const std::string& x_label,
                             const std::string& y_label, const std::vector<Series>& series);

void write_svg(const std::string& path, const std::string& svg);

} // namespace pbev::cli
