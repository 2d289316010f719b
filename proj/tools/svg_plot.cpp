#include "svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace pbev::cli {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kMarginL = 70, kMarginR = 20, kMarginT = 40, kMarginB = 50;

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

struct Range {
    double lo = 0.0, hi = 1.0;
};

Range span_of(const std::vector<Series>& series, bool x_axis) {
    Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& s : series) {
        for (double v : (x_axis ? s.x : s.y)) {
            r.lo = std::min(r.lo, v);
            r.hi = std::max(r.hi, v);
        }
    }
    if (!std::isfinite(r.lo)) return {0.0, 1.0};
    if (r.lo == r.hi) {
        r.lo -= 0.5;
        r.hi += 0.5;
    }
    const double pad = 0.05 * (r.hi - r.lo);
    return {r.lo - pad, r.hi + pad};
}

} // namespace

std::string render_line_plot(const std::string& title, const std::string& x_label,
                             const std::string& y_label, const std::vector<Series>& series) {
    const Range rx = span_of(series, true);
    const Range ry = span_of(series, false);
    const double plot_w = kWidth - kMarginL - kMarginR;
    const double plot_h = kHeight - kMarginT - kMarginB;
    auto sx = [&](double x) { return kMarginL + (x - rx.lo) / (rx.hi - rx.lo) * plot_w; };
    auto sy = [&](double y) { return kHeight - kMarginB - (y - ry.lo) / (ry.hi - ry.lo) * plot_h; };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kWidth) +
           "\" height=\"" + std::to_string(kHeight) + "\" viewBox=\"0 0 " +
           std::to_string(kWidth) + " " + std::to_string(kHeight) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + num(kWidth / 2.0) + "\" y=\"22\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"15\">" + title + "</text>\n";

    // axes
    svg += "<line x1=\"" + num(kMarginL) + "\" y1=\"" + num(kHeight - kMarginB) + "\" x2=\"" +
           num(kWidth - kMarginR) + "\" y2=\"" + num(kHeight - kMarginB) +
           "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + num(kMarginL) + "\" y1=\"" + num(kMarginT) + "\" x2=\"" +
           num(kMarginL) + "\" y2=\"" + num(kHeight - kMarginB) + "\" stroke=\"black\"/>\n";

    for (int i = 0; i <= 5; ++i) {
        const double fx = rx.lo + (rx.hi - rx.lo) * i / 5.0;
        const double fy = ry.lo + (ry.hi - ry.lo) * i / 5.0;
        svg += "<line x1=\"" + num(sx(fx)) + "\" y1=\"" + num(kHeight - kMarginB) + "\" x2=\"" +
               num(sx(fx)) + "\" y2=\"" + num(kHeight - kMarginB + 5) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + num(sx(fx)) + "\" y=\"" + num(kHeight - kMarginB + 18) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               num(fx) + "</text>\n";
        svg += "<line x1=\"" + num(kMarginL - 5) + "\" y1=\"" + num(sy(fy)) + "\" x2=\"" +
               num(kMarginL) + "\" y2=\"" + num(sy(fy)) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + num(kMarginL - 8) + "\" y=\"" + num(sy(fy) + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + num(fy) +
               "</text>\n";
    }
    svg += "<text x=\"" + num(kMarginL + plot_w / 2) + "\" y=\"" + num(kHeight - 12) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + x_label +
           "</text>\n";
    svg += "<text x=\"16\" y=\"" + num(kMarginT + plot_h / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
           "transform=\"rotate(-90 16 " + num(kMarginT + plot_h / 2) + ")\">" + y_label +
           "</text>\n";

    for (size_t s = 0; s < series.size(); ++s) {
        const auto& ser = series[s];
        const char* color = kColors[s % 6];
        std::string pts;
        for (size_t i = 0; i < ser.x.size(); ++i) {
            if (i) pts += ' ';
            pts += num(sx(ser.x[i])) + "," + num(sy(ser.y[i]));
        }
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"1.8\" points=\"" + pts + "\"/>\n";
        for (size_t i = 0; i < ser.x.size(); ++i) {
            svg += "<circle cx=\"" + num(sx(ser.x[i])) + "\" cy=\"" + num(sy(ser.y[i])) +
                   "\" r=\"2.5\" fill=\"" + color + "\"/>\n";
        }
        svg += "<text x=\"" + num(kWidth - kMarginR - 6) + "\" y=\"" +
               num(kMarginT + 14.0 * (s + 1)) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" +
               color + "\">" + ser.label + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

void write_svg(const std::string& path, const std::string& svg) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("svg: cannot open " + path + " for writing");
    f << svg;
    if (!f) throw std::runtime_error("svg: write to " + path + " failed");
}

} // namespace pbev::cli
