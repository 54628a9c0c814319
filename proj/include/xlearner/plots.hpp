#pragma once

// Minimal static SVG charts for run reports.

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace xl {

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const Series> series);

struct BarGroup {
    std::string label;
    std::vector<std::pair<std::string, double>> bars;  // (legend key, value)
};

// Values are drawn on [0, y_max].
std::string bar_chart_svg(const std::string& title, const std::string& y_label, std::span<const BarGroup> groups,
                          double y_max);

// Trailing moving average over `window` points.
std::vector<std::pair<double, double>> smooth(std::span<const std::pair<double, double>> points, std::size_t window);

}  // namespace xl
