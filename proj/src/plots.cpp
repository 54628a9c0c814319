#include "xlearner/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace xl {

namespace {

constexpr double kWidth = 760, kHeight = 420;
constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string esc(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '&': o += "&amp;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

void header(std::ostringstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title)
       << "</text>\n";
}

void axes(std::ostringstream& os, const std::string& x_label, const std::string& y_label) {
    const double x1 = kWidth - kRight, y1 = kHeight - kBottom;
    os << "<line x1=\"" << kLeft << "\" y1=\"" << y1 << "\" x2=\"" << x1 << "\" y2=\"" << y1
       << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << y1
       << "\" stroke=\"black\"/>\n";
    if (!x_label.empty())
        os << "<text x=\"" << (kLeft + x1) / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\">"
           << esc(x_label) << "</text>\n";
    os << "<text x=\"18\" y=\"" << (kTop + y1) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
       << (kTop + y1) / 2 << ")\">" << esc(y_label) << "</text>\n";
}

void legend(std::ostringstream& os, const std::vector<std::string>& labels) {
    const double x = kWidth - kRight + 15;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double y = kTop + 10 + 18 * static_cast<double>(i);
        os << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"10\" fill=\""
           << kPalette[i % 10] << "\"/>\n<text x=\"" << x + 17 << "\" y=\"" << y << "\">" << esc(labels[i])
           << "</text>\n";
    }
}

}  // namespace

std::vector<std::pair<double, double>> smooth(std::span<const std::pair<double, double>> points, std::size_t window) {
    std::vector<std::pair<double, double>> out;
    double acc = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        acc += points[i].second;
        if (i >= window) acc -= points[i - window].second;
        out.emplace_back(points[i].first, acc / static_cast<double>(std::min(i + 1, window)));
    }
    return out;
}

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const Series> series) {
    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            if (!std::isfinite(y)) continue;
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (!(xmax > xmin)) xmax = xmin + 1;
    if (!(ymax > ymin)) ymax = ymin + 1;
    ymin = std::min(ymin, 0.0);
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return kTop + ph - (y - ymin) / (ymax - ymin) * ph; };

    std::ostringstream os;
    header(os, title);
    axes(os, x_label, y_label);
    for (int t = 0; t <= 4; ++t) {
        const double y = ymin + (ymax - ymin) * t / 4.0, x = xmin + (xmax - xmin) * t / 4.0;
        os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << num(y)
           << "</text>\n<text x=\"" << px(x) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">"
           << num(x) << "</text>\n";
    }
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < series.size(); ++i) {
        labels.push_back(series[i].label);
        os << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kPalette[i % 10] << "\" points=\"";
        for (auto [x, y] : series[i].points)
            if (std::isfinite(y)) os << num(px(x)) << ',' << num(py(y)) << ' ';
        os << "\"/>\n";
    }
    legend(os, labels);
    os << "</svg>\n";
    return os.str();
}

std::string bar_chart_svg(const std::string& title, const std::string& y_label, std::span<const BarGroup> groups,
                          double y_max) {
    std::vector<std::string> keys;
    for (const auto& g : groups)
        for (const auto& [k, v] : g.bars)
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    const double slot = groups.empty() ? pw : pw / static_cast<double>(groups.size());
    const double bar = keys.empty() ? 0 : 0.8 * slot / static_cast<double>(keys.size());
    auto py = [&](double y) { return kTop + ph - std::clamp(y / y_max, 0.0, 1.0) * ph; };

    std::ostringstream os;
    header(os, title);
    axes(os, "", y_label);
    for (int t = 0; t <= 4; ++t) {
        const double y = y_max * t / 4.0;
        os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << num(y)
           << "</text>\n";
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const double x0 = kLeft + slot * static_cast<double>(g) + 0.1 * slot;
        for (const auto& [k, v] : groups[g].bars) {
            const auto idx = static_cast<std::size_t>(std::find(keys.begin(), keys.end(), k) - keys.begin());
            const double x = x0 + bar * static_cast<double>(idx);
            os << "<rect x=\"" << num(x) << "\" y=\"" << num(py(v)) << "\" width=\"" << num(bar * 0.9)
               << "\" height=\"" << num(kTop + ph - py(v)) << "\" fill=\"" << kPalette[idx % 10] << "\"><title>"
               << esc(k) << ": " << num(v) << "</title></rect>\n";
        }
        os << "<text x=\"" << num(x0 + 0.4 * slot) << "\" y=\"" << kHeight - kBottom + 16
           << "\" text-anchor=\"middle\">" << esc(groups[g].label) << "</text>\n";
    }
    legend(os, keys);
    os << "</svg>\n";
    return os.str();
}

}  // namespace xl
