#pragma once

// Minimal SVG line charts for the evaluation curves.

#include <string>
#include <utility>
#include <vector>

namespace i2p::svg {

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;  // drawn in the given order
};

struct Chart {
    std::string title;
    std::string x_label;
    std::string y_label;
    double x_min = 0, x_max = 1;
    double y_min = 0, y_max = 1;
    bool markers = false;
    std::vector<Series> series;
};

std::string render(const Chart& chart);

}  // namespace i2p::svg
