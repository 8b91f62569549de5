#include "i2p/svg.hpp"

#include <cstdio>

#include "i2p/errors.hpp"

namespace i2p::svg {

namespace {

constexpr double kWidth = 480, kHeight = 360;
constexpr double kLeft = 60, kRight = 20, kTop = 36, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string r;
    for (char c : s) {
        switch (c) {
            case '<': r += "&lt;"; break;
            case '>': r += "&gt;"; break;
            case '&': r += "&amp;"; break;
            case '"': r += "&quot;"; break;
            default: r += c;
        }
    }
    return r;
}

}  // namespace

std::string render(const Chart& c) {
    if (!(c.x_max > c.x_min) || !(c.y_max > c.y_min)) throw ConfigError("chart axis range is empty");
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    auto sx = [&](double x) { return kLeft + (x - c.x_min) / (c.x_max - c.x_min) * pw; };
    auto sy = [&](double y) { return kTop + (1.0 - (y - c.y_min) / (c.y_max - c.y_min)) * ph; };

    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
                    num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(kWidth / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + escape(c.title) +
         "</text>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fx = c.x_min + (c.x_max - c.x_min) * i / 5.0;
        const double fy = c.y_min + (c.y_max - c.y_min) * i / 5.0;
        s += "<line x1=\"" + num(sx(fx)) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(sx(fx)) + "\" y2=\"" +
             num(kTop + ph) + "\" stroke=\"#e0e0e0\"/>\n";
        s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(sy(fy)) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" +
             num(sy(fy)) + "\" stroke=\"#e0e0e0\"/>\n";
        char lx[32], ly[32];
        std::snprintf(lx, sizeof lx, "%g", fx);
        std::snprintf(ly, sizeof ly, "%g", fy);
        s += "<text x=\"" + num(sx(fx)) + "\" y=\"" + num(kTop + ph + 16) + "\" text-anchor=\"middle\">" + lx +
             "</text>\n";
        s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(sy(fy) + 4) + "\" text-anchor=\"end\">" + ly +
             "</text>\n";
    }
    s += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
    s += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kHeight - 12) + "\" text-anchor=\"middle\">" +
         escape(c.x_label) + "</text>\n";
    s += "<text transform=\"translate(16," + num(kTop + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         escape(c.y_label) + "</text>\n";

    std::size_t k = 0;
    for (const auto& ser : c.series) {
        const char* color = kColors[k % std::size(kColors)];
        std::string pts;
        for (const auto& [x, y] : ser.points) pts += num(sx(x)) + "," + num(sy(y)) + " ";
        if (!pts.empty()) pts.pop_back();
        s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts +
             "\"/>\n";
        if (c.markers)
            for (const auto& [x, y] : ser.points)
                s += "<circle cx=\"" + num(sx(x)) + "\" cy=\"" + num(sy(y)) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
        const double ly = kTop + 14 + 16.0 * static_cast<double>(k);
        s += "<line x1=\"" + num(kLeft + pw - 110) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(kLeft + pw - 90) +
             "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        s += "<text x=\"" + num(kLeft + pw - 85) + "\" y=\"" + num(ly) + "\">" + escape(ser.name) + "</text>\n";
        ++k;
    }
    s += "</svg>\n";
    return s;
}

}  // namespace i2p::svg
