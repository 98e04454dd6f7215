#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <span>
#include <string>

#include "metrics.hpp"

namespace evmmon::plot {

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

inline std::string to_csv(std::span<const bucket> buckets) {
    std::string out = "bucket_start,mean,count\n";
    for (auto& b : buckets) {
        out += std::to_string(b.start);
        out += ',';
        out += format_double(b.mean);
        out += ',';
        out += std::to_string(b.count);
        out += '\n';
    }
    return out;
}

struct svg_style {
    int width = 800;
    int height = 400;
    int margin = 60;
    std::string stroke = "#1f77b4";
};

namespace detail {

inline std::string fixed(double v, int decimals = 2) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, decimals);
    return std::string(buf, end);
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace detail

/// Line chart of bucket means. Output depends only on the inputs: fixed canvas, no dates or ids.
inline std::string to_svg(std::span<const bucket> buckets, const std::string& title, const svg_style& style = {}) {
    using detail::fixed;
    const double w = style.width, h = style.height, m = style.margin;
    const double plot_w = w - 2 * m, plot_h = h - 2 * m;

    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (!buckets.empty()) {
        x0 = static_cast<double>(buckets.front().start);
        x1 = static_cast<double>(buckets.back().start);
        auto [lo, hi] = std::minmax_element(buckets.begin(), buckets.end(),
                                            [](const bucket& a, const bucket& b) { return a.mean < b.mean; });
        y0 = std::min(0.0, lo->mean);
        y1 = hi->mean;
    }
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) y1 = y0 + 1;
    auto px = [&](double x) { return m + (x - x0) / (x1 - x0) * plot_w; };
    auto py = [&](double y) { return h - m - (y - y0) / (y1 - y0) * plot_h; };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(style.width) + "\" height=\"" +
         std::to_string(style.height) + "\" viewBox=\"0 0 " + std::to_string(style.width) + " " +
         std::to_string(style.height) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + fixed(w / 2) + "\" y=\"" + fixed(m / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" + detail::escape(title) + "</text>\n";
    s += "<line x1=\"" + fixed(m) + "\" y1=\"" + fixed(h - m) + "\" x2=\"" + fixed(w - m) + "\" y2=\"" + fixed(h - m) +
         "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + fixed(m) + "\" y1=\"" + fixed(m) + "\" x2=\"" + fixed(m) + "\" y2=\"" + fixed(h - m) +
         "\" stroke=\"black\"/>\n";
    auto label = [&](double x, double y, const std::string& text, const char* anchor) {
        s += "<text x=\"" + fixed(x) + "\" y=\"" + fixed(y) + "\" text-anchor=\"" + anchor +
             "\" font-family=\"sans-serif\" font-size=\"10\">" + text + "</text>\n";
    };
    label(m - 5, py(y1) + 4, format_double(y1), "end");
    label(m - 5, py(y0) + 4, format_double(y0), "end");
    label(m, h - m + 15, std::to_string(static_cast<std::uint64_t>(x0)), "start");
    label(w - m, h - m + 15, std::to_string(static_cast<std::uint64_t>(x1)), "end");

    if (!buckets.empty()) {
        s += "<polyline fill=\"none\" stroke=\"" + style.stroke + "\" stroke-width=\"1.5\" points=\"";
        bool first = true;
        for (auto& b : buckets) {
            if (!first) s += ' ';
            first = false;
            s += fixed(px(static_cast<double>(b.start))) + "," + fixed(py(b.mean));
        }
        s += "\"/>\n";
    }
    s += "</svg>\n";
    return s;
}

}  // namespace evmmon::plot
