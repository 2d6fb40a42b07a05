#pragma once

// Minimal standalone SVG line plots.

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace egolab::cli::svg {

struct Series {
    std::string name;
    std::vector<double> x, y;
    std::string color = "#1f77b4";
    bool dashed = false;
    bool markers = false;
};

struct Plot {
    std::string title, xlabel, ylabel;
    std::vector<Series> series;
    bool equal_aspect = false;  // same units per pixel on both axes
    int width = 640, height = 480;
};

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

inline std::string render(const Plot& p) {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : p.series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
    if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
    const double ml = 70, mr = 150, mt = 40, mb = 55;
    const double pw = p.width - ml - mr, ph = p.height - mt - mb;
    double sx = pw / (x1 - x0), sy = ph / (y1 - y0);
    if (p.equal_aspect) {
        const double s = std::min(sx, sy);
        x0 -= (pw / s - (x1 - x0)) / 2;
        y0 -= (ph / s - (y1 - y0)) / 2;
        x1 = x0 + pw / s;
        y1 = y0 + ph / s;
        sx = sy = s;
    }
    auto X = [&](double v) { return ml + (v - x0) * sx; };
    auto Y = [&](double v) { return mt + ph - (v - y0) * sy; };

    std::ostringstream o;
    o << std::setprecision(6);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << p.width << "\" height=\"" << p.height << "\" viewBox=\"0 0 "
      << p.width << ' ' << p.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << p.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(p.title) << "</text>\n";
    o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double xv = x0 + (x1 - x0) * t / 4, yv = y0 + (y1 - y0) * t / 4;
        o << "<line x1=\"" << X(xv) << "\" y1=\"" << mt << "\" x2=\"" << X(xv) << "\" y2=\"" << mt + ph << "\" stroke=\"#ddd\"/>\n";
        o << "<line x1=\"" << ml << "\" y1=\"" << Y(yv) << "\" x2=\"" << ml + pw << "\" y2=\"" << Y(yv) << "\" stroke=\"#ddd\"/>\n";
        o << "<text x=\"" << X(xv) << "\" y=\"" << mt + ph + 16 << "\" text-anchor=\"middle\">" << xv << "</text>\n";
        o << "<text x=\"" << ml - 6 << "\" y=\"" << Y(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
    }
    o << "<text x=\"" << ml + pw / 2 << "\" y=\"" << p.height - 12 << "\" text-anchor=\"middle\">" << escape(p.xlabel) << "</text>\n";
    o << "<text transform=\"translate(16," << mt + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << escape(p.ylabel) << "</text>\n";
    for (std::size_t k = 0; k < p.series.size(); ++k) {
        const auto& s = p.series[k];
        o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.8\"" << (s.dashed ? " stroke-dasharray=\"6,4\"" : "")
          << " points=\"";
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) o << X(s.x[i]) << ',' << Y(s.y[i]) << ' ';
        }
        o << "\"/>\n";
        if (s.markers) {
            for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
                if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                    o << "<circle cx=\"" << X(s.x[i]) << "\" cy=\"" << Y(s.y[i]) << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
                }
            }
        }
        const double ly = mt + 14 + 18 * double(k);
        o << "<line x1=\"" << ml + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw + 34 << "\" y2=\"" << ly << "\" stroke=\"" << s.color
          << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>\n";
        o << "<text x=\"" << ml + pw + 40 << "\" y=\"" << ly + 4 << "\">" << escape(s.name) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

inline const char* palette(std::size_t i) {
    static const char* c[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    return c[i % 8];
}

}  // namespace egolab::cli::svg
