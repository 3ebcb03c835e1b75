#pragma once

// Static SVG figures: detection curves, probability traces and metric-vs-K
// panels. Output carries no timestamps, so identical inputs give identical bytes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "cpdkit/experiment.hpp"

namespace cpdkit::plot {

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
    bool markers = true;
    bool dashed = false;
};

struct Marker {
    enum class Kind { vline, dot } kind = Kind::dot;
    double x = 0.0;
    double y = 0.0;
    std::size_t series = 0;
};

struct Panel {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    std::vector<Marker> markers;
    std::optional<std::pair<double, double>> y_range;
};

inline constexpr const char *kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                           "#ff7f0e", "#17becf", "#8c564b", "#e377c2"};

namespace detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
    return buf;
}

inline std::string escape(const std::string &s) {
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

inline double nice_step(double span) {
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0}) {
        if (raw <= m * mag) return m * mag;
    }
    return 10.0 * mag;
}

inline std::pair<double, double> padded(double lo, double hi) {
    if (!(lo < hi)) {
        const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
        return {lo - pad, hi + pad};
    }
    return {lo, hi};
}

inline void draw_panel(std::string &svg, const Panel &p, double ox, double oy, double w, double h) {
    const double left = ox + 60, right = ox + w - 20, top = oy + 30, bottom = oy + h - 45;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto &s : p.series) {
        for (const auto &[x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (p.y_range) std::tie(ymin, ymax) = *p.y_range;
    std::tie(xmin, xmax) = padded(xmin, xmax);
    std::tie(ymin, ymax) = padded(ymin, ymax);
    auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
    auto sy = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };

    svg += "<text x=\"" + num((left + right) / 2) + "\" y=\"" + num(oy + 18) +
           "\" text-anchor=\"middle\" font-size=\"14\">" + escape(p.title) + "</text>\n";
    svg += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(right - left) + "\" height=\"" +
           num(bottom - top) + "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int axis = 0; axis < 2; ++axis) {
        const double lo = axis == 0 ? xmin : ymin, hi = axis == 0 ? xmax : ymax;
        const double step = nice_step(hi - lo);
        for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) {
            if (axis == 0) {
                svg += "<line x1=\"" + num(sx(v)) + "\" y1=\"" + num(bottom) + "\" x2=\"" + num(sx(v)) + "\" y2=\"" +
                       num(bottom + 4) + "\" stroke=\"#333\"/>\n";
                svg += "<text x=\"" + num(sx(v)) + "\" y=\"" + num(bottom + 16) +
                       "\" text-anchor=\"middle\" font-size=\"10\">" + tick_label(v) + "</text>\n";
            } else {
                svg += "<line x1=\"" + num(left - 4) + "\" y1=\"" + num(sy(v)) + "\" x2=\"" + num(left) + "\" y2=\"" +
                       num(sy(v)) + "\" stroke=\"#333\"/>\n";
                svg += "<text x=\"" + num(left - 6) + "\" y=\"" + num(sy(v) + 3) +
                       "\" text-anchor=\"end\" font-size=\"10\">" + tick_label(v) + "</text>\n";
            }
        }
    }
    svg += "<text x=\"" + num((left + right) / 2) + "\" y=\"" + num(bottom + 34) +
           "\" text-anchor=\"middle\" font-size=\"12\">" + escape(p.x_label) + "</text>\n";
    svg += "<text transform=\"translate(" + num(ox + 16) + "," + num((top + bottom) / 2) +
           ") rotate(-90)\" text-anchor=\"middle\" font-size=\"12\">" + escape(p.y_label) + "</text>\n";

    for (std::size_t i = 0; i < p.series.size(); ++i) {
        const auto &s = p.series[i];
        const std::string color = kPalette[i % std::size(kPalette)];
        std::string pts;
        for (const auto &[x, y] : s.points) pts += num(sx(x)) + "," + num(sy(y)) + " ";
        svg += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"" +
               (s.dashed ? " stroke-dasharray=\"5,3\"" : "") + " points=\"" + pts + "\"/>\n";
        if (s.markers) {
            for (const auto &[x, y] : s.points) {
                svg += "<circle cx=\"" + num(sx(x)) + "\" cy=\"" + num(sy(y)) + "\" r=\"2.5\" fill=\"" + color +
                       "\"/>\n";
            }
        }
        const double ly = top + 14 + 14 * double(i);
        svg += "<line x1=\"" + num(right - 110) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(right - 92) +
               "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + num(right - 88) + "\" y=\"" + num(ly) + "\" font-size=\"10\">" + escape(s.label) +
               "</text>\n";
    }
    for (const auto &m : p.markers) {
        const std::string color = kPalette[m.series % std::size(kPalette)];
        if (m.kind == Marker::Kind::vline) {
            svg += "<line x1=\"" + num(sx(m.x)) + "\" y1=\"" + num(top) + "\" x2=\"" + num(sx(m.x)) + "\" y2=\"" +
                   num(bottom) + "\" stroke=\"" + color + "\" stroke-dasharray=\"2,2\"/>\n";
        } else {
            svg += "<circle cx=\"" + num(sx(m.x)) + "\" cy=\"" + num(sy(m.y)) + "\" r=\"5\" fill=\"none\" stroke=\"" +
                   color + "\" stroke-width=\"2\"/>\n";
        }
    }
}

} // namespace detail

/// Panels laid out in a grid of `columns`.
inline std::string render(const std::vector<Panel> &panels, int columns = 1, double panel_w = 480,
                          double panel_h = 320) {
    const int rows = (static_cast<int>(panels.size()) + columns - 1) / columns;
    const double w = panel_w * columns, h = panel_h * std::max(rows, 1);
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::num(w) + "\" height=\"" +
                      detail::num(h) + "\" viewBox=\"0 0 " + detail::num(w) + " " + detail::num(h) +
                      "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t i = 0; i < panels.size(); ++i) {
        detail::draw_panel(svg, panels[i], panel_w * double(i % columns), panel_h * double(i / columns), panel_w,
                           panel_h);
    }
    return svg + "</svg>\n";
}

/// Delay against time to false alarm, one curve per model.
inline std::string detection_curves(const std::vector<Report> &reports) {
    Panel p{"Detection curves", "mean time to false alarm", "mean detection delay", {}, {}, std::nullopt};
    for (const auto &r : reports) {
        for (const auto &m : r.models) {
            if (!m.curve) continue;
            Series s{reports.size() > 1 ? m.label + " (K=" + std::to_string(r.types) + ")" : m.label, {}};
            for (const auto &pt : m.curve->points) s.points.emplace_back(pt.time_to_fa, pt.delay);
            p.series.push_back(std::move(s));
        }
    }
    return render({p});
}

/// Per-sequence change probabilities with the true change (dashed line) and
/// the first alarm at `threshold` (circle).
inline std::string probability_traces(const Report &report, double threshold = 0.5) {
    std::vector<Panel> panels;
    for (const auto &m : report.models) {
        Panel p{m.label + " model", "time", "change probability", {}, {}, std::make_pair(0.0, 1.0)};
        for (const auto &t : m.traces) {
            const std::size_t idx = p.series.size();
            Series s{t.id, {}, false};
            for (std::size_t i = 0; i < t.probabilities.size(); ++i) s.points.emplace_back(double(i), t.probabilities[i]);
            if (t.change_point < Index(t.probabilities.size())) {
                p.markers.push_back({Marker::Kind::vline, double(t.change_point), 0.0, idx});
            }
            const auto outcome = detect(ProbabilitySeries(t.probabilities), threshold);
            if (outcome.alarm_raised) {
                p.markers.push_back({Marker::Kind::dot, double(outcome.alarm_time),
                                     t.probabilities[std::size_t(outcome.alarm_time)], idx});
            }
            p.series.push_back(std::move(s));
        }
        panels.push_back(std::move(p));
    }
    return render(panels, 2);
}

/// AUC and best covering against the number of change types, one line per loss.
inline std::string k_summary(const std::vector<Report> &reports) {
    std::map<std::string, std::map<int, std::pair<double, double>>> by_label;
    for (const auto &r : reports) {
        for (const auto &m : r.models) by_label[m.label][r.types] = {m.auc(), m.best_covering()};
    }
    Panel auc{"AUC vs number of change types", "K", "detection curve AUC", {}, {}, std::nullopt};
    Panel cov{"Covering vs number of change types", "K", "best covering", {}, {}, std::nullopt};
    for (const auto &[label, values] : by_label) {
        Series a{label, {}}, c{label, {}};
        for (const auto &[k, v] : values) {
            a.points.emplace_back(double(k), v.first);
            c.points.emplace_back(double(k), v.second);
        }
        auc.series.push_back(std::move(a));
        cov.series.push_back(std::move(c));
    }
    return render({auc, cov}, 2);
}

} // namespace cpdkit::plot
